use std::path::Path;

use aura_core::io::{read_png, save_dataset, Manifest};
use aura_core::SceneSample;

use crate::record::ReviewState;
use crate::{Result, ReviewStore};

/// Finalized samples in record-id order, rebuilt from their payloads.
pub fn finalized_samples(store: &ReviewStore) -> Result<Vec<SceneSample>> {
    store
        .list(Some(ReviewState::Finalized))
        .iter()
        .map(|r| {
            let image = read_png(&r.payload.image_path)?;
            Ok(r.payload.sample.clone().into_sample(image)?)
        })
        .collect()
}

/// Writes the finalized records as a dataset directory.
pub fn export_finalized(store: &ReviewStore, dir: &Path) -> Result<Manifest> {
    let samples = finalized_samples(store)?;
    Ok(save_dataset(&samples, dir)?)
}
