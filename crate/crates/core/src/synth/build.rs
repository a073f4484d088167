use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::SceneConfig;
use super::scene::generate_sample;
use crate::io::save_dataset_with_meta;
use crate::sample::SceneSample;
use crate::validate::validate_sample;
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-sample seed. `splitmix64` is a bijection and `2 * index + split`
/// never repeats across splits, so train and val seeds are disjoint.
pub fn sample_seed(run_seed: u64, split: Split, index: usize) -> u64 {
    splitmix64(
        run_seed
            .wrapping_mul(0x2545_f491_4f6c_dd1d)
            .wrapping_add((index as u64).wrapping_mul(2) + split.tag()),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildSummary {
    pub train_dir: PathBuf,
    pub val_dir: PathBuf,
    pub train_count: usize,
    pub val_count: usize,
}

fn generate_split(config: &SceneConfig, split: Split, n: usize, seed: u64) -> Result<Vec<SceneSample>> {
    let one = |i: usize| -> Result<SceneSample> {
        let s = sample_seed(seed, split, i);
        let mut sample = generate_sample(config, s)
            .map_err(|e| CoreError::Generation(format!("{} sample {i}: {e}", split.name())))?;
        sample.sample_id = format!("{}-{i:06}", split.name());
        let report = validate_sample(&sample);
        if !report.is_valid() {
            return Err(CoreError::Validation(report));
        }
        Ok(sample)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(one).collect()
    }
}

/// Writes `out/train` and `out/val`. Output is a pure function of the
/// arguments.
pub fn build_dataset(
    config: &SceneConfig,
    n_train: usize,
    n_val: usize,
    seed: u64,
    out: &Path,
) -> Result<BuildSummary> {
    config.validate()?;
    let mut dirs = Vec::new();
    for (split, n) in [(Split::Train, n_train), (Split::Val, n_val)] {
        let samples = generate_split(config, split, n, seed)?;
        let dir = out.join(split.name());
        let seeds: Vec<u64> = (0..n).map(|i| sample_seed(seed, split, i)).collect();
        let meta = json!({
            "generator": "synth",
            "split": split.name(),
            "run_seed": seed,
            "sample_seeds": seeds,
            "config": config,
        });
        save_dataset_with_meta(&samples, &dir, meta)?;
        dirs.push(dir);
    }
    Ok(BuildSummary {
        val_dir: dirs.pop().expect("two splits"),
        train_dir: dirs.pop().expect("two splits"),
        train_count: n_train,
        val_count: n_val,
    })
}
