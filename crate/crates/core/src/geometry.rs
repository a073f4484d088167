//! Ground-truth derivations from a visible/amodal mask pair.

use crate::mask::{BinaryMask, SpatialMap};
use crate::{CoreError, Result};

/// Fraction of the amodal extent that is hidden: `1 - |visible| / |amodal|`.
pub fn compute_occlusion_rate(visible: &BinaryMask, amodal: &BinaryMask) -> Result<f64> {
    visible.same_shape(amodal)?;
    let amodal_px = amodal.count();
    if amodal_px == 0 {
        return Err(CoreError::InvalidGeometry(
            "amodal mask is empty (0 pixels), occlusion rate undefined".into(),
        ));
    }
    let outside = visible.count_outside(amodal);
    if outside > 0 {
        return Err(CoreError::InvalidGeometry(format!(
            "{outside} visible pixels lie outside the amodal mask"
        )));
    }
    Ok(1.0 - visible.count() as f64 / amodal_px as f64)
}

/// Labels each pixel 1 when visible, 2 when amodal but hidden, 0 otherwise.
pub fn build_spatial_map(visible: &BinaryMask, amodal: &BinaryMask) -> Result<SpatialMap> {
    visible.same_shape(amodal)?;
    let outside = visible.count_outside(amodal);
    if outside > 0 {
        return Err(CoreError::InvalidGeometry(format!(
            "{outside} visible pixels lie outside the amodal mask"
        )));
    }
    let values = visible
        .bits()
        .iter()
        .zip(amodal.bits())
        .map(|(&v, &a)| match (v, a) {
            (true, _) => SpatialMap::VISIBLE,
            (false, true) => SpatialMap::OCCLUDED,
            (false, false) => SpatialMap::BACKGROUND,
        })
        .collect();
    SpatialMap::from_values(visible.height(), visible.width(), values)
}
