//! Binary masks, occlusion-aware spatial maps and run-length encoding.

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Axis-aligned pixel rectangle, `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", from = "[u32; 4]")]
pub struct BoxPx {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoxPx {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

impl From<BoxPx> for [u32; 4] {
    fn from(b: BoxPx) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl From<[u32; 4]> for BoxPx {
    fn from(v: [u32; 4]) -> Self {
        Self {
            x0: v[0],
            y0: v[1],
            x1: v[2],
            y1: v[3],
        }
    }
}

/// `H x W` boolean grid, row-major. `true` marks an object pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, {} set)", self.height, self.width, self.count())
    }
}

impl BinaryMask {
    /// All-false mask. Panics on a zero dimension.
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "mask must be at least 1x1");
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(y, x);
            }
        }
        m
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(CoreError::InvalidGeometry(format!(
                "{} bits cannot form a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(CoreError::Shape {
                left: self.dims(),
                right: other.dims(),
            })
        }
    }

    /// Pixels set here but not in `other`.
    pub fn count_outside(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && !b)
            .count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.count_outside(other) == 0
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a || b).count()
    }

    pub fn or_assign(&mut self, other: &BinaryMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    /// `self AND NOT other`.
    pub fn minus(&self, other: &BinaryMask) -> BinaryMask {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect(),
        }
    }

    /// Tight bounding box of the set pixels, `None` when empty.
    pub fn bounding_box(&self) -> Option<BoxPx> {
        let mut bb: Option<BoxPx> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    let (x, y) = (x as u32, y as u32);
                    bb = Some(match bb {
                        None => BoxPx {
                            x0: x,
                            y0: y,
                            x1: x + 1,
                            y1: y + 1,
                        },
                        Some(b) => BoxPx {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x + 1),
                            y1: b.y1.max(y + 1),
                        },
                    });
                }
            }
        }
        bb
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscale(&self, factor: usize) -> BinaryMask {
        Self::from_fn(self.height * factor, self.width * factor, |y, x| {
            self.get(y / factor, x / factor)
        })
    }

    /// Mask as `0.0 / 1.0` values, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Thresholds probabilities (or any scores) at `threshold`, inclusive.
    pub fn from_scores(height: usize, width: usize, scores: &[f64], threshold: f64) -> Self {
        assert_eq!(scores.len(), height * width);
        Self {
            height,
            width,
            bits: scores.iter().map(|&s| s >= threshold).collect(),
        }
    }

    pub fn to_rle(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.bits {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        Rle {
            height: self.height,
            width: self.width,
            counts,
        }
    }
}

/// Row-major run-length encoding. Runs alternate starting with a (possibly
/// zero-length) run of `false`; run lengths sum to `height * width`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn decode(&self) -> Result<BinaryMask> {
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        if self.height == 0 || self.width == 0 {
            return Err(CoreError::InvalidGeometry(format!(
                "rle has degenerate size {}x{}",
                self.height, self.width
            )));
        }
        if total != (self.height * self.width) as u64 {
            return Err(CoreError::InvalidGeometry(format!(
                "rle runs cover {total} pixels, expected {}",
                self.height * self.width
            )));
        }
        let mut bits = Vec::with_capacity(self.height * self.width);
        let mut value = false;
        for &c in &self.counts {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        BinaryMask::from_bits(self.height, self.width, bits)
    }
}

/// Per-pixel occlusion-aware labels: 0 background, 1 visible, 2 occluded
/// part of the amodal extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpatialMap {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl SpatialMap {
    pub const BACKGROUND: u8 = 0;
    pub const VISIBLE: u8 = 1;
    pub const OCCLUDED: u8 = 2;

    pub fn from_values(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(CoreError::InvalidGeometry(format!(
                "{} labels cannot form a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|&&v| v > 2) {
            return Err(CoreError::InvalidGeometry(format!("spatial label {bad} not in 0..=2")));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn count(&self, label: u8) -> usize {
        self.values.iter().filter(|&&v| v == label).count()
    }
}
