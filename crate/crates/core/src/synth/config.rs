use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
    Pink,
}

impl ColorName {
    pub const ALL: [ColorName; 8] = [
        ColorName::Red,
        ColorName::Green,
        ColorName::Blue,
        ColorName::Yellow,
        ColorName::Purple,
        ColorName::Orange,
        ColorName::Cyan,
        ColorName::Pink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
            ColorName::Purple => "purple",
            ColorName::Orange => "orange",
            ColorName::Cyan => "cyan",
            ColorName::Pink => "pink",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            ColorName::Red => [215, 40, 40],
            ColorName::Green => [40, 175, 60],
            ColorName::Blue => [45, 85, 220],
            ColorName::Yellow => [230, 210, 45],
            ColorName::Purple => [150, 60, 190],
            ColorName::Orange => [240, 140, 30],
            ColorName::Cyan => [40, 200, 210],
            ColorName::Pink => [240, 125, 185],
        }
    }
}

/// Scene generator settings, loadable from a TOML file. Every key is optional.
///
/// ```toml
/// image_size = 64
/// min_objects = 2
/// max_objects = 4
/// shapes = ["rectangle", "ellipse", "triangle"]
/// colors = ["red", "green", "blue", "yellow", "purple", "orange", "cyan", "pink"]
/// rate_min = 0.15
/// rate_max = 0.7
/// min_visible_fraction = 0.1
/// min_object_pixels = 40
/// max_attempts = 500
/// conversations_per_scene = 10
/// seed = 0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<ShapeKind>,
    pub colors: Vec<ColorName>,
    /// At least one object's occlusion rate must fall in `[rate_min, rate_max]`.
    pub rate_min: f64,
    pub rate_max: f64,
    /// Every object keeps at least this fraction of its amodal area visible.
    pub min_visible_fraction: f64,
    pub min_object_pixels: usize,
    pub max_attempts: usize,
    pub conversations_per_scene: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            min_objects: 2,
            max_objects: 4,
            shapes: ShapeKind::ALL.to_vec(),
            colors: ColorName::ALL.to_vec(),
            rate_min: 0.15,
            rate_max: 0.7,
            min_visible_fraction: 0.1,
            min_object_pixels: 40,
            max_attempts: 500,
            conversations_per_scene: 10,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.image_size < 8 {
            return fail(format!("image_size {} is below 8", self.image_size));
        }
        if self.min_objects < 2 {
            return fail("min_objects must be at least 2 so that occlusion can occur".into());
        }
        if self.min_objects > self.max_objects {
            return fail(format!(
                "min_objects {} exceeds max_objects {}",
                self.min_objects, self.max_objects
            ));
        }
        if self.shapes.is_empty() || self.colors.is_empty() {
            return fail("shape and color palettes must be non-empty".into());
        }
        let distinct = {
            let mut s = self.shapes.clone();
            s.sort();
            s.dedup();
            let mut c = self.colors.clone();
            c.sort();
            c.dedup();
            s.len() * c.len()
        };
        if distinct < self.max_objects {
            return fail(format!(
                "palette offers {distinct} distinct shape/color pairs, max_objects is {}",
                self.max_objects
            ));
        }
        if !(0.0..=1.0).contains(&self.rate_min)
            || !(0.0..=1.0).contains(&self.rate_max)
            || self.rate_min > self.rate_max
        {
            return fail(format!(
                "rate band [{}, {}] must satisfy 0 <= rate_min <= rate_max <= 1",
                self.rate_min, self.rate_max
            ));
        }
        if !(0.0..=1.0).contains(&self.min_visible_fraction) {
            return fail("min_visible_fraction must lie in [0, 1]".into());
        }
        if self.max_attempts == 0 {
            return fail("max_attempts must be positive".into());
        }
        Ok(())
    }
}
