use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

/// Network hyper-parameters. The backbone has two stride-2 stages, so the
/// feature stride is fixed at 4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub feature_stride: usize,
    /// Channels of the stride-4 visual feature grid.
    pub feature_channels: usize,
    /// Channels of the stride-2 skip features fed to the decoders.
    pub skip_channels: usize,
    pub vocab_size: usize,
    pub text_width: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub mlp_ratio: usize,
    /// Width of `e_mllm`, `e_r` and `e_oa`.
    pub embed_dim: usize,
    /// Low-rank adapter rank on the attention projections; 0 disables them.
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    pub enable_oc: bool,
    pub enable_so: bool,
    pub max_question_len: usize,
    pub max_answer_len: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            feature_stride: 4,
            feature_channels: 32,
            skip_channels: 16,
            vocab_size: 0,
            text_width: 128,
            text_layers: 2,
            text_heads: 4,
            mlp_ratio: 2,
            embed_dim: 64,
            adapter_rank: 8,
            adapter_alpha: 16.0,
            enable_oc: true,
            enable_so: true,
            max_question_len: 40,
            max_answer_len: 32,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.feature_stride != 4 {
            return fail(format!("feature_stride must be 4, got {}", self.feature_stride));
        }
        if self.image_size == 0 || self.image_size % (2 * self.feature_stride) != 0 {
            return fail(format!(
                "image_size {} must be a positive multiple of {}",
                self.image_size,
                2 * self.feature_stride
            ));
        }
        for (name, v) in [
            ("feature_channels", self.feature_channels),
            ("skip_channels", self.skip_channels),
            ("text_width", self.text_width),
            ("text_layers", self.text_layers),
            ("text_heads", self.text_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("embed_dim", self.embed_dim),
            ("max_answer_len", self.max_answer_len),
            ("max_question_len", self.max_question_len),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.vocab_size < 5 {
            return fail(format!("vocab_size {} leaves no room beyond specials", self.vocab_size));
        }
        if self.text_width % self.text_heads != 0 {
            return fail(format!(
                "text_width {} is not divisible by {} heads",
                self.text_width, self.text_heads
            ));
        }
        if self.adapter_rank > 0 && !(self.adapter_alpha > 0.0) {
            return fail("adapter_alpha must be positive".into());
        }
        Ok(())
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / self.feature_stride
    }

    /// Visual prefix tokens: the feature grid average-pooled once more.
    pub fn prefix_tokens(&self) -> usize {
        let s = self.feature_size() / 2;
        s * s
    }

    /// Prefix + question + `[BOS]` + answer.
    pub fn max_positions(&self) -> usize {
        self.prefix_tokens() + self.max_question_len + 1 + self.max_answer_len
    }
}
