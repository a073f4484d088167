//! Training objectives. Each loss is a [`CustomOp`] so it can sit on the
//! autodiff tape, plus a plain function over tensors for inspection.

use aura_core::{BinaryMask, SpatialMap};
use aura_tensor::{sigmoid, CustomOp, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::vocab::PAD_ID;
use crate::{ModelError, Result};

pub const DICE_EPS: f64 = 1e-6;

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Mean token cross-entropy of `logits[L, V]`, skipping `[PAD]` targets.
struct TokenCrossEntropy {
    targets: Vec<usize>,
    counted: usize,
}

impl CustomOp for TokenCrossEntropy {
    fn name(&self) -> &str {
        "token_cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let logits = inputs[0];
        let mut total = 0.0;
        for (i, &t) in self.targets.iter().enumerate() {
            if t != PAD_ID {
                let row = logits.row(i);
                total += log_sum_exp(row) - row[t];
            }
        }
        Tensor::scalar(total / self.counted as f64)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let v = logits.dim(1);
        let scale = grad.item() / self.counted as f64;
        let mut out = Tensor::zeros(logits.shape().to_vec());
        for (i, &t) in self.targets.iter().enumerate() {
            if t == PAD_ID {
                continue;
            }
            let g = &mut out.data_mut()[i * v..(i + 1) * v];
            softmax_into(logits.row(i), g);
            g[t] -= 1.0;
            g.iter_mut().for_each(|x| *x *= scale);
        }
        vec![Some(out)]
    }
}

/// Stable binary cross-entropy with logits, mean over pixels.
struct BceWithLogits {
    target: Vec<f64>,
}

impl CustomOp for BceWithLogits {
    fn name(&self) -> &str {
        "bce_with_logits"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let x = inputs[0].data();
        let s: f64 = x
            .iter()
            .zip(&self.target)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        Tensor::scalar(s / x.len() as f64)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let scale = grad.item() / x.numel() as f64;
        let g = x
            .data()
            .iter()
            .zip(&self.target)
            .map(|(&x, &t)| (sigmoid(x) - t) * scale)
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), g))]
    }
}

/// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`, `p = sigmoid(logits)`.
struct SoftDice {
    target: Vec<f64>,
}

impl SoftDice {
    fn sums(&self, x: &[f64]) -> (Vec<f64>, f64, f64) {
        let p: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
        let inter: f64 = p.iter().zip(&self.target).map(|(p, g)| p * g).sum();
        let denom = p.iter().sum::<f64>() + self.target.iter().sum::<f64>() + DICE_EPS;
        (p, inter, denom)
    }
}

impl CustomOp for SoftDice {
    fn name(&self) -> &str {
        "soft_dice"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let (_, inter, denom) = self.sums(inputs[0].data());
        Tensor::scalar(1.0 - (2.0 * inter + DICE_EPS) / denom)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (p, inter, denom) = self.sums(x.data());
        let num = 2.0 * inter + DICE_EPS;
        let up = grad.item();
        let g = p
            .iter()
            .zip(&self.target)
            .map(|(&p, &t)| {
                let d_ratio = (2.0 * t * denom - num) / (denom * denom);
                -d_ratio * p * (1.0 - p) * up
            })
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), g))]
    }
}

/// Per-pixel 3-class cross-entropy of `logits[3, H, W]`, mean over pixels.
struct SpatialCrossEntropy {
    labels: Vec<u8>,
}

impl CustomOp for SpatialCrossEntropy {
    fn name(&self) -> &str {
        "spatial_cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        let x = inputs[0].data();
        let n = self.labels.len();
        let mut total = 0.0;
        for (p, &label) in self.labels.iter().enumerate() {
            let row = [x[p], x[n + p], x[2 * n + p]];
            total += log_sum_exp(&row) - row[label as usize];
        }
        Tensor::scalar(total / n as f64)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let n = self.labels.len();
        let scale = grad.item() / n as f64;
        let mut g = vec![0.0; 3 * n];
        let mut sm = [0.0; 3];
        for (p, &label) in self.labels.iter().enumerate() {
            let row = [x.data()[p], x.data()[n + p], x.data()[2 * n + p]];
            softmax_into(&row, &mut sm);
            sm[label as usize] -= 1.0;
            for c in 0..3 {
                g[c * n + p] = sm[c] * scale;
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), g))]
    }
}

fn check_pixels(logits: &Tensor, expected: usize, what: &str) -> Result<()> {
    if logits.numel() != expected {
        return Err(ModelError::Shape(format!(
            "{what} logits have {} values, target has {expected} pixels",
            logits.numel()
        )));
    }
    Ok(())
}

fn pixels(m: &BinaryMask) -> usize {
    m.height() * m.width()
}

fn text_op(logits: &Tensor, targets: &[usize]) -> Result<TokenCrossEntropy> {
    if logits.rank() != 2 || logits.dim(0) != targets.len() {
        return Err(ModelError::Shape(format!(
            "token logits {:?} vs {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.dim(1)) {
        return Err(ModelError::Vocab(format!(
            "target id {bad} outside {} logits",
            logits.dim(1)
        )));
    }
    let counted = targets.iter().filter(|&&t| t != PAD_ID).count();
    if counted == 0 {
        return Err(ModelError::UndefinedLoss("every target position is padding".into()));
    }
    Ok(TokenCrossEntropy {
        targets: targets.to_vec(),
        counted,
    })
}

fn spatial_op(logits: &Tensor, map: &SpatialMap) -> Result<SpatialCrossEntropy> {
    let (h, w) = map.dims();
    if logits.shape() != [3, h, w] {
        return Err(ModelError::Shape(format!(
            "spatial logits {:?} vs map {h}x{w}",
            logits.shape()
        )));
    }
    Ok(SpatialCrossEntropy {
        labels: map.values().to_vec(),
    })
}

pub fn text_loss(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    Ok(text_op(logits, targets)?.forward(&[logits]).item())
}

pub fn bce_loss(logits: &Tensor, target: &BinaryMask) -> Result<f64> {
    check_pixels(logits, pixels(target), "mask")?;
    Ok(BceWithLogits { target: target.to_f64() }.forward(&[logits]).item())
}

pub fn dice_loss(logits: &Tensor, target: &BinaryMask) -> Result<f64> {
    check_pixels(logits, pixels(target), "mask")?;
    Ok(SoftDice { target: target.to_f64() }.forward(&[logits]).item())
}

pub fn spatial_loss(logits: &Tensor, map: &SpatialMap) -> Result<f64> {
    Ok(spatial_op(logits, map)?.forward(&[logits]).item())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskLossParts {
    pub ce_v: f64,
    pub ce_a: f64,
    pub dice_v: f64,
    pub dice_a: f64,
}

pub fn mask_loss(
    visible_logits: &Tensor,
    amodal_logits: &Tensor,
    visible: &BinaryMask,
    amodal: &BinaryMask,
) -> Result<MaskLossParts> {
    visible.same_shape(amodal)?;
    Ok(MaskLossParts {
        ce_v: bce_loss(visible_logits, visible)?,
        ce_a: bce_loss(amodal_logits, amodal)?,
        dice_v: dice_loss(visible_logits, visible)?,
        dice_a: dice_loss(amodal_logits, amodal)?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OccLossParts {
    pub rate: f64,
    pub spatial: f64,
}

/// Rate term averaged over `[SEG]`s; spatial term averaged over pixels and
/// `[SEG]`s.
pub fn occ_loss(
    rate_pred: &[f64],
    rate_true: &[f64],
    spatial_logits: &[Tensor],
    maps: &[SpatialMap],
) -> Result<OccLossParts> {
    if rate_pred.len() != rate_true.len() || spatial_logits.len() != maps.len() {
        return Err(ModelError::Shape(format!(
            "{} rate predictions for {} targets, {} spatial maps for {} targets",
            rate_pred.len(),
            rate_true.len(),
            spatial_logits.len(),
            maps.len()
        )));
    }
    let rate = if rate_pred.is_empty() {
        0.0
    } else {
        rate_pred
            .iter()
            .zip(rate_true)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / rate_pred.len() as f64
    };
    let mut spatial = 0.0;
    for (l, m) in spatial_logits.iter().zip(maps) {
        spatial += spatial_loss(l, m)?;
    }
    if !maps.is_empty() {
        spatial /= maps.len() as f64;
    }
    Ok(OccLossParts { rate, spatial })
}

/// Per-component values of the training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_text: f64,
    pub l_mask_ce_v: f64,
    pub l_mask_ce_a: f64,
    pub l_dice_v: f64,
    pub l_dice_a: f64,
    pub l_occ_rate: f64,
    pub l_occ_spatial: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.l_text,
            self.l_mask_ce_v,
            self.l_mask_ce_a,
            self.l_dice_v,
            self.l_dice_a,
            self.l_occ_rate,
            self.l_occ_spatial,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, factor: f64) {
        self.l_text += factor * other.l_text;
        self.l_mask_ce_v += factor * other.l_mask_ce_v;
        self.l_mask_ce_a += factor * other.l_mask_ce_a;
        self.l_dice_v += factor * other.l_dice_v;
        self.l_dice_a += factor * other.l_dice_a;
        self.l_occ_rate += factor * other.l_occ_rate;
        self.l_occ_spatial += factor * other.l_occ_spatial;
        self.total += factor * other.total;
    }
}

/// Weights named after the [`LossBreakdown`] components. All default to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub text: f64,
    pub mask_ce_v: f64,
    pub mask_ce_a: f64,
    pub dice_v: f64,
    pub dice_a: f64,
    pub occ_rate: f64,
    pub occ_spatial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            text: 1.0,
            mask_ce_v: 1.0,
            mask_ce_a: 1.0,
            dice_v: 1.0,
            dice_a: 1.0,
            occ_rate: 1.0,
            occ_spatial: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("text", self.text),
            ("mask_ce_v", self.mask_ce_v),
            ("mask_ce_a", self.mask_ce_a),
            ("dice_v", self.dice_v),
            ("dice_a", self.dice_a),
            ("occ_rate", self.occ_rate),
            ("occ_spatial", self.occ_spatial),
        ];
        for (name, w) in all {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(ModelError::Config(format!("loss weight {name} = {w} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Weights with the terms of disabled encoders zeroed.
    pub fn effective(&self, enable_oc: bool, enable_so: bool) -> Self {
        Self {
            occ_rate: if enable_oc { self.occ_rate } else { 0.0 },
            occ_spatial: if enable_so { self.occ_spatial } else { 0.0 },
            ..*self
        }
    }
}

/// Weighted sum of the components; terms of disabled encoders contribute 0.
pub fn total_loss(
    b: &LossBreakdown,
    weights: &LossWeights,
    enable_oc: bool,
    enable_so: bool,
) -> Result<f64> {
    weights.validate()?;
    let w = weights.effective(enable_oc, enable_so);
    Ok(w.text * b.l_text
        + w.mask_ce_v * b.l_mask_ce_v
        + w.mask_ce_a * b.l_mask_ce_a
        + w.dice_v * b.l_dice_v
        + w.dice_a * b.l_dice_a
        + w.occ_rate * b.l_occ_rate
        + w.occ_spatial * b.l_occ_spatial)
}

/// Graph-level constructors for the losses above.
pub mod ops {
    use super::*;

    pub fn text(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
        let op = text_op(g.value(logits), targets)?;
        Ok(g.custom(Box::new(op), &[logits]))
    }

    pub fn bce(g: &mut Graph, logits: Var, target: &BinaryMask) -> Result<Var> {
        check_pixels(g.value(logits), pixels(target), "mask")?;
        Ok(g.custom(Box::new(BceWithLogits { target: target.to_f64() }), &[logits]))
    }

    pub fn dice(g: &mut Graph, logits: Var, target: &BinaryMask) -> Result<Var> {
        check_pixels(g.value(logits), pixels(target), "mask")?;
        Ok(g.custom(Box::new(SoftDice { target: target.to_f64() }), &[logits]))
    }

    pub fn spatial(g: &mut Graph, logits: Var, map: &SpatialMap) -> Result<Var> {
        let op = spatial_op(g.value(logits), map)?;
        Ok(g.custom(Box::new(op), &[logits]))
    }

    /// `(r_hat - r)^2` for a one-element `r_hat`.
    pub fn rate(g: &mut Graph, r_hat: Var, r: f64) -> Var {
        let shape = g.shape(r_hat).to_vec();
        let target = g.constant(Tensor::full(shape, r));
        let d = g.sub(r_hat, target);
        let sq = g.mul(d, d);
        g.sum(sq)
    }
}
