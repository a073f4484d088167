//! Optimisation loop: AdamW, warmup-then-linear-decay schedule, gradient
//! accumulation and a resumable, seed-determined data order.

use std::io::Write;
use std::path::PathBuf;

use aura_core::{Conversation, SceneSample};
use aura_tensor::{par, ParamGrads, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate_model, EvalReport};
use crate::layers::Tape;
use crate::losses::{ops, LossBreakdown, LossWeights};
use crate::model::AuraModel;
use crate::vocab::Vocab;
use crate::{ModelConfig, ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub accumulation_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Train only the adapter parameters.
    pub freeze_base: bool,
    /// Optimizer steps between evaluations; 0 disables them.
    pub eval_every: u64,
    /// Optimizer steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 5000,
            warmup_steps: 100,
            peak_lr: 1e-3,
            accumulation_steps: 4,
            batch_size: 1,
            seed: 0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            freeze_base: false,
            eval_every: 0,
            checkpoint_every: 0,
            output_dir: None,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.total_steps > 0 && self.warmup_steps >= self.total_steps {
            return fail(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.accumulation_steps == 0 || self.batch_size == 0 {
            return fail("accumulation_steps and batch_size must be at least 1".into());
        }
        if !(self.peak_lr > 0.0) {
            return fail(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return fail("weight_decay and clip_norm must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        self.weights.validate()
    }
}

/// Learning rate for optimizer step `step`: linear from 0 to `peak_lr` over
/// the warmup, then linear down to 0 at `total_steps`.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    let (w, total, peak) = (config.warmup_steps, config.total_steps, config.peak_lr);
    if step >= total {
        return 0.0;
    }
    if step <= w {
        return if w == 0 { peak } else { peak * step as f64 / w as f64 };
    }
    peak * (total - step) as f64 / (total - w) as f64
}

/// Vocabulary over every question and answer in `samples`.
pub fn build_vocab(samples: &[SceneSample]) -> Vocab {
    Vocab::build(
        samples
            .iter()
            .flat_map(|s| &s.conversations)
            .flat_map(|c| [c.question.as_str(), c.answer.as_str()]),
    )
}

/// Builds the training graph for one conversation and returns the weighted
/// objective plus its components.
pub fn conversation_objective(
    model: &AuraModel,
    t: &mut Tape,
    sample: &SceneSample,
    conv: &Conversation,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let cfg = model.config();
    let image = model.image_tensor(&sample.image)?;
    let (question, target) = model.encode_conversation(conv);
    let out = model.network().forward(t, &image, &question, &target)?;
    if out.segs.len() != conv.target_ids.len() {
        return Err(ModelError::Shape(format!(
            "{} [SEG] outputs for {} targets",
            out.segs.len(),
            conv.target_ids.len()
        )));
    }
    let w = weights.effective(cfg.enable_oc, cfg.enable_so);
    let text = ops::text(&mut t.g, out.logits, &target)?;

    let k = out.segs.len();
    let mut parts: [Vec<Var>; 6] = Default::default();
    for (i, (seg, id)) in out.segs.iter().zip(&conv.target_ids).enumerate() {
        let obj = sample.object(id).ok_or_else(|| {
            ModelError::Shape(format!("target {id} not in sample"))
        })?;
        let g = &mut t.g;
        let at = |e: ModelError| ModelError::Seg {
            index: i,
            source: Box::new(e),
        };
        parts[0].push(ops::bce(g, seg.visible, &obj.visible_mask).map_err(at)?);
        parts[1].push(ops::bce(g, seg.amodal, &obj.amodal_mask).map_err(at)?);
        parts[2].push(ops::dice(g, seg.visible, &obj.visible_mask).map_err(at)?);
        parts[3].push(ops::dice(g, seg.amodal, &obj.amodal_mask).map_err(at)?);
        if let Some(r) = seg.rate {
            parts[4].push(ops::rate(g, r, obj.occlusion_rate));
        }
        if let Some(sp) = seg.spatial {
            parts[5].push(ops::spatial(g, sp, &obj.spatial_map).map_err(at)?);
        }
    }
    let g = &mut t.g;
    let means: Vec<Option<Var>> = parts
        .iter()
        .map(|terms| {
            let first = *terms.first()?;
            let s = terms[1..].iter().fold(first, |acc, &v| g.add(acc, v));
            Some(g.scale(s, 1.0 / k as f64))
        })
        .collect();
    let value = |g: &aura_tensor::Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let mut b = LossBreakdown {
        l_text: g.value(text).item(),
        l_mask_ce_v: value(g, means[0]),
        l_mask_ce_a: value(g, means[1]),
        l_dice_v: value(g, means[2]),
        l_dice_a: value(g, means[3]),
        l_occ_rate: value(g, means[4]),
        l_occ_spatial: value(g, means[5]),
        total: 0.0,
    };
    let factors = [w.mask_ce_v, w.mask_ce_a, w.dice_v, w.dice_a, w.occ_rate, w.occ_spatial];
    let mut total = g.scale(text, w.text);
    for (m, f) in means.iter().zip(factors) {
        if let Some(m) = *m {
            let term = g.scale(m, f);
            total = g.add(total, term);
        }
    }
    b.total = g.value(total).item();
    Ok((total, b))
}

/// Gradients of one conversation's objective.
pub fn conversation_gradients(
    model: &AuraModel,
    sample: &SceneSample,
    conv: &Conversation,
    weights: &LossWeights,
) -> Result<(ParamGrads, LossBreakdown)> {
    let mut t = model.tape();
    let (total, b) = conversation_objective(model, &mut t, sample, conv, weights)?;
    if !b.is_finite() {
        return Ok((ParamGrads::new(model.params().len()), b));
    }
    let grads = t.g.backward(total).param_grads(model.params().len());
    Ok((grads, b))
}

/// Adam moments, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros_like(model: &AuraModel) -> Self {
        let zeros: Vec<Tensor> = model
            .params()
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
}

/// Result of one micro-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroOutcome {
    pub loss: LossBreakdown,
    /// Set when this micro-batch completed an optimizer step.
    pub update: Option<LogRecord>,
}

/// Training state over a borrowed dataset.
pub struct Trainer<'d> {
    pub(crate) config: TrainConfig,
    pub(crate) model: AuraModel,
    pub(crate) adam: AdamState,
    pub(crate) step: u64,
    /// Micro-batches consumed so far.
    pub(crate) cursor: u64,
    data: &'d [SceneSample],
    items: Vec<(usize, usize)>,
    order: Option<(u64, Vec<usize>)>,
    pending: ParamGrads,
    pending_loss: LossBreakdown,
    pending_count: usize,
}

impl<'d> Trainer<'d> {
    /// Fresh model initialised from `config.model` with a vocabulary built
    /// from `data`.
    pub fn new(config: TrainConfig, data: &'d [SceneSample]) -> Result<Self> {
        let model = AuraModel::new(config.model.clone(), build_vocab(data))?;
        Self::with_model(config, model, data)
    }

    pub fn with_model(config: TrainConfig, mut model: AuraModel, data: &'d [SceneSample]) -> Result<Self> {
        config.validate()?;
        if config.freeze_base {
            model.freeze_base();
        }
        let items: Vec<(usize, usize)> = data
            .iter()
            .enumerate()
            .flat_map(|(s, sample)| (0..sample.conversations.len()).map(move |c| (s, c)))
            .collect();
        if items.is_empty() {
            return Err(ModelError::Config("training set has no conversations".into()));
        }
        let adam = AdamState::zeros_like(&model);
        let pending = ParamGrads::new(model.params().len());
        Ok(Self {
            config,
            model,
            adam,
            step: 0,
            cursor: 0,
            data,
            items,
            order: None,
            pending,
            pending_loss: LossBreakdown::default(),
            pending_count: 0,
        })
    }

    pub(crate) fn restore(
        &mut self,
        adam: AdamState,
        step: u64,
        cursor: u64,
    ) {
        self.adam = adam;
        self.step = step;
        self.cursor = cursor;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &AuraModel {
        &self.model
    }

    pub fn into_model(self) -> AuraModel {
        self.model
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Micro-batches accumulated toward the next optimizer step.
    pub fn pending_micro_batches(&self) -> usize {
        self.pending_count
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// Dataset indices `(sample, conversation)` of micro-batch `index`.
    fn batch_items(&mut self, index: u64) -> Vec<(usize, usize)> {
        let b = self.config.batch_size as u64;
        let n = self.items.len() as u64;
        (index * b..(index + 1) * b)
            .map(|slot| {
                let epoch = slot / n;
                if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..self.items.len()).collect();
                    let seed = self.config.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15);
                    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                    self.order = Some((epoch, perm));
                }
                let perm = &self.order.as_ref().expect("set above").1;
                self.items[perm[(slot % n) as usize]]
            })
            .collect()
    }

    fn item_gradients(&self, (s, c): (usize, usize)) -> Result<(ParamGrads, LossBreakdown)> {
        let sample = &self.data[s];
        conversation_gradients(&self.model, sample, &sample.conversations[c], &self.config.weights)
            .map_err(|e| e.in_sample(&sample.sample_id))
    }

    fn absorb(&mut self, results: Vec<((usize, usize), Result<(ParamGrads, LossBreakdown)>)>) -> Result<LossBreakdown> {
        let scale = 1.0 / self.config.batch_size as f64;
        let mut loss = LossBreakdown::default();
        for ((s, _), r) in results {
            let (grads, b) = r?;
            if !b.is_finite() {
                return Err(ModelError::NonFinite {
                    step: self.step,
                    sample_id: self.data[s].sample_id.clone(),
                    components: serde_json::to_string(&b).unwrap_or_default(),
                });
            }
            self.pending.merge(&grads);
            loss.add_scaled(&b, scale);
        }
        Ok(loss)
    }

    /// One micro-batch, computed sequentially. Applies the optimizer step
    /// when it completes an accumulation window.
    pub fn micro_step(&mut self) -> Result<MicroOutcome> {
        let items = self.batch_items(self.cursor);
        let results: Vec<_> = items.iter().map(|&it| (it, self.item_gradients(it))).collect();
        let loss = self.absorb(results)?;
        self.cursor += 1;
        self.pending_loss.add_scaled(&loss, 1.0);
        self.pending_count += 1;
        let update = if self.pending_count == self.config.accumulation_steps {
            Some(self.apply_update())
        } else {
            None
        };
        Ok(MicroOutcome { loss, update })
    }

    /// Completes the current accumulation window and applies the update.
    /// The window's micro-batches are computed in parallel when the
    /// `parallel` feature is on; the result matches repeated
    /// [`Trainer::micro_step`] bit for bit.
    pub fn step(&mut self) -> Result<LogRecord> {
        let remaining = self.config.accumulation_steps - self.pending_count;
        let mut items = Vec::new();
        for i in 0..remaining as u64 {
            items.push(self.batch_items(self.cursor + i));
        }
        let flat: Vec<(usize, usize)> = items.iter().flatten().copied().collect();
        let computed = par::map(&flat, |&it| self.item_gradients(it));
        let mut computed = flat.into_iter().zip(computed);
        for batch in &items {
            let chunk: Vec<_> = computed.by_ref().take(batch.len()).collect();
            let loss = self.absorb(chunk)?;
            self.pending_loss.add_scaled(&loss, 1.0);
            self.pending_count += 1;
            self.cursor += 1;
        }
        Ok(self.apply_update())
    }

    fn apply_update(&mut self) -> LogRecord {
        let cfg = &self.config;
        let a = cfg.accumulation_steps as f64;
        let mut grads = std::mem::replace(&mut self.pending, ParamGrads::new(self.model.params().len()));
        grads.scale(1.0 / (a * cfg.batch_size as f64));
        let grad_norm = grads.global_norm();
        if cfg.clip_norm > 0.0 && grad_norm > cfg.clip_norm {
            grads.scale(cfg.clip_norm / grad_norm);
        }

        self.step += 1;
        let lr = lr_at(self.step, cfg);
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let params = self.model.params_mut();
        for (id, g) in grads.iter() {
            if !params.is_trainable(id) {
                continue;
            }
            let m = self.adam.first[id.0].data_mut();
            let v = self.adam.second[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * (mh / (vh.sqrt() + cfg.adam_eps) + cfg.weight_decay * p[i]);
            }
        }

        let mut loss = std::mem::take(&mut self.pending_loss);
        let scaled = loss;
        loss = LossBreakdown::default();
        loss.add_scaled(&scaled, 1.0 / a);
        self.pending_count = 0;
        LogRecord {
            step: self.step,
            lr,
            grad_norm,
            loss,
            eval: None,
        }
    }

    /// Trains to `total_steps`, appending one JSON line per optimizer step
    /// to `log`. Evaluates on `eval_set` every `eval_every` steps, and
    /// calls `on_step` after each record is written.
    pub fn run(
        &mut self,
        log: &mut dyn Write,
        eval_set: Option<&[SceneSample]>,
        mut on_step: impl FnMut(&Trainer<'d>, &LogRecord) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            let mut record = self.step()?;
            let every = self.config.eval_every;
            if let Some(set) = eval_set {
                if every > 0 && (record.step % every == 0 || record.step == self.config.total_steps) {
                    record.eval = Some(evaluate_model(&self.model, set, 0.5)?);
                }
            }
            let line = serde_json::to_string(&record).map_err(|e| ModelError::Config(e.to_string()))?;
            writeln!(log, "{line}").map_err(|e| ModelError::io("metrics log", e))?;
            on_step(self, &record)?;
        }
        Ok(())
    }
}
