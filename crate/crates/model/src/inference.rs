//! Greedy decoding with a key/value cache, and full prediction.

use aura_core::{BinaryMask, RgbImage};
use aura_tensor::kernels::{gemm, MatRef};
use aura_tensor::{gelu, sigmoid, ParamStore, Tensor};

use crate::layers::{AdaptedLinear, LayerNorm, Linear, LN_EPS};
use crate::model::{AuraModel, VisualFeatures};
use crate::network::{Block, Network};
use crate::vocab::{BOS_ID, EOS_ID};
use crate::{ModelError, Result};

/// Greedy output. `tokens` excludes the terminating `[EOS]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// Hit `max_len` before emitting `[EOS]`.
    pub truncated: bool,
    /// Logits each token was chosen from, one row per step.
    pub step_logits: Vec<Vec<f64>>,
}

/// Thresholdable outputs for one generated `[SEG]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegPrediction {
    /// Row-major `H x W` probabilities.
    pub visible: Vec<f64>,
    pub amodal: Vec<f64>,
    pub rate: Option<f64>,
    /// Per-pixel argmax of the spatial logits.
    pub spatial: Option<Vec<u8>>,
}

impl SegPrediction {
    pub fn visible_mask(&self, size: usize, threshold: f64) -> BinaryMask {
        BinaryMask::from_scores(size, size, &self.visible, threshold)
    }

    pub fn amodal_mask(&self, size: usize, threshold: f64) -> BinaryMask {
        BinaryMask::from_scores(size, size, &self.amodal, threshold)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub answer: String,
    pub tokens: Vec<usize>,
    pub truncated: bool,
    pub segs: Vec<SegPrediction>,
}

fn linear(store: &ParamStore, l: &Linear, x: &[f64], n: usize) -> Vec<f64> {
    let w = store.get(l.weight).data();
    let b = store.get(l.bias).data();
    let mut out = vec![0.0; n * l.outputs];
    for row in out.chunks_mut(l.outputs) {
        row.copy_from_slice(b);
    }
    gemm(
        n,
        l.inputs,
        l.outputs,
        MatRef::row_major(x, l.inputs),
        MatRef::row_major(w, l.outputs),
        &mut out,
        true,
    );
    out
}

fn adapted(store: &ParamStore, l: &AdaptedLinear, x: &[f64], n: usize) -> Vec<f64> {
    let mut y = linear(store, &l.base, x, n);
    if let Some(a) = &l.adapter {
        let down = store.get(a.down);
        let up = store.get(a.up);
        let r = down.dim(1);
        let (i, o) = (l.base.inputs, l.base.outputs);
        let mut h = vec![0.0; n * r];
        gemm(n, i, r, MatRef::row_major(x, i), MatRef::row_major(down.data(), r), &mut h, false);
        let mut d = vec![0.0; n * o];
        gemm(n, r, o, MatRef::row_major(&h, r), MatRef::row_major(up.data(), o), &mut d, false);
        y.iter_mut().zip(&d).for_each(|(y, d)| *y += a.scale * d);
    }
    y
}

fn layer_norm(store: &ParamStore, ln: &LayerNorm, x: &[f64], width: usize) -> Vec<f64> {
    let g = store.get(ln.gamma).data();
    let b = store.get(ln.beta).data();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(width) {
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        out.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * inv * g[j] + b[j]));
    }
    out
}

/// Keys and values of every position fed so far, per layer.
struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

struct Decoder<'m> {
    store: &'m ParamStore,
    net: &'m Network,
    width: usize,
    cache: KvCache,
}

impl<'m> Decoder<'m> {
    fn new(model: &'m AuraModel) -> Self {
        let layers = model.config().text_layers;
        Self {
            store: model.params(),
            net: model.network(),
            width: model.config().text_width,
            cache: KvCache {
                keys: vec![Vec::new(); layers],
                values: vec![Vec::new(); layers],
                len: 0,
            },
        }
    }

    /// Feeds `n` embedded rows and returns the final-normed state of the
    /// last one.
    fn feed(&mut self, mut x: Vec<f64>, n: usize) -> Vec<f64> {
        let start = self.cache.len;
        let pos = self.store.get(self.net.pos_embed);
        for (i, row) in x.chunks_mut(self.width).enumerate() {
            row.iter_mut()
                .zip(pos.row(start + i))
                .for_each(|(v, p)| *v += p);
        }
        for (layer, block) in self.net.blocks.iter().enumerate() {
            x = self.block(layer, block, x, n, start);
        }
        self.cache.len += n;
        let last = x[(n - 1) * self.width..].to_vec();
        layer_norm(self.store, &self.net.final_norm, &last, self.width)
    }

    fn block(&mut self, layer: usize, b: &Block, x: Vec<f64>, n: usize, start: usize) -> Vec<f64> {
        let w = self.width;
        let heads = self.net.config.text_heads;
        let hd = w / heads;
        let s = self.store;
        let h = layer_norm(s, &b.norm1, &x, w);
        let q = adapted(s, &b.query, &h, n);
        self.cache.keys[layer].extend(adapted(s, &b.key, &h, n));
        self.cache.values[layer].extend(adapted(s, &b.value, &h, n));
        let keys = &self.cache.keys[layer];
        let values = &self.cache.values[layer];
        let scale = 1.0 / (hd as f64).sqrt();

        let mut merged = vec![0.0; n * w];
        for i in 0..n {
            let visible = start + i + 1;
            for head in 0..heads {
                let off = head * hd;
                let qi = &q[i * w + off..i * w + off + hd];
                let scores: Vec<f64> = (0..visible)
                    .map(|j| {
                        let kj = &keys[j * w + off..j * w + off + hd];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    })
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let out = &mut merged[i * w + off..i * w + off + hd];
                for (j, e) in exps.iter().enumerate() {
                    let p = e / total;
                    let vj = &values[j * w + off..j * w + off + hd];
                    out.iter_mut().zip(vj).for_each(|(o, v)| *o += p * v);
                }
            }
        }
        let attn = adapted(s, &b.out, &merged, n);
        let x: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let h = layer_norm(s, &b.norm2, &x, w);
        let mut h = linear(s, &b.fc1, &h, n);
        h.iter_mut().for_each(|v| *v = gelu(*v));
        let h = linear(s, &b.fc2, &h, n);
        x.iter().zip(&h).map(|(a, b)| a + b).collect()
    }

    fn embed(&self, ids: &[usize]) -> Vec<f64> {
        let table = self.store.get(self.net.token_embed);
        ids.iter().flat_map(|&id| table.row(id).iter().copied()).collect()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl AuraModel {
    /// Greedy decoding of at most `max_len` answer tokens (capped by the
    /// configured answer length).
    pub fn generate_answer(&self, visual: &VisualFeatures, question: &[usize], max_len: usize) -> Result<Generation> {
        let c = self.config();
        self.vocab().check_ids(question)?;
        if question.len() > c.max_question_len {
            return Err(ModelError::Shape(format!(
                "question has {} tokens, limit is {}",
                question.len(),
                c.max_question_len
            )));
        }
        let max_len = max_len.min(c.max_answer_len);

        let mut t = self.tape();
        let v = visual.record(&mut t);
        let prefix = self.network().prefix_tokens(&mut t, &v);
        let mut prompt = t.g.value(prefix).data().to_vec();
        let mut dec = Decoder::new(self);
        let mut ids = question.to_vec();
        ids.push(BOS_ID);
        prompt.extend(dec.embed(&ids));
        let n = prompt.len() / c.text_width;
        let mut state = dec.feed(prompt, n);

        let mut tokens = Vec::new();
        let mut step_logits = Vec::new();
        loop {
            if tokens.len() == max_len {
                return Ok(Generation {
                    tokens,
                    truncated: true,
                    step_logits,
                });
            }
            let logits = linear(self.params(), &self.network().lm_head, &state, 1);
            let next = argmax(&logits);
            step_logits.push(logits);
            if next == EOS_ID {
                return Ok(Generation {
                    tokens,
                    truncated: false,
                    step_logits,
                });
            }
            tokens.push(next);
            if tokens.len() < max_len {
                let x = dec.embed(&[next]);
                state = dec.feed(x, 1);
            }
        }
    }

    /// Generates an answer, then decodes one mask pair per generated `[SEG]`.
    pub fn predict(&self, image: &RgbImage, question: &str) -> Result<Prediction> {
        let visual = self.encode_image(image)?;
        let question = self.vocab().encode(question);
        let gen = self.generate_answer(&visual, &question, self.config().max_answer_len)?;
        let mut target = gen.tokens.clone();
        target.push(EOS_ID);

        let net = self.network();
        let mut t = self.tape();
        let v = visual.record(&mut t);
        let inputs = crate::network::teacher_inputs(&target);
        let (_, hidden) = net.text(&mut t, &v, &question, &inputs)?;
        let segs = match net.seg_embeddings(&mut t, hidden, &inputs)? {
            Some(e) => net.seg_heads(&mut t, &v, e)?,
            None => Vec::new(),
        };
        let probs = |x: &Tensor| x.data().iter().map(|&v| sigmoid(v)).collect::<Vec<f64>>();
        let segs = segs
            .iter()
            .map(|s| SegPrediction {
                visible: probs(t.g.value(s.visible)),
                amodal: probs(t.g.value(s.amodal)),
                rate: s.rate.map(|r| t.g.value(r).item()),
                spatial: s.spatial.map(|sp| spatial_labels(t.g.value(sp))),
            })
            .collect();
        Ok(Prediction {
            answer: self.vocab().decode(&gen.tokens)?,
            tokens: gen.tokens,
            truncated: gen.truncated,
            segs,
        })
    }
}

/// Argmax over the channel axis of `[3, H, W]` logits.
pub fn spatial_labels(logits: &Tensor) -> Vec<u8> {
    let n = logits.numel() / 3;
    let d = logits.data();
    (0..n)
        .map(|p| argmax(&[d[p], d[n + p], d[2 * n + p]]) as u8)
        .collect()
}
