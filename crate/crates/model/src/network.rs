//! The network as graph-building functions over a [`Tape`].

use aura_tensor::{ParamId, ParamStore, Tensor, Var};

use crate::layers::{AdaptedLinear, Builder, Conv, LayerNorm, Linear, Tape};
use crate::vocab::{BOS_ID, SEG_ID};
use crate::{ModelConfig, ModelError, Result};

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub norm1: LayerNorm,
    pub query: AdaptedLinear,
    pub key: AdaptedLinear,
    pub value: AdaptedLinear,
    pub out: AdaptedLinear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct MaskDecoder {
    pub key: Linear,
    pub film: Linear,
    pub conv1: Conv,
    pub conv2: Conv,
    pub conv3: Conv,
    pub head: Conv,
}

#[derive(Clone, Debug)]
pub(crate) struct OcclusionHeads {
    pub rate: Linear,
    pub trunk1: Linear,
    pub trunk2: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct SpatialEncoder {
    pub conv1: Conv,
    pub conv2: Conv,
    pub head: Conv,
}

/// Parameter handles of every sub-module. Building is deterministic in the
/// config, so names and order are stable across runs.
#[derive(Clone, Debug)]
pub struct Network {
    pub(crate) config: ModelConfig,
    pub(crate) stem: Conv,
    pub(crate) down: Conv,
    pub(crate) refine: Conv,
    pub(crate) prefix: Linear,
    pub(crate) token_embed: ParamId,
    pub(crate) pos_embed: ParamId,
    pub(crate) blocks: Vec<Block>,
    pub(crate) final_norm: LayerNorm,
    pub(crate) lm_head: Linear,
    pub(crate) seg_proj: Linear,
    pub(crate) prompt1: Linear,
    pub(crate) prompt2: Linear,
    pub(crate) occlusion: Option<OcclusionHeads>,
    pub(crate) visible: MaskDecoder,
    pub(crate) amodal: MaskDecoder,
    pub(crate) spatial: Option<SpatialEncoder>,
}

/// Graph handles of the visual features.
#[derive(Clone, Copy, Debug)]
pub struct VisualVars {
    /// `[C, H/4, W/4]`.
    pub features: Var,
    /// `[skip, H/2, W/2]`.
    pub skip: Var,
    /// `[3, H, W]`.
    pub image: Var,
}

/// Per-`[SEG]` graph handles.
#[derive(Clone, Debug)]
pub struct SegVars {
    pub e_mllm: Var,
    pub e_r: Var,
    pub e_oa: Var,
    pub rate: Option<Var>,
    pub visible: Var,
    pub amodal: Var,
    pub spatial: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub visual: VisualVars,
    pub logits: Var,
    pub hidden: Var,
    pub segs: Vec<SegVars>,
}

/// Decoder input sequence for a teacher-forced target: `[BOS]` followed by
/// every target token but the last.
pub fn teacher_inputs(target: &[usize]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(target.len());
    ids.push(BOS_ID);
    ids.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    ids
}

/// Positions of `[SEG]` in `ids`, in order.
pub fn seg_positions(ids: &[usize]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &id)| id == SEG_ID)
        .map(|(i, _)| i)
        .collect()
}

fn decoder(b: &mut Builder, name: &str, c: &ModelConfig) -> MaskDecoder {
    let d = c.embed_dim;
    let ch = c.feature_channels;
    // Per-channel gain on the features, starting at identity.
    let film = Linear {
        weight: b.fan_in(&format!("{name}.film.weight"), vec![d, ch], d),
        bias: b.constant(&format!("{name}.film.bias"), vec![ch], 1.0),
        inputs: d,
        outputs: ch,
    };
    MaskDecoder {
        key: Linear::new(b, &format!("{name}.key"), d, ch),
        film,
        conv1: Conv::new(b, &format!("{name}.conv1"), ch + 1, 16, 3, 1),
        conv2: Conv::new(b, &format!("{name}.conv2"), 16 + c.skip_channels, 8, 3, 1),
        conv3: Conv::new(b, &format!("{name}.conv3"), 8 + 3, 8, 3, 1),
        head: Conv::new(b, &format!("{name}.head"), 8, 1, 1, 1),
    }
}

impl Network {
    pub(crate) fn build(config: &ModelConfig, store: &mut ParamStore) -> Self {
        let c = config;
        let mut b = Builder::new(store, c.init_seed);
        let w = c.text_width;
        let d = c.embed_dim;
        let ch = c.feature_channels;

        let stem = Conv::new(&mut b, "backbone.stem", 3, c.skip_channels, 3, 2);
        let down = Conv::new(&mut b, "backbone.down", c.skip_channels, ch, 3, 2);
        let refine = Conv::new(&mut b, "backbone.refine", ch, ch, 3, 1);
        let prefix = Linear::new(&mut b, "text.prefix", ch, w);
        let token_embed = b.uniform("text.token_embed", vec![c.vocab_size, w], 0.1);
        let pos_embed = b.uniform("text.pos_embed", vec![c.max_positions(), w], 0.1);
        let blocks = (0..c.text_layers)
            .map(|i| {
                let n = format!("text.block{i}");
                let attn = |b: &mut Builder, p: &str| {
                    AdaptedLinear::new(b, &format!("{n}.attn.{p}"), w, w, c.adapter_rank, c.adapter_alpha)
                };
                Block {
                    norm1: LayerNorm::new(&mut b, &format!("{n}.norm1"), w),
                    query: attn(&mut b, "query"),
                    key: attn(&mut b, "key"),
                    value: attn(&mut b, "value"),
                    out: attn(&mut b, "out"),
                    norm2: LayerNorm::new(&mut b, &format!("{n}.norm2"), w),
                    fc1: Linear::new(&mut b, &format!("{n}.mlp.fc1"), w, w * c.mlp_ratio),
                    fc2: Linear::new(&mut b, &format!("{n}.mlp.fc2"), w * c.mlp_ratio, w),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(&mut b, "text.final_norm", w);
        let lm_head = Linear::new(&mut b, "text.lm_head", w, c.vocab_size);
        let seg_proj = Linear::new(&mut b, "seg.proj", w, d);
        let prompt1 = Linear::new(&mut b, "prompt.fc1", d, d);
        let prompt2 = Linear::new(&mut b, "prompt.fc2", d, d);
        let occlusion = c.enable_oc.then(|| OcclusionHeads {
            rate: Linear::new(&mut b, "occlusion.rate", d, 1),
            trunk1: Linear::new(&mut b, "occlusion.trunk1", d + 1, d),
            trunk2: Linear::new(&mut b, "occlusion.trunk2", d, d),
        });
        let visible = decoder(&mut b, "decoder.visible", c);
        let amodal = decoder(&mut b, "decoder.amodal", c);
        let spatial = c.enable_so.then(|| SpatialEncoder {
            conv1: Conv::new(&mut b, "spatial.conv1", 2, 8, 3, 1),
            conv2: Conv::new(&mut b, "spatial.conv2", 8, 8, 3, 1),
            head: Conv::new(&mut b, "spatial.head", 8, 3, 1, 1),
        });
        Self {
            config: c.clone(),
            stem,
            down,
            refine,
            prefix,
            token_embed,
            pos_embed,
            blocks,
            final_norm,
            lm_head,
            seg_proj,
            prompt1,
            prompt2,
            occlusion,
            visible,
            amodal,
            spatial,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Image tensor `[3, H, W]` to visual features.
    pub fn visual(&self, t: &mut Tape, image: Var) -> Result<VisualVars> {
        let s = self.config.image_size;
        if t.g.shape(image) != [3, s, s] {
            return Err(ModelError::Shape(format!(
                "image tensor {:?}, model expects [3, {s}, {s}]",
                t.g.shape(image)
            )));
        }
        let x = self.stem.forward(t, image);
        let skip = t.g.relu(x);
        let x = self.down.forward(t, skip);
        let x = t.g.relu(x);
        let x = self.refine.forward(t, x);
        let features = t.g.relu(x);
        Ok(VisualVars {
            features,
            skip,
            image,
        })
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::Vocab(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Visual prefix tokens `[P, width]`.
    pub fn prefix_tokens(&self, t: &mut Tape, visual: &VisualVars) -> Var {
        let ch = self.config.feature_channels;
        let pooled = t.g.avg_pool2(visual.features);
        let p = self.config.prefix_tokens();
        let flat = t.g.reshape(pooled, &[ch, p]);
        let tokens = t.g.transpose(flat);
        self.prefix.forward(t, tokens)
    }

    /// Runs the decoder over `prefix ++ question ++ inputs` and returns
    /// `(logits, hidden)` at the `inputs` positions.
    pub fn text(
        &self,
        t: &mut Tape,
        visual: &VisualVars,
        question: &[usize],
        inputs: &[usize],
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        self.check_ids(question)?;
        self.check_ids(inputs)?;
        if question.len() > c.max_question_len {
            return Err(ModelError::Shape(format!(
                "question has {} tokens, limit is {}",
                question.len(),
                c.max_question_len
            )));
        }
        if inputs.is_empty() || inputs.len() > c.max_answer_len + 1 {
            return Err(ModelError::Shape(format!(
                "answer has {} positions, expected 1..={}",
                inputs.len(),
                c.max_answer_len + 1
            )));
        }
        let prefix = self.prefix_tokens(t, visual);
        let ids: Vec<usize> = question.iter().chain(inputs).copied().collect();
        let table = t.param(self.token_embed);
        let text = t.g.embedding(table, &ids);
        let x = t.g.concat(&[prefix, text]);
        let n = t.g.shape(x)[0];
        let positions: Vec<usize> = (0..n).collect();
        let pos_table = t.param(self.pos_embed);
        let pos = t.g.embedding(pos_table, &positions);
        let mut x = t.g.add(x, pos);
        for block in &self.blocks {
            x = self.block(t, block, x);
        }
        let x = self.final_norm.forward(t, x);
        let hidden = t.g.slice_rows(x, n - inputs.len(), n);
        let logits = self.lm_head.forward(t, hidden);
        Ok((logits, hidden))
    }

    fn block(&self, t: &mut Tape, b: &Block, x: Var) -> Var {
        let heads = self.config.text_heads;
        let hd = self.config.text_width / heads;
        let h = b.norm1.forward(t, x);
        let q = b.query.forward(t, h);
        let k = b.key.forward(t, h);
        let v = b.value.forward(t, h);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let (lo, hi) = (i * hd, (i + 1) * hd);
            let qh = t.g.slice_cols(q, lo, hi);
            let kh = t.g.slice_cols(k, lo, hi);
            let vh = t.g.slice_cols(v, lo, hi);
            let scores = t.g.matmul_bt(qh, kh);
            let scores = t.g.scale(scores, scale);
            let att = t.g.causal_softmax(scores);
            outs.push(t.g.matmul(att, vh));
        }
        let merged = t.g.concat_cols(&outs);
        let attn = b.out.forward(t, merged);
        let x = t.g.add(x, attn);
        let h = b.norm2.forward(t, x);
        let h = b.fc1.forward(t, h);
        let h = t.g.gelu(h);
        let h = b.fc2.forward(t, h);
        t.g.add(x, h)
    }

    /// Projected hidden states at the `[SEG]` positions of `ids`, `[k, d]`;
    /// `None` when there is no `[SEG]`.
    pub fn seg_embeddings(&self, t: &mut Tape, hidden: Var, ids: &[usize]) -> Result<Option<Var>> {
        if t.g.shape(hidden)[0] != ids.len() {
            return Err(ModelError::Shape(format!(
                "{} hidden rows for {} token ids",
                t.g.shape(hidden)[0],
                ids.len()
            )));
        }
        let rows = seg_positions(ids);
        if rows.is_empty() {
            return Ok(None);
        }
        let picked = t.g.gather_rows(hidden, &rows);
        Ok(Some(self.seg_proj.forward(t, picked)))
    }

    fn check_width(&self, t: &Tape, e: Var, what: &str) -> Result<()> {
        let s = t.g.shape(e);
        if s.len() != 2 || s[1] != self.config.embed_dim {
            return Err(ModelError::Shape(format!(
                "{what} embedding {s:?}, expected [k, {}]",
                self.config.embed_dim
            )));
        }
        Ok(())
    }

    /// `e_r = e + fc2(gelu(fc1(e)))` on `[k, d]`.
    pub fn prompt(&self, t: &mut Tape, e_mllm: Var) -> Result<Var> {
        self.check_width(t, e_mllm, "prompt")?;
        let h = self.prompt1.forward(t, e_mllm);
        let h = t.g.gelu(h);
        let h = self.prompt2.forward(t, h);
        Ok(t.g.add(e_mllm, h))
    }

    /// `(e_oa [k, d], r_hat [k, 1])`.
    pub fn occlusion(&self, t: &mut Tape, e_r: Var) -> Result<(Var, Var)> {
        let heads = self.occlusion.as_ref().ok_or_else(|| {
            ModelError::Config("occlusion-condition encoder is disabled".into())
        })?;
        self.check_width(t, e_r, "occlusion")?;
        let pre = heads.rate.forward(t, e_r);
        let rate = t.g.sigmoid(pre);
        let joined = t.g.concat_cols(&[e_r, rate]);
        let h = heads.trunk1.forward(t, joined);
        let h = t.g.gelu(h);
        let h = heads.trunk2.forward(t, h);
        Ok((t.g.add(e_r, h), rate))
    }

    fn decode(&self, t: &mut Tape, dec: &MaskDecoder, visual: &VisualVars, e: Var) -> Result<Var> {
        self.check_width(t, e, "decoder")?;
        if t.g.shape(e)[0] != 1 {
            return Err(ModelError::Shape("decoder takes one embedding at a time".into()));
        }
        let ch = self.config.feature_channels;
        let fs = self.config.feature_size();
        let s = self.config.image_size;

        let key = dec.key.forward(t, e);
        let flat = t.g.reshape(visual.features, &[ch, fs * fs]);
        let coarse = t.g.matmul(key, flat);
        let coarse = t.g.scale(coarse, 1.0 / (ch as f64).sqrt());
        let coarse = t.g.reshape(coarse, &[1, fs, fs]);

        let gain = dec.film.forward(t, e);
        let modulated = t.g.scale_channels(visual.features, gain);
        let x = t.g.concat(&[coarse, modulated]);
        let x = dec.conv1.forward(t, x);
        let x = t.g.relu(x);
        let x = t.g.upsample2x(x);
        let x = t.g.concat(&[x, visual.skip]);
        let x = dec.conv2.forward(t, x);
        let x = t.g.relu(x);
        let x = t.g.upsample2x(x);
        let x = t.g.concat(&[x, visual.image]);
        let x = dec.conv3.forward(t, x);
        let x = t.g.relu(x);
        let fine = dec.head.forward(t, x);

        let up = t.g.upsample2x(coarse);
        let up = t.g.upsample2x(up);
        let logits = t.g.add(fine, up);
        Ok(t.g.reshape(logits, &[s, s]))
    }

    /// Visible-mask logits `[H, W]` for one `e_r` row.
    pub fn decode_visible(&self, t: &mut Tape, visual: &VisualVars, e_r: Var) -> Result<Var> {
        self.decode(t, &self.visible, visual, e_r)
    }

    /// Amodal-mask logits `[H, W]` for one `e_oa` row.
    pub fn decode_amodal(&self, t: &mut Tape, visual: &VisualVars, e_oa: Var) -> Result<Var> {
        self.decode(t, &self.amodal, visual, e_oa)
    }

    /// Spatial-map logits `[3, H, W]` from the two mask probability maps.
    pub fn spatial(&self, t: &mut Tape, visible: Var, amodal: Var) -> Result<Var> {
        let enc = self.spatial.as_ref().ok_or_else(|| {
            ModelError::Config("spatial-occlusion encoder is disabled".into())
        })?;
        let (sv, sa) = (t.g.shape(visible).to_vec(), t.g.shape(amodal).to_vec());
        if sv != sa || sv.len() != 2 {
            return Err(ModelError::Shape(format!(
                "visible logits {sv:?} vs amodal logits {sa:?}"
            )));
        }
        let (h, w) = (sv[0], sv[1]);
        let pv = t.g.sigmoid(visible);
        let pa = t.g.sigmoid(amodal);
        let pv = t.g.reshape(pv, &[1, h, w]);
        let pa = t.g.reshape(pa, &[1, h, w]);
        let x = t.g.concat(&[pv, pa]);
        let x = enc.conv1.forward(t, x);
        let x = t.g.relu(x);
        let x = enc.conv2.forward(t, x);
        let x = t.g.relu(x);
        Ok(enc.head.forward(t, x))
    }

    /// Per-`[SEG]` heads for the embeddings `e_mllm [k, d]`.
    pub fn seg_heads(&self, t: &mut Tape, visual: &VisualVars, e_mllm: Var) -> Result<Vec<SegVars>> {
        let e_r_all = self.prompt(t, e_mllm)?;
        let (e_oa_all, rate_all) = if self.occlusion.is_some() {
            let (e, r) = self.occlusion(t, e_r_all)?;
            (e, Some(r))
        } else {
            (e_r_all, None)
        };
        let k = t.g.shape(e_mllm)[0];
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let seg = |e: ModelError| ModelError::Seg {
                index: i,
                source: Box::new(e),
            };
            let e_m = t.g.slice_rows(e_mllm, i, i + 1);
            let e_r = t.g.slice_rows(e_r_all, i, i + 1);
            let e_oa = if rate_all.is_some() {
                t.g.slice_rows(e_oa_all, i, i + 1)
            } else {
                e_r
            };
            let rate = rate_all.map(|r| t.g.slice_rows(r, i, i + 1));
            let visible = self.decode_visible(t, visual, e_r).map_err(seg)?;
            let amodal = self.decode_amodal(t, visual, e_oa).map_err(seg)?;
            let spatial = match self.spatial {
                Some(_) => Some(self.spatial(t, visible, amodal).map_err(seg)?),
                None => None,
            };
            out.push(SegVars {
                e_mllm: e_m,
                e_r,
                e_oa,
                rate,
                visible,
                amodal,
                spatial,
            });
        }
        Ok(out)
    }

    /// Full teacher-forced pass for one image and one conversation.
    pub fn forward(
        &self,
        t: &mut Tape,
        image: &Tensor,
        question: &[usize],
        target: &[usize],
    ) -> Result<ForwardVars> {
        let image = t.g.constant(image.clone());
        let visual = self.visual(t, image)?;
        let inputs = teacher_inputs(target);
        let (logits, hidden) = self.text(t, &visual, question, &inputs)?;
        let segs = match self.seg_embeddings(t, hidden, &inputs)? {
            Some(e) => self.seg_heads(t, &visual, e)?,
            None => Vec::new(),
        };
        Ok(ForwardVars {
            visual,
            logits,
            hidden,
            segs,
        })
    }
}
