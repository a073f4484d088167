use aura_core::{Conversation, RgbImage, SceneSample};
use aura_tensor::{ParamStore, Tensor};

use crate::layers::{Tape, ADAPTER_TAG};
use crate::network::{teacher_inputs, Network, VisualVars};
use crate::vocab::Vocab;
use crate::{ModelConfig, ModelError, Result};

/// Detached visual features of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    /// `[C, H/4, W/4]`: the grid the decoders attend over.
    pub features: Tensor,
    /// `[skip, H/2, W/2]`.
    pub skip: Tensor,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
}

impl VisualFeatures {
    pub(crate) fn record(&self, t: &mut Tape) -> VisualVars {
        VisualVars {
            features: t.g.constant(self.features.clone()),
            skip: t.g.constant(self.skip.clone()),
            image: t.g.constant(self.image.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextOutput {
    /// `[L, |V|]`.
    pub logits: Tensor,
    /// Final-layer states `[L, width]` at the decoder input positions.
    pub hidden: Tensor,
    /// Decoder input ids aligned with `hidden`.
    pub input_ids: Vec<usize>,
}

/// Outputs attached to one `[SEG]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegOutput {
    pub e_mllm: Vec<f64>,
    pub e_r: Vec<f64>,
    pub e_oa: Vec<f64>,
    pub rate: Option<f64>,
    /// `[H, W]` logits.
    pub visible: Tensor,
    /// `[H, W]` logits.
    pub amodal: Tensor,
    /// `[3, H, W]` logits.
    pub spatial: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs {
    pub logits: Tensor,
    pub segs: Vec<SegOutput>,
}

/// Network weights plus the vocabulary they were trained against.
#[derive(Clone, Debug)]
pub struct AuraModel {
    config: ModelConfig,
    vocab: Vocab,
    params: ParamStore,
    net: Network,
}

impl AuraModel {
    /// Fresh initialisation. `config.vocab_size` is taken from `vocab`.
    pub fn new(mut config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut params = ParamStore::new();
        let net = Network::build(&config, &mut params);
        Ok(Self {
            config,
            vocab,
            params,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.params)
    }

    /// Leaves only the adapter parameters trainable.
    pub fn freeze_base(&mut self) {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let adapter = self.params.name(id).contains(ADAPTER_TAG);
            self.params.set_trainable(id, adapter);
        }
    }

    pub fn unfreeze_all(&mut self) {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            self.params.set_trainable(id, true);
        }
    }

    pub fn image_tensor(&self, image: &RgbImage) -> Result<Tensor> {
        let s = self.config.image_size;
        if image.dims() != (s, s) {
            return Err(ModelError::Shape(format!(
                "image is {}x{}, model expects {s}x{s}",
                image.height(),
                image.width()
            )));
        }
        Ok(Tensor::new([3, s, s], image.to_chw()))
    }

    pub fn encode_image(&self, image: &RgbImage) -> Result<VisualFeatures> {
        let x = self.image_tensor(image)?;
        let mut t = self.tape();
        let x = t.g.constant(x);
        let v = self.net.visual(&mut t, x)?;
        Ok(VisualFeatures {
            features: t.g.value(v.features).clone(),
            skip: t.g.value(v.skip).clone(),
            image: t.g.value(v.image).clone(),
        })
    }

    /// Teacher-forced pass; `target` is answer ids followed by `[EOS]`.
    pub fn forward_text(&self, visual: &VisualFeatures, question: &[usize], target: &[usize]) -> Result<TextOutput> {
        let mut t = self.tape();
        let v = visual.record(&mut t);
        let input_ids = teacher_inputs(target);
        let (logits, hidden) = self.net.text(&mut t, &v, question, &input_ids)?;
        Ok(TextOutput {
            logits: t.g.value(logits).clone(),
            hidden: t.g.value(hidden).clone(),
            input_ids,
        })
    }

    /// One projected `e_mllm` per `[SEG]` in `ids`, in textual order.
    pub fn extract_seg_embeddings(&self, hidden: &Tensor, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut t = self.tape();
        let h = t.g.constant(hidden.clone());
        Ok(match self.net.seg_embeddings(&mut t, h, ids)? {
            Some(e) => rows(t.g.value(e)),
            None => Vec::new(),
        })
    }

    pub fn prompt_encode(&self, e_mllm: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.tape();
        let e = t.g.constant(Tensor::new([1, e_mllm.len()], e_mllm.to_vec()));
        let out = self.net.prompt(&mut t, e)?;
        Ok(t.g.value(out).data().to_vec())
    }

    /// `(e_oa, r_hat)`.
    pub fn occlusion_condition_encode(&self, e_r: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut t = self.tape();
        let e = t.g.constant(Tensor::new([1, e_r.len()], e_r.to_vec()));
        let (e_oa, rate) = self.net.occlusion(&mut t, e)?;
        Ok((t.g.value(e_oa).data().to_vec(), t.g.value(rate).item()))
    }

    fn decode_with(&self, visual: &VisualFeatures, e: &[f64], amodal: bool) -> Result<Tensor> {
        let mut t = self.tape();
        let v = visual.record(&mut t);
        let e = t.g.constant(Tensor::new([1, e.len()], e.to_vec()));
        let out = if amodal {
            self.net.decode_amodal(&mut t, &v, e)?
        } else {
            self.net.decode_visible(&mut t, &v, e)?
        };
        Ok(t.g.value(out).clone())
    }

    pub fn decode_visible(&self, visual: &VisualFeatures, e_r: &[f64]) -> Result<Tensor> {
        self.decode_with(visual, e_r, false)
    }

    pub fn decode_amodal(&self, visual: &VisualFeatures, e_oa: &[f64]) -> Result<Tensor> {
        self.decode_with(visual, e_oa, true)
    }

    pub fn spatial_occlusion_encode(&self, visible: &Tensor, amodal: &Tensor) -> Result<Tensor> {
        let mut t = self.tape();
        let v = t.g.constant(visible.clone());
        let a = t.g.constant(amodal.clone());
        let out = self.net.spatial(&mut t, v, a)?;
        Ok(t.g.value(out).clone())
    }

    /// Question ids and teacher-forcing target for a conversation.
    pub fn encode_conversation(&self, conv: &Conversation) -> (Vec<usize>, Vec<usize>) {
        (
            self.vocab.encode(&conv.question),
            self.vocab.encode_answer(&conv.answer),
        )
    }

    /// Teacher-forced pass over one conversation of `sample`.
    pub fn forward(&self, sample: &SceneSample, conv: &Conversation) -> Result<ModelOutputs> {
        let run = || {
            let image = self.image_tensor(&sample.image)?;
            let (question, target) = self.encode_conversation(conv);
            let mut t = self.tape();
            let out = self.net.forward(&mut t, &image, &question, &target)?;
            let g = &t.g;
            let segs = out
                .segs
                .iter()
                .map(|s| SegOutput {
                    e_mllm: g.value(s.e_mllm).data().to_vec(),
                    e_r: g.value(s.e_r).data().to_vec(),
                    e_oa: g.value(s.e_oa).data().to_vec(),
                    rate: s.rate.map(|r| g.value(r).item()),
                    visible: g.value(s.visible).clone(),
                    amodal: g.value(s.amodal).clone(),
                    spatial: s.spatial.map(|v| g.value(v).clone()),
                })
                .collect();
            Ok(ModelOutputs {
                logits: g.value(out.logits).clone(),
                segs,
            })
        };
        run().map_err(|e: ModelError| e.in_sample(&sample.sample_id))
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = t.dim(1);
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}
