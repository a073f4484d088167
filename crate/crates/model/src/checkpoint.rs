//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "AURACKPT"            8 bytes magic
//! version               u32
//! header_len            u64
//! header                header_len bytes of JSON (see `Header`)
//! blob                  f64 values: parameters, then Adam first and
//!                       second moments when present, in header order
//! sha256                32 bytes over everything above
//! ```

use std::path::Path;

use aura_core::SceneSample;
use aura_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::AuraModel;
use crate::trainer::{AdamState, TrainConfig, Trainer};
use crate::vocab::Vocab;
use crate::{ModelConfig, ModelError, Result};

pub const MAGIC: &[u8; 8] = b"AURACKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    vocab: Vocab,
    step: u64,
    cursor: u64,
    has_adam: bool,
    params: Vec<ParamEntry>,
    values: usize,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: AuraModel,
    pub train: Option<TrainConfig>,
    pub adam: Option<AdamState>,
    pub step: u64,
    /// Micro-batches consumed; determines the resumed data order.
    pub cursor: u64,
}

impl Checkpoint {
    pub fn from_model(model: AuraModel) -> Self {
        Self {
            model,
            train: None,
            adam: None,
            step: 0,
            cursor: 0,
        }
    }

    /// Snapshot of a trainer between optimizer steps.
    pub fn from_trainer(trainer: &Trainer) -> Result<Self> {
        if trainer.pending_micro_batches() != 0 {
            return Err(ModelError::Config(format!(
                "cannot checkpoint with {} micro-batches accumulated; finish the step first",
                trainer.pending_micro_batches()
            )));
        }
        Ok(Self {
            model: trainer.model().clone(),
            train: Some(trainer.config().clone()),
            adam: Some(trainer.adam().clone()),
            step: trainer.step_count(),
            cursor: trainer.cursor(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self.model.params();
        let mut entries = Vec::with_capacity(params.len());
        let mut offset = 0;
        for (id, name, t) in params.iter() {
            entries.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                trainable: params.is_trainable(id),
            });
            offset += t.numel();
        }
        let header = Header {
            model: self.model.config().clone(),
            train: self.train.clone(),
            vocab: self.model.vocab().clone(),
            step: self.step,
            cursor: self.cursor,
            has_adam: self.adam.is_some(),
            params: entries,
            values: offset,
        };
        let header = serde_json::to_vec(&header).map_err(|e| ModelError::Config(e.to_string()))?;

        let mut buf = Vec::with_capacity(header.len() + 24 * offset + 64);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        let mut put = |t: &Tensor| {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        params.iter().for_each(|(_, _, t)| put(t));
        if let Some(adam) = &self.adam {
            adam.first.iter().for_each(&mut put);
            adam.second.iter().for_each(&mut put);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        std::fs::write(path, buf).map_err(|e| ModelError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
        let corrupt = |m: String| ModelError::CorruptCheckpoint {
            path: path.to_path_buf(),
            message: m,
        };
        let fixed = MAGIC.len() + 4 + 8;
        if bytes.len() < fixed + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic or too short)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_bytes = body
            .get(fixed..fixed + hlen)
            .ok_or_else(|| corrupt(format!("header length {hlen} overruns file")))?;
        let mut header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| corrupt(format!("header: {e}")))?;
        header.vocab.rebuild_index();

        let blob = &body[fixed + hlen..];
        let copies = if header.has_adam { 3 } else { 1 };
        if blob.len() != 8 * header.values * copies {
            return Err(corrupt(format!(
                "blob holds {} bytes, header describes {}",
                blob.len(),
                8 * header.values * copies
            )));
        }
        let read = |offset: usize, shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data = blob[8 * offset..8 * (offset + n)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::new(shape.to_vec(), data)
        };

        let mut model = AuraModel::new(header.model.clone(), header.vocab.clone())?;
        let store = model.params_mut();
        if store.len() != header.params.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} parameters, this configuration builds {}",
                header.params.len(),
                store.len()
            )));
        }
        let mut adam = header.has_adam.then(|| AdamState {
            first: Vec::with_capacity(store.len()),
            second: Vec::with_capacity(store.len()),
        });
        for (id, entry) in store.ids().collect::<Vec<_>>().into_iter().zip(&header.params) {
            if store.name(id) != entry.name || store.get(id).shape() != entry.shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    entry.name,
                    entry.shape,
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = read(entry.offset, &entry.shape);
            store.set_trainable(id, entry.trainable);
            if let Some(a) = adam.as_mut() {
                a.first.push(read(header.values + entry.offset, &entry.shape));
                a.second.push(read(2 * header.values + entry.offset, &entry.shape));
            }
        }
        Ok(Self {
            model,
            train: header.train,
            adam,
            step: header.step,
            cursor: header.cursor,
        })
    }

    /// Fails with a configuration error unless the stored network matches
    /// `expected` (the vocabulary size comes from the stored vocabulary).
    pub fn check_model_config(&self, expected: &ModelConfig) -> Result<()> {
        let mut want = expected.clone();
        want.vocab_size = self.model.config().vocab_size;
        if &want != self.model.config() {
            return Err(ModelError::Config(format!(
                "checkpoint model configuration differs from the requested one: stored {:?}, requested {:?}",
                self.model.config(),
                want
            )));
        }
        Ok(())
    }

    /// Continues training from this checkpoint over `data` with `config`.
    /// The model section of `config` must match the stored network.
    pub fn resume<'d>(self, config: TrainConfig, data: &'d [SceneSample]) -> Result<Trainer<'d>> {
        self.check_model_config(&config.model)?;
        let adam = self
            .adam
            .ok_or_else(|| ModelError::Config("checkpoint holds no optimizer state".into()))?;
        let mut trainer = Trainer::with_model(config, self.model, data)?;
        trainer.restore(adam, self.step, self.cursor);
        Ok(trainer)
    }
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    Checkpoint::from_trainer(trainer)?.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
