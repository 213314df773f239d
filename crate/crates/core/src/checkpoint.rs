//! Binary checkpoints.
//!
//! Layout: the magic `G2CK`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every tensor as
//! little-endian `f32` in index order. The header carries the run config,
//! vocabularies, tag list, training position and a tensor index of name,
//! shape, byte offset and element count. Adam moments, when present, are
//! stored as `adam.m.<name>` and `adam.v.<name>`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{G2CModel, ModelError, ParamStore};
use crate::tensor::Tensor;
use crate::train::{Adam, AdamHyper, RunConfig, TrainError, TrainState, Vocabularies};

pub const MAGIC: &[u8; 4] = b"G2CK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    pub numel: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    run_config: RunConfig,
    vocabularies: Vocabularies,
    tags: Vec<String>,
    epoch: usize,
    step: u64,
    adam: Option<AdamHeader>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct AdamHeader {
    hyper: AdamHyper,
    step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocabularies,
    pub model: G2CModel,
    pub optimizer: Option<Adam>,
    pub epoch: usize,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_state(config: RunConfig, vocab: Vocabularies, state: TrainState) -> Self {
        Self {
            config,
            vocab,
            model: state.model,
            optimizer: Some(state.adam),
            epoch: state.epoch,
            step: state.step,
        }
    }

    /// Training state for resumption; requires saved optimizer moments.
    pub fn into_state(self) -> Result<(RunConfig, Vocabularies, TrainState), CheckpointError> {
        let adam = self
            .optimizer
            .ok_or_else(|| CheckpointError::Format("no optimizer state to resume from".into()))?;
        Ok((
            self.config,
            self.vocab,
            TrainState {
                model: self.model,
                adam,
                epoch: self.epoch,
                step: self.step,
            },
        ))
    }
}

fn named_tensors(ckpt: &Checkpoint) -> Vec<(String, &Tensor)> {
    let store = ckpt.model.store();
    let mut out: Vec<(String, &Tensor)> = store.iter().map(|(n, t)| (n.to_string(), t)).collect();
    if let Some(adam) = &ckpt.optimizer {
        for (prefix, moments) in [("adam.m.", &adam.m), ("adam.v.", &adam.v)] {
            out.extend(
                store
                    .names()
                    .iter()
                    .zip(moments)
                    .map(|(n, t)| (format!("{prefix}{n}"), t)),
            );
        }
    }
    out
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let tensors = named_tensors(ckpt);
    let mut index = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in &tensors {
        index.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
            numel: t.numel(),
        });
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = Header {
        run_config: ckpt.config.clone(),
        vocabularies: ckpt.vocab.clone(),
        tags: ckpt.vocab.scheme()?.tags().to_vec(),
        epoch: ckpt.epoch,
        step: ckpt.step,
        adam: ckpt.optimizer.as_ref().map(|a| AdamHeader {
            hyper: a.hyper,
            step: a.step,
        }),
        tensors: index,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take<'b>(
    bytes: &'b [u8],
    at: &mut usize,
    n: usize,
    what: &str,
) -> Result<&'b [u8], CheckpointError> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::Format(format!("truncated while reading {what}")))?;
    let out = &bytes[*at..end];
    *at = end;
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut at = 0;
    if take(bytes, &mut at, 4, "magic")? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(
        take(bytes, &mut at, 4, "version")?
            .try_into()
            .expect("4 bytes"),
    );
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(
        take(bytes, &mut at, 8, "header length")?
            .try_into()
            .expect("8 bytes"),
    );
    let header_len = usize::try_from(header_len)
        .map_err(|_| CheckpointError::Format("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(take(bytes, &mut at, header_len, "header")?)
        .map_err(|e| CheckpointError::Format(format!("header: {e}")))?;
    let payload = &bytes[at..];

    let mut expected = 0usize;
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        if n != e.numel || e.offset != expected {
            return Err(CheckpointError::Format(format!(
                "tensor index entry {} is inconsistent",
                e.name
            )));
        }
        expected += 4 * e.numel;
    }
    if expected != payload.len() {
        return Err(CheckpointError::Format(format!(
            "index covers {expected} payload bytes, file has {}",
            payload.len()
        )));
    }
    let read = |e: &TensorEntry| -> Result<Tensor, CheckpointError> {
        let data = payload[e.offset..e.offset + 4 * e.numel]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok(Tensor::new(e.shape.clone(), data).map_err(ModelError::from)?)
    };

    let vocab = header.vocabularies;
    let scheme = vocab.scheme()?;
    if scheme.tags() != header.tags.as_slice() {
        return Err(CheckpointError::Format(
            "tag list does not match LF labels".into(),
        ));
    }
    let model_config = header.run_config.model_config(
        vocab.tokens.len(),
        vocab.pos_tag_count(),
        vocab.dep_labels.relation_onehot_dim(),
        vocab.lf_labels.len(),
        scheme.len(),
    );
    let mut store = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for e in &header.tensors {
        let t = read(e)?;
        if let Some(rest) = e.name.strip_prefix("adam.m.") {
            m.push((rest.to_string(), t));
        } else if let Some(rest) = e.name.strip_prefix("adam.v.") {
            v.push((rest.to_string(), t));
        } else {
            if store.find(&e.name).is_some() {
                return Err(CheckpointError::Format(format!(
                    "duplicate tensor {}",
                    e.name
                )));
            }
            store.add(e.name.clone(), t);
        }
    }
    let model = G2CModel::from_store(model_config, &store)?;
    let optimizer = match header.adam {
        None if m.is_empty() && v.is_empty() => None,
        None => {
            return Err(CheckpointError::Format(
                "optimizer moments without optimizer header".into(),
            ))
        }
        Some(a) => {
            let names = model.store().names();
            let ordered = |moments: Vec<(String, Tensor)>| -> Result<Vec<Tensor>, CheckpointError> {
                if moments.len() != names.len()
                    || moments.iter().zip(names).any(|((n, t), p)| {
                        n != p
                            || t.shape()
                                != model
                                    .store()
                                    .get(model.store().find(p).expect("own name"))
                                    .shape()
                    })
                {
                    return Err(CheckpointError::Format(
                        "optimizer moments do not match parameters".into(),
                    ));
                }
                Ok(moments.into_iter().map(|(_, t)| t).collect())
            };
            Some(Adam {
                hyper: a.hyper,
                step: a.step,
                m: ordered(m)?,
                v: ordered(v)?,
            })
        }
    };
    Ok(Checkpoint {
        config: header.run_config,
        vocab,
        model,
        optimizer,
        epoch: header.epoch,
        step: header.step,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = to_bytes(ckpt)?;
    let io = |e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    from_bytes(&bytes)
}
