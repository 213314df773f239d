//! The G2C model: graph-aware encoder plus joint sentence/tag heads.

pub mod encoder;
pub mod gradcheck;
pub mod heads;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, NodeId, Tensor, TensorError};
pub use encoder::{
    attention_scores, attention_values, embed_inputs, encoder_forward, Dropout, EncoderConfig,
    EncoderInput, EncoderOutput, EncoderParams, LayerParams, ScoreScaling,
};
pub use heads::{HeadParams, JointPrediction, TokenReduction};
pub use params::{BoundParams, ParamId, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence of {len} positions exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("{what} id {id} out of range (vocabulary size {limit})")]
    OutOfVocabulary {
        what: &'static str,
        id: usize,
        limit: usize,
    },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("relation index {index} out of range (relation_dim {limit})")]
    RelationIndex { index: usize, limit: usize },
    #[error("{what} {index} out of range ({limit} classes)")]
    LabelOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("parameter {name}: {problem}")]
    Parameter { name: String, problem: String },
}

impl ModelError {
    fn label(e: TensorError, what: &'static str) -> Self {
        match e {
            TensorError::Index { index, limit, .. } => Self::LabelOutOfRange { what, index, limit },
            other => Self::Tensor(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InitKind {
    Normal,
    Zeros,
    Ones,
}

pub(crate) type InitFn<'a> = dyn FnMut(&str, &[usize], InitKind) -> Result<Tensor, ModelError> + 'a;

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain Transformer encoder: no graph, no PoS embeddings, `√d` scaling.
    Baseline,
    /// Graph-aware attention without PoS embeddings.
    G2cWoPos,
    /// Graph-aware attention with PoS embeddings.
    G2c,
}

impl Variant {
    pub fn use_graph(self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn use_pos_embeddings(self) -> bool {
        matches!(self, Variant::G2c)
    }

    pub fn scaling(self) -> ScoreScaling {
        match self {
            Variant::Baseline => ScoreScaling::Standard,
            _ => ScoreScaling::ThreeTerm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub n_sentence_labels: usize,
    pub n_tags: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if self.n_sentence_labels == 0 || self.n_tags == 0 {
            return Err(ModelError::Config("heads need at least one class".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct G2CModel {
    config: ModelConfig,
    store: ParamStore,
    encoder: EncoderParams,
    heads: HeadParams,
}

pub const DEFAULT_INIT_STD: f64 = 0.02;

impl G2CModel {
    /// Random initialization: `N(0, 0.02)` weights and embeddings, zero
    /// biases, unit layer-norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::with_init_std(config, seed, DEFAULT_INIT_STD)
    }

    pub fn with_init_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std)
            .map_err(|e| ModelError::Config(format!("init std {std}: {e}")))?;
        Self::build(config, &mut |_, shape, kind| {
            Ok(match kind {
                InitKind::Zeros => Tensor::zeros(shape),
                InitKind::Ones => Tensor::full(shape, 1.0),
                InitKind::Normal => {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                    Tensor::new(shape.to_vec(), data)?
                }
            })
        })
    }

    /// Rebuilds a model from named tensors (e.g. a loaded checkpoint). Every
    /// expected parameter must be present with the expected shape.
    pub fn from_store(config: ModelConfig, source: &ParamStore) -> Result<Self, ModelError> {
        let model = Self::build(config, &mut |name, shape, _| {
            let id = source.find(name).ok_or_else(|| ModelError::Parameter {
                name: name.to_string(),
                problem: "missing".into(),
            })?;
            let t = source.get(id);
            if t.shape() != shape {
                return Err(ModelError::Parameter {
                    name: name.to_string(),
                    problem: format!("shape {:?}, expected {shape:?}", t.shape()),
                });
            }
            Ok(t.clone())
        })?;
        if source.len() != model.store.len() {
            return Err(ModelError::Parameter {
                name: "<store>".into(),
                problem: format!(
                    "{} tensors supplied, model has {}",
                    source.len(),
                    model.store.len()
                ),
            });
        }
        Ok(model)
    }

    fn build(config: ModelConfig, init: &mut InitFn<'_>) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&config.encoder, &mut store, init)?;
        let heads = HeadParams::register(
            config.encoder.hidden,
            config.n_sentence_labels,
            config.n_tags,
            &mut store,
            init,
        )?;
        Ok(Self {
            config,
            store,
            encoder,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn head_params(&self) -> &HeadParams {
        &self.heads
    }

    /// Copy with every parameter rounded through `f32`.
    pub fn round_f32(&self) -> Self {
        Self {
            store: self.store.round_f32(),
            ..self.clone()
        }
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        input: &EncoderInput<'_>,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<EncoderOutput, ModelError> {
        encoder_forward(
            g,
            bound,
            &self.encoder,
            &self.config.encoder,
            input,
            dropout,
        )
    }

    /// Joint loss of one sentence.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        input: &EncoderInput<'_>,
        gold_sentence_label: usize,
        gold_tags: &[usize],
        reduction: TokenReduction,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<NodeId, ModelError> {
        if gold_tags.len() != input.tokens.len() {
            return Err(ModelError::LengthMismatch {
                what: "gold tags",
                expected: input.tokens.len(),
                got: gold_tags.len(),
            });
        }
        let out = self.encode(g, bound, input, dropout)?;
        heads::joint_loss(
            g,
            out.hidden,
            gold_sentence_label,
            gold_tags,
            bound,
            &self.heads,
            reduction,
        )
    }

    /// Inference on one sentence without gradient tracking.
    pub fn predict(&self, input: &EncoderInput<'_>) -> Result<JointPrediction, ModelError> {
        let mut g = Graph::new();
        let bound = self.store.bind(&mut g, false);
        self.predict_in(&mut g, &bound, input)
    }

    /// Inference reusing an existing graph and bound parameters.
    pub fn predict_in(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        input: &EncoderInput<'_>,
    ) -> Result<JointPrediction, ModelError> {
        let out = self.encode(g, bound, input, None)?;
        heads::predict(g, out.hidden, input.tokens.len(), bound, &self.heads)
    }
}
