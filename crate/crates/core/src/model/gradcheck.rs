//! Finite-difference check of the full model: encoder, both heads and the
//! joint loss, with every parameter perturbed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    encoder::SPECIAL_TOKENS, heads, BoundParams, EncoderConfig, EncoderInput, G2CModel,
    ModelConfig, ModelError, TokenReduction, Variant,
};
use crate::relations::{build_relation_matrix, DependencyEdge, DependencyGraph, LabelVocabulary};
use crate::tensor::{finite_diff_check, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub variant: Variant,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden size `d_h`.
    pub hidden: usize,
    pub ffn_dim: usize,
    /// Tokenized length `T`, including `CLS` and `SEP`.
    pub seq_len: usize,
    pub vocab_size: usize,
    pub n_sentence_labels: usize,
    pub n_tags: usize,
    pub n_dep_labels: usize,
    /// Scale of the random parameter values.
    pub init_std: f64,
    /// Finite-difference step.
    pub step: f64,
    pub reduction: TokenReduction,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            variant: Variant::G2c,
            n_layers: 1,
            n_heads: 2,
            hidden: 8,
            ffn_dim: 16,
            seq_len: 6,
            vocab_size: 12,
            n_sentence_labels: 3,
            n_tags: 9,
            n_dep_labels: 3,
            init_std: 0.5,
            step: 1e-5,
            reduction: TokenReduction::Sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub n_parameters: usize,
}

fn to_tensor_error(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::Dimension {
            op: "model",
            detail: other.to_string(),
        },
    }
}

/// Builds a random model and sentence from `seed` and compares analytic
/// gradients of the joint loss against central differences.
pub fn gradcheck_model(config: &GradcheckConfig, seed: u64) -> Result<GradcheckReport, ModelError> {
    if config.seq_len < 3 || config.n_heads == 0 || !config.hidden.is_multiple_of(config.n_heads) {
        return Err(ModelError::Config(
            "gradcheck needs seq_len >= 3 and hidden divisible by n_heads".into(),
        ));
    }
    let labels: Vec<String> = (0..config.n_dep_labels.max(1))
        .map(|i| format!("rel{i}"))
        .collect();
    let vocab = LabelVocabulary::from_labels(&labels);
    let v = config.variant;
    let model_config = ModelConfig {
        encoder: EncoderConfig {
            n_layers: config.n_layers,
            n_heads: config.n_heads,
            head_dim: config.hidden / config.n_heads,
            hidden: config.hidden,
            ffn_dim: config.ffn_dim,
            max_len: config.seq_len,
            vocab_size: config.vocab_size.max(SPECIAL_TOKENS + 1),
            pos_tag_count: 5,
            relation_dim: vocab.relation_onehot_dim(),
            use_pos_embeddings: v.use_pos_embeddings(),
            use_graph: v.use_graph(),
            scaling: v.scaling(),
            dropout: 0.0,
            layer_norm_eps: 1e-12,
        },
        n_sentence_labels: config.n_sentence_labels,
        n_tags: config.n_tags,
    };
    let mut model = G2CModel::with_init_std(model_config, seed, config.init_std)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let noise = Normal::new(0.0, config.init_std).map_err(|e| ModelError::Config(e.to_string()))?;
    // move biases off zero and gains off one
    for t in model.store_mut().tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x += noise.sample(&mut rng));
    }

    let n = config.seq_len - 2;
    let vocab_size = model.config().encoder.vocab_size;
    let tokens: Vec<usize> = (0..n)
        .map(|_| rng.random_range(SPECIAL_TOKENS..vocab_size))
        .collect();
    let pos: Vec<usize> = (0..n).map(|_| rng.random_range(1..5)).collect();
    let root = rng.random_range(0..n);
    let edges = (0..n)
        .map(|i| {
            let head = if i == root {
                None
            } else {
                // attach to a lower index or the root to stay acyclic
                let candidates: Vec<usize> = (0..i)
                    .chain(std::iter::once(root))
                    .filter(|&h| h != i)
                    .collect();
                Some(candidates[rng.random_range(0..candidates.len())])
            };
            DependencyEdge::new(head, i, labels[rng.random_range(0..labels.len())].clone())
        })
        .collect();
    let graph = DependencyGraph::new(n, edges);
    let relations = build_relation_matrix(&graph, &vocab, n + 2)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let gold_label = rng.random_range(0..config.n_sentence_labels);
    let gold_tags: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.n_tags)).collect();

    let input = EncoderInput::new(&tokens, &pos, &relations);
    let params = model.store().tensors().to_vec();
    let n_parameters = params.iter().map(|t| t.numel()).sum();
    let max_relative_error = finite_diff_check(
        |g, ids| {
            let bound = BoundParams::from_ids(ids.to_vec());
            let out = model
                .encode(g, &bound, &input, None)
                .map_err(to_tensor_error)?;
            heads::joint_loss(
                g,
                out.hidden,
                gold_label,
                &gold_tags,
                &bound,
                model.head_params(),
                config.reduction,
            )
            .map_err(to_tensor_error)
        },
        &params,
        config.step,
    )?;
    Ok(GradcheckReport {
        max_relative_error,
        n_parameters,
    })
}
