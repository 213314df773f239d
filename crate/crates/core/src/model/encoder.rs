//! Graph-aware Transformer encoder.
//!
//! Input embeddings are the sum of token, absolute position and (optionally)
//! part-of-speech embeddings over `CLS w₁ … w_N SEP`. Each layer runs
//! multi-head self-attention whose scores and values are biased by relation
//! embeddings looked up from the relation matrix, then a GELU feed-forward
//! block; both sublayers use residual connections followed by layer norm.
//!
//! For head `h` with query/key/value projections `q`, `k`, `v` and relation
//! tables `A` (scores) and `V` (values):
//!
//! ```text
//! α_ij = (q_i·k_j + q_i·A[r_ij] + A[r_ij]·k_j) / √(3d)
//! o_i  = Σ_j softmax(α_i)_j (v_j + V[r_ij])
//! ```
//!
//! `A` and `V` are per layer and shared by all heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{BoundParams, ParamId, ParamStore};
use super::{InitKind, ModelError};
use crate::relations::RelationMatrix;
use crate::tensor::{Graph, NodeId, Tensor};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
/// Number of reserved token ids.
pub const SPECIAL_TOKENS: usize = 4;
/// PoS id used for `CLS`, `SEP` and padding.
pub const NO_POS_ID: usize = 0;

/// Divisor applied to attention scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScaling {
    /// `√(3d)`, the three-term graph-aware form.
    ThreeTerm,
    /// `√d`, a standard Transformer.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Per-head size `d`.
    pub head_dim: usize,
    /// Hidden size `d_h`; must equal `n_heads · head_dim`.
    pub hidden: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub pos_tag_count: usize,
    /// `2|G| + 1`.
    pub relation_dim: usize,
    pub use_pos_embeddings: bool,
    pub use_graph: bool,
    pub scaling: ScoreScaling,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.hidden != self.n_heads * self.head_dim {
            return bad(format!(
                "hidden {} != n_heads {} × head_dim {}",
                self.hidden, self.n_heads, self.head_dim
            ));
        }
        if self.n_heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return bad("n_heads, head_dim and ffn_dim must be positive".into());
        }
        if self.relation_dim.is_multiple_of(2) {
            return bad(format!("relation_dim {} must be odd", self.relation_dim));
        }
        if self.max_len < 2 {
            return bad("max_len must leave room for CLS and SEP".into());
        }
        if self.vocab_size < SPECIAL_TOKENS || self.pos_tag_count == 0 {
            return bad("vocabularies must include the reserved ids".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn score_divisor(&self) -> f64 {
        let d = self.head_dim as f64;
        match self.scaling {
            ScoreScaling::ThreeTerm => (3.0 * d).sqrt(),
            ScoreScaling::Standard => d.sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub output_bias: ParamId,
    /// Relation embeddings entering the scores, `relation_dim × d`.
    pub relation_keys: ParamId,
    /// Relation embeddings entering the values, `relation_dim × d`.
    pub relation_values: ParamId,
    pub attn_norm_gamma: ParamId,
    pub attn_norm_beta: ParamId,
    pub ffn_in: ParamId,
    pub ffn_in_bias: ParamId,
    pub ffn_out: ParamId,
    pub ffn_out_bias: ParamId,
    pub ffn_norm_gamma: ParamId,
    pub ffn_norm_beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub token_embeddings: ParamId,
    pub position_embeddings: ParamId,
    pub pos_tag_embeddings: ParamId,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub(crate) fn register(
        config: &EncoderConfig,
        store: &mut ParamStore,
        init: &mut super::InitFn<'_>,
    ) -> Result<Self, ModelError> {
        let mut add =
            |name: String, shape: &[usize], kind: InitKind| -> Result<ParamId, ModelError> {
                let t = init(&name, shape, kind)?;
                Ok(store.add(name, t))
            };
        let (dh, d, r, f) = (
            config.hidden,
            config.head_dim,
            config.relation_dim,
            config.ffn_dim,
        );
        let token_embeddings = add(
            "embeddings.token".into(),
            &[config.vocab_size, dh],
            InitKind::Normal,
        )?;
        let position_embeddings = add(
            "embeddings.position".into(),
            &[config.max_len, dh],
            InitKind::Normal,
        )?;
        let pos_tag_embeddings = add(
            "embeddings.pos_tag".into(),
            &[config.pos_tag_count, dh],
            InitKind::Normal,
        )?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerParams {
                query: add(p("attention.query"), &[dh, dh], InitKind::Normal)?,
                key: add(p("attention.key"), &[dh, dh], InitKind::Normal)?,
                value: add(p("attention.value"), &[dh, dh], InitKind::Normal)?,
                output: add(p("attention.output"), &[dh, dh], InitKind::Normal)?,
                output_bias: add(p("attention.output_bias"), &[dh], InitKind::Zeros)?,
                relation_keys: add(p("attention.relation_keys"), &[r, d], InitKind::Normal)?,
                relation_values: add(p("attention.relation_values"), &[r, d], InitKind::Normal)?,
                attn_norm_gamma: add(p("attention.norm.gamma"), &[dh], InitKind::Ones)?,
                attn_norm_beta: add(p("attention.norm.beta"), &[dh], InitKind::Zeros)?,
                ffn_in: add(p("ffn.in"), &[dh, f], InitKind::Normal)?,
                ffn_in_bias: add(p("ffn.in_bias"), &[f], InitKind::Zeros)?,
                ffn_out: add(p("ffn.out"), &[f, dh], InitKind::Normal)?,
                ffn_out_bias: add(p("ffn.out_bias"), &[dh], InitKind::Zeros)?,
                ffn_norm_gamma: add(p("ffn.norm.gamma"), &[dh], InitKind::Ones)?,
                ffn_norm_beta: add(p("ffn.norm.beta"), &[dh], InitKind::Zeros)?,
            });
        }
        Ok(Self {
            token_embeddings,
            position_embeddings,
            pos_tag_embeddings,
            layers,
        })
    }
}

/// One sentence as model input: word ids, PoS ids and the relation matrix
/// over the tokenized sequence. `padding` extra positions are appended after
/// `SEP` and masked out of attention.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    pub tokens: &'a [usize],
    pub pos_tags: &'a [usize],
    pub relations: &'a RelationMatrix,
    pub padding: usize,
}

impl<'a> EncoderInput<'a> {
    pub fn new(tokens: &'a [usize], pos_tags: &'a [usize], relations: &'a RelationMatrix) -> Self {
        Self {
            tokens,
            pos_tags,
            relations,
            padding: 0,
        }
    }

    /// Tokenized length `N + 2 + padding`.
    pub fn seq_len(&self) -> usize {
        self.tokens.len() + 2 + self.padding
    }

    fn key_mask(&self) -> Option<Vec<bool>> {
        (self.padding > 0).then(|| {
            let real = self.tokens.len() + 2;
            (0..self.seq_len()).map(|t| t < real).collect()
        })
    }
}

/// Inverted dropout applied during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId, ModelError> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(x, m)?)
    }
}

/// Input embeddings `X` (`T × d_h`).
pub fn embed_inputs(
    g: &mut Graph,
    bound: &BoundParams,
    params: &EncoderParams,
    config: &EncoderConfig,
    input: &EncoderInput<'_>,
) -> Result<NodeId, ModelError> {
    let n = input.tokens.len();
    if input.pos_tags.len() != n {
        return Err(ModelError::LengthMismatch {
            what: "pos_tags",
            expected: n,
            got: input.pos_tags.len(),
        });
    }
    let t = input.seq_len();
    if t > config.max_len {
        return Err(ModelError::SequenceTooLong {
            len: t,
            max: config.max_len,
        });
    }
    let mut ids = Vec::with_capacity(t);
    ids.push(CLS_ID);
    ids.extend_from_slice(input.tokens);
    ids.push(SEP_ID);
    ids.resize(t, PAD_ID);
    if let Some(&bad) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(ModelError::OutOfVocabulary {
            what: "token",
            id: bad,
            limit: config.vocab_size,
        });
    }
    let positions: Vec<usize> = (0..t).collect();

    let tok = g.gather_rows(bound[params.token_embeddings], &ids)?;
    let pos = g.gather_rows(bound[params.position_embeddings], &positions)?;
    let mut x = g.add(tok, pos)?;
    if config.use_pos_embeddings {
        let mut tags = Vec::with_capacity(t);
        tags.push(NO_POS_ID);
        tags.extend_from_slice(input.pos_tags);
        tags.resize(t, NO_POS_ID);
        if let Some(&bad) = tags.iter().find(|&&id| id >= config.pos_tag_count) {
            return Err(ModelError::OutOfVocabulary {
                what: "pos tag",
                id: bad,
                limit: config.pos_tag_count,
            });
        }
        let p = g.gather_rows(bound[params.pos_tag_embeddings], &tags)?;
        x = g.add(x, p)?;
    }
    Ok(x)
}

fn check_relations(
    z: &Tensor,
    relations: &RelationMatrix,
    config: &EncoderConfig,
) -> Result<(), ModelError> {
    let t = z.matrix_dims().0;
    if relations.size() != t {
        return Err(ModelError::LengthMismatch {
            what: "relation matrix",
            expected: t,
            got: relations.size(),
        });
    }
    if config.use_graph && relations.max_entry() >= config.relation_dim {
        return Err(ModelError::RelationIndex {
            index: relations.max_entry(),
            limit: config.relation_dim,
        });
    }
    Ok(())
}

fn head_projection(
    g: &mut Graph,
    z: NodeId,
    weight: NodeId,
    head: usize,
    d: usize,
) -> Result<NodeId, ModelError> {
    let w = g.slice_cols(weight, head * d, d)?;
    Ok(g.matmul(z, w)?)
}

/// Raw attention scores `α` (`T × T`) of one head.
pub fn attention_scores(
    g: &mut Graph,
    z: NodeId,
    relations: &RelationMatrix,
    head: usize,
    layer: &LayerParams,
    bound: &BoundParams,
    config: &EncoderConfig,
) -> Result<NodeId, ModelError> {
    check_relations(g.value(z), relations, config)?;
    let d = config.head_dim;
    let q = head_projection(g, z, bound[layer.query], head, d)?;
    let k = head_projection(g, z, bound[layer.key], head, d)?;
    let kt = g.transpose(k)?;
    let mut scores = g.matmul(q, kt)?;
    if config.use_graph {
        let rel_t = g.transpose(bound[layer.relation_keys])?;
        let q_rel = g.matmul(q, rel_t)?;
        let query_term = g.relation_gather(q_rel, relations.entries(), false)?;
        let k_rel = g.matmul(k, rel_t)?;
        let key_term = g.relation_gather(k_rel, relations.entries(), true)?;
        scores = g.add_all(&[scores, query_term, key_term])?;
    }
    Ok(g.scale(scores, 1.0 / config.score_divisor()))
}

/// Output of one attention head.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// Row-stochastic attention weights (`T × T`).
    pub weights: NodeId,
    /// Per-position outputs (`T × d`).
    pub values: NodeId,
}

/// Softmax over `scores` (masked columns get weight 0) and the weighted sum
/// of value vectors plus relation value embeddings.
#[allow(clippy::too_many_arguments)]
pub fn attention_values(
    g: &mut Graph,
    scores: NodeId,
    key_mask: Option<&[bool]>,
    z: NodeId,
    relations: &RelationMatrix,
    head: usize,
    layer: &LayerParams,
    bound: &BoundParams,
    config: &EncoderConfig,
) -> Result<HeadOutput, ModelError> {
    check_relations(g.value(z), relations, config)?;
    let weights = g.masked_softmax(scores, key_mask)?;
    let v = head_projection(g, z, bound[layer.value], head, config.head_dim)?;
    let mut values = g.matmul(weights, v)?;
    if config.use_graph {
        let per_relation = g.relation_scatter(weights, relations.entries(), config.relation_dim)?;
        let rel = g.matmul(per_relation, bound[layer.relation_values])?;
        values = g.add(values, rel)?;
    }
    Ok(HeadOutput { weights, values })
}

#[allow(clippy::too_many_arguments)]
fn encoder_layer(
    g: &mut Graph,
    z: NodeId,
    input: &EncoderInput<'_>,
    key_mask: Option<&[bool]>,
    layer: &LayerParams,
    bound: &BoundParams,
    config: &EncoderConfig,
    dropout: &mut Option<&mut Dropout<'_>>,
    weights_out: &mut Vec<NodeId>,
) -> Result<NodeId, ModelError> {
    let mut heads = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let scores = attention_scores(g, z, input.relations, h, layer, bound, config)?;
        let out = attention_values(
            g,
            scores,
            key_mask,
            z,
            input.relations,
            h,
            layer,
            bound,
            config,
        )?;
        weights_out.push(out.weights);
        heads.push(out.values);
    }
    let concat = g.concat_cols(&heads)?;
    let projected = g.matmul(concat, bound[layer.output])?;
    let mut attn = g.add_bias(projected, bound[layer.output_bias])?;
    if let Some(d) = dropout.as_deref_mut() {
        attn = d.apply(g, attn)?;
    }
    let residual = g.add(z, attn)?;
    let x = g.layer_norm(
        residual,
        bound[layer.attn_norm_gamma],
        bound[layer.attn_norm_beta],
        config.layer_norm_eps,
    )?;

    let hidden = g.matmul(x, bound[layer.ffn_in])?;
    let hidden = g.add_bias(hidden, bound[layer.ffn_in_bias])?;
    let hidden = g.gelu(hidden);
    let out = g.matmul(hidden, bound[layer.ffn_out])?;
    let mut out = g.add_bias(out, bound[layer.ffn_out_bias])?;
    if let Some(d) = dropout.as_deref_mut() {
        out = d.apply(g, out)?;
    }
    let residual = g.add(x, out)?;
    Ok(g.layer_norm(
        residual,
        bound[layer.ffn_norm_gamma],
        bound[layer.ffn_norm_beta],
        config.layer_norm_eps,
    )?)
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Contextual states `H` (`T × d_h`).
    pub hidden: NodeId,
    /// Attention weights of every head, layer-major.
    pub attention: Vec<NodeId>,
}

/// Full encoder pass `H = Enc(W, P, G)`.
pub fn encoder_forward(
    g: &mut Graph,
    bound: &BoundParams,
    params: &EncoderParams,
    config: &EncoderConfig,
    input: &EncoderInput<'_>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<EncoderOutput, ModelError> {
    let mut z = embed_inputs(g, bound, params, config, input)?;
    let key_mask = input.key_mask();
    let mut attention = Vec::new();
    for layer in &params.layers {
        z = encoder_layer(
            g,
            z,
            input,
            key_mask.as_deref(),
            layer,
            bound,
            config,
            &mut dropout,
            &mut attention,
        )?;
    }
    Ok(EncoderOutput {
        hidden: z,
        attention,
    })
}
