//! Joint decoder: a sentence classifier over the `CLS` state and a
//! per-word tagger, trained with the sum of both cross-entropies.

use serde::{Deserialize, Serialize};

use super::params::{BoundParams, ParamId, ParamStore};
use super::{InitKind, ModelError};
use crate::tensor::{Graph, NodeId};

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub sentence_weight: ParamId,
    pub sentence_bias: ParamId,
    pub tag_weight: ParamId,
    pub tag_bias: ParamId,
}

impl HeadParams {
    pub(crate) fn register(
        hidden: usize,
        n_sentence_labels: usize,
        n_tags: usize,
        store: &mut ParamStore,
        init: &mut super::InitFn<'_>,
    ) -> Result<Self, ModelError> {
        let mut add = |name: &str, shape: &[usize], kind| -> Result<ParamId, ModelError> {
            let t = init(name, shape, kind)?;
            Ok(store.add(name, t))
        };
        Ok(Self {
            sentence_weight: add(
                "head.sentence.weight",
                &[hidden, n_sentence_labels],
                InitKind::Normal,
            )?,
            sentence_bias: add("head.sentence.bias", &[n_sentence_labels], InitKind::Zeros)?,
            tag_weight: add("head.tag.weight", &[hidden, n_tags], InitKind::Normal)?,
            tag_bias: add("head.tag.bias", &[n_tags], InitKind::Zeros)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenReduction {
    /// Sum over words: the negative log of the joint likelihood.
    #[default]
    Sum,
    Mean,
}

/// Sentence logits `h₁ W + b` (`1 × C_sent`).
pub fn sentence_logits(
    g: &mut Graph,
    hidden: NodeId,
    bound: &BoundParams,
    heads: &HeadParams,
) -> Result<NodeId, ModelError> {
    let cls = g.slice_rows(hidden, 0, 1)?;
    let logits = g.matmul(cls, bound[heads.sentence_weight])?;
    Ok(g.add_bias(logits, bound[heads.sentence_bias])?)
}

pub fn classify_sentence(
    g: &mut Graph,
    hidden: NodeId,
    bound: &BoundParams,
    heads: &HeadParams,
) -> Result<NodeId, ModelError> {
    let logits = sentence_logits(g, hidden, bound, heads)?;
    Ok(g.softmax_lastdim(logits)?)
}

/// Tag logits for the `n_words` word positions (`N × C_tag`); `CLS`, `SEP`
/// and padding rows are excluded.
pub fn tag_logits(
    g: &mut Graph,
    hidden: NodeId,
    n_words: usize,
    bound: &BoundParams,
    heads: &HeadParams,
) -> Result<NodeId, ModelError> {
    let words = g.slice_rows(hidden, 1, n_words)?;
    let logits = g.matmul(words, bound[heads.tag_weight])?;
    Ok(g.add_bias(logits, bound[heads.tag_bias])?)
}

pub fn tag_tokens(
    g: &mut Graph,
    hidden: NodeId,
    n_words: usize,
    bound: &BoundParams,
    heads: &HeadParams,
) -> Result<NodeId, ModelError> {
    let logits = tag_logits(g, hidden, n_words, bound, heads)?;
    Ok(g.softmax_lastdim(logits)?)
}

/// `CE(sentence) + reduce_n CE(tag_n)`.
pub fn joint_loss(
    g: &mut Graph,
    hidden: NodeId,
    gold_sentence_label: usize,
    gold_tags: &[usize],
    bound: &BoundParams,
    heads: &HeadParams,
    reduction: TokenReduction,
) -> Result<NodeId, ModelError> {
    let sent = sentence_logits(g, hidden, bound, heads)?;
    let sent_loss = g
        .cross_entropy(sent, &[gold_sentence_label])
        .map_err(|e| ModelError::label(e, "sentence label"))?;
    if gold_tags.is_empty() {
        return Ok(sent_loss);
    }
    let tags = tag_logits(g, hidden, gold_tags.len(), bound, heads)?;
    let mut tag_loss = g
        .cross_entropy(tags, gold_tags)
        .map_err(|e| ModelError::label(e, "tag"))?;
    if reduction == TokenReduction::Mean {
        tag_loss = g.scale(tag_loss, 1.0 / gold_tags.len() as f64);
    }
    Ok(g.add(sent_loss, tag_loss)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPrediction {
    pub sentence_label: usize,
    pub tag_sequence: Vec<usize>,
    pub sentence_probs: Vec<f64>,
    pub token_probs: Vec<Vec<f64>>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding of both heads.
pub fn predict(
    g: &mut Graph,
    hidden: NodeId,
    n_words: usize,
    bound: &BoundParams,
    heads: &HeadParams,
) -> Result<JointPrediction, ModelError> {
    let sent = classify_sentence(g, hidden, bound, heads)?;
    let tags = tag_tokens(g, hidden, n_words, bound, heads)?;
    let sentence_probs = g.value(sent).data().to_vec();
    let tag_values = g.value(tags);
    let token_probs: Vec<Vec<f64>> = (0..n_words).map(|i| tag_values.row(i).to_vec()).collect();
    Ok(JointPrediction {
        sentence_label: argmax(&sentence_probs),
        tag_sequence: token_probs.iter().map(|p| argmax(p)).collect(),
        sentence_probs,
        token_probs,
    })
}
