//! Independent re-implementations used as oracles by the integration tests
//! and the acceptance harness.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use g2c_core::bio::{Role, Span};
use g2c_core::model::encoder::{CLS_ID, NO_POS_ID, SEP_ID, SPECIAL_TOKENS};
use g2c_core::model::{EncoderConfig, G2CModel, ModelConfig, Variant};
use g2c_core::relations::{DependencyEdge, DependencyGraph};
use g2c_core::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Matrix = Vec<Vec<f64>>;

// ---------------------------------------------------------------- models

pub fn tiny_config(
    variant: Variant,
    n_layers: usize,
    n_heads: usize,
    head_dim: usize,
    n_dep_labels: usize,
) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_layers,
            n_heads,
            head_dim,
            hidden: n_heads * head_dim,
            ffn_dim: 2 * n_heads * head_dim,
            max_len: 16,
            vocab_size: 20,
            pos_tag_count: 6,
            relation_dim: 2 * n_dep_labels + 1,
            use_pos_embeddings: variant.use_pos_embeddings(),
            use_graph: variant.use_graph(),
            scaling: variant.scaling(),
            dropout: 0.0,
            layer_norm_eps: 1e-12,
        },
        n_sentence_labels: 3,
        n_tags: 9,
    }
}

/// Adds Gaussian noise to every parameter so biases and norm gains matter.
pub fn perturb(model: &mut G2CModel, std: f64, rng: &mut ChaCha8Rng) {
    let noise = Normal::new(0.0, std).unwrap();
    for t in model.store_mut().tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x += noise.sample(rng));
    }
}

pub fn zero_param(model: &mut G2CModel, suffix: &str) {
    let ids: Vec<_> = model
        .store()
        .names()
        .iter()
        .filter(|n| n.ends_with(suffix))
        .map(|n| model.store().find(n).unwrap())
        .collect();
    assert!(!ids.is_empty(), "no parameter ends with {suffix:?}");
    for id in ids {
        model
            .store_mut()
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
}

fn to_matrix(t: &Tensor) -> Matrix {
    let (m, _) = t.matrix_dims();
    (0..m).map(|i| t.row(i).to_vec()).collect()
}

fn param(model: &G2CModel, name: &str) -> Matrix {
    let t = model.store().get(
        model
            .store()
            .find(name)
            .unwrap_or_else(|| panic!("no param {name}")),
    );
    if t.shape().len() == 1 {
        vec![t.data().to_vec()]
    } else {
        to_matrix(t)
    }
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn add_row(a: &Matrix, bias: &[f64]) -> Matrix {
    a.iter()
        .map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect())
        .collect()
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn cols(a: &Matrix, start: usize, width: usize) -> Matrix {
    a.iter().map(|r| r[start..start + width].to_vec()).collect()
}

fn layer_norm(a: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Matrix {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, x)| gamma[j] * (x - mean) / (var + eps).sqrt() + beta[j])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// A standard post-LN Transformer encoder reading the model's weights by
/// name, with attention scores divided by `divisor`. No relation terms.
pub fn reference_encoder(
    model: &G2CModel,
    tokens: &[usize],
    pos: &[usize],
    divisor: f64,
) -> Matrix {
    let cfg = &model.config().encoder;
    let mut ids = vec![CLS_ID];
    ids.extend_from_slice(tokens);
    ids.push(SEP_ID);
    let mut tags = vec![NO_POS_ID];
    tags.extend_from_slice(pos);
    tags.push(NO_POS_ID);
    let tok = param(model, "embeddings.token");
    let posn = param(model, "embeddings.position");
    let ptag = param(model, "embeddings.pos_tag");
    let mut z: Matrix = (0..ids.len())
        .map(|t| {
            (0..cfg.hidden)
                .map(|j| {
                    let mut x = tok[ids[t]][j] + posn[t][j];
                    if cfg.use_pos_embeddings {
                        x += ptag[tags[t]][j];
                    }
                    x
                })
                .collect()
        })
        .collect();
    for l in 0..cfg.n_layers {
        let p = |s: &str| param(model, &format!("layer{l}.{s}"));
        let (wq, wk, wv) = (
            p("attention.query"),
            p("attention.key"),
            p("attention.value"),
        );
        let d = cfg.head_dim;
        let mut concat: Matrix = vec![Vec::new(); z.len()];
        for h in 0..cfg.n_heads {
            let q = matmul(&z, &cols(&wq, h * d, d));
            let k = matmul(&z, &cols(&wk, h * d, d));
            let v = matmul(&z, &cols(&wv, h * d, d));
            for i in 0..z.len() {
                let scores: Vec<f64> = (0..z.len())
                    .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / divisor)
                    .collect();
                let w = softmax(&scores);
                concat[i].extend(
                    (0..d).map(|c| w.iter().zip(&v).map(|(wj, vj)| wj * vj[c]).sum::<f64>()),
                );
            }
        }
        let attn = add_row(
            &matmul(&concat, &p("attention.output")),
            &p("attention.output_bias")[0],
        );
        let x = layer_norm(
            &add(&z, &attn),
            &p("attention.norm.gamma")[0],
            &p("attention.norm.beta")[0],
            cfg.layer_norm_eps,
        );
        let hidden: Matrix = add_row(&matmul(&x, &p("ffn.in")), &p("ffn.in_bias")[0])
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let out = add_row(&matmul(&hidden, &p("ffn.out")), &p("ffn.out_bias")[0]);
        z = layer_norm(
            &add(&x, &out),
            &p("ffn.norm.gamma")[0],
            &p("ffn.norm.beta")[0],
            cfg.layer_norm_eps,
        );
    }
    z
}

pub fn random_sentence(
    n: usize,
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let e = &config.encoder;
    let tokens = (0..n)
        .map(|_| rng.random_range(SPECIAL_TOKENS..e.vocab_size))
        .collect();
    let pos = (0..n)
        .map(|_| rng.random_range(1..e.pos_tag_count))
        .collect();
    (tokens, pos)
}

// ---------------------------------------------------------------- graphs

/// Uniform random single-headed tree: nodes attach in random order to an
/// already attached node.
pub fn random_tree(n: usize, labels: &[String], rng: &mut ChaCha8Rng) -> DependencyGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::with_capacity(n);
    for (k, &dep) in order.iter().enumerate() {
        let head = (k > 0).then(|| order[rng.random_range(0..k)]);
        let label = labels[rng.random_range(0..labels.len())].clone();
        edges.push(DependencyEdge::new(head, dep, label));
    }
    DependencyGraph::new(n, edges)
}

/// Relation matrix by checking every ordered position pair against the
/// edge list. `label_index` must map labels to `1..=|G|`.
pub fn brute_force_relations(
    graph: &DependencyGraph,
    label_index: &BTreeMap<String, usize>,
    t: usize,
) -> Vec<usize> {
    let g = label_index.len();
    let position = |token: Option<usize>| token.map_or(0, |i| i + 1);
    let mut out = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in 0..t {
            let mut value = 0;
            for e in &graph.edges {
                let (h, d) = (position(e.head), position(Some(e.dependent)));
                if (h, d) == (i, j) {
                    value = label_index[&e.label];
                } else if (d, h) == (i, j) {
                    value = label_index[&e.label] + g;
                }
            }
            out.push(value);
        }
    }
    out
}

// ----------------------------------------------------------------- spans

/// Random disjoint spans over `len` words.
pub fn random_spans(len: usize, lfs: &[&str], rng: &mut ChaCha8Rng) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < len {
        if rng.random_bool(0.4) {
            let end = (i + rng.random_range(0..3)).min(len - 1);
            let role = if rng.random_bool(0.5) {
                Role::Base
            } else {
                Role::Collocate
            };
            spans.push(Span::new(i, end, lfs[rng.random_range(0..lfs.len())], role));
            i = end + 1;
        } else {
            i += 1;
        }
    }
    spans
}

/// Per-label `(correct, gold, pred)` by exhaustive pairwise comparison.
pub fn brute_force_counts(
    gold: &[Vec<Span>],
    pred: &[Vec<Span>],
) -> BTreeMap<String, (usize, usize, usize)> {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let g: BTreeSet<_> = g.iter().cloned().collect();
        let p: BTreeSet<_> = p.iter().cloned().collect();
        for s in &g {
            counts.entry(format!("{}_{}", s.lf, s.role)).or_default().1 += 1;
        }
        for s in &p {
            let c = counts.entry(format!("{}_{}", s.lf, s.role)).or_default();
            c.2 += 1;
            if g.iter()
                .any(|x| x.start == s.start && x.end == s.end && x.lf == s.lf && x.role == s.role)
            {
                c.0 += 1;
            }
        }
    }
    counts
}

pub fn f1(correct: usize, gold: usize, pred: usize) -> f64 {
    if correct == 0 {
        return 0.0;
    }
    let (p, r) = (correct as f64 / pred as f64, correct as f64 / gold as f64);
    2.0 * p * r / (p + r)
}

// ----------------------------------------------------------------- ranks

/// Mid-rank of each value by counting smaller and equal values.
pub fn count_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Spearman ρ as the Pearson correlation of mid-ranks, accumulated directly.
pub fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (count_ranks(x), count_ranks(y));
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (rx.iter().sum(), ry.iter().sum());
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: f64 = rx.iter().map(|a| a * a).sum();
    let syy: f64 = ry.iter().map(|b| b * b).sum();
    let cov = sxy - sx * sy / n;
    let vx = sxx - sx * sx / n;
    let vy = syy - sy * sy / n;
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

// --------------------------------------------------------------- corpora

/// One CoNLL-U sentence: `(form, lemma, upos, head, deprel)` per word,
/// heads 1-based with 0 for the root.
pub fn conllu_sentence(words: &[(&str, &str, &str, usize, &str)]) -> String {
    let mut s = String::new();
    for (i, (form, lemma, upos, head, rel)) in words.iter().enumerate() {
        s.push_str(&format!(
            "{}\t{form}\t{lemma}\t{upos}\t_\t_\t{head}\t{rel}\t_\t_\n",
            i + 1
        ));
    }
    s.push('\n');
    s
}

/// Fixture corpus and collocation list.
///
/// * Magn: ten instances `heavyK rainK`, each in its own sentence.
/// * Oper1: four instances `takeK walkK`, each in its own sentence.
/// * Every Magn instance also co-occurs with an Oper1 instance in one
///   sentence, so some of those sentences straddle splits.
/// * One matching sentence has two roots and one has no collocation.
pub fn fixture_corpus() -> (Vec<(String, String)>, String) {
    let mut list = String::from("# LF\tbase\tUPOS\tcollocate\tUPOS\n");
    let mut a = String::from("# newdoc\n");
    let mut b = String::new();
    for k in 0..10 {
        list.push_str(&format!("Magn\train{k}\tNOUN\theavy{k}\tADJ\n"));
        let (h, r) = (format!("heavy{k}"), format!("rain{k}"));
        let (hf, rf) = (format!("Heavy{k}"), format!("rain{k}"));
        a.push_str(&format!("# sent_id = m{k}\n"));
        a.push_str(&conllu_sentence(&[
            (&hf, &h, "ADJ", 2, "amod"),
            (&rf, &r, "NOUN", 3, "nsubj"),
            ("fell", "fall", "VERB", 0, "root"),
            (".", ".", "PUNCT", 3, "punct"),
        ]));
    }
    for k in 0..4 {
        list.push_str(&format!("Oper1\twalk{k}\tNOUN\ttake{k}\tVERB\n"));
        let (t, w) = (format!("take{k}"), format!("walk{k}"));
        b.push_str(&conllu_sentence(&[
            ("we", "we", "PRON", 2, "nsubj"),
            (&t, &t, "VERB", 0, "root"),
            ("a", "a", "DET", 4, "det"),
            (&w, &w, "NOUN", 2, "obj"),
        ]));
    }
    for k in 0..10 {
        let (h, r) = (format!("heavy{k}"), format!("rain{k}"));
        let (t, w) = (format!("take{}", k % 4), format!("walk{}", k % 4));
        b.push_str(&conllu_sentence(&[
            (&t, &t, "VERB", 0, "root"),
            (&w, &w, "NOUN", 1, "obj"),
            ("in", "in", "ADP", 5, "case"),
            (&h, &h, "ADJ", 5, "amod"),
            (&r, &r, "NOUN", 1, "obl"),
        ]));
    }
    b.push_str(&conllu_sentence(&[
        ("nothing", "nothing", "PRON", 2, "nsubj"),
        ("here", "here", "ADV", 0, "root"),
    ]));
    // a matching sentence whose graph has two roots
    b.push_str(&conllu_sentence(&[
        ("heavy0", "heavy0", "ADJ", 2, "amod"),
        ("rain0", "rain0", "NOUN", 0, "root"),
        ("again", "again", "ADV", 0, "root"),
    ]));
    (
        vec![("a.conllu".into(), a), ("sub/b.conllu".into(), b)],
        list,
    )
}
