//! Dependency graphs, dependency-label vocabularies and the relation matrix
//! consumed by graph-aware attention.
//!
//! A relation matrix is indexed by tokenized positions: position 0 is `CLS`,
//! positions `1..=N` are the words and position `N + 1` is `SEP`. An edge
//! `head → dependent` with label index `k` writes `k` at `(head, dependent)`
//! and `k + |G|` at `(dependent, head)`. The root pseudo-head is `CLS`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RelationError {
    #[error("cannot build a label vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("unknown dependency label {0:?}")]
    UnknownLabel(String),
    #[error("token index {index} out of range for {limit} tokens")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("relation matrix size {got} does not equal n_tokens + 2 = {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One labelled arc. `head == None` is the root pseudo-head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub head: Option<usize>,
    pub dependent: usize,
    pub label: String,
}

impl DependencyEdge {
    pub fn new(head: Option<usize>, dependent: usize, label: impl Into<String>) -> Self {
        Self {
            head,
            dependent,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub n_tokens: usize,
    pub edges: Vec<DependencyEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphDiagnostic {
    MultipleHeads(usize),
    MissingHead(usize),
    OutOfRange { index: usize },
    SelfLoop(usize),
    MissingRoot,
    MultipleRoots(usize),
    Cycle(usize),
}

impl fmt::Display for GraphDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MultipleHeads(i) => write!(f, "multiple heads at index {i}"),
            Self::MissingHead(i) => write!(f, "no head at index {i}"),
            Self::OutOfRange { index } => write!(f, "index {index} out of range"),
            Self::SelfLoop(i) => write!(f, "self loop at index {i}"),
            Self::MissingRoot => write!(f, "missing root"),
            Self::MultipleRoots(n) => write!(f, "{n} root edges"),
            Self::Cycle(i) => write!(f, "cycle through index {i}"),
        }
    }
}

impl DependencyGraph {
    pub fn new(n_tokens: usize, edges: Vec<DependencyEdge>) -> Self {
        Self { n_tokens, edges }
    }

    /// Head of `token` from the first edge that attaches it.
    pub fn head_of(&self, token: usize) -> Option<Option<usize>> {
        self.edges
            .iter()
            .find(|e| e.dependent == token)
            .map(|e| e.head)
    }

    /// Label of the arc between `a` and `b` in either direction.
    pub fn label_between(&self, a: usize, b: usize) -> Option<&str> {
        self.edges
            .iter()
            .find(|e| {
                (e.head == Some(a) && e.dependent == b) || (e.head == Some(b) && e.dependent == a)
            })
            .map(|e| e.label.as_str())
    }

    /// Checks the single-head tree contract. Returns every problem found.
    pub fn validate(&self) -> Result<(), Vec<GraphDiagnostic>> {
        let n = self.n_tokens;
        let mut problems = Vec::new();
        let mut incoming = vec![0usize; n];
        let mut heads: Vec<Option<Option<usize>>> = vec![None; n];
        let mut roots = 0;
        for e in &self.edges {
            if e.dependent >= n {
                problems.push(GraphDiagnostic::OutOfRange { index: e.dependent });
                continue;
            }
            match e.head {
                Some(h) if h >= n => {
                    problems.push(GraphDiagnostic::OutOfRange { index: h });
                    continue;
                }
                Some(h) if h == e.dependent => problems.push(GraphDiagnostic::SelfLoop(h)),
                None => roots += 1,
                _ => {}
            }
            incoming[e.dependent] += 1;
            heads[e.dependent].get_or_insert(e.head);
        }
        for (i, &count) in incoming.iter().enumerate() {
            match count {
                0 => problems.push(GraphDiagnostic::MissingHead(i)),
                1 => {}
                _ => problems.push(GraphDiagnostic::MultipleHeads(i)),
            }
        }
        match roots {
            0 if n > 0 => problems.push(GraphDiagnostic::MissingRoot),
            0 | 1 => {}
            r => problems.push(GraphDiagnostic::MultipleRoots(r)),
        }
        for start in 0..n {
            let mut cur = start;
            for _ in 0..=n {
                match heads[cur] {
                    Some(Some(h)) if h < n && h != cur => cur = h,
                    _ => break,
                }
                if cur == start {
                    problems.push(GraphDiagnostic::Cycle(start));
                    break;
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

/// Sorted dependency labels, indexed from 1. Index 0 means "no relation".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelVocabulary {
    fn from(labels: Vec<String>) -> Self {
        Self::from_labels(labels)
    }
}

impl From<LabelVocabulary> for Vec<String> {
    fn from(v: LabelVocabulary) -> Self {
        v.labels
    }
}

impl LabelVocabulary {
    /// Deduplicates and sorts `labels` lexicographically.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = set.into_iter().collect();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i + 1))
            .collect();
        Self { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// 1-based index of `label`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Width of the relation embedding tables: `2|G| + 1`.
    pub fn relation_onehot_dim(&self) -> usize {
        2 * self.labels.len() + 1
    }
}

pub fn build_label_vocabulary<'a, I>(corpus: I) -> Result<LabelVocabulary, RelationError>
where
    I: IntoIterator<Item = &'a DependencyGraph>,
{
    let mut seen_any = false;
    let mut labels = BTreeSet::new();
    for g in corpus {
        seen_any = true;
        labels.extend(g.edges.iter().map(|e| e.label.clone()));
    }
    if !seen_any {
        return Err(RelationError::EmptyCorpus);
    }
    Ok(LabelVocabulary::from_labels(labels))
}

pub fn relation_onehot_dim(vocab: &LabelVocabulary) -> usize {
    vocab.relation_onehot_dim()
}

/// `T×T` matrix of relation indices in `0..=2|G|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationMatrix {
    size: usize,
    entries: Vec<usize>,
}

impl RelationMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            entries: vec![0; size * size],
        }
    }

    /// Row-major construction; `entries.len()` must be `size²`.
    pub fn from_entries(size: usize, entries: Vec<usize>) -> Result<Self, RelationError> {
        if entries.len() != size * size {
            return Err(RelationError::LengthMismatch {
                expected: size * size,
                got: entries.len(),
            });
        }
        Ok(Self { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.entries[i * self.size + j]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn max_entry(&self) -> usize {
        self.entries.iter().copied().max().unwrap_or(0)
    }

    pub fn nonzero_count(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }

    /// Extends the matrix with zero rows and columns up to `size`.
    pub fn padded(&self, size: usize) -> Self {
        assert!(size >= self.size, "cannot pad {} down to {size}", self.size);
        let mut out = Self::zeros(size);
        for i in 0..self.size {
            out.entries[i * size..i * size + self.size]
                .copy_from_slice(&self.entries[i * self.size..(i + 1) * self.size]);
        }
        out
    }

    fn set(&mut self, i: usize, j: usize, v: usize) {
        self.entries[i * self.size + j] = v;
    }
}

pub fn build_relation_matrix(
    graph: &DependencyGraph,
    vocab: &LabelVocabulary,
    size: usize,
) -> Result<RelationMatrix, RelationError> {
    fill_relations(graph, vocab, size, |label| {
        vocab
            .index_of(label)
            .ok_or_else(|| RelationError::UnknownLabel(label.to_string()))
    })
}

/// Like [`build_relation_matrix`], but arcs whose label is outside the
/// vocabulary are left as "no relation". Returns the number of skipped arcs.
pub fn build_relation_matrix_lenient(
    graph: &DependencyGraph,
    vocab: &LabelVocabulary,
    size: usize,
) -> Result<(RelationMatrix, usize), RelationError> {
    let mut skipped = 0;
    let matrix = fill_relations(graph, vocab, size, |label| {
        Ok(vocab.index_of(label).unwrap_or_else(|| {
            skipped += 1;
            0
        }))
    })?;
    if skipped > 0 {
        log::warn!("{skipped} arc(s) with labels unseen in training mapped to no-relation");
    }
    Ok((matrix, skipped))
}

fn fill_relations(
    graph: &DependencyGraph,
    vocab: &LabelVocabulary,
    size: usize,
    mut lookup: impl FnMut(&str) -> Result<usize, RelationError>,
) -> Result<RelationMatrix, RelationError> {
    let n = graph.n_tokens;
    if size != n + 2 {
        return Err(RelationError::LengthMismatch {
            expected: n + 2,
            got: size,
        });
    }
    let n_labels = vocab.len();
    let mut r = RelationMatrix::zeros(size);
    for e in &graph.edges {
        let check = |i: usize| {
            if i < n {
                Ok(i + 1)
            } else {
                Err(RelationError::IndexOutOfRange { index: i, limit: n })
            }
        };
        let dep = check(e.dependent)?;
        let head = match e.head {
            Some(h) => check(h)?,
            None => 0,
        };
        let k = lookup(&e.label)?;
        if k == 0 {
            continue;
        }
        r.set(head, dep, k);
        r.set(dep, head, k + n_labels);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(Option<usize>, usize, &str)]) -> DependencyGraph {
        DependencyGraph::new(
            n,
            edges
                .iter()
                .map(|&(h, d, l)| DependencyEdge::new(h, d, l))
                .collect(),
        )
    }

    #[test]
    fn vocabulary_is_sorted_and_one_based() {
        let g = graph(
            2,
            &[(None, 0, "obj"), (Some(0), 1, "nsubj"), (Some(0), 1, "obj")],
        );
        let v = build_label_vocabulary([&g]).unwrap();
        assert_eq!(v.labels(), &["nsubj".to_string(), "obj".to_string()]);
        assert_eq!(v.index_of("nsubj"), Some(1));
        assert_eq!(v.index_of("obj"), Some(2));
        assert_eq!(v.len(), 2);

        let root_only = graph(1, &[(None, 0, "root")]);
        let v = build_label_vocabulary([&root_only]).unwrap();
        assert_eq!(v.index_of("root"), Some(1));
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let none: Vec<DependencyGraph> = Vec::new();
        assert_eq!(
            build_label_vocabulary(&none),
            Err(RelationError::EmptyCorpus)
        );
    }

    #[test]
    fn onehot_dim() {
        assert_eq!(
            LabelVocabulary::from_labels(["a", "b"]).relation_onehot_dim(),
            5
        );
        assert_eq!(relation_onehot_dim(&LabelVocabulary::from_labels(["a"])), 3);
        let many = LabelVocabulary::from_labels((0..37).map(|i| format!("l{i}")));
        assert_eq!(many.relation_onehot_dim(), 75);
    }

    #[test]
    fn empty_graph_gives_zero_matrix() {
        let g = graph(1, &[]);
        let r = build_relation_matrix(&g, &LabelVocabulary::from_labels(["x"]), 3).unwrap();
        assert_eq!(r.entries(), &[0; 9]);
    }

    #[test]
    fn single_edge_forward_and_backward() {
        let vocab = LabelVocabulary::from_labels(["nsubj", "obj"]);
        let g = graph(2, &[(Some(0), 1, "obj")]);
        let r = build_relation_matrix(&g, &vocab, 4).unwrap();
        assert_eq!(r.get(1, 2), 2);
        assert_eq!(r.get(2, 1), 4);
        assert_eq!(r.nonzero_count(), 2);
    }

    #[test]
    fn root_maps_to_cls_and_sep_is_empty() {
        let vocab = LabelVocabulary::from_labels(["nsubj", "obj", "root"]);
        let g = graph(
            3,
            &[
                (None, 1, "root"),
                (Some(1), 0, "nsubj"),
                (Some(1), 2, "obj"),
            ],
        );
        let r = build_relation_matrix(&g, &vocab, 5).unwrap();
        assert_eq!(r.get(0, 2), 3);
        assert_eq!(r.get(2, 0), 6);
        assert_eq!(r.get(2, 1), 1);
        assert_eq!(r.get(1, 2), 4);
        assert_eq!(r.get(2, 3), 2);
        assert_eq!(r.get(3, 2), 5);
        for k in 0..5 {
            assert_eq!(r.get(4, k), 0);
            assert_eq!(r.get(k, 4), 0);
        }
    }

    #[test]
    fn unknown_label_and_bad_sizes() {
        let vocab = LabelVocabulary::from_labels(["obj"]);
        let g = graph(2, &[(Some(0), 1, "amod")]);
        assert_eq!(
            build_relation_matrix(&g, &vocab, 4),
            Err(RelationError::UnknownLabel("amod".into()))
        );
        let (r, skipped) = build_relation_matrix_lenient(&g, &vocab, 4).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(r.nonzero_count(), 0);

        let ok = graph(2, &[(Some(0), 1, "obj")]);
        assert!(matches!(
            build_relation_matrix(&ok, &vocab, 3),
            Err(RelationError::LengthMismatch { .. })
        ));
        let oob = graph(2, &[(Some(5), 1, "obj")]);
        assert!(matches!(
            build_relation_matrix(&oob, &vocab, 4),
            Err(RelationError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn padding_keeps_entries() {
        let vocab = LabelVocabulary::from_labels(["obj"]);
        let g = graph(2, &[(Some(0), 1, "obj")]);
        let r = build_relation_matrix(&g, &vocab, 4).unwrap();
        let p = r.padded(6);
        assert_eq!(p.get(1, 2), 1);
        assert_eq!(p.get(2, 1), 2);
        assert_eq!(p.nonzero_count(), 2);
    }

    #[test]
    fn validation_diagnostics() {
        let tree = graph(2, &[(None, 1, "root"), (Some(1), 0, "nsubj")]);
        assert!(tree.validate().is_ok());

        let two_heads = graph(
            2,
            &[
                (None, 1, "root"),
                (Some(1), 0, "nsubj"),
                (Some(1), 0, "obj"),
            ],
        );
        let errs = two_heads.validate().unwrap_err();
        assert!(errs
            .iter()
            .any(|d| d.to_string() == "multiple heads at index 0"));

        let no_root = graph(2, &[(Some(0), 1, "obj"), (Some(1), 0, "nsubj")]);
        let errs = no_root.validate().unwrap_err();
        assert!(errs.iter().any(|d| d.to_string() == "missing root"));
        assert!(errs.iter().any(|d| matches!(d, GraphDiagnostic::Cycle(_))));

        let oob = graph(1, &[(None, 0, "root"), (Some(3), 0, "x")]);
        assert!(oob
            .validate()
            .unwrap_err()
            .contains(&GraphDiagnostic::OutOfRange { index: 3 }));

        let two_roots = graph(2, &[(None, 0, "root"), (None, 1, "root")]);
        assert!(two_roots
            .validate()
            .unwrap_err()
            .contains(&GraphDiagnostic::MultipleRoots(2)));
    }
}
