//! Evaluation: sentence accuracy, exact-match span P/R/F1, span confusion
//! matrices and rank correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bio::Span;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{what}: {gold} gold entries vs {pred} predicted")]
    LengthMismatch {
        what: &'static str,
        gold: usize,
        pred: usize,
    },
    #[error("{0} needs at least {1} entries")]
    TooFew(&'static str, usize),
}

/// Column and row marker for gold spans with no boundary-matching prediction.
pub const MISSED: &str = "MISSED";
/// Row marker for predictions with no boundary-matching gold span.
pub const SPURIOUS: &str = "SPURIOUS";

fn check_len(what: &'static str, gold: usize, pred: usize) -> Result<(), MetricsError> {
    if gold != pred {
        return Err(MetricsError::LengthMismatch { what, gold, pred });
    }
    Ok(())
}

pub fn sentence_accuracy<T: PartialEq>(gold: &[T], pred: &[T]) -> Result<f64, MetricsError> {
    check_len("sentence labels", gold.len(), pred.len())?;
    if gold.is_empty() {
        return Err(MetricsError::TooFew("sentence_accuracy", 1));
    }
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_count: usize,
    pub pred_count: usize,
    pub correct: usize,
}

impl Prf {
    /// Rates from counts; empty denominators give 0.
    pub fn from_counts(correct: usize, gold_count: usize, pred_count: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, pred_count);
        let recall = ratio(correct, gold_count);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            gold_count,
            pred_count,
            correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    /// Keyed by `LF_role`, over labels in gold ∪ pred.
    pub per_label: BTreeMap<String, Prf>,
    /// Keyed by LF with both roles pooled.
    pub per_lf: BTreeMap<String, Prf>,
    pub macro_f1_by_role: f64,
    pub macro_f1_by_lf: f64,
    pub micro: Prf,
}

#[derive(Default)]
struct Counts {
    correct: usize,
    gold: usize,
    pred: usize,
}

fn macro_f1(scores: &BTreeMap<String, Prf>) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.values().map(|p| p.f1).sum::<f64>() / scores.len() as f64
}

/// Exact-match span scoring. A predicted span is correct iff the same
/// sentence has a gold span with identical `(start, end, lf, role)`.
/// Duplicate spans within a sentence count once.
pub fn span_prf(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Result<SpanScores, MetricsError> {
    check_len("span sentences", gold.len(), pred.len())?;
    let mut by_label: BTreeMap<String, Counts> = BTreeMap::new();
    let mut by_lf: BTreeMap<String, Counts> = BTreeMap::new();
    let mut micro = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        let g: BTreeSet<&Span> = g.iter().collect();
        let p: BTreeSet<&Span> = p.iter().collect();
        for s in &g {
            by_label.entry(s.label()).or_default().gold += 1;
            by_lf.entry(s.lf.clone()).or_default().gold += 1;
            micro.gold += 1;
        }
        for s in &p {
            let hit = g.contains(s) as usize;
            let c = by_label.entry(s.label()).or_default();
            c.pred += 1;
            c.correct += hit;
            let c = by_lf.entry(s.lf.clone()).or_default();
            c.pred += 1;
            c.correct += hit;
            micro.pred += 1;
            micro.correct += hit;
        }
    }
    let finish = |m: BTreeMap<String, Counts>| -> BTreeMap<String, Prf> {
        m.into_iter()
            .map(|(k, c)| (k, Prf::from_counts(c.correct, c.gold, c.pred)))
            .collect()
    };
    let per_label = finish(by_label);
    let per_lf = finish(by_lf);
    Ok(SpanScores {
        macro_f1_by_role: macro_f1(&per_label),
        macro_f1_by_lf: macro_f1(&per_lf),
        per_label,
        per_lf,
        micro: Prf::from_counts(micro.correct, micro.gold, micro.pred),
    })
}

/// Square count matrix over span labels plus [`MISSED`] and [`SPURIOUS`];
/// rows are gold, columns predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    fn index(&self, label: &str) -> usize {
        self.labels
            .iter()
            .position(|l| l == label)
            .expect("label registered at construction")
    }

    pub fn get(&self, gold: &str, pred: &str) -> usize {
        match (
            self.labels.iter().position(|l| l == gold),
            self.labels.iter().position(|l| l == pred),
        ) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn diagonal_sum(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, label: &str) -> usize {
        self.labels
            .iter()
            .position(|l| l == label)
            .map_or(0, |i| self.counts[i].iter().sum())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// Pairs each gold span with a prediction of identical boundaries and role,
/// preferring one with the same LF. Unpaired gold spans go to `MISSED`,
/// unpaired predictions to the `SPURIOUS` row.
pub fn confusion_matrix(
    gold: &[Vec<Span>],
    pred: &[Vec<Span>],
) -> Result<ConfusionMatrix, MetricsError> {
    check_len("span sentences", gold.len(), pred.len())?;
    let mut labels: BTreeSet<String> = BTreeSet::new();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (g, p) in gold.iter().zip(pred) {
        let g: Vec<&Span> = g.iter().collect::<BTreeSet<_>>().into_iter().collect();
        let p: Vec<&Span> = p.iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut used = vec![false; p.len()];
        let same_slot =
            |a: &Span, b: &Span| a.start == b.start && a.end == b.end && a.role == b.role;
        for gs in &g {
            labels.insert(gs.label());
            let exact = p
                .iter()
                .enumerate()
                .position(|(j, ps)| !used[j] && *ps == *gs);
            let slot = exact.or_else(|| {
                p.iter()
                    .enumerate()
                    .position(|(j, ps)| !used[j] && same_slot(gs, ps))
            });
            match slot {
                Some(j) => {
                    used[j] = true;
                    pairs.push((gs.label(), p[j].label()));
                }
                None => pairs.push((gs.label(), MISSED.to_string())),
            }
        }
        for (j, ps) in p.iter().enumerate() {
            labels.insert(ps.label());
            if !used[j] {
                pairs.push((SPURIOUS.to_string(), ps.label()));
            }
        }
    }
    let mut labels: Vec<String> = labels.into_iter().collect();
    labels.push(MISSED.to_string());
    labels.push(SPURIOUS.to_string());
    let n = labels.len();
    let mut m = ConfusionMatrix {
        labels,
        counts: vec![vec![0; n]; n],
    };
    for (a, b) in pairs {
        let (i, j) = (m.index(&a), m.index(&b));
        m.counts[i][j] += 1;
    }
    Ok(m)
}

/// Fractional ranks starting at 1; tied values share their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with averaged ranks; `None` when either input is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_len("spearman inputs", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(MetricsError::TooFew("spearman_rho", 2));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation (`n − 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> Result<MeanStd, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::TooFew("mean_std", 1));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(MeanStd { mean, std, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_sentences: usize,
    pub sentence_accuracy: f64,
    pub spans: SpanScores,
    pub confusion: ConfusionMatrix,
    /// Rank correlation between per-LF training frequency and per-LF F1.
    pub spearman_rho: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate<T: PartialEq>(
        gold_labels: &[T],
        pred_labels: &[T],
        gold_spans: &[Vec<Span>],
        pred_spans: &[Vec<Span>],
    ) -> Result<Self, MetricsError> {
        check_len("sentences", gold_labels.len(), gold_spans.len())?;
        Ok(Self {
            n_sentences: gold_labels.len(),
            sentence_accuracy: sentence_accuracy(gold_labels, pred_labels)?,
            spans: span_prf(gold_spans, pred_spans)?,
            confusion: confusion_matrix(gold_spans, pred_spans)?,
            spearman_rho: None,
        })
    }

    /// Sets `spearman_rho` from per-LF frequencies, over LFs that have both a
    /// frequency and a score.
    pub fn with_frequency_correlation(mut self, frequencies: &BTreeMap<String, usize>) -> Self {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .spans
            .per_lf
            .iter()
            .filter_map(|(lf, prf)| frequencies.get(lf).map(|&f| (f as f64, prf.f1)))
            .unzip();
        self.spearman_rho = spearman_rho(&x, &y).ok().flatten();
        self
    }

    /// Flat scalar view used for aggregation across runs.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert("sentence_accuracy".into(), self.sentence_accuracy);
        out.insert("macro_f1_by_role".into(), self.spans.macro_f1_by_role);
        out.insert("macro_f1_by_lf".into(), self.spans.macro_f1_by_lf);
        out.insert("micro_f1".into(), self.spans.micro.f1);
        for (label, prf) in &self.spans.per_label {
            out.insert(format!("f1.{label}"), prf.f1);
        }
        if let Some(rho) = self.spearman_rho {
            out.insert("spearman_rho".into(), rho);
        }
        out
    }
}

/// Mean ± std of every scalar metric, over the runs that report it.
pub fn aggregate_runs(
    reports: &[MetricsReport],
) -> Result<BTreeMap<String, MeanStd>, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::TooFew("aggregate_runs", 1));
    }
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in r.scalars() {
            values.entry(k).or_default().push(v);
        }
    }
    values
        .into_iter()
        .map(|(k, v)| Ok((k, mean_std(&v)?)))
        .collect()
}
