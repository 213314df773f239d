//! Finding collocation instances in parsed sentences.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::collocations::CollocationInstance;
use super::conllu::ParsedSentence;
use super::DatasetError;

/// Inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenRun {
    pub start: usize,
    pub end: usize,
}

impl TokenRun {
    pub fn indices(&self) -> Vec<usize> {
        (self.start..=self.end).collect()
    }

    pub fn overlaps(&self, other: &TokenRun) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occurrence {
    /// Position of the instance in the collocation list.
    pub instance: usize,
    pub lf: String,
    pub base: TokenRun,
    pub collocate: TokenRun,
    /// Label of the connecting edge; `a+b` when the path hops through an ADP.
    pub relation: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Also accept a base–ADP–collocate path.
    pub allow_case_hop: bool,
}

/// Lemma-indexed view of a collocation list.
pub struct Matcher<'a> {
    list: &'a [CollocationInstance],
    by_first_lemma: HashMap<String, Vec<usize>>,
    config: MatchConfig,
}

fn lemma_words(lemma: &str) -> Vec<String> {
    lemma.split_whitespace().map(str::to_lowercase).collect()
}

impl<'a> Matcher<'a> {
    pub fn new(list: &'a [CollocationInstance], config: MatchConfig) -> Self {
        let mut by_first_lemma: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, inst) in list.iter().enumerate() {
            if let Some(first) = lemma_words(&inst.base_lemma).into_iter().next() {
                by_first_lemma.entry(first).or_default().push(i);
            }
        }
        Self {
            list,
            by_first_lemma,
            config,
        }
    }

    /// All occurrences in `s`, sorted and deduplicated.
    pub fn find(&self, s: &ParsedSentence) -> Vec<Occurrence> {
        let view = SentenceView::new(s);
        let mut candidates: Vec<usize> = view
            .lemmas
            .iter()
            .filter_map(|l| self.by_first_lemma.get(l))
            .flatten()
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        let mut out = Vec::new();
        for i in candidates {
            let inst = &self.list[i];
            let bases = view.runs(&lemma_words(&inst.base_lemma), &inst.base_pos);
            if bases.is_empty() {
                continue;
            }
            let collocates = view.runs(&lemma_words(&inst.collocate_lemma), &inst.collocate_pos);
            for &(b, bh) in &bases {
                for &(c, ch) in &collocates {
                    if b.overlaps(&c) {
                        continue;
                    }
                    if let Some(relation) = view.connection(bh, ch, &[b, c], self.config) {
                        out.push(Occurrence {
                            instance: i,
                            lf: inst.lf.clone(),
                            base: b,
                            collocate: c,
                            relation,
                        });
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

pub fn match_instances(
    s: &ParsedSentence,
    list: &[CollocationInstance],
    config: MatchConfig,
) -> Vec<Occurrence> {
    Matcher::new(list, config).find(s)
}

struct SentenceView<'s> {
    s: &'s ParsedSentence,
    lemmas: Vec<String>,
    heads: Vec<Option<usize>>,
    labels: Vec<&'s str>,
}

impl<'s> SentenceView<'s> {
    fn new(s: &'s ParsedSentence) -> Self {
        let n = s.len();
        let mut heads = vec![None; n];
        let mut labels = vec![""; n];
        for e in &s.graph.edges {
            if e.dependent < n {
                heads[e.dependent] = e.head;
                labels[e.dependent] = &e.label;
            }
        }
        Self {
            s,
            lemmas: s.lemmas.iter().map(|l| l.to_lowercase()).collect(),
            heads,
            labels,
        }
    }

    /// Contiguous runs spelling `words` whose unique internal head has UPOS `pos`.
    fn runs(&self, words: &[String], pos: &str) -> Vec<(TokenRun, usize)> {
        let k = words.len();
        if k == 0 || k > self.lemmas.len() {
            return Vec::new();
        }
        (0..=self.lemmas.len() - k)
            .filter(|&start| self.lemmas[start..start + k] == *words)
            .filter_map(|start| {
                let run = TokenRun {
                    start,
                    end: start + k - 1,
                };
                let head = self.run_head(run)?;
                (self.s.upos[head] == pos).then_some((run, head))
            })
            .collect()
    }

    fn run_head(&self, run: TokenRun) -> Option<usize> {
        let mut heads = (run.start..=run.end)
            .filter(|&t| self.heads[t].is_none_or(|h| h < run.start || h > run.end));
        let head = heads.next()?;
        heads.next().is_none().then_some(head)
    }

    fn edge_label(&self, a: usize, b: usize) -> Option<&'s str> {
        if self.heads[b] == Some(a) {
            Some(self.labels[b])
        } else if self.heads[a] == Some(b) {
            Some(self.labels[a])
        } else {
            None
        }
    }

    fn connection(
        &self,
        a: usize,
        b: usize,
        runs: &[TokenRun],
        config: MatchConfig,
    ) -> Option<String> {
        if let Some(l) = self.edge_label(a, b) {
            return Some(l.to_string());
        }
        if !config.allow_case_hop {
            return None;
        }
        (0..self.lemmas.len())
            .filter(|&x| self.s.upos[x] == "ADP")
            .filter(|&x| runs.iter().all(|r| x < r.start || x > r.end))
            .find_map(|x| {
                Some(format!(
                    "{}+{}",
                    self.edge_label(a, x)?,
                    self.edge_label(x, b)?
                ))
            })
    }
}

/// Most frequent LF; ties go to the LF whose leftmost base starts first.
pub fn label_sentence(occurrences: &[Occurrence]) -> Result<String, DatasetError> {
    let mut stats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for o in occurrences {
        let e = stats.entry(&o.lf).or_insert((0, usize::MAX));
        e.0 += 1;
        e.1 = e.1.min(o.base.start);
    }
    stats
        .into_iter()
        .min_by_key(|&(_, (count, start))| (std::cmp::Reverse(count), start))
        .map(|(lf, _)| lf.to_string())
        .ok_or(DatasetError::NoOccurrences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::{DependencyEdge, DependencyGraph};

    fn sentence(rows: &[(&str, &str, &str, usize, &str)]) -> ParsedSentence {
        ParsedSentence {
            tokens: rows.iter().map(|r| r.0.to_string()).collect(),
            lemmas: rows.iter().map(|r| r.1.to_string()).collect(),
            upos: rows.iter().map(|r| r.2.to_string()).collect(),
            graph: DependencyGraph::new(
                rows.len(),
                rows.iter()
                    .enumerate()
                    .map(|(i, r)| DependencyEdge::new(r.3.checked_sub(1), i, r.4))
                    .collect(),
            ),
        }
    }

    fn inst(lf: &str, b: &str, bp: &str, c: &str, cp: &str) -> CollocationInstance {
        CollocationInstance {
            lf: lf.into(),
            base_lemma: b.into(),
            base_pos: bp.into(),
            collocate_lemma: c.into(),
            collocate_pos: cp.into(),
        }
    }

    fn smoker() -> ParsedSentence {
        sentence(&[
            ("She", "she", "PRON", 5, "nsubj"),
            ("is", "be", "AUX", 5, "cop"),
            ("a", "a", "DET", 5, "det"),
            ("heavy", "heavy", "ADJ", 5, "amod"),
            ("smoker", "smoker", "NOUN", 0, "root"),
        ])
    }

    #[test]
    fn heavy_smoker() {
        let list = [inst("Magn", "smoker", "NOUN", "heavy", "ADJ")];
        let occ = match_instances(&smoker(), &list, MatchConfig::default());
        assert_eq!(
            occ,
            vec![Occurrence {
                instance: 0,
                lf: "Magn".into(),
                base: TokenRun { start: 4, end: 4 },
                collocate: TokenRun { start: 3, end: 3 },
                relation: "amod".into(),
            }]
        );
    }

    #[test]
    fn lemmas_without_edge_do_not_match() {
        let s = sentence(&[
            ("heavy", "heavy", "ADJ", 3, "amod"),
            ("rain", "rain", "NOUN", 3, "compound"),
            ("smoker", "smoker", "NOUN", 0, "root"),
            ("and", "and", "CCONJ", 5, "cc"),
            ("heavy", "heavy", "ADJ", 3, "conj"),
        ]);
        let list = [inst("Magn", "rain", "NOUN", "heavy", "ADJ")];
        assert!(match_instances(&s, &list, MatchConfig::default()).is_empty());
    }

    #[test]
    fn pos_must_match() {
        let list = [inst("Magn", "smoker", "VERB", "heavy", "ADJ")];
        assert!(match_instances(&smoker(), &list, MatchConfig::default()).is_empty());
    }

    #[test]
    fn lemma_case_is_ignored() {
        let list = [inst("Magn", "Smoker", "NOUN", "HEAVY", "ADJ")];
        assert_eq!(
            match_instances(&smoker(), &list, MatchConfig::default()).len(),
            1
        );
    }

    #[test]
    fn multiword_base() {
        let s = sentence(&[
            ("a", "a", "DET", 4, "det"),
            ("record-breaking", "record-breaking", "ADJ", 4, "amod"),
            ("grand", "grand", "ADJ", 4, "compound"),
            ("slam", "slam", "NOUN", 0, "root"),
        ]);
        let list = [inst("Magn", "grand slam", "NOUN", "record-breaking", "ADJ")];
        let occ = match_instances(&s, &list, MatchConfig::default());
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].base, TokenRun { start: 2, end: 3 });
        assert_eq!(occ[0].collocate, TokenRun { start: 1, end: 1 });
    }

    #[test]
    fn case_hop() {
        // the only path from "danger" to "put" runs through "in"
        let s = sentence(&[
            ("put", "put", "VERB", 0, "root"),
            ("in", "in", "ADP", 1, "obl"),
            ("danger", "danger", "NOUN", 2, "pobj"),
        ]);
        let list = [inst("CausFunc0", "danger", "NOUN", "put", "VERB")];
        assert!(match_instances(&s, &list, MatchConfig::default()).is_empty());
        let occ = match_instances(
            &s,
            &list,
            MatchConfig {
                allow_case_hop: true,
            },
        );
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].relation, "pobj+obl");
    }

    fn occ(lf: &str, start: usize) -> Occurrence {
        Occurrence {
            instance: 0,
            lf: lf.into(),
            base: TokenRun { start, end: start },
            collocate: TokenRun { start: 9, end: 9 },
            relation: String::new(),
        }
    }

    #[test]
    fn sentence_labels() {
        assert_eq!(
            label_sentence(&[occ("Oper1", 0), occ("Oper1", 3), occ("Magn", 1)]).unwrap(),
            "Oper1"
        );
        assert_eq!(
            label_sentence(&[occ("Oper1", 5), occ("Magn", 2)]).unwrap(),
            "Magn"
        );
        assert_eq!(label_sentence(&[occ("Real1", 4)]).unwrap(), "Real1");
        assert!(label_sentence(&[]).is_err());
    }
}
