//! Generated corpora for controlled experiments.
//!
//! [`lexical_corpus`]: the LF and role of a span follow from the words alone.
//! [`relation_corpus`]: words and PoS tags are uniform noise; only the label
//! of one dependency arc tells which tokens form a collocation and of which
//! LF.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bio::{tag_inventory, tags_from_spans, Role, Span};
use crate::dataset::{DatasetLabels, InstanceRecord, SentenceRecord};

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<SentenceRecord>,
    pub dev: Vec<SentenceRecord>,
    pub test: Vec<SentenceRecord>,
    pub labels: DatasetLabels,
}

const FILLER_POS: [&str; 5] = ["DET", "ADV", "PRON", "AUX", "ADP"];
const NOISE_POS: [&str; 4] = ["NOUN", "VERB", "ADJ", "ADV"];

/// Random tree with `root` as the root word: nodes attach in random order to
/// an already attached node. Entries of `fixed` force a head.
fn random_tree(
    n: usize,
    root: usize,
    fixed: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<Option<usize>> {
    let mut heads = vec![None; n];
    let mut attached = vec![root];
    for &(dep, head) in fixed {
        heads[dep] = Some(head);
    }
    // fixed dependents hang directly under the root in every use below
    attached.extend(fixed.iter().map(|&(d, _)| d));
    let mut rest: Vec<usize> = (0..n).filter(|i| !attached.contains(i)).collect();
    rest.shuffle(rng);
    for i in rest {
        let h = *attached.choose(rng).expect("root is attached");
        heads[i] = Some(h);
        attached.push(i);
    }
    heads
}

fn record(
    tokens: Vec<String>,
    upos: Vec<String>,
    heads: &[Option<usize>],
    label_of: impl Fn(usize) -> String,
    spans: &[Span],
    lf: &str,
    labels: &DatasetLabels,
) -> SentenceRecord {
    let scheme = tag_inventory(&labels.lf_labels).expect("non-empty LF list");
    let tags = tags_from_spans(spans, tokens.len(), &scheme).expect("generated spans are disjoint");
    let span_of = |role: Role| {
        spans
            .iter()
            .find(|s| s.role == role)
            .map(|s| (s.start..=s.end).collect())
            .unwrap_or_default()
    };
    SentenceRecord {
        lemmas: tokens.clone(),
        deps: heads
            .iter()
            .enumerate()
            .map(|(i, h)| (h.map_or(-1, |h| h as i64), i, label_of(i)))
            .collect(),
        tags: scheme.names_from_ids(&tags),
        sentence_label: Some(lf.to_string()),
        instances: vec![InstanceRecord {
            lf: lf.to_string(),
            base: span_of(Role::Base),
            collocate: span_of(Role::Collocate),
        }],
        tokens,
        upos,
    }
}

fn labels(lfs: &[&str], deps: &[&str]) -> DatasetLabels {
    let lf_labels: Vec<String> = lfs.iter().map(|s| s.to_string()).collect();
    DatasetLabels {
        tags: tag_inventory(&lf_labels)
            .expect("non-empty")
            .tags()
            .to_vec(),
        lf_labels,
        dep_labels: deps.iter().map(|s| s.to_string()).collect(),
    }
}

/// Four LFs with disjoint lexicons (two one-word bases, one two-word base and
/// two collocates each) among 26 filler words: 50 word types, arcs labelled
/// `root` or `dep`. One collocation per sentence, 5 to 9 words.
pub fn lexical_corpus(n_train: usize, n_dev: usize, seed: u64) -> SyntheticCorpus {
    const LFS: [&str; 4] = ["Magn", "Oper1", "Real1", "AntiMagn"];
    let labels = labels(&LFS, &["dep", "root"]);
    let fillers: Vec<String> = (0..26).map(|i| format!("w{i:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentence = |rng: &mut ChaCha8Rng| {
        let lf_i = rng.random_range(0..LFS.len());
        let lf = LFS[lf_i];
        let base: Vec<String> = match rng.random_range(0..3) {
            2 => vec![
                format!("{}_mw0", lf.to_lowercase()),
                format!("{}_mw1", lf.to_lowercase()),
            ],
            k => vec![format!("{}_base{k}", lf.to_lowercase())],
        };
        let collocate = format!("{}_col{}", lf.to_lowercase(), rng.random_range(0..2));
        let n = rng.random_range(5..=9);
        let b_start = rng.random_range(0..n - base.len());
        let free: Vec<usize> = (0..n)
            .filter(|&i| i < b_start || i >= b_start + base.len())
            .collect();
        let c = *free.choose(rng).expect("room for a collocate");
        let b_head = b_start + base.len() - 1;

        let mut tokens: Vec<String> = (0..n)
            .map(|_| fillers.choose(rng).expect("fillers").clone())
            .collect();
        let mut upos: Vec<String> = (0..n)
            .map(|_| FILLER_POS.choose(rng).expect("pos").to_string())
            .collect();
        for (k, w) in base.iter().enumerate() {
            tokens[b_start + k] = w.clone();
            upos[b_start + k] = "NOUN".into();
        }
        tokens[c] = collocate;
        upos[c] = if lf_i % 2 == 0 { "ADJ" } else { "VERB" }.into();

        let mut fixed = vec![(c, b_head)];
        if base.len() == 2 {
            fixed.push((b_start, b_head));
        }
        let heads = random_tree(n, b_head, &fixed, rng);
        let spans = [
            Span::new(b_start, b_head, lf, Role::Base),
            Span::new(c, c, lf, Role::Collocate),
        ];
        record(
            tokens,
            upos,
            &heads,
            |i| if heads[i].is_none() { "root" } else { "dep" }.to_string(),
            &spans,
            lf,
            &labels,
        )
    };
    let train = (0..n_train).map(|_| sentence(&mut rng)).collect();
    let dev = (0..n_dev).map(|_| sentence(&mut rng)).collect();
    SyntheticCorpus {
        train,
        dev,
        test: Vec::new(),
        labels,
    }
}

/// Uniform random words and PoS tags over a random tree of 6 to 10 words.
/// One arc head → dependent is relabelled `amod` (a Magn base and its
/// collocate) or `obj` (an Oper1 base and its collocate); every other arc
/// is `dep` or `root`.
pub fn relation_corpus(n_train: usize, n_dev: usize, n_test: usize, seed: u64) -> SyntheticCorpus {
    const LFS: [(&str, &str); 2] = [("Magn", "amod"), ("Oper1", "obj")];
    let labels = labels(&["Magn", "Oper1"], &["amod", "dep", "obj", "root"]);
    let words: Vec<String> = (0..30).map(|i| format!("t{i:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentence = |rng: &mut ChaCha8Rng| {
        let (lf, rel) = LFS[rng.random_range(0..LFS.len())];
        let n = rng.random_range(6..=10);
        let tokens: Vec<String> = (0..n)
            .map(|_| words.choose(rng).expect("words").clone())
            .collect();
        let upos: Vec<String> = (0..n)
            .map(|_| NOISE_POS.choose(rng).expect("pos").to_string())
            .collect();
        let heads = random_tree(n, rng.random_range(0..n), &[], rng);
        let dependents: Vec<usize> = (0..n).filter(|&i| heads[i].is_some()).collect();
        let c = *dependents.choose(rng).expect("n >= 2");
        let b = heads[c].expect("non-root");
        let spans = [
            Span::new(b, b, lf, Role::Base),
            Span::new(c, c, lf, Role::Collocate),
        ];
        record(
            tokens,
            upos,
            &heads,
            |i| match heads[i] {
                None => "root".to_string(),
                Some(_) if i == c => rel.to_string(),
                Some(_) => "dep".to_string(),
            },
            &spans,
            lf,
            &labels,
        )
    };
    let train = (0..n_train).map(|_| sentence(&mut rng)).collect();
    let dev = (0..n_dev).map(|_| sentence(&mut rng)).collect();
    let test = (0..n_test).map(|_| sentence(&mut rng)).collect();
    SyntheticCorpus {
        train,
        dev,
        test,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn check_tree(r: &SentenceRecord) {
        let g = r.graph().unwrap();
        assert!(g.validate().is_ok(), "{:?}", g.validate());
    }

    #[test]
    fn lexical_corpus_shape() {
        let c = lexical_corpus(160, 40, 1);
        assert_eq!((c.train.len(), c.dev.len()), (160, 40));
        let vocab: BTreeSet<&str> = c
            .train
            .iter()
            .chain(&c.dev)
            .flat_map(|r| r.tokens.iter().map(String::as_str))
            .collect();
        assert!((40..=50).contains(&vocab.len()), "{}", vocab.len());
        let labels: BTreeSet<&str> = c
            .train
            .iter()
            .flat_map(|r| r.deps.iter().map(|d| d.2.as_str()))
            .collect();
        assert_eq!(labels, BTreeSet::from(["dep", "root"]));
        for r in c.train.iter().chain(&c.dev) {
            check_tree(r);
            assert!(r.check().is_ok());
            assert_eq!(r.spans().len(), 2);
            // base head governs the collocate
            let inst = &r.instances[0];
            let b_head = *inst.base.last().unwrap() as i64;
            assert_eq!(r.deps[inst.collocate[0]].0, b_head);
        }
        assert!(c.train.iter().any(|r| r.instances[0].base.len() == 2));
    }

    #[test]
    fn relation_corpus_signal_is_one_arc() {
        let c = relation_corpus(50, 10, 10, 2);
        for r in c.train.iter().chain(&c.dev).chain(&c.test) {
            check_tree(r);
            let inst = &r.instances[0];
            let special: Vec<_> = r
                .deps
                .iter()
                .filter(|d| d.2 == "amod" || d.2 == "obj")
                .collect();
            assert_eq!(special.len(), 1);
            assert_eq!(special[0].0, inst.base[0] as i64);
            assert_eq!(special[0].1, inst.collocate[0]);
            let expected = if special[0].2 == "amod" {
                "Magn"
            } else {
                "Oper1"
            };
            assert_eq!(r.sentence_label.as_deref(), Some(expected));
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(
            relation_corpus(5, 0, 0, 3).train,
            relation_corpus(5, 0, 0, 3).train
        );
        assert_ne!(lexical_corpus(5, 0, 3).train, lexical_corpus(5, 0, 4).train);
    }
}
