//! Dataset construction: parsed corpora plus collocation lists in, labelled
//! and split JSONL out.

pub mod collocations;
pub mod conllu;
pub mod matching;
pub mod record;
pub mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bio::{tag_inventory, tags_from_spans, CodecError, Role, Span, TagScheme};
use crate::relations::{build_label_vocabulary, RelationError};
pub use collocations::{load_collocation_list, parse_collocation_list, CollocationInstance};
pub use conllu::{load_conllu, open_conllu, ConlluReader, ParsedSentence};
pub use matching::{label_sentence, match_instances, MatchConfig, Matcher, Occurrence, TokenRun};
pub use record::{
    read_jsonl, read_labels, to_jsonl, DatasetLabels, InstanceRecord, SentenceRecord,
};
pub use split::{assign_instances, split_sizes, InstanceKey, Split, SplitCounts};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Conllu {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: {message}", path.display())]
    Collocations {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: {source}", path.display())]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid record: {0}")]
    Record(String),
    #[error("no occurrences to label")]
    NoOccurrences,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub seed: u64,
    /// Longest tokenized sequence (`N + 2`) kept.
    pub max_len: usize,
    pub matching: MatchConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            max_len: 128,
            matching: MatchConfig::default(),
        }
    }
}

/// Where a sentence came from: file and 0-based sentence index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceSource {
    pub file: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub source: SentenceSource,
    pub sentence: ParsedSentence,
    pub occurrences: Vec<Occurrence>,
    pub spans: Vec<Span>,
    pub tags: Vec<String>,
    pub sentence_label: String,
}

impl AnnotatedSentence {
    /// Labels a matched sentence. Identical spans from different
    /// occurrences merge; any other overlap is an error.
    pub fn new(
        source: SentenceSource,
        sentence: ParsedSentence,
        occurrences: Vec<Occurrence>,
        scheme: &TagScheme,
    ) -> Result<Self, DatasetError> {
        let mut spans: Vec<Span> = occurrences
            .iter()
            .flat_map(|o| {
                [
                    Span::new(o.base.start, o.base.end, &o.lf, Role::Base),
                    Span::new(o.collocate.start, o.collocate.end, &o.lf, Role::Collocate),
                ]
            })
            .collect();
        spans.sort();
        spans.dedup();
        let ids = tags_from_spans(&spans, sentence.len(), scheme)?;
        let sentence_label = label_sentence(&occurrences)?;
        Ok(Self {
            source,
            tags: scheme.names_from_ids(&ids),
            sentence,
            occurrences,
            spans,
            sentence_label,
        })
    }

    pub fn record(&self) -> SentenceRecord {
        SentenceRecord {
            tokens: self.sentence.tokens.clone(),
            lemmas: self.sentence.lemmas.clone(),
            upos: self.sentence.upos.clone(),
            deps: SentenceRecord::from_graph(&self.sentence.graph),
            tags: self.tags.clone(),
            sentence_label: Some(self.sentence_label.clone()),
            instances: self
                .occurrences
                .iter()
                .map(|o| InstanceRecord {
                    lf: o.lf.clone(),
                    base: o.base.indices(),
                    collocate: o.collocate.indices(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LfStats {
    /// Sentences whose sentence label is this LF.
    pub sentences: SplitCounts,
    pub occurrences: SplitCounts,
    /// Unique instances the partition assigned to each split.
    pub instances_assigned: SplitCounts,
    /// Unique instances present in the emitted sentences.
    pub instances_emitted: SplitCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub seed: u64,
    pub files: usize,
    pub sentences_read: usize,
    pub sentences_matched: usize,
    pub sentences: SplitCounts,
    /// Reason → number of matched sentences dropped.
    pub dropped: BTreeMap<String, usize>,
    pub per_lf: BTreeMap<String, LfStats>,
    /// Label of the base–collocate connection → emitted occurrences.
    pub relation_counts: BTreeMap<String, usize>,
}

pub const DROP_INVALID_GRAPH: &str = "invalid_graph";
pub const DROP_TOO_LONG: &str = "too_long";
pub const DROP_OVERLAP: &str = "overlapping_spans";
pub const DROP_CROSS_SPLIT: &str = "cross_split";

#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
    pub labels: DatasetLabels,
    pub stats: DatasetStats,
    pub assignment: BTreeMap<InstanceKey, Split>,
}

impl BuiltDataset {
    pub fn split(&self, split: Split) -> &[AnnotatedSentence] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

fn instance_key(list: &[CollocationInstance], o: &Occurrence) -> InstanceKey {
    let i = &list[o.instance];
    (
        i.lf.clone(),
        i.base_lemma.clone(),
        i.collocate_lemma.clone(),
    )
}

/// Annotates, filters and splits already-parsed sentences.
pub fn build_from_sentences(
    sentences: impl IntoIterator<Item = (SentenceSource, ParsedSentence)>,
    list: &[CollocationInstance],
    config: &BuildConfig,
) -> Result<BuiltDataset, DatasetError> {
    let mut all_lfs: Vec<&str> = Vec::new();
    for inst in list {
        if !all_lfs.contains(&inst.lf.as_str()) {
            all_lfs.push(&inst.lf);
        }
    }
    let mut stats = DatasetStats {
        seed: config.seed,
        ..DatasetStats::default()
    };
    for reason in [
        DROP_INVALID_GRAPH,
        DROP_TOO_LONG,
        DROP_OVERLAP,
        DROP_CROSS_SPLIT,
    ] {
        stats.dropped.insert(reason.to_string(), 0);
    }
    if all_lfs.is_empty() {
        return Err(DatasetError::Codec(CodecError::NoLabels));
    }
    let scheme = tag_inventory(&all_lfs)?;
    let matcher = Matcher::new(list, config.matching);

    let mut kept = Vec::new();
    for (source, sentence) in sentences {
        stats.sentences_read += 1;
        let occurrences = matcher.find(&sentence);
        if occurrences.is_empty() {
            continue;
        }
        stats.sentences_matched += 1;
        let drop = if sentence.graph.validate().is_err() {
            Some(DROP_INVALID_GRAPH)
        } else if sentence.len() + 2 > config.max_len {
            Some(DROP_TOO_LONG)
        } else {
            None
        };
        if let Some(reason) = drop {
            *stats.dropped.get_mut(reason).expect("registered") += 1;
            continue;
        }
        match AnnotatedSentence::new(source, sentence, occurrences, &scheme) {
            Ok(a) => kept.push(a),
            Err(DatasetError::Codec(CodecError::Overlap(_))) => {
                *stats.dropped.get_mut(DROP_OVERLAP).expect("registered") += 1;
            }
            Err(e) => return Err(e),
        }
    }

    let keys: BTreeSet<InstanceKey> = kept
        .iter()
        .flat_map(|a| a.occurrences.iter().map(|o| instance_key(list, o)))
        .collect();
    let assignment = assign_instances(&keys, config.seed);

    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for a in kept {
        let splits: BTreeSet<Split> = a
            .occurrences
            .iter()
            .map(|o| assignment[&instance_key(list, o)])
            .collect();
        if splits.len() > 1 {
            *stats.dropped.get_mut(DROP_CROSS_SPLIT).expect("registered") += 1;
            continue;
        }
        match splits
            .into_iter()
            .next()
            .expect("matched sentences have instances")
        {
            Split::Train => train.push(a),
            Split::Dev => dev.push(a),
            Split::Test => test.push(a),
        }
    }

    for (key, &split) in &assignment {
        stats
            .per_lf
            .entry(key.0.clone())
            .or_default()
            .instances_assigned
            .bump(split);
    }
    let mut emitted_lfs = BTreeSet::new();
    for (split, sents) in [
        (Split::Train, &train),
        (Split::Dev, &dev),
        (Split::Test, &test),
    ] {
        let mut seen: BTreeSet<InstanceKey> = BTreeSet::new();
        for a in sents.iter() {
            stats.sentences.bump(split);
            stats
                .per_lf
                .entry(a.sentence_label.clone())
                .or_default()
                .sentences
                .bump(split);
            for o in &a.occurrences {
                emitted_lfs.insert(o.lf.clone());
                let lf = stats.per_lf.entry(o.lf.clone()).or_default();
                lf.occurrences.bump(split);
                if seen.insert(instance_key(list, o)) {
                    lf.instances_emitted.bump(split);
                }
                *stats.relation_counts.entry(o.relation.clone()).or_default() += 1;
            }
        }
    }

    let lf_labels: Vec<String> = all_lfs
        .iter()
        .filter(|lf| emitted_lfs.contains(**lf))
        .map(|lf| lf.to_string())
        .collect();
    let tags = if lf_labels.is_empty() {
        vec!["O".to_string()]
    } else {
        tag_inventory(&lf_labels)?.tags().to_vec()
    };
    let dep_labels = if train.is_empty() {
        Vec::new()
    } else {
        build_label_vocabulary(train.iter().map(|a| &a.sentence.graph))?
            .labels()
            .to_vec()
    };
    Ok(BuiltDataset {
        train,
        dev,
        test,
        labels: DatasetLabels {
            lf_labels,
            tags,
            dep_labels,
        },
        stats,
        assignment,
    })
}

/// `*.conllu` files below `dir`, sorted by path.
pub fn conllu_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| DatasetError::Io {
            path: d.clone(),
            source: e,
        })?;
        for entry in entries {
            let path = entry
                .map_err(|e| DatasetError::Io {
                    path: d.clone(),
                    source: e,
                })?
                .path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "conllu") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Reads every corpus file under `corpus_dir` and builds the dataset.
pub fn build_dataset(
    corpus_dir: &Path,
    collocations: &Path,
    config: &BuildConfig,
) -> Result<BuiltDataset, DatasetError> {
    let list = load_collocation_list(collocations)?;
    let files = conllu_files(corpus_dir)?;
    let mut sentences = Vec::new();
    for path in &files {
        let name = path
            .strip_prefix(corpus_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        for (index, s) in open_conllu(path)?.enumerate() {
            sentences.push((
                SentenceSource {
                    file: name.clone(),
                    index,
                },
                s?,
            ));
        }
    }
    let mut built = build_from_sentences(sentences, &list, config)?;
    built.stats.files = files.len();
    log::info!(
        "{} files, {} sentences read, {} matched, splits {}/{}/{}",
        files.len(),
        built.stats.sentences_read,
        built.stats.sentences_matched,
        built.train.len(),
        built.dev.len(),
        built.test.len()
    );
    Ok(built)
}

fn write(path: &Path, contents: &str) -> Result<(), DatasetError> {
    fs::write(path, contents).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Writes `{train,dev,test}.jsonl`, `labels.json`, `stats.json` and, when
/// asked, `review.tsv` for manual filtering.
pub fn emit_dataset(
    built: &BuiltDataset,
    out_dir: &Path,
    review: bool,
) -> Result<(), DatasetError> {
    fs::create_dir_all(out_dir).map_err(|e| DatasetError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    for split in Split::ALL {
        let records: Vec<SentenceRecord> = built.split(split).iter().map(|a| a.record()).collect();
        write(&out_dir.join(format!("{split}.jsonl")), &to_jsonl(&records))?;
    }
    write(&out_dir.join("labels.json"), &pretty(&built.labels))?;
    write(&out_dir.join("stats.json"), &pretty(&built.stats))?;
    if review {
        write(&out_dir.join("review.tsv"), &review_tsv(built))?;
    }
    Ok(())
}

fn review_tsv(built: &BuiltDataset) -> String {
    let mut out = String::from("split\tfile\tsentence\tlf\tbase\tcollocate\trelation\ttext\n");
    for split in Split::ALL {
        for a in built.split(split) {
            let words = |r: TokenRun| a.sentence.tokens[r.start..=r.end].join(" ");
            for o in &a.occurrences {
                out.push_str(&format!(
                    "{split}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    a.source.file,
                    a.source.index,
                    o.lf,
                    words(o.base),
                    words(o.collocate),
                    o.relation,
                    a.sentence.tokens.join(" ")
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::{DependencyEdge, DependencyGraph};

    /// "the <adj> <noun>" with amod and det arcs into the noun.
    fn adj_noun(adj: &str, noun: &str) -> ParsedSentence {
        ParsedSentence {
            tokens: vec!["the".into(), adj.into(), noun.into()],
            lemmas: vec!["the".into(), adj.into(), noun.into()],
            upos: vec!["DET".into(), "ADJ".into(), "NOUN".into()],
            graph: DependencyGraph::new(
                3,
                vec![
                    DependencyEdge::new(Some(2), 0, "det"),
                    DependencyEdge::new(Some(2), 1, "amod"),
                    DependencyEdge::new(None, 2, "root"),
                ],
            ),
        }
    }

    fn inst(lf: &str, b: &str, c: &str) -> CollocationInstance {
        CollocationInstance {
            lf: lf.into(),
            base_lemma: b.into(),
            base_pos: "NOUN".into(),
            collocate_lemma: c.into(),
            collocate_pos: "ADJ".into(),
        }
    }

    fn source(i: usize) -> SentenceSource {
        SentenceSource {
            file: "a.conllu".into(),
            index: i,
        }
    }

    #[test]
    fn small_build() {
        let list = vec![inst("Magn", "rain", "heavy"), inst("Bon", "idea", "good")];
        let sents = vec![
            (source(0), adj_noun("heavy", "rain")),
            (source(1), adj_noun("good", "idea")),
            (source(2), adj_noun("red", "car")),
        ];
        let built = build_from_sentences(sents, &list, &BuildConfig::default()).unwrap();
        assert_eq!(built.train.len(), 2);
        assert_eq!(built.stats.sentences_read, 3);
        assert_eq!(built.stats.sentences_matched, 2);
        assert_eq!(built.labels.lf_labels, ["Magn", "Bon"]);
        assert_eq!(built.labels.tags.len(), 9);
        assert_eq!(built.labels.dep_labels, ["amod", "det", "root"]);
        assert_eq!(built.train[0].tags, ["O", "B-Magn_c", "B-Magn_b"]);
        assert_eq!(built.train[0].sentence_label, "Magn");
        assert_eq!(built.stats.relation_counts["amod"], 2);
    }

    #[test]
    fn long_sentences_are_dropped() {
        let list = vec![inst("Magn", "rain", "heavy")];
        let config = BuildConfig {
            max_len: 4,
            ..BuildConfig::default()
        };
        let built =
            build_from_sentences(vec![(source(0), adj_noun("heavy", "rain"))], &list, &config)
                .unwrap();
        assert!(built.train.is_empty());
        assert_eq!(built.stats.dropped[DROP_TOO_LONG], 1);
        assert!(built.labels.lf_labels.is_empty());
    }

    #[test]
    fn overlapping_spans_are_dropped() {
        // "heavy" collocates with "rain" under two LFs
        let list = vec![
            inst("Magn", "rain", "heavy"),
            inst("AntiBon", "rain", "heavy"),
        ];
        let built = build_from_sentences(
            vec![(source(0), adj_noun("heavy", "rain"))],
            &list,
            &BuildConfig::default(),
        )
        .unwrap();
        assert_eq!(built.stats.dropped[DROP_OVERLAP], 1);
    }

    #[test]
    fn record_carries_instances() {
        let list = vec![inst("Magn", "rain", "heavy")];
        let built = build_from_sentences(
            vec![(source(0), adj_noun("heavy", "rain"))],
            &list,
            &BuildConfig::default(),
        )
        .unwrap();
        let r = built.train[0].record();
        assert_eq!(
            r.instances,
            vec![InstanceRecord {
                lf: "Magn".into(),
                base: vec![2],
                collocate: vec![1]
            }]
        );
        assert_eq!(r.deps[2], (-1, 2, "root".to_string()));
        assert_eq!(r.spans(), built.train[0].spans);
    }
}
