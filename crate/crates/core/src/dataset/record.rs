//! JSONL sentence records and the labels file.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::bio::{Role, Span};
use crate::relations::{DependencyEdge, DependencyGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub lf: String,
    pub base: Vec<usize>,
    pub collocate: Vec<usize>,
}

/// One sentence per JSONL line. `deps` holds `[head, dependent, label]` with
/// `head = -1` for the root. `tags`, `sentence_label` and `instances` may be
/// absent on unlabelled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub lemmas: Vec<String>,
    pub upos: Vec<String>,
    pub deps: Vec<(i64, usize, String)>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_label: Option<String>,
    #[serde(default)]
    pub instances: Vec<InstanceRecord>,
}

fn index_span(indices: &[usize], lf: &str, role: Role) -> Option<Span> {
    let start = *indices.iter().min()?;
    let end = *indices.iter().max()?;
    Some(Span::new(start, end, lf, role))
}

impl SentenceRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn graph(&self) -> Result<DependencyGraph, DatasetError> {
        let edges = self
            .deps
            .iter()
            .map(|(head, dep, label)| {
                let head = match *head {
                    -1 => None,
                    h if h >= 0 => Some(h as usize),
                    h => {
                        return Err(DatasetError::Record(format!(
                            "head {h} is neither -1 nor a token index"
                        )));
                    }
                };
                Ok(DependencyEdge::new(head, *dep, label.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(DependencyGraph::new(self.tokens.len(), edges))
    }

    pub fn from_graph(graph: &DependencyGraph) -> Vec<(i64, usize, String)> {
        let mut deps: Vec<(i64, usize, String)> = graph
            .edges
            .iter()
            .map(|e| {
                (
                    e.head.map_or(-1, |h| h as i64),
                    e.dependent,
                    e.label.clone(),
                )
            })
            .collect();
        deps.sort_by_key(|d| d.1);
        deps
    }

    /// Base and collocate spans of every instance, deduplicated and sorted.
    pub fn spans(&self) -> Vec<Span> {
        let mut out: Vec<Span> = self
            .instances
            .iter()
            .flat_map(|i| {
                [
                    index_span(&i.base, &i.lf, Role::Base),
                    index_span(&i.collocate, &i.lf, Role::Collocate),
                ]
            })
            .flatten()
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        let n = self.tokens.len();
        if self.upos.len() != n || (!self.lemmas.is_empty() && self.lemmas.len() != n) {
            return Err(DatasetError::Record(
                "tokens, lemmas and upos differ in length".into(),
            ));
        }
        if !self.tags.is_empty() && self.tags.len() != n {
            return Err(DatasetError::Record(format!(
                "{} tags for {n} tokens",
                self.tags.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLabels {
    pub lf_labels: Vec<String>,
    pub tags: Vec<String>,
    pub dep_labels: Vec<String>,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SentenceRecord>, DatasetError> {
    let io = |e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source: e,
        })?;
        rec.check().map_err(|e| DatasetError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source: serde::de::Error::custom(e),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl(records: &[SentenceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_labels(path: &Path) -> Result<DatasetLabels, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> SentenceRecord {
        SentenceRecord {
            tokens: vec!["takes".into(), "a".into(), "walk".into()],
            lemmas: vec!["take".into(), "a".into(), "walk".into()],
            upos: vec!["VERB".into(), "DET".into(), "NOUN".into()],
            deps: vec![
                (-1, 0, "root".into()),
                (2, 1, "det".into()),
                (0, 2, "obj".into()),
            ],
            tags: vec!["B-Oper1_c".into(), "O".into(), "B-Oper1_b".into()],
            sentence_label: Some("Oper1".into()),
            instances: vec![InstanceRecord {
                lf: "Oper1".into(),
                base: vec![2],
                collocate: vec![0],
            }],
        }
    }

    #[test]
    fn key_order_and_shape() {
        let line = serde_json::to_string(&record()).unwrap();
        assert_eq!(
            line,
            r#"{"tokens":["takes","a","walk"],"lemmas":["take","a","walk"],"upos":["VERB","DET","NOUN"],"deps":[[-1,0,"root"],[2,1,"det"],[0,2,"obj"]],"tags":["B-Oper1_c","O","B-Oper1_b"],"sentence_label":"Oper1","instances":[{"lf":"Oper1","base":[2],"collocate":[0]}]}"#
        );
        let back: SentenceRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record());
    }

    #[test]
    fn graph_round_trip() {
        let r = record();
        let g = r.graph().unwrap();
        assert!(g.validate().is_ok());
        assert_eq!(SentenceRecord::from_graph(&g), r.deps);
        let mut bad = r;
        bad.deps[0].0 = -2;
        assert!(bad.graph().is_err());
    }

    #[test]
    fn spans_from_instances() {
        assert_eq!(
            record().spans(),
            vec![
                Span::new(0, 0, "Oper1", Role::Collocate),
                Span::new(2, 2, "Oper1", Role::Base)
            ]
        );
    }

    #[test]
    fn unlabelled_input_parses() {
        let r: SentenceRecord =
            serde_json::from_str(r#"{"tokens":["a"],"upos":["DET"],"deps":[[-1,0,"root"]]}"#)
                .unwrap();
        assert!(r.tags.is_empty() && r.sentence_label.is_none() && r.instances.is_empty());
        assert!(r.check().is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, to_jsonl(&[record(), record()])).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), vec![record(), record()]);
        std::fs::write(&path, "{}\n").unwrap();
        assert!(matches!(
            read_jsonl(&path),
            Err(DatasetError::Json { line: 1, .. })
        ));
    }
}
