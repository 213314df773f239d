//! Minimal CoNLL-U reader: FORM, LEMMA, UPOS, HEAD and DEPREL only.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use super::DatasetError;
use crate::relations::{DependencyEdge, DependencyGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSentence {
    pub tokens: Vec<String>,
    pub lemmas: Vec<String>,
    pub upos: Vec<String>,
    pub graph: DependencyGraph,
}

impl ParsedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Streams sentences from CoNLL-U text. Multiword-token ranges (`3-4`) and
/// empty nodes (`5.1`) are skipped; `HEAD = 0` becomes the root pseudo-head.
pub struct ConlluReader<R> {
    source: PathBuf,
    lines: std::io::Lines<R>,
    line_no: usize,
    done: bool,
}

impl<R: BufRead> ConlluReader<R> {
    pub fn new(reader: R, source: impl Into<PathBuf>) -> Self {
        Self {
            source: source.into(),
            lines: reader.lines(),
            line_no: 0,
            done: false,
        }
    }

    fn error(&self, line: usize, message: impl Into<String>) -> DatasetError {
        DatasetError::Conllu {
            path: self.source.clone(),
            line,
            message: message.into(),
        }
    }

    fn read_sentence(&mut self) -> Result<Option<ParsedSentence>, DatasetError> {
        let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
        loop {
            let Some(line) = self.lines.next() else {
                self.done = true;
                break;
            };
            self.line_no += 1;
            let line = line.map_err(|e| DatasetError::Io {
                path: self.source.clone(),
                source: e,
            })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                if rows.is_empty() {
                    continue;
                }
                break;
            }
            if line.starts_with('#') {
                continue;
            }
            let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
            if cols.len() != 10 {
                return Err(self.error(
                    self.line_no,
                    format!("expected 10 columns, found {}", cols.len()),
                ));
            }
            if cols[0].contains('-') || cols[0].contains('.') {
                continue;
            }
            rows.push((self.line_no, cols));
        }
        if rows.is_empty() {
            return Ok(None);
        }
        let n = rows.len();
        let mut sentence = ParsedSentence {
            tokens: Vec::with_capacity(n),
            lemmas: Vec::with_capacity(n),
            upos: Vec::with_capacity(n),
            graph: DependencyGraph::new(n, Vec::with_capacity(n)),
        };
        for (i, (line, cols)) in rows.into_iter().enumerate() {
            let id: usize = cols[0]
                .parse()
                .map_err(|_| self.error(line, format!("invalid ID {:?}", cols[0])))?;
            if id != i + 1 {
                return Err(self.error(line, format!("expected ID {}, found {id}", i + 1)));
            }
            let head: usize = cols[6]
                .parse()
                .map_err(|_| self.error(line, format!("non-integer HEAD {:?}", cols[6])))?;
            if head > n {
                return Err(self.error(line, format!("HEAD {head} beyond sentence length {n}")));
            }
            let mut cols = cols.into_iter();
            let form = cols.nth(1).unwrap_or_default();
            let lemma = cols.next().unwrap_or_default();
            let upos = cols.next().unwrap_or_default();
            let deprel = cols.nth(3).unwrap_or_default();
            sentence.tokens.push(form);
            sentence.lemmas.push(lemma);
            sentence.upos.push(upos);
            sentence
                .graph
                .edges
                .push(DependencyEdge::new(head.checked_sub(1), i, deprel));
        }
        Ok(Some(sentence))
    }
}

impl<R: BufRead> Iterator for ConlluReader<R> {
    type Item = Result<ParsedSentence, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_sentence() {
            Ok(Some(s)) => Some(Ok(s)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn open_conllu(path: &Path) -> Result<ConlluReader<BufReader<File>>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(ConlluReader::new(BufReader::new(file), path))
}

pub fn load_conllu(path: &Path) -> Result<Vec<ParsedSentence>, DatasetError> {
    open_conllu(path)?.collect()
}
