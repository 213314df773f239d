//! Collocation lists: `lf, base_lemma, base_pos, collocate_lemma,
//! collocate_pos`, tab separated, `#` comments.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollocationInstance {
    pub lf: String,
    /// Space-joined lemmas; may be multiword.
    pub base_lemma: String,
    pub base_pos: String,
    pub collocate_lemma: String,
    pub collocate_pos: String,
}

impl CollocationInstance {
    /// `(lf, base, collocate)` identity.
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.lf, &self.base_lemma, &self.collocate_lemma)
    }
}

/// Parses list text; duplicates keep their first occurrence.
pub fn parse_collocation_list(
    text: &str,
    source: &Path,
) -> Result<Vec<CollocationInstance>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let error = |message: String| DatasetError::Collocations {
            path: source.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(error(format!("expected 5 columns, found {}", cols.len())));
        }
        if let Some(c) = cols.iter().position(|c| c.is_empty()) {
            return Err(error(format!("column {} is empty", c + 1)));
        }
        let normalize = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        let inst = CollocationInstance {
            lf: cols[0].to_string(),
            base_lemma: normalize(cols[1]),
            base_pos: cols[2].to_string(),
            collocate_lemma: normalize(cols[3]),
            collocate_pos: cols[4].to_string(),
        };
        if seen.insert(inst.clone()) {
            out.push(inst);
        }
    }
    Ok(out)
}

pub fn load_collocation_list(path: &Path) -> Result<Vec<CollocationInstance>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_collocation_list(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<CollocationInstance>, DatasetError> {
        parse_collocation_list(text, Path::new("list.tsv"))
    }

    #[test]
    fn one_line_one_instance() {
        let list = parse("Magn\tsmoker\tNOUN\theavy\tADJ\n").unwrap();
        assert_eq!(
            list,
            vec![CollocationInstance {
                lf: "Magn".into(),
                base_lemma: "smoker".into(),
                base_pos: "NOUN".into(),
                collocate_lemma: "heavy".into(),
                collocate_pos: "ADJ".into(),
            }]
        );
        assert_eq!(list[0].key(), ("Magn", "smoker", "heavy"));
    }

    #[test]
    fn duplicates_and_comments() {
        let text = "# header\nMagn\tsmoker\tNOUN\theavy\tADJ\n\nOper1\tdecision\tNOUN\ttake\tVERB\nMagn\tsmoker\tNOUN\theavy\tADJ\n";
        let list = parse(text).unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(list[1].lf, "Oper1");
    }

    #[test]
    fn multiword_lemmas_are_normalized() {
        let list = parse("Magn\tgrand  slam\tNOUN\trecord-breaking\tADJ").unwrap();
        assert_eq!(list[0].base_lemma, "grand slam");
    }

    #[test]
    fn wrong_column_count_reports_line() {
        match parse("# c\nMagn\tsmoker\tNOUN\theavy\tADJ\nMagn\tsmoker\tNOUN\theavy\n") {
            Err(DatasetError::Collocations { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse("Magn\t\tNOUN\theavy\tADJ").is_err());
    }
}
