//! BIO tagging of collocation bases and collocates.
//!
//! Tags are `O` plus, for every lexical function `LF`, `B-LF_b`, `I-LF_b`
//! (base) and `B-LF_c`, `I-LF_c` (collocate). Base and collocate of one
//! collocation are separate spans and need not be adjacent.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("tag inventory needs at least one lexical function")]
    NoLabels,
    #[error("duplicate lexical function {0:?}")]
    DuplicateLabel(String),
    #[error("unknown lexical function {0:?}")]
    UnknownLabel(String),
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("span {start}..={end} invalid for sentence of {len} tokens")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("token {0} belongs to more than one span")]
    Overlap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Base,
    Collocate,
}

impl Role {
    pub fn suffix(self) -> &'static str {
        match self {
            Role::Base => "b",
            Role::Collocate => "c",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// Inclusive word range carrying a lexical function and a role.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub lf: String,
    pub role: Role,
}

impl Span {
    pub fn new(start: usize, end: usize, lf: impl Into<String>, role: Role) -> Self {
        Self {
            start,
            end,
            lf: lf.into(),
            role,
        }
    }

    /// `LF_role`, e.g. `Magn_b`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.lf, self.role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind {
    Outside,
    Begin { lf: usize, role: Role },
    Inside { lf: usize, role: Role },
}

pub const OUTSIDE: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagScheme {
    lf_labels: Vec<String>,
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

/// `O` first, then for each LF in the given order `B-LF_b, I-LF_b, B-LF_c, I-LF_c`.
pub fn tag_inventory<S: AsRef<str>>(lf_labels: &[S]) -> Result<TagScheme, CodecError> {
    if lf_labels.is_empty() {
        return Err(CodecError::NoLabels);
    }
    let mut labels: Vec<String> = Vec::with_capacity(lf_labels.len());
    for l in lf_labels {
        let l = l.as_ref();
        if labels.iter().any(|x| x == l) {
            return Err(CodecError::DuplicateLabel(l.to_string()));
        }
        labels.push(l.to_string());
    }
    let mut tags = vec!["O".to_string()];
    for l in &labels {
        for (prefix, role) in [
            ("B", Role::Base),
            ("I", Role::Base),
            ("B", Role::Collocate),
            ("I", Role::Collocate),
        ] {
            tags.push(format!("{prefix}-{l}_{}", role.suffix()));
        }
    }
    let index = tags
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(TagScheme {
        lf_labels: labels,
        tags,
        index,
    })
}

impl TagScheme {
    pub fn lf_labels(&self) -> &[String] {
        &self.lf_labels
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn lf_index(&self, lf: &str) -> Option<usize> {
        self.lf_labels.iter().position(|l| l == lf)
    }

    pub fn tag_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tag_name(&self, id: usize) -> Option<&str> {
        self.tags.get(id).map(String::as_str)
    }

    fn offset(role: Role, inside: bool) -> usize {
        match (role, inside) {
            (Role::Base, false) => 1,
            (Role::Base, true) => 2,
            (Role::Collocate, false) => 3,
            (Role::Collocate, true) => 4,
        }
    }

    pub fn begin(&self, lf: usize, role: Role) -> usize {
        4 * lf + Self::offset(role, false)
    }

    pub fn inside(&self, lf: usize, role: Role) -> usize {
        4 * lf + Self::offset(role, true)
    }

    /// Out-of-range ids read as `O`.
    pub fn kind(&self, id: usize) -> TagKind {
        if id == OUTSIDE || id >= self.tags.len() {
            return TagKind::Outside;
        }
        let lf = (id - 1) / 4;
        match (id - 1) % 4 {
            0 => TagKind::Begin {
                lf,
                role: Role::Base,
            },
            1 => TagKind::Inside {
                lf,
                role: Role::Base,
            },
            2 => TagKind::Begin {
                lf,
                role: Role::Collocate,
            },
            _ => TagKind::Inside {
                lf,
                role: Role::Collocate,
            },
        }
    }

    pub fn ids_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>, CodecError> {
        names
            .iter()
            .map(|n| {
                self.tag_id(n.as_ref())
                    .ok_or_else(|| CodecError::UnknownTag(n.as_ref().to_string()))
            })
            .collect()
    }

    pub fn names_from_ids(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.tag_name(i).unwrap_or("O").to_string())
            .collect()
    }
}

pub fn tags_from_spans(
    spans: &[Span],
    len: usize,
    scheme: &TagScheme,
) -> Result<Vec<usize>, CodecError> {
    let mut tags = vec![OUTSIDE; len];
    let mut taken = vec![false; len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(CodecError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
        let lf = scheme
            .lf_index(&s.lf)
            .ok_or_else(|| CodecError::UnknownLabel(s.lf.clone()))?;
        for i in s.start..=s.end {
            if taken[i] {
                return Err(CodecError::Overlap(i));
            }
            taken[i] = true;
            tags[i] = if i == s.start {
                scheme.begin(lf, s.role)
            } else {
                scheme.inside(lf, s.role)
            };
        }
    }
    Ok(tags)
}

/// Rewrites every `I-X` not preceded by `B-X` or `I-X` as `B-X`.
pub fn repair(tags: &[usize], scheme: &TagScheme) -> Vec<usize> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev = TagKind::Outside;
    for &id in tags {
        let kind = scheme.kind(id);
        let fixed = match kind {
            TagKind::Inside { lf, role } => match prev {
                TagKind::Begin { lf: pl, role: pr } | TagKind::Inside { lf: pl, role: pr }
                    if pl == lf && pr == role =>
                {
                    id
                }
                _ => scheme.begin(lf, role),
            },
            TagKind::Outside => OUTSIDE,
            TagKind::Begin { .. } => id,
        };
        prev = scheme.kind(fixed);
        out.push(fixed);
    }
    out
}

/// Decodes maximal runs into spans, ordered by start. Orphan `I` tags are
/// repaired first.
pub fn spans_from_tags(tags: &[usize], scheme: &TagScheme) -> Vec<Span> {
    let tags = repair(tags, scheme);
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize, Role)> = None;
    let close = |open: &mut Option<(usize, usize, Role)>, end: usize, spans: &mut Vec<Span>| {
        if let Some((start, lf, role)) = open.take() {
            spans.push(Span::new(start, end, scheme.lf_labels[lf].clone(), role));
        }
    };
    for (i, &id) in tags.iter().enumerate() {
        match scheme.kind(id) {
            TagKind::Outside => close(&mut open, i.saturating_sub(1), &mut spans),
            TagKind::Begin { lf, role } => {
                close(&mut open, i.saturating_sub(1), &mut spans);
                open = Some((i, lf, role));
            }
            TagKind::Inside { .. } => {}
        }
    }
    close(&mut open, tags.len().saturating_sub(1), &mut spans);
    spans
}
