use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::bio::{spans_from_tags, tag_inventory, Span, TagScheme};
use crate::dataset::{DatasetLabels, SentenceRecord};
use crate::model::encoder::{NO_POS_ID, SPECIAL_TOKENS, UNK_ID};
use crate::relations::{build_relation_matrix_lenient, LabelVocabulary, RelationMatrix};

/// The 17 Universal Dependencies part-of-speech tags; id 0 is reserved.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

pub const SPECIAL_FORMS: [&str; SPECIAL_TOKENS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Word forms: the reserved specials, then sorted training forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    forms: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenVocab {
    fn from(forms: Vec<String>) -> Self {
        let index = forms
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        Self { forms, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.forms
    }
}

impl TokenVocab {
    pub fn from_corpus<'a>(forms: impl IntoIterator<Item = &'a str>) -> Self {
        let unique: BTreeSet<&str> = forms
            .into_iter()
            .filter(|f| !SPECIAL_FORMS.contains(f))
            .collect();
        let all = SPECIAL_FORMS
            .iter()
            .copied()
            .chain(unique)
            .map(str::to_string)
            .collect::<Vec<_>>();
        all.into()
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    /// Unknown forms map to `[UNK]`.
    pub fn id(&self, form: &str) -> usize {
        self.index.get(form).copied().unwrap_or(UNK_ID)
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub tokens: Vec<usize>,
    pub pos: Vec<usize>,
    pub relations: RelationMatrix,
    /// Empty on unlabelled input.
    pub tags: Vec<usize>,
    pub sentence_label: Option<usize>,
    pub gold_spans: Vec<Span>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Everything needed to turn records into model ids and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub tokens: TokenVocab,
    pub upos: Vec<String>,
    pub dep_labels: LabelVocabulary,
    pub lf_labels: Vec<String>,
}

impl Vocabularies {
    pub fn from_training(
        train: &[SentenceRecord],
        labels: &DatasetLabels,
    ) -> Result<Self, TrainError> {
        let vocab = Self {
            tokens: TokenVocab::from_corpus(
                train
                    .iter()
                    .flat_map(|r| r.tokens.iter().map(String::as_str)),
            ),
            upos: UPOS_TAGS.iter().map(|s| s.to_string()).collect(),
            dep_labels: LabelVocabulary::from_labels(&labels.dep_labels),
            lf_labels: labels.lf_labels.clone(),
        };
        let scheme = vocab.scheme()?;
        if scheme.tags() != labels.tags.as_slice() {
            return Err(TrainError::Data(
                "labels.json tags do not match its LF list".into(),
            ));
        }
        Ok(vocab)
    }

    pub fn scheme(&self) -> Result<TagScheme, TrainError> {
        Ok(tag_inventory(&self.lf_labels)?)
    }

    pub fn pos_tag_count(&self) -> usize {
        self.upos.len() + 1
    }

    /// Unknown tags map to the reserved id 0.
    pub fn upos_id(&self, tag: &str) -> usize {
        self.upos
            .iter()
            .position(|u| u == tag)
            .map_or(NO_POS_ID, |i| i + 1)
    }

    pub fn encode(
        &self,
        rec: &SentenceRecord,
        scheme: &TagScheme,
    ) -> Result<EncodedSentence, TrainError> {
        rec.check()?;
        let graph = rec.graph()?;
        let (relations, _) =
            build_relation_matrix_lenient(&graph, &self.dep_labels, rec.len() + 2)?;
        let tags = if rec.tags.is_empty() {
            Vec::new()
        } else {
            scheme.ids_from_names(&rec.tags)?
        };
        let sentence_label = rec
            .sentence_label
            .as_ref()
            .map(|l| {
                self.lf_labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| TrainError::Data(format!("unknown sentence label {l:?}")))
            })
            .transpose()?;
        Ok(EncodedSentence {
            tokens: rec.tokens.iter().map(|t| self.tokens.id(t)).collect(),
            pos: rec.upos.iter().map(|t| self.upos_id(t)).collect(),
            relations,
            gold_spans: spans_from_tags(&tags, scheme),
            tags,
            sentence_label,
        })
    }

    pub fn encode_all(&self, recs: &[SentenceRecord]) -> Result<Vec<EncodedSentence>, TrainError> {
        let scheme = self.scheme()?;
        recs.iter().map(|r| self.encode(r, &scheme)).collect()
    }
}
