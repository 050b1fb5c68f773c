//! Sentences, trigger mentions, event schemas and the two labeling paradigms.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Reserved label for words that trigger no in-schema event.
pub const NA_LABEL: &str = "N.A.";

/// Default maximum candidate span length for span classification.
pub const DEFAULT_MAX_SPAN_LEN: usize = 3;

/// A typed trigger span `[start, end)` over token indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Mention {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Mention { start, end, label: label.into() }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// A pre-tokenized sentence with non-overlapping trigger mentions, kept
/// sorted by start offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    id: String,
    tokens: Vec<String>,
    mentions: Vec<Mention>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, mut mentions: Vec<Mention>) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidSentence { id: id.clone(), reason };
        if tokens.is_empty() {
            return Err(invalid("sentence has no tokens".into()));
        }
        for m in &mentions {
            if m.start >= m.end {
                return Err(invalid(format!("empty span [{}, {})", m.start, m.end)));
            }
            if m.end > tokens.len() {
                return Err(invalid(format!(
                    "span [{}, {}) out of range for {} tokens",
                    m.start,
                    m.end,
                    tokens.len()
                )));
            }
            if m.label == NA_LABEL {
                return Err(invalid(format!("mention uses reserved label {NA_LABEL}")));
            }
        }
        mentions.sort();
        for pair in mentions.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(invalid(format!(
                    "overlapping mentions [{}, {}) and [{}, {})",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                )));
            }
        }
        Ok(Sentence { id, tokens, mentions })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn mentions(&self) -> &[Mention] {
        &self.mentions
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Same tokens and id, with mentions filtered by `keep`.
    pub fn retain_mentions(&self, mut keep: impl FnMut(&Mention) -> bool) -> Sentence {
        Sentence {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            mentions: self.mentions.iter().filter(|m| keep(m)).cloned().collect(),
        }
    }

    /// Label of the mention covering `token`, if any.
    pub fn label_at(&self, token: usize) -> Option<&str> {
        self.mentions
            .iter()
            .find(|m| m.start <= token && token < m.end)
            .map(|m| m.label.as_str())
    }
}

/// Ordered event-type set plus natural-language label texts.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    types: Vec<String>,
    label_texts: BTreeMap<String, String>,
}

/// Replace `-`, `_`, `.`, `:` and `/` separators with spaces.
pub fn default_label_text(ty: &str) -> String {
    let spaced: String = ty
        .chars()
        .map(|c| if matches!(c, '-' | '_' | '.' | ':' | '/') { ' ' } else { c })
        .collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Schema {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Result<Self> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for t in &types {
            if t.is_empty() {
                return Err(Error::InvalidSchema("empty type name".into()));
            }
            if t == NA_LABEL {
                return Err(Error::InvalidSchema(format!("{NA_LABEL} is reserved")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate type `{t}`")));
            }
        }
        Ok(Schema { types, label_texts: BTreeMap::new() })
    }

    /// Override label texts; keys must be schema types and texts non-blank.
    pub fn with_label_texts(mut self, texts: BTreeMap<String, String>) -> Result<Self> {
        for (ty, text) in &texts {
            if self.index_of(ty).is_none() {
                return Err(Error::UnknownType(ty.clone()));
            }
            if text.trim().is_empty() {
                return Err(Error::InvalidSchema(format!("blank label text for `{ty}`")));
            }
        }
        self.label_texts = texts;
        Ok(self)
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn index_of(&self, ty: &str) -> Option<usize> {
        self.types.iter().position(|t| t == ty)
    }

    /// Label-space index: schema types first, N.A. last.
    pub fn label_index(&self, label: Option<&str>) -> Result<usize> {
        match label {
            None => Ok(self.types.len()),
            Some(l) => self.index_of(l).ok_or_else(|| Error::UnknownType(l.to_string())),
        }
    }

    /// Number of labels including N.A.
    pub fn n_labels(&self) -> usize {
        self.types.len() + 1
    }

    pub fn label_name(&self, index: usize) -> &str {
        self.types.get(index).map_or(NA_LABEL, String::as_str)
    }

    pub fn label_text(&self, ty: &str) -> String {
        self.label_texts.get(ty).cloned().unwrap_or_else(|| default_label_text(ty))
    }

    /// Only explicitly configured label texts.
    pub fn explicit_label_texts(&self) -> &BTreeMap<String, String> {
        &self.label_texts
    }

    /// Sub-schema keeping `keep` in this schema's order, with their texts.
    pub fn restrict(&self, keep: &BTreeSet<String>) -> Result<Schema> {
        let types: Vec<String> = self.types.iter().filter(|t| keep.contains(*t)).cloned().collect();
        let texts = self
            .label_texts
            .iter()
            .filter(|(k, _)| keep.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Schema::new(types)?.with_label_texts(texts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Paradigm {
    #[default]
    SequenceLabeling,
    SpanClassification,
}

/// Sentences validated against a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    sentences: Vec<Sentence>,
    paradigm: Paradigm,
}

impl Dataset {
    pub fn new(schema: Schema, sentences: Vec<Sentence>, paradigm: Paradigm) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for s in &sentences {
            if !ids.insert(s.id()) {
                return Err(Error::InvalidSentence { id: s.id().into(), reason: "duplicate sentence id".into() });
            }
            for m in s.mentions() {
                if schema.index_of(&m.label).is_none() {
                    return Err(Error::UnknownType(m.label.clone()));
                }
            }
        }
        Ok(Dataset { schema, sentences, paradigm })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn paradigm(&self) -> Paradigm {
        self.paradigm
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn n_mentions(&self) -> usize {
        self.sentences.iter().map(|s| s.mentions().len()).sum()
    }

    /// Mention count per schema type, in schema order.
    pub fn type_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.schema.len()];
        for s in &self.sentences {
            for m in s.mentions() {
                if let Some(i) = self.schema.index_of(&m.label) {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    /// Same schema and paradigm, different sentences (revalidated).
    pub fn with_sentences(&self, sentences: Vec<Sentence>) -> Result<Dataset> {
        Dataset::new(self.schema.clone(), sentences, self.paradigm)
    }

    pub fn with_paradigm(mut self, paradigm: Paradigm) -> Dataset {
        self.paradigm = paradigm;
        self
    }
}

/// Index-level BIO alphabet: `O = 0`, `B-t = 1 + 2t`, `I-t = 2 + 2t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TagSet {
    n_types: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

impl TagSet {
    pub fn new(n_types: usize) -> Self {
        TagSet { n_types }
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.n_types
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Begin(t) => 1 + 2 * t,
            Tag::Inside(t) => 2 + 2 * t,
        }
    }

    pub fn tag(&self, index: usize) -> Tag {
        match index {
            0 => Tag::Outside,
            i if i % 2 == 1 => Tag::Begin((i - 1) / 2),
            i => Tag::Inside((i - 2) / 2),
        }
    }

    /// Label-space index of a tag (N.A. is `n_types`).
    pub fn label_of(&self, index: usize) -> usize {
        match self.tag(index) {
            Tag::Outside => self.n_types,
            Tag::Begin(t) | Tag::Inside(t) => t,
        }
    }

    /// Gold tag indices of a sentence.
    pub fn encode(&self, sentence: &Sentence, schema: &Schema) -> Result<Vec<usize>> {
        let mut tags = alloc::vec![0; sentence.len()];
        for m in sentence.mentions() {
            let t = schema.index_of(&m.label).ok_or_else(|| Error::UnknownType(m.label.clone()))?;
            tags[m.start] = self.index(Tag::Begin(t));
            for tag in &mut tags[m.start + 1..m.end] {
                *tag = self.index(Tag::Inside(t));
            }
        }
        Ok(tags)
    }

    /// Lenient decoding of tag indices into mentions.
    pub fn decode(&self, tags: &[usize], schema: &Schema) -> Vec<Mention> {
        let mut out: Vec<Mention> = Vec::new();
        let mut open: Option<(usize, usize)> = None;
        for (i, &idx) in tags.iter().enumerate() {
            match self.tag(idx) {
                Tag::Outside => {
                    if let Some((s, t)) = open.take() {
                        out.push(Mention::new(s, i, schema.label_name(t)));
                    }
                }
                Tag::Begin(t) => {
                    if let Some((s, pt)) = open.take() {
                        out.push(Mention::new(s, i, schema.label_name(pt)));
                    }
                    open = Some((i, t));
                }
                Tag::Inside(t) => match open {
                    Some((_, pt)) if pt == t => {}
                    _ => {
                        if let Some((s, pt)) = open.take() {
                            out.push(Mention::new(s, i, schema.label_name(pt)));
                        }
                        open = Some((i, t));
                    }
                },
            }
        }
        if let Some((s, t)) = open {
            out.push(Mention::new(s, tags.len(), schema.label_name(t)));
        }
        out
    }
}

/// BIO tag strings for a sentence.
pub fn encode_bio(sentence: &Sentence, schema: &Schema) -> Vec<String> {
    let mut tags = alloc::vec![String::from("O"); sentence.len()];
    for m in sentence.mentions() {
        debug_assert!(schema.index_of(&m.label).is_some());
        tags[m.start] = format!("B-{}", m.label);
        for tag in &mut tags[m.start + 1..m.end] {
            *tag = format!("I-{}", m.label);
        }
    }
    tags
}

/// Decode BIO tag strings. Maximal B/I runs become mentions; an `I-t` after
/// `O` or after a different type opens a new mention.
pub fn decode_bio<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Mention>> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        if tag == "O" {
            if let Some((s, t)) = open.take() {
                out.push(Mention::new(s, i, t));
            }
            continue;
        }
        let (begin, ty) = match (tag.strip_prefix("B-"), tag.strip_prefix("I-")) {
            (Some(t), _) if !t.is_empty() => (true, t),
            (_, Some(t)) if !t.is_empty() => (false, t),
            _ => return Err(Error::UnknownTag(tag.into())),
        };
        let continues = !begin && matches!(open, Some((_, t)) if t == ty);
        if !continues {
            if let Some((s, t)) = open.take() {
                out.push(Mention::new(s, i, t));
            }
            open = Some((i, ty));
        }
    }
    if let Some((s, t)) = open {
        out.push(Mention::new(s, tags.len(), t));
    }
    Ok(out)
}

/// All spans `[i, j)` with `1 <= j - i <= max_len`, lexicographically ordered.
pub fn enumerate_spans(n_tokens: usize, max_len: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for i in 0..n_tokens {
        for j in i + 1..=(i + max_len).min(n_tokens) {
            spans.push((i, j));
        }
    }
    spans
}
