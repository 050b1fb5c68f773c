//! JSONL corpus and JSON schema files.
//!
//! Corpus lines look like
//! `{"id": "s1", "tokens": ["he", "quit"], "events": [{"type": "End-Position", "start": 1, "end": 2}]}`
//! with `end` exclusive. Schema files look like
//! `{"types": ["Attack", ...], "label_texts": {"Attack": "attack"}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use protoed_core::corpus::{Dataset, Mention, Paradigm, Schema, Sentence};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    #[serde(rename = "type")]
    pub ty: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    /// Optional in prediction files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
    #[serde(default)]
    pub events: Vec<EventRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub types: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_texts: BTreeMap<String, String>,
}

impl SentenceRecord {
    pub fn from_sentence(s: &Sentence) -> Self {
        SentenceRecord {
            id: s.id().to_string(),
            tokens: s.tokens().to_vec(),
            events: mention_records(s.mentions()),
        }
    }

    pub fn mentions(&self) -> Vec<Mention> {
        self.events.iter().map(|e| Mention::new(e.start, e.end, e.ty.clone())).collect()
    }
}

fn mention_records(ms: &[Mention]) -> Vec<EventRecord> {
    ms.iter().map(|m| EventRecord { ty: m.label.clone(), start: m.start, end: m.end }).collect()
}

/// All records of a JSONL file, skipping blank lines.
pub fn read_records(path: &Path) -> Result<Vec<SentenceRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn build_dataset(records: Vec<SentenceRecord>, schema: Schema, paradigm: Paradigm) -> Result<Dataset> {
    let sentences = records
        .into_iter()
        .map(|r| {
            let ms = r.mentions();
            Sentence::new(r.id, r.tokens, ms)
        })
        .collect::<protoed_core::Result<Vec<_>>>()?;
    Ok(Dataset::new(schema, sentences, paradigm)?)
}

/// Parse a corpus whose schema is the sorted set of event types it uses.
pub fn parse_corpus(path: &Path) -> Result<Dataset> {
    let records = read_records(path)?;
    let types: BTreeSet<&str> = records.iter().flat_map(|r| r.events.iter().map(|e| e.ty.as_str())).collect();
    let schema = Schema::new(types)?;
    build_dataset(records, schema, Paradigm::SequenceLabeling)
}

/// Parse a corpus against an explicit schema.
pub fn parse_corpus_with_schema(path: &Path, schema: Schema, paradigm: Paradigm) -> Result<Dataset> {
    build_dataset(read_records(path)?, schema, paradigm)
}

/// Parse `corpus`, against `schema` when given.
pub fn load_corpus(corpus: &Path, schema: Option<&Path>, paradigm: Paradigm) -> Result<Dataset> {
    match schema {
        Some(s) => parse_corpus_with_schema(corpus, read_schema(s)?, paradigm),
        None => Ok(parse_corpus(corpus)?.with_paradigm(paradigm)),
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus(path: &Path, dataset: &Dataset) -> Result<()> {
    write_lines(path, dataset.sentences().iter().map(SentenceRecord::from_sentence))
}

/// Prediction file: one `{"id", "events"}` line per sentence.
pub fn write_predictions(path: &Path, predictions: &[(String, Vec<Mention>)]) -> Result<()> {
    write_lines(
        path,
        predictions.iter().map(|(id, ms)| SentenceRecord { id: id.clone(), tokens: Vec::new(), events: mention_records(ms) }),
    )
}

/// `(id, mentions)` pairs of a corpus or prediction file.
pub fn read_mentions(path: &Path) -> Result<Vec<(String, Vec<Mention>)>> {
    let records = read_records(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if let Some(e) = r.events.iter().find(|e| e.start >= e.end) {
            return Err(Error::Core(protoed_core::Error::InvalidSentence {
                id: r.id.clone(),
                reason: format!("empty span [{}, {})", e.start, e.end),
            }));
        }
        if !seen.insert(r.id.clone()) {
            return Err(Error::Core(protoed_core::Error::InvalidSentence { id: r.id, reason: "duplicate id".into() }));
        }
        let ms = r.mentions();
        out.push((r.id, ms));
    }
    Ok(out)
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SchemaFile =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })?;
    Ok(Schema::new(file.types)?.with_label_texts(file.label_texts)?)
}

pub fn schema_file(schema: &Schema) -> SchemaFile {
    SchemaFile { types: schema.types().to_vec(), label_texts: schema.explicit_label_texts().clone() }
}

pub fn write_schema(path: &Path, schema: &Schema) -> Result<()> {
    let text = serde_json::to_string_pretty(&schema_file(schema)).expect("schema serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
