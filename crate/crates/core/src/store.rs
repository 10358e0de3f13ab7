//! Line-delimited JSON store of labeled embeddings.
//!
//! One record per line with fields `id`, `label`, `sublabel`, `caption`,
//! `model_id`, `dim`, `values`. Floats are written in shortest round-trip
//! form, so a save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// A labeled, captioned embedding: one element of a learning or test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarRecord {
    pub id: String,
    pub label: String,
    pub sublabel: Option<String>,
    pub caption: String,
    pub embedding: Embedding,
}

impl ExemplarRecord {
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        embedding: Embedding,
    ) -> Result<Self> {
        let record = ExemplarRecord {
            id: id.into(),
            label: label.into(),
            sublabel: None,
            caption: String::new(),
            embedding,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = caption.into();
        self
    }

    pub fn with_sublabel(mut self, sublabel: impl Into<String>) -> Self {
        let s = sublabel.into();
        self.sublabel = if s.is_empty() { None } else { Some(s) };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.trim().is_empty() {
            return Err(Error::Label(format!("record {:?} has an empty label", self.id)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    id: std::borrow::Cow<'a, str>,
    label: std::borrow::Cow<'a, str>,
    #[serde(default)]
    sublabel: Option<std::borrow::Cow<'a, str>>,
    #[serde(default)]
    caption: std::borrow::Cow<'a, str>,
    model_id: std::borrow::Cow<'a, str>,
    dim: usize,
    values: std::borrow::Cow<'a, [f64]>,
}

pub fn write_records<W: Write>(records: &[ExemplarRecord], mut out: W) -> Result<()> {
    if let Some(first) = records.first() {
        let model = first.embedding.model_id();
        if let Some(other) = records.iter().find(|r| r.embedding.model_id() != model) {
            return Err(Error::Store(format!(
                "mixed model ids: {model:?} and {:?} (record {:?})",
                other.embedding.model_id(),
                other.id
            )));
        }
    }
    for r in records {
        let line = Line {
            id: r.id.as_str().into(),
            label: r.label.as_str().into(),
            sublabel: r.sublabel.as_deref().map(Into::into),
            caption: r.caption.as_str().into(),
            model_id: r.embedding.model_id().into(),
            dim: r.embedding.dim(),
            values: r.embedding.values().into(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Store(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::Store(e.to_string()))?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<ExemplarRecord>> {
    let mut records: Vec<ExemplarRecord> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let raw: Line = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if raw.dim != raw.values.len() {
            return Err(parse_err(format!(
                "dim {} does not match {} values",
                raw.dim,
                raw.values.len()
            )));
        }
        let embedding = Embedding::new(raw.model_id.into_owned(), raw.values.into_owned())
            .map_err(|e| parse_err(e.to_string()))?;
        if let Some(first) = records.first() {
            if first.embedding.model_id() != embedding.model_id() {
                return Err(parse_err(format!(
                    "model id {:?} differs from {:?}",
                    embedding.model_id(),
                    first.embedding.model_id()
                )));
            }
        }
        let record = ExemplarRecord {
            id: raw.id.into_owned(),
            label: raw.label.into_owned(),
            sublabel: raw.sublabel.map(|s| s.into_owned()).filter(|s| !s.is_empty()),
            caption: raw.caption.into_owned(),
            embedding,
        };
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

pub fn save(records: &[ExemplarRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_records(records, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<ExemplarRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file))
}
