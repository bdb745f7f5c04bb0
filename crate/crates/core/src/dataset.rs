//! Multiple-choice QA samples and their JSONL on-disk form.
//!
//! One record per line:
//!
//! ```text
//! {"id": "q1", "question": "...", "options": ["...", "..."], "answer_index": 0, "meta": {"domain": "medical"}}
//! ```
//!
//! `meta` is optional. Answers are 0-based indices; letters only appear when
//! a prompt is rendered.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl QASample {
    pub fn new(id: impl Into<String>, question: impl Into<String>, options: Vec<String>, answer_index: usize) -> Self {
        QASample {
            id: id.into(),
            question: question.into(),
            options,
            answer_index,
            meta: None,
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta
            .get_or_insert_with(BTreeMap::new)
            .insert(key.into(), value.into());
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.as_ref()?.get(key).map(String::as_str)
    }

    pub fn gold_option(&self) -> &str {
        &self.options[self.answer_index]
    }

    /// Checks the per-sample invariants. The message names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("id: must not be empty".into());
        }
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(format!(
                "options: expected {MIN_OPTIONS}..={MAX_OPTIONS} options, found {n}"
            ));
        }
        if self.answer_index >= n {
            return Err(format!(
                "answer_index out of range: {} with {} options",
                self.answer_index, n
            ));
        }
        let mut seen = HashSet::with_capacity(n);
        for opt in &self.options {
            if !seen.insert(opt.as_str()) {
                return Err(format!("options: duplicate option text {opt:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<QASample>,
    pub source_path: String,
}

impl Dataset {
    /// Builds a dataset in memory, enforcing the same rules as [`load_dataset`].
    pub fn from_samples(samples: Vec<QASample>, source_path: impl Into<String>) -> Result<Self> {
        let source_path = source_path.into();
        let mut ids = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            s.validate().map_err(|message| Error::Record {
                path: source_path.clone(),
                line: i + 1,
                message,
            })?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Record {
                    path: source_path.clone(),
                    line: i + 1,
                    message: format!("duplicate id {:?}", s.id),
                });
            }
        }
        Ok(Dataset { samples, source_path })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QASample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// SHA-256 over the canonical JSONL serialization.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.samples {
            hasher.update(serde_json::to_vec(s).expect("sample serializes"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Log and drop bad lines instead of aborting the load.
    pub skip_invalid: bool,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut samples = Vec::new();
    let mut ids = HashSet::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<QASample>(&line)
            .map_err(|e| e.to_string())
            .and_then(|s| s.validate().map(|_| s))
            .and_then(|s| {
                if ids.contains(&s.id) {
                    Err(format!("duplicate id {:?}", s.id))
                } else {
                    Ok(s)
                }
            });
        match parsed {
            Ok(s) => {
                ids.insert(s.id.clone());
                samples.push(s);
            }
            Err(message) if opts.skip_invalid => {
                log::warn!("{display}, line {line_no}: skipping invalid record: {message}");
            }
            Err(message) => {
                return Err(Error::Record {
                    path: display,
                    line: line_no,
                    message,
                })
            }
        }
    }

    Ok(Dataset {
        samples,
        source_path: display,
    })
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path, &dataset.samples)
}

/// Writes one JSON value per line. Shared by every JSONL output in the crate.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSONL file strictly; any malformed line is an error naming the line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}
