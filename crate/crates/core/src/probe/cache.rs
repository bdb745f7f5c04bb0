//! Append-only JSONL store of completed probe results.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::ProbeResult;
use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct ProbeCache {
    path: Option<PathBuf>,
    entries: HashMap<(String, String), ProbeResult>,
}

impl ProbeCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        ProbeCache::default()
    }

    /// Opens (or creates) a cache file. A truncated final line is dropped
    /// with a warning and cut from the file; corruption anywhere else is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut reader = BufReader::new(file);
            let mut good_len: u64 = 0;
            let mut line_no = 0;
            let mut buf = String::new();
            let mut pending_error: Option<(usize, String)> = None;
            loop {
                buf.clear();
                let read = reader.read_line(&mut buf).map_err(|e| Error::io(&path, e))?;
                if read == 0 {
                    break;
                }
                line_no += 1;
                if let Some((ln, msg)) = pending_error.take() {
                    return Err(Error::Record {
                        path: path.display().to_string(),
                        line: ln,
                        message: msg,
                    });
                }
                if buf.trim().is_empty() {
                    good_len += read as u64;
                    continue;
                }
                match serde_json::from_str::<ProbeResult>(buf.trim_end()) {
                    Ok(r) if buf.ends_with('\n') => {
                        good_len += read as u64;
                        entries.insert((r.sample_id.clone(), r.config_fingerprint.clone()), r);
                    }
                    Ok(_) => pending_error = Some((line_no, "record missing newline terminator".into())),
                    Err(e) => pending_error = Some((line_no, e.to_string())),
                }
            }
            if let Some((ln, msg)) = pending_error {
                log::warn!("{}: dropping truncated trailing line {ln} ({msg})", path.display());
                let f = OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                f.set_len(good_len).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(ProbeCache {
            path: Some(path),
            entries,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample_id: &str, fingerprint: &str) -> Option<&ProbeResult> {
        self.entries.get(&(sample_id.to_string(), fingerprint.to_string()))
    }

    pub fn insert(&mut self, result: ProbeResult) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut line = serde_json::to_vec(&result)?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(path, e))?;
        }
        self.entries
            .insert((result.sample_id.clone(), result.config_fingerprint.clone()), result);
        Ok(())
    }

    pub fn results_for(&self, fingerprint: &str) -> impl Iterator<Item = &ProbeResult> {
        let fp = fingerprint.to_string();
        self.entries.values().filter(move |r| r.config_fingerprint == fp)
    }
}
