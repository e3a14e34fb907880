use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, SimError};

/// Prefix of the first line of every text artifact.
pub const HASH_PREFIX: &str = "# config_hash=";

/// Writes the files of one run into a directory. Every text file starts with a
/// `# config_hash=<hex>` line; JSON documents carry the hash as a field instead.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: &Path, hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| SimError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn header(&self) -> String {
        format!("{HASH_PREFIX}{}\n", self.hash)
    }

    /// Text file with the hash line prepended.
    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let full = self.header() + body;
        self.put(name, &full)
    }

    pub fn csv<I, S>(&mut self, name: &str, columns: &str, rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut body = format!("{columns}\n");
        for r in rows {
            body.push_str(r.as_ref());
            body.push('\n');
        }
        self.text(name, &body)
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<PathBuf> {
        let mut body = String::new();
        for r in records {
            body.push_str(&serde_json::to_string(r).expect("record serializes"));
            body.push('\n');
        }
        self.text(name, &body)
    }

    /// Raw file whose format already embeds the hash.
    pub fn raw(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        self.put(name, body)
    }

    /// Binary file: the hash line followed by `bytes`.
    pub fn binary(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let mut full = self.header().into_bytes();
        full.extend_from_slice(bytes);
        self.put(name, full)
    }
}

/// Hash recorded in an artifact: the header line of text files, or the
/// `config_hash` field anywhere in a JSON document.
pub fn artifact_hash(text: &str) -> Option<String> {
    if let Some(rest) = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(HASH_PREFIX))
    {
        return Some(rest.trim().to_string());
    }
    let value: serde_json::Value = serde_json::from_str(text).ok()?;
    find_hash(&value)
}

fn find_hash(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Object(map) => map
            .get("config_hash")
            .and_then(|h| h.as_str().map(str::to_string))
            .or_else(|| map.values().find_map(find_hash)),
        serde_json::Value::Array(items) => items.iter().find_map(find_hash),
        _ => None,
    }
}

/// Drops the hash line and other `#` comment lines.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .fold(String::new(), |mut s, l| {
            let _ = writeln!(s, "{l}");
            s
        })
}

/// One append-only log record. `tick` is a logical clock that increases by one per
/// record, so logs stay byte-reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct LogRecord {
    pub tick: u64,
    pub run_id: String,
    pub phase: String,
    pub epoch_or_round: u64,
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    run_id: String,
    hash: String,
    records: Vec<LogRecord>,
}

impl RunLog {
    pub fn new(command: &str, hash: &str) -> Self {
        Self {
            run_id: format!("{command}-{hash}"),
            hash: hash.to_string(),
            records: Vec::new(),
        }
    }

    pub fn record(&mut self, phase: &str, epoch_or_round: u64, metric: &str, value: f64) {
        self.records.push(LogRecord {
            tick: self.records.len() as u64,
            run_id: self.run_id.clone(),
            phase: phase.to_string(),
            epoch_or_round,
            metric: metric.to_string(),
            value,
            config_hash: self.hash.clone(),
        });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn write(&self, artifacts: &mut Artifacts) -> Result<PathBuf> {
        artifacts.jsonl("run_log.jsonl", &self.records)
    }
}

/// Formats an `f64` so it reads back bit-exactly.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
