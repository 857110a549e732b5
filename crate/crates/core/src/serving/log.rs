use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ServingError;

pub const DEFAULT_ROTATE_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictionLogRecord {
    /// Milliseconds since the epoch.
    pub wall_timestamp: i64,
    pub anonymous_id: String,
    pub family_id: String,
    pub version_id: String,
    pub event_ids: Vec<String>,
    pub value: f64,
    pub calibrated: bool,
    pub cold_start: bool,
}

enum Sink {
    Memory(Vec<PredictionLogRecord>),
    File {
        path: PathBuf,
        file: File,
        written: u64,
        max_bytes: u64,
        rotations: usize,
    },
}

/// Append-only prediction log: newline-delimited JSON on disk, rotated to
/// `<path>.1`, `<path>.2`, ... once a file would exceed `max_bytes`.
pub struct PredictionLog {
    sink: Mutex<Sink>,
}

impl std::fmt::Debug for PredictionLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PredictionLog")
    }
}

fn rotated(path: &Path, n: usize) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".{n}"));
    PathBuf::from(s)
}

impl PredictionLog {
    pub fn in_memory() -> Self {
        PredictionLog {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    pub fn open(path: impl AsRef<Path>, max_bytes: u64) -> Result<Self, ServingError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let written = file.metadata()?.len();
        let mut rotations = 0;
        while rotated(&path, rotations + 1).exists() {
            rotations += 1;
        }
        Ok(PredictionLog {
            sink: Mutex::new(Sink::File {
                path,
                file,
                written,
                max_bytes: max_bytes.max(1),
                rotations,
            }),
        })
    }

    pub fn append(&self, record: &PredictionLogRecord) -> Result<(), ServingError> {
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        match &mut *sink {
            Sink::Memory(v) => v.push(record.clone()),
            Sink::File {
                path,
                file,
                written,
                max_bytes,
                rotations,
            } => {
                let mut line = serde_json::to_vec(record).map_err(|e| ServingError::Format(e.to_string()))?;
                line.push(b'\n');
                if *written > 0 && *written + line.len() as u64 > *max_bytes {
                    file.flush()?;
                    *rotations += 1;
                    std::fs::rename(&*path, rotated(path, *rotations))?;
                    *file = OpenOptions::new().create(true).append(true).open(&*path)?;
                    *written = 0;
                }
                file.write_all(&line)?;
                *written += line.len() as u64;
            }
        }
        Ok(())
    }

    /// Records held by an in-memory log; empty for file logs.
    pub fn records(&self) -> Vec<PredictionLogRecord> {
        match &*self.sink.lock().unwrap_or_else(|p| p.into_inner()) {
            Sink::Memory(v) => v.clone(),
            Sink::File { .. } => Vec::new(),
        }
    }
}

/// Reads a log and its rotated predecessors, oldest first.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<PredictionLogRecord>, ServingError> {
    let path = path.as_ref();
    let mut files = Vec::new();
    let mut n = 1;
    while rotated(path, n).exists() {
        files.push(rotated(path, n));
        n += 1;
    }
    if path.exists() {
        files.push(path.to_path_buf());
    }
    let mut out = Vec::new();
    for f in files {
        for line in BufReader::new(File::open(&f)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| ServingError::Format(format!("{}: {e}", f.display())))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: i64) -> PredictionLogRecord {
        PredictionLogRecord {
            wall_timestamp: i,
            anonymous_id: format!("u{i}"),
            family_id: "f".into(),
            version_id: "v0001".into(),
            event_ids: vec![format!("{i}:page")],
            value: 0.1 * i as f64,
            calibrated: i % 2 == 0,
            cold_start: false,
        }
    }

    #[test]
    fn rotation_keeps_every_record_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/predictions.ndjson");
        let log = PredictionLog::open(&path, 400).unwrap();
        for i in 0..20 {
            log.append(&record(i)).unwrap();
        }
        drop(log);
        assert!(rotated(&path, 1).exists());
        let back = read_log(&path).unwrap();
        assert_eq!(back, (0..20).map(record).collect::<Vec<_>>());

        let log = PredictionLog::open(&path, 400).unwrap();
        log.append(&record(20)).unwrap();
        drop(log);
        assert_eq!(read_log(&path).unwrap().len(), 21);
    }
}
