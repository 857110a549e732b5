//! Newline-delimited JSON event archive.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::{preprocess_event, Event, SessionError};

#[derive(Debug, Default)]
pub struct ArchiveRead {
    pub events: Vec<Event>,
    /// Lines that were not JSON objects or failed preprocessing.
    pub malformed: usize,
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<ArchiveRead, SessionError> {
    let file = File::open(path)?;
    read_archive_from(BufReader::new(file))
}

pub fn read_archive_from(reader: impl BufRead) -> Result<ArchiveRead, SessionError> {
    let mut out = ArchiveRead::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Map<String, Value>>(&line)
            .ok()
            .and_then(|raw| preprocess_event(&raw).ok());
        match parsed {
            Some(event) => out.events.push(event),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

pub fn write_archive(path: impl AsRef<Path>, events: &[Event]) -> Result<(), SessionError> {
    let mut writer = ArchiveWriter::create(path)?;
    writer.write_all(events)?;
    writer.flush()
}

/// Appending writer, one JSON object per line.
pub struct ArchiveWriter {
    inner: BufWriter<File>,
}

impl ArchiveWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        Ok(ArchiveWriter {
            inner: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ArchiveWriter {
            inner: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, event: &Event) -> Result<(), SessionError> {
        serde_json::to_writer(&mut self.inner, event).map_err(std::io::Error::from)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_all(&mut self, events: &[Event]) -> Result<(), SessionError> {
        events.iter().try_for_each(|e| self.write(e))
    }

    pub fn flush(&mut self) -> Result<(), SessionError> {
        self.inner.flush()?;
        Ok(())
    }
}
