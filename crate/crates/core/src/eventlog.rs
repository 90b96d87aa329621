//! Append-only JSON-lines event log.
//!
//! Each line is one self-describing record: `{"seq":..,"at":..,"type":..,
//! "payload":..}`. The log is replayed from byte 0 on open; a torn final line
//! left by a crash is truncated away, any other malformed line is an error.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log io: {0}")]
    Io(#[from] io::Error),
    #[error("event log {path}: line {line} is malformed: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("event log record could not be encoded: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord<E> {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub event: E,
}

pub struct EventLog<E> {
    file: File,
    path: PathBuf,
    next_seq: u64,
    _event: PhantomData<fn(E)>,
}

impl<E: Serialize + DeserializeOwned> EventLog<E> {
    /// Opens (creating if needed) the log and returns every stored record.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogRecord<E>>), LogError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut records = Vec::new();
        let mut good_len: u64 = 0;
        {
            let mut reader = BufReader::new(&file);
            let mut line = Vec::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line)?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with(b"\n") {
                    // Torn write from a crash: drop it.
                    break;
                }
                let record: LogRecord<E> =
                    serde_json::from_slice(&line).map_err(|e| LogError::Corrupt {
                        path: path.to_path_buf(),
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                records.push(record);
                good_len += n as u64;
            }
        }
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        let next_seq = records.last().map_or(0, |r: &LogRecord<E>| r.seq + 1);
        Ok((
            EventLog {
                file,
                path: path.to_path_buf(),
                next_seq,
                _event: PhantomData,
            },
            records,
        ))
    }

    pub fn append(&mut self, at: Timestamp, event: E) -> Result<LogRecord<E>, LogError> {
        let record = LogRecord {
            seq: self.next_seq,
            at,
            event,
        };
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(record)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(tag = "type", content = "payload", rename_all = "snake_case")]
    enum Ev {
        Ping { n: u32 },
        Pong,
    }

    #[test]
    fn append_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let (mut log, old) = EventLog::<Ev>::open(&path).unwrap();
            assert!(old.is_empty());
            log.append(Timestamp(10), Ev::Ping { n: 1 }).unwrap();
            log.append(Timestamp(11), Ev::Pong).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"seq":0,"at":10,"type":"ping","payload":{"n":1}}"#
        );
        let (log, records) = EventLog::<Ev>::open(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].event, Ev::Pong);
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let (mut log, _) = EventLog::<Ev>::open(&path).unwrap();
            log.append(Timestamp(1), Ev::Pong).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"seq":1,"at":2,"ty"#).unwrap();
        drop(f);
        let (mut log, records) = EventLog::<Ev>::open(&path).unwrap();
        assert_eq!(records.len(), 1);
        log.append(Timestamp(3), Ev::Ping { n: 7 }).unwrap();
        drop(log);
        let (_, records) = EventLog::<Ev>::open(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].seq, 1);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "garbage\n{\"seq\":0,\"at\":1,\"type\":\"pong\"}\n").unwrap();
        let err = EventLog::<Ev>::open(&path).err().unwrap();
        assert!(matches!(err, LogError::Corrupt { line: 1, .. }));
    }
}
