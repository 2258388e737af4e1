//! Append-only session event log. The log is authoritative: replaying its
//! answers through the engine rebuilds the session exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rulemine::engine::{Checkpoint, CheckpointAnswer, SessionConfig, Seed, CHECKPOINT_VERSION};
use rulemine::{Error, Grammar, Result};
use serde::{Deserialize, Serialize};

pub const EVENT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Simulated,
    Human,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub text: String,
    pub at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        v: u32,
        session_id: String,
        corpus: String,
        oracle: OracleMode,
        grammar: Grammar,
        config: SessionConfig,
        seed: Seed,
        created_at: u64,
    },
    QueryIssued {
        query_id: u64,
        canonical: String,
    },
    Answered {
        query_id: u64,
        canonical: String,
        answer: bool,
    },
    Accepted {
        query_id: u64,
        canonical: String,
        coverage_size: usize,
    },
    Note(Note),
}

/// Everything recovered from a log.
#[derive(Clone, Debug, PartialEq)]
pub struct Replayed {
    pub session_id: String,
    pub corpus: String,
    pub oracle: OracleMode,
    pub created_at: u64,
    pub checkpoint: Checkpoint,
    pub notes: Vec<Note>,
    /// Query id of the last `query_issued` event.
    pub last_issued: Option<u64>,
    /// Query ids with an `accepted` event.
    pub accepted: Vec<u64>,
}

pub fn replay(events: &[Event]) -> Result<Replayed> {
    let Some(Event::Created {
        v,
        session_id,
        corpus,
        oracle,
        grammar,
        config,
        seed,
        created_at,
    }) = events.first()
    else {
        return Err(Error::ReplayDiverged {
            index: 0,
            message: "log does not start with a created event".into(),
        });
    };
    if *v != EVENT_VERSION {
        return Err(Error::Version {
            found: *v,
            expected: EVENT_VERSION,
        });
    }
    let mut out = Replayed {
        session_id: session_id.clone(),
        corpus: corpus.clone(),
        oracle: *oracle,
        created_at: *created_at,
        checkpoint: Checkpoint {
            v: CHECKPOINT_VERSION,
            grammar: *grammar,
            config: config.clone(),
            seed: seed.clone(),
            answers: Vec::new(),
        },
        notes: Vec::new(),
        last_issued: None,
        accepted: Vec::new(),
    };
    for (i, e) in events.iter().enumerate().skip(1) {
        match e {
            Event::Created { .. } => {
                return Err(Error::ReplayDiverged {
                    index: i,
                    message: "second created event".into(),
                })
            }
            Event::QueryIssued { query_id, .. } => out.last_issued = Some(*query_id),
            Event::Answered {
                query_id,
                canonical,
                answer,
            } => {
                if out.checkpoint.answers.iter().any(|a| a.query_id == *query_id) {
                    return Err(Error::ReplayDiverged {
                        index: i,
                        message: format!("query {query_id} answered twice"),
                    });
                }
                out.checkpoint.answers.push(CheckpointAnswer {
                    query_id: *query_id,
                    canonical: canonical.clone(),
                    answer: *answer,
                });
            }
            Event::Accepted { query_id, .. } => out.accepted.push(*query_id),
            Event::Note(n) => out.notes.push(n.clone()),
        }
    }
    Ok(out)
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl EventLog {
    /// Starts a new log; fails if one exists.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| io(&path, e))?;
        Ok(EventLog { path, file })
    }

    /// Reads an existing log and reopens it for appending. A torn final
    /// line (a crash mid-write) is dropped.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<Event>)> {
        let path = path.into();
        let (events, good_len) = read_events(&path)?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&path)
            .map_err(|e| io(&path, e))?;
        file.set_len(good_len).map_err(|e| io(&path, e))?;
        let mut log = EventLog { path, file };
        use std::io::Seek;
        log.file
            .seek(std::io::SeekFrom::End(0))
            .map_err(|e| io(&log.path, e))?;
        Ok((log, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one event and syncs it to disk.
    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| io(&self.path, e))?;
        self.file.sync_data().map_err(|e| io(&self.path, e))
    }
}

/// Parsed events plus the byte length of the well-formed prefix.
pub fn read_events(path: &Path) -> Result<(Vec<Event>, u64)> {
    let file = File::open(path).map_err(|e| io(path, e))?;
    let mut reader = BufReader::new(file);
    let (mut events, mut good, mut line, mut n) = (Vec::new(), 0u64, String::new(), 0usize);
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| io(path, e))?;
        if read == 0 {
            break;
        }
        n += 1;
        // every append ends with a newline; anything else is a torn write
        if !line.ends_with('\n') {
            tracing::warn!(?path, line = n, "dropping torn final event");
            break;
        }
        let event = serde_json::from_str::<Event>(line.trim_end()).map_err(|e| Error::Malformed {
            line: n,
            message: e.to_string(),
        })?;
        events.push(event);
        good += read as u64;
    }
    Ok((events, good))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn created() -> Event {
        Event::Created {
            v: EVENT_VERSION,
            session_id: "s-000001".into(),
            corpus: "toy".into(),
            oracle: OracleMode::Human,
            grammar: Grammar::tokens_regex(),
            config: SessionConfig::default(),
            seed: Seed::Rule("best way to".into()),
            created_at: 0,
        }
    }

    fn answered(query_id: u64) -> Event {
        Event::Answered {
            query_id,
            canonical: "to".into(),
            answer: true,
        }
    }

    #[test]
    fn replay_collects_answers_in_order() {
        let r = replay(&[
            created(),
            Event::QueryIssued {
                query_id: 0,
                canonical: "to".into(),
            },
            answered(0),
            Event::QueryIssued {
                query_id: 1,
                canonical: "?".into(),
            },
        ])
        .unwrap();
        assert_eq!(r.checkpoint.answers.len(), 1);
        assert_eq!(r.last_issued, Some(1));
    }

    #[test]
    fn replay_rejects_malformed_histories() {
        assert!(replay(&[]).is_err());
        assert!(replay(&[answered(0)]).is_err());
        assert!(replay(&[created(), answered(0), answered(0)]).is_err());
        assert!(replay(&[created(), created()]).is_err());
    }

    #[test]
    fn log_round_trips_and_drops_a_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path).unwrap();
        log.append(&created()).unwrap();
        log.append(&answered(0)).unwrap();
        assert!(EventLog::create(&path).is_err());
        drop(log);
        let mut text = std::fs::read_to_string(&path).unwrap();
        let whole = text.len();
        text.push_str("{\"event\":\"ans");
        std::fs::write(&path, text).unwrap();
        let (mut log, events) = EventLog::open(&path).unwrap();
        assert_eq!(events, vec![created(), answered(0)]);
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, whole);
        log.append(&answered(1)).unwrap();
        assert_eq!(read_events(&path).unwrap().0.len(), 3);
        // damage before the end is an error, not silently skipped
        std::fs::write(&path, "not json\n").unwrap();
        assert!(read_events(&path).is_err());
    }
}
