//! Append-only event log. Every acknowledged mutation is on disk (and synced,
//! unless disabled) before the caller sees the acknowledgement.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::StimulusManifest;
use crate::triplet::{Label, TripletQuery};

pub const EVENT_LOG: &str = "events.jsonl";

/// Option A is the pool's `j`, option B its `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn label(self) -> Label {
        match self {
            Choice::A => Label::CloserToJ,
            Choice::B => Label::CloserToK,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub task_id: String,
    pub query: TripletQuery,
    pub annotator_id: String,
    pub choice: Choice,
    /// Milliseconds since the Unix epoch.
    pub submitted_at: u64,
    pub latency_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCreated {
    pub task_id: String,
    pub manifest: StimulusManifest,
    pub pool: Vec<TripletQuery>,
    pub lease_timeout_ms: u64,
    pub seed: u64,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TaskCreated(TaskCreated),
    Response(ResponseRecord),
}

pub struct EventLog {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl EventLog {
    /// Opens (creating if needed) the log in `dir` and returns the events it
    /// already holds. A torn final line left by a crash is cut off.
    pub fn open(dir: &Path, sync: bool) -> Result<(Self, Vec<Event>)> {
        fs::create_dir_all(dir)?;
        let path = dir.join(EVENT_LOG);
        let events = if path.exists() {
            let (events, good_len) = read_prefix(&path)?;
            let len = fs::metadata(&path)?.len();
            if good_len < len {
                log::warn!("{}: dropping {} bytes of torn log tail", path.display(), len - good_len);
                let f = OpenOptions::new().write(true).open(&path)?;
                f.set_len(good_len)?;
                f.sync_all()?;
            }
            events
        } else {
            Vec::new()
        };
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        file.seek(SeekFrom::End(0))?;
        Ok((Self { path, file, sync }, events))
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.sync {
            self.file.sync_data()?;
        } else {
            self.file.flush()?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads all complete events from a log file.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    Ok(read_prefix(path)?.0)
}

fn read_prefix(path: &Path) -> Result<(Vec<Event>, u64)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    let mut good = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let read = reader.read_line(&mut buf)?;
        if read == 0 || !buf.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<Event>(buf.trim_end()) {
            Ok(e) => events.push(e),
            Err(_) if buf.trim().is_empty() => {}
            Err(_) => break,
        }
        good += read as u64;
    }
    Ok((events, good))
}
