//! Append-only JSON Lines log of repair sessions.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Deserialize;

use crate::repair::RepairSession;

#[derive(Default)]
struct Index {
    order: Vec<String>,
    spans: HashMap<String, (u64, usize)>,
    len: u64,
}

/// A run log file plus an in-memory index of where each session lives.
/// Appends are serialized; reads go straight to the file.
pub struct RunLog {
    path: PathBuf,
    index: Mutex<Index>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct IdOnly {
    session_id: String,
}

impl RunLog {
    /// Opens (creating if needed) the log at `path` and indexes it. Lines
    /// that do not parse, such as a torn final write, are skipped.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut index = Index::default();
        let mut offset = 0u64;
        let mut last_byte = None;
        {
            let mut reader = BufReader::new(&file);
            let mut line = Vec::new();
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line)?;
                if n == 0 {
                    break;
                }
                last_byte = line.last().copied();
                let body = line.strip_suffix(b"\n").unwrap_or(&line);
                match serde_json::from_slice::<IdOnly>(body) {
                    Ok(rec) => {
                        if !index.spans.contains_key(&rec.session_id) {
                            index.order.push(rec.session_id.clone());
                        }
                        index.spans.insert(rec.session_id, (offset, body.len()));
                    }
                    Err(e) if !body.iter().all(u8::is_ascii_whitespace) => {
                        tracing::warn!(path = %path.display(), offset, error = %e, "skipping unreadable run-log line");
                    }
                    Err(_) => {}
                }
                offset += n as u64;
            }
        }
        if last_byte.is_some_and(|b| b != b'\n') {
            file.write_all(b"\n")?;
            offset += 1;
        }
        index.len = offset;
        Ok(Self {
            path,
            index: Mutex::new(index),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one session as a single line and syncs it to disk.
    pub fn append(&self, session: &RepairSession) -> io::Result<()> {
        let line = serde_json::to_string(session).map_err(io::Error::other)?;
        let mut index = self.index.lock().unwrap_or_else(|e| e.into_inner());
        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        let mut buf = line.into_bytes();
        let body_len = buf.len();
        buf.push(b'\n');
        file.write_all(&buf)?;
        file.sync_data()?;
        let offset = index.len;
        index.len += buf.len() as u64;
        if !index.spans.contains_key(&session.session_id) {
            index.order.push(session.session_id.clone());
        }
        index.spans.insert(session.session_id.clone(), (offset, body_len));
        Ok(())
    }

    pub fn get(&self, session_id: &str) -> io::Result<Option<RepairSession>> {
        let span = {
            let index = self.index.lock().unwrap_or_else(|e| e.into_inner());
            index.spans.get(session_id).copied()
        };
        let Some((offset, len)) = span else {
            return Ok(None);
        };
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0; len];
        file.read_exact(&mut buf)?;
        serde_json::from_slice(&buf).map(Some).map_err(io::Error::other)
    }

    /// Session ids in the order they were first logged.
    pub fn ids(&self) -> Vec<String> {
        self.index.lock().unwrap_or_else(|e| e.into_inner()).order.clone()
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap_or_else(|e| e.into_inner()).order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads every parseable session in a run log.
pub fn read_sessions(path: &Path) -> io::Result<Vec<RepairSession>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(s) => out.push(s),
            Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable run-log line"),
        }
    }
    Ok(out)
}
