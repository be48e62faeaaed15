//! Append-only JSON-lines event logs, one file per trial, plus stored designs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use bard_core::config::DesignConfig;

use crate::error::{ConductError, Result};
use crate::event::TrialEvent;

#[derive(Debug, Clone)]
pub struct EventStore {
    root: PathBuf,
}

/// Ids become file names, so keep them plain.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ConductError::Validation(format!("invalid id {id:?}: use 1-64 letters, digits, '-' or '_'")))
    }
}

impl EventStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("trials"))?;
        fs::create_dir_all(root.join("designs"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn trial_path(&self, id: &str) -> PathBuf {
        self.root.join("trials").join(format!("{id}.jsonl"))
    }

    fn design_path(&self, id: &str) -> PathBuf {
        self.root.join("designs").join(format!("{id}.json"))
    }

    pub fn trial_exists(&self, id: &str) -> bool {
        self.trial_path(id).exists()
    }

    pub fn trial_ids(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("trials"))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".jsonl")).map(String::from))
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Read a trial's log. A line that fails to parse is reported with the
    /// sequence number it should carry.
    pub fn load(&self, id: &str) -> Result<Vec<TrialEvent>> {
        check_id(id)?;
        let file = File::open(self.trial_path(id)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ConductError::NotFound(format!("trial {id}")),
            _ => e.into(),
        })?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: TrialEvent =
                serde_json::from_str(&line).map_err(|e| ConductError::replay(i as u64 + 1, format!("unreadable event: {e}")))?;
            events.push(ev);
        }
        Ok(events)
    }

    /// Start a new log; fails if the trial exists.
    pub fn create(&self, id: &str, events: &[TrialEvent]) -> Result<()> {
        check_id(id)?;
        let file = OpenOptions::new().write(true).create_new(true).open(self.trial_path(id)).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => ConductError::Conflict(format!("trial {id} already exists")),
            _ => e.into(),
        })?;
        write_events(file, events)
    }

    /// Append the events of one command in a single write.
    pub fn append(&self, id: &str, events: &[TrialEvent]) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        check_id(id)?;
        let file = OpenOptions::new().append(true).open(self.trial_path(id))?;
        write_events(file, events)
    }

    pub fn save_design(&self, id: &str, design: &DesignConfig) -> Result<()> {
        check_id(id)?;
        let text = serde_json::to_string_pretty(design).map_err(|e| ConductError::Storage(e.to_string()))?;
        fs::write(self.design_path(id), text)?;
        Ok(())
    }

    pub fn load_design(&self, id: &str) -> Result<DesignConfig> {
        check_id(id)?;
        let text = fs::read_to_string(self.design_path(id)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ConductError::NotFound(format!("design {id}")),
            _ => e.into(),
        })?;
        serde_json::from_str(&text).map_err(|e| ConductError::Storage(format!("design {id}: {e}")))
    }
}

fn write_events(mut file: File, events: &[TrialEvent]) -> Result<()> {
    let mut buf = Vec::new();
    for ev in events {
        serde_json::to_writer(&mut buf, ev).map_err(|e| ConductError::Storage(e.to_string()))?;
        buf.push(b'\n');
    }
    file.write_all(&buf)?;
    file.sync_data()?;
    Ok(())
}
