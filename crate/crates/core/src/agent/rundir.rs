//! On-disk layout of a run and its append-only logs.

use crate::env::{read_trajectories, write_trajectories, Environment, EpochLog, Trajectory};
use crate::metrics::{render_csv, report_row, ReportRow};
use crate::profiler::{ProfileChanged, ProfileOutcome, TaskProfile};
use crate::reasoning::ReasoningReport;
use crate::rules::{BankEvent, RuleBank, RuleBankError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_FILE: &str = "config.toml";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const BANK_FILE: &str = "rulebank.json";
pub const SNAPSHOTS_FILE: &str = "rulebank_snapshots.jsonl";
pub const PROFILE_FILE: &str = "profile_history.jsonl";
pub const EVENTS_FILE: &str = "experiment_log.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const REPORT_FILE: &str = "report.csv";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("run directory {0} does not exist or is not a run")]
    MissingRun(PathBuf),
    #[error("run directory {0} already contains a run; use resume")]
    AlreadyExists(PathBuf),
    #[error("run directory {0} is locked by another process (remove {LOCK_FILE} if stale)")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error(transparent)]
    Bank(#[from] RuleBankError),
}

/// Exclusive ownership of a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, RunDirError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(RunDirError::Locked(dir.to_path_buf())),
            Err(source) => Err(RunDirError::Io { path, source }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Durable progress marker, replaced atomically after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub completed_epochs: u32,
    pub profile: Option<TaskProfile>,
    pub next_event_seq: u64,
    pub bank: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileStage {
    Initial,
    Recheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub epoch: u32,
    pub stage: ProfileStage,
    #[serde(flatten)]
    pub outcome: ProfileOutcome,
    pub changed: bool,
}

/// Entries of the experiment log, ordered by sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    EpochStarted,
    Profiled { profile: TaskProfile },
    TrajectoriesCommitted { count: usize, successes: usize, aborted: usize },
    Bank { change: BankEvent },
    Reasoning { report: ReasoningReport },
    ProfileChanged { change: ProfileChanged },
    EpochCompleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub epoch: u32,
    #[serde(flatten)]
    pub event: LogEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotRecord {
    epoch: u32,
    bank: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io { path: path.to_path_buf(), source }
}

impl RunDir {
    /// A handle on an existing run; fails when there is no config file.
    pub fn open(root: &Path) -> Result<Self, RunDirError> {
        if !root.join(CONFIG_FILE).is_file() {
            return Err(RunDirError::MissingRun(root.to_path_buf()));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    /// Starts a new run, writing the resolved configuration.
    pub fn create(root: &Path, config_text: &str) -> Result<Self, RunDirError> {
        if root.join(CONFIG_FILE).exists() {
            return Err(RunDirError::AlreadyExists(root.to_path_buf()));
        }
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(CONFIG_FILE);
        fs::write(&path, config_text).map_err(io_err(&path))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn config_text(&self) -> Result<String, RunDirError> {
        let path = self.path(CONFIG_FILE);
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    fn append_lines<T: Serialize>(&self, file: &str, items: &[T]) -> Result<(), RunDirError> {
        let path = self.path(file);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item).expect("log records serialize");
            buf.push(b'\n');
        }
        f.write_all(&buf).map_err(io_err(&path))
    }

    fn read_lines<T: DeserializeOwned>(&self, file: &str) -> Result<Vec<T>, RunDirError> {
        let path = self.path(file);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(RunDirError::Io { path, source }),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| RunDirError::Corrupt { path: path.clone(), detail: format!("line {}: {e}", n + 1) })
            })
            .collect()
    }

    /// Rewrites `file` keeping only the records accepted by `keep`.
    fn retain_lines<T: Serialize + DeserializeOwned>(
        &self,
        file: &str,
        keep: impl Fn(&T) -> bool,
    ) -> Result<(), RunDirError> {
        let kept: Vec<T> = self.read_lines::<T>(file)?.into_iter().filter(|r| keep(r)).collect();
        let path = self.path(file);
        if path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
        self.append_lines(file, &kept)
    }

    pub fn append_trajectories(&self, trajectories: &[Trajectory]) -> Result<(), RunDirError> {
        let path = self.path(TRAJECTORIES_FILE);
        let f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let mut out = io::BufWriter::new(f);
        write_trajectories(&mut out, trajectories).map_err(io_err(&path))?;
        out.flush().map_err(io_err(&path))
    }

    pub fn trajectories(&self) -> Result<Vec<Trajectory>, RunDirError> {
        let path = self.path(TRAJECTORIES_FILE);
        match File::open(&path) {
            Ok(f) => {
                read_trajectories(BufReader::new(f)).map_err(|e| RunDirError::Corrupt { path, detail: e.to_string() })
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(source) => Err(RunDirError::Io { path, source }),
        }
    }

    /// Records the bank the agent consulted during `epoch`.
    pub fn append_snapshot(&self, epoch: u32, bank: &RuleBank) -> Result<(), RunDirError> {
        self.append_lines(SNAPSHOTS_FILE, &[SnapshotRecord { epoch, bank: bank.to_value() }])
    }

    pub fn snapshots(&self) -> Result<BTreeMap<u32, RuleBank>, RunDirError> {
        self.read_lines::<SnapshotRecord>(SNAPSHOTS_FILE)?
            .into_iter()
            .map(|r| Ok((r.epoch, RuleBank::from_value(r.bank)?)))
            .collect()
    }

    pub fn append_profile(&self, record: &ProfileRecord) -> Result<(), RunDirError> {
        self.append_lines(PROFILE_FILE, std::slice::from_ref(record))
    }

    pub fn profile_history(&self) -> Result<Vec<ProfileRecord>, RunDirError> {
        self.read_lines(PROFILE_FILE)
    }

    pub fn append_events(&self, events: &[LogRecord]) -> Result<(), RunDirError> {
        self.append_lines(EVENTS_FILE, events)
    }

    pub fn events(&self) -> Result<Vec<LogRecord>, RunDirError> {
        self.read_lines(EVENTS_FILE)
    }

    pub fn save_bank(&self, bank: &RuleBank) -> Result<(), RunDirError> {
        Ok(bank.save(&self.path(BANK_FILE))?)
    }

    /// The final bank, or an empty one for runs that never learned.
    pub fn bank(&self) -> Result<Option<RuleBank>, RunDirError> {
        let path = self.path(BANK_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(RuleBank::load(&path)?))
    }

    pub fn state(&self) -> Result<Option<RunState>, RunDirError> {
        let path = self.path(STATE_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => {
                serde_json::from_str(&text).map(Some).map_err(|e| RunDirError::Corrupt { path, detail: e.to_string() })
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(RunDirError::Io { path, source }),
        }
    }

    pub fn write_state(&self, state: &RunState) -> Result<(), RunDirError> {
        self.write_atomic(STATE_FILE, &(serde_json::to_string_pretty(state).expect("state serializes") + "\n"))
    }

    pub fn write_report(&self, csv: &str) -> Result<(), RunDirError> {
        self.write_atomic(REPORT_FILE, csv)
    }

    pub fn cached_report(&self) -> Result<Option<String>, RunDirError> {
        let path = self.path(REPORT_FILE);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(RunDirError::Io { path, source }),
        }
    }

    fn write_atomic(&self, file: &str, text: &str) -> Result<(), RunDirError> {
        let path = self.path(file);
        let tmp = self.path(&format!(".{file}.tmp"));
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Drops everything written after the last completed epoch.
    pub fn truncate_to(&self, state: &RunState) -> Result<(), RunDirError> {
        let done = state.completed_epochs;
        let traj_path = self.path(TRAJECTORIES_FILE);
        let kept: Vec<Trajectory> = self.trajectories()?.into_iter().filter(|t| t.epoch <= done).collect();
        if traj_path.exists() {
            fs::remove_file(&traj_path).map_err(io_err(&traj_path))?;
        }
        self.append_trajectories(&kept)?;
        self.retain_lines::<SnapshotRecord>(SNAPSHOTS_FILE, |r| r.epoch <= done)?;
        self.retain_lines::<ProfileRecord>(PROFILE_FILE, |r| r.epoch <= done)?;
        self.retain_lines::<LogRecord>(EVENTS_FILE, |r| r.seq < state.next_event_seq)?;
        Ok(())
    }
}

/// Report rows recomputed from the logs alone.
pub fn report_rows(
    trajectories: Vec<Trajectory>,
    snapshots: &BTreeMap<u32, RuleBank>,
    env: &dyn Environment,
) -> Vec<ReportRow> {
    EpochLog::group(trajectories).iter().map(|log| report_row(log, snapshots.get(&log.epoch_index), env)).collect()
}

/// The report CSV for a run directory, recomputed from its logs.
pub fn recompute_report(dir: &RunDir, env: &dyn Environment) -> Result<(Vec<ReportRow>, String), RunDirError> {
    let rows = report_rows(dir.trajectories()?, &dir.snapshots()?, env);
    let csv = render_csv(&rows);
    Ok((rows, csv))
}
