//! The outer epoch loop: run, learn at the boundary, persist.

use super::prompt::IclExample;
use super::rundir::{
    report_rows, LogEvent, LogRecord, ProfileRecord, ProfileStage, RunDir, RunDirError, RunLock, RunState,
};
use super::{run_trajectory, AgentConfig, EnvFactory, TrajectoryPlan, Variant, ICL_STREAM};
use crate::env::{EpochLog, Trajectory};
use crate::gateway::CompletionBackend;
use crate::metrics::{render_csv, ReportRow};
use crate::profiler::{self, EpochSummary, ProfileChanged, ProfilerError, TaskProfile};
use crate::reasoning::{self, MinerConfig, ReasoningBackend, ReasoningError, ReasoningReport};
use crate::rng::{derive_stream, trajectory_seed};
use crate::rules::RuleBank;
use rayon::prelude::*;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    /// Every trajectory of the epoch lost its model connection; the epoch
    /// is discarded and the run can be resumed.
    #[error("epoch {epoch}: every trajectory aborted ({detail}); run is resumable")]
    Outage { epoch: u32, detail: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    /// Whether the run directory holds a consistent prefix worth resuming.
    pub fn is_partial(&self) -> bool {
        !matches!(self, Self::Config(_))
    }
}

/// Inputs of [`run_experiment`].
pub struct ExperimentSetup {
    pub config: AgentConfig,
    pub factory: EnvFactory,
    pub gateway: Arc<dyn CompletionBackend>,
    /// Written verbatim as the run's `config.toml` on a fresh start.
    pub config_text: String,
}

/// Per-epoch summary handed to the progress callback.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub epoch: u32,
    pub row: ReportRow,
    pub aborted: usize,
    pub reasoning: Option<ReasoningReport>,
    pub profile_change: Option<ProfileChanged>,
    /// Candidate, verified and retired rule counts after the update.
    pub rule_counts: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub completed_epochs: u32,
    pub trajectories: usize,
    pub report: Vec<ReportRow>,
    pub profile: Option<TaskProfile>,
    pub bank: RuleBank,
}

fn summary(log: &EpochLog) -> EpochSummary {
    let n = log.trajectories.len().max(1) as f64;
    EpochSummary {
        epoch: log.epoch_index,
        mean_reward: log.trajectories.iter().map(|t| t.final_reward).sum::<f64>() / n,
        success_rate: log.successes().count() as f64 / n,
        mean_turns: log.trajectories.iter().map(|t| f64::from(t.turn_count)).sum::<f64>() / n,
        invalid_proposals: log.trajectories.iter().flat_map(|t| &t.steps).filter(|s| !s.valid_on_first_try).count(),
    }
}

/// Up to `count` successful trajectories drawn uniformly without
/// replacement, reproducibly per epoch.
fn sample_icl(pool: &[Trajectory], count: usize, master_seed: u64, epoch: u32) -> Vec<IclExample> {
    if pool.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut rng = derive_stream(trajectory_seed(master_seed, epoch, 0), ICL_STREAM);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    rng.shuffle(&mut idx);
    idx.into_iter().take(count).map(|i| IclExample::from_trajectory(&pool[i])).collect()
}

struct Events {
    next_seq: u64,
    pending: Vec<LogRecord>,
}

impl Events {
    fn push(&mut self, epoch: u32, event: LogEvent) {
        self.pending.push(LogRecord { seq: self.next_seq, epoch, event });
        self.next_seq += 1;
    }

    fn flush(&mut self, dir: &RunDir) -> Result<(), RunDirError> {
        dir.append_events(&self.pending)?;
        self.pending.clear();
        Ok(())
    }
}

/// Runs (or resumes) an experiment in `run_dir`. `stop_after` ends the
/// call after that many epochs in total, leaving a resumable run.
pub fn run_experiment(
    setup: &ExperimentSetup,
    run_dir: &Path,
    resume: bool,
    stop_after: Option<u32>,
    observer: &mut dyn FnMut(&EpochOutcome),
) -> Result<ExperimentRecord, ExperimentError> {
    let cfg = &setup.config;
    cfg.validate().map_err(ExperimentError::Config)?;
    let dir = if resume { RunDir::open(run_dir)? } else { RunDir::create(run_dir, &setup.config_text)? };
    let _lock = RunLock::acquire(dir.root())?;

    let spec = setup.factory.spec();
    let report_env = setup.factory.make();
    let guided = cfg.variant == Variant::Guided;
    let miner = MinerConfig { min_support: cfg.min_support };

    let state = dir.state()?;
    let (mut completed, mut profile, mut bank, next_seq) = match &state {
        Some(s) => {
            dir.truncate_to(s)?;
            (
                s.completed_epochs,
                s.profile.clone(),
                RuleBank::from_value(s.bank.clone()).map_err(RunDirError::from)?,
                s.next_event_seq,
            )
        }
        None => {
            if resume {
                dir.truncate_to(&RunState {
                    completed_epochs: 0,
                    profile: None,
                    next_event_seq: 0,
                    bank: RuleBank::default().to_value(),
                })?;
            }
            (0, None, RuleBank::new(cfg.lifecycle), 0)
        }
    };
    bank.take_journal();
    let mut events = Events { next_seq, pending: Vec::new() };
    let mut history = dir.trajectories()?;
    let mut snapshots = dir.snapshots()?;
    let pool = match cfg.workers {
        1 => None,
        n => Some(
            rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| ExperimentError::Pool(e.to_string()))?,
        ),
    };
    let last = stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));

    while completed < last {
        let epoch = completed + 1;
        events.push(epoch, LogEvent::EpochStarted);

        if guided && profile.is_none() && epoch >= cfg.warmup_epochs {
            let summaries: Vec<EpochSummary> = EpochLog::group(history.clone()).iter().map(summary).collect();
            let outcome = profiler::profile(&spec, &summaries, cfg.profiler, Some(setup.gateway.as_ref()))?;
            tracing::info!(epoch, profile = %outcome.profile, "task profiled");
            events.push(epoch, LogEvent::Profiled { profile: outcome.profile.clone() });
            profile = Some(outcome.profile.clone());
            dir.append_profile(&ProfileRecord { epoch, stage: ProfileStage::Initial, outcome, changed: false })?;
        }

        let icl = if cfg.variant == Variant::BaselineIcl {
            let successes: Vec<Trajectory> = history.iter().filter(|t| t.success).cloned().collect();
            sample_icl(&successes, cfg.icl_sample_count, cfg.master_seed, epoch)
        } else {
            Vec::new()
        };

        let snapshot = bank.clone();
        let plan_for = |index: u32| TrajectoryPlan {
            epoch,
            index,
            seed: trajectory_seed(cfg.master_seed, epoch, index),
            variant: cfg.variant,
            profile: profile.as_ref(),
            bank: &snapshot,
            icl: &icl,
            gateway: setup.gateway.as_ref(),
            fallback_order: cfg.fallback_order,
            temperature: cfg.temperature,
            max_output_tokens: cfg.max_output_tokens,
        };
        let run_one = |index: u32| {
            let mut env = setup.factory.make();
            run_trajectory(env.as_mut(), &plan_for(index))
        };
        let indices = 0..cfg.trajectories_per_epoch;
        let trajectories: Vec<Trajectory> = match &pool {
            Some(pool) if setup.gateway.order_independent() => {
                pool.install(|| indices.into_par_iter().map(run_one).collect())
            }
            _ => indices.map(run_one).collect(),
        };

        let aborted: Vec<&Trajectory> = trajectories.iter().filter(|t| t.diagnostic.is_some()).collect();
        if aborted.len() == trajectories.len() {
            let detail = aborted[0].diagnostic.clone().unwrap_or_default();
            return Err(ExperimentError::Outage { epoch, detail });
        }
        for t in &aborted {
            tracing::warn!(trajectory = %t.id(), "trajectory aborted: {}", t.diagnostic.as_deref().unwrap_or(""));
        }
        events.push(
            epoch,
            LogEvent::TrajectoriesCommitted {
                count: trajectories.len(),
                successes: trajectories.iter().filter(|t| t.success).count(),
                aborted: aborted.len(),
            },
        );
        let aborted = aborted.len();

        let log = EpochLog { epoch_index: epoch, trajectories };
        let mut reasoning_report = None;
        let mut profile_change = None;
        if guided {
            if let Some(p) = profile.clone() {
                let extraction = match reasoning::extract_rules(
                    &log,
                    &p,
                    cfg.reasoning,
                    report_env.as_ref(),
                    Some(setup.gateway.as_ref()),
                    miner,
                ) {
                    Ok(x) => x,
                    Err(ReasoningError::BackendUnavailable(why)) if cfg.reasoning == ReasoningBackend::Llm => {
                        let warning = format!("rule extraction backend failed ({why}); mining instead");
                        tracing::warn!("{warning}");
                        let mut x = reasoning::extract_rules(
                            &log,
                            &p,
                            ReasoningBackend::Miner,
                            report_env.as_ref(),
                            None,
                            miner,
                        )?;
                        x.warnings.push(warning);
                        x
                    }
                    Err(e) => return Err(e.into()),
                };
                let report = reasoning::apply_epoch(&mut bank, &log, extraction)?;
                for change in bank.take_journal() {
                    events.push(epoch, LogEvent::Bank { change });
                }
                events.push(epoch, LogEvent::Reasoning { report: report.clone() });
                reasoning_report = Some(report);

                let mut summaries: Vec<EpochSummary> = EpochLog::group(history.clone()).iter().map(summary).collect();
                summaries.push(summary(&log));
                let (outcome, change) =
                    profiler::reprofile_if_shifted(&p, &spec, &summaries, cfg.profiler, Some(setup.gateway.as_ref()))?;
                if let Some(change) = &change {
                    tracing::warn!(from = %change.from, to = %change.to, "task profile changed");
                    events.push(epoch, LogEvent::ProfileChanged { change: change.clone() });
                    profile = Some(change.to.clone());
                    dir.append_profile(&ProfileRecord { epoch, stage: ProfileStage::Recheck, outcome, changed: true })?;
                }
                profile_change = change;
            }
        }
        events.push(epoch, LogEvent::EpochCompleted);

        dir.append_trajectories(&log.trajectories)?;
        if guided {
            dir.append_snapshot(epoch, &snapshot)?;
            snapshots.insert(epoch, snapshot.clone());
            dir.save_bank(&bank)?;
        }
        events.flush(&dir)?;
        history.extend(log.trajectories);
        let rows = report_rows(history.clone(), &snapshots, report_env.as_ref());
        dir.write_report(&render_csv(&rows))?;
        dir.write_state(&RunState {
            completed_epochs: epoch,
            profile: profile.clone(),
            next_event_seq: events.next_seq,
            bank: bank.to_value(),
        })?;
        completed = epoch;

        let row = rows.last().cloned().expect("the epoch just written has a row");
        observer(&EpochOutcome {
            epoch,
            row,
            aborted,
            reasoning: reasoning_report,
            profile_change,
            rule_counts: guided.then(|| bank.status_counts()),
        });
    }

    let report = report_rows(history.clone(), &snapshots, report_env.as_ref());
    Ok(ExperimentRecord { completed_epochs: completed, trajectories: history.len(), report, profile, bank })
}

/// Bank state reconstructed from the experiment log's bank events.
pub fn bank_from_events(dir: &RunDir, config: crate::rules::LifecycleConfig) -> Result<RuleBank, RunDirError> {
    let events = dir.events()?;
    let changes = events.iter().filter_map(|r| match &r.event {
        LogEvent::Bank { change } => Some(change),
        _ => None,
    });
    Ok(RuleBank::from_events(config, changes)?)
}
