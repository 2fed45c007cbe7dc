//! Command implementations behind the `trustloop` binary.

pub mod config;

use clap::{Args, Parser, Subcommand};
use config::{ConfigError, ConfigFile, LifecycleSection, RemoteSection, RunConfig, Seed};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;
use trustloop::agent::rundir::REPORT_FILE;
use trustloop::agent::{
    audit_applied_rules, recompute_report, replay_trajectory, run_experiment, EnvKind, EpochOutcome, ExperimentError,
    ExperimentSetup, RunDir, RunDirError, Variant,
};
use trustloop::constraints::CandidateOrder;
use trustloop::gateway::BackendSpec;
use trustloop::metrics::ReportRow;
use trustloop::profiler::ProfilerBackend;
use trustloop::reasoning::ReasoningBackend;
use trustloop::rules::RuleBank;

#[derive(Debug, Parser)]
#[command(name = "trustloop", version, about = "Run and inspect guided LLM agent experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment, or resume a partial one.
    Run(Box<RunArgs>),
    /// Inspect the rule bank of a run.
    Rules {
        run_dir: PathBuf,
        #[command(subcommand)]
        action: RulesAction,
    },
    /// Recompute report.csv from the logs and print it.
    Report { run_dir: PathBuf },
    /// Re-execute logged trajectories and compare them with the log.
    Replay {
        run_dir: PathBuf,
        /// Trajectory id `<epoch>-<index>`.
        #[arg(required_unless_present = "all", conflicts_with = "all")]
        trajectory: Option<String>,
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum RulesAction {
    /// One line per rule: id, status, success rate, applications.
    List,
    /// Full detail for one rule.
    Show { id: String },
    /// Re-verify every applied rule id in the trajectory log.
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to create (default: runs/<env>-<variant>-seed<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue a partial run from its next epoch, using its own config.
    #[arg(long, conflicts_with_all = ["config", "out"])]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// remote, scripted:<policy> or replay:<path>.
    #[arg(long)]
    pub backend: Option<BackendSpec>,
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Trajectories per epoch.
    #[arg(long)]
    pub trajectories: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Answer list, one word per line.
    #[arg(long)]
    pub wordlist: Option<PathBuf>,
    /// Extra accepted guesses beyond the answer list.
    #[arg(long)]
    pub allowed_wordlist: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub hard_validity: Option<Switch>,
    /// list, lex or random.
    #[arg(long)]
    pub fallback_order: Option<CandidateOrder>,
    #[arg(long)]
    pub icl_samples: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    /// heuristic or llm.
    #[arg(long)]
    pub profiler: Option<ProfilerBackend>,
    /// miner or llm.
    #[arg(long)]
    pub reasoning: Option<ReasoningBackend>,
    #[arg(long)]
    pub min_support: Option<usize>,
    /// Parallel trajectory workers.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub min_applications: Option<u64>,
    #[arg(long)]
    pub promote_threshold: Option<f64>,
    #[arg(long)]
    pub retire_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub include_candidates: Option<Switch>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub attempts: Option<u32>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    /// Append every completion to this JSONL file (replayable).
    #[arg(long)]
    pub log_completions: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> ConfigFile {
        let on = |s: Option<Switch>| s.map(|s| s == Switch::On);
        ConfigFile {
            env: self.env,
            variant: self.variant,
            backend: self.backend.clone(),
            epochs: self.epochs,
            trajectories: self.trajectories,
            seed: self.seed.map(Seed),
            wordlist: self.wordlist.clone(),
            allowed_wordlist: self.allowed_wordlist.clone(),
            hard_validity: on(self.hard_validity),
            fallback_order: self.fallback_order,
            icl_samples: self.icl_samples,
            warmup_epochs: self.warmup_epochs,
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            profiler: self.profiler,
            reasoning: self.reasoning,
            min_support: self.min_support,
            workers: self.workers,
            lifecycle: LifecycleSection {
                min_applications: self.min_applications,
                promote_threshold: self.promote_threshold,
                retire_threshold: self.retire_threshold,
                include_candidates: on(self.include_candidates),
            },
            remote: RemoteSection {
                base_url: self.base_url.clone(),
                model: self.model.clone(),
                timeout_secs: self.timeout_secs,
                attempts: self.attempts,
                max_concurrency: self.max_concurrency,
                log: self.log_completions.clone(),
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("no trajectory `{0}` in this run")]
    MissingTrajectory(String),
    #[error(transparent)]
    RunDir(#[from] RunDirError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Usage = 1,
    Partial = 2,
    Mismatch = 3,
}

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Experiment(ExperimentError::Config(_))
            | CliError::Experiment(ExperimentError::RunDir(
                RunDirError::AlreadyExists(_) | RunDirError::MissingRun(_) | RunDirError::Locked(_),
            )) => Status::Usage,
            CliError::Experiment(_) => Status::Partial,
            _ => Status::Usage,
        }
    }
}

/// Runs one command. Normal output goes to `out`, warnings to `err`.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Status {
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args, out),
        Command::Rules { run_dir, action } => cmd_rules(&run_dir, &action, out),
        Command::Report { run_dir } => cmd_report(&run_dir, out, err),
        Command::Replay { run_dir, trajectory, all } => {
            cmd_replay(&run_dir, trajectory.as_deref().filter(|_| !all), out)
        }
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.status() == Status::Partial {
                let _ = writeln!(err, "the run directory holds every completed epoch; continue it with `run --resume`");
            }
            e.status()
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn epoch_line(o: &EpochOutcome, total: u32) -> String {
    let r = &o.row;
    let mut line = format!(
        "epoch {}/{}  reward {:.2} [{}, {}]  success {:.2}  consistency {}  compliance {}  recovery {}",
        o.epoch,
        total,
        r.mean_reward,
        fmt_opt(r.ci_low),
        fmt_opt(r.ci_high),
        r.success_rate,
        fmt_opt(r.consistency_ratio),
        fmt_opt(r.compliance_ratio),
        fmt_opt(r.recovery_rate),
    );
    if let Some((c, v, x)) = o.rule_counts {
        line.push_str(&format!("  rules {c}/{v}/{x}"));
    }
    if o.aborted > 0 {
        line.push_str(&format!("  aborted {}", o.aborted));
    }
    line
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<Status, CliError> {
    let (cfg, dir, resume) = match &args.resume {
        Some(dir) => {
            if args.overrides() != ConfigFile::default() {
                return Err(CliError::Usage(
                    "--resume continues with the run's own config.toml; drop the other flags".into(),
                ));
            }
            let run = RunDir::open(dir)?;
            let text = run.config_text()?;
            let origin = run.path(trustloop::agent::rundir::CONFIG_FILE).display().to_string();
            (RunConfig::from_toml(&text, &origin)?, dir.clone(), true)
        }
        None => {
            let base = match &args.config {
                Some(path) => ConfigFile::load(path)?,
                None => ConfigFile::default(),
            };
            let cfg = base.overlay(args.overrides()).resolve()?;
            let dir = args.out.clone().unwrap_or_else(|| {
                PathBuf::from("runs").join(format!("{}-{}-seed{}", cfg.env(), cfg.variant(), cfg.seed()))
            });
            (cfg, dir, false)
        }
    };
    let factory = cfg.factory()?;
    let gateway = cfg.gateway(factory.words().clone())?;
    let setup = ExperimentSetup { config: cfg.agent_config(), factory, gateway, config_text: cfg.to_toml() };
    writeln!(
        out,
        "{} {} on {} with {} -> {}",
        if resume { "resuming" } else { "running" },
        cfg.variant(),
        cfg.env(),
        cfg.backend(),
        dir.display()
    )?;
    let total = setup.config.epochs;
    let mut write_failed = None;
    let record = run_experiment(&setup, &dir, resume, None, &mut |o| {
        if let Err(e) = writeln!(out, "{}", epoch_line(o, total)) {
            write_failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_failed {
        return Err(e.into());
    }
    let (c, v, x) = record.bank.status_counts();
    writeln!(
        out,
        "done: {} epochs, {} trajectories, rules candidate/verified/retired {c}/{v}/{x}",
        record.completed_epochs, record.trajectories
    )?;
    Ok(Status::Success)
}

fn bank_of(dir: &RunDir) -> Result<RuleBank, CliError> {
    Ok(dir.bank()?.unwrap_or_default())
}

fn config_of(dir: &RunDir) -> Result<RunConfig, CliError> {
    let text = dir.config_text()?;
    let origin = dir.path(trustloop::agent::rundir::CONFIG_FILE).display().to_string();
    Ok(RunConfig::from_toml(&text, &origin)?)
}

pub fn cmd_rules(run_dir: &Path, action: &RulesAction, out: &mut dyn Write) -> Result<Status, CliError> {
    let dir = RunDir::open(run_dir)?;
    let bank = bank_of(&dir)?;
    match action {
        RulesAction::List => {
            writeln!(out, "{:<16} {:<10} {:>12} {:>12}", "id", "status", "success_rate", "applications")?;
            for r in bank.rules() {
                writeln!(
                    out,
                    "{:<16} {:<10} {:>12} {:>12}",
                    r.id,
                    r.status,
                    r.stats.success_rate().map_or_else(|| "-".into(), |x| format!("{x:.3}")),
                    r.stats.applications
                )?;
            }
            Ok(Status::Success)
        }
        RulesAction::Show { id } => {
            let r = bank.get(id).ok_or_else(|| CliError::UnknownRule(id.clone()))?;
            writeln!(out, "id:          {}", r.id)?;
            writeln!(out, "status:      {}", r.status)?;
            writeln!(out, "condition:   {}", r.condition)?;
            writeln!(out, "template:    {}", r.action)?;
            writeln!(out, "text:        {}", r.free_text)?;
            writeln!(out, "stats:       {} applications, {} successes", r.stats.applications, r.stats.successes)?;
            writeln!(
                out,
                "provenance:  epoch {} from {}",
                r.provenance.epoch_discovered,
                r.provenance.source_trajectories.join(", ")
            )?;
            Ok(Status::Success)
        }
        RulesAction::Audit => {
            let env = config_of(&dir)?.factory()?.make();
            let trajectories = dir.trajectories()?;
            let checked: usize = trajectories.iter().flat_map(|t| &t.steps).map(|s| s.applied_rule_ids.len()).sum();
            let mismatches = audit_applied_rules(&trajectories, &bank, env.as_ref());
            for m in &mismatches {
                writeln!(out, "{m}")?;
            }
            writeln!(out, "checked {checked} rule applications: {} mismatches", mismatches.len())?;
            Ok(if mismatches.is_empty() { Status::Success } else { Status::Mismatch })
        }
    }
}

fn report_table(rows: &[ReportRow]) -> String {
    let mut s = format!(
        "{:>5} {:>11} {:>9} {:>9} {:>11} {:>10} {:>8} {:>7}\n",
        "epoch", "mean_reward", "ci_low", "ci_high", "consistency", "compliance", "recovery", "success"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>5} {:>11.3} {:>9} {:>9} {:>11} {:>10} {:>8} {:>7.3}\n",
            r.epoch,
            r.mean_reward,
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
            fmt_opt(r.consistency_ratio),
            fmt_opt(r.compliance_ratio),
            fmt_opt(r.recovery_rate),
            r.success_rate
        ));
    }
    s
}

/// Recomputes the report. A cached report that disagrees is replaced and
/// reported as a verification mismatch.
pub fn cmd_report(run_dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<Status, CliError> {
    let dir = RunDir::open(run_dir)?;
    let env = config_of(&dir)?.factory()?.make();
    let (rows, csv) = recompute_report(&dir, env.as_ref())?;
    let cached = dir.cached_report()?;
    let status = match &cached {
        Some(c) if *c != csv => {
            writeln!(
                err,
                "warning: cached {REPORT_FILE} differs from the values recomputed from the logs; rewriting it"
            )?;
            Status::Mismatch
        }
        _ => Status::Success,
    };
    if cached.as_deref() != Some(csv.as_str()) {
        dir.write_report(&csv)?;
    }
    write!(out, "{}", report_table(&rows))?;
    Ok(status)
}

pub fn cmd_replay(run_dir: &Path, id: Option<&str>, out: &mut dyn Write) -> Result<Status, CliError> {
    let dir = RunDir::open(run_dir)?;
    let factory = config_of(&dir)?.factory()?;
    let trajectories = dir.trajectories()?;
    let selected: Vec<_> = match id {
        Some(id) => vec![trajectories
            .iter()
            .find(|t| t.id() == id)
            .ok_or_else(|| CliError::MissingTrajectory(id.to_string()))?],
        None => trajectories.iter().collect(),
    };
    let mut env = factory.make();
    let mut failures = 0;
    for t in selected {
        match replay_trajectory(env.as_mut(), t) {
            Ok(()) => writeln!(out, "{} OK", t.id())?,
            Err(m) => {
                failures += 1;
                writeln!(out, "{} {m}", t.id())?;
            }
        }
    }
    Ok(if failures == 0 { Status::Success } else { Status::Mismatch })
}
