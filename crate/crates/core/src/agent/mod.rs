//! Trajectory and epoch drivers for the baseline and guided agents.

mod experiment;
pub mod prompt;
pub mod rundir;
mod verify;

pub use experiment::{
    bank_from_events, run_experiment, EpochOutcome, ExperimentError, ExperimentRecord, ExperimentSetup,
};
pub use rundir::{
    recompute_report, report_rows, LogEvent, LogRecord, ProfileRecord, ProfileStage, RunDir, RunDirError, RunLock,
    RunState,
};
pub use verify::{audit_applied_rules, replay_trajectory, AuditMismatch, ReplayMismatch};

use crate::constraints::CandidateOrder;
use crate::env::gmn::GuessMyNumber;
use crate::env::wordle::{WordList, Wordle};
use crate::env::{EnvSpec, Environment, HistoryEntry, Trajectory, Value};
use crate::gateway::{parse_action, CompletionBackend, CompletionRequest, Purpose};
use crate::generation::{commit, fallback_generate, gate, Decision, GateResult};
use crate::profiler::{ProfilerBackend, TaskProfile};
use crate::reasoning::ReasoningBackend;
use crate::rng::{derive_stream, SplitMix64};
use crate::rules::{LifecycleConfig, Rule, RuleBank};
use prompt::{compose_prompt, IclExample, PromptRule, PromptState, SYSTEM_TEXT};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Auxiliary random streams derived from a trajectory seed.
pub const FALLBACK_STREAM: u64 = 1;
pub const ICL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    BaselineIcl,
    Guided,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "baseline_icl" => Ok(Self::BaselineIcl),
            "guided" => Ok(Self::Guided),
            _ => Err(format!("unknown variant `{s}` (expected baseline, baseline_icl or guided)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::BaselineIcl => "baseline_icl",
            Self::Guided => "guided",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Gmn,
    Wordle,
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gmn" => Ok(Self::Gmn),
            "wordle" => Ok(Self::Wordle),
            _ => Err(format!("unknown environment `{s}` (expected gmn or wordle)")),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gmn => "gmn",
            Self::Wordle => "wordle",
        })
    }
}

/// Builds independent environment instances of one configured kind.
#[derive(Clone)]
pub struct EnvFactory {
    kind: EnvKind,
    hard_validity: bool,
    words: Arc<WordList>,
}

impl EnvFactory {
    pub fn new(kind: EnvKind, hard_validity: bool, words: Arc<WordList>) -> Self {
        Self { kind, hard_validity, words }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn words(&self) -> &Arc<WordList> {
        &self.words
    }

    pub fn make(&self) -> Box<dyn Environment> {
        match self.kind {
            EnvKind::Gmn => Box::new(GuessMyNumber::new()),
            EnvKind::Wordle => Box::new(Wordle::new(self.words.clone(), self.hard_validity)),
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.make().spec().clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub variant: Variant,
    pub epochs: u32,
    pub trajectories_per_epoch: u32,
    pub icl_sample_count: usize,
    /// Epoch at whose start the task is first profiled.
    pub warmup_epochs: u32,
    pub master_seed: u64,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub fallback_order: CandidateOrder,
    pub profiler: ProfilerBackend,
    pub reasoning: ReasoningBackend,
    pub lifecycle: LifecycleConfig,
    pub min_support: usize,
    pub workers: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Guided,
            epochs: 30,
            trajectories_per_epoch: 20,
            icl_sample_count: 3,
            warmup_epochs: 1,
            master_seed: 0,
            temperature: 1.0,
            max_output_tokens: 512,
            fallback_order: CandidateOrder::ListOrder,
            profiler: ProfilerBackend::Heuristic,
            reasoning: ReasoningBackend::Miner,
            lifecycle: LifecycleConfig::default(),
            min_support: 3,
            workers: 1,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.trajectories_per_epoch == 0 {
            return Err("trajectories must be at least 1".into());
        }
        if self.warmup_epochs == 0 {
            return Err("warmup_epochs must be at least 1".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature {} must be non-negative", self.temperature));
        }
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.min_support == 0 {
            return Err("min_support must be at least 1".into());
        }
        let l = &self.lifecycle;
        if !(0.0..=1.0).contains(&l.promote_threshold) || !(0.0..=1.0).contains(&l.retire_threshold) {
            return Err("lifecycle thresholds must lie in [0, 1]".into());
        }
        if l.retire_threshold > l.promote_threshold {
            return Err("retire_threshold must not exceed promote_threshold".into());
        }
        Ok(())
    }
}

/// Everything one trajectory needs besides its environment.
pub struct TrajectoryPlan<'a> {
    pub epoch: u32,
    pub index: u32,
    pub seed: u64,
    pub variant: Variant,
    /// Absent before the first profiling; the agent then acts as a baseline.
    pub profile: Option<&'a TaskProfile>,
    pub bank: &'a RuleBank,
    pub icl: &'a [IclExample],
    pub gateway: &'a dyn CompletionBackend,
    pub fallback_order: CandidateOrder,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Ids of the `applicable` rules whose prescription the committed action
/// matches.
pub fn followed_rules(
    env: &dyn Environment,
    applicable: &[&Rule],
    ctx: &crate::env::RuleContext,
    observation: &Value,
    committed: &Value,
) -> Vec<String> {
    let satisfied = |_| env.compliant(observation, committed);
    applicable.iter().filter(|r| r.followed_by(ctx, committed, &satisfied)).map(|r| r.id.clone()).collect()
}

pub fn run_trajectory(env: &mut dyn Environment, plan: &TrajectoryPlan) -> Trajectory {
    env.reset(plan.seed);
    let mut rng: SplitMix64 = derive_stream(plan.seed, FALLBACK_STREAM);
    let guided = plan.variant == Variant::Guided;
    let gated = guided && plan.profile.is_some();
    let spec = env.spec().clone();
    let mut steps = Vec::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut diagnostic = None;

    while !env.is_finished() {
        let observation = env.observation();
        let turn = env.turn() + 1;
        let ctx = env.rule_context(&observation, &history);
        let applicable = if guided { plan.bank.applicable(&ctx, turn) } else { Vec::new() };
        let state = PromptState {
            env: spec.name.clone(),
            turn,
            max_turns: spec.max_turns,
            observation: observation.clone(),
            history: history.clone(),
            rules: applicable.iter().map(|r| PromptRule::from_rule(r, &ctx)).collect(),
        };
        let mut request = CompletionRequest::new(Purpose::Action, SYSTEM_TEXT, compose_prompt(&spec, &state, plan.icl));
        request.temperature = plan.temperature;
        request.max_output_tokens = plan.max_output_tokens;
        let reply = match plan.gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                diagnostic = Some(format!("turn {turn}: {e}"));
                break;
            }
        };
        let parsed = parse_action(&reply, spec.action_kind());

        let decision = match (gated, plan.profile) {
            (true, Some(profile)) => {
                let verdict = match &parsed {
                    Ok(v) => gate(v, env, &observation, &history),
                    Err(v) => GateResult::FallbackNeeded(v.clone()),
                };
                match verdict {
                    GateResult::Accepted(a) => Decision::accepted(a),
                    GateResult::FallbackNeeded(violation) => {
                        match fallback_generate(env, &observation, &history, profile, plan.fallback_order, &mut rng) {
                            Ok(a) => Decision::fallback(parsed.clone().unwrap_or(Value::Null), violation, a),
                            Err(e) => {
                                diagnostic = Some(format!("turn {turn}: {e}"));
                                break;
                            }
                        }
                    }
                }
            }
            _ => match parsed {
                Ok(v) => {
                    let violation = env.validate(&v, &observation, &history).err();
                    Decision::ungated(v, violation)
                }
                Err(v) => Decision::ungated(Value::Null, Some(v)),
            },
        };

        let (transition, mut record) = match commit(env, decision, Vec::new()) {
            Ok(x) => x,
            Err(e) => {
                diagnostic = Some(format!("turn {turn}: {e}"));
                break;
            }
        };
        record.applied_rule_ids = followed_rules(env, &applicable, &ctx, &observation, &record.committed_action);
        history.push(HistoryEntry { observation, action: record.committed_action.clone(), reward: transition.reward });
        steps.push(record);
    }

    let final_reward = steps.last().map_or(0.0, |s| s.reward);
    Trajectory {
        epoch: plan.epoch,
        index: plan.index,
        seed: plan.seed,
        turn_count: steps.len() as u32,
        steps,
        final_reward,
        success: final_reward > 0.0,
        diagnostic,
    }
}
