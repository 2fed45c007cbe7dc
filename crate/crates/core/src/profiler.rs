//! Task profiling: classifies an environment and picks the reasoning
//! granularity and the fallback generation strategy.

use crate::env::EnvSpec;
use crate::gateway::{extract_block, CompletionBackend, CompletionRequest, Purpose};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const PROFILER_TEMPLATE: &str = include_str!("../assets/profiler_prompt.txt");

const CATEGORIES: &str = "\
- temporal_structure: `sequential` when the best next action depends mainly on the previous turn; \
`cumulative` when every past observation keeps constraining later actions.
- constraint_intensity: `light` when almost any well-typed action is allowed; \
`heavy` when validity depends on accumulated feedback.
- generation_strategy: `direct` to generate actions freely and check them; \
`enumeration` to fall back on systematically enumerating the actions that satisfy every constraint \
(requires heavy constraints).
- reasoning_window: how many recent turns a rule may look at (1 to the turn budget).";

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error("profiler backend unavailable: {0}")]
    BackendUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalStructure {
    Sequential,
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintIntensity {
    Light,
    Heavy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStrategy {
    Direct,
    Enumeration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfilerBackend {
    #[default]
    Heuristic,
    Llm,
}

impl FromStr for ProfilerBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heuristic" => Ok(Self::Heuristic),
            "llm" => Ok(Self::Llm),
            _ => Err(format!("unknown profiler backend `{s}` (expected heuristic or llm)")),
        }
    }
}

impl fmt::Display for ProfilerBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Heuristic => "heuristic",
            Self::Llm => "llm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub temporal_structure: TemporalStructure,
    pub constraint_intensity: ConstraintIntensity,
    pub generation_strategy: GenerationStrategy,
    pub reasoning_window: u32,
    pub rationale: String,
}

impl TaskProfile {
    pub fn validate(&self, max_turns: u32) -> Result<(), String> {
        if self.generation_strategy == GenerationStrategy::Enumeration
            && self.constraint_intensity != ConstraintIntensity::Heavy
        {
            return Err("enumeration requires heavy constraint intensity".into());
        }
        if self.reasoning_window == 0 || self.reasoning_window > max_turns {
            return Err(format!("reasoning_window {} outside [1, {max_turns}]", self.reasoning_window));
        }
        Ok(())
    }

    /// Field-wise equality, ignoring the rationale.
    pub fn same_categories(&self, other: &TaskProfile) -> bool {
        self.temporal_structure == other.temporal_structure
            && self.constraint_intensity == other.constraint_intensity
            && self.generation_strategy == other.generation_strategy
            && self.reasoning_window == other.reasoning_window
    }
}

impl fmt::Display for TaskProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}/{:?}/{:?} window {}",
            self.temporal_structure, self.constraint_intensity, self.generation_strategy, self.reasoning_window
        )
    }
}

/// What the profiler may see about an epoch that has finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub mean_turns: f64,
    pub invalid_proposals: usize,
}

impl fmt::Display for EpochSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {}: mean reward {:.2}, success rate {:.2}, mean turns {:.2}, invalid proposals {}",
            self.epoch, self.mean_reward, self.success_rate, self.mean_turns, self.invalid_proposals
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOutcome {
    pub profile: TaskProfile,
    pub backend: ProfilerBackend,
    /// Set when the LLM reply was unusable and the heuristic stood in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Pure function of the spec: validity that depends on accumulated history
/// means a cumulative, heavy, enumerable task.
pub fn heuristic_profile(spec: &EnvSpec) -> TaskProfile {
    if spec.cumulative_constraints {
        TaskProfile {
            temporal_structure: TemporalStructure::Cumulative,
            constraint_intensity: ConstraintIntensity::Heavy,
            generation_strategy: GenerationStrategy::Enumeration,
            reasoning_window: spec.max_turns,
            rationale: "action validity depends on all feedback accumulated so far".into(),
        }
    } else {
        TaskProfile {
            temporal_structure: TemporalStructure::Sequential,
            constraint_intensity: ConstraintIntensity::Light,
            generation_strategy: GenerationStrategy::Direct,
            reasoning_window: 2.min(spec.max_turns),
            rationale: "action validity does not depend on history; the previous turn carries the signal".into(),
        }
    }
}

pub fn render_prompt(spec: &EnvSpec, summaries: &[EpochSummary]) -> String {
    let summaries = if summaries.is_empty() {
        "(none yet)".to_string()
    } else {
        summaries.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
    };
    PROFILER_TEMPLATE
        .replace("{env_spec}", spec.render().trim_end())
        .replace("{categories}", CATEGORIES)
        .replace("{epoch_summaries}", &summaries)
}

fn category<T: serde::de::DeserializeOwned>(key: &str, raw: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(raw.to_string())).map_err(|_| format!("unknown {key} `{raw}`"))
}

/// Parses a `profile` block; every field must be present exactly once and
/// the result must satisfy the profile invariants.
pub fn parse_profile(text: &str, max_turns: u32) -> Result<TaskProfile, String> {
    let block = extract_block(text, "profile").ok_or("no profile block")?;
    let mut fields = BTreeMap::new();
    for line in block.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once(':').ok_or_else(|| format!("not a key:value line: `{line}`"))?;
        if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(format!("duplicate key `{}`", k.trim()));
        }
    }
    let mut take = |key: &str| fields.remove(key).ok_or_else(|| format!("missing `{key}`"));
    let temporal = take("temporal_structure")?;
    let intensity = take("constraint_intensity")?;
    let strategy = take("generation_strategy")?;
    let window = take("reasoning_window")?;
    let rationale = take("rationale")?;
    if let Some(extra) = fields.keys().next() {
        return Err(format!("unknown key `{extra}`"));
    }
    let profile = TaskProfile {
        temporal_structure: category("temporal_structure", &temporal)?,
        constraint_intensity: category("constraint_intensity", &intensity)?,
        generation_strategy: category("generation_strategy", &strategy)?,
        reasoning_window: window.parse().map_err(|_| format!("reasoning_window `{window}` is not an integer"))?,
        rationale,
    };
    profile.validate(max_turns)?;
    Ok(profile)
}

pub fn profile(
    spec: &EnvSpec,
    summaries: &[EpochSummary],
    backend: ProfilerBackend,
    gateway: Option<&dyn CompletionBackend>,
) -> Result<ProfileOutcome, ProfilerError> {
    match backend {
        ProfilerBackend::Heuristic => Ok(ProfileOutcome { profile: heuristic_profile(spec), backend, warning: None }),
        ProfilerBackend::Llm => {
            let gateway =
                gateway.ok_or_else(|| ProfilerError::BackendUnavailable("no completion backend configured".into()))?;
            let request = CompletionRequest::new(
                Purpose::Profiling,
                "You classify interactive tasks. Answer only in the requested format.",
                render_prompt(spec, summaries),
            );
            let reply = gateway.complete(&request).map_err(|e| ProfilerError::BackendUnavailable(e.to_string()))?;
            match parse_profile(&reply, spec.max_turns) {
                Ok(profile) => Ok(ProfileOutcome { profile, backend, warning: None }),
                Err(reason) => {
                    let warning = format!("profiler reply unusable ({reason}); using the heuristic profile");
                    tracing::warn!("{warning}");
                    Ok(ProfileOutcome {
                        profile: heuristic_profile(spec),
                        backend: ProfilerBackend::Heuristic,
                        warning: Some(warning),
                    })
                }
            }
        }
    }
}

/// Emitted when an end-of-epoch re-profile changes any category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileChanged {
    pub from: TaskProfile,
    pub to: TaskProfile,
}

/// Re-runs the profiler; the prior profile is kept (rationale included)
/// unless a category differs.
pub fn reprofile_if_shifted(
    prior: &TaskProfile,
    spec: &EnvSpec,
    summaries: &[EpochSummary],
    backend: ProfilerBackend,
    gateway: Option<&dyn CompletionBackend>,
) -> Result<(ProfileOutcome, Option<ProfileChanged>), ProfilerError> {
    let mut outcome = profile(spec, summaries, backend, gateway)?;
    if outcome.profile.same_categories(prior) {
        outcome.profile = prior.clone();
        Ok((outcome, None))
    } else {
        let change = ProfileChanged { from: prior.clone(), to: outcome.profile.clone() };
        Ok((outcome, Some(change)))
    }
}
