//! The task-environment interface and the trajectory data model.
//!
//! An environment bundles an action space, an observation space and the
//! reward / validity / step / reset / done functions behind [`Environment`].
//! Everything downstream (agent loop, rule mining, metrics, replay) works
//! only against this trait and the [`Trajectory`] records it produces.

pub mod gmn;
mod trajectory;
mod value;
pub mod wordle;

use crate::constraints::CandidateOrder;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use thiserror::Error;

pub use trajectory::{read_trajectories, write_trajectories, EpochLog, StepRecord, Trajectory};
pub use value::Value;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called after the trajectory finished")]
    StepAfterDone,
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Integer,
    Word,
    List,
    Text,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::Integer => "integer",
            FieldKind::Word => "word",
            FieldKind::List => "list",
            FieldKind::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub description: String,
}

impl FieldSpec {
    pub fn new(name: &str, kind: FieldKind, description: &str) -> Self {
        Self { name: name.to_string(), kind, description: description.to_string() }
    }
}

/// Descriptive half of an environment: what the agent is told about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub observation_schema: Vec<FieldSpec>,
    pub action_schema: Vec<FieldSpec>,
    pub reward_description: String,
    pub goal_description: String,
    pub max_turns: u32,
    /// Whether action validity depends on feedback accumulated over the
    /// trajectory rather than on the proposed action alone.
    pub cumulative_constraints: bool,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.name.trim().is_empty() {
            return Err(EnvError::InvalidSpec("name is empty".into()));
        }
        if self.max_turns == 0 {
            return Err(EnvError::InvalidSpec("max_turns must be at least 1".into()));
        }
        if self.action_schema.is_empty() {
            return Err(EnvError::InvalidSpec("action schema is empty".into()));
        }
        for (label, schema) in [("observation", &self.observation_schema), ("action", &self.action_schema)] {
            let mut seen = HashSet::new();
            for field in schema {
                if !seen.insert(field.name.as_str()) {
                    return Err(EnvError::InvalidSpec(format!("duplicate {label} field `{}`", field.name)));
                }
            }
        }
        Ok(())
    }

    /// Kind of the (single) action field.
    pub fn action_kind(&self) -> FieldKind {
        self.action_schema[0].kind
    }

    /// Environment description as shown to the model.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("Environment: {}\n", self.name));
        out.push_str("Observations:\n");
        for field in &self.observation_schema {
            out.push_str(&format!("  - {} ({}): {}\n", field.name, field.kind, field.description));
        }
        out.push_str("Actions:\n");
        for field in &self.action_schema {
            out.push_str(&format!("  - {} ({}): {}\n", field.name, field.kind, field.description));
        }
        out.push_str(&format!("Reward: {}\n", self.reward_description));
        out.push_str(&format!("Goal: {}\n", self.goal_description));
        out.push_str(&format!("Maximum turns: {}\n", self.max_turns));
        out
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Value,
    pub reward: f64,
    pub done: bool,
}

/// One `(o_t, a_t, r_{t+1})` entry of the running trajectory history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub observation: Value,
    pub action: Value,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    ParseFailure,
    WrongType,
    OutOfRange,
    NotInWordList,
    ConstraintViolation,
}

/// Why a proposed action failed the validity check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Named values a rule condition or action template may refer to.
pub type RuleContext = BTreeMap<String, Value>;

/// Observation fields plus `previous_guess` (the last committed action).
pub fn base_rule_context(observation: &Value, history: &[HistoryEntry]) -> RuleContext {
    let mut ctx: RuleContext = observation.as_record().cloned().unwrap_or_default();
    let previous = history.last().map(|h| h.action.clone()).unwrap_or(Value::Null);
    ctx.insert("previous_guess".into(), previous);
    ctx
}

/// A task environment: the `E = {A, O, f_reward, f_validity, f_step,
/// f_reset, g_done}` contract.
///
/// Instances hold per-trajectory mutable state and are not shared between
/// threads; run parallel trajectories on separate instances.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Reinitializes from `seed` and returns `o_0`.
    fn reset(&mut self, seed: u64) -> Value;

    fn step(&mut self, action: &Value) -> Result<Transition, EnvError>;

    /// Consumes a turn without a usable action (reward 0). Used when an
    /// ungated agent produces something that cannot be stepped at all.
    fn forfeit(&mut self) -> Result<Transition, EnvError>;

    /// Current observation.
    fn observation(&self) -> Value;

    /// Turns taken so far.
    fn turn(&self) -> u32;

    fn is_finished(&self) -> bool;

    /// `f_validity` with a diagnosis. Pure.
    fn validate(&self, action: &Value, observation: &Value, history: &[HistoryEntry]) -> Result<(), Violation>;

    fn check_validity(&self, action: &Value, observation: &Value, history: &[HistoryEntry]) -> bool {
        self.validate(action, observation, history).is_ok()
    }

    /// `g_done`: success or exhausted turn budget.
    fn is_done(&self, observation: &Value, reward: f64, _history: &[HistoryEntry]) -> bool {
        let turn = observation.get("turn").and_then(Value::as_int).unwrap_or(0);
        reward > 0.0 || turn >= i64::from(self.spec().max_turns)
    }

    /// Whether `action` satisfies every constraint implied by the feedback
    /// visible in `observation`. Used by the compliance metric.
    fn compliant(&self, observation: &Value, action: &Value) -> bool;

    fn rule_context(&self, observation: &Value, history: &[HistoryEntry]) -> RuleContext {
        base_rule_context(observation, history)
    }

    /// Valid actions in a deterministic order. Errors when none exist.
    fn candidates<'a>(
        &'a self,
        observation: &Value,
        history: &[HistoryEntry],
        order: CandidateOrder,
        rng: &mut SplitMix64,
    ) -> Result<Box<dyn Iterator<Item = Value> + 'a>, Violation>;

    /// A single sensible action for direct-mode fallback.
    fn default_action(&self, observation: &Value, history: &[HistoryEntry]) -> Value;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EnvSpec {
        EnvSpec {
            name: "toy".into(),
            observation_schema: vec![FieldSpec::new("turn", FieldKind::Integer, "turn index")],
            action_schema: vec![FieldSpec::new("guess", FieldKind::Integer, "a number")],
            reward_description: "r".into(),
            goal_description: "g".into(),
            max_turns: 3,
            cumulative_constraints: false,
        }
    }

    #[test]
    fn spec_invariants() {
        assert!(spec().validate().is_ok());
        let mut s = spec();
        s.max_turns = 0;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.observation_schema.push(FieldSpec::new("turn", FieldKind::Integer, "dup"));
        assert!(s.validate().is_err());
        let mut s = spec();
        s.name = " ".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn base_context_carries_previous_guess() {
        let obs = Value::record([("turn", Value::Int(1)), ("hint", Value::Int(40))]);
        let history = vec![HistoryEntry {
            observation: Value::record([("turn", Value::Int(0))]),
            action: Value::Int(5000),
            reward: 0.0,
        }];
        let ctx = base_rule_context(&obs, &history);
        assert_eq!(ctx["previous_guess"], Value::Int(5000));
        assert_eq!(ctx["hint"], Value::Int(40));
        assert_eq!(base_rule_context(&obs, &[])["previous_guess"], Value::Null);
    }
}
