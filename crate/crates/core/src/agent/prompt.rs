//! Execution prompt rendering.
//!
//! Every prompt embeds a fenced `state` block holding the JSON form of
//! [`PromptState`]. A live model sees the same block that scripted policies
//! parse.

use crate::env::RuleContext;
use crate::env::{EnvSpec, FieldKind, HistoryEntry, Trajectory, Value};
use crate::rules::{GenerationPolicy, Prescription, Rule};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

const ACTION_TEMPLATE: &str = include_str!("../../assets/action_prompt.txt");

pub const SYSTEM_TEXT: &str = "You are a careful decision-making agent. Follow the requested output format exactly.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRule {
    pub id: String,
    pub directive: String,
    /// The action the rule prescribes right now, when it is a concrete value.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub suggested_action: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<GenerationPolicy>,
}

impl PromptRule {
    pub fn from_rule(rule: &Rule, ctx: &RuleContext) -> Self {
        let (suggested_action, policy) = match rule.prescribe(ctx) {
            Some(Prescription::Action(v)) => (v, None),
            Some(Prescription::Policy(p)) => (Value::Null, Some(p)),
            None => (Value::Null, None),
        };
        Self { id: rule.id.clone(), directive: rule.describe(), suggested_action, policy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptState {
    pub env: String,
    /// The turn being decided (1-based).
    pub turn: u32,
    pub max_turns: u32,
    pub observation: Value,
    pub history: Vec<HistoryEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<PromptRule>,
}

impl PromptState {
    /// Pulls the last `state` block out of a prompt.
    pub fn extract(prompt: &str) -> Option<Self> {
        let block = crate::gateway::extract_block(prompt, "state")?;
        serde_json::from_str(block).ok()
    }
}

/// A past successful trajectory shown to the ICL baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    pub trajectory_id: String,
    pub actions: Vec<Value>,
    pub final_reward: f64,
}

impl IclExample {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            trajectory_id: t.id(),
            actions: t.steps.iter().map(|s| s.committed_action.clone()).collect(),
            final_reward: t.final_reward,
        }
    }
}

fn render_history(state: &PromptState) -> String {
    if state.history.is_empty() {
        return "(no actions taken yet)".to_string();
    }
    let mut out = String::new();
    for (i, entry) in state.history.iter().enumerate() {
        let after = state.history.get(i + 1).map_or(&state.observation, |next| &next.observation);
        let _ =
            writeln!(out, "turn {}: action {} -> reward {}, observation {}", i + 1, entry.action, entry.reward, after);
    }
    out.pop();
    out
}

fn render_icl(examples: &[IclExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nSuccessful past trajectories:\n");
    for (i, ex) in examples.iter().enumerate() {
        let actions: Vec<String> = ex.actions.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "{}. actions [{}], final reward {}", i + 1, actions.join(", "), ex.final_reward);
    }
    out
}

fn render_rules(rules: &[PromptRule]) -> String {
    if rules.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nRules learned from earlier epochs (follow them when they apply):\n");
    for (i, rule) in rules.iter().enumerate() {
        let _ = write!(out, "{}. [{}] {}", i + 1, rule.id, rule.directive);
        if !rule.suggested_action.is_null() {
            let _ = write!(out, " (here: {})", rule.suggested_action);
        }
        out.push('\n');
    }
    out
}

/// Renders the execution prompt. Deterministic for equal inputs.
pub fn compose_prompt(spec: &EnvSpec, state: &PromptState, icl: &[IclExample]) -> String {
    let example = match spec.action_kind() {
        FieldKind::Integer => "5000",
        FieldKind::Word => "crane",
        _ => "<action>",
    };
    let state_json = serde_json::to_string(state).expect("prompt state serializes");
    ACTION_TEMPLATE
        .replace("{env_description}", spec.render().trim_end())
        .replace("{icl_block}", &render_icl(icl))
        .replace("{rules_block}", &render_rules(&state.rules))
        .replace("{history_block}", &render_history(state))
        .replace("{state_json}", &state_json)
        .replace("{turn}", &state.turn.to_string())
        .replace("{max_turns}", &state.max_turns.to_string())
        .replace("{answer_example}", example)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gmn;

    fn state(history: Vec<HistoryEntry>, rules: Vec<PromptRule>) -> PromptState {
        PromptState {
            env: "guess_my_number".into(),
            turn: history.len() as u32 + 1,
            max_turns: 15,
            observation: Value::record([("turn", Value::Int(history.len() as i64))]),
            history,
            rules,
        }
    }

    fn rule(id: &str) -> PromptRule {
        PromptRule {
            id: id.into(),
            directive: "if hint present, then the best action is previous_guess - hint".into(),
            suggested_action: Value::Int(4960),
            policy: None,
        }
    }

    #[test]
    fn baseline_prompt_has_no_rules_block() {
        let p = compose_prompt(&gmn::spec(), &state(vec![], vec![]), &[]);
        assert!(p.contains("Environment: guess_my_number"));
        assert!(p.contains("(no actions taken yet)"));
        assert!(!p.contains("Rules learned"));
        assert!(!p.contains("Successful past trajectories"));
        assert_eq!(PromptState::extract(&p).unwrap(), state(vec![], vec![]));
    }

    #[test]
    fn rules_block_lists_rules_in_order() {
        let s = state(vec![], vec![rule("r-aaa"), rule("r-bbb")]);
        let p = compose_prompt(&gmn::spec(), &s, &[]);
        let a = p.find("1. [r-aaa]").unwrap();
        let b = p.find("2. [r-bbb]").unwrap();
        assert!(a < b);
        assert!(!p.contains("3. ["));
        assert_eq!(PromptState::extract(&p).unwrap().rules.len(), 2);
    }

    #[test]
    fn icl_block_lists_examples_with_rewards() {
        let ex: Vec<IclExample> = (0..3)
            .map(|i| IclExample {
                trajectory_id: format!("1-{i}"),
                actions: vec![Value::Int(5000), Value::Int(4000 + i)],
                final_reward: 50.0,
            })
            .collect();
        let p = compose_prompt(&gmn::spec(), &state(vec![], vec![]), &ex);
        assert_eq!(p.matches("final reward 50").count(), 3);
    }

    #[test]
    fn rendering_is_deterministic() {
        let h = vec![HistoryEntry {
            observation: Value::record([("turn", Value::Int(0))]),
            action: Value::Int(5000),
            reward: 0.0,
        }];
        let a = compose_prompt(&gmn::spec(), &state(h.clone(), vec![rule("r-1")]), &[]);
        let b = compose_prompt(&gmn::spec(), &state(h, vec![rule("r-1")]), &[]);
        assert_eq!(a, b);
        assert!(a.contains("turn 1: action 5000"));
    }
}
