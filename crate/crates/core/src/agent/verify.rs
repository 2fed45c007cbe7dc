//! Offline checks over logged trajectories.

use super::followed_rules;
use crate::env::{Environment, Trajectory};
use crate::rules::RuleBank;
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayMismatch {
    /// 1-based turn of the first divergent step.
    pub turn: u32,
    pub field: &'static str,
    pub logged: String,
    pub replayed: String,
}

impl fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MISMATCH at step {}: {} logged {} but replay gives {}",
            self.turn, self.field, self.logged, self.replayed
        )
    }
}

/// Re-executes the logged committed actions from the logged seed and
/// compares every observation, reward and done flag bit for bit.
pub fn replay_trajectory(env: &mut dyn Environment, t: &Trajectory) -> Result<(), ReplayMismatch> {
    let mut observation = env.reset(t.seed);
    for step in &t.steps {
        let mismatch =
            |field, logged: String, replayed: String| ReplayMismatch { turn: step.turn, field, logged, replayed };
        if observation != step.observation_before {
            return Err(mismatch("observation", step.observation_before.to_string(), observation.to_string()));
        }
        let transition = if step.committed_action.is_null() { env.forfeit() } else { env.step(&step.committed_action) }
            .map_err(|e| mismatch("action", step.committed_action.to_string(), e.to_string()))?;
        if transition.reward.to_bits() != step.reward.to_bits() {
            return Err(mismatch("reward", step.reward.to_string(), transition.reward.to_string()));
        }
        if transition.done != step.done {
            return Err(mismatch("done", step.done.to_string(), transition.done.to_string()));
        }
        if env.turn() != step.turn {
            return Err(mismatch("turn", step.turn.to_string(), env.turn().to_string()));
        }
        observation = transition.observation;
    }
    let last = t.steps.last();
    let final_reward = last.map_or(0.0, |s| s.reward);
    if final_reward.to_bits() != t.final_reward.to_bits() {
        return Err(ReplayMismatch {
            turn: last.map_or(0, |s| s.turn),
            field: "final_reward",
            logged: t.final_reward.to_string(),
            replayed: final_reward.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditMismatch {
    pub trajectory: String,
    pub turn: u32,
    pub rule_id: String,
    pub reason: String,
}

impl fmt::Display for AuditMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} turn {}: rule {} {}", self.trajectory, self.turn, self.rule_id, self.reason)
    }
}

/// Re-derives each recorded applied rule id from the logged observation
/// and history. `bank` must hold every rule the run ever registered.
pub fn audit_applied_rules<'a>(
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
    bank: &RuleBank,
    env: &dyn Environment,
) -> Vec<AuditMismatch> {
    let mut out = Vec::new();
    for t in trajectories {
        for (i, step) in t.steps.iter().enumerate() {
            if step.applied_rule_ids.is_empty() {
                continue;
            }
            let history = t.history(i);
            let ctx = env.rule_context(&step.observation_before, &history);
            for id in &step.applied_rule_ids {
                let reason = match bank.get(id) {
                    None => Some("is not in the rule bank".to_string()),
                    Some(rule) if !rule.matches(&ctx, step.turn) => Some("condition does not hold".to_string()),
                    Some(rule) => {
                        let followed =
                            followed_rules(env, &[rule], &ctx, &step.observation_before, &step.committed_action);
                        followed
                            .is_empty()
                            .then(|| format!("prescription does not reproduce {}", step.committed_action))
                    }
                };
                if let Some(reason) = reason {
                    out.push(AuditMismatch { trajectory: t.id(), turn: step.turn, rule_id: id.clone(), reason });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_trajectory, TrajectoryPlan, Variant};
    use crate::constraints::CandidateOrder;
    use crate::env::gmn::GuessMyNumber;
    use crate::env::wordle::WordList;
    use crate::gateway::{ScriptedBackend, ScriptedPolicy};

    fn played(seed: u64) -> Trajectory {
        let gw = ScriptedBackend::new(ScriptedPolicy::GmnBinarySearch, WordList::standard());
        let bank = RuleBank::default();
        let plan = TrajectoryPlan {
            epoch: 1,
            index: 0,
            seed,
            variant: Variant::Baseline,
            profile: None,
            bank: &bank,
            icl: &[],
            gateway: &gw,
            fallback_order: CandidateOrder::ListOrder,
            temperature: 0.0,
            max_output_tokens: 64,
        };
        run_trajectory(&mut GuessMyNumber::new(), &plan)
    }

    #[test]
    fn faithful_log_replays() {
        for seed in 0..5 {
            assert_eq!(replay_trajectory(&mut GuessMyNumber::new(), &played(seed)), Ok(()));
        }
    }

    #[test]
    fn edited_reward_is_caught_at_its_step() {
        let mut t = played(3);
        let turn = t.steps[1].turn;
        t.steps[1].reward = 42.0;
        let m = replay_trajectory(&mut GuessMyNumber::new(), &t).unwrap_err();
        assert_eq!((m.turn, m.field), (turn, "reward"));
        assert!(m.to_string().starts_with("MISMATCH at step 2"));
    }

    #[test]
    fn unknown_rule_id_fails_audit() {
        let mut t = played(1);
        t.steps[0].applied_rule_ids.push("r-000000000000".into());
        let m = audit_applied_rules([&t], &RuleBank::default(), &GuessMyNumber::new());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].turn, 1);
    }
}
