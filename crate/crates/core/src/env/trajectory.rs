use super::{HistoryEntry, Value, Violation};
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};

/// One committed turn of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub turn: u32,
    pub observation_before: Value,
    /// What the model proposed; null when its answer could not be parsed.
    pub proposed_action: Value,
    /// What was actually stepped; null for a forfeited turn.
    pub committed_action: Value,
    pub valid_on_first_try: bool,
    pub fallback_used: bool,
    pub applied_rule_ids: Vec<String>,
    pub reward: f64,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
}

/// A complete run of the task, as persisted in `trajectories.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub epoch: u32,
    pub index: u32,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_reward: f64,
    pub success: bool,
    pub turn_count: u32,
    /// Set when the trajectory was cut short (transport failure, no valid
    /// action).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl Trajectory {
    pub fn id(&self) -> String {
        format!("{}-{}", self.epoch, self.index)
    }

    /// History entries `(o_t, a_t, r_{t+1})` for the first `upto` steps.
    pub fn history(&self, upto: usize) -> Vec<HistoryEntry> {
        self.steps[..upto]
            .iter()
            .map(|s| HistoryEntry {
                observation: s.observation_before.clone(),
                action: s.committed_action.clone(),
                reward: s.reward,
            })
            .collect()
    }

    /// Turn on which the task was solved, if it was.
    pub fn success_turn(&self) -> Option<u32> {
        if self.success {
            self.steps.last().map(|s| s.turn)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch_index: u32,
    pub trajectories: Vec<Trajectory>,
}

impl EpochLog {
    pub fn successes(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(|t| t.success)
    }

    /// Groups trajectories by their `epoch` field, in ascending epoch order.
    pub fn group(trajectories: Vec<Trajectory>) -> Vec<EpochLog> {
        let mut epochs: Vec<EpochLog> = Vec::new();
        for t in trajectories {
            match epochs.iter_mut().find(|e| e.epoch_index == t.epoch) {
                Some(e) => e.trajectories.push(t),
                None => epochs.push(EpochLog { epoch_index: t.epoch, trajectories: vec![t] }),
            }
        }
        epochs.sort_by_key(|e| e.epoch_index);
        epochs
    }
}

pub fn write_trajectories<'a, W: Write>(
    mut out: W,
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
) -> io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(input: R) -> io::Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(epoch: u32, index: u32, success: bool) -> Trajectory {
        let step = StepRecord {
            turn: 1,
            observation_before: Value::record([("turn", Value::Int(0))]),
            proposed_action: Value::Int(1),
            committed_action: Value::Int(1),
            valid_on_first_try: true,
            fallback_used: false,
            applied_rule_ids: vec![],
            reward: if success { 100.0 } else { 0.0 },
            done: true,
            violation: None,
        };
        Trajectory {
            epoch,
            index,
            seed: 9,
            steps: vec![step],
            final_reward: if success { 100.0 } else { 0.0 },
            success,
            turn_count: 1,
            diagnostic: None,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let ts = vec![traj(1, 0, true), traj(1, 1, false)];
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &ts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"applied_rule_ids\":[]"));
        assert!(!text.contains("violation"));
        assert_eq!(read_trajectories(&buf[..]).unwrap(), ts);
    }

    #[test]
    fn grouping_by_epoch() {
        let epochs = EpochLog::group(vec![traj(2, 0, true), traj(1, 0, false), traj(2, 1, false)]);
        assert_eq!(epochs.len(), 2);
        assert_eq!(epochs[0].epoch_index, 1);
        assert_eq!(epochs[1].trajectories.len(), 2);
        assert_eq!(epochs[1].successes().count(), 1);
    }
}
