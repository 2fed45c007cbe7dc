//! Evaluation metrics computed from trajectory logs.

use crate::env::{Environment, EpochLog, Trajectory};
use crate::rules::RuleBank;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 trajectories for a confidence interval, got {0}")]
    InsufficientData(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardStats {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided 97.5% Student t quantile with `df` degrees of freedom.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom").inverse_cdf(0.975)
}

/// Mean with a 95% Student t interval (sample sd, n - 1 divisor).
pub fn reward_stats(rewards: &[f64]) -> Result<RewardStats, MetricsError> {
    let n = rewards.len();
    if n < 2 {
        return Err(MetricsError::InsufficientData(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half_width = t_quantile_975(n - 1) * var.sqrt() / (n as f64).sqrt();
    Ok(RewardStats { n, mean, half_width, ci_low: mean - half_width, ci_high: mean + half_width })
}

pub fn epoch_reward_stats(log: &EpochLog) -> Result<RewardStats, MetricsError> {
    let rewards: Vec<f64> = log.trajectories.iter().map(|t| t.final_reward).collect();
    reward_stats(&rewards)
}

/// `(followed, applicable)` turn counts against the bank that was in force
/// during the epoch.
pub fn consistency_counts(log: &EpochLog, bank: &RuleBank, env: &dyn Environment) -> (usize, usize) {
    let mut followed = 0;
    let mut applicable = 0;
    for t in &log.trajectories {
        for (i, step) in t.steps.iter().enumerate() {
            let ctx = env.rule_context(&step.observation_before, &t.history(i));
            let rules = bank.applicable(&ctx, step.turn);
            if rules.is_empty() {
                continue;
            }
            applicable += 1;
            let satisfied = |_| env.compliant(&step.observation_before, &step.committed_action);
            if rules.iter().any(|r| r.followed_by(&ctx, &step.committed_action, &satisfied)) {
                followed += 1;
            }
        }
    }
    (followed, applicable)
}

/// Undefined (`None`) when no turn had an applicable rule.
pub fn consistency_ratio(log: &EpochLog, bank: &RuleBank, env: &dyn Environment) -> Option<f64> {
    let (followed, applicable) = consistency_counts(log, bank, env);
    (applicable > 0).then(|| followed as f64 / applicable as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compliance {
    /// Compliant committed turns over all turns; `None` without turns.
    pub compliance_ratio: Option<f64>,
    /// Corrected invalid proposals over all invalid proposals; `None`
    /// when nothing was invalid.
    pub recovery_rate: Option<f64>,
}

/// Recomputes compliance from the logged observations rather than trusting
/// the step flags.
pub fn compliance_metrics<'a>(
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
    env: &dyn Environment,
) -> Compliance {
    let (mut turns, mut compliant, mut invalid, mut recovered) = (0usize, 0usize, 0usize, 0usize);
    for t in trajectories {
        for s in &t.steps {
            let ok = env.compliant(&s.observation_before, &s.committed_action);
            turns += 1;
            compliant += usize::from(ok);
            if !s.valid_on_first_try {
                invalid += 1;
                recovered += usize::from(s.fallback_used && ok);
            }
        }
    }
    Compliance {
        compliance_ratio: (turns > 0).then(|| compliant as f64 / turns as f64),
        recovery_rate: (invalid > 0).then(|| recovered as f64 / invalid as f64),
    }
}

/// Fraction of trajectories solved on each turn; entry `i` is turn `i + 1`.
pub fn success_by_turn(trajectories: &[Trajectory], max_turns: u32) -> Vec<f64> {
    let mut bins = vec![0usize; max_turns as usize];
    for t in trajectories {
        if let Some(turn) = t.success_turn() {
            if let Some(b) = bins.get_mut(turn as usize - 1) {
                *b += 1;
            }
        }
    }
    let n = trajectories.len().max(1) as f64;
    bins.into_iter().map(|c| c as f64 / n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epoch: u32,
    pub mean_reward: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub consistency_ratio: Option<f64>,
    pub compliance_ratio: Option<f64>,
    pub recovery_rate: Option<f64>,
    pub success_rate: f64,
}

pub const REPORT_HEADER: &str =
    "epoch,mean_reward,ci_low,ci_high,consistency_ratio,compliance_ratio,recovery_rate,success_rate";

/// One report row; `bank` is the Rule Bank used during the epoch, if any.
pub fn report_row(log: &EpochLog, bank: Option<&RuleBank>, env: &dyn Environment) -> ReportRow {
    let n = log.trajectories.len();
    let stats = epoch_reward_stats(log).ok();
    let mean = if n == 0 { 0.0 } else { log.trajectories.iter().map(|t| t.final_reward).sum::<f64>() / n as f64 };
    let compliance = compliance_metrics(&log.trajectories, env);
    ReportRow {
        epoch: log.epoch_index,
        mean_reward: mean,
        ci_low: stats.map(|s| s.ci_low),
        ci_high: stats.map(|s| s.ci_high),
        consistency_ratio: bank.and_then(|b| consistency_ratio(log, b, env)),
        compliance_ratio: compliance.compliance_ratio,
        recovery_rate: compliance.recovery_rate,
        success_rate: if n == 0 { 0.0 } else { log.successes().count() as f64 / n as f64 },
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text with a header; undefined values are empty cells.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.mean_reward,
            cell(r.ci_low),
            cell(r.ci_high),
            cell(r.consistency_ratio),
            cell(r.compliance_ratio),
            cell(r.recovery_rate),
            r.success_rate
        ));
    }
    out
}
