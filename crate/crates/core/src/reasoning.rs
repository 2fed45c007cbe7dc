//! End-of-epoch rule extraction and Rule Bank maintenance.

use crate::env::{Environment, EpochLog, Trajectory};
use crate::gateway::{extract_block, CompletionBackend, CompletionRequest, Purpose};
use crate::profiler::{TaskProfile, TemporalStructure};
use crate::rules::{
    ActionDirective, Condition, GenerationPolicy, Predicate, Provenance, Rule, RuleBank, RuleBankError, RuleStatus,
    TurnWindow,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("rule extraction backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Bank(#[from] RuleBankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningBackend {
    #[default]
    Miner,
    Llm,
}

impl FromStr for ReasoningBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "miner" => Ok(Self::Miner),
            "llm" => Ok(Self::Llm),
            _ => Err(format!("unknown reasoning backend `{s}` (expected miner or llm)")),
        }
    }
}

impl fmt::Display for ReasoningBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Miner => "miner",
            Self::Llm => "llm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerConfig {
    /// Minimum number of distinct supporting trajectories.
    pub min_support: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self { min_support: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub rules: Vec<Rule>,
    pub warnings: Vec<String>,
}

/// Templates the sequential miner tests, with the context field each one
/// needs to be present.
const SEQUENTIAL_TEMPLATES: [(ActionDirective, &str); 3] = [
    (ActionDirective::PreviousGuessMinusHint, "hint"),
    (ActionDirective::PreviousGuessPlusHint, "hint"),
    (ActionDirective::FeasibleMidpoint, "feasible_midpoint"),
];

fn mine_sequential(log: &EpochLog, env: &dyn Environment, cfg: MinerConfig) -> Vec<Rule> {
    let max_turns = env.spec().max_turns;
    let mut rules = Vec::new();
    for (template, field) in SEQUENTIAL_TEMPLATES {
        // trajectory id -> winning turn
        let mut support: BTreeMap<String, u32> = BTreeMap::new();
        for t in log.successes() {
            let Some(last) = t.steps.len().checked_sub(1) else { continue };
            let step = &t.steps[last];
            if step.turn < 2 {
                continue;
            }
            let ctx = env.rule_context(&step.observation_before, &t.history(last));
            let reproduces = matches!(
                template.evaluate(&ctx),
                Some(crate::rules::Prescription::Action(v)) if v == step.committed_action
            );
            if reproduces {
                support.insert(t.id(), step.turn);
            }
        }
        if support.len() < cfg.min_support {
            continue;
        }
        let first = *support.values().min().expect("non-empty support");
        let text = format!("From turn {first} on, when {field} is known, the best action is {template}.");
        let rule = Rule::new(
            Condition {
                predicates: vec![Predicate::present(field)],
                window: Some(TurnWindow { min: first, max: max_turns }),
            },
            template,
            Provenance { epoch_discovered: log.epoch_index, source_trajectories: support.into_keys().collect() },
            text,
        )
        .expect("miner rules are well formed");
        rules.push(rule);
    }
    rules
}

fn fully_compliant(t: &Trajectory, env: &dyn Environment) -> bool {
    t.steps.iter().all(|s| env.compliant(&s.observation_before, &s.committed_action))
}

fn mine_cumulative(log: &EpochLog, env: &dyn Environment, cfg: MinerConfig) -> Vec<Rule> {
    let support: Vec<String> =
        log.successes().filter(|t| t.steps.len() >= 2 && fully_compliant(t, env)).map(Trajectory::id).collect();
    if support.len() < cfg.min_support {
        return Vec::new();
    }
    let rule = Rule::new(
        Condition {
            predicates: vec![Predicate::present("history")],
            window: Some(TurnWindow { min: 2, max: env.spec().max_turns }),
        },
        ActionDirective::Policy { policy: GenerationPolicy::ConsistentCandidate },
        Provenance { epoch_discovered: log.epoch_index, source_trajectories: support },
        "Once feedback exists, always guess from the candidates consistent with every piece of feedback so far.",
    )
    .expect("miner rules are well formed");
    vec![rule]
}

#[derive(Deserialize)]
struct LlmRule {
    condition: Vec<String>,
    #[serde(default)]
    window: Option<[u32; 2]>,
    action: String,
    #[serde(default)]
    text: String,
}

fn parse_llm_rule(line: &str, provenance: &Provenance) -> Result<Rule, String> {
    let raw: LlmRule = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let predicates =
        raw.condition.iter().map(|p| Predicate::parse(p)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let action = ActionDirective::parse(&raw.action).map_err(|e| e.to_string())?;
    Rule::new(
        Condition { predicates, window: raw.window.map(|[min, max]| TurnWindow { min, max }) },
        action,
        provenance.clone(),
        raw.text,
    )
    .map_err(|e| e.to_string())
}

fn extraction_prompt(log: &EpochLog, env: &dyn Environment, profile: &TaskProfile) -> String {
    let mut out = format!(
        "{}\nTemporal structure: {:?}. Look at most {} turns back.\n\nSuccessful trajectories:\n",
        env.spec().render(),
        profile.temporal_structure,
        profile.reasoning_window
    );
    for t in log.successes() {
        let steps: Vec<String> = t
            .steps
            .iter()
            .map(|s| format!("turn {} saw {} played {}", s.turn, s.observation_before, s.committed_action))
            .collect();
        out.push_str(&format!("{} (reward {}): {}\n", t.id(), t.final_reward, steps.join("; ")));
    }
    out.push_str(
        "\nState reusable rules of the form \"if <condition>, then the best action is <template>\". \
         Reply with a fenced block tagged `rules`, one JSON object per line:\n\
         {\"condition\": [\"hint present\", \"turn >= 6\"], \"window\": [6, 15], \
         \"action\": \"previous_guess - hint\", \"text\": \"...\"}\n\
         Conditions use `<field> present`, `<field> absent` or `<field> <op> <value>`. \
         Actions are one of: previous_guess + hint, previous_guess - hint, feasible_midpoint, \
         policy:consistent_candidate, or a constant.\n",
    );
    out
}

fn extract_with_llm(
    log: &EpochLog,
    env: &dyn Environment,
    profile: &TaskProfile,
    gateway: &dyn CompletionBackend,
) -> Result<Extraction, ReasoningError> {
    let request = CompletionRequest::new(
        Purpose::RuleExtraction,
        "You extract verifiable behavioural rules from successful trajectories.",
        extraction_prompt(log, env, profile),
    );
    let reply = gateway.complete(&request).map_err(|e| ReasoningError::BackendUnavailable(e.to_string()))?;
    let provenance = Provenance {
        epoch_discovered: log.epoch_index,
        source_trajectories: log.successes().map(Trajectory::id).collect(),
    };
    let mut out = Extraction::default();
    let Some(block) = extract_block(&reply, "rules") else {
        out.warnings.push("rule extraction reply has no rules block".into());
        return Ok(out);
    };
    for line in block.lines().filter(|l| !l.trim().is_empty()) {
        match parse_llm_rule(line, &provenance) {
            Ok(rule) => out.rules.push(rule),
            Err(e) => {
                let w = format!("dropped unparseable rule `{}`: {e}", line.trim());
                tracing::warn!("{w}");
                out.warnings.push(w);
            }
        }
    }
    Ok(out)
}

/// Mines candidate rules from an epoch. The miner is deterministic.
pub fn extract_rules(
    log: &EpochLog,
    profile: &TaskProfile,
    backend: ReasoningBackend,
    env: &dyn Environment,
    gateway: Option<&dyn CompletionBackend>,
    cfg: MinerConfig,
) -> Result<Extraction, ReasoningError> {
    if log.successes().next().is_none() {
        return Ok(Extraction::default());
    }
    match backend {
        ReasoningBackend::Miner => Ok(Extraction {
            rules: match profile.temporal_structure {
                TemporalStructure::Sequential => mine_sequential(log, env, cfg),
                TemporalStructure::Cumulative => mine_cumulative(log, env, cfg),
            },
            warnings: Vec::new(),
        }),
        ReasoningBackend::Llm => {
            let gateway =
                gateway.ok_or_else(|| ReasoningError::BackendUnavailable("no completion backend configured".into()))?;
            extract_with_llm(log, env, profile, gateway)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningReport {
    pub epoch: u32,
    pub extracted: usize,
    pub new_rules: Vec<String>,
    pub promoted: Vec<String>,
    pub retired: Vec<String>,
    pub outcomes_recorded: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Registers `extraction`, then credits every rule applied in the epoch
/// once per trajectory with that trajectory's success.
pub fn apply_epoch(
    bank: &mut RuleBank,
    log: &EpochLog,
    extraction: Extraction,
) -> Result<ReasoningReport, ReasoningError> {
    let before: BTreeMap<String, RuleStatus> = bank.rules().map(|r| (r.id.clone(), r.status)).collect();
    let mut report = ReasoningReport {
        epoch: log.epoch_index,
        extracted: extraction.rules.len(),
        warnings: extraction.warnings,
        ..ReasoningReport::default()
    };
    for rule in extraction.rules {
        let id = bank.register(rule)?;
        if !before.contains_key(&id) && !report.new_rules.contains(&id) {
            report.new_rules.push(id);
        }
    }
    for t in &log.trajectories {
        let applied: BTreeSet<&String> = t.steps.iter().flat_map(|s| &s.applied_rule_ids).collect();
        for id in applied {
            bank.record_outcome(id, t.success)?;
            report.outcomes_recorded += 1;
        }
    }
    for rule in bank.rules() {
        let was = before.get(&rule.id).copied().unwrap_or(RuleStatus::Candidate);
        if was != rule.status {
            match rule.status {
                RuleStatus::Verified => report.promoted.push(rule.id.clone()),
                RuleStatus::Retired => report.retired.push(rule.id.clone()),
                RuleStatus::Candidate => {}
            }
        }
    }
    Ok(report)
}

/// Extraction followed by [`apply_epoch`].
pub fn reasoning_update(
    bank: &mut RuleBank,
    log: &EpochLog,
    profile: &TaskProfile,
    backend: ReasoningBackend,
    env: &dyn Environment,
    gateway: Option<&dyn CompletionBackend>,
    cfg: MinerConfig,
) -> Result<ReasoningReport, ReasoningError> {
    let extraction = extract_rules(log, profile, backend, env, gateway, cfg)?;
    apply_epoch(bank, log, extraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gmn::GuessMyNumber;
    use crate::env::wordle::{WordList, Wordle};
    use crate::env::{StepRecord, Value};
    use crate::gateway::ReplayBackend;
    use crate::profiler::heuristic_profile;

    /// Plays `actions` (then stops); the last one should win.
    fn play(env: &mut dyn Environment, seed: u64, epoch: u32, index: u32, actions: &[Value]) -> Trajectory {
        env.reset(seed);
        let mut steps = Vec::new();
        let mut reward = 0.0;
        for a in actions {
            if env.is_finished() {
                break;
            }
            let obs = env.observation();
            let tr = env.step(a).unwrap();
            reward = tr.reward;
            steps.push(StepRecord {
                turn: env.turn(),
                observation_before: obs,
                proposed_action: a.clone(),
                committed_action: a.clone(),
                valid_on_first_try: true,
                fallback_used: false,
                applied_rule_ids: vec![],
                reward: tr.reward,
                done: tr.done,
                violation: None,
            });
        }
        Trajectory {
            epoch,
            index,
            seed,
            turn_count: steps.len() as u32,
            steps,
            final_reward: reward,
            success: reward > 0.0,
            diagnostic: None,
        }
    }

    /// Five guesses of 5000, then the secret on turn 6.
    fn exploit(seed: u64, index: u32) -> (Trajectory, i64) {
        let mut env = GuessMyNumber::new();
        env.reset(seed);
        let secret = env.secret();
        let mut actions = vec![Value::Int(5000); 5];
        actions.push(Value::Int(secret));
        (play(&mut env, seed, 1, index, &actions), secret)
    }

    fn low_secret_log(n: usize) -> EpochLog {
        let mut trajectories = Vec::new();
        let mut seed = 0;
        while trajectories.len() < n {
            let (t, secret) = exploit(seed, trajectories.len() as u32);
            if secret < 5000 && t.success && t.turn_count == 6 {
                trajectories.push(t);
            }
            seed += 1;
        }
        EpochLog { epoch_index: 1, trajectories }
    }

    #[test]
    fn miner_finds_minus_hint_rule() {
        let env = GuessMyNumber::new();
        let log = low_secret_log(4);
        let profile = heuristic_profile(env.spec());
        let out = extract_rules(&log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default()).unwrap();
        assert_eq!(out.rules.len(), 1);
        let rule = &out.rules[0];
        assert_eq!(rule.action, ActionDirective::PreviousGuessMinusHint);
        assert_eq!(rule.condition.window, Some(TurnWindow { min: 6, max: 15 }));
        assert_eq!(rule.condition.predicates, vec![Predicate::present("hint")]);
        assert_eq!(rule.provenance.source_trajectories.len(), 4);
    }

    #[test]
    fn miner_respects_support_threshold() {
        let env = GuessMyNumber::new();
        let log = low_secret_log(2);
        let profile = heuristic_profile(env.spec());
        let out = extract_rules(&log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default()).unwrap();
        assert!(out.rules.is_empty());
    }

    #[test]
    fn no_successes_no_rules() {
        let env = GuessMyNumber::new();
        let mut log = low_secret_log(3);
        for t in &mut log.trajectories {
            t.success = false;
        }
        let profile = heuristic_profile(env.spec());
        let out = extract_rules(&log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default()).unwrap();
        assert!(out.rules.is_empty());
    }

    #[test]
    fn symmetric_case_emits_both_templates() {
        // A zero hint on the previous guess makes both templates fit.
        let env = GuessMyNumber::new();
        let mut log = low_secret_log(3);
        for t in &mut log.trajectories {
            let secret = t.steps[5].committed_action.clone();
            t.steps[4].committed_action = secret;
            if let Value::Record(m) = &mut t.steps[5].observation_before {
                m.insert("hint".into(), Value::Int(0));
            }
        }
        let profile = heuristic_profile(env.spec());
        let out = extract_rules(&log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default()).unwrap();
        let templates: Vec<&ActionDirective> = out.rules.iter().map(|r| &r.action).collect();
        assert!(templates.contains(&&ActionDirective::PreviousGuessMinusHint));
        assert!(templates.contains(&&ActionDirective::PreviousGuessPlusHint));
    }

    #[test]
    fn cumulative_miner_emits_policy_rule() {
        let words = WordList::standard();
        let mut env = Wordle::new(words.clone(), true);
        let mut trajectories = Vec::new();
        for seed in 0..3u64 {
            env.reset(seed);
            let secret = Value::text(env.secret().as_str());
            let opener = if env.secret().as_str() == "crane" { "slate" } else { "crane" };
            trajectories.push(play(&mut env, seed, 1, seed as u32, &[Value::text(opener), secret]));
        }
        let log = EpochLog { epoch_index: 1, trajectories };
        let profile = heuristic_profile(env.spec());
        let out = extract_rules(&log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default()).unwrap();
        assert_eq!(out.rules.len(), 1);
        assert!(matches!(out.rules[0].action, ActionDirective::Policy { .. }));
    }

    #[test]
    fn miner_is_deterministic() {
        let env = GuessMyNumber::new();
        let log = low_secret_log(5);
        let profile = heuristic_profile(env.spec());
        let a = extract_rules(&log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default()).unwrap();
        let b = extract_rules(&log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn llm_rules_are_parsed_and_bad_lines_dropped() {
        let env = GuessMyNumber::new();
        let log = low_secret_log(3);
        let reply = "Here you go.\n```rules\n\
            {\"condition\": [\"hint present\"], \"window\": [6, 15], \"action\": \"previous_guess - hint\", \"text\": \"subtract\"}\n\
            {\"condition\": [\"hint = 37\"], \"action\": \"4217\"}\n\
            {\"condition\": [\"hint present\"], \"action\": \"previous_guess * 3\"}\n\
            not json\n```";
        let gateway = ReplayBackend::new([reply.to_string()]);
        let profile = heuristic_profile(env.spec());
        let out =
            extract_rules(&log, &profile, ReasoningBackend::Llm, &env, Some(&gateway), MinerConfig::default()).unwrap();
        assert_eq!(out.rules.len(), 2);
        assert_eq!(out.warnings.len(), 2);
        assert_eq!(out.rules[1].action, ActionDirective::Constant { value: Value::Int(4217) });
    }

    fn applied_log(rule_id: &str, outcomes: &[bool]) -> EpochLog {
        let (template, _) = exploit(0, 0);
        let trajectories = outcomes
            .iter()
            .enumerate()
            .map(|(i, &success)| {
                let mut t = template.clone();
                t.index = i as u32;
                t.success = success;
                t.steps[5].applied_rule_ids = vec![rule_id.to_string()];
                t.steps[4].applied_rule_ids = vec![rule_id.to_string()];
                t
            })
            .collect();
        EpochLog { epoch_index: 2, trajectories }
    }

    #[test]
    fn update_registers_and_scores() {
        let env = GuessMyNumber::new();
        let profile = heuristic_profile(env.spec());
        let mut bank = RuleBank::default();
        let log = low_secret_log(10);
        let report =
            reasoning_update(&mut bank, &log, &profile, ReasoningBackend::Miner, &env, None, MinerConfig::default())
                .unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(report.new_rules.len(), 1);
        let id = report.new_rules[0].clone();

        let report =
            apply_epoch(&mut bank, &applied_log(&id, &[true, true, false, true, true, true]), Extraction::default())
                .unwrap();
        assert_eq!(report.outcomes_recorded, 6);
        assert_eq!(report.promoted, vec![id.clone()]);
        assert_eq!(bank.get(&id).unwrap().status, RuleStatus::Verified);
    }

    #[test]
    fn low_success_rule_is_retired() {
        let mut bank = RuleBank::default();
        let rule = Rule::new(
            Condition { predicates: vec![Predicate::present("hint")], window: None },
            ActionDirective::FeasibleMidpoint,
            Provenance::default(),
            "",
        )
        .unwrap();
        let id = bank.register(rule).unwrap();
        let report =
            apply_epoch(&mut bank, &applied_log(&id, &[true, false, false, false, false]), Extraction::default())
                .unwrap();
        assert_eq!(report.retired, vec![id.clone()]);
    }
}
