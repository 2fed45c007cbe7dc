//! The Rule Bank: learned observation→action mappings with lifecycle and
//! usage statistics.
//!
//! Rules are machine-checkable. A condition is a conjunction of predicates
//! over named context values plus an optional turn window; the action is one
//! of a small closed set of templates. Every mutation goes through
//! [`RuleBank::apply`] and is journaled, so a bank can be rebuilt from its
//! event log.

use crate::env::{RuleContext, Value};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const BANK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RuleBankError {
    #[error("malformed rule: {0}")]
    MalformedRule(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("rule bank {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rule bank schema version {found:?} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: Option<u64>, expected: u32 },
    #[error("rule bank file is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "present")]
    Present,
    #[serde(rename = "absent")]
    Absent,
}

impl Comparator {
    fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Present => "present",
            Comparator::Absent => "absent",
        }
    }

    fn is_unary(self) -> bool {
        matches!(self, Comparator::Present | Comparator::Absent)
    }

    fn is_ordering(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: String,
    pub op: Comparator,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub value: Value,
}

impl Predicate {
    pub fn new(field: &str, op: Comparator, value: Value) -> Self {
        Self { field: field.to_string(), op, value }
    }

    pub fn present(field: &str) -> Self {
        Self::new(field, Comparator::Present, Value::Null)
    }

    /// Parses `field present`, `field absent` or `field <op> <value>`.
    pub fn parse(text: &str) -> Result<Self, RuleBankError> {
        let malformed = || RuleBankError::MalformedRule(format!("unparseable predicate `{text}`"));
        let parts: Vec<&str> = text.split_whitespace().collect();
        match parts.as_slice() {
            [field, "present"] => Ok(Self::present(field)),
            [field, "absent"] => Ok(Self::new(field, Comparator::Absent, Value::Null)),
            [field, op, value] => {
                let op = match *op {
                    "=" | "==" => Comparator::Eq,
                    "!=" | "≠" => Comparator::Ne,
                    "<" => Comparator::Lt,
                    "<=" | "≤" => Comparator::Le,
                    ">" => Comparator::Gt,
                    ">=" | "≥" => Comparator::Ge,
                    _ => return Err(malformed()),
                };
                Ok(Self::new(field, op, parse_literal(value).ok_or_else(malformed)?))
            }
            _ => Err(malformed()),
        }
    }

    fn validate(&self) -> Result<(), RuleBankError> {
        if self.field.trim().is_empty() {
            return Err(RuleBankError::MalformedRule("predicate with empty field".into()));
        }
        if self.op.is_unary() != self.value.is_null() {
            return Err(RuleBankError::MalformedRule(format!("predicate `{}` has the wrong arity", self)));
        }
        if self.op.is_ordering() && self.value.as_f64().is_none() {
            return Err(RuleBankError::MalformedRule(format!("ordering predicate `{self}` needs a numeric value")));
        }
        Ok(())
    }

    pub fn holds(&self, ctx: &RuleContext) -> bool {
        let actual = ctx.get(&self.field).unwrap_or(&Value::Null);
        match self.op {
            Comparator::Present => actual.is_present(),
            Comparator::Absent => !actual.is_present(),
            Comparator::Eq => values_equal(actual, &self.value),
            Comparator::Ne => actual.is_present() && !values_equal(actual, &self.value),
            op => match (actual.as_f64(), self.value.as_f64()) {
                (Some(a), Some(b)) => match op {
                    Comparator::Lt => a < b,
                    Comparator::Le => a <= b,
                    Comparator::Gt => a > b,
                    _ => a >= b,
                },
                _ => false,
            },
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.op.is_unary() {
            write!(f, "{} {}", self.field, self.op.symbol())
        } else {
            write!(f, "{} {} {}", self.field, self.op.symbol(), self.value)
        }
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

fn parse_literal(text: &str) -> Option<Value> {
    let text = text.trim();
    if let Ok(i) = text.parse::<i64>() {
        return Some(Value::Int(i));
    }
    let unquoted = text.trim_matches(|c| c == '"' || c == '\'');
    if !unquoted.is_empty() && unquoted.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Some(Value::text(unquoted));
    }
    None
}

/// Inclusive range of turn indices (the turn being decided) where a rule
/// may fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnWindow {
    pub min: u32,
    pub max: u32,
}

impl TurnWindow {
    pub fn contains(&self, turn: u32) -> bool {
        (self.min..=self.max).contains(&turn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub predicates: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TurnWindow>,
}

impl Condition {
    pub fn holds(&self, ctx: &RuleContext, turn: u32) -> bool {
        self.window.is_none_or(|w| w.contains(turn)) && self.predicates.iter().all(|p| p.holds(ctx))
    }

    fn normalize(&mut self) {
        self.predicates.sort_by(|a, b| {
            (a.field.as_str(), a.op)
                .cmp(&(b.field.as_str(), b.op))
                .then_with(|| a.value.to_string().cmp(&b.value.to_string()))
        });
        self.predicates.dedup();
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preds: Vec<String> = self.predicates.iter().map(ToString::to_string).collect();
        f.write_str(&preds.join(" and "))?;
        if let Some(w) = self.window {
            write!(f, " and turn in [{}, {}]", w.min, w.max)?;
        }
        Ok(())
    }
}

/// Strategy-level directives for cumulative tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationPolicy {
    /// Always guess from the set of candidates consistent with all feedback.
    ConsistentCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum ActionDirective {
    Constant { value: Value },
    PreviousGuessPlusHint,
    PreviousGuessMinusHint,
    FeasibleMidpoint,
    Policy { policy: GenerationPolicy },
}

/// What a rule tells the agent to do in a given context.
#[derive(Debug, Clone, PartialEq)]
pub enum Prescription {
    Action(Value),
    Policy(GenerationPolicy),
}

impl ActionDirective {
    /// Parses the template language: `previous_guess + hint`,
    /// `previous_guess - hint`, `feasible_midpoint`,
    /// `policy:consistent_candidate`, or a literal constant.
    pub fn parse(text: &str) -> Result<Self, RuleBankError> {
        let compact: String =
            text.chars().filter(|c| !c.is_whitespace()).map(|c| if c == '−' { '-' } else { c }).collect();
        match compact.as_str() {
            "previous_guess+hint" | "hint+previous_guess" => Ok(Self::PreviousGuessPlusHint),
            "previous_guess-hint" => Ok(Self::PreviousGuessMinusHint),
            "feasible_midpoint" | "midpoint" => Ok(Self::FeasibleMidpoint),
            "policy:consistent_candidate" | "consistent_candidate" => {
                Ok(Self::Policy { policy: GenerationPolicy::ConsistentCandidate })
            }
            _ => match parse_literal(text) {
                Some(value) if !compact.contains(['+', '-', '*', '/', '(']) => Ok(Self::Constant { value }),
                _ => Err(RuleBankError::MalformedRule(format!("unsupported action template `{text}`"))),
            },
        }
    }

    pub fn evaluate(&self, ctx: &RuleContext) -> Option<Prescription> {
        let int = |field: &str| ctx.get(field).and_then(Value::as_int);
        match self {
            Self::Constant { value } => Some(Prescription::Action(value.clone())),
            Self::PreviousGuessPlusHint => {
                Some(Prescription::Action(Value::Int(int("previous_guess")? + int("hint")?)))
            }
            Self::PreviousGuessMinusHint => {
                Some(Prescription::Action(Value::Int(int("previous_guess")? - int("hint")?)))
            }
            Self::FeasibleMidpoint => Some(Prescription::Action(Value::Int(int("feasible_midpoint")?))),
            Self::Policy { policy } => Some(Prescription::Policy(*policy)),
        }
    }

    /// Context fields the template reads.
    pub fn inputs(&self) -> &'static [&'static str] {
        match self {
            Self::Constant { .. } | Self::Policy { .. } => &[],
            Self::PreviousGuessPlusHint | Self::PreviousGuessMinusHint => &["previous_guess", "hint"],
            Self::FeasibleMidpoint => &["feasible_midpoint"],
        }
    }
}

impl fmt::Display for ActionDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { value } => write!(f, "{value}"),
            Self::PreviousGuessPlusHint => f.write_str("previous_guess + hint"),
            Self::PreviousGuessMinusHint => f.write_str("previous_guess - hint"),
            Self::FeasibleMidpoint => f.write_str("feasible_midpoint"),
            Self::Policy { .. } => f.write_str("a word consistent with all feedback so far"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStatus {
    Candidate,
    Verified,
    Retired,
}

impl fmt::Display for RuleStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleStatus::Candidate => "candidate",
            RuleStatus::Verified => "verified",
            RuleStatus::Retired => "retired",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "StatsRepr", from = "StatsRepr")]
pub struct RuleStats {
    pub applications: u64,
    pub successes: u64,
}

impl RuleStats {
    pub fn success_rate(&self) -> Option<f64> {
        (self.applications > 0).then(|| self.successes as f64 / self.applications as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct StatsRepr {
    applications: u64,
    successes: u64,
    #[serde(default)]
    success_rate: Option<f64>,
}

impl From<RuleStats> for StatsRepr {
    fn from(s: RuleStats) -> Self {
        StatsRepr { applications: s.applications, successes: s.successes, success_rate: s.success_rate() }
    }
}

impl From<StatsRepr> for RuleStats {
    fn from(r: StatsRepr) -> Self {
        RuleStats { applications: r.applications, successes: r.successes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub epoch_discovered: u32,
    pub source_trajectories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub condition: Condition,
    pub action: ActionDirective,
    pub status: RuleStatus,
    pub stats: RuleStats,
    pub provenance: Provenance,
    /// Natural-language statement; not part of the identity.
    pub free_text: String,
}

impl Rule {
    /// A validated, normalized candidate rule with its content id.
    pub fn new(
        mut condition: Condition,
        action: ActionDirective,
        provenance: Provenance,
        free_text: impl Into<String>,
    ) -> Result<Self, RuleBankError> {
        condition.normalize();
        let mut rule = Rule {
            id: String::new(),
            condition,
            action,
            status: RuleStatus::Candidate,
            stats: RuleStats::default(),
            provenance,
            free_text: free_text.into(),
        };
        rule.validate()?;
        rule.id = rule.content_id();
        Ok(rule)
    }

    fn validate(&self) -> Result<(), RuleBankError> {
        if self.condition.predicates.is_empty() {
            return Err(RuleBankError::MalformedRule("empty condition".into()));
        }
        for p in &self.condition.predicates {
            p.validate()?;
        }
        if let Some(w) = self.condition.window {
            if w.min == 0 || w.min > w.max {
                return Err(RuleBankError::MalformedRule(format!("bad turn window [{}, {}]", w.min, w.max)));
            }
        }
        if let ActionDirective::Constant { value } = &self.action {
            if value.is_null() {
                return Err(RuleBankError::MalformedRule("null constant action".into()));
            }
        }
        Ok(())
    }

    /// Stable hash of the normalized condition and action.
    pub fn content_id(&self) -> String {
        #[derive(Serialize)]
        struct Content<'a> {
            condition: &'a Condition,
            action: &'a ActionDirective,
        }
        let mut condition = self.condition.clone();
        condition.normalize();
        let canonical = serde_json::to_string(&Content { condition: &condition, action: &self.action })
            .expect("rule content serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        format!("r-{}", &hex::encode(digest)[..12])
    }

    pub fn matches(&self, ctx: &RuleContext, turn: u32) -> bool {
        self.condition.holds(ctx, turn)
    }

    pub fn prescribe(&self, ctx: &RuleContext) -> Option<Prescription> {
        self.action.evaluate(ctx)
    }

    /// Whether `action` is what this rule prescribes in `ctx`.
    /// `policy_satisfied` decides strategy-level directives.
    pub fn followed_by(
        &self,
        ctx: &RuleContext,
        action: &Value,
        policy_satisfied: &dyn Fn(GenerationPolicy) -> bool,
    ) -> bool {
        match self.prescribe(ctx) {
            Some(Prescription::Action(v)) => values_equal(&v, action) && !action.is_null(),
            Some(Prescription::Policy(p)) => !action.is_null() && policy_satisfied(p),
            None => false,
        }
    }

    pub fn describe(&self) -> String {
        format!("if {}, then the best action is {}", self.condition, self.action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifecycleConfig {
    pub min_applications: u64,
    pub promote_threshold: f64,
    pub retire_threshold: f64,
    /// Whether unverified candidates are offered to the agent.
    pub include_candidates: bool,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self { min_applications: 5, promote_threshold: 0.8, retire_threshold: 0.4, include_candidates: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BankEvent {
    Registered { rule: Rule },
    OutcomeRecorded { id: String, success: bool },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RuleBank {
    config: LifecycleConfig,
    rules: BTreeMap<String, Rule>,
    #[serde(skip)]
    journal: Vec<BankEvent>,
}

impl PartialEq for RuleBank {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.rules == other.rules
    }
}

#[derive(Serialize)]
struct BankFileOut<'a> {
    version: u32,
    config: &'a LifecycleConfig,
    rules: Vec<&'a Rule>,
}

#[derive(Deserialize)]
struct BankFileIn {
    config: LifecycleConfig,
    rules: Vec<Rule>,
}

impl RuleBank {
    pub fn new(config: LifecycleConfig) -> Self {
        Self { config, rules: BTreeMap::new(), journal: Vec::new() }
    }

    pub fn config(&self) -> &LifecycleConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.get(id)
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.values()
    }

    pub fn journal(&self) -> &[BankEvent] {
        &self.journal
    }

    pub fn take_journal(&mut self) -> Vec<BankEvent> {
        std::mem::take(&mut self.journal)
    }

    /// Rebuilds a bank by replaying an event log.
    pub fn from_events<'a>(
        config: LifecycleConfig,
        events: impl IntoIterator<Item = &'a BankEvent>,
    ) -> Result<Self, RuleBankError> {
        let mut bank = Self::new(config);
        for e in events {
            bank.apply(e.clone())?;
        }
        Ok(bank)
    }

    /// The single mutation path.
    pub fn apply(&mut self, event: BankEvent) -> Result<(), RuleBankError> {
        match &event {
            BankEvent::Registered { rule } => {
                if self.rules.contains_key(&rule.id) {
                    return Ok(());
                }
                self.rules.insert(rule.id.clone(), rule.clone());
            }
            BankEvent::OutcomeRecorded { id, success } => {
                let config = self.config;
                let rule = self.rules.get_mut(id).ok_or_else(|| RuleBankError::UnknownRule(id.clone()))?;
                rule.stats.applications += 1;
                rule.stats.successes += u64::from(*success);
                if rule.stats.applications >= config.min_applications {
                    let rate = rule.stats.success_rate().unwrap_or(0.0);
                    match rule.status {
                        RuleStatus::Candidate if rate >= config.promote_threshold => rule.status = RuleStatus::Verified,
                        RuleStatus::Candidate | RuleStatus::Verified if rate < config.retire_threshold => {
                            rule.status = RuleStatus::Retired
                        }
                        _ => {}
                    }
                }
            }
        }
        self.journal.push(event);
        Ok(())
    }

    /// Adds `rule` as a candidate. Re-registering identical content returns
    /// the existing id and leaves that rule untouched.
    pub fn register(&mut self, rule: Rule) -> Result<String, RuleBankError> {
        rule.validate()?;
        let id = rule.content_id();
        if self.rules.contains_key(&id) {
            return Ok(id);
        }
        let mut rule = rule;
        rule.id = id.clone();
        rule.condition.normalize();
        rule.status = RuleStatus::Candidate;
        rule.stats = RuleStats::default();
        self.apply(BankEvent::Registered { rule })?;
        Ok(id)
    }

    pub fn record_outcome(&mut self, id: &str, success: bool) -> Result<RuleStats, RuleBankError> {
        self.apply(BankEvent::OutcomeRecorded { id: id.to_string(), success })?;
        Ok(self.rules[id].stats)
    }

    /// Active rules whose condition holds, best first: success rate desc,
    /// applications desc, id asc.
    pub fn applicable(&self, ctx: &RuleContext, turn: u32) -> Vec<&Rule> {
        let mut out: Vec<&Rule> = self
            .rules
            .values()
            .filter(|r| match r.status {
                RuleStatus::Verified => true,
                RuleStatus::Candidate => self.config.include_candidates,
                RuleStatus::Retired => false,
            })
            .filter(|r| r.matches(ctx, turn))
            .collect();
        out.sort_by(|a, b| {
            let ra = a.stats.success_rate().unwrap_or(0.0);
            let rb = b.stats.success_rate().unwrap_or(0.0);
            rb.total_cmp(&ra)
                .then_with(|| b.stats.applications.cmp(&a.stats.applications))
                .then_with(|| a.id.cmp(&b.id))
        });
        out
    }

    /// The persisted form: `{version, config, rules: [...]}`.
    pub fn to_value(&self) -> serde_json::Value {
        let file =
            BankFileOut { version: BANK_SCHEMA_VERSION, config: &self.config, rules: self.rules.values().collect() };
        serde_json::to_value(file).expect("rule bank serializes")
    }

    pub fn from_value(raw: serde_json::Value) -> Result<Self, RuleBankError> {
        let version = raw.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(BANK_SCHEMA_VERSION)) {
            return Err(RuleBankError::SchemaVersionMismatch { found: version, expected: BANK_SCHEMA_VERSION });
        }
        let file: BankFileIn = serde_json::from_value(raw).map_err(|e| RuleBankError::Corrupt(e.to_string()))?;
        let mut bank = Self::new(file.config);
        for rule in file.rules {
            rule.validate()?;
            bank.rules.insert(rule.id.clone(), rule);
        }
        Ok(bank)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("rule bank serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, RuleBankError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| RuleBankError::Corrupt(e.to_string()))?;
        Self::from_value(raw)
    }

    pub fn save(&self, path: &Path) -> Result<(), RuleBankError> {
        std::fs::write(path, self.to_json())
            .map_err(|source| RuleBankError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, RuleBankError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| RuleBankError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// Status counts as (candidate, verified, retired).
    pub fn status_counts(&self) -> (usize, usize, usize) {
        self.rules.values().fold((0, 0, 0), |(c, v, r), rule| match rule.status {
            RuleStatus::Candidate => (c + 1, v, r),
            RuleStatus::Verified => (c, v + 1, r),
            RuleStatus::Retired => (c, v, r + 1),
        })
    }
}

impl Ord for RuleStatus {
    fn cmp(&self, other: &Self) -> Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

impl PartialOrd for RuleStatus {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(min: u32, max: u32) -> Option<TurnWindow> {
        Some(TurnWindow { min, max })
    }

    fn minus_rule() -> Rule {
        Rule::new(
            Condition { predicates: vec![Predicate::present("hint")], window: window(6, 15) },
            ActionDirective::PreviousGuessMinusHint,
            Provenance::default(),
            "subtract the hint",
        )
        .unwrap()
    }

    fn const_rule(v: i64) -> Rule {
        Rule::new(
            Condition { predicates: vec![Predicate::new("hint", Comparator::Eq, Value::Int(v))], window: None },
            ActionDirective::Constant { value: Value::Int(v) },
            Provenance::default(),
            "",
        )
        .unwrap()
    }

    fn ctx(hint: Option<i64>, prev: Option<i64>) -> RuleContext {
        let mut c = RuleContext::new();
        c.insert("hint".into(), hint.map_or(Value::Null, Value::Int));
        c.insert("previous_guess".into(), prev.map_or(Value::Null, Value::Int));
        c
    }

    #[test]
    fn register_is_idempotent() {
        let mut bank = RuleBank::default();
        let id = bank.register(minus_rule()).unwrap();
        bank.record_outcome(&id, true).unwrap();
        assert_eq!(bank.register(minus_rule()).unwrap(), id);
        assert_eq!(bank.get(&id).unwrap().stats.applications, 1);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn free_text_is_not_identity() {
        let mut other = minus_rule();
        other.free_text = "something else entirely".into();
        assert_eq!(other.content_id(), minus_rule().id);
    }

    #[test]
    fn predicate_order_is_not_identity() {
        let a = Rule::new(
            Condition {
                predicates: vec![Predicate::present("hint"), Predicate::new("turn", Comparator::Ge, Value::Int(5))],
                window: None,
            },
            ActionDirective::FeasibleMidpoint,
            Provenance::default(),
            "",
        )
        .unwrap();
        let b = Rule::new(
            Condition {
                predicates: vec![Predicate::new("turn", Comparator::Ge, Value::Int(5)), Predicate::present("hint")],
                window: None,
            },
            ActionDirective::FeasibleMidpoint,
            Provenance::default(),
            "",
        )
        .unwrap();
        assert_eq!(a.id, b.id);
    }

    #[test]
    fn malformed_rules_rejected() {
        let empty = Rule::new(
            Condition { predicates: vec![], window: None },
            ActionDirective::FeasibleMidpoint,
            Provenance::default(),
            "",
        );
        assert!(matches!(empty, Err(RuleBankError::MalformedRule(_))));
        assert!(Predicate::parse("hint ~ 3").is_err());
        assert!(ActionDirective::parse("previous_guess * 2").is_err());
        assert!(ActionDirective::parse("hint + 3").is_err());
        let bad_window = Rule::new(
            Condition { predicates: vec![Predicate::present("hint")], window: window(9, 3) },
            ActionDirective::FeasibleMidpoint,
            Provenance::default(),
            "",
        );
        assert!(bad_window.is_err());
    }

    #[test]
    fn template_language() {
        assert_eq!(ActionDirective::parse("previous_guess − hint").unwrap(), ActionDirective::PreviousGuessMinusHint);
        assert_eq!(ActionDirective::parse(" previous_guess+hint").unwrap(), ActionDirective::PreviousGuessPlusHint);
        assert_eq!(ActionDirective::parse("4217").unwrap(), ActionDirective::Constant { value: Value::Int(4217) });
        assert_eq!(Predicate::parse("turn >= 6").unwrap(), Predicate::new("turn", Comparator::Ge, Value::Int(6)));
        assert_eq!(Predicate::parse("hint present").unwrap(), Predicate::present("hint"));
    }

    #[test]
    fn evaluation() {
        let r = minus_rule();
        assert_eq!(r.prescribe(&ctx(Some(40), Some(5000))), Some(Prescription::Action(Value::Int(4960))));
        assert_eq!(r.prescribe(&ctx(None, Some(5000))), None);
        assert!(r.followed_by(&ctx(Some(40), Some(5000)), &Value::Int(4960), &|_| false));
        assert!(!r.followed_by(&ctx(Some(40), Some(5000)), &Value::Int(5040), &|_| false));
    }

    #[test]
    fn applicable_filters_and_orders() {
        let mut bank = RuleBank::default();
        assert!(bank.applicable(&ctx(Some(1), Some(2)), 7).is_empty());

        let minus = bank.register(minus_rule()).unwrap();
        assert!(bank.applicable(&ctx(Some(1), Some(2)), 3).is_empty(), "window miss");
        assert_eq!(bank.applicable(&ctx(Some(1), Some(2)), 7).len(), 1);
        assert!(bank.applicable(&ctx(None, Some(2)), 7).is_empty());

        let plus = bank
            .register(
                Rule::new(
                    Condition { predicates: vec![Predicate::present("hint")], window: window(6, 15) },
                    ActionDirective::PreviousGuessPlusHint,
                    Provenance::default(),
                    "",
                )
                .unwrap(),
            )
            .unwrap();
        // 0.9 vs 0.6 by construction of outcomes (10 each).
        for i in 0..10 {
            bank.record_outcome(&minus, i < 6).unwrap();
            bank.record_outcome(&plus, i < 9).unwrap();
        }
        let order: Vec<&str> = bank.applicable(&ctx(Some(1), Some(2)), 7).iter().map(|r| r.id.as_str()).collect();
        assert_eq!(order, [plus.as_str(), minus.as_str()]);
    }

    #[test]
    fn candidates_hidden_when_configured() {
        let mut bank = RuleBank::new(LifecycleConfig { include_candidates: false, ..LifecycleConfig::default() });
        let id = bank.register(minus_rule()).unwrap();
        assert!(bank.applicable(&ctx(Some(1), Some(2)), 7).is_empty());
        for _ in 0..5 {
            bank.record_outcome(&id, true).unwrap();
        }
        assert_eq!(bank.applicable(&ctx(Some(1), Some(2)), 7).len(), 1);
    }

    #[test]
    fn lifecycle_thresholds() {
        let mut bank = RuleBank::default();
        let good = bank.register(const_rule(1)).unwrap();
        for i in 0..5 {
            bank.record_outcome(&good, true).unwrap();
            let expected = if i < 4 { RuleStatus::Candidate } else { RuleStatus::Verified };
            assert_eq!(bank.get(&good).unwrap().status, expected);
        }
        let bad = bank.register(const_rule(2)).unwrap();
        for i in 0..5 {
            bank.record_outcome(&bad, i == 0).unwrap();
        }
        assert_eq!(bank.get(&bad).unwrap().status, RuleStatus::Retired);
        assert!(bank.applicable(&ctx(Some(2), None), 1).is_empty());
        assert!(matches!(bank.record_outcome("r-nope", true), Err(RuleBankError::UnknownRule(_))));
    }

    #[test]
    fn verified_rules_can_retire_but_never_revive() {
        let mut bank = RuleBank::default();
        let id = bank.register(const_rule(3)).unwrap();
        for _ in 0..5 {
            bank.record_outcome(&id, true).unwrap();
        }
        assert_eq!(bank.get(&id).unwrap().status, RuleStatus::Verified);
        for _ in 0..10 {
            bank.record_outcome(&id, false).unwrap();
        }
        assert_eq!(bank.get(&id).unwrap().status, RuleStatus::Retired);
        for _ in 0..50 {
            bank.record_outcome(&id, true).unwrap();
        }
        assert_eq!(bank.get(&id).unwrap().status, RuleStatus::Retired);
    }

    #[test]
    fn persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rulebank.json");

        let empty = RuleBank::default();
        empty.save(&path).unwrap();
        assert_eq!(RuleBank::load(&path).unwrap(), empty);

        let mut bank = RuleBank::default();
        let a = bank.register(minus_rule()).unwrap();
        bank.register(const_rule(7)).unwrap();
        bank.register(const_rule(8)).unwrap();
        bank.record_outcome(&a, true).unwrap();
        bank.save(&path).unwrap();
        let loaded = RuleBank::load(&path).unwrap();
        assert_eq!(loaded, bank);
        assert_eq!(loaded.len(), 3);

        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(RuleBank::load(&path), Err(RuleBankError::SchemaVersionMismatch { found: Some(99), .. })));
        assert!(matches!(RuleBank::load(&dir.path().join("missing.json")), Err(RuleBankError::Io { .. })));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Register(i64),
        Outcome(usize, bool),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![(0i64..4).prop_map(Op::Register), (0usize..4, any::<bool>()).prop_map(|(i, s)| Op::Outcome(i, s)),]
    }

    proptest! {
        #[test]
        fn bank_is_reproducible_from_its_log(ops in prop::collection::vec(op(), 0..60)) {
            let mut bank = RuleBank::default();
            let mut ids: Vec<String> = Vec::new();
            let mut last_apps: BTreeMap<String, u64> = BTreeMap::new();
            for op in ops {
                match op {
                    Op::Register(v) => {
                        let id = bank.register(const_rule(v)).unwrap();
                        if !ids.contains(&id) { ids.push(id); }
                    }
                    Op::Outcome(i, s) => {
                        if let Some(id) = ids.get(i) {
                            bank.record_outcome(id, s).unwrap();
                        }
                    }
                }
                for r in bank.rules() {
                    let prev = last_apps.insert(r.id.clone(), r.stats.applications).unwrap_or(0);
                    prop_assert!(r.stats.applications >= prev);
                    if let Some(rate) = r.stats.success_rate() {
                        prop_assert!((0.0..=1.0).contains(&rate));
                    }
                }
            }
            let rebuilt = RuleBank::from_events(*bank.config(), bank.journal()).unwrap();
            prop_assert_eq!(rebuilt, bank);
        }
    }
}
