//! Deterministic stand-ins for a language model. Each policy reads the
//! `state` block of the prompt and answers in the same format a model would.

use super::{answer_text, CompletionBackend, CompletionRequest, GatewayError, Purpose};
use crate::agent::prompt::PromptState;
use crate::constraints::CandidateOrder;
use crate::env::gmn::{self, RANGE_MAX, RANGE_MIN};
use crate::env::wordle::{constraints_from_observation, WordList};
use crate::env::Value;
use crate::rng::SplitMix64;
use crate::rules::GenerationPolicy;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Proposed by the adversarial policy when nothing in the list is
/// inconsistent (always on turn 1). Not a dictionary word.
const NON_WORD: &str = "zzzzz";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedPolicy {
    /// Plays the first consistent candidate in list order.
    WordleOracle,
    /// Always proposes something the gate must reject.
    WordleAdversarial,
    /// Median of the integers still compatible with every hint and its
    /// worst-case noise.
    GmnBinarySearch,
    /// Holds at the range midpoint until the first exact hint, then tries
    /// `previous_guess - hint` and `previous_guess + hint`.
    GmnExactExploit,
    /// The same action every turn.
    Echo(String),
    /// Plays the first listed rule's suggestion, else the environment's
    /// default scripted policy.
    RuleFollower,
}

impl FromStr for ScriptedPolicy {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "wordle_oracle" => Self::WordleOracle,
            "wordle_adversarial" => Self::WordleAdversarial,
            "gmn_binary_search" => Self::GmnBinarySearch,
            "gmn_exact_exploit" => Self::GmnExactExploit,
            "rule_follower" => Self::RuleFollower,
            _ => match s.strip_prefix("echo:") {
                Some(v) if !v.is_empty() => Self::Echo(v.to_string()),
                _ => {
                    return Err(GatewayError::Config(format!(
                        "unknown scripted policy `{s}` (expected wordle_oracle, wordle_adversarial, \
                         gmn_binary_search, gmn_exact_exploit, rule_follower or echo:<action>)"
                    )))
                }
            },
        })
    }
}

impl fmt::Display for ScriptedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WordleOracle => f.write_str("wordle_oracle"),
            Self::WordleAdversarial => f.write_str("wordle_adversarial"),
            Self::GmnBinarySearch => f.write_str("gmn_binary_search"),
            Self::GmnExactExploit => f.write_str("gmn_exact_exploit"),
            Self::Echo(v) => write!(f, "echo:{v}"),
            Self::RuleFollower => f.write_str("rule_follower"),
        }
    }
}

fn is_wordle(state: &PromptState) -> bool {
    state.env == crate::env::wordle::spec().name
}

fn is_gmn(state: &PromptState) -> bool {
    state.env == gmn::spec().name
}

fn wordle_oracle(words: &WordList, state: &PromptState) -> Option<Value> {
    let constraints = constraints_from_observation(&state.observation);
    let mut rng = SplitMix64::new(0);
    let mut it = constraints.enumerate_candidates(words, CandidateOrder::ListOrder, &mut rng).ok()?;
    it.next().map(|w| Value::text(w.as_str()))
}

fn wordle_adversarial(words: &WordList, state: &PromptState) -> Value {
    let constraints = constraints_from_observation(&state.observation);
    if state.history.is_empty() {
        return Value::text(NON_WORD);
    }
    words
        .allowed()
        .iter()
        .find(|w| !constraints.is_consistent(w))
        .map_or_else(|| Value::text(NON_WORD), |w| Value::text(w.as_str()))
}

fn guessed(state: &PromptState) -> BTreeSet<i64> {
    state.history.iter().filter_map(|h| h.action.as_int()).collect()
}

/// Sorted disjoint inclusive intervals.
type IntervalSet = Vec<(i64, i64)>;

fn intersect(a: &IntervalSet, b: &IntervalSet) -> IntervalSet {
    let mut out = Vec::new();
    for &(alo, ahi) in a {
        for &(blo, bhi) in b {
            let (lo, hi) = (alo.max(blo), ahi.min(bhi));
            if lo <= hi {
                out.push((lo, hi));
            }
        }
    }
    out.sort_unstable();
    out
}

fn gmn_binary_search(state: &PromptState) -> Value {
    let mut feasible: IntervalSet = vec![(RANGE_MIN, RANGE_MAX)];
    for (turn, guess, hint) in gmn::hinted_guesses(&state.observation, &state.history) {
        let b = gmn::hint_error_bound(turn);
        let (dlo, dhi) = ((hint - b).max(0), hint + b);
        let mut band = vec![(guess - dhi, guess - dlo), (guess + dlo, guess + dhi)];
        band.sort_unstable();
        let next = intersect(&feasible, &band);
        if !next.is_empty() {
            feasible = next;
        }
    }
    let tried = guessed(state);
    let size: i64 = feasible.iter().map(|(lo, hi)| hi - lo + 1).sum();
    let mut target = size / 2;
    let points = feasible.iter().flat_map(|&(lo, hi)| lo..=hi);
    // Median first; later points if it was already tried.
    let median = points.clone().skip(target as usize).chain(points.take(target as usize)).find(|p| !tried.contains(p));
    target = median.unwrap_or((RANGE_MIN + RANGE_MAX) / 2);
    Value::Int(target)
}

fn gmn_exact_exploit(state: &PromptState) -> Value {
    let midpoint = (RANGE_MIN + RANGE_MAX) / 2;
    let tried = guessed(state);
    let mut candidates: Option<BTreeSet<i64>> = None;
    for (turn, guess, hint) in gmn::hinted_guesses(&state.observation, &state.history) {
        if turn < gmn::EXACT_HINT_TURN {
            continue;
        }
        let here: BTreeSet<i64> =
            [guess - hint, guess + hint].into_iter().filter(|c| (RANGE_MIN..=RANGE_MAX).contains(c)).collect();
        candidates = Some(match candidates {
            Some(c) => c.intersection(&here).copied().collect(),
            None => here,
        });
    }
    candidates.and_then(|c| c.into_iter().find(|c| !tried.contains(c))).map_or(Value::Int(midpoint), Value::Int)
}

fn echo_value(raw: &str) -> Value {
    raw.parse::<i64>().map_or_else(|_| Value::text(raw), Value::Int)
}

pub struct ScriptedBackend {
    policy: ScriptedPolicy,
    words: Arc<WordList>,
}

impl ScriptedBackend {
    pub fn new(policy: ScriptedPolicy, words: Arc<WordList>) -> Self {
        Self { policy, words }
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }

    /// The policy's action for a prompt state, if it can play this
    /// environment.
    pub fn decide(&self, state: &PromptState) -> Option<Value> {
        match &self.policy {
            ScriptedPolicy::WordleOracle if is_wordle(state) => wordle_oracle(&self.words, state),
            ScriptedPolicy::WordleAdversarial if is_wordle(state) => Some(wordle_adversarial(&self.words, state)),
            ScriptedPolicy::GmnBinarySearch if is_gmn(state) => Some(gmn_binary_search(state)),
            ScriptedPolicy::GmnExactExploit if is_gmn(state) => Some(gmn_exact_exploit(state)),
            ScriptedPolicy::Echo(v) => Some(echo_value(v)),
            ScriptedPolicy::RuleFollower => {
                for rule in &state.rules {
                    if !rule.suggested_action.is_null() {
                        return Some(rule.suggested_action.clone());
                    }
                    if rule.policy == Some(GenerationPolicy::ConsistentCandidate) && is_wordle(state) {
                        return wordle_oracle(&self.words, state);
                    }
                }
                if is_wordle(state) {
                    wordle_oracle(&self.words, state)
                } else if is_gmn(state) {
                    Some(gmn_binary_search(state))
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        if request.purpose != Purpose::Action {
            return Ok(format!("Scripted policy {} does not produce {} output.", self.policy, request.purpose));
        }
        let Some(state) = PromptState::extract(&request.user_text) else {
            return Ok(format!("Scripted policy {} found no state block.", self.policy));
        };
        Ok(match self.decide(&state) {
            Some(action) => format!("Scripted policy {}.\n{}", self.policy, answer_text(&action)),
            None => format!("Scripted policy {} has no move for {}.", self.policy, state.env),
        })
    }

    fn name(&self) -> String {
        format!("scripted:{}", self.policy)
    }
}
