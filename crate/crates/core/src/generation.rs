//! The per-turn output gate and constraint-compliant fallback.

use crate::constraints::CandidateOrder;
use crate::env::{EnvError, Environment, HistoryEntry, StepRecord, Transition, Value, Violation, ViolationCode};
use crate::profiler::{GenerationStrategy, TaskProfile};
use crate::rng::SplitMix64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("no valid action exists: {0}")]
    NoValidAction(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateResult {
    Accepted(Value),
    FallbackNeeded(Violation),
}

/// Checks a proposal against the environment's validity function. Pure.
pub fn gate(proposed: &Value, env: &dyn Environment, observation: &Value, history: &[HistoryEntry]) -> GateResult {
    match env.validate(proposed, observation, history) {
        Ok(()) => GateResult::Accepted(proposed.clone()),
        Err(v) => GateResult::FallbackNeeded(v),
    }
}

/// A valid action chosen without the model. Deterministic given the
/// inputs and the rng state.
pub fn fallback_generate(
    env: &dyn Environment,
    observation: &Value,
    history: &[HistoryEntry],
    profile: &TaskProfile,
    order: CandidateOrder,
    rng: &mut SplitMix64,
) -> Result<Value, GenerationError> {
    if profile.generation_strategy == GenerationStrategy::Direct {
        let action = env.default_action(observation, history);
        if env.check_validity(&action, observation, history) {
            return Ok(action);
        }
    }
    let mut candidates =
        env.candidates(observation, history, order, rng).map_err(|v| GenerationError::NoValidAction(v.message))?;
    candidates
        .find(|c| env.check_validity(c, observation, history))
        .ok_or_else(|| GenerationError::NoValidAction("every candidate failed the validity check".into()))
}

/// How the committed action of a turn came about.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Parsed model proposal; null when unparseable.
    pub proposed: Value,
    /// Action to step; null forfeits the turn.
    pub committed: Value,
    pub valid_on_first_try: bool,
    pub fallback_used: bool,
    pub violation: Option<Violation>,
}

impl Decision {
    pub fn accepted(action: Value) -> Self {
        Self {
            proposed: action.clone(),
            committed: action,
            valid_on_first_try: true,
            fallback_used: false,
            violation: None,
        }
    }

    pub fn fallback(proposed: Value, violation: Violation, action: Value) -> Self {
        Self { proposed, committed: action, valid_on_first_try: false, fallback_used: true, violation: Some(violation) }
    }

    /// Ungated commit of whatever was proposed.
    pub fn ungated(proposed: Value, violation: Option<Violation>) -> Self {
        Self {
            committed: proposed.clone(),
            proposed,
            valid_on_first_try: violation.is_none(),
            fallback_used: false,
            violation,
        }
    }
}

/// Steps the environment with the decision and builds the step record.
/// Actions the environment cannot even interpret forfeit the turn.
pub fn commit(
    env: &mut dyn Environment,
    mut decision: Decision,
    applied_rule_ids: Vec<String>,
) -> Result<(Transition, StepRecord), EnvError> {
    let observation_before = env.observation();
    let transition = if decision.committed.is_null() {
        env.forfeit()?
    } else {
        match env.step(&decision.committed) {
            Ok(t) => t,
            Err(EnvError::MalformedAction(msg)) => {
                decision.committed = Value::Null;
                decision.valid_on_first_try = false;
                decision.violation.get_or_insert_with(|| Violation::new(ViolationCode::WrongType, msg));
                env.forfeit()?
            }
            Err(e) => return Err(e),
        }
    };
    let record = StepRecord {
        turn: env.turn(),
        observation_before,
        proposed_action: decision.proposed,
        committed_action: decision.committed,
        valid_on_first_try: decision.valid_on_first_try,
        fallback_used: decision.fallback_used,
        applied_rule_ids,
        reward: transition.reward,
        done: transition.done,
        violation: decision.violation,
    };
    Ok((transition, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gmn::GuessMyNumber;
    use crate::env::wordle::{WordList, Wordle};
    use crate::profiler::heuristic_profile;

    fn wordle_after(guesses: &[&str], seed: u64) -> (Wordle, Vec<HistoryEntry>) {
        let mut env = Wordle::new(WordList::standard(), true);
        env.reset(seed);
        let mut history = Vec::new();
        for g in guesses {
            let obs = env.observation();
            let tr = env.step(&Value::text(*g)).unwrap();
            history.push(HistoryEntry { observation: obs, action: Value::text(*g), reward: tr.reward });
        }
        (env, history)
    }

    #[test]
    fn consistent_guess_is_accepted() {
        let (env, history) = wordle_after(&[], 0);
        let obs = env.observation();
        assert_eq!(gate(&Value::text("crane"), &env, &obs, &history), GateResult::Accepted(Value::text("crane")));
    }

    #[test]
    fn banned_letter_needs_fallback() {
        // Find a seed whose secret has no 't', so "caret"-style guesses ban it.
        let (env, history) =
            (0..).map(|s| wordle_after(&["tight"], s)).find(|(e, _)| !e.secret().as_str().contains('t')).unwrap();
        let obs = env.observation();
        match gate(&Value::text("treat"), &env, &obs, &history) {
            GateResult::FallbackNeeded(v) => {
                assert_eq!(v.code, ViolationCode::ConstraintViolation);
                assert!(v.message.contains("max_count"), "{}", v.message);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gmn_out_of_range_needs_fallback() {
        let env = GuessMyNumber::new();
        match gate(&Value::Int(20000), &env, &env.observation(), &[]) {
            GateResult::FallbackNeeded(v) => assert!(v.message.contains("out of range")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn enumeration_fallback_on_empty_history_is_first_allowed_word() {
        let (env, history) = wordle_after(&[], 0);
        let profile = heuristic_profile(env.spec());
        let a = fallback_generate(
            &env,
            &env.observation(),
            &history,
            &profile,
            CandidateOrder::ListOrder,
            &mut SplitMix64::new(1),
        )
        .unwrap();
        assert_eq!(a, Value::text(WordList::standard().allowed()[0].as_str()));
    }

    #[test]
    fn singleton_state_yields_that_word() {
        let words = std::sync::Arc::new(WordList::from_text("crane\nslate\n", None).unwrap());
        let mut env = Wordle::new(words, true);
        let seed = (0..).find(|&s| {
            env.reset(s);
            env.secret().as_str() == "crane"
        });
        env.reset(seed.unwrap());
        let obs = env.observation();
        let tr = env.step(&Value::text("slate")).unwrap();
        let history = vec![HistoryEntry { observation: obs, action: Value::text("slate"), reward: tr.reward }];
        let profile = heuristic_profile(env.spec());
        let a = fallback_generate(
            &env,
            &env.observation(),
            &history,
            &profile,
            CandidateOrder::Lexicographic,
            &mut SplitMix64::new(0),
        )
        .unwrap();
        assert_eq!(a, Value::text("crane"));
    }

    #[test]
    fn direct_fallback_without_hints_is_midpoint() {
        let env = GuessMyNumber::new();
        let profile = heuristic_profile(env.spec());
        let a = fallback_generate(
            &env,
            &env.observation(),
            &[],
            &profile,
            CandidateOrder::ListOrder,
            &mut SplitMix64::new(0),
        )
        .unwrap();
        assert_eq!(a, Value::Int(5000));
    }

    #[test]
    fn random_order_fallback_is_seeded_and_valid() {
        let (env, history) = wordle_after(&["crane"], 5);
        let obs = env.observation();
        let profile = heuristic_profile(env.spec());
        let pick = |seed| {
            fallback_generate(&env, &obs, &history, &profile, CandidateOrder::SeededShuffle, &mut SplitMix64::new(seed))
                .unwrap()
        };
        assert_eq!(pick(9), pick(9));
        assert!(env.check_validity(&pick(9), &obs, &history));
    }

    #[test]
    fn commit_records_both_paths() {
        let mut env = GuessMyNumber::new();
        env.reset(0);
        let (_, rec) = commit(&mut env, Decision::accepted(Value::Int(10)), vec![]).unwrap();
        assert!(rec.valid_on_first_try && !rec.fallback_used);
        assert_eq!(rec.committed_action, Value::Int(10));
        assert_eq!(rec.turn, 1);

        let v = Violation::new(ViolationCode::OutOfRange, "out of range");
        let (_, rec) =
            commit(&mut env, Decision::fallback(Value::Int(-4), v, Value::Int(5000)), vec!["r-x".into()]).unwrap();
        assert!(!rec.valid_on_first_try && rec.fallback_used);
        assert_eq!(rec.committed_action, Value::Int(5000));
        assert_eq!(rec.applied_rule_ids, vec!["r-x".to_string()]);
    }

    #[test]
    fn uninterpretable_ungated_action_forfeits() {
        let mut env = GuessMyNumber::new();
        env.reset(0);
        let (tr, rec) = commit(&mut env, Decision::ungated(Value::text("lots"), None), vec![]).unwrap();
        assert_eq!(tr.reward, 0.0);
        assert!(rec.committed_action.is_null());
        assert!(!rec.valid_on_first_try);
        assert_eq!(env.turn(), 1);
    }
}
