//! Guess My Number.
//!
//! A secret integer in `[0, 10000]`; each wrong guess earns a distance hint
//! perturbed by symmetric uniform noise of magnitude `1000 * 0.2^t`, rounded
//! half away from zero and clamped at zero. Guessing right on turn `t` pays
//! `100 / t`; the budget is 15 turns.

use super::{
    base_rule_context, EnvError, EnvSpec, Environment, FieldKind, FieldSpec, HistoryEntry, RuleContext, Transition,
    Value, Violation, ViolationCode,
};
use crate::constraints::CandidateOrder;
use crate::rng::SplitMix64;

pub const RANGE_MIN: i64 = 0;
pub const RANGE_MAX: i64 = 10_000;
pub const MAX_TURNS: u32 = 15;
/// From this turn on the noise magnitude is below 0.5 and hints are exact.
pub const EXACT_HINT_TURN: u32 = 5;

/// Noise magnitude at turn `t`: `1000 * 0.2^t`, computed as `1000 / 5^t`
/// so that whole values come out exact.
pub fn noise_magnitude(turn: u32) -> f64 {
    1000.0 / 5f64.powi(turn as i32)
}

/// Largest possible `|hint - distance|` for a guess made on turn `t`.
pub fn hint_error_bound(turn: u32) -> i64 {
    if turn >= EXACT_HINT_TURN {
        0
    } else {
        noise_magnitude(turn).ceil() as i64
    }
}

/// `(turn, guess, hint)` for every guess in the history that received a hint.
pub fn hinted_guesses(observation: &Value, history: &[HistoryEntry]) -> Vec<(u32, i64, i64)> {
    let mut out = Vec::new();
    for (i, entry) in history.iter().enumerate() {
        let after = history.get(i + 1).map_or(observation, |next| &next.observation);
        if let (Some(guess), Some(hint), Some(turn)) = (
            entry.action.as_int(),
            after.get("hint").and_then(Value::as_int),
            after.get("turn").and_then(Value::as_int),
        ) {
            out.push((turn as u32, guess, hint));
        }
    }
    out
}

pub fn success_reward(turn: u32) -> f64 {
    100.0 / f64::from(turn)
}

pub fn spec() -> EnvSpec {
    EnvSpec {
        name: "guess_my_number".into(),
        observation_schema: vec![
            FieldSpec::new(
                "hint",
                FieldKind::Integer,
                "noisy distance between your last guess and the secret number; the noise decreases as turns increase and is independent of past turns (absent before the first guess)",
            ),
            FieldSpec::new("turn", FieldKind::Integer, "number of turns taken so far"),
            FieldSpec::new("turns_remaining", FieldKind::Integer, "turns left before the game ends"),
        ],
        action_schema: vec![FieldSpec::new(
            "guess",
            FieldKind::Integer,
            "an integer guess in the range [0, 10000]",
        )],
        reward_description: "100 / t if the secret number is guessed on turn t, otherwise 0".into(),
        goal_description: "find the secret number in as few turns as possible (at most 15 turns)".into(),
        max_turns: MAX_TURNS,
        cumulative_constraints: false,
    }
}

fn in_range(v: i64) -> bool {
    (RANGE_MIN..=RANGE_MAX).contains(&v)
}

pub fn check_guess(action: &Value) -> Result<i64, Violation> {
    let guess = action.as_int().ok_or_else(|| {
        Violation::new(ViolationCode::WrongType, format!("expected an integer guess, got `{action}`"))
    })?;
    if !in_range(guess) {
        return Err(Violation::new(
            ViolationCode::OutOfRange,
            format!("guess {guess} out of range [{RANGE_MIN}, {RANGE_MAX}]"),
        ));
    }
    Ok(guess)
}

/// Interval of secrets compatible with every exact-phase hint, i.e. the
/// intersection of the bands `[guess - hint, guess + hint]` from turns
/// `t >= 5`, clipped to the game range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeasibleInterval {
    pub low: i64,
    pub high: i64,
}

impl FeasibleInterval {
    pub fn midpoint(&self) -> i64 {
        self.low + (self.high - self.low) / 2
    }

    /// `None` when no exact-phase hint has been seen yet, or when the hints
    /// contradict each other.
    pub fn track(observation: &Value, history: &[HistoryEntry]) -> Option<Self> {
        let mut bounds: Option<(i64, i64)> = None;
        for (i, entry) in history.iter().enumerate() {
            let after = history.get(i + 1).map_or(observation, |next| &next.observation);
            let (Some(guess), Some(hint), Some(turn)) = (
                entry.action.as_int(),
                after.get("hint").and_then(Value::as_int),
                after.get("turn").and_then(Value::as_int),
            ) else {
                continue;
            };
            if turn < i64::from(EXACT_HINT_TURN) {
                continue;
            }
            let (lo, hi) = bounds.unwrap_or((RANGE_MIN, RANGE_MAX));
            bounds = Some((lo.max(guess - hint), hi.min(guess + hint)));
        }
        match bounds {
            Some((low, high)) if low <= high => Some(Self { low, high }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GuessMyNumber {
    spec: EnvSpec,
    secret: i64,
    turn: u32,
    hint: Option<i64>,
    done: bool,
    rng: SplitMix64,
}

impl Default for GuessMyNumber {
    fn default() -> Self {
        Self::new()
    }
}

impl GuessMyNumber {
    pub fn new() -> Self {
        let mut env = Self { spec: spec(), secret: 0, turn: 0, hint: None, done: false, rng: SplitMix64::new(0) };
        env.reset(0);
        env
    }

    pub fn secret(&self) -> i64 {
        self.secret
    }

    fn observation_at(&self) -> Value {
        Value::record([
            ("turn", Value::Int(i64::from(self.turn))),
            ("hint", self.hint.map_or(Value::Null, Value::Int)),
            ("turns_remaining", Value::Int(i64::from(MAX_TURNS - self.turn))),
        ])
    }
}

impl Environment for GuessMyNumber {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Value {
        self.rng = SplitMix64::new(seed);
        self.secret = self.rng.below((RANGE_MAX - RANGE_MIN + 1) as u64) as i64 + RANGE_MIN;
        self.turn = 0;
        self.hint = None;
        self.done = false;
        self.observation_at()
    }

    fn step(&mut self, action: &Value) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let guess = check_guess(action).map_err(|v| EnvError::MalformedAction(v.message))?;
        self.turn += 1;
        let t = self.turn;
        // One draw per step whether or not it is needed keeps the stream
        // position a function of the turn index alone.
        let noise = self.rng.symmetric(noise_magnitude(t));
        let reward = if guess == self.secret {
            self.hint = Some(0);
            success_reward(t)
        } else {
            let distance = (self.secret - guess).abs() as f64;
            self.hint = Some(((distance + noise).round() as i64).max(0));
            0.0
        };
        let observation = self.observation_at();
        self.done = self.is_done(&observation, reward, &[]);
        Ok(Transition { observation, reward, done: self.done })
    }

    fn forfeit(&mut self) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        self.turn += 1;
        // Same stream position as a real step.
        let _ = self.rng.next_u64();
        self.hint = None;
        let observation = self.observation_at();
        self.done = self.is_done(&observation, 0.0, &[]);
        Ok(Transition { observation, reward: 0.0, done: self.done })
    }

    fn observation(&self) -> Value {
        self.observation_at()
    }

    fn turn(&self) -> u32 {
        self.turn
    }

    fn is_finished(&self) -> bool {
        self.done
    }

    fn validate(&self, action: &Value, _observation: &Value, _history: &[HistoryEntry]) -> Result<(), Violation> {
        check_guess(action).map(|_| ())
    }

    fn compliant(&self, _observation: &Value, action: &Value) -> bool {
        check_guess(action).is_ok()
    }

    fn rule_context(&self, observation: &Value, history: &[HistoryEntry]) -> RuleContext {
        let mut ctx = base_rule_context(observation, history);
        let interval = FeasibleInterval::track(observation, history);
        let field = |f: fn(&FeasibleInterval) -> i64| interval.as_ref().map_or(Value::Null, |i| Value::Int(f(i)));
        ctx.insert("feasible_low".into(), field(|i| i.low));
        ctx.insert("feasible_high".into(), field(|i| i.high));
        ctx.insert("feasible_midpoint".into(), field(FeasibleInterval::midpoint));
        ctx
    }

    fn candidates<'a>(
        &'a self,
        observation: &Value,
        history: &[HistoryEntry],
        order: CandidateOrder,
        rng: &mut SplitMix64,
    ) -> Result<Box<dyn Iterator<Item = Value> + 'a>, Violation> {
        let (low, high) =
            FeasibleInterval::track(observation, history).map_or((RANGE_MIN, RANGE_MAX), |i| (i.low, i.high));
        match order {
            CandidateOrder::ListOrder | CandidateOrder::Lexicographic => Ok(Box::new((low..=high).map(Value::Int))),
            CandidateOrder::SeededShuffle => {
                let mut all: Vec<i64> = (low..=high).collect();
                rng.shuffle(&mut all);
                Ok(Box::new(all.into_iter().map(Value::Int)))
            }
        }
    }

    fn default_action(&self, observation: &Value, history: &[HistoryEntry]) -> Value {
        let mid = FeasibleInterval::track(observation, history).map_or((RANGE_MIN + RANGE_MAX) / 2, |i| i.midpoint());
        Value::Int(mid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrong_guess(env: &GuessMyNumber) -> Value {
        Value::Int(if env.secret() == 0 { 1 } else { 0 })
    }

    #[test]
    fn error_bounds_per_turn() {
        let bounds: Vec<i64> = (1..=6).map(hint_error_bound).collect();
        assert_eq!(bounds, [200, 40, 8, 2, 0, 0]);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = GuessMyNumber::new();
        let mut b = GuessMyNumber::new();
        let oa = a.reset(42);
        let ob = b.reset(42);
        assert_eq!(oa, ob);
        assert_eq!(a.secret(), b.secret());
        assert_eq!(oa.get("hint"), Some(&Value::Null));
        assert_eq!(oa.get("turn"), Some(&Value::Int(0)));
        assert_eq!(oa.get("turns_remaining"), Some(&Value::Int(15)));
    }

    #[test]
    fn secrets_match_reference_stream() {
        // Golden values from an independent SplitMix64 implementation:
        // secret = (first_output * 10001) >> 64.
        let mut env = GuessMyNumber::new();
        for (seed, secret) in [(0, 8833), (1, 5666), (2, 5912), (42, 7416)] {
            env.reset(seed);
            assert_eq!(env.secret(), secret, "seed {seed}");
        }
    }

    #[test]
    fn reward_on_success_turn() {
        for t in [1u32, 4, 15] {
            let mut env = GuessMyNumber::new();
            env.reset(11);
            for _ in 1..t {
                let g = wrong_guess(&env);
                assert_eq!(env.step(&g).unwrap().reward, 0.0);
            }
            let tr = env.step(&Value::Int(env.secret())).unwrap();
            assert!(tr.done);
            assert!((tr.reward - 100.0 / f64::from(t)).abs() < 1e-9);
            assert_eq!(tr.observation.get("hint"), Some(&Value::Int(0)));
        }
    }

    #[test]
    fn budget_exhaustion() {
        let mut env = GuessMyNumber::new();
        env.reset(5);
        for t in 1..=15 {
            let g = wrong_guess(&env);
            let tr = env.step(&g).unwrap();
            assert_eq!(tr.reward, 0.0);
            assert_eq!(tr.done, t == 15);
        }
        assert_eq!(env.step(&Value::Int(3)), Err(EnvError::StepAfterDone));
    }

    #[test]
    fn noise_schedule() {
        let expected = [(1, 200.0), (2, 40.0), (3, 8.0), (5, 0.32)];
        for (t, m) in expected {
            assert!((noise_magnitude(t) - m).abs() < 1e-12, "t={t}");
        }
        assert!(noise_magnitude(5) < 0.5);
    }

    #[test]
    fn validity() {
        let env = GuessMyNumber::new();
        let obs = env.observation();
        for (v, ok) in [
            (Value::Int(5000), true),
            (Value::Int(0), true),
            (Value::Int(10_000), true),
            (Value::Int(-1), false),
            (Value::Int(10_001), false),
            (Value::text("abc"), false),
        ] {
            assert_eq!(env.check_validity(&v, &obs, &[]), ok, "{v}");
        }
        let v = env.validate(&Value::Int(20_000), &obs, &[]).unwrap_err();
        assert_eq!(v.code, ViolationCode::OutOfRange);
        assert!(v.message.contains("out of range"));
    }

    #[test]
    fn malformed_step() {
        let mut env = GuessMyNumber::new();
        env.reset(1);
        assert!(matches!(env.step(&Value::text("x")), Err(EnvError::MalformedAction(_))));
        assert!(matches!(env.step(&Value::Int(10_001)), Err(EnvError::MalformedAction(_))));
        assert_eq!(env.turn(), 0);
    }

    #[test]
    fn exact_hints_pin_the_interval() {
        let mut env = GuessMyNumber::new();
        let mut obs = env.reset(8);
        let mut history = Vec::new();
        for _ in 0..6 {
            let g = Value::Int(if env.secret() == 5000 { 4000 } else { 5000 });
            let tr = env.step(&g).unwrap();
            history.push(HistoryEntry { observation: obs.clone(), action: g, reward: tr.reward });
            obs = tr.observation;
        }
        let interval = FeasibleInterval::track(&obs, &history).unwrap();
        assert!(interval.low <= env.secret() && env.secret() <= interval.high);
        let d = (env.secret() - 5000).abs();
        assert_eq!((interval.low, interval.high), ((5000 - d).max(0), (5000 + d).min(10_000)));
        let ctx = env.rule_context(&obs, &history);
        assert_eq!(ctx["previous_guess"], Value::Int(5000));
        assert_eq!(ctx["feasible_midpoint"], Value::Int(interval.midpoint()));
    }

    #[test]
    fn default_action_without_hints_is_range_midpoint() {
        let env = GuessMyNumber::new();
        assert_eq!(env.default_action(&env.observation(), &[]), Value::Int(5000));
    }
}
