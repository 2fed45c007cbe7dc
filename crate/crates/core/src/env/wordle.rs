//! Wordle: a secret five-letter word, per-letter feedback, six turns,
//! reward 100 on success.

use super::{
    EnvError, EnvSpec, Environment, FieldKind, FieldSpec, HistoryEntry, Transition, Value, Violation, ViolationCode,
};
use crate::constraints::{CandidateOrder, ConstraintState};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

pub const WORD_LEN: usize = 5;
pub const MAX_TURNS: u32 = 6;
pub const SUCCESS_REWARD: f64 = 100.0;

const DEFAULT_ANSWERS: &str = include_str!("../../data/answers.txt");
const DEFAULT_GUESSES: &str = include_str!("../../data/guesses.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WordError {
    #[error("`{0}` is not a five-letter lowercase word")]
    Malformed(String),
    #[error("secret and guess lengths differ ({secret} vs {guess})")]
    LengthMismatch { secret: usize, guess: usize },
}

/// A five-letter lowercase ASCII word.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word([u8; WORD_LEN]);

impl Word {
    pub fn letters(&self) -> &[u8; WORD_LEN] {
        &self.0
    }

    /// Letter index 0..26 at `pos`.
    pub fn index_at(&self, pos: usize) -> usize {
        usize::from(self.0[pos] - b'a')
    }

    pub fn count(&self, letter: u8) -> usize {
        self.0.iter().filter(|&&l| l == letter).count()
    }

    pub fn as_str(&self) -> &str {
        // Constructed only from ASCII lowercase letters.
        std::str::from_utf8(&self.0).expect("ascii word")
    }
}

impl FromStr for Word {
    type Err = WordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != WORD_LEN || !bytes.iter().all(u8::is_ascii_lowercase) {
            return Err(WordError::Malformed(s.to_string()));
        }
        let mut letters = [0u8; WORD_LEN];
        letters.copy_from_slice(bytes);
        Ok(Word(letters))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word({})", self.as_str())
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Correct,
    Misplaced,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordleFeedback {
    pub marks: [Mark; WORD_LEN],
}

impl WordleFeedback {
    pub fn is_solved(&self) -> bool {
        self.marks.iter().all(|&m| m == Mark::Correct)
    }

    /// Compact `C`/`M`/`A` rendering, e.g. `CMMMA`.
    pub fn compact(&self) -> String {
        self.marks
            .iter()
            .map(|m| match m {
                Mark::Correct => 'C',
                Mark::Misplaced => 'M',
                Mark::Absent => 'A',
            })
            .collect()
    }
}

/// Two-pass scoring: exact matches first (consuming those secret letters),
/// then misplaced marks while unconsumed multiplicity remains.
pub fn score(secret: &Word, guess: &Word) -> WordleFeedback {
    let mut marks = [Mark::Absent; WORD_LEN];
    let mut remaining = [0u8; 26];
    for i in 0..WORD_LEN {
        if guess.0[i] == secret.0[i] {
            marks[i] = Mark::Correct;
        } else {
            remaining[secret.index_at(i)] += 1;
        }
    }
    for (i, mark) in marks.iter_mut().enumerate() {
        if *mark == Mark::Correct {
            continue;
        }
        let l = guess.index_at(i);
        if remaining[l] > 0 {
            remaining[l] -= 1;
            *mark = Mark::Misplaced;
        }
    }
    WordleFeedback { marks }
}

/// [`score`] over raw strings.
pub fn score_guess(secret: &str, guess: &str) -> Result<WordleFeedback, WordError> {
    if secret.len() != guess.len() {
        return Err(WordError::LengthMismatch { secret: secret.len(), guess: guess.len() });
    }
    Ok(score(&secret.parse()?, &guess.parse()?))
}

#[derive(Debug, Error)]
pub enum WordListError {
    #[error("reading word list {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name} line {line}: `{text}` is not a five-letter lowercase word")]
    BadWord { source_name: String, line: usize, text: String },
    #[error("{0} contains no words")]
    Empty(String),
}

/// Answer pool plus allowed guesses. Immutable once built.
#[derive(Debug, Clone)]
pub struct WordList {
    answers: Vec<Word>,
    allowed: Vec<Word>,
    allowed_set: HashSet<Word>,
    lexicographic: Vec<usize>,
}

fn parse_lines(text: &str, source_name: &str) -> Result<Vec<Word>, WordListError> {
    let mut words = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let word: Word = trimmed.parse().map_err(|_| WordListError::BadWord {
            source_name: source_name.to_string(),
            line: n + 1,
            text: trimmed.to_string(),
        })?;
        if seen.insert(word) {
            words.push(word);
        }
    }
    if words.is_empty() {
        return Err(WordListError::Empty(source_name.to_string()));
    }
    Ok(words)
}

impl WordList {
    /// Builds a list from answer words and extra allowed guesses. The
    /// allowed list is the answers followed by any extra words not already
    /// present, so `answers ⊆ allowed` always holds.
    pub fn new(answers: Vec<Word>, extra_allowed: Vec<Word>) -> Self {
        let mut allowed_set: HashSet<Word> = HashSet::with_capacity(answers.len() + extra_allowed.len());
        let mut allowed = Vec::with_capacity(answers.len() + extra_allowed.len());
        for w in answers.iter().chain(extra_allowed.iter()) {
            if allowed_set.insert(*w) {
                allowed.push(*w);
            }
        }
        let mut lexicographic: Vec<usize> = (0..allowed.len()).collect();
        lexicographic.sort_by_key(|&i| allowed[i]);
        let mut seen = HashSet::new();
        let answers = answers.into_iter().filter(|w| seen.insert(*w)).collect();
        Self { answers, allowed, allowed_set, lexicographic }
    }

    pub fn from_text(answers: &str, extra_allowed: Option<&str>) -> Result<Self, WordListError> {
        let answers = parse_lines(answers, "answer list")?;
        let extra = match extra_allowed {
            Some(text) => parse_lines(text, "allowed list")?,
            None => Vec::new(),
        };
        Ok(Self::new(answers, extra))
    }

    pub fn load(answers: &Path, extra_allowed: Option<&Path>) -> Result<Self, WordListError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| WordListError::Io { path: p.display().to_string(), source })
        };
        let answers_text = read(answers)?;
        let extra_text = extra_allowed.map(read).transpose()?;
        Self::from_text(&answers_text, extra_text.as_deref())
    }

    /// The bundled list: 2,315 answers plus 10,657 further allowed guesses.
    pub fn standard() -> Arc<WordList> {
        static STANDARD: OnceLock<Arc<WordList>> = OnceLock::new();
        STANDARD
            .get_or_init(|| {
                Arc::new(
                    WordList::from_text(DEFAULT_ANSWERS, Some(DEFAULT_GUESSES)).expect("bundled word list is valid"),
                )
            })
            .clone()
    }

    pub fn answers(&self) -> &[Word] {
        &self.answers
    }

    pub fn allowed(&self) -> &[Word] {
        &self.allowed
    }

    pub fn lexicographic(&self) -> impl Iterator<Item = &Word> + '_ {
        self.lexicographic.iter().map(move |&i| &self.allowed[i])
    }

    pub fn is_allowed(&self, w: &Word) -> bool {
        self.allowed_set.contains(w)
    }
}

pub fn spec() -> EnvSpec {
    EnvSpec {
        name: "wordle".into(),
        observation_schema: vec![
            FieldSpec::new(
                "history",
                FieldKind::List,
                "every guess so far with per-letter feedback: correct (right letter, right position), misplaced (letter appears elsewhere), absent (letter does not occur)",
            ),
            FieldSpec::new("turn", FieldKind::Integer, "number of turns taken so far"),
            FieldSpec::new("turns_remaining", FieldKind::Integer, "turns left before the game ends"),
        ],
        action_schema: vec![FieldSpec::new(
            "guess",
            FieldKind::Word,
            "a five-letter lowercase English word from the allowed list",
        )],
        reward_description: "100 if the secret word is guessed within the turn budget, otherwise 0".into(),
        goal_description:
            "find the secret five-letter word within 6 turns; every guess must stay consistent with all feedback received so far"
                .into(),
        max_turns: MAX_TURNS,
        cumulative_constraints: true,
    }
}

/// Guess/feedback pairs carried in a Wordle observation.
pub fn feedback_history(observation: &Value) -> Vec<(Word, WordleFeedback)> {
    let Some(items) = observation.get("history").and_then(Value::as_list) else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|item| {
            let guess: Word = item.get("guess")?.as_str()?.parse().ok()?;
            let feedback: WordleFeedback =
                serde_json::to_value(item.get("feedback")?).ok().and_then(|v| serde_json::from_value(v).ok())?;
            Some((guess, feedback))
        })
        .collect()
}

/// Cumulative constraints implied by the feedback in `observation`.
/// Corrupt history yields the empty state.
pub fn constraints_from_observation(observation: &Value) -> ConstraintState {
    ConstraintState::from_history(feedback_history(observation).iter()).unwrap_or_default()
}

fn parse_word_action(action: &Value) -> Result<Word, Violation> {
    let text = action
        .as_str()
        .ok_or_else(|| Violation::new(ViolationCode::WrongType, format!("expected a word, got `{action}`")))?;
    text.parse().map_err(|e: WordError| Violation::new(ViolationCode::WrongType, e.to_string()))
}

#[derive(Debug, Clone)]
pub struct Wordle {
    spec: EnvSpec,
    words: Arc<WordList>,
    hard_validity: bool,
    secret: Word,
    turn: u32,
    history: Vec<(Word, WordleFeedback)>,
    done: bool,
}

impl Wordle {
    /// `hard_validity` makes feedback consistency part of `f_validity`.
    pub fn new(words: Arc<WordList>, hard_validity: bool) -> Self {
        let secret = words.answers()[0];
        let mut env = Self { spec: spec(), words, hard_validity, secret, turn: 0, history: Vec::new(), done: false };
        env.reset(0);
        env
    }

    pub fn secret(&self) -> Word {
        self.secret
    }

    pub fn words(&self) -> &Arc<WordList> {
        &self.words
    }

    pub fn hard_validity(&self) -> bool {
        self.hard_validity
    }

    fn observation_at(&self) -> Value {
        let history = self
            .history
            .iter()
            .map(|(g, fb)| {
                Value::record([
                    ("guess", Value::text(g.as_str())),
                    (
                        "feedback",
                        serde_json::from_value(serde_json::to_value(fb).expect("feedback serializes"))
                            .expect("feedback is a value"),
                    ),
                ])
            })
            .collect();
        Value::record([
            ("turn", Value::Int(i64::from(self.turn))),
            ("turns_remaining", Value::Int(i64::from(MAX_TURNS - self.turn))),
            ("history", Value::List(history)),
        ])
    }
}

impl Environment for Wordle {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Value {
        let mut rng = SplitMix64::new(seed);
        let answers = self.words.answers();
        self.secret = answers[rng.below(answers.len() as u64) as usize];
        self.turn = 0;
        self.history.clear();
        self.done = false;
        self.observation_at()
    }

    fn step(&mut self, action: &Value) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let guess = parse_word_action(action).map_err(|v| EnvError::MalformedAction(v.message))?;
        self.turn += 1;
        let feedback = score(&self.secret, &guess);
        self.history.push((guess, feedback));
        let reward = if feedback.is_solved() { SUCCESS_REWARD } else { 0.0 };
        let observation = self.observation_at();
        self.done = self.is_done(&observation, reward, &[]);
        Ok(Transition { observation, reward, done: self.done })
    }

    fn forfeit(&mut self) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        self.turn += 1;
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

    fn validate(&self, action: &Value, observation: &Value, _history: &[HistoryEntry]) -> Result<(), Violation> {
        let word = parse_word_action(action)?;
        if !self.words.is_allowed(&word) {
            return Err(Violation::new(
                ViolationCode::NotInWordList,
                format!("`{word}` is not in the allowed word list"),
            ));
        }
        if self.hard_validity {
            constraints_from_observation(observation)
                .check(&word)
                .map_err(|v| Violation::new(ViolationCode::ConstraintViolation, v.to_string()))?;
        }
        Ok(())
    }

    fn compliant(&self, observation: &Value, action: &Value) -> bool {
        parse_word_action(action).map(|w| constraints_from_observation(observation).is_consistent(&w)).unwrap_or(false)
    }

    fn candidates<'a>(
        &'a self,
        observation: &Value,
        _history: &[HistoryEntry],
        order: CandidateOrder,
        rng: &mut SplitMix64,
    ) -> Result<Box<dyn Iterator<Item = Value> + 'a>, Violation> {
        let state = constraints_from_observation(observation);
        let words = state
            .enumerate_candidates(&self.words, order, rng)
            .map_err(|e| Violation::new(ViolationCode::ConstraintViolation, e.to_string()))?;
        Ok(Box::new(words.map(|w| Value::text(w.as_str()))))
    }

    fn default_action(&self, observation: &Value, history: &[HistoryEntry]) -> Value {
        let mut rng = SplitMix64::new(0);
        self.candidates(observation, history, CandidateOrder::ListOrder, &mut rng)
            .ok()
            .and_then(|mut it| it.next())
            .unwrap_or_else(|| Value::text(self.words.allowed()[0].as_str()))
    }
}
