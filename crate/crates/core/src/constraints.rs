//! Cumulative Wordle knowledge and candidate enumeration.
//!
//! A [`ConstraintState`] folds every `(guess, feedback)` pair of a trajectory
//! into fixed positions, per-position exclusions and per-letter count
//! bounds. For feedback produced by honest two-pass scoring the state is
//! exact: a word is consistent iff re-scoring every past guess against it
//! would reproduce the recorded feedback.

use crate::env::wordle::{Mark, Word, WordList, WordleFeedback, WORD_LEN};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CandidateOrder {
    /// Word-list order; the first element is the "first valid option".
    #[default]
    #[serde(rename = "list", alias = "list_order")]
    ListOrder,
    #[serde(rename = "lex", alias = "lexicographic")]
    Lexicographic,
    #[serde(rename = "random", alias = "seeded_shuffle")]
    SeededShuffle,
}

impl std::str::FromStr for CandidateOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "list" => Ok(Self::ListOrder),
            "lex" => Ok(Self::Lexicographic),
            "random" => Ok(Self::SeededShuffle),
            _ => Err(format!("unknown candidate order `{s}` (expected list, lex or random)")),
        }
    }
}

impl fmt::Display for CandidateOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ListOrder => "list",
            Self::Lexicographic => "lex",
            Self::SeededShuffle => "random",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("contradictory feedback: {0}")]
    ContradictoryFeedback(String),
    #[error("no word in the list satisfies the accumulated constraints")]
    EmptyCandidateSet,
}

/// The first constraint a word breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintViolation {
    Fixed { pos: usize, letter: char },
    Excluded { pos: usize, letter: char },
    MinCount { letter: char, min: u8 },
    MaxCount { letter: char, max: u8 },
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed { pos, letter } => write!(f, "violates fixed: position {} must be '{letter}'", pos + 1),
            Self::Excluded { pos, letter } => {
                write!(f, "violates position_exclusions: '{letter}' cannot be at position {}", pos + 1)
            }
            Self::MinCount { letter, min } => write!(f, "violates min_count: needs at least {min} '{letter}'"),
            Self::MaxCount { letter, max } => write!(f, "violates max_count: allows at most {max} '{letter}'"),
        }
    }
}

fn letter_char(index: usize) -> char {
    char::from(b'a' + index as u8)
}

fn bit(index: usize) -> u32 {
    1 << index
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "StateRepr", try_from = "StateRepr")]
pub struct ConstraintState {
    fixed: [Option<u8>; WORD_LEN],
    /// Bitmask of letter indices barred from each position.
    excluded: [u32; WORD_LEN],
    min_count: [u8; 26],
    max_count: [Option<u8>; 26],
}

impl ConstraintState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_history<'a, I>(history: I) -> Result<Self, ConstraintError>
    where
        I: IntoIterator<Item = &'a (Word, WordleFeedback)>,
    {
        history.into_iter().try_fold(Self::new(), |state, (guess, feedback)| state.update(guess, feedback))
    }

    /// Folds one scored guess into the state. Constraints only tighten.
    pub fn update(&self, guess: &Word, feedback: &WordleFeedback) -> Result<Self, ConstraintError> {
        let mut next = *self;
        let mut marked = [0u8; 26];
        let mut capped = [false; 26];
        for pos in 0..WORD_LEN {
            let l = guess.index_at(pos);
            match feedback.marks[pos] {
                Mark::Correct => {
                    if let Some(existing) = next.fixed[pos] {
                        if usize::from(existing) != l {
                            return Err(ConstraintError::ContradictoryFeedback(format!(
                                "position {} fixed to both '{}' and '{}'",
                                pos + 1,
                                letter_char(existing.into()),
                                letter_char(l)
                            )));
                        }
                    }
                    next.fixed[pos] = Some(l as u8);
                    marked[l] += 1;
                }
                Mark::Misplaced => {
                    next.excluded[pos] |= bit(l);
                    marked[l] += 1;
                }
                Mark::Absent => capped[l] = true,
            }
        }
        for l in 0..26 {
            next.min_count[l] = next.min_count[l].max(marked[l]);
            if capped[l] {
                next.max_count[l] = Some(next.max_count[l].map_or(marked[l], |m| m.min(marked[l])));
            }
        }
        // An absent mark on a letter that occurs elsewhere still rules that
        // letter out of this position; for banned letters the count cap
        // already covers it.
        for pos in 0..WORD_LEN {
            let l = guess.index_at(pos);
            if feedback.marks[pos] == Mark::Absent && next.max_count[l] != Some(0) {
                next.excluded[pos] |= bit(l);
            }
        }
        next.check_invariants()?;
        Ok(next)
    }

    fn check_invariants(&self) -> Result<(), ConstraintError> {
        for pos in 0..WORD_LEN {
            if let Some(l) = self.fixed[pos] {
                if self.excluded[pos] & bit(l.into()) != 0 {
                    return Err(ConstraintError::ContradictoryFeedback(format!(
                        "'{}' both fixed and excluded at position {}",
                        letter_char(l.into()),
                        pos + 1
                    )));
                }
            }
        }
        for l in 0..26 {
            if let Some(max) = self.max_count[l] {
                if self.min_count[l] > max {
                    return Err(ConstraintError::ContradictoryFeedback(format!(
                        "'{}' needs at least {} but at most {}",
                        letter_char(l),
                        self.min_count[l],
                        max
                    )));
                }
            }
        }
        let total: usize = self.min_count.iter().map(|&c| usize::from(c)).sum();
        if total > WORD_LEN {
            return Err(ConstraintError::ContradictoryFeedback(format!("letter minimums sum to {total}")));
        }
        Ok(())
    }

    pub fn check(&self, word: &Word) -> Result<(), ConstraintViolation> {
        let mut counts = [0u8; 26];
        for pos in 0..WORD_LEN {
            let l = word.index_at(pos);
            counts[l] += 1;
            if let Some(f) = self.fixed[pos] {
                if usize::from(f) != l {
                    return Err(ConstraintViolation::Fixed { pos, letter: letter_char(f.into()) });
                }
            }
            if self.excluded[pos] & bit(l) != 0 {
                return Err(ConstraintViolation::Excluded { pos, letter: letter_char(l) });
            }
        }
        for (l, &count) in counts.iter().enumerate() {
            if let Some(max) = self.max_count[l] {
                if count > max {
                    return Err(ConstraintViolation::MaxCount { letter: letter_char(l), max });
                }
            }
        }
        for (l, &count) in counts.iter().enumerate() {
            if count < self.min_count[l] {
                return Err(ConstraintViolation::MinCount { letter: letter_char(l), min: self.min_count[l] });
            }
        }
        Ok(())
    }

    pub fn is_consistent(&self, word: &Word) -> bool {
        self.check(word).is_ok()
    }

    /// Consistent words of `words` in the requested order, streamed.
    pub fn enumerate_candidates<'a>(
        &self,
        words: &'a WordList,
        order: CandidateOrder,
        rng: &mut SplitMix64,
    ) -> Result<Box<dyn Iterator<Item = &'a Word> + 'a>, ConstraintError> {
        let state = *self;
        let mut iter: Box<dyn Iterator<Item = &'a Word> + 'a> = match order {
            CandidateOrder::ListOrder => Box::new(words.allowed().iter().filter(move |w| state.is_consistent(w))),
            CandidateOrder::Lexicographic => Box::new(words.lexicographic().filter(move |w| state.is_consistent(w))),
            CandidateOrder::SeededShuffle => {
                let mut all: Vec<&'a Word> = words.allowed().iter().filter(|w| state.is_consistent(w)).collect();
                rng.shuffle(&mut all);
                Box::new(all.into_iter())
            }
        };
        let first = iter.next().ok_or(ConstraintError::EmptyCandidateSet)?;
        Ok(Box::new(std::iter::once(first).chain(iter)))
    }

    /// Letter fixed at 1-based `position`.
    pub fn fixed(&self, position: usize) -> Option<char> {
        self.fixed[position - 1].map(|l| letter_char(l.into()))
    }

    /// Letters excluded from 1-based `position`, alphabetically.
    pub fn exclusions(&self, position: usize) -> String {
        (0..26).filter(|&l| self.excluded[position - 1] & bit(l) != 0).map(letter_char).collect()
    }

    pub fn min_count(&self, letter: char) -> u8 {
        self.min_count[usize::from(letter as u8 - b'a')]
    }

    pub fn max_count(&self, letter: char) -> Option<u8> {
        self.max_count[usize::from(letter as u8 - b'a')]
    }
}

/// Readable serialized form: 1-based positions, letters as chars.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRepr {
    fixed: BTreeMap<usize, char>,
    position_exclusions: BTreeMap<usize, String>,
    min_count: BTreeMap<char, u8>,
    max_count: BTreeMap<char, u8>,
}

impl From<ConstraintState> for StateRepr {
    fn from(s: ConstraintState) -> Self {
        let mut repr = StateRepr {
            fixed: BTreeMap::new(),
            position_exclusions: BTreeMap::new(),
            min_count: BTreeMap::new(),
            max_count: BTreeMap::new(),
        };
        for pos in 1..=WORD_LEN {
            if let Some(c) = s.fixed(pos) {
                repr.fixed.insert(pos, c);
            }
            let ex = s.exclusions(pos);
            if !ex.is_empty() {
                repr.position_exclusions.insert(pos, ex);
            }
        }
        for l in 0..26 {
            if s.min_count[l] > 0 {
                repr.min_count.insert(letter_char(l), s.min_count[l]);
            }
            if let Some(m) = s.max_count[l] {
                repr.max_count.insert(letter_char(l), m);
            }
        }
        repr
    }
}

impl TryFrom<StateRepr> for ConstraintState {
    type Error = String;

    fn try_from(r: StateRepr) -> Result<Self, Self::Error> {
        let letter = |c: char| -> Result<usize, String> {
            if c.is_ascii_lowercase() {
                Ok(usize::from(c as u8 - b'a'))
            } else {
                Err(format!("bad letter '{c}'"))
            }
        };
        let position = |p: usize| -> Result<usize, String> {
            if (1..=WORD_LEN).contains(&p) {
                Ok(p - 1)
            } else {
                Err(format!("bad position {p}"))
            }
        };
        let mut s = ConstraintState::new();
        for (p, c) in r.fixed {
            s.fixed[position(p)?] = Some(letter(c)? as u8);
        }
        for (p, letters) in r.position_exclusions {
            let pos = position(p)?;
            for c in letters.chars() {
                s.excluded[pos] |= bit(letter(c)?);
            }
        }
        for (c, n) in r.min_count {
            s.min_count[letter(c)?] = n;
        }
        for (c, n) in r.max_count {
            s.max_count[letter(c)?] = Some(n);
        }
        s.check_invariants().map_err(|e| e.to_string())?;
        Ok(s)
    }
}
