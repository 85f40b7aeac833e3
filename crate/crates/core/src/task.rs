//! Task generators, expected-output oracles, and the success predicate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::token::{tape_to_string, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Copy,
    Reverse,
    Increment,
    FilterEven,
    MultiDigitAdd,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Copy,
        TaskKind::Reverse,
        TaskKind::Increment,
        TaskKind::FilterEven,
        TaskKind::MultiDigitAdd,
    ];

    pub fn base(self) -> u8 {
        match self {
            TaskKind::FilterEven => 16,
            _ => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::Increment => "increment",
            TaskKind::FilterEven => "filter-even",
            TaskKind::MultiDigitAdd => "add",
        }
    }

    /// Tape length for difficulty `n`: `2n+1` for the single-array layout,
    /// `3n+4` for addition.
    pub fn tape_len(self, n: usize) -> usize {
        match self {
            TaskKind::MultiDigitAdd => 3 * n + 4,
            _ => 2 * n + 1,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "increment" => Ok(TaskKind::Increment),
            "filter-even" => Ok(TaskKind::FilterEven),
            "add" => Ok(TaskKind::MultiDigitAdd),
            _ => Err(TaskError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("unknown task kind `{0}`")]
    UnknownKind(String),
    #[error("difficulty must be >= 1")]
    ZeroDifficulty,
    #[error("expected {expected} input digits for {kind} at difficulty {n}, got {got}")]
    BadDigitCount {
        kind: TaskKind,
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error("digit {digit} out of range for base {base}")]
    DigitOutOfBase { digit: u8, base: u8 },
}

/// One generated problem: the initial tape plus the immutable metadata and
/// the expected contents of the target cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub initial_tape: Vec<Token>,
    /// Task-declared landmark positions (the machine adds start/end of tape).
    pub landmarks: Vec<usize>,
    pub target_positions: Vec<usize>,
    /// Expected token per target position, aligned with `target_positions`.
    pub expected: Vec<Token>,
    pub difficulty: usize,
}

impl TaskInstance {
    pub fn len(&self) -> usize {
        self.initial_tape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial_tape.is_empty()
    }

    /// The raw input digits laid back out of the initial tape (both operands
    /// concatenated for addition).
    pub fn input_digits(&self) -> Vec<u8> {
        let n = self.difficulty;
        match self.kind {
            TaskKind::MultiDigitAdd => {
                let mut digits = Vec::with_capacity(2 * n);
                digits.extend(
                    self.initial_tape[1..=n]
                        .iter()
                        .map(|t| t.digit_value().unwrap()),
                );
                digits.extend(
                    self.initial_tape[n + 2..=2 * n + 1]
                        .iter()
                        .map(|t| t.digit_value().unwrap()),
                );
                digits
            }
            _ => self.initial_tape[..n]
                .iter()
                .map(|t| t.digit_value().unwrap())
                .collect(),
        }
    }

    pub fn tape_string(&self) -> String {
        tape_to_string(&self.initial_tape)
    }
}

/// Sample a fresh instance with i.i.d. uniform input digits.
pub fn generate<R: Rng + ?Sized>(
    kind: TaskKind,
    difficulty: usize,
    rng: &mut R,
) -> Result<TaskInstance, TaskError> {
    if difficulty == 0 {
        return Err(TaskError::ZeroDifficulty);
    }
    let base = kind.base();
    let count = match kind {
        TaskKind::MultiDigitAdd => 2 * difficulty,
        _ => difficulty,
    };
    let digits: Vec<u8> = (0..count).map(|_| rng.gen_range(0..base)).collect();
    instance_from_digits(kind, difficulty, &digits)
}

/// Build the instance deterministically from explicit input digits. This is
/// the loader behind the eval-set file format; the expected output is always
/// recomputed, never stored.
pub fn instance_from_digits(
    kind: TaskKind,
    difficulty: usize,
    digits: &[u8],
) -> Result<TaskInstance, TaskError> {
    if difficulty == 0 {
        return Err(TaskError::ZeroDifficulty);
    }
    let n = difficulty;
    let base = kind.base();
    let expected_count = match kind {
        TaskKind::MultiDigitAdd => 2 * n,
        _ => n,
    };
    if digits.len() != expected_count {
        return Err(TaskError::BadDigitCount {
            kind,
            n,
            expected: expected_count,
            got: digits.len(),
        });
    }
    if let Some(&digit) = digits.iter().find(|&&d| d >= base) {
        return Err(TaskError::DigitOutOfBase { digit, base });
    }

    let expected = expected_output(kind, digits);
    let instance = match kind {
        TaskKind::Copy | TaskKind::Reverse | TaskKind::Increment | TaskKind::FilterEven => {
            let mut tape: Vec<Token> = digits.iter().map(|&d| Token::Digit(d)).collect();
            tape.push(Token::Sep);
            tape.extend(std::iter::repeat(Token::Empty).take(n));
            TaskInstance {
                kind,
                initial_tape: tape,
                landmarks: vec![0, n],
                target_positions: (n + 1..=2 * n).collect(),
                expected,
                difficulty: n,
            }
        }
        TaskKind::MultiDigitAdd => {
            let (a, b) = digits.split_at(n);
            let mut tape = Vec::with_capacity(3 * n + 4);
            tape.push(Token::Star);
            tape.extend(a.iter().map(|&d| Token::Digit(d)));
            tape.push(Token::Plus);
            tape.extend(b.iter().map(|&d| Token::Digit(d)));
            tape.push(Token::Sep);
            tape.extend(std::iter::repeat(Token::Empty).take(n + 1));
            TaskInstance {
                kind,
                initial_tape: tape,
                landmarks: vec![0, n + 1, 2 * n + 2],
                target_positions: (2 * n + 3..=3 * n + 3).collect(),
                expected,
                difficulty: n,
            }
        }
    };
    debug_assert_eq!(instance.len(), kind.tape_len(n));
    debug_assert_eq!(instance.expected.len(), instance.target_positions.len());
    Ok(instance)
}

/// The ground-truth output for the given input digits.
///
/// For addition the digits are both operands concatenated (most significant
/// first each); the result is left-zero-padded to `n+1` digits.
pub fn expected_output(kind: TaskKind, digits: &[u8]) -> Vec<Token> {
    match kind {
        TaskKind::Copy => digits.iter().map(|&d| Token::Digit(d)).collect(),
        TaskKind::Reverse => digits.iter().rev().map(|&d| Token::Digit(d)).collect(),
        TaskKind::Increment => digits.iter().map(|&d| Token::Digit((d + 1) % 10)).collect(),
        TaskKind::FilterEven => {
            let mut out: Vec<Token> = digits
                .iter()
                .filter(|&&d| d % 2 == 0)
                .map(|&d| Token::Digit(d))
                .collect();
            out.resize(digits.len(), Token::Empty);
            out
        }
        TaskKind::MultiDigitAdd => {
            let n = digits.len() / 2;
            debug_assert_eq!(digits.len(), 2 * n);
            let (a, b) = digits.split_at(n);
            // Ripple-carry from the least significant column.
            let mut out = vec![0u8; n + 1];
            let mut carry = 0u8;
            for i in 0..n {
                let s = a[n - 1 - i] + b[n - 1 - i] + carry;
                out[n - i] = s % 10;
                carry = s / 10;
            }
            out[0] = carry;
            out.into_iter().map(Token::Digit).collect()
        }
    }
}

/// True iff the tape matches the expected output on every target cell. Only
/// target cells are scored; the rest of the tape may hold anything.
pub fn success(tape: &[Token], instance: &TaskInstance) -> bool {
    instance
        .target_positions
        .iter()
        .zip(&instance.expected)
        .all(|(&pos, &want)| tape.get(pos) == Some(&want))
}
