//! Tape symbols and per-task vocabularies.

use std::fmt;

use crate::task::TaskKind;

/// A single tape cell symbol.
///
/// Variant order defines the total order used by the `Max` module:
/// `Empty < Sep < Plus < Star < Digit(0) < ... < Digit(B-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Empty,
    Sep,
    Plus,
    Star,
    Digit(u8),
}

impl Token {
    pub fn is_digit(self) -> bool {
        matches!(self, Token::Digit(_))
    }

    pub fn digit_value(self) -> Option<u8> {
        match self {
            Token::Digit(d) => Some(d),
            _ => None,
        }
    }

    /// Character rendering: digits `0-9a-f`, `.` empty, `$`/`+`/`*` landmarks.
    pub fn to_char(self) -> char {
        match self {
            Token::Empty => '.',
            Token::Sep => '$',
            Token::Plus => '+',
            Token::Star => '*',
            Token::Digit(d) if d < 10 => (b'0' + d) as char,
            Token::Digit(d) => (b'a' + d - 10) as char,
        }
    }

    pub fn from_char(c: char) -> Option<Token> {
        match c {
            '.' => Some(Token::Empty),
            '$' => Some(Token::Sep),
            '+' => Some(Token::Plus),
            '*' => Some(Token::Star),
            '0'..='9' => Some(Token::Digit(c as u8 - b'0')),
            'a'..='f' => Some(Token::Digit(c as u8 - b'a' + 10)),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// Render a tape as one line of characters.
pub fn tape_to_string(tape: &[Token]) -> String {
    tape.iter().map(|t| t.to_char()).collect()
}

/// Parse a tape line; `None` on any unknown character.
pub fn tape_from_str(s: &str) -> Option<Vec<Token>> {
    s.chars().map(Token::from_char).collect()
}

/// The fixed, ordered symbol set of a task. One-hot indices for the
/// context encoding come from the position in this list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Token>,
    base: u8,
}

impl Vocab {
    /// Digits `0..B`, then `Empty`, `Sep`, and for the addition layout
    /// `Plus` and `Star`.
    pub fn for_task(kind: TaskKind) -> Vocab {
        let base = kind.base();
        let mut tokens: Vec<Token> = (0..base).map(Token::Digit).collect();
        tokens.push(Token::Empty);
        tokens.push(Token::Sep);
        if kind == TaskKind::MultiDigitAdd {
            tokens.push(Token::Plus);
            tokens.push(Token::Star);
        }
        Vocab { tokens, base }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn base(&self) -> u8 {
        self.base
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn index_of(&self, token: Token) -> Option<usize> {
        self.tokens.iter().position(|&t| t == token)
    }
}
