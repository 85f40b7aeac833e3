//! Precomputed evaluation sets and their on-disk format.
//!
//! One instance per line, `kind;n;input_digits;seed`, preceded by a version
//! header. Expected outputs are recomputed on load from the stored digits,
//! so the task oracle stays authoritative.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::task::{generate, instance_from_digits, TaskError, TaskInstance, TaskKind};

pub const EVAL_SET_SIZE: usize = 100;
const FORMAT_HEADER: &str = "# tapenet evalset v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalDataset {
    pub kind: TaskKind,
    pub length: usize,
    pub seed: u64,
    pub instances: Vec<TaskInstance>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Task { line: usize, source: TaskError },
    #[error("missing `{FORMAT_HEADER}` header")]
    MissingHeader,
}

/// 100 instances at exactly the given difficulty, deterministic in the seed.
pub fn build_eval_set(kind: TaskKind, length: usize, seed: u64) -> Result<EvalDataset, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..EVAL_SET_SIZE)
        .map(|_| generate(kind, length, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalDataset {
        kind,
        length,
        seed,
        instances,
    })
}

fn digits_to_string(digits: &[u8]) -> String {
    digits
        .iter()
        .map(|&d| {
            if d < 10 {
                (b'0' + d) as char
            } else {
                (b'a' + d - 10) as char
            }
        })
        .collect()
}

fn digits_from_str(s: &str) -> Option<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0'..='9' => Some(c as u8 - b'0'),
            'a'..='f' => Some(c as u8 - b'a' + 10),
            _ => None,
        })
        .collect()
}

impl EvalDataset {
    pub fn to_file_string(&self) -> String {
        let mut out = String::from(FORMAT_HEADER);
        out.push('\n');
        for inst in &self.instances {
            out.push_str(&format!(
                "{};{};{};{}\n",
                inst.kind.name(),
                inst.difficulty,
                digits_to_string(&inst.input_digits()),
                self.seed
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_file_string().as_bytes())?;
        Ok(())
    }

    pub fn from_file_string(text: &str) -> Result<EvalDataset, DatasetError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == FORMAT_HEADER => {}
            _ => return Err(DatasetError::MissingHeader),
        }
        let mut instances = Vec::new();
        let mut meta: Option<(TaskKind, usize, u64)> = None;
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let parts: Vec<&str> = line.split(';').collect();
            if parts.len() != 4 {
                return Err(DatasetError::Parse {
                    line: lineno,
                    msg: format!("expected 4 `;`-separated fields, got {}", parts.len()),
                });
            }
            let kind: TaskKind = parts[0]
                .parse()
                .map_err(|e: TaskError| DatasetError::Task {
                    line: lineno,
                    source: e,
                })?;
            let n: usize = parts[1].parse().map_err(|_| DatasetError::Parse {
                line: lineno,
                msg: format!("bad difficulty `{}`", parts[1]),
            })?;
            let digits = digits_from_str(parts[2]).ok_or_else(|| DatasetError::Parse {
                line: lineno,
                msg: format!("bad digit string `{}`", parts[2]),
            })?;
            let seed: u64 = parts[3].parse().map_err(|_| DatasetError::Parse {
                line: lineno,
                msg: format!("bad seed `{}`", parts[3]),
            })?;
            let inst = instance_from_digits(kind, n, &digits).map_err(|e| DatasetError::Task {
                line: lineno,
                source: e,
            })?;
            match meta {
                None => meta = Some((kind, n, seed)),
                Some((k, len, s)) if k == kind && len == n && s == seed => {}
                Some(_) => {
                    return Err(DatasetError::Parse {
                        line: lineno,
                        msg: "mixed kinds, lengths, or seeds in one dataset".into(),
                    })
                }
            }
            instances.push(inst);
        }
        let (kind, length, seed) = meta.ok_or(DatasetError::Parse {
            line: 1,
            msg: "dataset has no instances".into(),
        })?;
        Ok(EvalDataset {
            kind,
            length,
            seed,
            instances,
        })
    }

    pub fn load(path: &Path) -> Result<EvalDataset, DatasetError> {
        Self::from_file_string(&fs::read_to_string(path)?)
    }
}
