//! The discrete tape machine: state, the single-step update rule, and the
//! halting check.
//!
//! All operations are pure functions over immutable inputs; each step
//! produces a fresh state.

use std::fmt::Write as _;

use crate::modules::{eval_module, ModulePool};
use crate::task::{success, TaskInstance};
use crate::token::{tape_to_string, Token};

/// Number of read and write heads. Experiments fix R=2, W=1 but nothing
/// below depends on that.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub reads: usize,
    pub writes: usize,
}

impl HeadConfig {
    pub const DEFAULT: HeadConfig = HeadConfig {
        reads: 2,
        writes: 1,
    };

    pub fn total(self) -> usize {
        self.reads + self.writes
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// One controller decision: a module plus tape positions for every head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub module: usize,
    pub reads: Vec<usize>,
    pub writes: Vec<usize>,
}

/// The previous step's action, kept on the state as controller context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrevAction {
    pub module: usize,
    pub reads: Vec<usize>,
    pub writes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub tape: Vec<Token>,
    /// Landmark positions in fixed role order: start-of-tape, the task's own
    /// landmarks, end-of-tape. Roles may share a position; the list never
    /// changes within an episode.
    pub landmarks: Vec<usize>,
    /// Absent at t=0, before any action has been taken.
    pub prev: Option<PrevAction>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MachineError {
    #[error("empty tape")]
    EmptyTape,
    #[error("landmark position {pos} out of range for tape length {len}")]
    LandmarkOutOfRange { pos: usize, len: usize },
    #[error("target position {pos} out of range for tape length {len}")]
    TargetOutOfRange { pos: usize, len: usize },
    #[error("read head {head} at position {pos} out of range for tape length {len}")]
    ReadOutOfRange { head: usize, pos: usize, len: usize },
    #[error("write head {head} at position {pos} out of range for tape length {len}")]
    WriteOutOfRange { head: usize, pos: usize, len: usize },
    #[error("module index {index} out of range for pool of {len}")]
    ModuleOutOfRange { index: usize, len: usize },
    #[error("action has {got} read positions, machine has {want} read heads")]
    ReadArity { got: usize, want: usize },
    #[error("action has {got} write positions, machine has {want} write heads")]
    WriteArity { got: usize, want: usize },
}

impl MachineState {
    pub fn len(&self) -> usize {
        self.tape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tape.is_empty()
    }
}

/// Load an instance onto a fresh machine. Start/end-of-tape landmarks are
/// metadata-only: they are prepended/appended to the instance's landmark
/// list without occupying cells.
pub fn init_machine(
    instance: &TaskInstance,
    _heads: HeadConfig,
) -> Result<MachineState, MachineError> {
    let len = instance.initial_tape.len();
    if len == 0 {
        return Err(MachineError::EmptyTape);
    }
    for &pos in &instance.landmarks {
        if pos >= len {
            return Err(MachineError::LandmarkOutOfRange { pos, len });
        }
    }
    for &pos in &instance.target_positions {
        if pos >= len {
            return Err(MachineError::TargetOutOfRange { pos, len });
        }
    }
    let mut landmarks = Vec::with_capacity(instance.landmarks.len() + 2);
    landmarks.push(0);
    landmarks.extend_from_slice(&instance.landmarks);
    landmarks.push(len - 1);
    Ok(MachineState {
        tape: instance.initial_tape.clone(),
        landmarks,
        prev: None,
        step: 0,
    })
}

/// One machine step: read under the read heads, run the module, write its
/// outputs under the write heads (later heads win on collision), leave every
/// other cell untouched.
pub fn apply_action(
    state: &MachineState,
    action: &Action,
    pool: &ModulePool,
    heads: HeadConfig,
) -> Result<MachineState, MachineError> {
    let len = state.tape.len();
    if action.reads.len() != heads.reads {
        return Err(MachineError::ReadArity {
            got: action.reads.len(),
            want: heads.reads,
        });
    }
    if action.writes.len() != heads.writes {
        return Err(MachineError::WriteArity {
            got: action.writes.len(),
            want: heads.writes,
        });
    }
    for (head, &pos) in action.reads.iter().enumerate() {
        if pos >= len {
            return Err(MachineError::ReadOutOfRange { head, pos, len });
        }
    }
    for (head, &pos) in action.writes.iter().enumerate() {
        if pos >= len {
            return Err(MachineError::WriteOutOfRange { head, pos, len });
        }
    }
    let spec = pool
        .get(action.module)
        .ok_or(MachineError::ModuleOutOfRange {
            index: action.module,
            len: pool.len(),
        })?;

    // Modules are binary-in/unary-out; with a single read head the second
    // operand repeats the first.
    let x = state.tape[action.reads[0]];
    let y = if action.reads.len() > 1 {
        state.tape[action.reads[1]]
    } else {
        x
    };
    let out = eval_module(spec, x, y);

    let mut tape = state.tape.clone();
    for &pos in &action.writes {
        tape[pos] = out;
    }
    Ok(MachineState {
        tape,
        landmarks: state.landmarks.clone(),
        prev: Some(PrevAction {
            module: action.module,
            reads: action.reads.clone(),
            writes: action.writes.clone(),
        }),
        step: state.step + 1,
    })
}

/// The halting oracle: true the moment every target cell holds its expected
/// token. Checked at t=0 as well, so pre-solved instances end immediately.
pub fn check_halt(state: &MachineState, instance: &TaskInstance) -> bool {
    success(&state.tape, instance)
}

/// Render one state for episode traces: a `task=<kind> L=<n> t=<step>`
/// header, the tape line, a `^` line under landmark positions, and (after
/// the first action) an `r`/`w` line under the previous head positions
/// (`x` where a read and a write coincide).
pub fn render_trace(state: &MachineState, task: &str) -> String {
    let len = state.tape.len();
    let mut out = String::new();
    let _ = writeln!(out, "task={task} L={len} t={}", state.step);
    out.push_str(&tape_to_string(&state.tape));
    out.push('\n');

    let mut lm_line = vec![b' '; len];
    for &pos in &state.landmarks {
        lm_line[pos] = b'^';
    }
    out.push_str(String::from_utf8(lm_line).unwrap().trim_end());
    out.push('\n');

    if let Some(prev) = &state.prev {
        let mut head_line = vec![b' '; len];
        for &pos in &prev.reads {
            head_line[pos] = b'r';
        }
        for &pos in &prev.writes {
            head_line[pos] = if head_line[pos] == b'r' { b'x' } else { b'w' };
        }
        out.push_str(String::from_utf8(head_line).unwrap().trim_end());
        out.push('\n');
    }
    out
}
