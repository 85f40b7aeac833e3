//! Hand-written controllers that solve every task through the machine's
//! own action interface. They validate the tape semantics, the module
//! library, and the task layouts end to end, and double as policy
//! stand-ins in evaluation tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::machine::{
    apply_action, check_halt, init_machine, render_trace, Action, HeadConfig, MachineError,
    MachineState,
};
use crate::modules::{pool_for_task, ModuleKind, ModulePool};
use crate::task::{generate, TaskInstance, TaskKind};
use crate::token::Token;

const VERIFY_SEED: u64 = 0x0e_ac1e;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("state not recognized for task {kind}: {reason}")]
    UnrecognizedState { kind: TaskKind, reason: String },
    #[error("module {0} missing from pool")]
    MissingModule(ModuleKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AddPhase {
    /// Digit columns, least significant first.
    Column(usize),
    /// Write the top output cell; `scratch_written` tracks the two-step
    /// bootstrap used when the final carry is 1.
    Top { scratch_written: bool },
}

/// Deterministic solver for one episode. Cursors are recovered from the
/// previous-action metadata; the addition carry bit and phase are the only
/// oracle-internal state.
#[derive(Debug, Clone)]
pub struct Oracle {
    kind: TaskKind,
    carry: bool,
    add_phase: AddPhase,
}

impl Oracle {
    pub fn new(kind: TaskKind) -> Oracle {
        Oracle {
            kind,
            carry: false,
            add_phase: AddPhase::Column(0),
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    fn bad(&self, reason: impl Into<String>) -> OracleError {
        OracleError::UnrecognizedState {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    /// Next action for a not-yet-halted state produced by this task's
    /// generator and this oracle's own actions.
    pub fn action(&mut self, state: &MachineState) -> Result<Action, OracleError> {
        match self.kind {
            TaskKind::Copy | TaskKind::Reverse | TaskKind::Increment => self.map_action(state),
            TaskKind::FilterEven => self.filter_action(state),
            TaskKind::MultiDigitAdd => self.add_action(state),
        }
    }

    /// Copy/Reverse/Increment: one module application per output cell,
    /// left to right over the targets.
    fn map_action(&self, state: &MachineState) -> Result<Action, OracleError> {
        let (sep, len) = self.single_array_layout(state)?;
        let n = sep;
        let target_start = sep + 1;
        let i = match &state.prev {
            None => 0,
            Some(prev) => {
                let last = prev.writes[0];
                if last < target_start || last >= len {
                    return Err(self.bad(format!("previous write {last} outside targets")));
                }
                last - target_start + 1
            }
        };
        if i >= n {
            return Err(self.bad("all targets already written"));
        }
        let (module, read) = match self.kind {
            TaskKind::Copy => (ModuleKind::Identity, i),
            TaskKind::Reverse => (ModuleKind::Identity, n - 1 - i),
            TaskKind::Increment => (ModuleKind::Increment, i),
            _ => unreachable!(),
        };
        let module = pool_for_task(self.kind)
            .index_of(module)
            .ok_or(OracleError::MissingModule(module))?;
        Ok(Action {
            module,
            reads: vec![read, read],
            writes: vec![target_start + i],
        })
    }

    /// Filter: scan the input past the previously read cell, copy the next
    /// even digit to the next free target cell. Skipped odd digits consume
    /// no machine step, so the oracle is only ever asked while an even
    /// digit remains.
    fn filter_action(&self, state: &MachineState) -> Result<Action, OracleError> {
        let (sep, _len) = self.single_array_layout(state)?;
        let n = sep;
        let target_start = sep + 1;
        let (scan_from, write_to) = match &state.prev {
            None => (0, target_start),
            Some(prev) => {
                if prev.reads[0] >= n || prev.writes[0] < target_start {
                    return Err(self.bad("previous action not a filter copy"));
                }
                (prev.reads[0] + 1, prev.writes[0] + 1)
            }
        };
        let next_even =
            (scan_from..n).find(|&p| matches!(state.tape[p], Token::Digit(d) if d % 2 == 0));
        match next_even {
            Some(p) => {
                let module = pool_for_task(self.kind)
                    .index_of(ModuleKind::Identity)
                    .ok_or(OracleError::MissingModule(ModuleKind::Identity))?;
                Ok(Action {
                    module,
                    reads: vec![p, p],
                    writes: vec![write_to],
                })
            }
            None => Err(self.bad("no even digit left but episode not halted")),
        }
    }

    /// Addition: ripple through the digit columns choosing Sum/SumInc from
    /// the tracked carry, then write the top cell. A zero top comes from
    /// `Sum` on the separator token; a one needs a bootstrap: write a zero
    /// into a spent input cell, then `SumInc` that cell against itself.
    fn add_action(&mut self, state: &MachineState) -> Result<Action, OracleError> {
        if state.landmarks.len() != 5 {
            return Err(self.bad(format!(
                "expected 5 landmarks, got {}",
                state.landmarks.len()
            )));
        }
        let plus = state.landmarks[2];
        let sep = state.landmarks[3];
        let len = state.tape.len();
        if plus < 2 || sep <= plus || sep + 1 >= len {
            return Err(self.bad("landmark positions do not form an addition layout"));
        }
        let n = plus - 1;
        let top = sep + 1;
        let pool = pool_for_task(self.kind);
        let sum = pool
            .index_of(ModuleKind::Sum)
            .ok_or(OracleError::MissingModule(ModuleKind::Sum))?;
        let sum_inc = pool
            .index_of(ModuleKind::SumInc)
            .ok_or(OracleError::MissingModule(ModuleKind::SumInc))?;

        match self.add_phase {
            AddPhase::Column(i) if i < n => {
                let a_pos = n - i;
                let b_pos = sep - 1 - i;
                let (a, b) = match (state.tape[a_pos], state.tape[b_pos]) {
                    (Token::Digit(a), Token::Digit(b)) => (a, b),
                    _ => return Err(self.bad(format!("non-digit operands at column {i}"))),
                };
                let module = if self.carry { sum_inc } else { sum };
                let total = a + b + u8::from(self.carry);
                self.carry = total >= 10;
                self.add_phase = if i + 1 < n {
                    AddPhase::Column(i + 1)
                } else {
                    AddPhase::Top {
                        scratch_written: false,
                    }
                };
                Ok(Action {
                    module,
                    reads: vec![a_pos, b_pos],
                    writes: vec![len - 1 - i],
                })
            }
            AddPhase::Column(_) => Err(self.bad("column phase out of range")),
            AddPhase::Top { scratch_written } => {
                if !self.carry {
                    // Sum of two non-digits is the digit 0.
                    Ok(Action {
                        module: sum,
                        reads: vec![sep, sep],
                        writes: vec![top],
                    })
                } else if !scratch_written {
                    self.add_phase = AddPhase::Top {
                        scratch_written: true,
                    };
                    Ok(Action {
                        module: sum,
                        reads: vec![sep, sep],
                        writes: vec![1],
                    })
                } else {
                    Ok(Action {
                        module: sum_inc,
                        reads: vec![1, 1],
                        writes: vec![top],
                    })
                }
            }
        }
    }

    fn single_array_layout(&self, state: &MachineState) -> Result<(usize, usize), OracleError> {
        if state.landmarks.len() != 4 {
            return Err(self.bad(format!(
                "expected 4 landmarks, got {}",
                state.landmarks.len()
            )));
        }
        let sep = state.landmarks[2];
        let len = state.tape.len();
        if sep == 0 || sep + 1 >= len {
            return Err(self.bad("separator position does not split the tape"));
        }
        Ok((sep, len))
    }
}

/// Outcome of driving one instance with the oracle.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub success: bool,
    pub steps: usize,
    pub final_state: MachineState,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum OracleRunError {
    #[error("oracle error after {steps} steps: {source}\n{trace}")]
    Oracle {
        steps: usize,
        source: OracleError,
        trace: String,
    },
    #[error("machine rejected oracle action at step {steps}: {source}\n{trace}")]
    Machine {
        steps: usize,
        source: MachineError,
        trace: String,
    },
    #[error("step budget {budget} exhausted without halting\n{trace}")]
    Budget { budget: usize, trace: String },
}

/// Drive one instance to completion with the oracle, against the given
/// module pool, stopping after `3 * L` steps.
pub fn drive_oracle(
    instance: &TaskInstance,
    pool: &ModulePool,
) -> Result<OracleRun, OracleRunError> {
    let heads = HeadConfig::DEFAULT;
    let mut oracle = Oracle::new(instance.kind);
    let mut state = init_machine(instance, heads).map_err(|e| OracleRunError::Machine {
        steps: 0,
        source: e,
        trace: String::new(),
    })?;
    let budget = 3 * state.len();
    let task = instance.kind.name();
    loop {
        if check_halt(&state, instance) {
            return Ok(OracleRun {
                success: true,
                steps: state.step,
                final_state: state,
            });
        }
        if state.step >= budget {
            return Err(OracleRunError::Budget {
                budget,
                trace: render_trace(&state, task),
            });
        }
        let action = oracle.action(&state).map_err(|e| OracleRunError::Oracle {
            steps: state.step,
            source: e,
            trace: render_trace(&state, task),
        })?;
        state =
            apply_action(&state, &action, pool, heads).map_err(|e| OracleRunError::Machine {
                steps: state.step,
                source: e,
                trace: render_trace(&state, task),
            })?;
    }
}

#[derive(Debug, Clone)]
pub struct LengthResult {
    pub n: usize,
    pub tape_len: usize,
    pub steps: usize,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub kind: TaskKind,
    pub per_length: Vec<LengthResult>,
    pub max_steps: usize,
    pub failure: Option<String>,
}

impl VerifyReport {
    pub fn all_ok(&self) -> bool {
        self.failure.is_none() && self.per_length.iter().all(|r| r.ok)
    }

    pub fn passed(&self) -> usize {
        self.per_length.iter().filter(|r| r.ok).count()
    }

    pub fn summary_line(&self) -> String {
        let total = self.per_length.len();
        format!(
            "{}: {}/{} lengths OK",
            self.kind.name(),
            self.passed(),
            total
        )
    }
}

/// Generate an instance for every length in `[1, max_len]`, drive each with
/// the oracle, and require success within `3 * L` steps. Aborts on the first
/// failure with the offending trace rendered into the report.
pub fn verify_environment(kind: TaskKind, max_len: usize) -> VerifyReport {
    let pool = pool_for_task(kind);
    let mut report = VerifyReport {
        kind,
        per_length: Vec::new(),
        max_steps: 0,
        failure: None,
    };
    for n in 1..=max_len {
        let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED ^ (n as u64) << 8 ^ kind.base() as u64);
        let instance = generate(kind, n, &mut rng).expect("n >= 1");
        match drive_oracle(&instance, &pool) {
            Ok(run) => {
                report.max_steps = report.max_steps.max(run.steps);
                report.per_length.push(LengthResult {
                    n,
                    tape_len: instance.len(),
                    steps: run.steps,
                    ok: true,
                });
            }
            Err(err) => {
                report.per_length.push(LengthResult {
                    n,
                    tape_len: instance.len(),
                    steps: 0,
                    ok: false,
                });
                report.failure = Some(format!("{kind} n={n}: {err}"));
                return report;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modules::ModuleSpec;
    use crate::task::instance_from_digits;
    use crate::token::tape_to_string;

    #[test]
    fn copy_solves_in_exactly_n_steps() {
        let inst = instance_from_digits(TaskKind::Copy, 3, &[1, 2, 3]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::Copy)).unwrap();
        assert!(run.success);
        assert_eq!(run.steps, 3);
        assert_eq!(tape_to_string(&run.final_state.tape), "123$123");
    }

    #[test]
    fn reverse_and_increment_solve() {
        let inst = instance_from_digits(TaskKind::Reverse, 4, &[1, 2, 3, 4]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::Reverse)).unwrap();
        assert_eq!(tape_to_string(&run.final_state.tape), "1234$4321");

        let inst = instance_from_digits(TaskKind::Increment, 2, &[1, 9]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::Increment)).unwrap();
        assert_eq!(tape_to_string(&run.final_state.tape), "19$20");
    }

    #[test]
    fn filter_skips_consume_no_steps() {
        let inst = instance_from_digits(TaskKind::FilterEven, 5, &[3, 10, 2, 15, 4]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::FilterEven)).unwrap();
        assert!(run.success);
        assert_eq!(run.steps, 3); // one per even digit
        assert_eq!(tape_to_string(&run.final_state.tape), "3a2f4$a24..");
    }

    #[test]
    fn filter_with_no_evens_halts_at_t0() {
        let inst = instance_from_digits(TaskKind::FilterEven, 3, &[1, 3, 5]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::FilterEven)).unwrap();
        assert!(run.success);
        assert_eq!(run.steps, 0);
    }

    #[test]
    fn add_with_full_carry_chain() {
        // 99 + 01 = 100: Sum, SumInc, then the two-step carry bootstrap.
        let inst = instance_from_digits(TaskKind::MultiDigitAdd, 2, &[9, 9, 0, 1]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::MultiDigitAdd)).unwrap();
        assert!(run.success);
        assert_eq!(run.steps, 4);
        assert_eq!(&tape_to_string(&run.final_state.tape)[6..], "$100");
    }

    #[test]
    fn add_without_final_carry_uses_sum_on_separator() {
        let inst = instance_from_digits(TaskKind::MultiDigitAdd, 2, &[1, 2, 3, 4]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::MultiDigitAdd)).unwrap();
        assert_eq!(run.steps, 3); // two columns + zero top
        assert_eq!(tape_to_string(&run.final_state.tape), "*12+34$046");
    }

    #[test]
    fn add_worst_case_digits() {
        // No digit pair in 99+99 sums to 0 mod 10, which is exactly the case
        // the bootstrap covers.
        let inst = instance_from_digits(TaskKind::MultiDigitAdd, 2, &[9, 9, 9, 9]).unwrap();
        let run = drive_oracle(&inst, &pool_for_task(TaskKind::MultiDigitAdd)).unwrap();
        assert!(run.success);
        assert_eq!(&tape_to_string(&run.final_state.tape)[6..], "$198");
    }

    #[test]
    fn verify_all_tasks_to_length_40() {
        for kind in TaskKind::ALL {
            let report = verify_environment(kind, 40);
            assert!(report.all_ok(), "{:?}", report.failure);
            assert_eq!(report.passed(), 40);
            for r in &report.per_length {
                assert!(
                    r.steps <= 3 * r.tape_len,
                    "{kind} n={} took {} steps",
                    r.n,
                    r.steps
                );
            }
        }
    }

    #[test]
    fn copy_step_counts_grow_linearly() {
        let report = verify_environment(TaskKind::Copy, 25);
        for r in &report.per_length {
            assert_eq!(r.steps, r.n);
        }
    }

    #[test]
    fn faulty_sum_module_is_caught_on_add() {
        // A pool whose Sum/SumInc do not wrap at base 10 breaks the oracle's
        // carry arithmetic; the harness must fail with a rendered trace.
        let faulty = ModulePool::new(vec![
            ModuleSpec {
                kind: ModuleKind::Sum,
                base: 255,
            },
            ModuleSpec {
                kind: ModuleKind::SumInc,
                base: 255,
            },
        ]);
        let inst = instance_from_digits(TaskKind::MultiDigitAdd, 2, &[9, 9, 0, 1]).unwrap();
        let err = drive_oracle(&inst, &faulty).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("task=add"), "trace missing from: {msg}");
    }

    #[test]
    fn oracle_rejects_foreign_states() {
        let inst = instance_from_digits(TaskKind::Copy, 2, &[1, 2]).unwrap();
        let state = init_machine(&inst, HeadConfig::DEFAULT).unwrap();
        let mut oracle = Oracle::new(TaskKind::MultiDigitAdd);
        assert!(matches!(
            oracle.action(&state),
            Err(OracleError::UnrecognizedState { .. })
        ));
    }
}
