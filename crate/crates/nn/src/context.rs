//! Controller input construction: the variable-size channel matrix over the
//! tape and the fixed-size previous-action summary, with the ablation
//! switches that blank individual blocks.
//!
//! Ablated blocks are zero-filled rather than dropped, so one network shape
//! serves every ablation.

use tapenet_core::machine::{HeadConfig, MachineState};
use tapenet_core::modules::pool_for_task;
use tapenet_core::task::TaskKind;
use tapenet_core::token::Vocab;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Zero the token-presence channels (top block of the channel matrix).
    pub no_tape_values: bool,
    /// Zero the whole fixed context and the previous-head channels (bottom
    /// block): the controller loses all knowledge of its previous action.
    pub no_action_history: bool,
    /// Zero only the head-value block of the fixed context, keeping the
    /// previous-module one-hot and the head-position channels.
    pub no_history_tape_values: bool,
}

impl AblationFlags {
    pub const NONE: AblationFlags = AblationFlags {
        no_tape_values: false,
        no_action_history: false,
        no_history_tape_values: false,
    };
}

/// Fixed per-task encoding dimensions. Nothing here depends on the tape
/// length, which is what makes the controller length-invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSpec {
    pub kind: TaskKind,
    pub vocab: Vocab,
    /// Landmark channel count: start-of-tape + task landmarks + end-of-tape.
    pub landmark_count: usize,
    pub heads: HeadConfig,
    /// Module pool size, the width of the previous-module one-hot.
    pub module_count: usize,
}

impl ContextSpec {
    pub fn for_task(kind: TaskKind, heads: HeadConfig) -> ContextSpec {
        let landmark_count = match kind {
            TaskKind::MultiDigitAdd => 5,
            _ => 4,
        };
        ContextSpec {
            kind,
            vocab: Vocab::for_task(kind),
            landmark_count,
            heads,
            module_count: pool_for_task(kind).len(),
        }
    }

    /// |V| token channels + landmark channels + one channel per head.
    pub fn sigma_channels(&self) -> usize {
        self.vocab.len() + self.landmark_count + self.heads.total()
    }

    /// One token one-hot per head plus the previous-module one-hot.
    pub fn xi_width(&self) -> usize {
        self.heads.total() * self.vocab.len() + self.module_count
    }

    pub fn token_rows(&self) -> std::ops::Range<usize> {
        0..self.vocab.len()
    }

    pub fn landmark_rows(&self) -> std::ops::Range<usize> {
        self.vocab.len()..self.vocab.len() + self.landmark_count
    }

    pub fn head_rows(&self) -> std::ops::Range<usize> {
        let start = self.vocab.len() + self.landmark_count;
        start..start + self.heads.total()
    }
}

/// The channel matrix: token-presence rows, landmark-position rows, then
/// previous-head rows, each a binary vector of length L. Head rows are all
/// zero at t=0.
pub fn encode_sigma<S: Scalar>(
    state: &MachineState,
    spec: &ContextSpec,
    flags: AblationFlags,
) -> Tensor<S> {
    let len = state.tape.len();
    assert_eq!(
        state.landmarks.len(),
        spec.landmark_count,
        "state landmarks do not match the task's channel layout"
    );
    let channels = spec.sigma_channels();
    let mut sigma = Tensor::zeros(&[channels, len]);
    let one = S::one();

    if !flags.no_tape_values {
        for (col, &token) in state.tape.iter().enumerate() {
            let row = spec
                .vocab
                .index_of(token)
                .unwrap_or_else(|| panic!("token `{token}` outside the task vocabulary"));
            sigma.data_mut()[row * len + col] = one;
        }
    }

    let lm_base = spec.landmark_rows().start;
    for (i, &pos) in state.landmarks.iter().enumerate() {
        sigma.data_mut()[(lm_base + i) * len + pos] = one;
    }

    if !flags.no_action_history {
        if let Some(prev) = &state.prev {
            let head_base = spec.head_rows().start;
            for (i, &pos) in prev.reads.iter().chain(&prev.writes).enumerate() {
                sigma.data_mut()[(head_base + i) * len + pos] = one;
            }
        }
    }
    sigma
}

/// The fixed-size context: current tape values under the previous heads
/// (read heads then write heads, one token one-hot each) and the previous
/// module choice. All zeros at t=0.
pub fn encode_xi<S: Scalar>(
    state: &MachineState,
    spec: &ContextSpec,
    flags: AblationFlags,
) -> Tensor<S> {
    let mut xi = Tensor::zeros(&[spec.xi_width()]);
    let prev = match (&state.prev, flags.no_action_history) {
        (Some(prev), false) => prev,
        _ => return xi,
    };
    let v = spec.vocab.len();
    let one = S::one();
    if !flags.no_history_tape_values {
        for (i, &pos) in prev.reads.iter().chain(&prev.writes).enumerate() {
            let token = state.tape[pos];
            let idx = spec
                .vocab
                .index_of(token)
                .unwrap_or_else(|| panic!("token `{token}` outside the task vocabulary"));
            xi.data_mut()[i * v + idx] = one;
        }
    }
    xi.data_mut()[spec.heads.total() * v + prev.module] = one;
    xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use tapenet_core::machine::{apply_action, init_machine, Action};
    use tapenet_core::modules::pool_for_task;
    use tapenet_core::task::instance_from_digits;

    fn copy_state_after_identity() -> (MachineState, ContextSpec) {
        let inst = instance_from_digits(TaskKind::Copy, 2, &[1, 2]).unwrap();
        let spec = ContextSpec::for_task(TaskKind::Copy, HeadConfig::DEFAULT);
        let state = init_machine(&inst, HeadConfig::DEFAULT).unwrap();
        let action = Action {
            module: 1,
            reads: vec![0, 0],
            writes: vec![3],
        };
        let next = apply_action(
            &state,
            &action,
            &pool_for_task(TaskKind::Copy),
            HeadConfig::DEFAULT,
        )
        .unwrap();
        (next, spec)
    }

    #[test]
    fn shape_law_per_task() {
        for kind in TaskKind::ALL {
            let spec = ContextSpec::for_task(kind, HeadConfig::DEFAULT);
            let v = spec.vocab.len();
            let lambda = spec.landmark_count;
            assert_eq!(spec.sigma_channels(), v + lambda + 3);
            assert_eq!(spec.xi_width(), 3 * v + spec.module_count);
        }
        // Copy in base 10: 12 tokens, 4 landmarks, 3 heads.
        let copy = ContextSpec::for_task(TaskKind::Copy, HeadConfig::DEFAULT);
        assert_eq!(copy.sigma_channels(), 19);
        assert_eq!(copy.xi_width(), 41);
        let add = ContextSpec::for_task(TaskKind::MultiDigitAdd, HeadConfig::DEFAULT);
        assert_eq!(add.sigma_channels(), 22);
        assert_eq!(add.xi_width(), 44);
    }

    #[test]
    fn t0_has_zero_action_channels() {
        let inst = instance_from_digits(TaskKind::Copy, 3, &[1, 2, 3]).unwrap();
        let spec = ContextSpec::for_task(TaskKind::Copy, HeadConfig::DEFAULT);
        let state = init_machine(&inst, HeadConfig::DEFAULT).unwrap();
        let sigma: Tensor<f64> = encode_sigma(&state, &spec, AblationFlags::NONE);
        for row in spec.head_rows() {
            assert!(
                sigma.row(row).iter().all(|&x| x == 0.0),
                "head row {row} not zero at t=0"
            );
        }
        let xi: Tensor<f64> = encode_xi(&state, &spec, AblationFlags::NONE);
        assert!(xi.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn token_columns_are_one_hot() {
        let (state, spec) = copy_state_after_identity();
        let sigma: Tensor<f64> = encode_sigma(&state, &spec, AblationFlags::NONE);
        let len = state.tape.len();
        for col in 0..len {
            let sum: f64 = spec.token_rows().map(|r| sigma.at2(r, col)).sum();
            assert_eq!(sum, 1.0, "token column {col}");
        }
        for row in spec.landmark_rows() {
            assert_eq!(
                sigma.row(row).iter().sum::<f64>(),
                1.0,
                "landmark row {row}"
            );
        }
        for row in spec.head_rows() {
            assert_eq!(sigma.row(row).iter().sum::<f64>(), 1.0, "head row {row}");
        }
    }

    #[test]
    fn xi_reads_current_tape_under_previous_heads() {
        // After Identity(reads 0,0 -> write 3) on `12$.`, the tape is `12$1`
        // and all three heads sit on the digit 1.
        let (state, spec) = copy_state_after_identity();
        let xi: Tensor<f64> = encode_xi(&state, &spec, AblationFlags::NONE);
        let v = spec.vocab.len();
        let one_idx = spec
            .vocab
            .index_of(tapenet_core::token::Token::Digit(1))
            .unwrap();
        for head in 0..3 {
            for i in 0..v {
                let want = if i == one_idx { 1.0 } else { 0.0 };
                assert_eq!(xi.data()[head * v + i], want, "head {head} slot {i}");
            }
        }
        // Previous module one-hot: Identity is pool index 1.
        let module_block = &xi.data()[3 * v..];
        assert_eq!(module_block, &[0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn redundancy_between_xi_and_sigma_head_channels() {
        let (state, spec) = copy_state_after_identity();
        let sigma: Tensor<f64> = encode_sigma(&state, &spec, AblationFlags::NONE);
        let xi: Tensor<f64> = encode_xi(&state, &spec, AblationFlags::NONE);
        let len = state.tape.len();
        let v = spec.vocab.len();
        for (head, row) in spec.head_rows().enumerate() {
            let col = (0..len).find(|&c| sigma.at2(row, c) == 1.0).unwrap();
            let token_row = spec
                .token_rows()
                .find(|&r| sigma.at2(r, col) == 1.0)
                .unwrap();
            assert_eq!(xi.data()[head * v + token_row], 1.0, "head {head}");
        }
    }

    #[test]
    fn no_tape_values_zeroes_exactly_the_token_block() {
        let (state, spec) = copy_state_after_identity();
        let full: Tensor<f64> = encode_sigma(&state, &spec, AblationFlags::NONE);
        let flags = AblationFlags {
            no_tape_values: true,
            ..AblationFlags::NONE
        };
        let ablated: Tensor<f64> = encode_sigma(&state, &spec, flags);
        assert_eq!(ablated.shape(), full.shape());
        for row in spec.token_rows() {
            assert!(ablated.row(row).iter().all(|&x| x == 0.0));
        }
        for row in spec.landmark_rows().chain(spec.head_rows()) {
            assert_eq!(
                ablated.row(row),
                full.row(row),
                "row {row} should be untouched"
            );
        }
    }

    #[test]
    fn no_action_history_zeroes_heads_and_xi() {
        let (state, spec) = copy_state_after_identity();
        let flags = AblationFlags {
            no_action_history: true,
            ..AblationFlags::NONE
        };
        let sigma: Tensor<f64> = encode_sigma(&state, &spec, flags);
        for row in spec.head_rows() {
            assert!(sigma.row(row).iter().all(|&x| x == 0.0));
        }
        let full: Tensor<f64> = encode_sigma(&state, &spec, AblationFlags::NONE);
        for row in spec.token_rows().chain(spec.landmark_rows()) {
            assert_eq!(sigma.row(row), full.row(row));
        }
        let xi: Tensor<f64> = encode_xi(&state, &spec, flags);
        assert!(xi.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn no_history_tape_values_keeps_module_one_hot() {
        let (state, spec) = copy_state_after_identity();
        let flags = AblationFlags {
            no_history_tape_values: true,
            ..AblationFlags::NONE
        };
        let xi: Tensor<f64> = encode_xi(&state, &spec, flags);
        let v = spec.vocab.len();
        assert!(xi.data()[..3 * v].iter().all(|&x| x == 0.0));
        assert_eq!(&xi.data()[3 * v..], &[0.0, 1.0, 0.0, 0.0, 0.0]);
        // Sigma is unaffected by this flag.
        let sigma: Tensor<f64> = encode_sigma(&state, &spec, flags);
        let full: Tensor<f64> = encode_sigma(&state, &spec, AblationFlags::NONE);
        assert_eq!(sigma, full);
    }
}
