//! A discrete tape machine with pluggable computational modules, the task
//! generators that feed it, and hand-written oracle controllers that certify
//! the whole environment stack.
//!
//! The controller side (context encoding, policy network, training) lives in
//! the companion crates; this one is pure environment: no floats, no
//! learning, deterministic under seeded generators.

pub mod curriculum;
pub mod dataset;
pub mod machine;
pub mod modules;
pub mod oracle;
pub mod task;
pub mod token;

pub use curriculum::{curriculum_level, sample_difficulty, CurriculumSchedule};
pub use dataset::{build_eval_set, DatasetError, EvalDataset, EVAL_SET_SIZE};
pub use machine::{
    apply_action, check_halt, init_machine, render_trace, Action, HeadConfig, MachineError,
    MachineState, PrevAction,
};
pub use modules::{eval_module, pool_for_task, ModuleKind, ModulePool, ModuleSpec};
pub use oracle::{drive_oracle, verify_environment, Oracle, OracleError, OracleRun, VerifyReport};
pub use task::{
    expected_output, generate, instance_from_digits, success, TaskError, TaskInstance, TaskKind,
};
pub use token::{tape_from_str, tape_to_string, Token, Vocab};
