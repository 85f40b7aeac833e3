//! Episode rollouts: drive one task instance with a controller, recording
//! everything the learner needs. The halting oracle ends an episode the
//! moment the targets match, including at t=0.

use rand::Rng;

use tapenet_core::machine::{
    apply_action, check_halt, init_machine, Action, MachineError, MachineState,
};
use tapenet_core::modules::{pool_for_task, ModulePool};
use tapenet_core::oracle::Oracle;
use tapenet_core::task::{success, TaskInstance};
use tapenet_nn::{
    encode_sigma, encode_xi, AblationFlags, ContextSpec, Graph, ParamStore, PolicyNet, PolicyNodes,
    Scalar, Tensor,
};

use crate::config::RewardScheme;

pub const STEP_COST: f64 = -0.01;

/// One decision plus the diagnostics recorded alongside it.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: Action,
    pub logprob: f64,
    pub entropy: f64,
    pub value: f64,
}

/// Anything that can drive the machine: the learned policy, the hand-written
/// oracle, or test stand-ins.
pub trait Controller<S: Scalar> {
    fn begin_episode(&mut self, instance: &TaskInstance);
    fn act(&mut self, state: &MachineState, xi: &Tensor<S>, sigma: &Tensor<S>) -> Decision;
}

/// Samples from (or greedily follows) the policy network over a parameter
/// snapshot. One graph per episode; the step loop reuses the registered
/// parameter leaves.
pub struct PolicyController<'a, S: Scalar, R: Rng> {
    net: &'a PolicyNet,
    store: &'a ParamStore<S>,
    rng: &'a mut R,
    greedy: bool,
    graph: Option<(Graph<S>, PolicyNodes, usize)>,
}

impl<'a, S: Scalar, R: Rng> PolicyController<'a, S, R> {
    pub fn new(net: &'a PolicyNet, store: &'a ParamStore<S>, rng: &'a mut R, greedy: bool) -> Self {
        PolicyController {
            net,
            store,
            rng,
            greedy,
            graph: None,
        }
    }
}

impl<S: Scalar, R: Rng> Controller<S> for PolicyController<'_, S, R> {
    fn begin_episode(&mut self, _instance: &TaskInstance) {
        let mut g = Graph::new();
        let nodes = self.net.register(&mut g, self.store);
        let mark = g.len();
        self.graph = Some((g, nodes, mark));
    }

    fn act(&mut self, _state: &MachineState, xi: &Tensor<S>, sigma: &Tensor<S>) -> Decision {
        let (g, nodes, mark) = self.graph.as_mut().expect("begin_episode not called");
        g.truncate(*mark);
        let heads = self.net.forward(g, nodes, xi, sigma);
        let out = self.net.extract_output(g, &heads);
        let (action, logprob) = if self.greedy {
            let action = self.net.greedy_action(&out);
            let lp = self.net.action_logprob(&out, &action);
            (action, lp)
        } else {
            self.net.sample_action(&out, self.rng)
        };
        Decision {
            action,
            logprob,
            entropy: self.net.entropy(&out),
            value: out.value,
        }
    }
}

/// The hand-written solver as a drop-in controller (logprob/entropy/value
/// are reported as zero).
pub struct OracleController {
    oracle: Option<Oracle>,
}

impl OracleController {
    pub fn new() -> OracleController {
        OracleController { oracle: None }
    }
}

impl Default for OracleController {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Controller<S> for OracleController {
    fn begin_episode(&mut self, instance: &TaskInstance) {
        self.oracle = Some(Oracle::new(instance.kind));
    }

    fn act(&mut self, state: &MachineState, _xi: &Tensor<S>, _sigma: &Tensor<S>) -> Decision {
        let oracle = self.oracle.as_mut().expect("begin_episode not called");
        let action = oracle
            .action(state)
            .expect("oracle cannot act on this state");
        Decision {
            action,
            logprob: 0.0,
            entropy: 0.0,
            value: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord<S: Scalar> {
    pub xi: Tensor<S>,
    pub sigma: Tensor<S>,
    pub action: Action,
    pub logprob: f64,
    pub entropy: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace<S: Scalar> {
    pub steps: Vec<StepRecord<S>>,
    pub success: bool,
    pub final_state: MachineState,
    /// Per-step rewards; filled by [`EpisodeTrace::assign_rewards`].
    pub rewards: Vec<f64>,
}

impl<S: Scalar> EpisodeTrace<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn assign_rewards(&mut self, instance: &TaskInstance, scheme: RewardScheme) {
        self.rewards = episode_reward(self, instance, scheme);
    }
}

/// Per-step reward sequence: a -0.01 cost per step, plus a terminal bonus on
/// the last step (1.0 on success for the sparse scheme; the fraction of
/// correct target cells for the dense one).
pub fn episode_reward<S: Scalar>(
    trace: &EpisodeTrace<S>,
    instance: &TaskInstance,
    scheme: RewardScheme,
) -> Vec<f64> {
    let n = trace.len();
    if n == 0 {
        return Vec::new();
    }
    let mut rewards = vec![STEP_COST; n];
    let bonus = match scheme {
        RewardScheme::Sparse => {
            if trace.success {
                1.0
            } else {
                0.0
            }
        }
        RewardScheme::Dense => {
            let correct = instance
                .target_positions
                .iter()
                .zip(&instance.expected)
                .filter(|&(&pos, &want)| trace.final_state.tape[pos] == want)
                .count();
            correct as f64 / instance.target_positions.len().max(1) as f64
        }
    };
    rewards[n - 1] += bonus;
    rewards
}

/// Discounted returns G_t = sum_{u >= t} gamma^(u-t) r_u.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        returns[i] = acc;
    }
    returns
}

/// Episode step cap for a tape of length `l`.
pub fn step_cap(t_max_multiplier: f64, l: usize) -> usize {
    (t_max_multiplier * l as f64).ceil() as usize
}

/// Roll one instance to halt, cap, or rejected action. Rejected actions end
/// the episode as a failure rather than an error; only a malformed instance
/// is a hard error.
pub fn run_episode<S: Scalar, C: Controller<S>>(
    ctrl: &mut C,
    instance: &TaskInstance,
    spec: &ContextSpec,
    flags: AblationFlags,
    t_max_multiplier: f64,
) -> Result<EpisodeTrace<S>, MachineError> {
    let pool: ModulePool = pool_for_task(instance.kind);
    let mut state = init_machine(instance, spec.heads)?;
    let cap = step_cap(t_max_multiplier, state.len());
    let mut trace = EpisodeTrace {
        steps: Vec::new(),
        success: check_halt(&state, instance),
        final_state: state.clone(),
        rewards: Vec::new(),
    };
    if trace.success {
        return Ok(trace);
    }
    ctrl.begin_episode(instance);
    while state.step < cap {
        let xi = encode_xi::<S>(&state, spec, flags);
        let sigma = encode_sigma::<S>(&state, spec, flags);
        let decision = ctrl.act(&state, &xi, &sigma);
        let step = StepRecord {
            xi,
            sigma,
            action: decision.action.clone(),
            logprob: decision.logprob,
            entropy: decision.entropy,
            value: decision.value,
        };
        match apply_action(&state, &decision.action, &pool, spec.heads) {
            Ok(next) => {
                trace.steps.push(step);
                state = next;
                if check_halt(&state, instance) {
                    trace.success = true;
                    break;
                }
            }
            Err(_) => {
                trace.steps.push(step);
                trace.success = false;
                break;
            }
        }
    }
    debug_assert_eq!(trace.success, success(&state.tape, instance));
    trace.final_state = state;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tapenet_core::machine::HeadConfig;
    use tapenet_core::task::{instance_from_digits, TaskKind};
    use tapenet_nn::{EncoderKind, PolicyDims};

    fn copy_spec() -> ContextSpec {
        ContextSpec::for_task(TaskKind::Copy, HeadConfig::DEFAULT)
    }

    #[test]
    fn already_solved_instance_gives_zero_step_success() {
        let inst = instance_from_digits(TaskKind::FilterEven, 3, &[1, 3, 5]).unwrap();
        let spec = ContextSpec::for_task(TaskKind::FilterEven, HeadConfig::DEFAULT);
        let mut ctrl = OracleController::new();
        let trace: EpisodeTrace<f64> =
            run_episode(&mut ctrl, &inst, &spec, AblationFlags::NONE, 8.0).unwrap();
        assert!(trace.success);
        assert!(trace.is_empty());
        assert!(episode_reward(&trace, &inst, RewardScheme::Sparse).is_empty());
    }

    #[test]
    fn oracle_solves_copy_in_exactly_n_steps() {
        let inst = instance_from_digits(TaskKind::Copy, 2, &[3, 4]).unwrap();
        let mut ctrl = OracleController::new();
        let trace: EpisodeTrace<f64> =
            run_episode(&mut ctrl, &inst, &copy_spec(), AblationFlags::NONE, 8.0).unwrap();
        assert!(trace.success);
        assert_eq!(trace.len(), 2);
    }

    #[test]
    fn random_policy_respects_step_cap() {
        let inst = instance_from_digits(TaskKind::Copy, 2, &[3, 4]).unwrap();
        let spec = copy_spec();
        let net = PolicyNet::new(PolicyDims::compact(&spec), EncoderKind::Attention);
        let store: ParamStore<f64> = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ctrl = PolicyController::new(&net, &store, &mut rng, false);
        let trace = run_episode(&mut ctrl, &inst, &spec, AblationFlags::NONE, 8.0).unwrap();
        assert!(trace.len() <= 40, "trace length {}", trace.len());
    }

    #[test]
    fn reward_examples() {
        let inst = instance_from_digits(TaskKind::Copy, 2, &[3, 4]).unwrap();
        let mut ctrl = OracleController::new();
        let trace: EpisodeTrace<f64> =
            run_episode(&mut ctrl, &inst, &copy_spec(), AblationFlags::NONE, 8.0).unwrap();
        // Success in 2 steps, sparse: (-0.01, 0.99).
        let r = episode_reward(&trace, &inst, RewardScheme::Sparse);
        assert_eq!(r, vec![-0.01, 0.99]);
        // Dense on a success is the same (all targets correct).
        let r = episode_reward(&trace, &inst, RewardScheme::Dense);
        assert_eq!(r, vec![-0.01, 0.99]);
    }

    #[test]
    fn dense_reward_counts_partial_targets() {
        let inst = instance_from_digits(TaskKind::Copy, 4, &[1, 2, 3, 4]).unwrap();
        // Hand-build a 3-step failed trace with 3 of 4 targets correct.
        let spec = copy_spec();
        let mut state = init_machine(&inst, spec.heads).unwrap();
        for (i, &tok) in inst.expected.iter().take(3).enumerate() {
            state.tape[inst.target_positions[i]] = tok;
        }
        let dummy = StepRecord {
            xi: encode_xi::<f64>(&state, &spec, AblationFlags::NONE),
            sigma: encode_sigma::<f64>(&state, &spec, AblationFlags::NONE),
            action: Action {
                module: 0,
                reads: vec![0, 0],
                writes: vec![0],
            },
            logprob: 0.0,
            entropy: 0.0,
            value: 0.0,
        };
        let trace = EpisodeTrace::<f64> {
            steps: vec![dummy.clone(), dummy.clone(), dummy],
            success: false,
            final_state: state,
            rewards: Vec::new(),
        };
        let r = episode_reward(&trace, &inst, RewardScheme::Dense);
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], -0.01);
        assert_eq!(r[1], -0.01);
        assert!((r[2] - (0.75 - 0.01)).abs() < 1e-12);
        // Sparse on the same failure: three step costs.
        let r = episode_reward(&trace, &inst, RewardScheme::Sparse);
        assert_eq!(r, vec![-0.01, -0.01, -0.01]);
    }

    #[test]
    fn discounted_returns_accumulate_backwards() {
        let g = discounted_returns(&[1.0, 0.0, 2.0], 0.5);
        assert_eq!(g, vec![1.0 + 0.25 * 2.0, 0.5 * 2.0, 2.0]);
        assert!(discounted_returns(&[], 0.9).is_empty());
    }

    #[test]
    fn policy_trace_logprob_matches_recompute() {
        let inst = instance_from_digits(TaskKind::Copy, 2, &[1, 2]).unwrap();
        let spec = copy_spec();
        let net = PolicyNet::new(PolicyDims::compact(&spec), EncoderKind::Attention);
        let store: ParamStore<f64> = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ctrl = PolicyController::new(&net, &store, &mut rng, false);
        let trace = run_episode(&mut ctrl, &inst, &spec, AblationFlags::NONE, 8.0).unwrap();
        assert!(!trace.is_empty());
        for step in &trace.steps {
            let out = net.forward_values(&store, &step.xi, &step.sigma);
            assert_eq!(step.logprob, net.action_logprob(&out, &step.action));
            assert_eq!(step.value, out.value);
            assert_eq!(step.entropy, net.entropy(&out));
        }
    }
}
