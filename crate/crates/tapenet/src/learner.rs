//! REINFORCE with a learned value baseline and entropy bonus.
//!
//! Loss over a batch of traces:
//!   sum_t [ -logprob_t * (G_t - v_t) ] + c_v * sum_t (G_t - v_t)^2
//!   - c_H * sum_t entropy_t
//! where G_t is the discounted return and the advantage (G_t - v_t) enters
//! the policy term as a constant; gradients reach the value head only
//! through the squared-error term.

use tapenet_nn::{
    adam_step, AdamState, Graph, NnError, NodeId, ParamStore, PolicyNet, PolicyNodes, Scalar,
    Tensor,
};

use crate::rollout::{discounted_returns, EpisodeTrace};

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub gamma: f64,
    pub value_weight: f64,
    pub entropy_weight: f64,
    /// Global gradient-norm clip applied before the optimizer step;
    /// 0 disables clipping. Clipping changes the update, never the loss.
    pub max_grad_norm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 0.99,
            value_weight: 0.5,
            entropy_weight: 0.01,
            max_grad_norm: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct UpdateStats {
    pub episodes: usize,
    pub env_steps: usize,
    pub successes: usize,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub loss: f64,
    /// Pre-clip global gradient norm of the update.
    pub grad_norm: f64,
}

pub struct BatchLoss {
    pub total: NodeId,
    pub policy_term: Option<NodeId>,
    pub value_term: Option<NodeId>,
    pub entropy_term: Option<NodeId>,
    pub step_count: usize,
}

/// Build the full batch loss on `g`. Returns None when the batch carries no
/// steps at all (every episode halted at t=0).
pub fn build_batch_loss<S: Scalar>(
    g: &mut Graph<S>,
    net: &PolicyNet,
    nodes: &PolicyNodes,
    batch: &[EpisodeTrace<S>],
    weights: LossWeights,
) -> Option<BatchLoss> {
    let mut policy_parts = Vec::new();
    let mut value_parts = Vec::new();
    let mut entropy_parts = Vec::new();

    for trace in batch {
        assert_eq!(trace.rewards.len(), trace.len(), "trace is missing rewards");
        let returns = discounted_returns(&trace.rewards, weights.gamma);
        for (step, &g_t) in trace.steps.iter().zip(&returns) {
            let heads = net.forward(g, nodes, &step.xi, &step.sigma);
            let logprob = net.action_logprob_node(g, &heads, &step.action);
            let entropy = net.entropy_node(g, &heads);
            // Advantage against the value estimate under the current
            // parameters, treated as a constant in the policy term.
            let value_now = g.value(heads.value).item().to_f64().unwrap();
            let advantage = g_t - value_now;
            policy_parts.push(g.scale(logprob, tapenet_nn::s(-advantage)));
            let target = g.input(Tensor::scalar(tapenet_nn::s(g_t)));
            let diff = g.sub(target, heads.value);
            value_parts.push(g.mul(diff, diff));
            entropy_parts.push(entropy);
        }
    }
    if policy_parts.is_empty() {
        return None;
    }
    let step_count = policy_parts.len();
    let policy_term = g.add_n(&policy_parts);
    let value_term = g.add_n(&value_parts);
    let entropy_term = g.add_n(&entropy_parts);
    let scaled_value = g.scale(value_term, tapenet_nn::s(weights.value_weight));
    let scaled_entropy = g.scale(entropy_term, tapenet_nn::s(-weights.entropy_weight));
    let with_value = g.add(policy_term, scaled_value);
    let total = g.add(with_value, scaled_entropy);
    Some(BatchLoss {
        total,
        policy_term: Some(policy_term),
        value_term: Some(value_term),
        entropy_term: Some(entropy_term),
        step_count,
    })
}

/// One optimizer step over a batch of traces. A non-finite loss or gradient
/// skips the update (gradients cleared) and surfaces as an error.
pub fn policy_gradient_update<S: Scalar>(
    net: &PolicyNet,
    store: &mut ParamStore<S>,
    adam: &mut AdamState<S>,
    batch: &[EpisodeTrace<S>],
    weights: LossWeights,
) -> Result<UpdateStats, NnError> {
    assert!(!batch.is_empty(), "empty batch");
    let mut stats = UpdateStats {
        episodes: batch.len(),
        env_steps: batch.iter().map(|t| t.len()).sum(),
        successes: batch.iter().filter(|t| t.success).count(),
        mean_return: batch.iter().map(|t| t.episode_return()).sum::<f64>() / batch.len() as f64,
        ..Default::default()
    };

    let mut g: Graph<S> = Graph::new();
    let nodes = net.register(&mut g, store);
    let Some(loss) = build_batch_loss(&mut g, net, &nodes, batch, weights) else {
        return Ok(stats); // nothing to learn from, not an error
    };

    stats.loss = g.value(loss.total).item().to_f64().unwrap();
    stats.policy_loss = g.value(loss.policy_term.unwrap()).item().to_f64().unwrap();
    stats.value_loss = g.value(loss.value_term.unwrap()).item().to_f64().unwrap();
    stats.entropy =
        g.value(loss.entropy_term.unwrap()).item().to_f64().unwrap() / loss.step_count as f64;

    g.check_finite(loss.total, "batch loss")?;
    g.backward(loss.total);
    g.accumulate_param_grads(store);
    stats.grad_norm = if weights.max_grad_norm > 0.0 {
        store.clip_grad_norm(weights.max_grad_norm)
    } else {
        store.grad_norm()
    };
    if let Err(err) = adam_step(store, adam) {
        store.zero_grads();
        return Err(err);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tapenet_core::machine::HeadConfig;
    use tapenet_core::task::{instance_from_digits, TaskKind};
    use tapenet_nn::gradcheck::check_store_gradients;
    use tapenet_nn::{AblationFlags, AdamConfig, ContextSpec, EncoderKind, PolicyDims};

    use crate::config::RewardScheme;
    use crate::rollout::{run_episode, PolicyController};

    fn small_setup(
        seed: u64,
    ) -> (
        ContextSpec,
        PolicyNet,
        ParamStore<f64>,
        Vec<EpisodeTrace<f64>>,
    ) {
        let spec = ContextSpec::for_task(TaskKind::Copy, HeadConfig::DEFAULT);
        let net = PolicyNet::new(PolicyDims::compact(&spec), EncoderKind::Attention);
        let store: ParamStore<f64> = net.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut gen_rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let mut batch = Vec::new();
        for _ in 0..2 {
            let inst = tapenet_core::task::generate(TaskKind::Copy, 2, &mut gen_rng).unwrap();
            let mut ctrl = PolicyController::new(&net, &store, &mut rng, false);
            let mut trace = run_episode(&mut ctrl, &inst, &spec, AblationFlags::NONE, 3.0).unwrap();
            trace.assign_rewards(&inst, RewardScheme::Sparse);
            batch.push(trace);
        }
        (spec, net, store, batch)
    }

    #[test]
    fn zero_reward_zero_baseline_batch_has_zero_gradient() {
        let (_spec, net, mut store, mut batch) = small_setup(40);
        // Zero the value head so every baseline is exactly zero, and erase
        // the rewards; entropy off.
        for name in ["value.w", "value.b"] {
            let t = store.value_mut(name).unwrap();
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        for trace in &mut batch {
            trace.rewards = vec![0.0; trace.len()];
        }
        let weights = LossWeights { gamma: 1.0, value_weight: 0.5, entropy_weight: 0.0, ..Default::default() };
        let mut g: Graph<f64> = Graph::new();
        let nodes = net.register(&mut g, &store);
        let loss = build_batch_loss(&mut g, &net, &nodes, &batch, weights).unwrap();
        g.backward(loss.total);
        let mut grads = store.clone();
        grads.zero_grads();
        g.accumulate_param_grads(&mut grads);
        for (name, _, grad) in grads.iter() {
            assert!(
                grad.data().iter().all(|&x| x.abs() < 1e-12),
                "gradient of {name} not zero"
            );
        }
    }

    #[test]
    fn single_step_policy_term_matches_reinforce_gradient() {
        // One 1-step episode, gamma=1, baseline forced to zero: the loss
        // gradient must equal -reward * d(logprob)/d(params) on the policy
        // path (checked against finite differences of the frozen loss).
        let (_spec, net, mut store, batch) = small_setup(41);
        for name in ["value.w", "value.b"] {
            let t = store.value_mut(name).unwrap();
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        let mut trace = batch.into_iter().find(|t| !t.is_empty()).unwrap();
        trace.steps.truncate(1);
        trace.rewards = vec![1.0];
        let step = trace.steps[0].clone();
        let reward = 1.0;

        // Frozen-batch finite differences: advantage pinned to the value at
        // the unperturbed parameters (0 here), value/entropy terms off.
        let weights = LossWeights { gamma: 1.0, value_weight: 0.0, entropy_weight: 0.0, ..Default::default() };
        let batch = vec![trace];
        let err = check_store_gradients(&store, &|g, st| {
            let nodes = net.register(g, st);
            let heads = net.forward(g, &nodes, &step.xi, &step.sigma);
            let lp = net.action_logprob_node(g, &heads, &step.action);
            g.scale(lp, -reward)
        });
        assert!(err < 1e-6, "direct -reward*logprob check: {err:.3e}");

        // And the batch-loss builder produces the same gradient.
        let mut g1: Graph<f64> = Graph::new();
        let nodes = net.register(&mut g1, &store);
        let loss = build_batch_loss(&mut g1, &net, &nodes, &batch, weights).unwrap();
        g1.backward(loss.total);
        let mut a = store.clone();
        a.zero_grads();
        g1.accumulate_param_grads(&mut a);

        let mut g2: Graph<f64> = Graph::new();
        let nodes = net.register(&mut g2, &store);
        let heads = net.forward(&mut g2, &nodes, &step.xi, &step.sigma);
        let lp = net.action_logprob_node(&mut g2, &heads, &step.action);
        let direct = g2.scale(lp, -reward);
        g2.backward(direct);
        let mut b = store.clone();
        b.zero_grads();
        g2.accumulate_param_grads(&mut b);

        for (name, _, ga) in a.iter() {
            let gb = b.grad(name).unwrap();
            for (x, y) in ga.data().iter().zip(gb.data()) {
                assert!((x - y).abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        // The frozen 2-episode batch: advantages are computed once at the
        // base parameters and held fixed inside the closure, mirroring how
        // the learner treats them as constants.
        let (_spec, net, store, batch) = small_setup(42);
        assert!(batch.iter().any(|t| !t.is_empty()));
        let weights = LossWeights { gamma: 0.99, value_weight: 0.5, entropy_weight: 0.01, ..Default::default() };

        // Pin the advantages at the unperturbed parameters.
        let mut pinned: Vec<Vec<f64>> = Vec::new();
        {
            let mut g: Graph<f64> = Graph::new();
            let nodes = net.register(&mut g, &store);
            for trace in &batch {
                let returns = discounted_returns(&trace.rewards, weights.gamma);
                let mut advs = Vec::new();
                for (step, &g_t) in trace.steps.iter().zip(&returns) {
                    let heads = net.forward(&mut g, &nodes, &step.xi, &step.sigma);
                    advs.push(g_t - g.value(heads.value).item());
                }
                pinned.push(advs);
            }
        }

        let err = check_store_gradients(&store, &|g, st| {
            let nodes = net.register(g, st);
            let mut parts = Vec::new();
            for (trace, advs) in batch.iter().zip(&pinned) {
                let returns = discounted_returns(&trace.rewards, weights.gamma);
                for ((step, &g_t), &adv) in trace.steps.iter().zip(&returns).zip(advs) {
                    let heads = net.forward(g, &nodes, &step.xi, &step.sigma);
                    let lp = net.action_logprob_node(g, &heads, &step.action);
                    parts.push(g.scale(lp, -adv));
                    let target = g.input(Tensor::scalar(g_t));
                    let diff = g.sub(target, heads.value);
                    let sq = g.mul(diff, diff);
                    parts.push(g.scale(sq, weights.value_weight));
                    let h = net.entropy_node(g, &heads);
                    parts.push(g.scale(h, -weights.entropy_weight));
                }
            }
            g.add_n(&parts)
        });
        assert!(err < 1e-4, "full loss FD error {err:.3e}");
    }

    #[test]
    fn update_runs_and_reports_stats() {
        let (_spec, net, mut store, batch) = small_setup(43);
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3), &store);
        let weights = LossWeights::default();
        let before = store.value("conv1.w").unwrap().clone();
        let stats = policy_gradient_update(&net, &mut store, &mut adam, &batch, weights).unwrap();
        assert_eq!(stats.episodes, 2);
        assert!(stats.env_steps > 0);
        assert!(stats.loss.is_finite());
        assert!(stats.entropy > 0.0);
        assert_ne!(&before, store.value("conv1.w").unwrap());
        // Gradients zeroed after the step.
        assert!(store
            .grad("conv1.w")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn entropy_bonus_drives_entropy_up_on_fixed_batch() {
        let (_spec, net, mut store, mut batch) = small_setup(44);
        // Zero rewards and value head: only the entropy term has gradients.
        for name in ["value.w", "value.b"] {
            let t = store.value_mut(name).unwrap();
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        for trace in &mut batch {
            trace.rewards = vec![0.0; trace.len()];
        }
        let weights = LossWeights { gamma: 1.0, value_weight: 0.0, entropy_weight: 10.0, ..Default::default() };
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3), &store);
        let mut entropies = Vec::new();
        for _ in 0..100 {
            let stats =
                policy_gradient_update(&net, &mut store, &mut adam, &batch, weights).unwrap();
            entropies.push(stats.entropy);
        }
        for w in entropies.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9,
                "entropy decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(entropies.last().unwrap() > entropies.first().unwrap());
    }

    #[test]
    fn zero_step_batch_is_a_no_op() {
        let spec = ContextSpec::for_task(TaskKind::FilterEven, HeadConfig::DEFAULT);
        let net = PolicyNet::new(PolicyDims::compact(&spec), EncoderKind::Attention);
        let mut store: ParamStore<f64> = net.init_params(&mut ChaCha8Rng::seed_from_u64(45));
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let inst = instance_from_digits(TaskKind::FilterEven, 3, &[1, 3, 5]).unwrap();
        let mut ctrl = crate::rollout::OracleController::new();
        let mut trace: EpisodeTrace<f64> =
            run_episode(&mut ctrl, &inst, &spec, AblationFlags::NONE, 8.0).unwrap();
        trace.assign_rewards(&inst, RewardScheme::Sparse);
        let before = store.value("conv1.w").unwrap().clone();
        let stats = policy_gradient_update(
            &net,
            &mut store,
            &mut adam,
            &[trace],
            LossWeights::default(),
        )
        .unwrap();
        assert_eq!(stats.env_steps, 0);
        assert_eq!(stats.successes, 1);
        assert_eq!(&before, store.value("conv1.w").unwrap());
    }
}
