//! Central finite-difference checking for every differentiable op.
//!
//! The finite-difference side only ever evaluates forward passes, so it is
//! independent of the backward rules it certifies. Lives in the library
//! (not test code) because the CLI exposes it as a subcommand.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::tensor::{s, Scalar, Tensor};

/// |a - b| / max(|a|, |b|, 1): relative where gradients are large, absolute
/// near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn random_tensor<S: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let len: usize = shape.iter().product();
    // Magnitudes stay in [0.05, 1.0] so no finite-difference step can cross
    // the relu kink at zero.
    let data: Vec<S> = (0..len)
        .map(|_| {
            let u: f64 = rng.gen_range(-1.0..1.0);
            s(u.signum() * (0.05 + 0.95 * u.abs()))
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Compare analytic gradients of `build` (a scalar-valued function of the
/// given inputs) against central differences, returning the worst relative
/// error over every input element.
pub fn check_fn_gradients<S: Scalar>(
    shapes: &[Vec<usize>],
    build: &dyn Fn(&mut Graph<S>, &[NodeId]) -> NodeId,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let inputs: Vec<Tensor<S>> = shapes.iter().map(|sh| random_tensor(sh, rng)).collect();

    let eval = |tensors: &[Tensor<S>]| -> f64 {
        let mut g: Graph<S> = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.variable(t.clone())).collect();
        let root = build(&mut g, &ids);
        g.value(root).item().to_f64().unwrap()
    };

    // Analytic pass.
    let mut g: Graph<S> = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = build(&mut g, &ids);
    assert_eq!(g.value(root).len(), 1, "gradient checks need a scalar root");
    g.backward(root);
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(&inputs)
        .map(|(&id, t)| match g.grad(id) {
            Some(grad) => grad.to_f64_vec(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x = input.data()[j].to_f64().unwrap();
            let eps = S::FD_EPS * x.abs().max(1.0);
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] = s(x + eps);
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] = s(x - eps);
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i][j], fd));
        }
    }
    worst
}

/// Same check for a scalar loss over a parameter store; used for the full
/// policy-gradient loss.
pub fn check_store_gradients<S: Scalar>(
    store: &ParamStore<S>,
    build: &dyn Fn(&mut Graph<S>, &ParamStore<S>) -> NodeId,
) -> f64 {
    let eval = |st: &ParamStore<S>| -> f64 {
        let mut g: Graph<S> = Graph::new();
        let root = build(&mut g, st);
        g.value(root).item().to_f64().unwrap()
    };

    let mut g: Graph<S> = Graph::new();
    let root = build(&mut g, store);
    g.backward(root);
    let mut with_grads = store.clone();
    with_grads.zero_grads();
    g.accumulate_param_grads(&mut with_grads);

    let mut worst = 0.0f64;
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in &names {
        let len = store.value(name).unwrap().len();
        let analytic = with_grads.grad(name).unwrap().to_f64_vec();
        for j in 0..len {
            let x = store.value(name).unwrap().data()[j].to_f64().unwrap();
            let eps = S::FD_EPS * x.abs().max(1.0);
            let mut plus = store.clone();
            plus.value_mut(name).unwrap().data_mut()[j] = s(x + eps);
            let mut minus = store.clone();
            minus.value_mut(name).unwrap().data_mut()[j] = s(x - eps);
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[j], fd));
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub checks: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Project a tensor node down to a scalar with fixed pseudo-random weights,
/// so that every output element influences the root.
fn project<S: Scalar>(g: &mut Graph<S>, id: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = g.value(id).shape().to_vec();
    let weights = random_tensor::<S, _>(&shape, rng);
    let w = g.input(weights);
    let prod = g.mul(id, w);
    g.sum(prod)
}

/// Run `rounds` random-shape checks for every differentiable op, always
/// including a length-1 case. Returns one row per op with the worst
/// observed error.
pub fn run_suite<S: Scalar>(seed: u64, rounds: usize) -> Vec<SuiteEntry> {
    let mut entries = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Each closure receives (round, rng) and returns (shapes, builder).
    type Builder<S> = Box<dyn Fn(&mut Graph<S>, &[NodeId]) -> NodeId>;
    let mut check =
        |op: &'static str,
         make: &dyn Fn(usize, &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Builder<S>)| {
            let mut worst = 0.0f64;
            for round in 0..rounds {
                let (shapes, builder) = make(round, &mut rng);
                let err = check_fn_gradients::<S>(&shapes, builder.as_ref(), &mut rng);
                worst = worst.max(err);
            }
            entries.push(SuiteEntry {
                op,
                checks: rounds,
                max_rel_err: worst,
                tol: S::GRAD_TOL,
            });
        };

    // `l` is the length-like dimension: 1 on the first round, then random.
    let len_dim = |round: usize, rng: &mut ChaCha8Rng| -> usize {
        if round == 0 {
            1
        } else {
            rng.gen_range(2..8)
        }
    };

    check("add", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![l, 3], vec![l, 3]],
            Box::new(move |g, ids| {
                let y = g.add(ids[0], ids[1]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("add_n", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![l], vec![l], vec![l]],
            Box::new(move |g, ids| {
                let y = g.add_n(ids);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("sub", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![2, l], vec![2, l]],
            Box::new(move |g, ids| {
                let y = g.sub(ids[0], ids[1]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("mul", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![l, 2], vec![l, 2]],
            Box::new(move |g, ids| {
                let y = g.mul(ids[0], ids[1]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("scale", &|round, rng| {
        let l = len_dim(round, rng);
        let factor: f64 = rng.gen_range(-2.0..2.0);
        let seed = rng.gen();
        (
            vec![vec![l]],
            Box::new(move |g, ids| {
                let y = g.scale(ids[0], s(factor));
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("matmul", &|round, rng| {
        let l = len_dim(round, rng);
        let (m, k) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let seed = rng.gen();
        (
            vec![vec![m, k], vec![k, l]],
            Box::new(move |g, ids| {
                let y = g.matmul(ids[0], ids[1]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("matmul_trans_b", &|round, rng| {
        let l = len_dim(round, rng);
        let (m, k) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let seed = rng.gen();
        (
            vec![vec![m, k], vec![l, k]],
            Box::new(move |g, ids| {
                let y = g.matmul_trans_b(ids[0], ids[1]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("matvec", &|round, rng| {
        let l = len_dim(round, rng);
        let m = rng.gen_range(1..5);
        let seed = rng.gen();
        (
            vec![vec![m, l], vec![l]],
            Box::new(move |g, ids| {
                let y = g.matvec(ids[0], ids[1]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("conv1d", &|round, rng| {
        let l = len_dim(round, rng);
        let (c_in, c_out) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let seed = rng.gen();
        (
            vec![vec![c_in, l], vec![c_out, c_in, 3], vec![c_out]],
            Box::new(move |g, ids| {
                let y = g.conv1d(ids[0], ids[1], ids[2]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("relu", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![l, 3]],
            Box::new(move |g, ids| {
                let y = g.relu(ids[0]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("sigmoid", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![l]],
            Box::new(move |g, ids| {
                let y = g.sigmoid(ids[0]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("tanh", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![l]],
            Box::new(move |g, ids| {
                let y = g.tanh(ids[0]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("row_softmax", &|round, rng| {
        let l = len_dim(round, rng);
        let rows = rng.gen_range(1..4);
        let seed = rng.gen();
        (
            vec![vec![rows, l]],
            Box::new(move |g, ids| {
                let y = g.row_softmax(ids[0]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("softmax_attention", &|round, rng| {
        let l = len_dim(round, rng);
        let (q, d, v) = (
            rng.gen_range(1..3),
            rng.gen_range(1..4),
            rng.gen_range(1..3),
        );
        let seed = rng.gen();
        (
            vec![vec![q, d], vec![l, d], vec![l, v]],
            Box::new(move |g, ids| {
                let (out, weights) = g.attention(ids[0], ids[1], ids[2]);
                let mut prng = ChaCha8Rng::seed_from_u64(seed);
                let po = project(g, out, &mut prng);
                let pw = project(g, weights, &mut prng);
                g.add(po, pw)
            }),
        )
    });

    check("categorical_log_prob", &|round, rng| {
        let k = if round == 0 { 1 } else { rng.gen_range(2..7) };
        let index = rng.gen_range(0..k);
        (
            vec![vec![k]],
            Box::new(move |g, ids| g.categorical_log_prob(ids[0], index)),
        )
    });

    check("entropy", &|round, rng| {
        let k = if round == 0 { 1 } else { rng.gen_range(2..7) };
        (vec![vec![k]], Box::new(move |g, ids| g.entropy(ids[0])))
    });

    check("sum", &|round, rng| {
        let l = len_dim(round, rng);
        (vec![vec![l, 2]], Box::new(move |g, ids| g.sum(ids[0])))
    });

    check("concat", &|round, rng| {
        let l = len_dim(round, rng);
        let m = rng.gen_range(1..4);
        let seed = rng.gen();
        (
            vec![vec![l], vec![m]],
            Box::new(move |g, ids| {
                let y = g.concat(ids);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("slice_col", &|round, rng| {
        let l = len_dim(round, rng);
        let rows = rng.gen_range(1..4);
        let col = rng.gen_range(0..l);
        let seed = rng.gen();
        (
            vec![vec![rows, l]],
            Box::new(move |g, ids| {
                let y = g.slice_col(ids[0], col);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("pick_row", &|round, rng| {
        let l = len_dim(round, rng);
        let rows = rng.gen_range(1..4);
        let row = rng.gen_range(0..rows);
        let seed = rng.gen();
        (
            vec![vec![rows, l]],
            Box::new(move |g, ids| {
                let y = g.pick_row(ids[0], row);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("reshape", &|round, rng| {
        let l = len_dim(round, rng);
        let seed = rng.gen();
        (
            vec![vec![2, l]],
            Box::new(move |g, ids| {
                let y = g.reshape(ids[0], vec![2 * g.value(ids[0]).dims2().1]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("transpose", &|round, rng| {
        let l = len_dim(round, rng);
        let rows = rng.gen_range(1..4);
        let seed = rng.gen();
        (
            vec![vec![rows, l]],
            Box::new(move |g, ids| {
                let y = g.transpose(ids[0]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("dense", &|round, rng| {
        let l = len_dim(round, rng);
        let m = rng.gen_range(1..4);
        let seed = rng.gen();
        (
            vec![vec![m, l], vec![m], vec![l]],
            Box::new(move |g, ids| {
                let y = g.dense(ids[0], ids[1], ids[2]);
                project(g, y, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    check("bilstm", &|round, rng| {
        // Parameters become plain differentiable inputs here, so the check
        // covers backprop-through-time into both weights and the sequence.
        let l = len_dim(round, rng);
        let c_in = rng.gen_range(1..3);
        let hidden = rng.gen_range(1..3);
        let seed = rng.gen();
        let mut shapes = vec![vec![c_in, l]];
        for _dir in 0..2 {
            for _gate in 0..4 {
                shapes.push(vec![hidden, c_in]);
                shapes.push(vec![hidden, hidden]);
                shapes.push(vec![hidden]);
            }
        }
        (
            shapes,
            Box::new(move |g, ids| {
                let out = crate::lstm::bilstm_from_nodes(g, &ids[1..], ids[0]);
                project(g, out, &mut ChaCha8Rng::seed_from_u64(seed))
            }),
        )
    });

    entries
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_f64() {
        for entry in run_suite::<f64>(0xfeed, 6) {
            assert!(
                entry.passed(),
                "{}: max rel err {:.3e} over {} checks (tol {:.0e})",
                entry.op,
                entry.max_rel_err,
                entry.checks,
                entry.tol
            );
        }
    }

    #[test]
    fn suite_passes_at_f32() {
        for entry in run_suite::<f32>(0xbeef, 6) {
            assert!(
                entry.passed(),
                "{}: max rel err {:.3e} over {} checks (tol {:.0e})",
                entry.op,
                entry.max_rel_err,
                entry.checks,
                entry.tol
            );
        }
    }

    #[test]
    fn harness_catches_a_wrong_gradient() {
        // The first builder call produces the analytic pass (f = sum(2x)),
        // every later call serves the finite differences (f = sum(3x));
        // the disagreement must be flagged.
        let calls = std::cell::Cell::new(0usize);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = check_fn_gradients::<f64>(
            &[vec![3]],
            &|g, ids| {
                let n = calls.get();
                calls.set(n + 1);
                let factor = if n == 0 { 2.0 } else { 3.0 };
                let y = g.scale(ids[0], factor);
                g.sum(y)
            },
            &mut rng,
        );
        assert!(err > 0.3, "got {err}");
    }
}
