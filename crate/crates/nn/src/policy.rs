//! The controller: a conv stack over the channel matrix, a seq2fixed
//! encoder (learned-query attention or BiLSTM), a feed-forward trunk fused
//! with the fixed context, and output heads for the module choice, one
//! pointer-attention row per tape head, and a value baseline.
//!
//! Every parameter shape is a function of the task's encoding dimensions
//! only, never the tape length.

use rand::Rng;

use tapenet_core::machine::Action;

use crate::context::ContextSpec;
use crate::error::NnError;
use crate::graph::{Graph, NodeId};
use crate::lstm::{bilstm, lstm_param_specs, BiLstmNodes};
use crate::params::{ParamSpec, ParamStore};
use crate::tensor::{entropy_f64, log_prob_f64, s, softmax_f64, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Attention,
    Recurrent,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Attention => "attention",
            EncoderKind::Recurrent => "recurrent",
        }
    }

    pub fn parse(s: &str) -> Option<EncoderKind> {
        match s {
            "attention" => Some(EncoderKind::Attention),
            "recurrent" => Some(EncoderKind::Recurrent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDims {
    pub sigma_channels: usize,
    pub xi_width: usize,
    pub module_count: usize,
    pub read_heads: usize,
    pub write_heads: usize,
    pub conv_channels: usize,
    pub trunk_width: usize,
    pub attn_queries: usize,
    pub lstm_hidden: usize,
}

impl PolicyDims {
    pub fn for_spec(spec: &ContextSpec) -> PolicyDims {
        PolicyDims {
            sigma_channels: spec.sigma_channels(),
            xi_width: spec.xi_width(),
            module_count: spec.module_count,
            read_heads: spec.heads.reads,
            write_heads: spec.heads.writes,
            conv_channels: 64,
            trunk_width: 128,
            attn_queries: 8,
            lstm_hidden: 64,
        }
    }

    /// Shrunken layer widths; same structure, cheap enough for
    /// finite-difference sweeps.
    pub fn compact(spec: &ContextSpec) -> PolicyDims {
        PolicyDims {
            conv_channels: 6,
            trunk_width: 10,
            attn_queries: 2,
            lstm_hidden: 5,
            ..Self::for_spec(spec)
        }
    }

    pub fn head_count(&self) -> usize {
        self.read_heads + self.write_heads
    }

    fn embed_width(&self, encoder: EncoderKind) -> usize {
        match encoder {
            EncoderKind::Attention => self.attn_queries * self.conv_channels,
            EncoderKind::Recurrent => 2 * self.lstm_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyNet {
    pub dims: PolicyDims,
    pub encoder: EncoderKind,
}

/// Registered parameter leaves for one graph.
pub struct PolicyNodes {
    conv1_w: NodeId,
    conv1_b: NodeId,
    conv2_w: NodeId,
    conv2_b: NodeId,
    attn_queries: Option<NodeId>,
    lstm: Option<BiLstmNodes>,
    fc1_w: NodeId,
    fc1_b: NodeId,
    fc2_w: NodeId,
    fc2_b: NodeId,
    module_w: NodeId,
    module_b: NodeId,
    value_w: NodeId,
    value_b: NodeId,
    head_w: Vec<NodeId>,
    head_b: Vec<NodeId>,
}

/// Forward outputs as graph nodes, for the differentiable training path.
pub struct PolicyHeads {
    pub module_logits: NodeId,
    /// [read_heads + write_heads, L]
    pub head_logits: NodeId,
    /// scalar
    pub value: NodeId,
}

/// Forward outputs as plain numbers, for sampling and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub module_logits: Vec<f64>,
    pub head_logits: Vec<Vec<f64>>,
    pub value: f64,
}

impl PolicyNet {
    pub fn new(dims: PolicyDims, encoder: EncoderKind) -> PolicyNet {
        PolicyNet { dims, encoder }
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let d = &self.dims;
        let c = d.conv_channels;
        let t = d.trunk_width;
        let mut specs = vec![
            ParamSpec {
                name: "conv1.w".into(),
                shape: vec![c, d.sigma_channels, 3],
                fan_in: Some(d.sigma_channels * 3),
            },
            ParamSpec {
                name: "conv1.b".into(),
                shape: vec![c],
                fan_in: None,
            },
            ParamSpec {
                name: "conv2.w".into(),
                shape: vec![c, c, 3],
                fan_in: Some(c * 3),
            },
            ParamSpec {
                name: "conv2.b".into(),
                shape: vec![c],
                fan_in: None,
            },
        ];
        match self.encoder {
            EncoderKind::Attention => {
                specs.push(ParamSpec {
                    name: "enc.queries".into(),
                    shape: vec![d.attn_queries, c],
                    fan_in: Some(c),
                });
            }
            EncoderKind::Recurrent => {
                specs.extend(lstm_param_specs("enc.fwd", c, d.lstm_hidden));
                specs.extend(lstm_param_specs("enc.bwd", c, d.lstm_hidden));
            }
        }
        let trunk_in = d.embed_width(self.encoder) + d.xi_width;
        specs.extend([
            ParamSpec {
                name: "trunk.fc1.w".into(),
                shape: vec![t, trunk_in],
                fan_in: Some(trunk_in),
            },
            ParamSpec {
                name: "trunk.fc1.b".into(),
                shape: vec![t],
                fan_in: None,
            },
            ParamSpec {
                name: "trunk.fc2.w".into(),
                shape: vec![t, t],
                fan_in: Some(t),
            },
            ParamSpec {
                name: "trunk.fc2.b".into(),
                shape: vec![t],
                fan_in: None,
            },
            ParamSpec {
                name: "module.w".into(),
                shape: vec![d.module_count, t],
                fan_in: Some(t),
            },
            ParamSpec {
                name: "module.b".into(),
                shape: vec![d.module_count],
                fan_in: None,
            },
            ParamSpec {
                name: "value.w".into(),
                shape: vec![1, t],
                fan_in: Some(t),
            },
            ParamSpec {
                name: "value.b".into(),
                shape: vec![1],
                fan_in: None,
            },
        ]);
        for i in 0..d.head_count() {
            specs.push(ParamSpec {
                name: format!("head.{i}.w"),
                shape: vec![c, t],
                fan_in: Some(t),
            });
            specs.push(ParamSpec {
                name: format!("head.{i}.b"),
                shape: vec![c],
                fan_in: None,
            });
        }
        specs
    }

    /// Fresh parameters: fan-in-scaled uniform weights, zero biases.
    pub fn init_params<S: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<S> {
        let mut store = ParamStore::new();
        for spec in self.param_specs() {
            spec.init_into(&mut store, rng);
        }
        store
    }

    /// Check that a loaded store has exactly this network's parameters.
    pub fn validate_store<S: Scalar>(&self, store: &ParamStore<S>) -> Result<(), NnError> {
        let specs = self.param_specs();
        if store.len() != specs.len() {
            return Err(NnError::Mismatch(format!(
                "expected {} parameter tensors, checkpoint has {}",
                specs.len(),
                store.len()
            )));
        }
        for spec in &specs {
            match store.value(&spec.name) {
                None => {
                    return Err(NnError::Mismatch(format!(
                        "missing parameter `{}`",
                        spec.name
                    )))
                }
                Some(v) if v.shape() != spec.shape => {
                    return Err(NnError::Mismatch(format!(
                        "parameter `{}` has shape {:?}, expected {:?}",
                        spec.name,
                        v.shape(),
                        spec.shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Register every parameter as a leaf of `g`. The leaves can serve any
    /// number of forward passes on the same graph.
    pub fn register<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>) -> PolicyNodes {
        let d = &self.dims;
        let conv1_w = g.param(store, "conv1.w");
        let conv1_b = g.param(store, "conv1.b");
        let conv2_w = g.param(store, "conv2.w");
        let conv2_b = g.param(store, "conv2.b");
        let (attn_queries, lstm) = match self.encoder {
            EncoderKind::Attention => (Some(g.param(store, "enc.queries")), None),
            EncoderKind::Recurrent => (None, Some(BiLstmNodes::register(g, store, "enc"))),
        };
        let fc1_w = g.param(store, "trunk.fc1.w");
        let fc1_b = g.param(store, "trunk.fc1.b");
        let fc2_w = g.param(store, "trunk.fc2.w");
        let fc2_b = g.param(store, "trunk.fc2.b");
        let module_w = g.param(store, "module.w");
        let module_b = g.param(store, "module.b");
        let value_w = g.param(store, "value.w");
        let value_b = g.param(store, "value.b");
        let mut head_w = Vec::new();
        let mut head_b = Vec::new();
        for i in 0..d.head_count() {
            head_w.push(g.param(store, &format!("head.{i}.w")));
            head_b.push(g.param(store, &format!("head.{i}.b")));
        }
        PolicyNodes {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            attn_queries,
            lstm,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            module_w,
            module_b,
            value_w,
            value_b,
            head_w,
            head_b,
        }
    }

    /// One forward pass. `sigma` is [sigma_channels, L], `xi` is [xi_width];
    /// the outputs stay valid for any L without re-initialization.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        nodes: &PolicyNodes,
        xi: &Tensor<S>,
        sigma: &Tensor<S>,
    ) -> PolicyHeads {
        let d = &self.dims;
        assert_eq!(sigma.dims2().0, d.sigma_channels, "sigma channel mismatch");
        assert_eq!(xi.shape(), [d.xi_width], "xi width mismatch");

        let sigma = g.input(sigma.clone());
        let xi = g.input(xi.clone());

        let c1 = g.conv1d(sigma, nodes.conv1_w, nodes.conv1_b);
        let f1 = g.relu(c1);
        let c2 = g.conv1d(f1, nodes.conv2_w, nodes.conv2_b);
        let features = g.relu(c2);
        // Per-position feature columns double as attention keys.
        let keys = g.transpose(features);

        let embed = match self.encoder {
            EncoderKind::Attention => {
                let queries = nodes.attn_queries.expect("attention encoder registered");
                let (summary, _weights) = g.attention(queries, keys, keys);
                g.reshape(summary, vec![d.attn_queries * d.conv_channels])
            }
            EncoderKind::Recurrent => bilstm(g, nodes.lstm.as_ref().unwrap(), features),
        };

        let trunk_in = g.concat(&[embed, xi]);
        let h1_pre = g.dense(nodes.fc1_w, nodes.fc1_b, trunk_in);
        let h1 = g.relu(h1_pre);
        let h2_pre = g.dense(nodes.fc2_w, nodes.fc2_b, h1);
        let h2 = g.relu(h2_pre);

        let module_logits = g.dense(nodes.module_w, nodes.module_b, h2);
        let value_vec = g.dense(nodes.value_w, nodes.value_b, h2);
        let value = g.reshape(value_vec, vec![]);

        let mut queries = Vec::with_capacity(d.head_count());
        for i in 0..d.head_count() {
            queries.push(g.dense(nodes.head_w[i], nodes.head_b[i], h2));
        }
        let stacked = g.concat(&queries);
        let query_mat = g.reshape(stacked, vec![d.head_count(), d.conv_channels]);
        let scores = g.matmul_trans_b(query_mat, keys);
        let head_logits = g.scale(scores, s(1.0 / (d.conv_channels as f64).sqrt()));

        PolicyHeads {
            module_logits,
            head_logits,
            value,
        }
    }

    /// Forward pass through a throwaway graph, extracting plain values.
    pub fn forward_values<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        xi: &Tensor<S>,
        sigma: &Tensor<S>,
    ) -> PolicyOutput {
        let mut g: Graph<S> = Graph::new();
        let nodes = self.register(&mut g, store);
        let heads = self.forward(&mut g, &nodes, xi, sigma);
        self.extract_output(&g, &heads)
    }

    pub fn extract_output<S: Scalar>(&self, g: &Graph<S>, heads: &PolicyHeads) -> PolicyOutput {
        let hl = g.value(heads.head_logits);
        let (rows, _l) = hl.dims2();
        PolicyOutput {
            module_logits: g.value(heads.module_logits).to_f64_vec(),
            head_logits: (0..rows)
                .map(|r| hl.row(r).iter().map(|x| x.to_f64().unwrap()).collect())
                .collect(),
            value: g.value(heads.value).item().to_f64().unwrap(),
        }
    }

    /// Sample module and head positions independently from the softmaxed
    /// logits; the log-probability is the sum over components.
    pub fn sample_action<R: Rng + ?Sized>(&self, out: &PolicyOutput, rng: &mut R) -> (Action, f64) {
        let module = sample_categorical(&out.module_logits, rng);
        let mut logprob = log_prob_f64(&out.module_logits, module);
        let mut positions = Vec::with_capacity(out.head_logits.len());
        for logits in &out.head_logits {
            let pos = sample_categorical(logits, rng);
            logprob += log_prob_f64(logits, pos);
            positions.push(pos);
        }
        let reads = positions[..self.dims.read_heads].to_vec();
        let writes = positions[self.dims.read_heads..].to_vec();
        (
            Action {
                module,
                reads,
                writes,
            },
            logprob,
        )
    }

    /// Log-probability of a concrete action under these outputs.
    pub fn action_logprob(&self, out: &PolicyOutput, action: &Action) -> f64 {
        let mut lp = log_prob_f64(&out.module_logits, action.module);
        for (logits, &pos) in out
            .head_logits
            .iter()
            .zip(action.reads.iter().chain(&action.writes))
        {
            lp += log_prob_f64(logits, pos);
        }
        lp
    }

    /// Sum of the component entropies (module and each head).
    pub fn entropy(&self, out: &PolicyOutput) -> f64 {
        entropy_f64(&out.module_logits)
            + out.head_logits.iter().map(|l| entropy_f64(l)).sum::<f64>()
    }

    /// Greedy argmax action.
    pub fn greedy_action(&self, out: &PolicyOutput) -> Action {
        let module = argmax(&out.module_logits);
        let positions: Vec<usize> = out.head_logits.iter().map(|l| argmax(l)).collect();
        Action {
            module,
            reads: positions[..self.dims.read_heads].to_vec(),
            writes: positions[self.dims.read_heads..].to_vec(),
        }
    }

    /// Differentiable log-probability of an action: the sum of the module
    /// component and one component per head.
    pub fn action_logprob_node<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        heads: &PolicyHeads,
        action: &Action,
    ) -> NodeId {
        let mut parts = vec![g.categorical_log_prob(heads.module_logits, action.module)];
        for (i, &pos) in action.reads.iter().chain(&action.writes).enumerate() {
            let row = g.pick_row(heads.head_logits, i);
            parts.push(g.categorical_log_prob(row, pos));
        }
        g.add_n(&parts)
    }

    /// Differentiable total entropy of the factored distribution.
    pub fn entropy_node<S: Scalar>(&self, g: &mut Graph<S>, heads: &PolicyHeads) -> NodeId {
        let mut parts = vec![g.entropy(heads.module_logits)];
        for i in 0..self.dims.head_count() {
            let row = g.pick_row(heads.head_logits, i);
            parts.push(g.entropy(row));
        }
        g.add_n(&parts)
    }
}

fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let probs = softmax_f64(logits);
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
