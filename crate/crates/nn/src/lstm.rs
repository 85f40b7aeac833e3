//! Bidirectional LSTM over a channels-by-length input, reduced to a fixed
//! embedding by concatenating the final hidden state of each direction.
//! Gradients come from ordinary backprop through the recorded graph.

use rand::Rng;

use crate::graph::{Graph, NodeId};
use crate::params::{ParamSpec, ParamStore};
use crate::tensor::{Scalar, Tensor};

const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// One direction's parameters: per gate, an input weight [hidden, c_in], a
/// recurrent weight [hidden, hidden], and a zero bias.
pub fn lstm_param_specs(prefix: &str, c_in: usize, hidden: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::with_capacity(12);
    for gate in GATES {
        specs.push(ParamSpec {
            name: format!("{prefix}.w_{gate}"),
            shape: vec![hidden, c_in],
            fan_in: Some(c_in),
        });
        specs.push(ParamSpec {
            name: format!("{prefix}.u_{gate}"),
            shape: vec![hidden, hidden],
            fan_in: Some(hidden),
        });
        specs.push(ParamSpec {
            name: format!("{prefix}.b_{gate}"),
            shape: vec![hidden],
            fan_in: None,
        });
    }
    specs
}

pub fn init_lstm_dir<S: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<S>,
    prefix: &str,
    c_in: usize,
    hidden: usize,
    rng: &mut R,
) {
    for spec in lstm_param_specs(prefix, c_in, hidden) {
        spec.init_into(store, rng);
    }
}

pub struct LstmDirNodes {
    w: [NodeId; 4],
    u: [NodeId; 4],
    b: [NodeId; 4],
    hidden: usize,
}

impl LstmDirNodes {
    /// Build from raw leaves in gate order (i, f, g, o), each as (w, u, b);
    /// the gradient-check suite drives the LSTM this way.
    pub fn from_ids<S: Scalar>(g: &Graph<S>, ids: &[NodeId]) -> LstmDirNodes {
        assert_eq!(ids.len(), 12, "an LSTM direction has 12 parameter tensors");
        let pick = |k: usize| [ids[3 * k], ids[3 * k + 1], ids[3 * k + 2]];
        let w = [pick(0)[0], pick(1)[0], pick(2)[0], pick(3)[0]];
        let u = [pick(0)[1], pick(1)[1], pick(2)[1], pick(3)[1]];
        let b = [pick(0)[2], pick(1)[2], pick(2)[2], pick(3)[2]];
        let hidden = g.value(b[0]).len();
        LstmDirNodes { w, u, b, hidden }
    }

    pub fn register<S: Scalar>(
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        prefix: &str,
    ) -> LstmDirNodes {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(g.param(store, &format!("{prefix}.w_{gate}")));
            u.push(g.param(store, &format!("{prefix}.u_{gate}")));
            b.push(g.param(store, &format!("{prefix}.b_{gate}")));
        }
        let hidden = g.value(b[0]).len();
        LstmDirNodes {
            w: w.try_into().unwrap(),
            u: u.try_into().unwrap(),
            b: b.try_into().unwrap(),
            hidden,
        }
    }

    fn gate<S: Scalar>(&self, g: &mut Graph<S>, idx: usize, x: NodeId, h: NodeId) -> NodeId {
        let wx = g.matvec(self.w[idx], x);
        let uh = g.matvec(self.u[idx], h);
        let sum = g.add(wx, uh);
        g.add(sum, self.b[idx])
    }

    /// Run over the given column order, returning the final hidden state.
    fn run<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        input: NodeId,
        cols: impl Iterator<Item = usize>,
    ) -> NodeId {
        let mut h = g.input(Tensor::zeros(&[self.hidden]));
        let mut c = g.input(Tensor::zeros(&[self.hidden]));
        for col in cols {
            let x = g.slice_col(input, col);
            let i_pre = self.gate(g, 0, x, h);
            let f_pre = self.gate(g, 1, x, h);
            let g_pre = self.gate(g, 2, x, h);
            let o_pre = self.gate(g, 3, x, h);
            let i = g.sigmoid(i_pre);
            let f = g.sigmoid(f_pre);
            let g_t = g.tanh(g_pre);
            let o = g.sigmoid(o_pre);
            let fc = g.mul(f, c);
            let ig = g.mul(i, g_t);
            c = g.add(fc, ig);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
        }
        h
    }
}

pub struct BiLstmNodes {
    pub fwd: LstmDirNodes,
    pub bwd: LstmDirNodes,
}

impl BiLstmNodes {
    pub fn register<S: Scalar>(
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        prefix: &str,
    ) -> BiLstmNodes {
        BiLstmNodes {
            fwd: LstmDirNodes::register(g, store, &format!("{prefix}.fwd")),
            bwd: LstmDirNodes::register(g, store, &format!("{prefix}.bwd")),
        }
    }
}

pub fn init_bilstm<S: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<S>,
    prefix: &str,
    c_in: usize,
    hidden: usize,
    rng: &mut R,
) {
    init_lstm_dir(store, &format!("{prefix}.fwd"), c_in, hidden, rng);
    init_lstm_dir(store, &format!("{prefix}.bwd"), c_in, hidden, rng);
}

/// input [C, L] -> [2 * hidden], independent of L.
pub fn bilstm<S: Scalar>(g: &mut Graph<S>, nodes: &BiLstmNodes, input: NodeId) -> NodeId {
    let l = g.value(input).dims2().1;
    assert!(l >= 1, "bilstm needs at least one column");
    let hf = nodes.fwd.run(g, input, 0..l);
    let hb = nodes.bwd.run(g, input, (0..l).rev());
    g.concat(&[hf, hb])
}

/// As [`bilstm`], with parameters given as 24 raw leaves (forward direction
/// first, gate order i/f/g/o, (w, u, b) per gate).
pub fn bilstm_from_nodes<S: Scalar>(g: &mut Graph<S>, params: &[NodeId], input: NodeId) -> NodeId {
    assert_eq!(params.len(), 24, "a BiLSTM has 24 parameter tensors");
    let nodes = BiLstmNodes {
        fwd: LstmDirNodes::from_ids(g, &params[..12]),
        bwd: LstmDirNodes::from_ids(g, &params[12..]),
    };
    bilstm(g, &nodes, input)
}
