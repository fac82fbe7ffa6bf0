//! Shared plumbing for the differentiable model: batch/edge index layouts and
//! one-time binding of named parameters onto a tape.
//!
//! Everything downstream (encoder, decoder, graph evolution, losses) works on
//! row-folded 2-D arrays: agent rows `[B·N, ·]` and directed-edge rows
//! `[B·E, ·]` with `E = N(N−1)`. Edges are enumerated receiver-major — for
//! scene `b` and receiver `i`, the `N−1` sender slots are contiguous — so a
//! per-receiver softmax is a reshape away.

use ndarray::{Array2, ArrayView2};
use std::rc::Rc;

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::params::ModelParameters;
use crate::tape::{Tape, Var};

/// Directed-edge enumeration for `batch` scenes of `n` agents each.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub batch: usize,
    pub n: usize,
    /// Receiver agent row (in `[0, B·N)`) per edge row.
    pub recv: Rc<Vec<usize>>,
    /// Sender agent row per edge row.
    pub send: Rc<Vec<usize>>,
}

impl EdgeIndex {
    pub fn new(batch: usize, n: usize) -> Self {
        let e = n * (n - 1);
        let mut recv = Vec::with_capacity(batch * e);
        let mut send = Vec::with_capacity(batch * e);
        for b in 0..batch {
            for i in 0..n {
                for j in 0..n {
                    if j != i {
                        recv.push(b * n + i);
                        send.push(b * n + j);
                    }
                }
            }
        }
        EdgeIndex { batch, n, recv: Rc::new(recv), send: Rc::new(send) }
    }

    /// Edges per scene.
    pub fn per_scene(&self) -> usize {
        self.n * (self.n - 1)
    }

    pub fn num_rows(&self) -> usize {
        self.batch * self.per_scene()
    }

    /// Row of directed edge (receiver `i`, sender `j`) in scene `b`.
    pub fn row_of(&self, b: usize, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        let off = if j < i { j } else { j - 1 };
        b * self.per_scene() + i * (self.n - 1) + off
    }
}

/// Agent rows grouped by category, plus the scene id of every agent row.
#[derive(Clone, Debug)]
pub struct BatchLayout {
    pub batch: usize,
    pub n: usize,
    pub num_categories: usize,
    /// Per category: agent rows (scene-major `b·N + i`) of that category.
    pub cat_rows: Vec<Rc<Vec<usize>>>,
    pub scene_of_agent: Rc<Vec<usize>>,
    pub edges: EdgeIndex,
}

impl BatchLayout {
    pub fn new(categories: ArrayView2<'_, usize>, num_categories: usize) -> Result<Self, Error> {
        let (batch, n) = categories.dim();
        let mut cat_rows = vec![Vec::new(); num_categories];
        for b in 0..batch {
            for i in 0..n {
                let c = categories[[b, i]];
                if c >= num_categories {
                    return Err(Error::Data(format!(
                        "agent (sample {b}, index {i}) has category {c}, config allows 0..{num_categories}"
                    )));
                }
                cat_rows[c].push(b * n + i);
            }
        }
        let scene_of_agent = (0..batch * n).map(|r| r / n).collect();
        Ok(BatchLayout {
            batch,
            n,
            num_categories,
            cat_rows: cat_rows.into_iter().map(Rc::new).collect(),
            scene_of_agent: Rc::new(scene_of_agent),
            edges: EdgeIndex::new(batch, n),
        })
    }

    pub fn agent_rows(&self) -> usize {
        self.batch * self.n
    }
}

/// A three-layer MLP bound onto a tape (ReLU on the two hidden layers,
/// linear output).
#[derive(Clone, Copy)]
pub struct MlpBind {
    l1: (Var, Var),
    l2: (Var, Var),
    l3: (Var, Var),
}

impl MlpBind {
    fn new(tape: &mut Tape, params: &ModelParameters, prefix: &str) -> Self {
        let mut pair = |layer: &str| {
            let w = tape.param(params, params.id(&format!("{prefix}.{layer}.w")));
            let b = tape.param(params, params.id(&format!("{prefix}.{layer}.b")));
            (w, b)
        };
        MlpBind { l1: pair("l1"), l2: pair("l2"), l3: pair("l3") }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let h1 = affine(tape, x, self.l1);
        let h1 = tape.relu(h1);
        let h2 = affine(tape, h1, self.l2);
        let h2 = tape.relu(h2);
        affine(tape, h2, self.l3)
    }
}

/// A stacked GRU bound onto a tape; state is one hidden `Var` per layer.
#[derive(Clone)]
pub struct GruBind {
    layers: Vec<(Var, Var, Var)>,
    hidden_dim: usize,
}

impl GruBind {
    fn new(
        tape: &mut Tape,
        params: &ModelParameters,
        prefix: &str,
        num_layers: usize,
        hidden_dim: usize,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let wx = tape.param(params, params.id(&format!("{prefix}.l{l}.wx")));
                let wh = tape.param(params, params.id(&format!("{prefix}.l{l}.wh")));
                let b = tape.param(params, params.id(&format!("{prefix}.l{l}.b")));
                (wx, wh, b)
            })
            .collect();
        GruBind { layers, hidden_dim }
    }

    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> Vec<Var> {
        self.layers.iter().map(|_| tape.leaf(Array2::zeros((rows, self.hidden_dim)))).collect()
    }

    /// One time step through every layer; `hidden` updated in place. Returns
    /// the top layer's new hidden state.
    pub fn step(&self, tape: &mut Tape, x: Var, hidden: &mut [Var]) -> Var {
        let mut inp = x;
        for (l, &(wx, wh, b)) in self.layers.iter().enumerate() {
            let h = tape.gru_cell(inp, hidden[l], wx, wh, b);
            hidden[l] = h;
            inp = h;
        }
        inp
    }
}

pub fn affine(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Var {
    let y = tape.matmul(x, w);
    tape.add_bias(y, b)
}

/// Every parameter of the model bound onto one tape. Binding once per tape
/// keeps a single node per parameter, so gradients accumulate in one place.
pub struct ModelBind {
    /// Per-category trajectory embedding GRUs.
    pub embed: Vec<GruBind>,
    pub edge1: MlpBind,
    pub attn_w: Var,
    pub attn_a_left: Var,
    pub attn_a_right: Var,
    pub node1: MlpBind,
    pub edge2: MlpBind,
    pub head_w: Var,
    pub head_b: Var,
    /// Context embedding + agent-context edge function, when enabled.
    pub ctx_embed: Option<(Var, Var)>,
    pub ctx_edge: Option<MlpBind>,
    /// Decoder edge functions for types `1..L` (type 0 sends nothing).
    pub dec_edge: Vec<MlpBind>,
    /// Per-category decoder GRUs.
    pub dec_gru: Vec<GruBind>,
    /// Mixture-weight and mean heads, one pair per component.
    pub dec_weight: Vec<(Var, Var)>,
    pub dec_out: Vec<(Var, Var)>,
    pub evo_gru: GruBind,
    pub evo_w_h: Var,
    pub evo_w_z: Var,
    pub evo_b: Var,
}

impl ModelBind {
    pub fn new(tape: &mut Tape, params: &ModelParameters, config: &ExperimentConfig) -> Self {
        let m = config.num_categories_M;
        let l = config.edge_types_L;
        let k = config.mixture_K;
        let h = config.hidden_dim;
        let has_ctx = params.try_id("ctx.embed.w").is_some();
        let pair = |tape: &mut Tape, name: &str| {
            let w = tape.param(params, params.id(&format!("{name}.w")));
            let b = tape.param(params, params.id(&format!("{name}.b")));
            (w, b)
        };
        ModelBind {
            embed: (0..m).map(|c| GruBind::new(tape, params, &format!("enc.embed.m{c}"), 2, h)).collect(),
            edge1: MlpBind::new(tape, params, "enc.edge1"),
            attn_w: tape.param(params, params.id("enc.attn.w")),
            attn_a_left: tape.param(params, params.id("enc.attn.a_left")),
            attn_a_right: tape.param(params, params.id("enc.attn.a_right")),
            node1: MlpBind::new(tape, params, "enc.node1"),
            edge2: MlpBind::new(tape, params, "enc.edge2"),
            head_w: tape.param(params, params.id("enc.head.w")),
            head_b: tape.param(params, params.id("enc.head.b")),
            ctx_embed: has_ctx.then(|| pair(tape, "ctx.embed")),
            ctx_edge: has_ctx.then(|| MlpBind::new(tape, params, "enc.ctx_edge")),
            dec_edge: (1..l).map(|t| MlpBind::new(tape, params, &format!("dec.edge.t{t}"))).collect(),
            dec_gru: (0..m).map(|c| GruBind::new(tape, params, &format!("dec.gru.m{c}"), 2, h)).collect(),
            dec_weight: (0..k).map(|i| pair(tape, &format!("dec.weight.k{i}"))).collect(),
            dec_out: (0..k).map(|i| pair(tape, &format!("dec.out.k{i}"))).collect(),
            evo_gru: GruBind::new(tape, params, "evo.gru", 2, 2 * h),
            evo_w_h: tape.param(params, params.id("evo.head.w_h")),
            evo_w_z: tape.param(params, params.id("evo.head.w_z")),
            evo_b: tape.param(params, params.id("evo.head.b")),
        }
    }
}
