//! Parameter storage, initialization, and gradient accumulation.
//!
//! Every trainable array lives in a [`ModelParameters`] bank under a stable
//! dotted name. The declaration order is fixed, which makes checkpoint files
//! and initialization reproducible run-to-run.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;

use crate::config::ExperimentConfig;

/// Index of one parameter array inside a [`ModelParameters`] bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ModelParameters {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl Default for ModelParameters {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelParameters {
    pub fn new() -> Self {
        ModelParameters { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> ParamId {
        match self.index.get(name) {
            Some(&i) => ParamId(i),
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn try_id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Iterates in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }
}

/// Per-parameter gradient buffers, allocated lazily on first touch.
pub struct GradStore {
    slots: Vec<Option<Array2<f64>>>,
}

impl GradStore {
    pub fn new(num_params: usize) -> Self {
        GradStore { slots: (0..num_params).map(|_| None).collect() }
    }

    pub fn accumulate(&mut self, id: ParamId, delta: &Array2<f64>) {
        match &mut self.slots[id.0] {
            Some(g) => *g += delta,
            None => self.slots[id.0] = Some(delta.clone()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.slots[id.0].as_ref()
    }

    pub fn scale(&mut self, factor: f64) {
        for slot in self.slots.iter_mut().flatten() {
            *slot *= factor;
        }
    }

    /// Adds another gradient store into this one (used when a batch is split
    /// into fixed-size micro-batches).
    pub fn merge(&mut self, other: &GradStore) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                match &mut self.slots[i] {
                    Some(acc) => *acc += g,
                    None => self.slots[i] = Some(g.clone()),
                }
            }
        }
    }
}

/// How a parameter array is filled at initialization time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    DenseFanIn,
    /// Square orthogonal blocks per recurrent gate, from Gram-Schmidt on a
    /// standard-normal draw.
    RecurrentOrthogonal,
    Zeros,
    /// Identity matrix; used by the graph-evolution head's logit skip so a
    /// freshly initialized evolution unit passes encoder logits through.
    Identity,
}

/// One entry of the parameter declaration table.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

fn spec(name: String, shape: (usize, usize), init: Init) -> ParamSpec {
    ParamSpec { name, shape, init }
}

fn mlp3(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) {
    out.push(spec(format!("{prefix}.l1.w"), (d_in, d_hidden), Init::DenseFanIn));
    out.push(spec(format!("{prefix}.l1.b"), (1, d_hidden), Init::Zeros));
    out.push(spec(format!("{prefix}.l2.w"), (d_hidden, d_hidden), Init::DenseFanIn));
    out.push(spec(format!("{prefix}.l2.b"), (1, d_hidden), Init::Zeros));
    out.push(spec(format!("{prefix}.l3.w"), (d_hidden, d_out), Init::DenseFanIn));
    out.push(spec(format!("{prefix}.l3.b"), (1, d_out), Init::Zeros));
}

fn gru(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_hidden: usize, layers: usize) {
    for l in 0..layers {
        let inp = if l == 0 { d_in } else { d_hidden };
        out.push(spec(format!("{prefix}.l{l}.wx"), (inp, 3 * d_hidden), Init::DenseFanIn));
        out.push(spec(format!("{prefix}.l{l}.wh"), (d_hidden, 3 * d_hidden), Init::RecurrentOrthogonal));
        out.push(spec(format!("{prefix}.l{l}.b"), (1, 3 * d_hidden), Init::Zeros));
    }
}

/// Full parameter declaration for a model under `config`.
///
/// `context_dim` enables the optional scene-context pathway: a context
/// embedding, an agent-context edge function, a wider node update, and a
/// wider decoder input.
pub fn declare_parameters(config: &ExperimentConfig, context_dim: Option<usize>) -> Vec<ParamSpec> {
    let h = config.hidden_dim;
    let l_types = config.edge_types_L;
    let mut out = Vec::new();

    // Observation encoder. Per-category trajectory embeddings, then edge /
    // node updates with attention-weighted aggregation.
    for m in 0..config.num_categories_M {
        gru(&mut out, &format!("enc.embed.m{m}"), 2, h, 2);
    }
    mlp3(&mut out, "enc.edge1", 2 * h, h, h);
    out.push(spec("enc.attn.w".into(), (h, h), Init::DenseFanIn));
    out.push(spec("enc.attn.a_left".into(), (h, 1), Init::DenseFanIn));
    out.push(spec("enc.attn.a_right".into(), (h, 1), Init::DenseFanIn));
    if context_dim.is_some() {
        mlp3(&mut out, "enc.ctx_edge", 2 * h, h, h);
    }
    let node_in = if context_dim.is_some() { 2 * h } else { h };
    mlp3(&mut out, "enc.node1", node_in, h, h);
    mlp3(&mut out, "enc.edge2", 4 * h, h, h);
    out.push(spec("enc.head.w".into(), (h, l_types), Init::DenseFanIn));
    out.push(spec("enc.head.b".into(), (1, l_types), Init::Zeros));
    if let Some(cd) = context_dim {
        out.push(spec("ctx.embed.w".into(), (cd, h), Init::DenseFanIn));
        out.push(spec("ctx.embed.b".into(), (1, h), Init::Zeros));
    }

    // Recurrent decoder. Edge type 0 is "no edge" and carries no function;
    // types 1..L each get their own message MLP.
    for l in 1..l_types {
        mlp3(&mut out, &format!("dec.edge.t{l}"), 2 * h, h, h);
    }
    let dec_in = h + 2 + if context_dim.is_some() { h } else { 0 };
    for m in 0..config.num_categories_M {
        gru(&mut out, &format!("dec.gru.m{m}"), dec_in, h, 2);
    }
    for k in 0..config.mixture_K {
        out.push(spec(format!("dec.weight.k{k}.w"), (h, 1), Init::DenseFanIn));
        out.push(spec(format!("dec.weight.k{k}.b"), (1, 1), Init::Zeros));
    }
    for k in 0..config.mixture_K {
        out.push(spec(format!("dec.out.k{k}.w"), (h, 2), Init::DenseFanIn));
        out.push(spec(format!("dec.out.k{k}.b"), (1, 2), Init::Zeros));
    }

    // Graph evolution: a per-edge recurrent unit over successive encodings,
    // hidden size twice the model width, consuming and emitting logits. The
    // head combines the recurrent state with a skip from the input logits,
    // initialized to the identity so evolution starts as a pass-through.
    let g = 2 * h;
    gru(&mut out, "evo.gru", l_types, g, 2);
    out.push(spec("evo.head.w_h".into(), (g, l_types), Init::DenseFanIn));
    out.push(spec("evo.head.w_z".into(), (l_types, l_types), Init::Identity));
    out.push(spec("evo.head.b".into(), (1, l_types), Init::Zeros));

    out
}

/// Builds and initializes all parameters for `config`, deterministically from
/// `seed`.
pub fn init_parameters(
    config: &ExperimentConfig,
    context_dim: Option<usize>,
    seed: u64,
) -> ModelParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParameters::new();
    for s in declare_parameters(config, context_dim) {
        let value = match s.init {
            Init::DenseFanIn => {
                let bound = (1.0 / s.shape.0 as f64).sqrt();
                Array2::from_shape_fn(s.shape, |_| rng.random_range(-bound..bound))
            }
            Init::RecurrentOrthogonal => {
                let (h, total) = s.shape;
                assert_eq!(total % h, 0, "recurrent kernel must be gate blocks");
                let gates = total / h;
                let mut w = Array2::zeros(s.shape);
                for gate in 0..gates {
                    let q = random_orthogonal(h, &mut rng);
                    w.slice_mut(ndarray::s![.., gate * h..(gate + 1) * h]).assign(&q);
                }
                w
            }
            Init::Zeros => Array2::zeros(s.shape),
            Init::Identity => Array2::from_shape_fn(s.shape, |(r, c)| if r == c { 1.0 } else { 0.0 }),
        };
        params.insert(&s.name, value);
    }
    params
}

/// Orthogonal matrix via modified Gram-Schmidt on a standard-normal draw.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((n, n), |_| StandardNormal.sample(rng));
    for j in 0..n {
        for k in 0..j {
            let dot: f64 = (0..n).map(|i| a[[i, j]] * a[[i, k]]).sum();
            for i in 0..n {
                a[[i, j]] -= dot * a[[i, k]];
            }
        }
        let norm: f64 = (0..n).map(|i| a[[i, j]] * a[[i, j]]).sum::<f64>().sqrt();
        // A degenerate draw is astronomically unlikely; guard anyway.
        let inv = if norm > 1e-12 { 1.0 / norm } else { 1.0 };
        for i in 0..n {
            a[[i, j]] *= inv;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declaration_covers_every_function_with_consistent_shapes() {
        let cfg = ExperimentConfig::paper();
        let params = init_parameters(&cfg, None, 1);
        let h = cfg.hidden_dim;

        // Two-layer recurrent units at the declared width.
        assert_eq!(params.value(params.id("enc.embed.m0.l0.wx")).dim(), (2, 3 * h));
        assert_eq!(params.value(params.id("enc.embed.m0.l1.wh")).dim(), (h, 3 * h));
        assert_eq!(params.value(params.id("dec.gru.m0.l0.wx")).dim(), (h + 2, 3 * h));
        assert_eq!(params.value(params.id("dec.gru.m0.l1.wh")).dim(), (h, 3 * h));
        // Evolution unit runs at twice the width and maps back to logits.
        assert_eq!(params.value(params.id("evo.gru.l0.wx")).dim(), (cfg.edge_types_L, 6 * h));
        assert_eq!(params.value(params.id("evo.head.w_h")).dim(), (2 * h, cfg.edge_types_L));
        // Message functions and heads.
        assert_eq!(params.value(params.id("enc.edge1.l1.w")).dim(), (2 * h, h));
        assert_eq!(params.value(params.id("enc.edge2.l1.w")).dim(), (4 * h, h));
        assert_eq!(params.value(params.id("enc.head.w")).dim(), (h, cfg.edge_types_L));
        assert_eq!(params.value(params.id("dec.edge.t1.l1.w")).dim(), (2 * h, h));
        assert_eq!(params.value(params.id("dec.out.k0.w")).dim(), (h, 2));

        // Only edge types 1..L carry decoder message functions.
        assert!(params.try_id("dec.edge.t0.l1.w").is_none());
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let cfg = ExperimentConfig::desk();
        let a = init_parameters(&cfg, None, 9);
        let b = init_parameters(&cfg, None, 9);
        let c = init_parameters(&cfg, None, 10);
        for ((_, va), (_, vb)) in a.iter().zip(b.iter()) {
            assert_eq!(va, vb);
        }
        let mut any_differs = false;
        for ((na, va), (_, vc)) in a.iter().zip(c.iter()) {
            if na.ends_with(".b") {
                assert!(va.iter().all(|&x| x == 0.0), "bias {na} not zero");
            } else if va != vc {
                any_differs = true;
            }
        }
        assert!(any_differs, "different seeds must give different weights");
    }

    #[test]
    fn recurrent_kernels_are_orthogonal_per_gate() {
        let cfg = ExperimentConfig::desk();
        let params = init_parameters(&cfg, None, 5);
        let h = cfg.hidden_dim;
        let wh = params.value(params.id("enc.embed.m0.l0.wh"));
        for gate in 0..3 {
            let block = wh.slice(ndarray::s![.., gate * h..(gate + 1) * h]);
            let gram = block.t().dot(&block);
            for r in 0..h {
                for c in 0..h {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert!((gram[[r, c]] - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn evolution_logit_skip_starts_as_identity() {
        let cfg = ExperimentConfig::desk();
        let params = init_parameters(&cfg, None, 0);
        let wz = params.value(params.id("evo.head.w_z"));
        for r in 0..cfg.edge_types_L {
            for c in 0..cfg.edge_types_L {
                assert_eq!(wz[[r, c]], if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn context_pathway_parameters_appear_only_when_enabled() {
        let cfg = ExperimentConfig::desk();
        let without = init_parameters(&cfg, None, 0);
        assert!(without.try_id("ctx.embed.w").is_none());
        assert!(without.try_id("enc.ctx_edge.l1.w").is_none());
        assert_eq!(
            without.value(without.id("enc.node1.l1.w")).dim(),
            (cfg.hidden_dim, cfg.hidden_dim)
        );

        let with = init_parameters(&cfg, Some(4), 0);
        assert_eq!(with.value(with.id("ctx.embed.w")).dim(), (4, cfg.hidden_dim));
        assert_eq!(
            with.value(with.id("enc.node1.l1.w")).dim(),
            (2 * cfg.hidden_dim, cfg.hidden_dim)
        );
        assert_eq!(
            with.value(with.id("dec.gru.m0.l0.wx")).dim(),
            (2 * cfg.hidden_dim + 2, 3 * cfg.hidden_dim)
        );
    }
}
