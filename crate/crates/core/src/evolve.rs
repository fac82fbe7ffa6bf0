//! Dynamic interaction-graph evolution.
//!
//! Every `gap` prediction steps the encoder re-runs on a sliding window of
//! length `T_h` over observed history and the model's own sampled
//! predictions. The fresh edge logits feed a per-edge GRU (weights shared
//! across edges) whose output head mixes its top hidden state with a logit
//! skip connection; the softmaxed result is the adjusted graph z'_β that
//! governs the next decoding segment. Burn-in runs under z'_0.

use ndarray::{Array1, Array2, Array3, ArrayView3};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::decoder::{
    decode_transition_vars, init_decoder_vars, DecoderVars, MixtureStep, RolloutMode, StepVars,
};
use crate::encoder::{
    embed_steps_vars, encode_vars, pack_edge_rows, sample_graph_scenes, unpack_edge_rows,
    InteractionGraph, SampleMode, CONTEXT_EDGE_TYPE,
};
use crate::error::Error;
use crate::model::{BatchLayout, ModelBind};
use crate::params::ModelParameters;
use crate::tape::{softmax_rows, Tape, Var};

#[derive(Debug, Clone)]
pub struct EvolveState {
    /// Number of completed re-encodings; after `k` calls the current graph
    /// is z'_{k−1}.
    pub beta: usize,
    /// Per GRU layer, `[N, N, 2h]`; diagonal slots unused.
    pub gru_hidden: Vec<Array3<f64>>,
    pub current_graph: InteractionGraph,
}

impl EvolveState {
    /// State before any re-encoding: zero hidden and a uniform placeholder
    /// graph (replaced by z'_0 on the first [`reencode`] call).
    pub fn initial(config: &ExperimentConfig, n: usize) -> Self {
        let l = config.edge_types_L;
        let g = 2 * config.hidden_dim;
        let uniform = 1.0 / l as f64;
        let mut probs = Array3::zeros((n, n, l));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    for t in 0..l {
                        probs[[i, j, t]] = uniform;
                    }
                }
            }
        }
        EvolveState {
            beta: 0,
            gru_hidden: vec![Array3::zeros((n, n, g)); 2],
            current_graph: InteractionGraph {
                edge_logits: Array3::zeros((n, n, l)),
                edge_probs: probs.clone(),
                sampled_onehot: probs,
                context_edge_type: None,
            },
        }
    }
}

/// Number of interaction graphs a dynamic rollout produces.
pub fn num_graphs(t_f: usize, gap: usize) -> usize {
    t_f.div_ceil(gap).max(1)
}

/// Re-encoding index β governing 0-based step `u ≥ t_h`: the graph adjusted
/// after ⌊(u − t_h)/gap⌋ slides of the window.
pub fn graph_index_for_step(u: usize, t_h: usize, gap: usize) -> usize {
    (u - t_h) / gap
}

/// Batched evolution-GRU state: per layer `[B·E, 2h]`.
pub struct EvolveVars {
    pub hidden: Vec<Var>,
}

pub fn init_evolve_vars(tape: &mut Tape, bind: &ModelBind, layout: &BatchLayout) -> EvolveVars {
    EvolveVars { hidden: bind.evo_gru.zero_state(tape, layout.edges.num_rows()) }
}

/// One evolution step: recurrence over the encoder logits, then the output
/// head `top·W_h + logits·W_z + b` (the logit skip starts as identity).
pub fn evolve_step_vars(
    tape: &mut Tape,
    bind: &ModelBind,
    state: &mut EvolveVars,
    logits: Var,
) -> Var {
    let top = bind.evo_gru.step(tape, logits, &mut state.hidden);
    let from_hidden = tape.matmul(top, bind.evo_w_h);
    let from_logits = tape.matmul(logits, bind.evo_w_z);
    let mixed = tape.add(from_hidden, from_logits);
    tape.add_bias(mixed, bind.evo_b)
}

/// Re-encodes a window (`window_steps`, length `T_h`, oldest first; the
/// embedding consumes the last `encoding_horizon` of them) and runs the
/// evolution unit. Returns adjusted logits `[B·E, L]`.
pub fn reencode_vars(
    tape: &mut Tape,
    bind: &ModelBind,
    config: &ExperimentConfig,
    layout: &BatchLayout,
    window_steps: &[Var],
    state: &mut EvolveVars,
    context: Option<Var>,
) -> Var {
    let embed_from = window_steps.len() - config.encoding_horizon;
    let self_attr = embed_steps_vars(tape, bind, layout, &window_steps[embed_from..]);
    let enc = encode_vars(tape, bind, config, layout, self_attr, context);
    evolve_step_vars(tape, bind, state, enc.logits)
}

/// Batched dynamic rollout outputs.
pub struct DynRolloutVars {
    pub outputs: Vec<StepVars>,
    /// Adjusted logits per re-encoding index β.
    pub graph_logits: Vec<Var>,
    /// The per-β graph samples the decoder consumed.
    pub graph_samples: Vec<Var>,
    pub decoder: DecoderVars,
}

/// Interleaved decode/re-encode rollout. `history` holds `T_h` leaves
/// `[B·N, 2]`; prediction windows splice in the sampled outputs.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_rollout_vars(
    tape: &mut Tape,
    bind: &ModelBind,
    config: &ExperimentConfig,
    layout: &BatchLayout,
    history: &[Var],
    t_f: usize,
    gap: usize,
    mode: SampleMode,
    context: Option<Var>,
    rngs: &mut [ChaCha8Rng],
) -> DynRolloutVars {
    let t_h = history.len();
    let mut all_steps: Vec<Var> = history.to_vec();
    let mut evo = init_evolve_vars(tape, bind, layout);
    let mut dec = init_decoder_vars(tape, bind, config, layout);

    let mut graph_logits = Vec::new();
    let mut graph_samples = Vec::new();

    let z0 = reencode_vars(tape, bind, config, layout, &all_steps[0..t_h], &mut evo, context);
    let s0 = sample_graph_scenes(tape, z0, config.gumbel_temp, mode, layout, rngs);
    graph_logits.push(z0);
    graph_samples.push(s0);
    let mut current = s0;

    let mut outputs: Vec<StepVars> = Vec::with_capacity((t_h + t_f).saturating_sub(1));
    for s in 0..(t_h + t_f).saturating_sub(1) {
        // The transition into step s+1 runs under graph β(s+1); re-encode at
        // segment boundaries past the first prediction step.
        if s + 1 > t_h && (s + 1 - t_h) % gap == 0 {
            let beta = (s + 1 - t_h) / gap;
            let window = &all_steps[beta * gap..t_h + beta * gap];
            let z = reencode_vars(tape, bind, config, layout, window, &mut evo, context);
            let smp = sample_graph_scenes(tape, z, config.gumbel_temp, mode, layout, rngs);
            graph_logits.push(z);
            graph_samples.push(smp);
            current = smp;
        }
        let input = if s < t_h { history[s] } else { *all_steps.last().expect("pushed") };
        let out = decode_transition_vars(
            tape, bind, config, layout, &mut dec, current, input, context, rngs,
        );
        if s + 1 >= t_h {
            all_steps.push(out.sampled);
        }
        outputs.push(out);
    }

    DynRolloutVars { outputs, graph_logits, graph_samples, decoder: dec }
}

#[derive(Debug, Clone)]
pub struct DynamicRollout {
    /// Per-transition mixtures, burn-in included (`T_h + T_f − 1`).
    pub steps: Vec<MixtureStep>,
    /// `[T_f, N, 2]` sampled trajectory.
    pub sampled: Array3<f64>,
    /// z'_0 .. z'_{⌈T_f/gap⌉−1}.
    pub graphs: Vec<InteractionGraph>,
    pub history_len: usize,
}

impl DynamicRollout {
    pub fn prediction_steps(&self) -> &[MixtureStep] {
        &self.steps[self.history_len - 1..]
    }

    /// Re-encoding index governing 0-based prediction step `u` (`u` counts
    /// from `T_h`).
    pub fn graph_index(&self, u: usize, gap: usize) -> usize {
        graph_index_for_step(u, self.history_len, gap)
    }
}

fn single_scene_layout(config: &ExperimentConfig, categories: &[usize]) -> Result<BatchLayout, Error> {
    let cats = Array2::from_shape_vec((1, categories.len()), categories.to_vec())
        .expect("shape matches length");
    BatchLayout::new(cats.view(), config.num_categories_M)
}

fn graph_from_vars(
    tape: &Tape,
    logits: Var,
    sample: Var,
    n: usize,
    l: usize,
    has_ctx: bool,
) -> InteractionGraph {
    let logit_vals = tape.value(logits);
    InteractionGraph {
        edge_logits: unpack_edge_rows(logit_vals, n, l),
        edge_probs: unpack_edge_rows(&softmax_rows(logit_vals), n, l),
        sampled_onehot: unpack_edge_rows(tape.value(sample), n, l),
        context_edge_type: has_ctx.then_some(CONTEXT_EDGE_TYPE),
    }
}

/// One public re-encoding over `seq` = history plus any predictions so far
/// (`[T_h + β·gap, N, 2]` or longer), advancing `state` to β+1.
#[allow(clippy::too_many_arguments)]
pub fn reencode(
    params: &ModelParameters,
    config: &ExperimentConfig,
    seq: ArrayView3<'_, f64>,
    categories: &[usize],
    context_attr: Option<&Array1<f64>>,
    state: &EvolveState,
    mode: SampleMode,
    rng: &mut ChaCha8Rng,
) -> Result<EvolveState, Error> {
    let (len, n, _) = seq.dim();
    let t_h = config.history_len_T_h;
    let gap = config.reencode_gap;
    let need = t_h + state.beta * gap;
    if len < need {
        return Err(Error::Data(format!(
            "sequence has {len} steps, re-encoding index {} needs at least {need}",
            state.beta
        )));
    }
    if n != categories.len() {
        return Err(Error::Data(format!(
            "sequence covers {n} agents, {} categories supplied",
            categories.len()
        )));
    }
    let l = config.edge_types_L;
    if n == 1 {
        let mut next = EvolveState::initial(config, 1);
        next.beta = state.beta + 1;
        next.current_graph.context_edge_type = context_attr.map(|_| CONTEXT_EDGE_TYPE);
        return Ok(next);
    }

    let layout = single_scene_layout(config, categories)?;
    let mut tape = Tape::new();
    let bind = ModelBind::new(&mut tape, params, config);
    let window: Vec<Var> = (state.beta * gap..need)
        .map(|t| tape.leaf(seq.slice(ndarray::s![t, .., ..]).to_owned()))
        .collect();
    let mut evo = EvolveVars {
        hidden: state
            .gru_hidden
            .iter()
            .map(|h| {
                let packed = pack_edge_rows(h, n, 2 * config.hidden_dim);
                tape.leaf(packed)
            })
            .collect(),
    };
    let ctx = context_attr.map(|vc| {
        tape.leaf(Array2::from_shape_vec((1, vc.len()), vc.to_vec()).expect("row vector"))
    });
    let z = reencode_vars(&mut tape, &bind, config, &layout, &window, &mut evo, ctx);
    let smp =
        sample_graph_scenes(&mut tape, z, config.gumbel_temp, mode, &layout, std::slice::from_mut(rng));

    Ok(EvolveState {
        beta: state.beta + 1,
        gru_hidden: evo
            .hidden
            .iter()
            .map(|&h| unpack_edge_rows(tape.value(h), n, 2 * config.hidden_dim))
            .collect(),
        current_graph: graph_from_vars(&tape, z, smp, n, l, context_attr.is_some()),
    })
}

/// Full dynamic pipeline for one scene: alternating decode segments of
/// length `gap` and re-encodings, starting from the pure-history graph z'_0.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_rollout(
    params: &ModelParameters,
    config: &ExperimentConfig,
    history: ArrayView3<'_, f64>,
    categories: &[usize],
    context_attr: Option<&Array1<f64>>,
    t_f: usize,
    gap: usize,
    mode: SampleMode,
    _rollout_mode: RolloutMode,
    rng: &mut ChaCha8Rng,
) -> Result<DynamicRollout, Error> {
    if gap == 0 {
        return Err(Error::Config(vec!["re-encoding gap must be positive".into()]));
    }
    let (t_h, n, _) = history.dim();
    if t_h != config.history_len_T_h {
        return Err(Error::Data(format!(
            "history has {t_h} steps, config history_len_T_h is {}",
            config.history_len_T_h
        )));
    }
    if n != categories.len() {
        return Err(Error::Data(format!(
            "history covers {n} agents, {} categories supplied",
            categories.len()
        )));
    }
    let layout = single_scene_layout(config, categories)?;
    let mut tape = Tape::new();
    let bind = ModelBind::new(&mut tape, params, config);
    let steps: Vec<Var> = (0..t_h)
        .map(|t| tape.leaf(history.slice(ndarray::s![t, .., ..]).to_owned()))
        .collect();
    let ctx = context_attr.map(|vc| {
        tape.leaf(Array2::from_shape_vec((1, vc.len()), vc.to_vec()).expect("row vector"))
    });
    let run = dynamic_rollout_vars(
        &mut tape, &bind, config, &layout, &steps, t_f, gap, mode, ctx, std::slice::from_mut(rng),
    );

    let k = config.mixture_K;
    let mix_steps: Vec<MixtureStep> = run
        .outputs
        .iter()
        .map(|o| {
            let weights = tape.value(o.weights).clone();
            let mut means = Array3::zeros((n, k, 2));
            for (c, &m) in o.means.iter().enumerate() {
                let v = tape.value(m);
                for i in 0..n {
                    means[[i, c, 0]] = v[[i, 0]];
                    means[[i, c, 1]] = v[[i, 1]];
                }
            }
            MixtureStep { weights, means, sigma: config.sigma }
        })
        .collect();
    let mut sampled = Array3::zeros((t_f, n, 2));
    if t_f > 0 {
        for (ti, o) in run.outputs[t_h - 1..].iter().enumerate() {
            sampled.slice_mut(ndarray::s![ti, .., ..]).assign(tape.value(o.sampled));
        }
    }
    let graphs = run
        .graph_logits
        .iter()
        .zip(&run.graph_samples)
        .map(|(&z, &s)| graph_from_vars(&tape, z, s, n, config.edge_types_L, context_attr.is_some()))
        .collect();
    Ok(DynamicRollout { steps: mix_steps, sampled, graphs, history_len: t_h })
}
