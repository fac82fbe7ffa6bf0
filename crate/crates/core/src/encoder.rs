//! Observation-graph construction and edge-type inference.
//!
//! Agents embed their recent trajectory through a per-category GRU
//! (self-attributes), then attention-weighted message passing produces edge
//! and social attributes round by round; a linear head on the final edge
//! attributes yields per-edge categorical logits over interaction types,
//! sampled via Gumbel-softmax.
//!
//! The batched `*_vars` builders are the single source of truth for the
//! math; the per-sample functions wrap them with a throwaway tape.

use ndarray::{s, Array1, Array2, Array3, ArrayView3};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::model::{affine, BatchLayout, ModelBind};
use crate::params::ModelParameters;
use crate::rngutil::gumbel_array;
use crate::tape::{softmax_rows, Tape, Var};

/// Negative slope of the attention score nonlinearity.
pub const ATTENTION_LEAKY_SLOPE: f64 = 0.2;
/// Edge type assigned to agent-context edges with probability one.
pub const CONTEXT_EDGE_TYPE: usize = 1;

#[derive(Debug, Clone)]
pub struct ObservationGraph {
    /// `[N, h]` — fixed trajectory embeddings, never modified by passing.
    pub self_attr: Array2<f64>,
    /// `[N, h]` — social attributes after the final update round.
    pub social_attr: Array2<f64>,
    /// `[N, 2h]` — `[self_attr, social_attr]`.
    pub node_attr: Array2<f64>,
    /// `[N, N, h]` — first-round edge attributes; diagonal unused.
    pub edge_attr_round1: Array3<f64>,
    /// `[N, N, h]` — final-round edge attributes; diagonal unused.
    pub edge_attr_round2: Array3<f64>,
    /// `[N, N]` — rows sum to 1 over senders; diagonal zero.
    pub attention: Array2<f64>,
    pub context_attr: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct InteractionGraph {
    pub edge_logits: Array3<f64>,
    /// `[N, N, L]` — softmax of logits; off-diagonal rows sum to 1.
    pub edge_probs: Array3<f64>,
    /// Relaxed or hard sample (mean mode repeats `edge_probs`).
    pub sampled_onehot: Array3<f64>,
    /// Designated type for agent-context edges, present when the graph was
    /// built with context.
    pub context_edge_type: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Differentiable Gumbel-softmax sample at the configured temperature.
    Relaxed,
    /// One-hot arg-max of Gumbel-perturbed logits.
    Hard,
    /// Noise-free softmax probabilities (edge-accuracy evaluation and
    /// deterministic rollouts).
    Mean,
}

/// Batched encoder outputs on a tape. Agent rows `[B·N, ·]`, edge rows
/// `[B·E, ·]` in receiver-major order.
pub struct EncodedVars {
    pub self_attr: Var,
    pub social_attr: Var,
    pub node_attr: Var,
    pub edge_round1: Var,
    pub edge_final: Var,
    /// `None` for single-agent scenes (no edges).
    pub attention: Option<Var>,
    pub logits: Var,
}

/// Runs the per-category embedding GRUs over `steps` (each `[B·N, 2]`,
/// oldest first) and returns the final top-layer hidden state `[B·N, h]`.
pub fn embed_steps_vars(
    tape: &mut Tape,
    bind: &ModelBind,
    layout: &BatchLayout,
    steps: &[Var],
) -> Var {
    let rows = layout.agent_rows();
    let mut out: Option<Var> = None;
    for (c, rows_c) in layout.cat_rows.iter().enumerate() {
        if rows_c.is_empty() {
            continue;
        }
        let gru = &bind.embed[c];
        let mut hidden = gru.zero_state(tape, rows_c.len());
        let mut top = None;
        for &s in steps {
            let x = tape.gather_rows(s, rows_c.clone());
            top = Some(gru.step(tape, x, &mut hidden));
        }
        let scattered = tape.scatter_add_rows(top.expect("at least one step"), rows_c.clone(), rows);
        out = Some(match out {
            Some(acc) => tape.add(acc, scattered),
            None => scattered,
        });
    }
    out.expect("at least one agent")
}

/// Message passing and the edge-type head. `context` is the embedded context
/// attribute per scene, `[B, h]`.
pub fn encode_vars(
    tape: &mut Tape,
    bind: &ModelBind,
    config: &ExperimentConfig,
    layout: &BatchLayout,
    self_attr: Var,
    context: Option<Var>,
) -> EncodedVars {
    let h = config.hidden_dim;
    let n = layout.n;
    let rows = layout.agent_rows();

    // Agent-context edge attributes are computed once from self-attributes
    // and reused in every round, like the attention coefficients.
    let ctx_edge = match (context, &bind.ctx_edge) {
        (Some(vc), Some(mlp)) => {
            let vc_rows = tape.gather_rows(vc, layout.scene_of_agent.clone());
            let cat = tape.concat_cols(&[self_attr, vc_rows]);
            Some(mlp.apply(tape, cat))
        }
        _ => None,
    };

    if n == 1 {
        // No edges; the social attribute comes from the zero aggregate.
        let agg = tape.leaf(Array2::zeros((rows, h)));
        let social_in = match ctx_edge {
            Some(ce) => tape.concat_cols(&[agg, ce]),
            None => agg,
        };
        let social = bind.node1.apply(tape, social_in);
        let node = tape.concat_cols(&[self_attr, social]);
        let empty_h = tape.leaf(Array2::zeros((0, h)));
        let empty_l = tape.leaf(Array2::zeros((0, config.edge_types_L)));
        return EncodedVars {
            self_attr,
            social_attr: social,
            node_attr: node,
            edge_round1: empty_h,
            edge_final: empty_h,
            attention: None,
            logits: empty_l,
        };
    }

    let recv = layout.edges.recv.clone();
    let send = layout.edges.send.clone();
    let e_rows = layout.edges.num_rows();

    let self_recv = tape.gather_rows(self_attr, recv.clone());
    let self_send = tape.gather_rows(self_attr, send.clone());
    let pair1 = tape.concat_cols(&[self_recv, self_send]);
    let edge1 = bind.edge1.apply(tape, pair1);

    // Attention over senders, computed from the (fixed) self-attributes:
    // score_ij = LeakyReLU(a_leftᵀ W v_i + a_rightᵀ W v_j), softmax over j≠i.
    let wv = tape.matmul(self_attr, bind.attn_w);
    let left = tape.matmul(wv, bind.attn_a_left);
    let right = tape.matmul(wv, bind.attn_a_right);
    let score_left = tape.gather_rows(left, recv.clone());
    let score_right = tape.gather_rows(right, send.clone());
    let score = tape.add(score_left, score_right);
    let score = tape.leaky_relu(score, ATTENTION_LEAKY_SLOPE);
    let per_receiver = tape.reshape(score, rows, n - 1);
    let alpha_rows = tape.softmax_rows(per_receiver);
    let alpha = tape.reshape(alpha_rows, e_rows, 1);

    let mut edge_attr = edge1;
    let mut social = None;
    let mut node = self_attr;
    for _round in 2..=config.passing_rounds {
        let weighted = tape.mul_col_broadcast(edge_attr, alpha);
        let agg = tape.scatter_add_rows(weighted, recv.clone(), rows);
        let social_in = match ctx_edge {
            Some(ce) => tape.concat_cols(&[agg, ce]),
            None => agg,
        };
        let s = bind.node1.apply(tape, social_in);
        node = tape.concat_cols(&[self_attr, s]);
        social = Some(s);
        let node_recv = tape.gather_rows(node, recv.clone());
        let node_send = tape.gather_rows(node, send.clone());
        let pair = tape.concat_cols(&[node_recv, node_send]);
        edge_attr = bind.edge2.apply(tape, pair);
    }

    let logits = affine(tape, edge_attr, (bind.head_w, bind.head_b));
    EncodedVars {
        self_attr,
        social_attr: social.expect("passing_rounds >= 2"),
        node_attr: node,
        edge_round1: edge1,
        edge_final: edge_attr,
        attention: Some(alpha),
        logits,
    }
}

/// Differentiable Gumbel-softmax sample, `softmax((logits + g)/temp)`.
pub fn relaxed_sample_vars(tape: &mut Tape, logits: Var, temp: f64, rng: &mut ChaCha8Rng) -> Var {
    let (rows, cols) = tape.shape(logits);
    let g = tape.leaf(gumbel_array(rng, rows, cols));
    let noisy = tape.add(logits, g);
    let scaled = tape.scale(noisy, 1.0 / temp);
    tape.softmax_rows(scaled)
}

/// Graph sample over a batch with per-scene noise streams: the rows of
/// scene `p` draw from `rngs[p]` (relaxed and hard modes consume `E × L`
/// values each; mean mode consumes none). Keeping the noise keyed to the
/// scene rather than the batch position makes batched losses invariant to
/// sample order.
pub fn sample_graph_scenes(
    tape: &mut Tape,
    logits: Var,
    temp: f64,
    mode: SampleMode,
    layout: &BatchLayout,
    rngs: &mut [ChaCha8Rng],
) -> Var {
    let (rows, cols) = tape.shape(logits);
    let per = layout.edges.per_scene();
    match mode {
        SampleMode::Relaxed => {
            let mut g = Array2::zeros((rows, cols));
            for (p, r) in rngs.iter_mut().enumerate() {
                g.slice_mut(s![p * per..(p + 1) * per, ..])
                    .assign(&gumbel_array(r, per, cols));
            }
            let g = tape.leaf(g);
            let noisy = tape.add(logits, g);
            let scaled = tape.scale(noisy, 1.0 / temp);
            tape.softmax_rows(scaled)
        }
        SampleMode::Hard => {
            let vals = tape.value(logits).clone();
            let mut out = Array2::zeros((rows, cols));
            for (p, r) in rngs.iter_mut().enumerate() {
                let block = vals.slice(s![p * per..(p + 1) * per, ..]).to_owned();
                out.slice_mut(s![p * per..(p + 1) * per, ..]).assign(&hard_sample(&block, r));
            }
            tape.leaf(out)
        }
        SampleMode::Mean => tape.softmax_rows(logits),
    }
}

/// One-hot arg-max of Gumbel-perturbed logits (consumes `rows × cols` draws,
/// row-major, like the relaxed path).
pub fn hard_sample(logits: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (rows, cols) = logits.dim();
    let g = gumbel_array(rng, rows, cols);
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..cols {
            let v = logits[[r, c]] + g[[r, c]];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        out[[r, best]] = 1.0;
    }
    out
}

fn check_finite(name: &str, values: impl IntoIterator<Item = f64>) -> Result<(), Error> {
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Data(format!("{name} contains non-finite value {v} at flat index {i}")));
        }
    }
    Ok(())
}

fn single_scene_layout(config: &ExperimentConfig, categories: &[usize]) -> Result<BatchLayout, Error> {
    let cats = Array2::from_shape_vec((1, categories.len()), categories.to_vec())
        .expect("shape matches length");
    BatchLayout::new(cats.view(), config.num_categories_M)
}

/// Self-attributes for one scene: `window` is `[T_w, N, 2]` with
/// `T_w = encoding_horizon`, oldest step first.
pub fn embed_agents(
    params: &ModelParameters,
    config: &ExperimentConfig,
    window: ArrayView3<'_, f64>,
    categories: &[usize],
) -> Result<Array2<f64>, Error> {
    let (t_w, n, d) = window.dim();
    if t_w != config.encoding_horizon {
        return Err(Error::Data(format!(
            "window has {t_w} steps, encoding_horizon is {}",
            config.encoding_horizon
        )));
    }
    if d != 2 || n != categories.len() {
        return Err(Error::Data(format!(
            "window shape [{t_w}, {n}, {d}] does not match {} categories of planar agents",
            categories.len()
        )));
    }
    check_finite("positions window", window.iter().copied())?;

    let layout = single_scene_layout(config, categories)?;
    let mut tape = Tape::new();
    let bind = ModelBind::new(&mut tape, params, config);
    let steps: Vec<Var> = (0..t_w)
        .map(|t| tape.leaf(window.slice(ndarray::s![t, .., ..]).to_owned()))
        .collect();
    let out = embed_steps_vars(&mut tape, &bind, &layout, &steps);
    Ok(tape.value(out).clone())
}

/// Embeds a raw context feature vector into the context node attribute `v_c`.
pub fn embed_context(
    params: &ModelParameters,
    features: &Array1<f64>,
) -> Result<Array1<f64>, Error> {
    let w_id = params.try_id("ctx.embed.w").ok_or_else(|| {
        Error::Data("model has no context pathway (initialized without context_dim)".into())
    })?;
    check_finite("context features", features.iter().copied())?;
    let w = params.value(w_id);
    if features.len() != w.dim().0 {
        return Err(Error::Data(format!(
            "context features have length {}, embedding expects {}",
            features.len(),
            w.dim().0
        )));
    }
    let b = params.value(params.id("ctx.embed.b"));
    let out = features.dot(w) + &b.row(0);
    Ok(out)
}

/// Full message passing for one scene.
pub fn message_passing(
    params: &ModelParameters,
    config: &ExperimentConfig,
    self_attr: &Array2<f64>,
    context_attr: Option<&Array1<f64>>,
) -> Result<ObservationGraph, Error> {
    let (n, h) = self_attr.dim();
    if h != config.hidden_dim {
        return Err(Error::Data(format!(
            "self_attr has width {h}, hidden_dim is {}",
            config.hidden_dim
        )));
    }
    check_finite("self_attr", self_attr.iter().copied())?;
    if let Some(vc) = context_attr {
        check_finite("context_attr", vc.iter().copied())?;
    }

    let layout = single_scene_layout(config, &vec![0; n])?;
    let mut tape = Tape::new();
    let bind = ModelBind::new(&mut tape, params, config);
    let sa = tape.leaf(self_attr.clone());
    let ctx = context_attr
        .map(|vc| tape.leaf(Array2::from_shape_vec((1, vc.len()), vc.to_vec()).expect("row vector")));
    let enc = encode_vars(&mut tape, &bind, config, &layout, sa, ctx);

    let attention = match enc.attention {
        Some(a) => unpack_edge_cols(&tape.value(a).column(0).to_owned(), n),
        None => Array2::zeros((n, n)),
    };
    Ok(ObservationGraph {
        self_attr: self_attr.clone(),
        social_attr: tape.value(enc.social_attr).clone(),
        node_attr: tape.value(enc.node_attr).clone(),
        edge_attr_round1: unpack_edge_rows(tape.value(enc.edge_round1), n, h),
        edge_attr_round2: unpack_edge_rows(tape.value(enc.edge_final), n, h),
        attention,
        context_attr: context_attr.cloned(),
    })
}

/// Edge-type inference from final edge attributes.
pub fn infer_edges(
    params: &ModelParameters,
    config: &ExperimentConfig,
    graph: &ObservationGraph,
    gumbel_temp: f64,
    rng: &mut ChaCha8Rng,
    mode: SampleMode,
) -> Result<InteractionGraph, Error> {
    if !(gumbel_temp > 0.0) {
        return Err(Error::Config(vec![format!(
            "gumbel_temp must be positive, got {gumbel_temp}"
        )]));
    }
    let n = graph.self_attr.dim().0;
    let l = config.edge_types_L;
    check_finite("edge_attr_round2", graph.edge_attr_round2.iter().copied())?;
    let ctx_type = graph.context_attr.as_ref().map(|_| CONTEXT_EDGE_TYPE);
    if n == 1 {
        return Ok(InteractionGraph {
            edge_logits: Array3::zeros((1, 1, l)),
            edge_probs: Array3::zeros((1, 1, l)),
            sampled_onehot: Array3::zeros((1, 1, l)),
            context_edge_type: ctx_type,
        });
    }

    let h = config.hidden_dim;
    let edge_rows = pack_edge_rows(&graph.edge_attr_round2, n, h);
    let mut tape = Tape::new();
    let w = tape.param(params, params.id("enc.head.w"));
    let b = tape.param(params, params.id("enc.head.b"));
    let e = tape.leaf(edge_rows);
    let logits = affine(&mut tape, e, (w, b));
    let logit_vals = tape.value(logits).clone();
    let probs = softmax_rows(&logit_vals);

    let sampled = match mode {
        SampleMode::Relaxed => {
            let s = relaxed_sample_vars(&mut tape, logits, gumbel_temp, rng);
            tape.value(s).clone()
        }
        SampleMode::Hard => hard_sample(&logit_vals, rng),
        SampleMode::Mean => probs.clone(),
    };

    Ok(InteractionGraph {
        edge_logits: unpack_edge_rows(&logit_vals, n, l),
        edge_probs: unpack_edge_rows(&probs, n, l),
        sampled_onehot: unpack_edge_rows(&sampled, n, l),
        context_edge_type: ctx_type,
    })
}

/// Off-diagonal entries of `[N, N, d]`, receiver-major, as `[E, d]`.
pub fn pack_edge_rows(m: &Array3<f64>, n: usize, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n * (n - 1), d));
    let mut r = 0;
    for i in 0..n {
        for j in 0..n {
            if j != i {
                for k in 0..d {
                    out[[r, k]] = m[[i, j, k]];
                }
                r += 1;
            }
        }
    }
    out
}

/// Inverse of [`pack_edge_rows`]; diagonal slots zero.
pub fn unpack_edge_rows(rows: &Array2<f64>, n: usize, d: usize) -> Array3<f64> {
    let mut out = Array3::zeros((n, n, d));
    let mut r = 0;
    for i in 0..n {
        for j in 0..n {
            if j != i {
                for k in 0..d {
                    out[[i, j, k]] = rows[[r, k]];
                }
                r += 1;
            }
        }
    }
    out
}

fn unpack_edge_cols(col: &Array1<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, n));
    let mut r = 0;
    for i in 0..n {
        for j in 0..n {
            if j != i {
                out[[i, j]] = col[r];
                r += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_parameters;
    use crate::rngutil::stream_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tiny_config(n: usize, m: usize) -> ExperimentConfig {
        ExperimentConfig {
            num_agents_N: n,
            num_categories_M: m,
            history_len_T_h: 4,
            future_len_T_f: 3,
            encoding_horizon: 3,
            hidden_dim: 6,
            ..ExperimentConfig::desk()
        }
    }

    fn ramp_window(t_w: usize, n: usize) -> Array3<f64> {
        Array3::from_shape_fn((t_w, n, 2), |(t, i, d)| {
            0.1 * t as f64 + 0.3 * i as f64 - 0.2 * d as f64
        })
    }

    #[test]
    fn same_category_same_window_same_embedding() {
        let cfg = tiny_config(3, 1);
        let params = init_parameters(&cfg, None, 5);
        let mut w = ramp_window(3, 3);
        // Give agents 0 and 2 identical windows.
        for t in 0..3 {
            for d in 0..2 {
                w[[t, 2, d]] = w[[t, 0, d]];
            }
        }
        let e = embed_agents(&params, &cfg, w.view(), &[0, 0, 0]).unwrap();
        for k in 0..6 {
            assert_eq!(e[[0, k]], e[[2, k]]);
            assert_ne!(e[[0, k]], e[[1, k]]);
        }
    }

    #[test]
    fn different_categories_embed_differently() {
        let cfg = tiny_config(2, 2);
        let params = init_parameters(&cfg, None, 5);
        let mut w = ramp_window(3, 2);
        for t in 0..3 {
            for d in 0..2 {
                w[[t, 1, d]] = w[[t, 0, d]];
            }
        }
        let e = embed_agents(&params, &cfg, w.view(), &[0, 1]).unwrap();
        let max_diff = (0..6).map(|k| (e[[0, k]] - e[[1, k]]).abs()).fold(0.0, f64::max);
        assert!(max_diff > 0.0, "distinct category parameters must separate embeddings");
    }

    #[test]
    fn permuting_agents_permutes_embeddings() {
        let cfg = tiny_config(3, 1);
        let params = init_parameters(&cfg, None, 5);
        let w = ramp_window(3, 3);
        let e = embed_agents(&params, &cfg, w.view(), &[0, 0, 0]).unwrap();
        let perm = [2usize, 0, 1];
        let wp = Array3::from_shape_fn((3, 3, 2), |(t, i, d)| w[[t, perm[i], d]]);
        let ep = embed_agents(&params, &cfg, wp.view(), &[0, 0, 0]).unwrap();
        for i in 0..3 {
            for k in 0..6 {
                assert_eq!(ep[[i, k]], e[[perm[i], k]]);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = tiny_config(4, 1);
        let params = init_parameters(&cfg, None, 11);
        let sa = Array2::from_shape_fn((4, 6), |(i, k)| ((i * 7 + k) as f64 * 0.37).sin());
        let g = message_passing(&params, &cfg, &sa, None).unwrap();
        for i in 0..4 {
            let row: f64 = (0..4).map(|j| g.attention[[i, j]]).sum();
            assert_abs_diff_eq!(row, 1.0, epsilon = 1e-12);
            assert_eq!(g.attention[[i, i]], 0.0);
            for j in 0..4 {
                assert!(g.attention[[i, j]] >= 0.0);
            }
        }
        // Self-attributes pass through untouched.
        assert_eq!(g.self_attr, sa);
        for i in 0..4 {
            for k in 0..6 {
                assert_eq!(g.node_attr[[i, k]], sa[[i, k]]);
                assert_eq!(g.node_attr[[i, 6 + k]], g.social_attr[[i, k]]);
            }
        }
    }

    #[test]
    fn identical_senders_split_attention_evenly() {
        let cfg = tiny_config(3, 1);
        let params = init_parameters(&cfg, None, 3);
        let mut sa = Array2::from_shape_fn((3, 6), |(i, k)| ((i + 2 * k) as f64 * 0.21).cos());
        // Senders 1 and 2 identical from receiver 0's perspective.
        for k in 0..6 {
            sa[[2, k]] = sa[[1, k]];
        }
        let g = message_passing(&params, &cfg, &sa, None).unwrap();
        assert_abs_diff_eq!(g.attention[[0, 1]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.attention[[0, 2]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_agent_has_empty_edges_and_social_from_zero_aggregate() {
        let cfg = tiny_config(1, 1);
        let params = init_parameters(&cfg, None, 9);
        let sa = Array2::from_shape_fn((1, 6), |(_, k)| 0.1 * k as f64);
        let g = message_passing(&params, &cfg, &sa, None).unwrap();
        assert_eq!(g.attention, Array2::<f64>::zeros((1, 1)));
        assert_eq!(g.edge_attr_round2, Array3::<f64>::zeros((1, 1, 6)));
        assert!(g.social_attr.iter().all(|v| v.is_finite()));
        let ig = infer_edges(&params, &cfg, &g, 0.5, &mut stream_rng(0, 0), SampleMode::Mean).unwrap();
        assert_eq!(ig.edge_probs, Array3::<f64>::zeros((1, 1, 2)));
    }

    #[test]
    fn zero_logits_give_uniform_mean_probs() {
        let cfg = tiny_config(2, 1);
        let mut params = init_parameters(&cfg, None, 13);
        params.value_mut(params.id("enc.head.w")).fill(0.0);
        params.value_mut(params.id("enc.head.b")).fill(0.0);
        let sa = Array2::from_shape_fn((2, 6), |(i, k)| (i as f64 + 0.3) * (k as f64 - 2.0));
        let g = message_passing(&params, &cfg, &sa, None).unwrap();
        let ig = infer_edges(&params, &cfg, &g, 0.5, &mut stream_rng(0, 0), SampleMode::Mean).unwrap();
        assert_abs_diff_eq!(ig.edge_probs[[0, 1, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ig.edge_probs[[1, 0, 1]], 0.5, epsilon = 1e-15);
        assert_eq!(ig.sampled_onehot, ig.edge_probs);
    }

    #[test]
    fn relaxed_rows_sum_to_one_and_freeze_at_low_temperature() {
        let cfg = tiny_config(3, 1);
        let params = init_parameters(&cfg, None, 21);
        let sa = Array2::from_shape_fn((3, 6), |(i, k)| ((i * 5 + k) as f64 * 0.13).sin());
        let g = message_passing(&params, &cfg, &sa, None).unwrap();
        let ig = infer_edges(&params, &cfg, &g, 0.5, &mut stream_rng(1, 0), SampleMode::Relaxed).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let s: f64 = (0..2).map(|l| ig.sampled_onehot[[i, j, l]]).sum();
                    assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
                }
            }
        }
        let cold = infer_edges(&params, &cfg, &g, 1e-3, &mut stream_rng(1, 1), SampleMode::Relaxed).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let max = (0..2).map(|l| cold.sampled_onehot[[i, j, l]]).fold(0.0, f64::max);
                    assert!(max >= 1.0 - 1e-6, "low-temperature sample not one-hot: {max}");
                }
            }
        }
    }

    #[test]
    fn hard_mode_returns_one_hot_rows() {
        let cfg = tiny_config(3, 1);
        let params = init_parameters(&cfg, None, 2);
        let sa = Array2::from_shape_fn((3, 6), |(i, k)| ((i + k) as f64 * 0.41).cos());
        let g = message_passing(&params, &cfg, &sa, None).unwrap();
        let ig = infer_edges(&params, &cfg, &g, 0.5, &mut stream_rng(7, 0), SampleMode::Hard).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let vals: Vec<f64> = (0..2).map(|l| ig.sampled_onehot[[i, j, l]]).collect();
                    assert!(vals.iter().all(|&v| v == 0.0 || v == 1.0));
                    assert_eq!(vals.iter().sum::<f64>(), 1.0);
                }
            }
        }
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let cfg = tiny_config(2, 1);
        let params = init_parameters(&cfg, None, 1);
        let mut w = ramp_window(3, 2);
        w[[1, 0, 1]] = f64::NAN;
        assert!(embed_agents(&params, &cfg, w.view(), &[0, 0]).is_err());
        let mut sa = Array2::zeros((2, 6));
        sa[[0, 0]] = f64::INFINITY;
        assert!(message_passing(&params, &cfg, &sa, None).is_err());
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let cfg = tiny_config(2, 1);
        let params = init_parameters(&cfg, None, 1);
        let sa = Array2::from_elem((2, 6), 0.3);
        let g = message_passing(&params, &cfg, &sa, None).unwrap();
        let err = infer_edges(&params, &cfg, &g, 0.0, &mut stream_rng(0, 0), SampleMode::Mean);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn wrong_window_length_rejected() {
        let cfg = tiny_config(2, 1);
        let params = init_parameters(&cfg, None, 1);
        let w = ramp_window(4, 2);
        let msg = embed_agents(&params, &cfg, w.view(), &[0, 0]).unwrap_err().to_string();
        assert!(msg.contains("encoding_horizon"), "{msg}");
    }

    #[test]
    fn pack_unpack_edges_round_trip() {
        let m = Array3::from_shape_fn((3, 3, 2), |(i, j, k)| {
            if i == j { 0.0 } else { (i * 9 + j * 3 + k) as f64 }
        });
        let packed = pack_edge_rows(&m, 3, 2);
        assert_eq!(packed.dim(), (6, 2));
        assert_eq!(unpack_edge_rows(&packed, 3, 2), m);
        let _ = array![[0.0]]; // keep ndarray macro import exercised
    }
}
