//! Evaluation: edge-type recognition accuracy on the No-Change and Change
//! splits, minADE/minFDE over sampled hypotheses, average state error per
//! prediction step, and change-detection delay of the evolving graph.

use ndarray::{s, Array3, Array4, ArrayView3, ArrayView4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::decoder::{rollout, RolloutMode};
use crate::encoder::{embed_agents, infer_edges, message_passing, SampleMode};
use crate::error::Error;
use crate::evolve::{dynamic_rollout, graph_index_for_step, num_graphs, reencode, EvolveState};
use crate::params::ModelParameters;
use crate::rngutil::stream_rng;
use crate::train::Variant;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation (n − 1); zero for fewer than two values.
    pub fn from_values(values: &[f64]) -> MeanStd {
        let n = values.len();
        let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Whether the minimum over hypotheses is taken jointly for the whole scene
/// or independently per agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinMode {
    SceneJoint,
    PerAgent,
}

/// Metrics of a single trained model over the test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEval {
    /// Percent; absent when the split has no samples of that kind.
    pub edge_accuracy_no_change: Option<f64>,
    pub edge_accuracy_change: Option<f64>,
    pub horizons: Vec<usize>,
    /// Per horizon; empty for the supervised (recognition-only) variant.
    pub min_ade: Vec<f64>,
    pub min_fde: Vec<f64>,
    /// Mean Euclidean error per prediction step; empty for supervised.
    pub state_error_curve: Vec<f64>,
    /// Per Change sample; `None` when the graph never flips.
    pub change_delays: Vec<Option<i64>>,
    pub num_samples: usize,
}

/// Aggregate over independently trained runs (Table-style mean ± std).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub edge_accuracy_no_change: Option<MeanStd>,
    pub edge_accuracy_change: Option<MeanStd>,
    pub horizons: Vec<usize>,
    pub min_ade: Vec<MeanStd>,
    pub min_fde: Vec<MeanStd>,
    pub state_error_curve: Vec<f64>,
    pub state_error_std: Vec<f64>,
    /// Median over all Change samples of all runs; `None` when undetected
    /// flips dominate (sentinels sort above every finite delay).
    pub median_change_delay: Option<f64>,
    pub change_delay_sentinels: usize,
    pub num_samples: usize,
    pub num_runs: usize,
}

impl EvalReport {
    pub fn from_runs(runs: &[RunEval]) -> Result<EvalReport, Error> {
        let first = runs.first().ok_or_else(|| Error::Data("no runs to aggregate".into()))?;
        for r in runs {
            if r.horizons != first.horizons {
                return Err(Error::Data("runs disagree on evaluation horizons".into()));
            }
            if r.state_error_curve.len() != first.state_error_curve.len() {
                return Err(Error::Data("runs disagree on state-error curve length".into()));
            }
        }
        let collect_opt = |f: fn(&RunEval) -> Option<f64>| -> Option<MeanStd> {
            let vals: Vec<f64> = runs.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| MeanStd::from_values(&vals))
        };
        let per_index = |f: fn(&RunEval) -> &Vec<f64>, i: usize| -> MeanStd {
            let vals: Vec<f64> = runs.iter().map(|r| f(r)[i]).collect();
            MeanStd::from_values(&vals)
        };
        let curve_len = first.state_error_curve.len();
        let mut state_error_curve = Vec::with_capacity(curve_len);
        let mut state_error_std = Vec::with_capacity(curve_len);
        for t in 0..curve_len {
            let ms = per_index(|r| &r.state_error_curve, t);
            state_error_curve.push(ms.mean);
            state_error_std.push(ms.std);
        }
        let delays: Vec<Option<i64>> =
            runs.iter().flat_map(|r| r.change_delays.iter().copied()).collect();
        Ok(EvalReport {
            edge_accuracy_no_change: collect_opt(|r| r.edge_accuracy_no_change),
            edge_accuracy_change: collect_opt(|r| r.edge_accuracy_change),
            horizons: first.horizons.clone(),
            min_ade: (0..first.min_ade.len()).map(|i| per_index(|r| &r.min_ade, i)).collect(),
            min_fde: (0..first.min_fde.len()).map(|i| per_index(|r| &r.min_fde, i)).collect(),
            state_error_curve,
            state_error_std,
            median_change_delay: median_delay(&delays),
            change_delay_sentinels: delays.iter().filter(|d| d.is_none()).count(),
            num_samples: first.num_samples,
            num_runs: runs.len(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("serializing eval report: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EvalReport, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("parsing {}: {e}", path.display())))
    }
}

/// Median with undetected flips (`None`) sorting above every finite delay;
/// returns `None` when the median lands on a sentinel or there are no delays.
pub fn median_delay(delays: &[Option<i64>]) -> Option<f64> {
    if delays.is_empty() {
        return None;
    }
    let mut sorted: Vec<Option<i64>> = delays.to_vec();
    sorted.sort_by_key(|d| d.map_or((1, 0), |v| (0, v)));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2].map(|v| v as f64)
    } else {
        match (sorted[n / 2 - 1], sorted[n / 2]) {
            (Some(a), Some(b)) => Some((a as f64 + b as f64) / 2.0),
            _ => None,
        }
    }
}

/// Fraction of directed off-diagonal edges whose argmax type matches the
/// label, pooled over steps, in percent. `predicted[t]` is `[N, N, L]` and
/// `labels[t]` the matching `[N, N]` type indices.
pub fn edge_accuracy(predicted: &[Array3<f64>], labels: ArrayView3<'_, u8>) -> Result<f64, Error> {
    let (steps, n, n2) = labels.dim();
    if predicted.len() != steps {
        return Err(Error::Data(format!(
            "{} predicted graphs for {steps} labeled steps",
            predicted.len()
        )));
    }
    if n != n2 {
        return Err(Error::Data(format!("labels must be square per step, got [{n}, {n2}]")));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (t, probs) in predicted.iter().enumerate() {
        let (pn, pn2, l) = probs.dim();
        if pn != n || pn2 != n {
            return Err(Error::Data(format!(
                "predicted graph {t} is [{pn}, {pn2}, {l}], labels have {n} agents"
            )));
        }
        if l == 0 {
            return Err(Error::Data("predicted graph has zero edge types".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let row = probs.slice(s![i, j, ..]);
                let arg = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                if arg == labels[[t, i, j]] as usize {
                    correct += 1;
                }
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Data("no off-diagonal edges to score".into()));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Minimum over `Q` hypotheses of average / final-step displacement up to
/// `horizon` prediction steps. The two minima are taken independently.
pub fn min_ade_fde(
    hypotheses: ArrayView4<'_, f64>,
    ground_truth: ArrayView3<'_, f64>,
    horizon: usize,
    mode: MinMode,
) -> Result<(f64, f64), Error> {
    let (q, t_f, n, d) = hypotheses.dim();
    let (gt_t, gt_n, gt_d) = ground_truth.dim();
    if q == 0 {
        return Err(Error::Data("need at least one hypothesis".into()));
    }
    if t_f != gt_t || n != gt_n || d != 2 || gt_d != 2 {
        return Err(Error::Data(format!(
            "hypotheses [{q}, {t_f}, {n}, {d}] do not match ground truth [{gt_t}, {gt_n}, {gt_d}]"
        )));
    }
    if horizon == 0 || horizon > t_f {
        return Err(Error::Data(format!(
            "horizon {horizon} outside the predicted range 1..={t_f}"
        )));
    }
    let dist = |qi: usize, t: usize, i: usize| -> f64 {
        let dx = hypotheses[[qi, t, i, 0]] - ground_truth[[t, i, 0]];
        let dy = hypotheses[[qi, t, i, 1]] - ground_truth[[t, i, 1]];
        dx.hypot(dy)
    };
    match mode {
        MinMode::SceneJoint => {
            let mut best_ade = f64::INFINITY;
            let mut best_fde = f64::INFINITY;
            for qi in 0..q {
                let mut sum = 0.0;
                let mut fde = 0.0;
                for i in 0..n {
                    for t in 0..horizon {
                        sum += dist(qi, t, i);
                    }
                    fde += dist(qi, horizon - 1, i);
                }
                best_ade = best_ade.min(sum / (horizon * n) as f64);
                best_fde = best_fde.min(fde / n as f64);
            }
            Ok((best_ade, best_fde))
        }
        MinMode::PerAgent => {
            let mut ade = 0.0;
            let mut fde = 0.0;
            for i in 0..n {
                let mut best_a = f64::INFINITY;
                let mut best_f = f64::INFINITY;
                for qi in 0..q {
                    let sum: f64 = (0..horizon).map(|t| dist(qi, t, i)).sum();
                    best_a = best_a.min(sum / horizon as f64);
                    best_f = best_f.min(dist(qi, horizon - 1, i));
                }
                ade += best_a;
                fde += best_f;
            }
            Ok((ade / n as f64, fde / n as f64))
        }
    }
}

/// Euclidean error per prediction step averaged over agents, for one sample.
pub fn state_error_curve(
    predicted: ArrayView3<'_, f64>,
    ground_truth: ArrayView3<'_, f64>,
) -> Result<Vec<f64>, Error> {
    let (t_f, n, d) = predicted.dim();
    if ground_truth.dim() != (t_f, n, d) || d != 2 {
        return Err(Error::Data(format!(
            "prediction {:?} does not match ground truth {:?}",
            predicted.dim(),
            ground_truth.dim()
        )));
    }
    let mut curve = Vec::with_capacity(t_f);
    for t in 0..t_f {
        let mut sum = 0.0;
        for i in 0..n {
            let dx = predicted[[t, i, 0]] - ground_truth[[t, i, 0]];
            let dy = predicted[[t, i, 1]] - ground_truth[[t, i, 1]];
            sum += dx.hypot(dy);
        }
        curve.push(sum / n as f64);
    }
    Ok(curve)
}

/// First re-encoding step at which the argmax type differs from the
/// pre-change majority for at least half the directed edges, minus the true
/// change step. Graph `β` is re-encoded at step `t_h + β·gap`; `None` when
/// no graph flips.
pub fn change_detection_delay(
    graphs: &[Array3<f64>],
    t_h: usize,
    gap: usize,
    change_step: usize,
) -> Option<i64> {
    let argmaxes: Vec<Vec<usize>> = graphs
        .iter()
        .map(|g| {
            let (n, _, _) = g.dim();
            let mut types = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let row = g.slice(s![i, j, ..]);
                    let arg = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(k, _)| k)
                        .unwrap_or(0);
                    types.push(arg);
                }
            }
            types
        })
        .collect();
    if argmaxes.is_empty() || argmaxes[0].is_empty() {
        return None;
    }
    let num_types = graphs[0].dim().2;

    // Majority type over every graph inferred strictly before the change;
    // the first graph (pure-history inference) is the fallback.
    let mut counts = vec![0usize; num_types];
    let mut pooled_any = false;
    for (beta, types) in argmaxes.iter().enumerate() {
        if t_h + beta * gap < change_step {
            for &t in types {
                counts[t] += 1;
            }
            pooled_any = true;
        }
    }
    if !pooled_any {
        for &t in &argmaxes[0] {
            counts[t] += 1;
        }
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap_or(0);

    for (beta, types) in argmaxes.iter().enumerate() {
        let differing = types.iter().filter(|&&t| t != majority).count();
        if 2 * differing >= types.len() {
            return Some((t_h + beta * gap) as i64 - change_step as i64);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Prediction horizons (in steps) for minADE/minFDE; empty means the
    /// full future length.
    pub horizons: Vec<usize>,
    /// Hypotheses per sample; 1 evaluates the deterministic mean rollout.
    pub num_hypotheses: usize,
    pub seed: u64,
    pub per_agent_min: bool,
    pub jobs: usize,
    /// Cap on evaluated test samples; `None` evaluates the whole split.
    pub max_samples: Option<usize>,
}

impl EvalOptions {
    pub fn new(seed: u64) -> Self {
        EvalOptions {
            horizons: Vec::new(),
            num_hypotheses: 1,
            seed,
            per_agent_min: false,
            jobs: 1,
            max_samples: None,
        }
    }
}

/// Interaction-graph probabilities governing each prediction step, inferred
/// from the true trajectory, plus one graph per re-encoding for delay
/// measurement. The static variant encodes once; the dynamic variant slides
/// its re-encoding window with the evolution unit; the supervised variant
/// classifies the window ending at each step.
pub(crate) fn recognition_graphs(
    params: &ModelParameters,
    config: &ExperimentConfig,
    positions: ArrayView3<'_, f64>,
    categories: &[usize],
    variant: Variant,
    rng_seed: (u64, u64),
) -> Result<(Vec<Array3<f64>>, Vec<Array3<f64>>, usize), Error> {
    let t_h = config.history_len_T_h;
    let t = positions.dim().0;
    let t_f = t - t_h;
    let e = config.encoding_horizon;
    let mut rng = stream_rng(rng_seed.0, rng_seed.1);
    match variant {
        Variant::Static => {
            let window = positions.slice(s![t_h - e..t_h, .., ..]);
            let attr = embed_agents(params, config, window, categories)?;
            let graph = message_passing(params, config, &attr, None)?;
            let inferred =
                infer_edges(params, config, &graph, config.gumbel_temp, &mut rng, SampleMode::Mean)?;
            let per_step = vec![inferred.edge_probs.clone(); t_f];
            Ok((per_step, vec![inferred.edge_probs], t_h))
        }
        Variant::DynamicSingle | Variant::DynamicDouble => {
            let gap = config.reencode_gap;
            let count = num_graphs(t_f, gap);
            let n = positions.dim().1;
            let mut state = EvolveState::initial(config, n);
            let mut graphs = Vec::with_capacity(count);
            for beta in 0..count {
                let need = t_h + beta * gap;
                let seq = positions.slice(s![..need.min(t), .., ..]);
                state = reencode(params, config, seq, categories, None, &state, SampleMode::Mean, &mut rng)?;
                graphs.push(state.current_graph.edge_probs.clone());
            }
            let per_step = (0..t_f)
                .map(|k| graphs[graph_index_for_step(t_h + k, t_h, gap).min(count - 1)].clone())
                .collect();
            Ok((per_step, graphs, t_h))
        }
        Variant::Supervised => {
            let mut per_step = Vec::with_capacity(t_f);
            for u in t_h..t {
                let window = positions.slice(s![u + 1 - e..u + 1, .., ..]);
                let attr = embed_agents(params, config, window, categories)?;
                let graph = message_passing(params, config, &attr, None)?;
                let inferred = infer_edges(
                    params,
                    config,
                    &graph,
                    config.gumbel_temp,
                    &mut rng,
                    SampleMode::Mean,
                )?;
                per_step.push(inferred.edge_probs.clone());
            }
            Ok((per_step.clone(), per_step, t_h))
        }
    }
}

struct SampleEval {
    correct: usize,
    total: usize,
    is_change: bool,
    delay: Option<Option<i64>>,
    curve: Option<Vec<f64>>,
    ade: Vec<f64>,
    fde: Vec<f64>,
}

pub(crate) fn forecast_trajectory(
    params: &ModelParameters,
    config: &ExperimentConfig,
    history: ArrayView3<'_, f64>,
    categories: &[usize],
    t_f: usize,
    variant: Variant,
    mode: SampleMode,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Array3<f64>, Error> {
    match variant {
        Variant::Static => {
            let e = config.encoding_horizon;
            let t_h = history.dim().0;
            let window = history.slice(s![t_h - e.., .., ..]);
            let attr = embed_agents(params, config, window, categories)?;
            let graph = message_passing(params, config, &attr, None)?;
            let inferred =
                infer_edges(params, config, &graph, config.gumbel_temp, rng, mode)?;
            let roll = rollout(
                params,
                config,
                history,
                categories,
                None,
                &inferred,
                t_f,
                RolloutMode::Sampling,
                rng,
            )?;
            Ok(roll.sampled)
        }
        Variant::DynamicSingle | Variant::DynamicDouble => {
            let roll = dynamic_rollout(
                params,
                config,
                history,
                categories,
                None,
                t_f,
                config.reencode_gap,
                mode,
                RolloutMode::Sampling,
                rng,
            )?;
            Ok(roll.sampled)
        }
        Variant::Supervised => Err(Error::Data(
            "the supervised variant only recognizes edges; it has no decoder".into(),
        )),
    }
}

fn eval_sample(
    dataset: &Dataset,
    idx: usize,
    params: &ModelParameters,
    config: &ExperimentConfig,
    variant: Variant,
    opts: &EvalOptions,
    horizons: &[usize],
) -> Result<SampleEval, Error> {
    let t_h = dataset.history_len;
    let t = dataset.total_steps();
    let t_f = t - t_h;
    let positions = dataset.positions.slice(s![idx, .., .., ..]);
    let categories: Vec<usize> = dataset.categories.row(idx).to_vec();
    let is_change = dataset.is_change_sample(idx);

    let (per_step, graph_seq, _) = recognition_graphs(
        params,
        config,
        positions,
        &categories,
        variant,
        (opts.seed, idx as u64),
    )?;
    let labels = dataset.edge_labels.slice(s![idx, t_h.., .., ..]);
    let mut correct = 0usize;
    let mut total = 0usize;
    for (k, probs) in per_step.iter().enumerate() {
        let lab = labels.slice(s![k, .., ..]);
        let n = lab.dim().0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let row = probs.slice(s![i, j, ..]);
                let arg = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k2, _)| k2)
                    .unwrap_or(0);
                if arg == lab[[i, j]] as usize {
                    correct += 1;
                }
                total += 1;
            }
        }
    }
    let delay = is_change.then(|| {
        let gap = match variant {
            Variant::DynamicSingle | Variant::DynamicDouble => config.reencode_gap,
            _ => 1,
        };
        change_detection_delay(&graph_seq, t_h, gap, dataset.change_steps[idx] as usize)
    });

    if variant == Variant::Supervised {
        return Ok(SampleEval {
            correct,
            total,
            is_change,
            delay,
            curve: None,
            ade: Vec::new(),
            fde: Vec::new(),
        });
    }

    let history = positions.slice(s![..t_h, .., ..]);
    let truth = positions.slice(s![t_h.., .., ..]);
    let mut rng = stream_rng(opts.seed, idx as u64);
    let mean_traj = forecast_trajectory(
        params,
        config,
        history,
        &categories,
        t_f,
        variant,
        SampleMode::Mean,
        &mut rng,
    )?;
    let curve = state_error_curve(mean_traj.view(), truth)?;

    let q = opts.num_hypotheses.max(1);
    let mut hyps = Array4::zeros((q, t_f, positions.dim().1, 2));
    if q == 1 {
        hyps.slice_mut(s![0, .., .., ..]).assign(&mean_traj);
    } else {
        for qi in 0..q {
            let mut hyp_rng = stream_rng(opts.seed, ((idx as u64) << 20) | qi as u64);
            let traj = forecast_trajectory(
                params,
                config,
                history,
                &categories,
                t_f,
                variant,
                SampleMode::Hard,
                &mut hyp_rng,
            )?;
            hyps.slice_mut(s![qi, .., .., ..]).assign(&traj);
        }
    }
    let mode = if opts.per_agent_min { MinMode::PerAgent } else { MinMode::SceneJoint };
    let mut ade = Vec::with_capacity(horizons.len());
    let mut fde = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let (a, f) = min_ade_fde(hyps.view(), truth, h, mode)?;
        ade.push(a);
        fde.push(f);
    }
    Ok(SampleEval { correct, total, is_change, delay, curve: Some(curve), ade, fde })
}

/// Evaluates one trained model on the dataset's test split.
pub fn evaluate(
    params: &ModelParameters,
    config: &ExperimentConfig,
    dataset: &Dataset,
    variant: Variant,
    opts: &EvalOptions,
) -> Result<RunEval, Error> {
    crate::train::check_dataset_config(dataset, config)?;
    let t_f = dataset.future_len;
    let horizons = if opts.horizons.is_empty() { vec![t_f] } else { opts.horizons.clone() };
    for &h in &horizons {
        if h == 0 || h > t_f {
            return Err(Error::Config(vec![format!(
                "evaluation horizon {h} outside the predicted range 1..={t_f}"
            )]));
        }
    }
    let (_, _, test) = dataset.split();
    let mut indices: Vec<usize> = test.collect();
    if let Some(cap) = opts.max_samples {
        indices.truncate(cap);
    }
    if indices.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }

    let run_one =
        |&idx: &usize| eval_sample(dataset, idx, params, config, variant, opts, &horizons);
    let evals: Vec<SampleEval> = if opts.jobs > 1 {
        indices.par_iter().map(run_one).collect::<Result<_, _>>()?
    } else {
        indices.iter().map(run_one).collect::<Result<_, _>>()?
    };

    let mut nc = (0usize, 0usize);
    let mut ch = (0usize, 0usize);
    let mut delays = Vec::new();
    let mut curve_sum = vec![0.0; t_f];
    let mut curve_count = 0usize;
    let mut ade_sum = vec![0.0; horizons.len()];
    let mut fde_sum = vec![0.0; horizons.len()];
    let mut traj_count = 0usize;
    for e in &evals {
        let slot = if e.is_change { &mut ch } else { &mut nc };
        slot.0 += e.correct;
        slot.1 += e.total;
        if let Some(d) = e.delay {
            delays.push(d);
        }
        if let Some(c) = &e.curve {
            for (acc, v) in curve_sum.iter_mut().zip(c) {
                *acc += v;
            }
            curve_count += 1;
        }
        if !e.ade.is_empty() {
            for (acc, v) in ade_sum.iter_mut().zip(&e.ade) {
                *acc += v;
            }
            for (acc, v) in fde_sum.iter_mut().zip(&e.fde) {
                *acc += v;
            }
            traj_count += 1;
        }
    }
    let pct = |(c, t): (usize, usize)| (t > 0).then(|| 100.0 * c as f64 / t as f64);
    let over = |sums: Vec<f64>, count: usize| -> Vec<f64> {
        if count == 0 {
            Vec::new()
        } else {
            sums.into_iter().map(|v| v / count as f64).collect()
        }
    };
    Ok(RunEval {
        edge_accuracy_no_change: pct(nc),
        edge_accuracy_change: pct(ch),
        horizons,
        min_ade: over(ade_sum, traj_count),
        min_fde: over(fde_sum, traj_count),
        state_error_curve: over(curve_sum, curve_count),
        change_delays: delays,
        num_samples: indices.len(),
    })
}
