//! Losses and optimization.
//!
//! The trajectory losses transcribe the objective literally: the negative
//! expected weighted sum of per-component log-densities over prediction
//! steps, under one reparameterized graph draw per sample (the standard
//! log-of-mixture NLL sits behind the `mixture_nll` config flag). The
//! dynamic loss is the same form with the decoder governed by the evolving
//! graph z'_β. Training runs Adam with early stopping; the two-stage
//! pipeline optimizes the static loss first and fine-tunes everything,
//! evolution unit included, under the dynamic loss.
//!
//! Every random draw is keyed to (seed, stage, epoch, batch) and, within a
//! loss call, to the dataset index of each sample — so losses are invariant
//! to sample order and training can resume from a checkpoint without saved
//! generator state.

use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    load_checkpoint, load_optimizer_state, save_checkpoint, save_optimizer_state, OptimizerState,
};
use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::decoder::{mixture_log_density, rollout_vars, MixtureStep, StepVars};
use crate::encoder::{embed_steps_vars, encode_vars, sample_graph_scenes, SampleMode};
use crate::error::Error;
use crate::evolve::dynamic_rollout_vars;
use crate::model::{BatchLayout, ModelBind};
use crate::params::{init_parameters, GradStore, ModelParameters};
use crate::rngutil::stream_rng;
use crate::tape::{Tape, Var};

pub const STAGE_STATIC: &str = "static";
pub const STAGE_DYNAMIC_SINGLE: &str = "dynamic-single";
pub const STAGE_DYNAMIC_DOUBLE: &str = "dynamic-double";
pub const STAGE_SUPERVISED: &str = "supervised";

/// Epoch budget for the static stage (and stage 1 of the double pipeline).
pub const STATIC_MAX_EPOCHS: usize = 20;
/// Epoch budget for dynamic training (single stage or stage 2).
pub const DYNAMIC_MAX_EPOCHS: usize = 100;
pub const SUPERVISED_MAX_EPOCHS: usize = 20;
/// Epochs without validation improvement before stopping.
pub const EARLY_STOP_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Static,
    DynamicSingle,
    DynamicDouble,
    Supervised,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Static => STAGE_STATIC,
            Variant::DynamicSingle => STAGE_DYNAMIC_SINGLE,
            Variant::DynamicDouble => STAGE_DYNAMIC_DOUBLE,
            Variant::Supervised => STAGE_SUPERVISED,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            STAGE_STATIC => Ok(Variant::Static),
            STAGE_DYNAMIC_SINGLE => Ok(Variant::DynamicSingle),
            STAGE_DYNAMIC_DOUBLE => Ok(Variant::DynamicDouble),
            STAGE_SUPERVISED => Ok(Variant::Supervised),
            other => Err(Error::Config(vec![format!(
                "unknown variant {other:?}; expected static, dynamic-single, dynamic-double, or supervised"
            )])),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// 1-based epoch whose validation loss was best.
    pub best_epoch: usize,
    /// Directory of the best-validation checkpoint, when one was written.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    fn new(stage: &str) -> Self {
        TrainReport {
            stage: stage.to_string(),
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            epoch_seconds: Vec::new(),
            best_epoch: 0,
            checkpoint: None,
        }
    }

    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, body.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body)
            .map_err(|e| Error::Data(format!("cannot parse {}: {e}", path.display())))
    }
}

/// Stops when validation loss has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::INFINITY, best_epoch: 0, epochs_since_improvement: 0 }
    }

    /// Records the validation loss of `epoch` (1-based); returns true when
    /// training should stop.
    pub fn observe(&mut self, epoch: usize, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        self.epochs_since_improvement >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

/// Adam with moments per parameter. Parameters absent from a `GradStore`
/// (e.g. the evolution unit during static training) are left untouched;
/// within a stage every parameter either always or never receives
/// gradients, so the shared step counter gives exact bias correction.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(params: &ModelParameters, lr: f64) -> Self {
        let m = params.iter().map(|(_, v)| Array2::zeros(v.dim())).collect::<Vec<_>>();
        let v = m.clone();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: OptimizerState {
                step: 0,
                epoch: 0,
                best_val_loss: f64::INFINITY,
                best_epoch: 0,
                epochs_since_improvement: 0,
                m,
                v,
            },
        }
    }

    pub fn from_state(state: OptimizerState, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &GradStore) {
        self.state.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.state.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.state.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.0;
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            m.zip_mut_with(g, |mm, &gg| *mm = self.beta1 * *mm + (1.0 - self.beta1) * gg);
            v.zip_mut_with(g, |vv, &gg| *vv = self.beta2 * *vv + (1.0 - self.beta2) * gg * gg);
            let p = params.value_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pp, &mm, &vv| {
                *pp -= self.lr * (mm / bc1) / ((vv / bc2).sqrt() + self.eps);
            });
        }
    }
}

// Stream-slot layout inside one (stage, epoch): batch indices from 0,
// validation batches from VAL_SLOT, then the special purposes below.
const VAL_SLOT: u64 = 0x40_0000;
const SHUFFLE_SLOT: u64 = 0xFF_FFFF;
const WINDOW_SLOT: u64 = 0xFF_FFFE;
const WINDOW_VAL_SLOT: u64 = 0xFF_FFFD;

fn stage_num(tag: &str) -> u64 {
    match tag {
        STAGE_STATIC => 1,
        STAGE_DYNAMIC_SINGLE => 2,
        STAGE_DYNAMIC_DOUBLE => 3,
        STAGE_SUPERVISED => 4,
        _ => 5,
    }
}

/// Deterministic generator for one (stage, epoch, slot) cell.
pub fn train_stream(seed: u64, stage: &str, epoch: u64, slot: u64) -> ChaCha8Rng {
    stream_rng(seed, (stage_num(stage) << 40) | (epoch << 24) | slot)
}

/// Per-sample noise streams for one loss call: sample identity (dataset
/// index) and run index key the stream, not batch position.
fn scene_rngs(base: u64, indices: &[usize], run: u64) -> Vec<ChaCha8Rng> {
    indices.iter().map(|&i| stream_rng(base, ((i as u64) << 20) | run)).collect()
}

pub(crate) fn check_dataset_config(dataset: &Dataset, config: &ExperimentConfig) -> Result<(), Error> {
    if dataset.history_len != config.history_len_T_h {
        return Err(Error::Data(format!(
            "dataset history_len {} does not match config history_len_T_h {}",
            dataset.history_len, config.history_len_T_h
        )));
    }
    if dataset.future_len != config.future_len_T_f {
        return Err(Error::Data(format!(
            "dataset future_len {} does not match config future_len_T_f {}",
            dataset.future_len, config.future_len_T_f
        )));
    }
    Ok(())
}

/// Gathers one batch as per-step leaves `[B·N, 2]` (scene-major rows).
fn batch_leaves(
    tape: &mut Tape,
    dataset: &Dataset,
    indices: &[usize],
    config: &ExperimentConfig,
) -> Result<(Vec<Var>, BatchLayout), Error> {
    if indices.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let (num, t, n, _) = dataset.positions.dim();
    for &idx in indices {
        if idx >= num {
            return Err(Error::Data(format!("sample index {idx} out of range 0..{num}")));
        }
    }
    let b = indices.len();
    let mut cats = Array2::zeros((b, n));
    for (p, &idx) in indices.iter().enumerate() {
        for i in 0..n {
            cats[[p, i]] = dataset.categories[[idx, i]];
        }
    }
    let layout = BatchLayout::new(cats.view(), config.num_categories_M)?;
    let steps = (0..t)
        .map(|s| {
            let mut m = Array2::zeros((b * n, 2));
            for (p, &idx) in indices.iter().enumerate() {
                for i in 0..n {
                    m[[p * n + i, 0]] = dataset.positions[[idx, s, i, 0]];
                    m[[p * n + i, 1]] = dataset.positions[[idx, s, i, 1]];
                }
            }
            tape.leaf(m)
        })
        .collect();
    Ok((steps, layout))
}

/// Per-agent negative log term for one transition: the literal weighted sum
/// of component log-densities, or the mixture NLL under the config flag.
fn nll_per_agent(
    tape: &mut Tape,
    config: &ExperimentConfig,
    out: &StepVars,
    target: Var,
) -> Var {
    let k = config.mixture_K;
    let var = config.sigma * config.sigma;
    let log_norm = -(2.0 * std::f64::consts::PI * var).ln();
    let logps: Vec<Var> = (0..k)
        .map(|c| {
            let diff = tape.sub(out.means[c], target);
            let sq = tape.sq_norm_rows(diff);
            let scaled = tape.scale(sq, -1.0 / (2.0 * var));
            tape.add_const(scaled, log_norm)
        })
        .collect();
    let ll = if config.mixture_nll {
        let cols: Vec<Var> = (0..k)
            .map(|c| {
                let w = tape.slice_cols(out.weights, c, c + 1);
                let logw = tape.log(w);
                tape.add(logw, logps[c])
            })
            .collect();
        let stacked = tape.concat_cols(&cols);
        tape.log_sum_exp_rows(stacked)
    } else {
        let mut acc: Option<Var> = None;
        for c in 0..k {
            let w = tape.slice_cols(out.weights, c, c + 1);
            let term = tape.mul_elem(w, logps[c]);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
        acc.expect("at least one component")
    };
    tape.scale(ll, -1.0)
}

/// One sampled rollout's per-sample loss column `[B, 1]`.
#[allow(clippy::too_many_arguments)]
fn rollout_nll_col(
    tape: &mut Tape,
    bind: &ModelBind,
    config: &ExperimentConfig,
    layout: &BatchLayout,
    steps: &[Var],
    dynamic: bool,
    rngs: &mut [ChaCha8Rng],
) -> Var {
    let t_h = config.history_len_T_h;
    let t_f = config.future_len_T_f;
    let outs = if dynamic {
        dynamic_rollout_vars(
            tape,
            bind,
            config,
            layout,
            &steps[0..t_h],
            t_f,
            config.reencode_gap,
            SampleMode::Relaxed,
            None,
            rngs,
        )
        .outputs
    } else {
        let e = config.encoding_horizon;
        let sa = embed_steps_vars(tape, bind, layout, &steps[t_h - e..t_h]);
        let enc = encode_vars(tape, bind, config, layout, sa, None);
        let z = sample_graph_scenes(
            tape,
            enc.logits,
            config.gumbel_temp,
            SampleMode::Relaxed,
            layout,
            rngs,
        );
        rollout_vars(tape, bind, config, layout, &steps[0..t_h], z, t_f, None, rngs).0
    };
    let mut per_agent: Option<Var> = None;
    for ti in 0..t_f {
        let col = nll_per_agent(tape, config, &outs[t_h - 1 + ti], steps[t_h + ti]);
        per_agent = Some(match per_agent {
            Some(a) => tape.add(a, col),
            None => col,
        });
    }
    let per_agent = per_agent.expect("future_len_T_f >= 1");
    tape.sum_groups(per_agent, layout.scene_of_agent.clone(), layout.batch)
}

/// Row-wise minimum over hypothesis columns; gradients flow only through
/// each row's selected hypothesis.
fn min_select(tape: &mut Tape, cols: &[Var]) -> Var {
    if cols.len() == 1 {
        return cols[0];
    }
    let rows = tape.shape(cols[0]).0;
    let values: Vec<&Array2<f64>> = cols.iter().map(|&c| tape.value(c)).collect();
    let choice: Vec<usize> = (0..rows)
        .map(|r| {
            let mut best = 0;
            for (q, v) in values.iter().enumerate().skip(1) {
                if v[[r, 0]] < values[best][[r, 0]] {
                    best = q;
                }
            }
            best
        })
        .collect();
    tape.select_k(cols, Rc::new(choice))
}

struct Objective {
    loss: f64,
    per_sample: Vec<f64>,
    grads: Option<GradStore>,
}

/// Sum-aggregated loss (and gradients of the sum) over one chunk.
fn chunk_objective(
    dataset: &Dataset,
    chunk: &[usize],
    params: &ModelParameters,
    config: &ExperimentConfig,
    dynamic: bool,
    d: usize,
    base: u64,
    want_grad: bool,
) -> Result<(f64, Vec<f64>, Option<GradStore>), Error> {
    let mut tape = Tape::new();
    let bind = ModelBind::new(&mut tape, params, config);
    let (steps, layout) = batch_leaves(&mut tape, dataset, chunk, config)?;
    let cols: Vec<Var> = (0..d)
        .map(|run| {
            let mut rngs = scene_rngs(base, chunk, run as u64);
            rollout_nll_col(&mut tape, &bind, config, &layout, &steps, dynamic, &mut rngs)
        })
        .collect();
    let col = min_select(&mut tape, &cols);
    let total = tape.sum_all(col);
    let sum = tape.scalar(total);
    let per_sample = tape.value(col).column(0).to_vec();
    let grads = if want_grad {
        let mut g = GradStore::new(params.len());
        tape.backward(total, &mut g);
        Some(g)
    } else {
        None
    };
    Ok((sum, per_sample, grads))
}

/// Batch objective, optionally parallel over chunks of the batch. Per-sample
/// noise streams make the result independent of the chunking (up to
/// floating-point summation order), and chunks merge in a fixed order, so
/// parallel runs stay deterministic.
#[allow(clippy::too_many_arguments)]
fn batch_objective(
    dataset: &Dataset,
    indices: &[usize],
    params: &ModelParameters,
    config: &ExperimentConfig,
    dynamic: bool,
    d: usize,
    jobs: usize,
    rng: &mut ChaCha8Rng,
    want_grad: bool,
) -> Result<Objective, Error> {
    check_dataset_config(dataset, config)?;
    if d == 0 {
        return Err(Error::Config(vec!["number of decoding runs must be at least 1".into()]));
    }
    if indices.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let base = rng.next_u64();
    let b = indices.len();
    let results: Vec<(f64, Vec<f64>, Option<GradStore>)> = if jobs <= 1 || b < 2 {
        vec![chunk_objective(dataset, indices, params, config, dynamic, d, base, want_grad)?]
    } else {
        let chunk_size = b.div_ceil(jobs);
        indices
            .par_chunks(chunk_size)
            .map(|c| chunk_objective(dataset, c, params, config, dynamic, d, base, want_grad))
            .collect::<Result<Vec<_>, Error>>()?
    };
    let mut sum = 0.0;
    let mut per_sample = Vec::with_capacity(b);
    let mut grads = want_grad.then(|| GradStore::new(params.len()));
    for (s, ps, g) in results {
        sum += s;
        per_sample.extend(ps);
        if let (Some(acc), Some(part)) = (grads.as_mut(), g.as_ref()) {
            acc.merge(part);
        }
    }
    if let Some(g) = grads.as_mut() {
        g.scale(1.0 / b as f64);
    }
    Ok(Objective { loss: sum / b as f64, per_sample, grads })
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub per_sample: Vec<f64>,
}

/// Mean loss of `indices` under a single static graph draw per sample.
pub fn loss_static(
    dataset: &Dataset,
    indices: &[usize],
    params: &ModelParameters,
    config: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossOutput, Error> {
    let o = batch_objective(dataset, indices, params, config, false, 1, 1, rng, false)?;
    Ok(LossOutput { loss: o.loss, per_sample: o.per_sample })
}

/// Mean loss of `indices` with the decoder governed by z'_β(t).
pub fn loss_dynamic(
    dataset: &Dataset,
    indices: &[usize],
    params: &ModelParameters,
    config: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossOutput, Error> {
    let o = batch_objective(dataset, indices, params, config, true, 1, 1, rng, false)?;
    Ok(LossOutput { loss: o.loss, per_sample: o.per_sample })
}

/// Min-of-d objective for one sample: `d` independent sampled rollouts, the
/// best hypothesis' loss (gradients would flow only through it).
pub fn multimodal_loss(
    dataset: &Dataset,
    index: usize,
    params: &ModelParameters,
    config: &ExperimentConfig,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, Error> {
    let o = batch_objective(dataset, &[index], params, config, false, d, 1, rng, false)?;
    Ok(o.loss)
}

/// Scalar loss contribution of one decoded transition against `target`
/// (`[N, 2]`): the pure-array twin of the tape path, used as its oracle.
pub fn step_nll(step: &MixtureStep, target: &Array2<f64>, mixture_nll: bool) -> f64 {
    let logp = mixture_log_density(step, target);
    let (n, k) = logp.dim();
    let mut total = 0.0;
    for i in 0..n {
        if mixture_nll {
            let mut max = f64::NEG_INFINITY;
            let terms: Vec<f64> =
                (0..k).map(|c| step.weights[[i, c]].ln() + logp[[i, c]]).collect();
            for &t in &terms {
                max = max.max(t);
            }
            let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            total -= max + sum.ln();
        } else {
            for c in 0..k {
                total -= step.weights[[i, c]] * logp[[i, c]];
            }
        }
    }
    total
}

fn supervised_objective(
    dataset: &Dataset,
    indices: &[usize],
    t_ends: &[usize],
    params: &ModelParameters,
    config: &ExperimentConfig,
    want_grad: bool,
) -> Result<(f64, Option<GradStore>), Error> {
    check_dataset_config(dataset, config)?;
    if indices.len() != t_ends.len() {
        return Err(Error::Data(format!(
            "{} window ends supplied for {} samples",
            t_ends.len(),
            indices.len()
        )));
    }
    let t_h = config.history_len_T_h;
    let t = dataset.total_steps();
    let n = dataset.positions.dim().2;
    if n < 2 {
        return Err(Error::Data("supervised edge training needs at least two agents".into()));
    }
    for (&idx, &te) in indices.iter().zip(t_ends) {
        if te + 1 < t_h || te >= t {
            return Err(Error::Data(format!(
                "window end {te} for sample {idx} outside valid range {}..{}",
                t_h - 1,
                t
            )));
        }
    }

    let mut tape = Tape::new();
    let bind = ModelBind::new(&mut tape, params, config);
    let b = indices.len();
    let mut cats = Array2::zeros((b, n));
    for (p, &idx) in indices.iter().enumerate() {
        for i in 0..n {
            cats[[p, i]] = dataset.categories[[idx, i]];
        }
    }
    let layout = BatchLayout::new(cats.view(), config.num_categories_M)?;
    let e = config.encoding_horizon;
    let window: Vec<Var> = (t_h - e..t_h)
        .map(|rel| {
            let mut m = Array2::zeros((b * n, 2));
            for (p, (&idx, &te)) in indices.iter().zip(t_ends).enumerate() {
                let s = te + 1 - t_h + rel;
                for i in 0..n {
                    m[[p * n + i, 0]] = dataset.positions[[idx, s, i, 0]];
                    m[[p * n + i, 1]] = dataset.positions[[idx, s, i, 1]];
                }
            }
            tape.leaf(m)
        })
        .collect();
    let sa = embed_steps_vars(&mut tape, &bind, &layout, &window);
    let enc = encode_vars(&mut tape, &bind, config, &layout, sa, None);

    // Labels in edge-row order (receiver-major, diagonal skipped).
    let l = config.edge_types_L;
    let mut labels = Vec::with_capacity(layout.edges.num_rows());
    for (&idx, &te) in indices.iter().zip(t_ends) {
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let lab = dataset.edge_labels[[idx, te, i, j]] as usize;
                if lab >= l {
                    return Err(Error::Data(format!(
                        "edge label {lab} at (sample {idx}, step {te}, {i}->{j}) exceeds edge_types_L {l}"
                    )));
                }
                labels.push(lab);
            }
        }
    }
    let lse = tape.log_sum_exp_rows(enc.logits);
    let parts: Vec<Var> = (0..l).map(|c| tape.slice_cols(enc.logits, c, c + 1)).collect();
    let sel = tape.select_k(&parts, Rc::new(labels));
    let ce = tape.sub(lse, sel);
    let total = tape.sum_all(ce);
    let mean = tape.scale(total, 1.0 / layout.edges.num_rows() as f64);
    let loss = tape.scalar(mean);
    let grads = if want_grad {
        let mut g = GradStore::new(params.len());
        tape.backward(mean, &mut g);
        Some(g)
    } else {
        None
    };
    Ok((loss, grads))
}

/// Mean cross-entropy of encoder edge logits against ground-truth labels,
/// over history windows ending at `t_ends[p]` per sample.
pub fn supervised_loss(
    dataset: &Dataset,
    indices: &[usize],
    t_ends: &[usize],
    params: &ModelParameters,
    config: &ExperimentConfig,
) -> Result<f64, Error> {
    supervised_objective(dataset, indices, t_ends, params, config, false).map(|(l, _)| l)
}

/// Window end for `idx` in this epoch, uniform over valid label steps.
fn draw_window_end(base: u64, idx: usize, t_h: usize, t: usize) -> usize {
    stream_rng(base, idx as u64).random_range(t_h - 1..=t - 1)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub resume: bool,
    /// Report wall-clock as zero so artifacts are byte-identical across
    /// re-runs (timing is measurement, not derived output).
    pub deterministic: bool,
    pub max_epochs_override: Option<usize>,
    /// Worker count for batch-gradient chunking; 1 = fully serial.
    pub jobs: usize,
}

impl TrainOptions {
    pub fn new(seed: u64) -> Self {
        TrainOptions {
            seed,
            out_dir: None,
            resume: false,
            deterministic: false,
            max_epochs_override: None,
            jobs: 1,
        }
    }
}

#[derive(Clone, Copy)]
enum StageKind {
    Trajectory { dynamic: bool },
    Supervised,
}

struct StageSpec {
    tag: &'static str,
    kind: StageKind,
    max_epochs: usize,
}

fn run_stage(
    dataset: &Dataset,
    config: &ExperimentConfig,
    params: &mut ModelParameters,
    spec: &StageSpec,
    opts: &TrainOptions,
) -> Result<TrainReport, Error> {
    check_dataset_config(dataset, config)?;
    let max_epochs = opts.max_epochs_override.unwrap_or(spec.max_epochs).max(1);
    let (train_range, val_range, _) = dataset.split();
    let train_idx: Vec<usize> = train_range.collect();
    let val_idx: Vec<usize> = val_range.collect();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Data(format!(
            "dataset with {} samples leaves an empty train or validation split",
            dataset.num_samples()
        )));
    }
    let bs = config.batch_size.max(1);
    let d = match spec.kind {
        StageKind::Trajectory { .. } => config.num_decode_runs_d.max(1),
        StageKind::Supervised => 1,
    };
    let t_h = config.history_len_T_h;
    let t_total = dataset.total_steps();

    let mut report = TrainReport::new(spec.tag);
    let mut adam = Adam::new(params, config.learning_rate);
    let mut stopper = EarlyStopper::new(EARLY_STOP_PATIENCE);
    let mut best_params = params.clone();

    let latest_dir = opts.out_dir.as_ref().map(|o| o.join("latest"));
    let best_dir = opts.out_dir.as_ref().map(|o| o.join("checkpoint"));
    if opts.resume {
        if let Some(latest) = &latest_dir {
            if latest.join("manifest.json").exists() {
                let (loaded, _) = load_checkpoint(latest)?;
                *params = loaded;
                if let Some(state) = load_optimizer_state(latest, params)? {
                    stopper.best = state.best_val_loss;
                    stopper.best_epoch = state.best_epoch;
                    stopper.epochs_since_improvement = state.epochs_since_improvement;
                    adam = Adam::from_state(state, config.learning_rate);
                }
                let report_path = latest.join("train_report.json");
                if report_path.exists() {
                    report = TrainReport::load(&report_path)?;
                }
                best_params = match &best_dir {
                    Some(bd) if bd.join("manifest.json").exists() => load_checkpoint(bd)?.0,
                    _ => params.clone(),
                };
            }
        }
    }

    for epoch in adam.state.epoch..max_epochs {
        let started = Instant::now();
        let en = epoch as u64;
        let epoch_1 = epoch + 1;

        let mut order = train_idx.clone();
        order.shuffle(&mut train_stream(opts.seed, spec.tag, en, SHUFFLE_SLOT));
        let window_base = train_stream(opts.seed, spec.tag, en, WINDOW_SLOT).next_u64();
        let window_val_base = train_stream(opts.seed, spec.tag, 0, WINDOW_VAL_SLOT).next_u64();

        let mut sum = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(bs).enumerate() {
            let mut rng = train_stream(opts.seed, spec.tag, en, bi as u64);
            let (loss, grads) = match spec.kind {
                StageKind::Trajectory { dynamic } => {
                    let o = batch_objective(
                        dataset, chunk, params, config, dynamic, d, opts.jobs, &mut rng, true,
                    )?;
                    (o.loss, o.grads.expect("gradients requested"))
                }
                StageKind::Supervised => {
                    let t_ends: Vec<usize> = chunk
                        .iter()
                        .map(|&i| draw_window_end(window_base, i, t_h, t_total))
                        .collect();
                    let (loss, grads) =
                        supervised_objective(dataset, chunk, &t_ends, params, config, true)?;
                    (loss, grads.expect("gradients requested"))
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch_1, loss });
            }
            adam.step(params, &grads);
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let train_loss = sum / count as f64;

        let mut vsum = 0.0;
        let mut vcount = 0usize;
        for (vb, chunk) in val_idx.chunks(bs).enumerate() {
            let mut rng = train_stream(opts.seed, spec.tag, en, VAL_SLOT + vb as u64);
            let loss = match spec.kind {
                StageKind::Trajectory { dynamic } => {
                    batch_objective(dataset, chunk, params, config, dynamic, d, opts.jobs, &mut rng, false)?
                        .loss
                }
                StageKind::Supervised => {
                    let t_ends: Vec<usize> = chunk
                        .iter()
                        .map(|&i| draw_window_end(window_val_base, i, t_h, t_total))
                        .collect();
                    supervised_objective(dataset, chunk, &t_ends, params, config, false)?.0
                }
            };
            vsum += loss * chunk.len() as f64;
            vcount += chunk.len();
        }
        let val_loss = vsum / vcount as f64;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch: epoch_1, loss: val_loss });
        }

        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report
            .epoch_seconds
            .push(if opts.deterministic { 0.0 } else { started.elapsed().as_secs_f64() });

        let stop = stopper.observe(epoch_1, val_loss);
        if stopper.improved_at(epoch_1) {
            best_params = params.clone();
            if let Some(bd) = &best_dir {
                save_checkpoint(bd, &best_params, config, None, spec.tag)?;
            }
        }
        report.best_epoch = stopper.best_epoch;

        adam.state.epoch = epoch_1;
        adam.state.best_val_loss = stopper.best;
        adam.state.best_epoch = stopper.best_epoch;
        adam.state.epochs_since_improvement = stopper.epochs_since_improvement;
        if let Some(latest) = &latest_dir {
            save_checkpoint(latest, params, config, None, spec.tag)?;
            save_optimizer_state(latest, &adam.state)?;
            report.save(&latest.join("train_report.json"))?;
        }
        if stop {
            break;
        }
    }

    *params = best_params;
    if let (Some(out), Some(bd)) = (&opts.out_dir, &best_dir) {
        save_checkpoint(bd, params, config, None, spec.tag)?;
        report.checkpoint = Some(bd.display().to_string());
        report.save(&out.join("train_report.json"))?;
    }
    Ok(report)
}

fn validated(config: &ExperimentConfig) -> Result<(), Error> {
    let violations = config.validate();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(violations))
    }
}

/// Static-graph training from random init.
pub fn train_static(
    dataset: &Dataset,
    config: &ExperimentConfig,
    opts: &TrainOptions,
) -> Result<(ModelParameters, TrainReport), Error> {
    validated(config)?;
    let mut params = init_parameters(config, None, opts.seed);
    let spec = StageSpec {
        tag: STAGE_STATIC,
        kind: StageKind::Trajectory { dynamic: false },
        max_epochs: STATIC_MAX_EPOCHS,
    };
    let report = run_stage(dataset, config, &mut params, &spec, opts)?;
    Ok((params, report))
}

/// Dynamic-graph training from random init (the single-stage ablation).
pub fn train_dynamic_single(
    dataset: &Dataset,
    config: &ExperimentConfig,
    opts: &TrainOptions,
) -> Result<(ModelParameters, TrainReport), Error> {
    validated(config)?;
    let mut params = init_parameters(config, None, opts.seed);
    let spec = StageSpec {
        tag: STAGE_DYNAMIC_SINGLE,
        kind: StageKind::Trajectory { dynamic: true },
        max_epochs: DYNAMIC_MAX_EPOCHS,
    };
    let report = run_stage(dataset, config, &mut params, &spec, opts)?;
    Ok((params, report))
}

pub(crate) fn stage_complete(dir: &Path) -> bool {
    dir.join("train_report.json").exists() && dir.join("checkpoint").join("manifest.json").exists()
}

/// Double-stage pipeline: static training first, then dynamic fine-tuning
/// of everything (evolution unit included) from the stage-1 optimum. An
/// already-completed stage 1 under `out_dir/stage1` is reused.
pub fn train_two_stage(
    dataset: &Dataset,
    config: &ExperimentConfig,
    opts: &TrainOptions,
) -> Result<(ModelParameters, TrainReport, TrainReport), Error> {
    validated(config)?;
    let stage1_dir = opts.out_dir.as_ref().map(|o| o.join("stage1"));
    let stage1_opts = TrainOptions { out_dir: stage1_dir.clone(), ..opts.clone() };

    let (mut params, report1) = match &stage1_dir {
        Some(dir) if stage_complete(dir) => {
            let (p, _) = load_checkpoint(&dir.join("checkpoint"))?;
            let r = TrainReport::load(&dir.join("train_report.json"))?;
            (p, r)
        }
        _ => {
            let mut p = init_parameters(config, None, opts.seed);
            let spec = StageSpec {
                tag: STAGE_STATIC,
                kind: StageKind::Trajectory { dynamic: false },
                max_epochs: STATIC_MAX_EPOCHS,
            };
            let r = run_stage(dataset, config, &mut p, &spec, &stage1_opts)?;
            (p, r)
        }
    };

    let stage2_opts =
        TrainOptions { out_dir: opts.out_dir.as_ref().map(|o| o.join("stage2")), ..opts.clone() };
    let spec = StageSpec {
        tag: STAGE_DYNAMIC_DOUBLE,
        kind: StageKind::Trajectory { dynamic: true },
        max_epochs: DYNAMIC_MAX_EPOCHS,
    };
    let report2 = run_stage(dataset, config, &mut params, &spec, &stage2_opts)?;
    Ok((params, report1, report2))
}

/// Trains the encoder against ground-truth edge labels (the upper-bound
/// baseline). Windows slide to a fresh uniformly drawn end step per sample
/// each epoch.
pub fn train_supervised_edges(
    dataset: &Dataset,
    config: &ExperimentConfig,
    opts: &TrainOptions,
) -> Result<(ModelParameters, TrainReport), Error> {
    validated(config)?;
    let mut params = init_parameters(config, None, opts.seed);
    let spec = StageSpec {
        tag: STAGE_SUPERVISED,
        kind: StageKind::Supervised,
        max_epochs: SUPERVISED_MAX_EPOCHS,
    };
    let report = run_stage(dataset, config, &mut params, &spec, opts)?;
    Ok((params, report))
}

/// Everything a training run produces: final (best-validation) parameters
/// plus one report per stage, in execution order.
pub struct TrainedArtifacts {
    pub params: ModelParameters,
    pub reports: Vec<TrainReport>,
}

pub fn train_variant(
    dataset: &Dataset,
    config: &ExperimentConfig,
    variant: Variant,
    opts: &TrainOptions,
) -> Result<TrainedArtifacts, Error> {
    match variant {
        Variant::Static => {
            let (params, r) = train_static(dataset, config, opts)?;
            Ok(TrainedArtifacts { params, reports: vec![r] })
        }
        Variant::DynamicSingle => {
            let (params, r) = train_dynamic_single(dataset, config, opts)?;
            Ok(TrainedArtifacts { params, reports: vec![r] })
        }
        Variant::DynamicDouble => {
            let (params, r1, r2) = train_two_stage(dataset, config, opts)?;
            Ok(TrainedArtifacts { params, reports: vec![r1, r2] })
        }
        Variant::Supervised => {
            let (params, r) = train_supervised_edges(dataset, config, opts)?;
            Ok(TrainedArtifacts { params, reports: vec![r] })
        }
    }
}
