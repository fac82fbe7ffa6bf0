//! Command-line front end: dataset simulation, training, evaluation,
//! parameter sweeps, plotting, and artifact validation.
//!
//! Every command is reproducible from its inputs plus `--seed`; with
//! `--deterministic` the written artifacts are byte-identical across
//! re-runs. Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 training divergence.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, validate_checkpoint_dir};
use crate::config::ExperimentConfig;
use crate::dataset::{
    generate_dataset, load_dataset, save_dataset, validate_dataset_dir, Dataset, LABEL_WITH_LINK,
};
use crate::encoder::SampleMode;
use crate::error::Error;
use crate::metrics::{
    evaluate, forecast_trajectory, recognition_graphs, EvalOptions, EvalReport, MeanStd, RunEval,
};
use crate::plot;
use crate::rngutil::stream_rng;
use crate::sim::WorldConfig;
use crate::train::{stage_complete, train_variant, TrainOptions, TrainReport, Variant};

#[derive(Parser)]
#[command(
    name = "trajgraph",
    version,
    about = "Multi-agent trajectory forecasting with evolving latent interaction graphs"
)]
pub struct Cli {
    /// Experiment config JSON; defaults to the built-in desk profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Base RNG seed; defaults to the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker count for parallel sections (1 = serial).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Zero out wall-clock fields so re-runs produce identical artifacts.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Static,
    DynamicSingle,
    DynamicDouble,
    Supervised,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Static => Variant::Static,
            VariantArg::DynamicSingle => Variant::DynamicSingle,
            VariantArg::DynamicDouble => Variant::DynamicDouble,
            VariantArg::Supervised => Variant::Supervised,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    EdgeTypes,
    ReencodeGap,
}

impl SweepAxis {
    pub fn tag(self) -> &'static str {
        match self {
            SweepAxis::EdgeTypes => "edge-types",
            SweepAxis::ReencodeGap => "reencode-gap",
        }
    }

    fn apply(self, base: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::EdgeTypes => cfg.edge_types_L = value,
            SweepAxis::ReencodeGap => cfg.reencode_gap = value,
        }
        cfg
    }
}

/// What a sweep runs: one axis, its values, and how many seeds per value.
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub runs_per_value: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.values.is_empty() {
            v.push("sweep needs at least one value".into());
        }
        if self.values.contains(&0) {
            v.push("sweep values must be positive".into());
        }
        let mut sorted = self.values.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.values.len() {
            v.push("sweep values must be distinct".into());
        }
        if self.runs_per_value == 0 {
            v.push("runs-per-value must be positive".into());
        }
        v
    }
}

#[derive(Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    /// Mean ± std of the last state-error-curve entry over runs; absent for
    /// recognition-only variants.
    pub final_state_error: Option<MeanStd>,
    pub report: EvalReport,
}

#[derive(Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub variant: String,
    pub runs_per_value: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let body = serde_json::to_string_pretty(self).expect("sweep report serializes");
        std::fs::write(path, body.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SweepReport, Error> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&body)
            .map_err(|e| Error::Data(format!("cannot parse {}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// State-error-vs-step curves with deviation bands, from evaluation reports.
    Curve,
    /// Metric-vs-value trend from a sweep report.
    Sweep,
    /// Per-edge link-probability heatmap over prediction steps for one sample.
    Heatmap,
    /// Trajectory overlay (history, truth, prediction) for one sample.
    Overlay,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic two-phase particle dataset directory.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        num_samples: usize,
    },
    /// Train one model variant on a dataset.
    Train {
        /// Dataset directory (from `simulate`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        variant: VariantArg,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Cap on training epochs, overriding the stage default.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Evaluate a trained checkpoint on a dataset's test split.
    Evaluate {
        /// Checkpoint directory, or a training output directory containing one.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Prediction horizons for displacement metrics (default: full future).
        #[arg(long, value_delimiter = ',')]
        horizon: Vec<usize>,
        /// Trajectory hypotheses per sample; 1 evaluates the deterministic
        /// mean rollout, which is the right setting for this noiseless task.
        #[arg(long, default_value_t = 20)]
        num_hypotheses: usize,
        /// Take per-agent minima over hypotheses instead of scene-joint.
        #[arg(long)]
        per_agent_min: bool,
        /// Cap on evaluated test samples.
        #[arg(long)]
        max_samples: Option<usize>,
    },
    /// Train and evaluate across one config axis, several seeds per value.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        runs_per_value: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::DynamicDouble)]
        variant: VariantArg,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        num_hypotheses: usize,
        #[arg(long)]
        max_samples: Option<usize>,
    },
    /// Render reports or per-sample model behavior as PNG images.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Evaluation report(s) for `curve`, sweep report for `sweep`.
        #[arg(long)]
        report: Vec<PathBuf>,
        /// Legend labels matching `--report` (default: file stems).
        #[arg(long)]
        label: Vec<String>,
        /// Checkpoint for `heatmap` and `overlay`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset for `heatmap` and `overlay`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sample index (default: first changing test sample).
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Check a config file, dataset directory, or checkpoint directory.
    Validate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// Parses real process arguments and runs them, returning the exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), Error> {
    let config = load_config(cli.config.as_deref())?;
    let jobs = cli.jobs.unwrap_or(1).max(1);
    match cli.command {
        Command::Simulate { num_samples } => {
            cmd_simulate(&config, cli.seed, require_out(&cli.out)?, num_samples)
        }
        Command::Train { data, variant, resume, max_epochs } => {
            let opts = TrainOptions {
                seed: cli.seed.unwrap_or(config.seed),
                out_dir: Some(require_out(&cli.out)?),
                resume,
                deterministic: cli.deterministic,
                max_epochs_override: max_epochs,
                jobs,
            };
            cmd_train(&config, &data, variant.into(), &opts)
        }
        Command::Evaluate {
            model,
            data,
            horizon,
            num_hypotheses,
            per_agent_min,
            max_samples,
        } => {
            let opts = EvalOptions {
                horizons: horizon,
                num_hypotheses,
                seed: cli.seed.unwrap_or(7),
                per_agent_min,
                jobs,
                max_samples,
            };
            cmd_evaluate(&model, &data, &opts, cli.out.as_deref())
        }
        Command::Sweep {
            data,
            axis,
            values,
            runs_per_value,
            variant,
            resume,
            max_epochs,
            num_hypotheses,
            max_samples,
        } => {
            let spec = SweepSpec { axis, values, runs_per_value };
            let opts = TrainOptions {
                seed: cli.seed.unwrap_or(config.seed),
                out_dir: None,
                resume,
                deterministic: cli.deterministic,
                max_epochs_override: max_epochs,
                jobs,
            };
            cmd_sweep(
                &config,
                &data,
                &spec,
                variant.into(),
                &opts,
                require_out(&cli.out)?,
                num_hypotheses,
                max_samples,
            )
        }
        Command::Plot { kind, report, label, model, data, sample } => cmd_plot(
            kind,
            &report,
            &label,
            model.as_deref(),
            data.as_deref(),
            sample,
            require_out(&cli.out)?,
            cli.seed.unwrap_or(7),
        ),
        Command::Validate { data, model } => {
            cmd_validate(cli.config.as_deref(), data.as_deref(), model.as_deref())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::desk()),
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<PathBuf, Error> {
    out.clone().ok_or_else(|| Error::Config(vec!["this command needs --out".into()]))
}

/// Accepts a checkpoint directory directly, a training output directory
/// containing `checkpoint/`, or a two-stage output containing `stage2/`.
fn resolve_checkpoint_dir(model: &Path) -> Result<PathBuf, Error> {
    for cand in [
        model.to_path_buf(),
        model.join("checkpoint"),
        model.join("stage2").join("checkpoint"),
    ] {
        if cand.join("manifest.json").exists() {
            return Ok(cand);
        }
    }
    Err(Error::Data(format!("no checkpoint manifest under {}", model.display())))
}

fn variant_from_stage(stage: &str) -> Result<Variant, Error> {
    for v in [Variant::Static, Variant::DynamicSingle, Variant::DynamicDouble, Variant::Supervised]
    {
        if v.tag() == stage {
            return Ok(v);
        }
    }
    Err(Error::Data(format!("checkpoint has unknown stage tag {stage:?}")))
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(
    config: &ExperimentConfig,
    seed: Option<u64>,
    out: PathBuf,
    num_samples: usize,
) -> Result<(), Error> {
    let seed = seed.unwrap_or(config.seed);
    let total = config.history_len_T_h + config.future_len_T_f;
    let world = WorldConfig {
        n_particles: config.num_agents_N,
        total_steps: total,
        seed,
        ..WorldConfig::desk(seed)
    };
    let dataset =
        generate_dataset(&world, num_samples, config.history_len_T_h, config.future_len_T_f)?;
    save_dataset(&dataset, &out)?;
    let change = (0..dataset.num_samples()).filter(|&i| dataset.is_change_sample(i)).count();
    let (train, val, test) = dataset.split();
    println!(
        "wrote {} samples to {} ({} change / {} no-change; split {}/{}/{})",
        num_samples,
        out.display(),
        change,
        num_samples - change,
        train.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(
    config: &ExperimentConfig,
    data: &Path,
    variant: Variant,
    opts: &TrainOptions,
) -> Result<(), Error> {
    let dataset = load_dataset(data)?;
    let artifacts = train_variant(&dataset, config, variant, opts)?;
    for report in &artifacts.reports {
        print_report(report);
    }
    Ok(())
}

fn print_report(report: &TrainReport) {
    let best = report.val_loss.get(report.best_epoch.wrapping_sub(1)).copied();
    println!(
        "stage {}: {} epochs, best validation {} at epoch {}{}",
        report.stage,
        report.epochs(),
        best.map_or_else(|| "-".into(), |v| format!("{v:.6}")),
        report.best_epoch,
        report
            .checkpoint
            .as_deref()
            .map_or_else(String::new, |c| format!(", checkpoint {c}")),
    );
}

// ---------------------------------------------------------------------------
// evaluate

fn cmd_evaluate(
    model: &Path,
    data: &Path,
    opts: &EvalOptions,
    out: Option<&Path>,
) -> Result<(), Error> {
    let ckpt_dir = resolve_checkpoint_dir(model)?;
    let (params, manifest) = load_checkpoint(&ckpt_dir)?;
    let variant = variant_from_stage(&manifest.stage)?;
    let dataset = load_dataset(data)?;
    let run = evaluate(&params, &manifest.config, &dataset, variant, opts)?;
    let report = EvalReport::from_runs(std::slice::from_ref(&run))?;

    let dest = match out {
        Some(p) if p.extension().is_some_and(|e| e == "json") => p.to_path_buf(),
        Some(p) => {
            std::fs::create_dir_all(p)?;
            p.join("eval.json")
        }
        None => model.join("eval.json"),
    };
    report.save(&dest)?;
    print_eval(&report);
    println!("report written to {}", dest.display());
    Ok(())
}

fn fmt_opt(ms: &Option<MeanStd>) -> String {
    ms.as_ref().map_or_else(|| "-".into(), |m| format!("{:.1}%", m.mean))
}

fn print_eval(report: &EvalReport) {
    println!(
        "edge accuracy: no-change {}, change {} ({} samples)",
        fmt_opt(&report.edge_accuracy_no_change),
        fmt_opt(&report.edge_accuracy_change),
        report.num_samples,
    );
    for (i, h) in report.horizons.iter().enumerate() {
        if let (Some(ade), Some(fde)) = (report.min_ade.get(i), report.min_fde.get(i)) {
            println!("horizon {h}: minADE {:.4}, minFDE {:.4}", ade.mean, fde.mean);
        }
    }
    if let Some(last) = report.state_error_curve.last() {
        println!("final-step state error {last:.4}");
    }
    match report.median_change_delay {
        Some(d) => println!(
            "median change-detection delay {d:.1} steps ({} undetected)",
            report.change_delay_sentinels
        ),
        None if report.change_delay_sentinels > 0 => println!(
            "change never detected on {} samples",
            report.change_delay_sentinels
        ),
        None => {}
    }
}

// ---------------------------------------------------------------------------
// sweep

fn copy_dir(src: &Path, dst: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dst)?;
    for entry in std::fs::read_dir(src)? {
        let entry = entry?;
        let to = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &to)?;
        } else {
            std::fs::copy(entry.path(), &to)?;
        }
    }
    Ok(())
}

fn final_stage_dir(run_dir: &Path, variant: Variant) -> PathBuf {
    match variant {
        Variant::DynamicDouble => run_dir.join("stage2"),
        _ => run_dir.to_path_buf(),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    base: &ExperimentConfig,
    data: &Path,
    spec: &SweepSpec,
    variant: Variant,
    train_opts: &TrainOptions,
    out: PathBuf,
    num_hypotheses: usize,
    max_samples: Option<usize>,
) -> Result<(), Error> {
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let dataset = load_dataset(data)?;
    std::fs::create_dir_all(&out)?;

    let mut rows = Vec::new();
    for &value in &spec.values {
        let cfg = spec.axis.apply(base, value);
        let violations = cfg.validate();
        if !violations.is_empty() {
            return Err(Error::Config(
                violations.into_iter().map(|v| format!("{}={value}: {v}", spec.axis.tag())).collect(),
            ));
        }

        let mut runs: Vec<RunEval> = Vec::new();
        for r in 0..spec.runs_per_value {
            let seed = train_opts.seed + r as u64;
            let run_dir = out.join(format!("{}{}-seed{}", spec.axis.tag(), value, seed));

            // The static first stage ignores the re-encoding gap, so along
            // that axis each seed's stage-1 optimum is shared across values.
            if spec.axis == SweepAxis::ReencodeGap && variant == Variant::DynamicDouble {
                let shared = out.join(format!("stage1-seed{seed}"));
                let local = run_dir.join("stage1");
                if stage_complete(&local) && !stage_complete(&shared) {
                    copy_dir(&local, &shared)?;
                }
                if stage_complete(&shared) && !stage_complete(&local) {
                    copy_dir(&shared, &local)?;
                }
            }

            let final_dir = final_stage_dir(&run_dir, variant);
            let params = if stage_complete(&final_dir) {
                load_checkpoint(&final_dir.join("checkpoint"))?.0
            } else {
                let opts = TrainOptions {
                    seed,
                    out_dir: Some(run_dir.clone()),
                    ..train_opts.clone()
                };
                let artifacts = train_variant(&dataset, &cfg, variant, &opts)?;
                artifacts.params
            };
            if spec.axis == SweepAxis::ReencodeGap && variant == Variant::DynamicDouble {
                let shared = out.join(format!("stage1-seed{seed}"));
                let local = run_dir.join("stage1");
                if stage_complete(&local) && !stage_complete(&shared) {
                    copy_dir(&local, &shared)?;
                }
            }

            let eval_opts = EvalOptions {
                horizons: Vec::new(),
                num_hypotheses,
                seed: 7,
                per_agent_min: false,
                jobs: train_opts.jobs,
                max_samples,
            };
            let run = evaluate(&params, &cfg, &dataset, variant, &eval_opts)?;
            println!(
                "{}={} seed {}: no-change {} change {} final err {}",
                spec.axis.tag(),
                value,
                seed,
                run.edge_accuracy_no_change.map_or_else(|| "-".into(), |v| format!("{v:.1}%")),
                run.edge_accuracy_change.map_or_else(|| "-".into(), |v| format!("{v:.1}%")),
                run.state_error_curve
                    .last()
                    .map_or_else(|| "-".into(), |v| format!("{v:.4}")),
            );
            runs.push(run);
        }

        let finals: Vec<f64> =
            runs.iter().filter_map(|r| r.state_error_curve.last().copied()).collect();
        let final_state_error =
            if finals.len() == runs.len() { Some(MeanStd::from_values(&finals)) } else { None };
        rows.push(SweepRow {
            value,
            final_state_error,
            report: EvalReport::from_runs(&runs)?,
        });
    }

    let report = SweepReport {
        axis: spec.axis.tag().to_string(),
        variant: variant.tag().to_string(),
        runs_per_value: spec.runs_per_value,
        rows,
    };
    let dest = out.join("sweep.json");
    report.save(&dest)?;

    println!("{:>12} {:>18} {:>18} {:>18}", "value", "no-change acc", "change acc", "final err");
    for row in &report.rows {
        let acc = |m: &Option<MeanStd>| {
            m.as_ref().map_or_else(|| "-".into(), |v| format!("{:.1} +- {:.1}", v.mean, v.std))
        };
        println!(
            "{:>12} {:>18} {:>18} {:>18}",
            row.value,
            acc(&row.report.edge_accuracy_no_change),
            acc(&row.report.edge_accuracy_change),
            row.final_state_error
                .as_ref()
                .map_or_else(|| "-".into(), |v| format!("{:.4} +- {:.4}", v.mean, v.std)),
        );
    }
    if let Some(best) = report
        .rows
        .iter()
        .filter_map(|r| r.final_state_error.as_ref().map(|m| (r.value, m.mean)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
    {
        println!("best value by final-step state error: {}", best.0);
    }
    println!("sweep report written to {}", dest.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// plot

fn first_change_test_sample(dataset: &Dataset) -> Option<usize> {
    let (_, _, test) = dataset.split();
    test.clone().find(|&i| dataset.is_change_sample(i)).or_else(|| test.clone().next())
}

fn load_model_and_data(
    model: Option<&Path>,
    data: Option<&Path>,
    kind: &str,
) -> Result<(crate::params::ModelParameters, crate::checkpoint::CheckpointManifest, Dataset), Error>
{
    let model = model
        .ok_or_else(|| Error::Config(vec![format!("{kind} plots need --model")]))?;
    let data =
        data.ok_or_else(|| Error::Config(vec![format!("{kind} plots need --data")]))?;
    let (params, manifest) = load_checkpoint(&resolve_checkpoint_dir(model)?)?;
    let dataset = load_dataset(data)?;
    Ok((params, manifest, dataset))
}

#[allow(clippy::too_many_arguments)]
fn cmd_plot(
    kind: PlotKind,
    reports: &[PathBuf],
    labels: &[String],
    model: Option<&Path>,
    data: Option<&Path>,
    sample: Option<usize>,
    out: PathBuf,
    seed: u64,
) -> Result<(), Error> {
    std::fs::create_dir_all(&out)?;
    match kind {
        PlotKind::Curve => {
            if reports.is_empty() {
                return Err(Error::Config(vec!["curve plots need at least one --report".into()]));
            }
            let mut series = Vec::new();
            for (i, path) in reports.iter().enumerate() {
                let report = EvalReport::load(path)?;
                if report.state_error_curve.is_empty() {
                    return Err(Error::Data(format!(
                        "{} has no state-error curve (recognition-only run?)",
                        path.display()
                    )));
                }
                let label = labels.get(i).cloned().unwrap_or_else(|| {
                    path.file_stem().map_or_else(|| format!("run {i}"), |s| s.to_string_lossy().into_owned())
                });
                series.push((
                    label,
                    report.state_error_curve.clone(),
                    Some(report.state_error_std.clone()),
                ));
            }
            let dest = out.join("state_error.png");
            plot::error_curve_plot(&series, "STATE ERROR VS STEP", &dest)?;
            println!("wrote {}", dest.display());
        }
        PlotKind::Sweep => {
            let path = reports
                .first()
                .ok_or_else(|| Error::Config(vec!["sweep plots need --report".into()]))?;
            let sweep = SweepReport::load(path)?;
            let mut values = Vec::new();
            let mut means = Vec::new();
            let mut stds = Vec::new();
            for row in &sweep.rows {
                let m = row.final_state_error.as_ref().ok_or_else(|| {
                    Error::Data(format!("sweep row {} has no state error", row.value))
                })?;
                values.push(row.value as f64);
                means.push(m.mean);
                stds.push(m.std);
            }
            let dest = out.join(format!("sweep_{}.png", sweep.axis));
            plot::sweep_plot(
                &sweep.axis.to_uppercase(),
                &values,
                &means,
                &stds,
                "FINAL-STEP ERROR VS VALUE",
                &dest,
            )?;
            println!("wrote {}", dest.display());
        }
        PlotKind::Heatmap => {
            let (params, manifest, dataset) = load_model_and_data(model, data, "heatmap")?;
            let variant = variant_from_stage(&manifest.stage)?;
            let idx = sample
                .or_else(|| first_change_test_sample(&dataset))
                .ok_or_else(|| Error::Data("dataset has no samples".into()))?;
            let positions = dataset.positions.slice(s![idx, .., .., ..]);
            let categories: Vec<usize> =
                dataset.categories.slice(s![idx, ..]).iter().copied().collect();
            let (per_step, _, t_h) = recognition_graphs(
                &params,
                &manifest.config,
                positions,
                &categories,
                variant,
                (seed, idx as u64),
            )?;
            let n = dataset.num_agents();
            let mut rows = Vec::new();
            let mut labels_v = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        labels_v.push(format!("{i}>{j}"));
                        rows.push((i, j));
                    }
                }
            }
            let mut probs = ndarray::Array2::zeros((rows.len(), per_step.len()));
            for (r, &(i, j)) in rows.iter().enumerate() {
                for (t, g) in per_step.iter().enumerate() {
                    probs[[r, t]] = g[[i, j, LABEL_WITH_LINK as usize]];
                }
            }
            let marker = match dataset.change_steps[idx] {
                s if s >= 0 => Some(s as usize),
                _ => None,
            };
            let dest = out.join(format!("heatmap_sample{idx}.png"));
            plot::heatmap_plot(
                &labels_v,
                &probs,
                t_h,
                marker,
                &format!("P(LINK) SAMPLE {idx}"),
                &dest,
            )?;
            println!("wrote {}", dest.display());
        }
        PlotKind::Overlay => {
            let (params, manifest, dataset) = load_model_and_data(model, data, "overlay")?;
            let variant = variant_from_stage(&manifest.stage)?;
            let idx = sample
                .or_else(|| first_change_test_sample(&dataset))
                .ok_or_else(|| Error::Data("dataset has no samples".into()))?;
            let t_h = dataset.history_len;
            let t_f = dataset.future_len;
            let positions = dataset.positions.slice(s![idx, .., .., ..]);
            let categories: Vec<usize> =
                dataset.categories.slice(s![idx, ..]).iter().copied().collect();
            let mut rng = stream_rng(seed, idx as u64);
            let predicted = forecast_trajectory(
                &params,
                &manifest.config,
                positions.slice(s![..t_h, .., ..]),
                &categories,
                t_f,
                variant,
                SampleMode::Mean,
                &mut rng,
            )?;
            let title = match dataset.change_steps[idx] {
                s if s >= 0 => format!("SAMPLE {idx} (SWITCH AT {s})"),
                _ => format!("SAMPLE {idx}"),
            };
            let dest = out.join(format!("overlay_sample{idx}.png"));
            plot::overlay_plot(
                positions.slice(s![..t_h, .., ..]),
                positions.slice(s![t_h.., .., ..]),
                predicted.view(),
                &title,
                &dest,
            )?;
            println!("wrote {}", dest.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// validate

fn cmd_validate(
    config: Option<&Path>,
    data: Option<&Path>,
    model: Option<&Path>,
) -> Result<(), Error> {
    if config.is_none() && data.is_none() && model.is_none() {
        return Err(Error::Config(vec![
            "nothing to validate; pass --config, --data, or --model".into(),
        ]));
    }
    if let Some(path) = config {
        let cfg = ExperimentConfig::from_path(path)?;
        println!(
            "config {}: OK ({} agents, {} edge types, hidden {})",
            path.display(),
            cfg.num_agents_N,
            cfg.edge_types_L,
            cfg.hidden_dim
        );
    }
    if let Some(dir) = data {
        let summary = validate_dataset_dir(dir)?;
        println!("dataset {}: {summary}", dir.display());
    }
    if let Some(dir) = model {
        let resolved = resolve_checkpoint_dir(dir)?;
        let summary = validate_checkpoint_dir(&resolved)?;
        println!("checkpoint {}: {summary}", resolved.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_every_subcommand() {
        Cli::try_parse_from(["trajgraph", "simulate", "--out", "d", "--num-samples", "5"]).unwrap();
        Cli::try_parse_from([
            "trajgraph", "train", "--data", "d", "--variant", "dynamic-double", "--out", "o",
            "--max-epochs", "3",
        ])
        .unwrap();
        Cli::try_parse_from([
            "trajgraph", "evaluate", "--model", "m", "--data", "d", "--horizon", "10,50",
            "--num-hypotheses", "1",
        ])
        .unwrap();
        Cli::try_parse_from([
            "trajgraph", "sweep", "--data", "d", "--axis", "reencode-gap", "--values", "1,5,10",
            "--out", "o",
        ])
        .unwrap();
        Cli::try_parse_from(["trajgraph", "plot", "--kind", "curve", "--report", "e.json", "--out", "p"])
            .unwrap();
        Cli::try_parse_from(["trajgraph", "validate", "--data", "d"]).unwrap();
    }

    #[test]
    fn unknown_variant_is_rejected_at_parse_time() {
        let err = Cli::try_parse_from([
            "trajgraph", "train", "--data", "d", "--variant", "quantum", "--out", "o",
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn sweep_spec_rejects_empty_duplicate_and_zero_values() {
        let bad = SweepSpec { axis: SweepAxis::ReencodeGap, values: vec![], runs_per_value: 3 };
        assert!(!bad.validate().is_empty());
        let dup = SweepSpec { axis: SweepAxis::ReencodeGap, values: vec![5, 5], runs_per_value: 3 };
        assert!(!dup.validate().is_empty());
        let zero = SweepSpec { axis: SweepAxis::EdgeTypes, values: vec![0, 2], runs_per_value: 3 };
        assert!(!zero.validate().is_empty());
        let none = SweepSpec { axis: SweepAxis::EdgeTypes, values: vec![2, 4], runs_per_value: 0 };
        assert!(!none.validate().is_empty());
        let ok = SweepSpec { axis: SweepAxis::ReencodeGap, values: vec![1, 5, 10], runs_per_value: 3 };
        assert!(ok.validate().is_empty());
    }

    #[test]
    fn missing_out_is_a_config_error() {
        let err = require_out(&None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn stage_tags_round_trip_to_variants() {
        for v in
            [Variant::Static, Variant::DynamicSingle, Variant::DynamicDouble, Variant::Supervised]
        {
            assert_eq!(variant_from_stage(v.tag()).unwrap(), v);
        }
        assert!(variant_from_stage("warp-drive").is_err());
    }
}
