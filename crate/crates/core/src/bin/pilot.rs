//! Temporary calibration probe: trains every variant on a small dataset and
//! prints the headline metrics. Not part of the deliverable.

use std::time::Instant;
use trajgraph::dataset::generate_dataset;
use trajgraph::metrics::{evaluate, median_delay, EvalOptions};
use trajgraph::sim::WorldConfig;
use trajgraph::train::{train_variant, TrainOptions, Variant};
use trajgraph::ExperimentConfig;

fn main() {
    let world = WorldConfig::desk(42);
    let cfg = ExperimentConfig::desk();
    let t0 = Instant::now();
    let ds = generate_dataset(&world, 2000, cfg.history_len_T_h, cfg.future_len_T_f)
        .expect("dataset");
    let n_change = (0..ds.num_samples()).filter(|&i| ds.is_change_sample(i)).count();
    println!(
        "[{:6.1}s] dataset: 2000 samples, {} change / {} no-change",
        t0.elapsed().as_secs_f64(),
        n_change,
        2000 - n_change
    );

    let mut eopts = EvalOptions::new(7);
    eopts.max_samples = Some(150);

    for variant in [Variant::Static, Variant::Supervised, Variant::DynamicSingle, Variant::DynamicDouble] {
        let mut topts = TrainOptions::new(0);
        topts.deterministic = true;
        topts.max_epochs_override = Some(match variant {
            Variant::Static => 20,
            Variant::Supervised => 12,
            _ => 8,
        });
        let t = Instant::now();
        let art = train_variant(&ds, &cfg, variant, &topts).expect("train");
        let report = art.reports.last().unwrap();
        println!(
            "[{:6.1}s] {}: {} epochs, best val {:.4} at epoch {}",
            t0.elapsed().as_secs_f64(),
            variant.tag(),
            report.epochs(),
            report.val_loss[report.best_epoch - 1],
            report.best_epoch,
        );
        for (e, (tr, va)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
            println!("    epoch {e:2}  train {tr:9.4}  val {va:9.4}  [{:.1}s/epoch]", t.elapsed().as_secs_f64() / (e + 1) as f64);
        }
        let ev = evaluate(&art.params, &cfg, &ds, variant, &eopts).expect("eval");
        let fmt = |o: Option<f64>| o.map(|v| format!("{v:.1}%")).unwrap_or_else(|| "-".into());
        println!(
            "    acc no-change {}  change {}  samples {}",
            fmt(ev.edge_accuracy_no_change),
            fmt(ev.edge_accuracy_change),
            ev.num_samples
        );
        if !ev.state_error_curve.is_empty() {
            let c = &ev.state_error_curve;
            println!(
                "    state err step1 {:.4}  step25 {:.4}  final {:.4}   minADE {:.4} minFDE {:.4}",
                c[0],
                c[c.len() / 2],
                c[c.len() - 1],
                ev.min_ade[0],
                ev.min_fde[0]
            );
        }
        if !ev.change_delays.is_empty() {
            let missed = ev.change_delays.iter().filter(|d| d.is_none()).count();
            println!(
                "    change delay median {:?}  missed {}/{}",
                median_delay(&ev.change_delays),
                missed,
                ev.change_delays.len()
            );
        }
    }
    println!("[{:6.1}s] pilot done", t0.elapsed().as_secs_f64());
}
