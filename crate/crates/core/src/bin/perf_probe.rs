use std::time::Instant;

use ndarray::Array2;
use trajgraph::config::ExperimentConfig;
use trajgraph::dataset::generate_dataset;
use trajgraph::encoder::{embed_steps_vars, encode_vars};
use trajgraph::model::{BatchLayout, ModelBind};
use trajgraph::params::init_parameters;
use trajgraph::sim::WorldConfig;
use trajgraph::tape::Tape;

fn main() {
    bench_exp();
    let reps = 2000;
    let a = Array2::<f64>::from_elem((160, 34), 0.5);
    let b = Array2::<f64>::from_elem((34, 96), 0.25);
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        acc += a.dot(&b)[[0, 0]];
    }
    let dt = t.elapsed().as_secs_f64();
    let flops = 2.0 * 160.0 * 34.0 * 96.0 * reps as f64;
    println!("gemm 160x34x96: {:.2} GFlop/s ({acc:.1})", flops / dt / 1e9);

    let a = Array2::<f64>::from_elem((640, 64), 0.5);
    let b = Array2::<f64>::from_elem((64, 32), 0.25);
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        acc += a.dot(&b)[[0, 0]];
    }
    let dt = t.elapsed().as_secs_f64();
    let flops = 2.0 * 640.0 * 64.0 * 32.0 * reps as f64;
    println!("gemm 640x64x32: {:.2} GFlop/s ({acc:.1})", flops / dt / 1e9);

    let cfg = ExperimentConfig::desk();
    let world = WorldConfig::desk(42);
    let ds = generate_dataset(&world, 32, cfg.history_len_T_h, cfg.future_len_T_f).unwrap();
    let params = init_parameters(&cfg, None, 42);
    let layout = BatchLayout::new(ds.categories.view(), cfg.num_categories_M).unwrap();
    let n = layout.n;

    let reps = 20;
    let t_embed = {
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let bind = ModelBind::new(&mut tape, &params, &cfg);
            let steps: Vec<_> = (0..cfg.history_len_T_h)
                .map(|t| {
                    let mut x = Array2::zeros((layout.agent_rows(), 2));
                    for r in 0..layout.agent_rows() {
                        x[[r, 0]] = ds.positions[[r / n, t, r % n, 0]];
                        x[[r, 1]] = ds.positions[[r / n, t, r % n, 1]];
                    }
                    tape.leaf(x)
                })
                .collect();
            let emb = embed_steps_vars(&mut tape, &bind, &layout, &steps);
            std::hint::black_box(tape.value(emb).sum());
        }
        t0.elapsed() / reps
    };
    println!("embed GRU 20 steps fwd: {t_embed:?}/encode");

    {
        use trajgraph::train::{loss_dynamic, loss_static, train_variant, TrainOptions, Variant};
        use trajgraph::params::init_parameters as ip;
        use trajgraph::rngutil::stream_rng;
        let mut cfg2 = cfg.clone();
        let ds2 = generate_dataset(&world, 640, cfg2.history_len_T_h, cfg2.future_len_T_f).unwrap();
        let params2 = ip(&cfg2, None, 42);
        let indices: Vec<usize> = (0..32).collect();
        let t = Instant::now();
        let ls = loss_static(&ds2, &indices, &params2, &cfg2, &mut stream_rng(1, 0)).unwrap();
        println!("static  fwd batch32: {:>8.2?}  loss {:.4}", t.elapsed(), ls.loss);
        let t = Instant::now();
        let ld = loss_dynamic(&ds2, &indices, &params2, &cfg2, &mut stream_rng(1, 0)).unwrap();
        println!("dynamic fwd batch32: {:>8.2?}  loss {:.4}", t.elapsed(), ld.loss);
        cfg2.seed = 7;
        let mut opts = TrainOptions::new(7);
        opts.max_epochs_override = Some(1);
        let t = Instant::now();
        train_variant(&ds2, &cfg2, Variant::Static, &opts).unwrap();
        println!("static  1 epoch over 416 train + 64 val: {:>8.2?}", t.elapsed());
        let t = Instant::now();
        train_variant(&ds2, &cfg2, Variant::DynamicSingle, &opts).unwrap();
        println!("dynamic 1 epoch over 416 train + 64 val: {:>8.2?}", t.elapsed());
    }

    let t_full = {
        let t0 = Instant::now();
        let mut nodes = 0;
        for _ in 0..reps {
            let mut tape = Tape::new();
            let bind = ModelBind::new(&mut tape, &params, &cfg);
            let steps: Vec<_> = (0..cfg.history_len_T_h)
                .map(|t| {
                    let mut x = Array2::zeros((layout.agent_rows(), 2));
                    for r in 0..layout.agent_rows() {
                        x[[r, 0]] = ds.positions[[r / n, t, r % n, 0]];
                        x[[r, 1]] = ds.positions[[r / n, t, r % n, 1]];
                    }
                    tape.leaf(x)
                })
                .collect();
            let emb = embed_steps_vars(&mut tape, &bind, &layout, &steps);
            let enc = encode_vars(&mut tape, &bind, &cfg, &layout, emb, None);
            nodes = tape.num_nodes();
            std::hint::black_box(tape.value(enc.logits).sum());
        }
        println!("encode tape nodes: {nodes}");
        t0.elapsed() / reps
    };
    println!("full encode fwd: {t_full:?}/encode");
}

fn bench_exp() {
    use trajgraph::tape::{fast_exp, fast_tanh, sigmoid};
    let xs: Vec<f64> = (0..1_000_000).map(|i| (i as f64 * 0.001) % 8.0 - 4.0).collect();
    let mut out = vec![0.0; xs.len()];
    macro_rules! bench {
        ($name:expr, $f:expr) => {{
            let t = std::time::Instant::now();
            for _ in 0..20 {
                for (o, &x) in out.iter_mut().zip(&xs) {
                    *o = $f(x);
                }
            }
            let ns = t.elapsed().as_secs_f64() * 1e9 / (20.0 * xs.len() as f64);
            println!("{}: {ns:.2} ns/elem ({:.3})", $name, out[777]);
        }};
    }
    bench!("fast_exp inlined", fast_exp);
    bench!("libm exp inlined", f64::exp);
    bench!("sigmoid inlined", sigmoid);
    bench!("fast_tanh inlined", fast_tanh);
    bench!("libm tanh inlined", f64::tanh);
}
