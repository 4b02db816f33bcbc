//! Acceptance run: one PASS/FAIL line per criterion. Built without the libtest
//! harness so the lines always reach stdout.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{cheb_spectral_oracle, random_connected_edges, rng, uniform};
use gacunet::cli::{cmd_prepare, cmd_pretrain_base, cmd_reprogram, cmd_train, RunConfig};
use gacunet::dataio::synthetic::{bundled_flood_set, flood_set, write_pairs};
use gacunet::dataio::{resize_pair, split_dataset, ImagePair};
use gacunet::graph::{cheb_conv, gat_conv, Graph, NormalizedLaplacian};
use gacunet::gradsuite::{default_cases, format_table, run_cases};
use gacunet::metrics::{default_thresholds, evaluate, mean_average_precision, Overlap};
use gacunet::model::{Model, ModelSpec, Variant};
use gacunet::train::{train, LossKind, Sample, TrainConfig};
use gacunet::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn config(pairs: &[(&str, String)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    if took <= limit {
        Ok(format!("{detail}, {:.1}s", took.as_secs_f64()))
    } else {
        Err(format!("{detail}, but took {:.1}s (limit {}s)", took.as_secs_f64(), limit.as_secs()))
    }
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let results = run_cases(&default_cases());
    let names: BTreeSet<&str> = results.iter().map(|r| r.name.as_str()).collect();
    for want in [
        "conv3x3",
        "dilated_conv3x3",
        "maxpool2",
        "upsample2",
        "gat_conv",
        "cheb_conv",
        "center_of_mass",
        "input_transform",
        "output_map",
        "bce_loss",
        "dice_loss",
        "gac-unet_16x16",
    ] {
        if !names.contains(want) {
            return Err(format!("suite has no {want} case"));
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(format!("failed: {}\n{}", failed.join(", "), format_table(&results)));
    }
    let worst = results
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok())
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    within(
        Duration::from_secs(120),
        started,
        format!("{} checks, worst rel err {worst:.2e}", results.len()),
    )
}

fn cheb_case(n: usize, edges: &[(usize, usize)], k: usize, r: &mut impl Rng) -> f64 {
    let x = uniform(&[n, 3], -1.0, 1.0, r);
    let thetas: Vec<Tensor<f64>> = (0..=k).map(|_| uniform(&[2, 3], -1.0, 1.0, r)).collect();
    let lap = NormalizedLaplacian::new(&Graph::new(n, edges.iter().copied()).unwrap()).scaled_operator::<f64>();
    let mut tape = Tape::new();
    let vx = tape.constant(x.clone());
    let vt: Vec<_> = thetas.iter().map(|t| tape.constant(t.clone())).collect();
    let y = cheb_conv(&mut tape, vx, &lap, &vt).unwrap();
    let oracle = cheb_spectral_oracle(n, edges, &x, &thetas);
    tape.value(y).data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &(a, b) in edges {
            for (p, q) in [(a, b), (b, a)] {
                if p == i && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Every connected graph on up to 6 labelled nodes, then 60 random connected graphs
/// for each size 7..=10; K from 0 to 4 on each.
fn spectral_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng(2);
    let (mut graphs, mut worst) = (0usize, 0.0f64);
    for n in 1..=6 {
        let slots: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        for bits in 0u32..1 << slots.len() {
            let edges: Vec<(usize, usize)> =
                slots.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, &e)| e).collect();
            if !connected(n, &edges) {
                continue;
            }
            graphs += 1;
            for k in 0..=4 {
                worst = worst.max(cheb_case(n, &edges, k, &mut r));
            }
        }
    }
    for n in 7..=10 {
        for i in 0..60 {
            let edges = random_connected_edges(n, 0.05 + 0.015 * i as f64, &mut r);
            graphs += 1;
            for k in 0..=4 {
                worst = worst.max(cheb_case(n, &edges, k, &mut r));
            }
        }
    }
    let detail = format!("{graphs} graphs x K=0..4, max abs diff {worst:.2e}");
    if worst > 1e-8 {
        return Err(detail);
    }
    within(Duration::from_secs(30), started, detail)
}

fn attention_properties() -> Outcome {
    let started = Instant::now();
    let mut r = rng(4);
    let n = 6;
    let (mut row_err, mut perm_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let edges = random_connected_edges(n, 0.3, &mut r);
        let x = uniform(&[n, 3], -2.0, 2.0, &mut r);
        let w = uniform(&[4, 3], -1.0, 1.0, &mut r);
        let a = uniform(&[8], -1.0, 1.0, &mut r);
        let mut run = |edges: &[(usize, usize)], x: &Tensor<f64>| {
            let nbr = Arc::new(Graph::new(n, edges.iter().copied()).unwrap().neighborhoods());
            let mut tape = Tape::new();
            let (vx, vw, va) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(a.clone()));
            let out = gat_conv(&mut tape, vx, &nbr, vw, va).unwrap();
            for i in 0..n {
                let s: f64 = out.attention[nbr.span(i)].iter().sum();
                row_err = row_err.max((s - 1.0).abs());
            }
            tape.value(out.output).data().to_vec()
        };
        let y = run(&edges, &x);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let pedges: Vec<(usize, usize)> = edges.iter().map(|&(p, q)| (perm[p], perm[q])).collect();
        let mut px = vec![0.0; n * 3];
        for i in 0..n {
            px[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(&x.data()[i * 3..i * 3 + 3]);
        }
        let py = run(&pedges, &Tensor::new(vec![n, 3], px).unwrap());
        for i in 0..n {
            for c in 0..4 {
                perm_err = perm_err.max((py[perm[i] * 4 + c] - y[i * 4 + c]).abs());
            }
        }
    }
    let detail = format!("50 graphs, row sum err {row_err:.1e}, permutation err {perm_err:.1e}");
    if row_err >= 1e-6 || perm_err > 1e-10 {
        return Err(detail);
    }
    within(Duration::from_secs(10), started, detail)
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng(7);
    let mut ious = Vec::new();
    let mut counts = Vec::new();
    let mut dice_gap = 0.0f64;
    for i in 0..100 {
        let p_density = [0.0, 0.1, 0.5, 0.9, 1.0][i % 5];
        let t_density = [0.3, 0.0, 0.5, 0.95, 1.0][(i / 5) % 5];
        let pred: Vec<bool> = (0..256).map(|_| r.gen_bool(p_density)).collect();
        let truth: Vec<bool> = if i % 7 == 0 {
            pred.clone()
        } else {
            (0..256).map(|_| r.gen_bool(t_density)).collect()
        };
        let (mut both, mut either, mut np, mut nt) = (0u64, 0u64, 0u64, 0u64);
        for k in 0..256 {
            both += u64::from(pred[k] & truth[k]);
            either += u64::from(pred[k] | truth[k]);
            np += u64::from(pred[k]);
            nt += u64::from(truth[k]);
        }
        let o = Overlap::count(&pred, &truth).unwrap();
        let iou_ref = if either == 0 { 1.0 } else { both as f64 / either as f64 };
        let dice_ref = if np + nt == 0 { 1.0 } else { (2 * both) as f64 / (np + nt) as f64 };
        if o.iou() != iou_ref || o.dice() != dice_ref {
            return Err(format!("pair {i}: iou {} vs {iou_ref}, dice {} vs {dice_ref}", o.iou(), o.dice()));
        }
        dice_gap = dice_gap.max((o.dice() - 2.0 * o.iou() / (1.0 + o.iou())).abs());
        ious.push(o.iou());
        counts.push((both, either));
    }
    // precision at t = p/100 decided in integers: both/either >= p/100
    let mut map_ref = 0.0;
    for p in (50..=95).step_by(5) {
        let hits = counts.iter().filter(|&&(b, e)| e == 0 || 100 * b >= p * e).count();
        map_ref += hits as f64 / counts.len() as f64;
    }
    map_ref /= 10.0;
    let map = mean_average_precision(&ious, &default_thresholds()).unwrap();
    let detail = format!("100 pairs, mAP {map:.4}, dice identity gap {dice_gap:.1e}");
    if (map - map_ref).abs() > 1e-12 || dice_gap > 1e-12 {
        return Err(format!("{detail}, oracle mAP {map_ref}"));
    }
    within(Duration::from_secs(10), started, detail)
}

fn pipeline_cardinality() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    for (n, size, want) in [(290, 16, (203, 87, 3045)), (13, 16, (9, 4, 135)), (2, 16, (1, 1, 15))] {
        let data = tmp.path().join(format!("data{n}"));
        write_pairs(&data, &flood_set(n, size, n as u64)).map_err(|e| e.to_string())?;
        let cfg = config(&[
            ("data_dir", data.display().to_string()),
            ("out_dir", tmp.path().join(format!("run{n}")).display().to_string()),
            ("input_size", "8".into()),
        ]);
        let s = cmd_prepare(&cfg, &mut Vec::new()).map_err(|e| e.to_string())?;
        let files = fs::read_dir(cfg.augmented_dir()).unwrap().count();
        if (s.train, s.test, s.augmented) != want || files != 2 * want.2 {
            return Err(format!(
                "N={n}: {}/{}/{} with {files} files, expected {want:?}",
                s.train, s.test, s.augmented
            ));
        }
    }
    within(Duration::from_secs(60), started, "N=290 gives 203/87/3045".into())
}

fn overfit() -> Outcome {
    let started = Instant::now();
    let pairs = bundled_flood_set();
    let samples: Vec<Sample<f32>> = pairs.iter().map(Sample::from_pair).collect();
    let spec = ModelSpec::new(Variant::GacUnet, 64, vec![8, 16, 32]);
    let cfg = TrainConfig {
        epochs: 300,
        loss: LossKind::Dice,
        stop_at_dice: Some(0.95),
        ..TrainConfig::default()
    };
    let out = train(Model::<f32>::build(spec).unwrap(), &samples, &pairs, &cfg, |_| {})
        .map_err(|e| e.to_string())?;
    let report = evaluate(&out.best, &pairs, 0.5).map_err(|e| e.to_string())?;
    let detail = format!(
        "train Dice {:.4} after {} epochs (best {})",
        report.mean_dice,
        out.records.len(),
        out.best_epoch
    );
    if report.mean_dice < 0.95 {
        return Err(detail);
    }
    within(Duration::from_secs(600), started, detail)
}

/// Test Dice of dice-loss vs bce-loss training from identical initial weights.
fn loss_ordering() -> (usize, String) {
    let pairs: Vec<ImagePair> = bundled_flood_set().iter().map(|p| resize_pair(p, 32, 32).unwrap()).collect();
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let (tr, te) = split_dataset(&idx, seed).unwrap();
        let train_set: Vec<Sample<f32>> = tr.iter().map(|&i| Sample::from_pair(&pairs[i])).collect();
        let test_set: Vec<ImagePair> = te.iter().map(|&i| pairs[i].clone()).collect();
        let score = |loss| {
            let spec = ModelSpec::new(Variant::GacUnet, 32, vec![8, 16]).with_seed(seed);
            let cfg = TrainConfig { epochs: 40, loss, seed, ..TrainConfig::default() };
            let out = train(Model::<f32>::build(spec).unwrap(), &train_set, &[], &cfg, |_| {}).unwrap();
            evaluate(&out.best, &test_set, 0.5).unwrap().mean_dice
        };
        let (d, b) = (score(LossKind::Dice), score(LossKind::Bce));
        wins += usize::from(d >= b);
        rows.push(format!("seed {seed}: dice {d:.3} / bce {b:.3}"));
    }
    (wins, rows.join("; "))
}

fn reprogram_contract() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_pairs(&data, &flood_set(12, 32, 5)).map_err(|e| e.to_string())?;
    let base = tmp.path().join("base.gacm");
    let mut cfg = config(&[
        ("data_dir", data.display().to_string()),
        ("out_dir", tmp.path().join("run").display().to_string()),
        ("input_size", "16".into()),
        ("base_epochs", "5".into()),
        ("output", base.display().to_string()),
    ]);
    cmd_pretrain_base::<f32>(&cfg, &mut Vec::new()).map_err(|e| e.to_string())?;
    let before = fs::read(&base).unwrap();
    cfg.set("output", "").unwrap();
    cfg.set("base_model", &base.display().to_string()).unwrap();
    cfg.set("steps", "100").unwrap();
    let s = cmd_reprogram::<f32>(&cfg, &mut Vec::new()).map_err(|e| e.to_string())?;
    let same = fs::read(&base).unwrap() == before;
    let detail = format!(
        "base bytes {}, loss {:.4} -> {:.4} over {} steps",
        if same { "unchanged" } else { "CHANGED" },
        s.initial_loss,
        s.final_loss,
        s.trajectory.len()
    );
    if !same || s.final_loss >= s.initial_loss || s.trajectory.len() != 100 {
        return Err(detail);
    }
    within(Duration::from_secs(120), started, detail)
}

fn determinism() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_pairs(&data, &flood_set(10, 32, 8)).map_err(|e| e.to_string())?;
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let args: Vec<String> = [
            "--data_dir",
            &data.display().to_string(),
            "--out_dir",
            &tmp.path().join(run).display().to_string(),
            "--input_size",
            "16",
            "--widths",
            "4,8",
            "--epochs",
            "3",
            "--seed",
            "21",
            "--deterministic",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let cfg = RunConfig::from_args(&args).map_err(|e| e.to_string())?;
        cmd_prepare(&cfg, &mut Vec::new()).map_err(|e| e.to_string())?;
        let s = cmd_train::<f32>(&cfg, &mut Vec::new()).map_err(|e| e.to_string())?;
        models.push(fs::read(&s.model_path).unwrap());
    }
    if models[0] != models[1] {
        return Err("model files differ".into());
    }
    within(Duration::from_secs(300), started, format!("{} byte model files identical", models[0].len()))
}

fn main() {
    // libtest flags such as --nocapture or --quiet may be passed through; a name
    // filter that matches nothing here skips the run.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }
    let gated: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient suite", gradient_suite),
        ("2 spectral oracle", spectral_oracle),
        ("3 attention properties", attention_properties),
        ("4 metric oracle", metric_oracle),
        ("5 pipeline cardinality", pipeline_cardinality),
        ("6 overfit", overfit),
        ("8 reprogramming contract", reprogram_contract),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in gated {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
        if name.starts_with('6') {
            let started = Instant::now();
            let (wins, rows) = loss_ordering();
            let verdict = if wins >= 3 { "PASS" } else { "FAIL" };
            println!(
                "{verdict} criterion 7 loss ordering (reported, not gated): dice >= bce in {wins}/5 seeds, {:.1}s; {rows}",
                started.elapsed().as_secs_f64()
            );
        }
    }
    if failed > 0 {
        println!("{failed} gated criteria failed");
        std::process::exit(1);
    }
}
