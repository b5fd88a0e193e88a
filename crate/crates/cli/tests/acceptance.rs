//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line; the process fails if any criterion does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use structconv::analyzer::{
    analyze_network, count_ops_instrumented, layer_costs, parse_network_spec, LayerKind, LayerSpec,
};
use structconv::composite::count_composite_ops;
use structconv::counting::OpCounts;
use structconv::structured::*;
use structconv::tensor::*;
use structconv::training::*;

type Outcome = Result<String, String>;

const TOL: f64 = 1e-10;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

/// Every `(C, N, c, n)` with `C ∈ {1,3,4,8}`, `N ∈ {1,3,5}`.
fn config_sweep() -> Vec<StructuredConfig> {
    let mut out = Vec::new();
    for big_c in [1, 3, 4, 8] {
        for big_n in [1, 3, 5] {
            for c in 1..=big_c {
                for n in 1..=big_n {
                    out.push(StructuredConfig::new(big_c, big_n, c, n).unwrap());
                }
            }
        }
    }
    out
}

fn structured_kernels(seed: u64, rows: usize, cfg: &StructuredConfig) -> Vec<f64> {
    (0..rows)
        .flat_map(|r| {
            let alpha = random_tensor(SplitMix64::derive(seed, r as u64), &cfg.alpha_shape());
            reconstruct(&alpha, cfg).unwrap().into_data()
        })
        .collect()
}

fn decomposition_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for cfg in config_sweep() {
        let [c, n, _] = cfg.kernel_shape();
        for s in [1, 2] {
            for p in [0, 1, 2] {
                for d in [1, 2] {
                    let geom = ConvGeometry::new(s, p, d);
                    for seed in 0..5u64 {
                        let case = SplitMix64::derive(seed, cases as u64);
                        let w = Tensor::new(vec![2, c, n, n], structured_kernels(case, 2, &cfg)).unwrap();
                        let layer = decompose_conv_layer(&w, &cfg, &geom, None, EXACT_TOLERANCE)
                            .map_err(|e| format!("{cfg:?} {geom:?}: {e}"))?;
                        let x = random_tensor(SplitMix64::derive(case, 99), &[c, 11, 10]);
                        let err = forward_decomposed(&x, &layer)
                            .unwrap()
                            .max_rel_diff(&conv(&x, &w, &geom).unwrap())
                            .unwrap();
                        check(err <= TOL, || format!("{cfg:?} {geom:?} seed {seed}: {err:.3e}"))?;
                        worst = worst.max(err);
                        cases += 1;
                    }
                }
            }
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("{cases} cases, max rel err {worst:.2e}, {:.1?}", start.elapsed()))
}

fn fc_decomposition() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for q in 1..=32usize {
        for r in 1..=q {
            let cfg = linear_cfg(q, r);
            for p in [1, 7, 32] {
                let seed = (q * 1000 + r * 10 + p) as u64;
                let w = Tensor::new(vec![p, q], structured_kernels(seed, p, &cfg)).unwrap();
                let layer = decompose_linear(&w, r, None, EXACT_TOLERANCE)
                    .map_err(|e| format!("P={p} Q={q} R={r}: {e}"))?;
                let x = random_tensor(seed ^ 0xabc, &[q]);
                let err = forward_linear(&x, &layer).unwrap().max_rel_diff(&linear(&w, &x).unwrap()).unwrap();
                check(err <= TOL, || format!("P={p} Q={q} R={r}: {err:.3e}"))?;
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{cases} cases, max rel err {worst:.2e}, {:.1?}", start.elapsed()))
}

fn projector_algebra() -> Outcome {
    let mut worst = 0.0f64;
    for cfg in config_sweep() {
        let m = structure_matrix(&cfg).unwrap();
        let (a, pinv, proj) = (m.a(), m.pinv(), m.projector());
        let pa = pinv * a;
        let left = (0..pa.nrows())
            .flat_map(|i| (0..pa.ncols()).map(move |j| (i, j)))
            .fold(0.0f64, |acc, (i, j)| acc.max((pa[(i, j)] - f64::from(u8::from(i == j))).abs()));
        let idem = (proj * proj - proj).amax();
        let w = structured_kernels(5, 3, &cfg);
        let back = m.project_rows(&w).unwrap();
        let scale = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let fixed = back.iter().zip(&w).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs())) / scale;
        for (what, err) in [("A+A = I", left), ("P^2 = P", idem), ("PW = W", fixed)] {
            check(err <= TOL, || format!("{cfg:?} {what}: {err:.3e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("{} configs, max err {worst:.2e}", config_sweep().len()))
}

fn layer(kind: LayerKind, c_out: usize, c_in: usize, k: usize, c: usize, n: usize, geom: ConvGeometry, hw: (usize, usize)) -> LayerSpec {
    LayerSpec { index: 1, name: None, kind, c_out, c_in, k, c, n, geom, input_hw: hw }
}

fn counts_match(spec: &LayerSpec) -> Result<(), String> {
    let counted = count_ops_instrumented(spec, 3).map_err(|e| e.to_string())?;
    let cost = layer_costs(spec).map_err(|e| e.to_string())?;
    let before = OpCounts { mults: cost.mults_before, adds: cost.adds_before };
    let after = OpCounts { mults: cost.mults_after, adds: cost.adds_after };
    check(counted.before == before && counted.after == after, || {
        format!("{spec:?}: counted {:?}/{:?}, formula {before:?}/{after:?}", counted.before, counted.after)
    })
}

fn cost_model_exactness() -> Outcome {
    let start = Instant::now();
    let mut specs = 0;
    for big_c in 1..=4 {
        for big_n in 1..=4 {
            for c in 1..=big_c {
                for n in 1..=big_n {
                    for c_out in [1, 3] {
                        for (s, p, d) in [(1, 0, 1), (2, 1, 1), (1, 1, 2), (2, 0, 2)] {
                            let kind = if big_n == 1 { LayerKind::Pwconv } else { LayerKind::Conv };
                            let l = layer(kind, c_out, big_c, big_n, c, n, ConvGeometry::new(s, p, d), (7, 6));
                            if kind == LayerKind::Pwconv && p > 0 || l.validate().is_err() {
                                continue;
                            }
                            counts_match(&l)?;
                            specs += 1;
                        }
                    }
                }
            }
        }
    }
    for channels in [1, 4] {
        for big_n in 1..=5 {
            for n in 1..=big_n {
                let geom = ConvGeometry::new(1, 1, 1).with_groups(channels);
                let l = layer(LayerKind::Dwconv, channels, 1, big_n, 1, n, geom, (7, 6));
                if l.validate().is_ok() {
                    counts_match(&l)?;
                    specs += 1;
                }
            }
        }
    }
    for p in 1..=6 {
        for q in 1..=6 {
            for r in 1..=q {
                counts_match(&layer(LayerKind::Linear, p, q, 1, r, 1, ConvGeometry::default(), (1, 1)))?;
                specs += 1;
            }
        }
    }
    let l = layer(LayerKind::Conv, 256, 1, 3, 1, 2, ConvGeometry::new(1, 1, 1), (8, 8));
    let cost = layer_costs(&l).unwrap();
    let per_output = cost.adds_after as f64 / (256 * 64) as f64;
    check((per_output - 3.0).abs() / 3.0 <= 0.02, || format!("adds/output at 256 = {per_output}"))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("{specs} specs exact, adds/output at C_out=256 = {per_output:.4} (target 3)"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn paper_numbers() -> Outcome {
    let start = Instant::now();
    let layers = parse_network_spec(&fixture("struct_mv2_a.json"), Some((224, 224))).map_err(|e| e.to_string())?;
    let report = analyze_network(&layers).map_err(|e| e.to_string())?;
    let before = report.totals.params_before as f64;
    let after = report.totals.params_after as f64;
    check((before / 3.50e6 - 1.0).abs() <= 0.05, || format!("params_before {before}"))?;
    check((after / 2.62e6 - 1.0).abs() <= 0.05, || format!("params_after {after}"))?;
    let mut standard = 0;
    for l in report.layers.iter().filter(|l| matches!(l.layer.kind, LayerKind::Conv | LayerKind::Pwconv)) {
        let cfg = l.layer.cfg();
        check(
            l.cost.mults_after as u128 * cfg.kernel_len() as u128
                == l.cost.mults_before as u128 * cfg.num_basis() as u128,
            || format!("layer {} mult ratio", l.layer.index),
        )?;
        standard += 1;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!(
        "params {before} -> {after} ({:+.1}% / {:+.1}%), {standard} conv mult ratios exact",
        (before / 3.50e6 - 1.0) * 100.0,
        (after / 2.62e6 - 1.0) * 100.0
    ))
}

fn composite_cost() -> Outcome {
    let basis = generate_structured_basis(&StructuredConfig::new(1, 3, 1, 2).unwrap());
    let ops = count_composite_ops(&basis);
    check(ops.mults_per_output == 4 && ops.adds_per_output == 15, || format!("{ops:?}"))?;
    Ok(format!("{} mults, {} adds per output", ops.mults_per_output, ops.adds_per_output))
}

fn fd_rel_error(w: &Tensor, cfg: &StructuredConfig) -> f64 {
    let g = sr_grad(w, cfg).unwrap();
    let h = 1e-5;
    let mut num = Tensor::zeros(w.shape());
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        num.data_mut()[i] = (sr_residual(&plus, cfg).unwrap() - sr_residual(&minus, cfg).unwrap()) / (2.0 * h);
    }
    g.sub(&num).unwrap().max_abs() / num.max_abs()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < 20 {
        let big_c = 1 + rng.next_below(4);
        let big_n = 1 + rng.next_below(4);
        let cfg = StructuredConfig::new(big_c, big_n, 1 + rng.next_below(big_c), 1 + rng.next_below(big_n)).unwrap();
        if cfg.is_identity() {
            continue;
        }
        let w = random_tensor(rng.next_u64(), &[1 + rng.next_below(3), big_c, big_n, big_n]);
        let err = fd_rel_error(&w, &cfg);
        check(err <= 1e-4, || format!("{cfg:?}: {err:.3e}"))?;
        worst = worst.max(err);
        pairs += 1;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("{pairs} pairs, max rel err {worst:.2e}"))
}

fn training_property() -> Outcome {
    let start = Instant::now();
    let data = make_toy_dataset(3).map_err(|e| e.to_string())?;
    let run = |mode, lambda| {
        let tc = TrainingConfig { lambda, seed: 3, epochs: 30, mode, ..Default::default() };
        train(ToyModelSpec::student(), &data, &tc).map(|o| o.log)
    };
    let mut means = Vec::new();
    let mut strong = None;
    for lambda in [0.0, 0.1, 1.0] {
        let log = run(TrainMode::Regularized, lambda).map_err(|e| e.to_string())?;
        means.push(log.summary.mean_residual);
        strong = Some(log.summary);
    }
    let s = strong.unwrap();
    check(s.mean_residual < 0.05, || format!("lambda=1 mean residual {}", s.mean_residual))?;
    let gap = (s.acc_pre - s.acc_post).abs();
    check(gap <= 0.02, || format!("lambda=1 accuracy gap {gap}"))?;
    check(means.windows(2).all(|w| w[1] <= w[0]), || format!("residuals not monotone: {means:?}"))?;
    let direct = run(TrainMode::Direct, 0.0).map_err(|e| e.to_string())?;
    let worst = direct.epochs.iter().flat_map(|e| e.residuals.iter().copied()).fold(0.0f64, f64::max);
    check(worst <= 1e-6, || format!("direct mode residual {worst:.3e}"))?;
    within(start, Duration::from_secs(300))?;
    Ok(format!(
        "mean residual {:.3}/{:.3}/{:.4} for lambda 0/0.1/1, gap {gap:.3}, direct max {worst:.1e}, {:.0?}",
        means[0], means[1], means[2],
        start.elapsed()
    ))
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_structconv")).args(args).output().map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    serde_json::from_slice::<serde_json::Value>(&out.stdout).map_err(|e| format!("{args:?}: bad JSON: {e}"))?;
    Ok(out.stdout)
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = random_tensor(17, &[3, 4, 5]);
    let path = dir.path().join("t.stcv");
    write_tensor(&path, &t).unwrap();
    let back = read_tensor(&path).unwrap();
    check(
        back.shape() == t.shape() && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "tensor container changed values".into(),
    )?;

    let cfg = StructuredConfig::new(4, 3, 2, 2).unwrap();
    let w = Tensor::new(vec![5, 4, 3, 3], structured_kernels(8, 5, &cfg)).unwrap();
    let bias = random_tensor(9, &[5]);
    let conv_layer = DecomposedLayer::Conv(
        decompose_conv_layer(&w, &cfg, &ConvGeometry::new(2, 1, 1), Some(&bias), EXACT_TOLERANCE).unwrap(),
    );
    let fc = Tensor::new(vec![4, 12], structured_kernels(10, 4, &linear_cfg(12, 5))).unwrap();
    let fc_layer = DecomposedLayer::Linear(decompose_linear(&fc, 5, None, EXACT_TOLERANCE).unwrap());
    for (i, l) in [conv_layer, fc_layer].iter().enumerate() {
        let sub = dir.path().join(format!("layer_{i}"));
        save_layer(l, &sub).unwrap();
        check(&load_layer(&sub).unwrap() == l, || format!("layer {i} changed on reload"))?;
    }

    let net = dir.path().join("net.json");
    std::fs::write(
        &net,
        r#"[{"kind": "conv", "cout": 4, "cin": 3, "k": 3, "c": 2, "n": 2, "pad": 1},
            {"kind": "dwconv", "cout": 4, "cin": 1, "k": 3, "c": 1, "n": 2, "stride": 2, "pad": 1},
            {"kind": "linear", "cout": 5, "cin": 64, "c": 16}]"#,
    )
    .unwrap();
    let net = net.to_str().unwrap();
    let runs: [&[&str]; 3] = [
        &["analyze", "--config", net, "--input-size", "8x8", "--format", "json"],
        &["verify", "--config", net, "--seed", "4", "--trials", "3", "--input-size", "8x8", "--format", "json"],
        &["train-toy", "--seed", "5", "--epochs", "1", "--lambda", "0.5", "--format", "json"],
    ];
    for args in runs {
        check(cli(args)? == cli(args)?, || format!("{} output differs between runs", args[0]))?;
    }
    Ok("tensor, conv and linear layers bitwise; analyze/verify/train-toy JSON stable".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("decomposition equivalence", decomposition_equivalence),
        ("fully connected decomposition", fc_decomposition),
        ("projector algebra", projector_algebra),
        ("cost model exactness", cost_model_exactness),
        ("reference network totals", paper_numbers),
        ("composite per-output cost", composite_cost),
        ("regularizer gradient", gradient_correctness),
        ("training scheme property", training_property),
        ("format round trips", round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
