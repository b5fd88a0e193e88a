use rayon::prelude::*;
use serde::Serialize;
use structconv::analyzer::{parse_network_spec, LayerKind, LayerSpec};
use structconv::structured::{
    decompose_conv_layer, decompose_linear, forward_decomposed, forward_linear, reconstruct,
};
use structconv::tensor::{conv, linear, random_tensor, SplitMix64, Tensor};

use crate::args::VerifyArgs;
use crate::output::{emit, Failure};

pub const TOLERANCE: f64 = 1e-10;

#[derive(Serialize)]
struct LayerResult {
    index: usize,
    kind: &'static str,
    max_rel_error: f64,
    passed: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    trials: usize,
    input_size: (usize, usize),
    tolerance: f64,
    layers: Vec<LayerResult>,
    passed: bool,
}

/// `C_out` kernels, each `A·α` for a random `α`.
pub fn structured_weights(spec: &LayerSpec, seed: u64) -> structconv::Result<Tensor> {
    let cfg = spec.cfg();
    let mut data = Vec::with_capacity(spec.c_out * cfg.kernel_len());
    for row in 0..spec.c_out {
        let alpha = random_tensor(SplitMix64::derive(seed, row as u64), &cfg.alpha_shape());
        data.extend(reconstruct(&alpha, &cfg)?.into_data());
    }
    Tensor::new(weight_shape(spec), data)
}

pub fn weight_shape(spec: &LayerSpec) -> Vec<usize> {
    match spec.kind {
        LayerKind::Linear => vec![spec.c_out, spec.c_in],
        _ => vec![spec.c_out, spec.c_in, spec.k, spec.k],
    }
}

fn trial(spec: &LayerSpec, seed: u64, corrupt: bool) -> structconv::Result<f64> {
    let w = structured_weights(spec, SplitMix64::derive(seed, 1))?;
    let x_seed = SplitMix64::derive(seed, 2);
    if spec.kind == LayerKind::Linear {
        let mut layer = decompose_linear(&w, spec.c, None, f64::INFINITY)?;
        if corrupt {
            layer.small.data_mut()[0] += 1e-3;
        }
        let x = random_tensor(x_seed, &[spec.c_in]);
        return forward_linear(&x, &layer)?.max_rel_diff(&linear(&w, &x)?);
    }
    let mut layer = decompose_conv_layer(&w, &spec.cfg(), &spec.geom, None, f64::INFINITY)?;
    if corrupt {
        layer.alpha.data_mut()[0] += 1e-3;
    }
    let x = random_tensor(x_seed, &[spec.input_channels(), spec.input_hw.0, spec.input_hw.1]);
    forward_decomposed(&x, &layer)?.max_rel_diff(&conv(&x, &w, &spec.geom)?)
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(Failure::usage("--trials must be at least 1"));
    }
    let layers = parse_network_spec(&args.config, Some(args.input_size))?;
    let results = layers
        .par_iter()
        .map(|spec| {
            let layer_seed = SplitMix64::derive(args.seed, spec.index as u64);
            let mut worst = 0.0f64;
            for t in 0..args.trials {
                let err = trial(spec, SplitMix64::derive(layer_seed, t as u64), args.corrupt_alpha)?;
                worst = worst.max(err);
            }
            Ok(LayerResult {
                index: spec.index,
                kind: spec.kind.as_str(),
                max_rel_error: worst,
                passed: worst <= TOLERANCE,
            })
        })
        .collect::<structconv::Result<Vec<_>>>()?;
    let passed = results.iter().all(|r| r.passed);
    let report = VerifyReport {
        seed: args.seed,
        trials: args.trials,
        input_size: args.input_size,
        tolerance: TOLERANCE,
        layers: results,
        passed,
    };
    emit(args.format, &report, || {
        let mut s = format!("{:>5} {:<7} {:>14} {}\n", "idx", "kind", "max rel err", "status");
        for r in &report.layers {
            let status = if r.passed { "ok" } else { "FAIL" };
            s += &format!("{:>5} {:<7} {:>14.3e} {status}\n", r.index, r.kind, r.max_rel_error);
        }
        s
    })?;
    match report.layers.iter().find(|r| !r.passed) {
        None => Ok(()),
        Some(r) => Err(Failure::check(format!(
            "layer {} differs from direct convolution by {:.3e} (tolerance {TOLERANCE:.0e})",
            r.index, r.max_rel_error
        ))),
    }
}
