use std::path::Path;

use serde::Serialize;
use structconv::analyzer::{parse_network_spec, LayerKind, LayerSpec};
use structconv::structured::{decompose_conv_layer, decompose_linear, save_layer, DecomposedLayer};
use structconv::tensor::{read_tensor, Tensor};

use crate::args::DecomposeArgs;
use crate::output::{emit, Failure};
use crate::verify::weight_shape;

#[derive(Serialize)]
struct LayerResidual {
    index: usize,
    residual: f64,
    passed: bool,
}

#[derive(Serialize)]
struct DecomposeReport {
    tolerance: f64,
    layers: Vec<LayerResidual>,
    passed: bool,
}

fn load_weights(path: &Path, layers: &[LayerSpec]) -> Result<Vec<Tensor>, Failure> {
    let tensors = if path.is_dir() {
        layers
            .iter()
            .map(|l| read_tensor(path.join(format!("layer_{}.stcv", l.index))))
            .collect::<structconv::Result<Vec<_>>>()?
    } else if layers.len() == 1 {
        vec![read_tensor(path)?]
    } else {
        return Err(Failure::usage(format!(
            "config has {} layers; pass a directory of layer_{{idx}}.stcv files",
            layers.len()
        )));
    };
    for (t, l) in tensors.iter().zip(layers) {
        let expected = weight_shape(l);
        if t.shape() != expected.as_slice() {
            return Err(Failure::usage(format!(
                "layer {}: weights have shape {:?}, config expects {expected:?}",
                l.index,
                t.shape()
            )));
        }
    }
    Ok(tensors)
}

pub fn run(args: &DecomposeArgs) -> Result<(), Failure> {
    if !(args.tol.is_finite() && args.tol >= 0.0) {
        return Err(Failure::usage(format!("--tol must be a non-negative number, got {}", args.tol)));
    }
    let layers = parse_network_spec(&args.config, Some(args.input_size))?;
    let weights = load_weights(&args.weights, &layers)?;
    let mut results = Vec::with_capacity(layers.len());
    for (spec, w) in layers.iter().zip(&weights) {
        let layer = match spec.kind {
            LayerKind::Linear => DecomposedLayer::Linear(decompose_linear(w, spec.c, None, f64::INFINITY)?),
            _ => DecomposedLayer::Conv(decompose_conv_layer(w, &spec.cfg(), &spec.geom, None, f64::INFINITY)?),
        };
        let residual = layer.max_residual();
        let passed = residual <= args.tol;
        if passed {
            save_layer(&layer, &args.out.join(format!("layer_{}", spec.index)))?;
        }
        results.push(LayerResidual { index: spec.index, residual, passed });
    }
    let report = DecomposeReport {
        tolerance: args.tol,
        passed: results.iter().all(|r| r.passed),
        layers: results,
    };
    emit(args.format, &report, || {
        let mut s = format!("{:>5} {:>12} {}\n", "idx", "residual", "status");
        for r in &report.layers {
            let status = if r.passed { "ok" } else { "FAIL" };
            s += &format!("{:>5} {:>12.3e} {status}\n", r.index, r.residual);
        }
        s
    })?;
    let worst = report
        .layers
        .iter()
        .filter(|r| !r.passed)
        .max_by(|a, b| a.residual.total_cmp(&b.residual));
    match worst {
        None => Ok(()),
        Some(r) => Err(Failure::check(format!(
            "layer {} has residual {:.3e} above tolerance {:.1e}",
            r.index, r.residual, args.tol
        ))),
    }
}
