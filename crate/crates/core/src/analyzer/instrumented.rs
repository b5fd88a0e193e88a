use serde::{Deserialize, Serialize};

use super::spec::{LayerKind, LayerSpec};
use crate::counting::{measure, naive_conv, naive_matvec, naive_pool1d, naive_sum_pool, Counted, OpCounts};
use crate::error::{Error, Result};
use crate::structured::structure_matrix;
use crate::tensor::{random_tensor, ConvGeometry, SplitMix64};

/// Largest input, weight or multiplication count the instrumented run accepts.
pub const SIZE_GUARD: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentedCounts {
    pub before: OpCounts,
    pub after: OpCounts,
    /// Largest relative difference between the two paths' outputs, run on
    /// exactly structured weights.
    pub max_rel_error: f64,
}

fn counted(v: &[f64]) -> Vec<Counted> {
    v.iter().map(|&x| Counted(x)).collect()
}

fn rel_error(a: &[Counted], b: &[Counted]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.0.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x.0 - y.0).abs())) / scale
}

/// Runs the direct layer and its decomposition on random data with every
/// scalar `+` and `*` counted.
pub fn count_ops_instrumented(spec: &LayerSpec, seed: u64) -> Result<InstrumentedCounts> {
    spec.validate()?;
    let cfg = spec.cfg();
    let (h, w) = spec.input_hw;
    let in_ch = spec.input_channels();
    let (ho, wo) = spec.output_hw()?;
    let input_len = (in_ch * h * w) as u64;
    let weight_len = (spec.c_out * spec.c_in * spec.k * spec.k) as u64;
    let work = weight_len * (ho * wo) as u64;
    if input_len.max(weight_len).max(work) > SIZE_GUARD {
        return Err(Error::SizeGuard(format!(
            "layer {} needs {work} multiplications, limit {SIZE_GUARD}",
            spec.index
        )));
    }

    let seeds = |label| SplitMix64::derive(seed, label);
    let m = structure_matrix(&cfg)?;
    let rows = spec.c_out;
    let alpha = random_tensor(seeds(1), &[rows * cfg.num_basis()]);
    let weights = m.compose_rows(alpha.data())?;
    let (alpha, weights) = (counted(alpha.data()), counted(&weights));

    if spec.kind == LayerKind::Linear {
        let x = counted(random_tensor(seeds(2), &[spec.c_in]).data());
        let (direct, before) = measure(|| naive_matvec(&weights, rows, spec.c_in, &x));
        let (decomposed, after) = measure(|| {
            let pooled = naive_pool1d(&x, spec.c_in - spec.c + 1);
            naive_matvec(&alpha, rows, spec.c, &pooled)
        });
        return Ok(InstrumentedCounts { before, after, max_rel_error: rel_error(&decomposed, &direct) });
    }

    let x = counted(random_tensor(seeds(2), &[in_ch, h, w]).data());
    let dims = (in_ch, h, w);
    let g = spec.geom;
    let (direct, before) = measure(|| {
        naive_conv(&x, dims, &weights, (rows, spec.c_in, spec.k, spec.k), &g, (ho, wo))
    });
    let pool_geom = ConvGeometry { stride: [1, 1], ..g };
    let small_geom = ConvGeometry { padding: [0, 0], ..g };
    let (pc, ps, _) = cfg.pool_dims();
    let (h1, w1) = pool_geom.output_hw((h, w), (ps, ps))?;
    let pooled_ch = (cfg.channels - pc + 1) * g.groups;
    let (decomposed, after) = measure(|| {
        let pooled = naive_sum_pool(&x, dims, cfg.pool_dims(), &pool_geom, (h1, w1));
        naive_conv(
            &pooled,
            (pooled_ch, h1, w1),
            &alpha,
            (rows, cfg.c, cfg.n, cfg.n),
            &small_geom,
            (ho, wo),
        )
    });
    Ok(InstrumentedCounts { before, after, max_rel_error: rel_error(&decomposed, &direct) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{layer_costs, parse_network_str};

    #[test]
    fn unit_layer() {
        let spec = &parse_network_str(
            r#"[{"kind": "conv", "cout": 1, "cin": 1, "k": 1, "c": 1, "n": 1}]"#,
            Some((1, 1)),
        )
        .unwrap()[0];
        let counts = count_ops_instrumented(spec, 0).unwrap();
        assert_eq!(counts.before, OpCounts { mults: 1, adds: 0 });
        assert_eq!(counts.after, OpCounts { mults: 1, adds: 0 });
    }

    #[test]
    fn matches_formulas_on_each_kind() {
        let layers = parse_network_str(
            r#"[{"kind": "conv", "cout": 3, "cin": 4, "k": 3, "c": 2, "n": 2, "stride": 2, "pad": 1, "dilation": 2},
                {"kind": "dwconv", "cout": 3, "cin": 1, "k": 3, "c": 1, "n": 2, "pad": 1},
                {"kind": "pwconv", "cout": 5, "cin": 3, "c": 2},
                {"kind": "linear", "cout": 4, "cin": 9, "c": 3}]"#,
            Some((7, 6)),
        )
        .unwrap();
        for spec in &layers {
            let counts = count_ops_instrumented(spec, 1).unwrap();
            let cost = layer_costs(spec).unwrap();
            assert_eq!(counts.before, OpCounts { mults: cost.mults_before, adds: cost.adds_before }, "{spec:?}");
            assert_eq!(counts.after, OpCounts { mults: cost.mults_after, adds: cost.adds_after }, "{spec:?}");
            assert!(counts.max_rel_error <= 1e-10);
        }
    }

    #[test]
    fn size_guard() {
        let spec = &parse_network_str(
            r#"[{"kind": "conv", "cout": 64, "cin": 64, "k": 3, "c": 32, "n": 3, "pad": 1}]"#,
            Some((56, 56)),
        )
        .unwrap()[0];
        assert!(matches!(count_ops_instrumented(spec, 0), Err(Error::SizeGuard(_))));
    }
}
