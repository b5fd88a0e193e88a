use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::spec::{LayerKind, LayerSpec};
use crate::error::Result;
use crate::structured::gcd;

/// A reduced fraction `num/den`. Serializes with its decimal `value` for
/// readers that do not want to divide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Ratio", 3)?;
        st.serialize_field("num", &self.num)?;
        st.serialize_field("den", &self.den)?;
        st.serialize_field("value", &self.value())?;
        st.end()
    }
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        let g = gcd(num, den).max(1);
        Self { num: num / g, den: den / g }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params_before: u64,
    pub params_after: u64,
    pub mults_before: u64,
    pub mults_after: u64,
    pub adds_before: u64,
    pub adds_after: u64,
}

impl CostReport {
    fn sum(self, o: Self) -> Self {
        Self {
            params_before: self.params_before + o.params_before,
            params_after: self.params_after + o.params_after,
            mults_before: self.mults_before + o.mults_before,
            mults_after: self.mults_after + o.mults_after,
            adds_before: self.adds_before + o.adds_before,
            adds_after: self.adds_after + o.adds_after,
        }
    }
}

fn u(v: usize) -> u64 {
    v as u64
}

/// Costs of a single-group convolution with structure `(C, N, c, n)`:
/// the direct layer against one shared sum-pool plus the small convolution.
fn conv_costs(
    c_out: u64,
    big_c: u64,
    big_n: u64,
    c: u64,
    n: u64,
    pooled_hw: u64,
    out_hw: u64,
) -> CostReport {
    let window = (big_c - c + 1) * (big_n - n + 1) * (big_n - n + 1);
    CostReport {
        params_before: c_out * big_c * big_n * big_n,
        params_after: c_out * c * n * n,
        mults_before: big_c * big_n * big_n * c_out * out_hw,
        mults_after: c * n * n * c_out * out_hw,
        adds_before: (big_c * big_n * big_n - 1) * c_out * out_hw,
        adds_after: (window - 1) * c * pooled_hw + (c * n * n - 1) * c_out * out_hw,
    }
}

/// Exact parameter, multiplication and addition counts before and after
/// decomposition.
///
/// The sum-pool runs at stride 1 over `H₁×W₁ = (H+2p−d(N−n))×(W+2p−d(N−n))`
/// positions and is shared by all output channels. Depthwise layers are
/// costed per channel (`C = C_out = 1`) and multiplied by the channel count.
pub fn layer_costs(spec: &LayerSpec) -> Result<CostReport> {
    spec.validate()?;
    let (ho, wo) = spec.output_hw()?;
    let out_hw = u(ho * wo);
    let span = |axis: usize, len: usize| {
        len + 2 * spec.geom.padding[axis] - spec.geom.dilation[axis] * (spec.k - spec.n)
    };
    let pooled_hw = u(span(0, spec.input_hw.0) * span(1, spec.input_hw.1));
    let (k, c, n) = (u(spec.k), u(spec.c), u(spec.n));
    Ok(match spec.kind {
        LayerKind::Conv | LayerKind::Pwconv => {
            conv_costs(u(spec.c_out), u(spec.c_in), k, c, n, pooled_hw, out_hw)
        }
        LayerKind::Dwconv => {
            let one = conv_costs(1, 1, k, c, n, pooled_hw, out_hw);
            let ch = u(spec.c_out);
            CostReport {
                params_before: ch * one.params_before,
                params_after: ch * one.params_after,
                mults_before: ch * one.mults_before,
                mults_after: ch * one.mults_after,
                adds_before: ch * one.adds_before,
                adds_after: ch * one.adds_after,
            }
        }
        LayerKind::Linear => {
            let (p, q, r) = (u(spec.c_out), u(spec.c_in), c);
            CostReport {
                params_before: p * q,
                params_after: p * r,
                mults_before: p * q,
                mults_after: p * r,
                adds_before: p * (q - 1),
                adds_after: r * (q - r) + p * (r - 1),
            }
        }
    })
}

/// `C·N² / (c·n²)` for one kernel (`Q/R` for linear layers).
pub fn compression_ratio(spec: &LayerSpec) -> Ratio {
    let (a, b) = spec.cfg().compression_ratio();
    Ratio::new(a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: LayerSpec,
    pub output_hw: (usize, usize),
    pub cost: CostReport,
    pub compression: Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCostReport {
    pub layers: Vec<LayerReport>,
    pub totals: CostReport,
    /// Before/after ratios of the totals.
    pub params_ratio: Ratio,
    pub mults_ratio: Ratio,
    pub adds_ratio: Ratio,
}

pub fn layer_report(spec: &LayerSpec) -> Result<LayerReport> {
    Ok(LayerReport {
        layer: spec.clone(),
        output_hw: spec.output_hw()?,
        cost: layer_costs(spec)?,
        compression: compression_ratio(spec),
    })
}

/// Network totals of per-layer costs.
pub fn aggregate(reports: &[CostReport]) -> CostReport {
    reports.iter().fold(CostReport::default(), |acc, r| acc.sum(*r))
}

pub fn analyze_network(layers: &[LayerSpec]) -> Result<NetworkCostReport> {
    let layers = layers.iter().map(layer_report).collect::<Result<Vec<_>>>()?;
    Ok(network_report(layers))
}

/// Wraps per-layer reports, in the order given, with totals.
pub fn network_report(layers: Vec<LayerReport>) -> NetworkCostReport {
    let totals = aggregate(&layers.iter().map(|l| l.cost).collect::<Vec<_>>());
    let ratio = |a: u64, b: u64| Ratio::new(a, b.max(1));
    NetworkCostReport {
        params_ratio: ratio(totals.params_before, totals.params_after),
        mults_ratio: ratio(totals.mults_before, totals.mults_after),
        adds_ratio: ratio(totals.adds_before, totals.adds_after),
        layers,
        totals,
    }
}

/// Fixed-width text rendering of a network report.
pub fn format_table(report: &NetworkCostReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:<7} {:>22} {:>5} {:>3} {:>9} {:>12} {:>12} {:>14} {:>14} {:>14} {:>14} {:>8}",
        "idx", "kind", "dims", "c", "n", "input", "params", "params'", "mults", "mults'", "adds", "adds'", "ratio"
    );
    for l in &report.layers {
        let sp = &l.layer;
        let dims = format!("{}x{}x{}x{}", sp.c_out, sp.c_in, sp.k, sp.k);
        let input = format!("{}x{}", sp.input_hw.0, sp.input_hw.1);
        let c = &l.cost;
        let _ = writeln!(
            s,
            "{:>5} {:<7} {:>22} {:>5} {:>3} {:>9} {:>12} {:>12} {:>14} {:>14} {:>14} {:>14} {:>8.3}",
            sp.index,
            sp.kind.as_str(),
            dims,
            sp.c,
            sp.n,
            input,
            c.params_before,
            c.params_after,
            c.mults_before,
            c.mults_after,
            c.adds_before,
            c.adds_after,
            l.compression.value()
        );
    }
    let t = &report.totals;
    let _ = writeln!(
        s,
        "{:>5} {:<7} {:>22} {:>5} {:>3} {:>9} {:>12} {:>12} {:>14} {:>14} {:>14} {:>14} {:>8.3}",
        "total", "", "", "", "", "", t.params_before, t.params_after, t.mults_before, t.mults_after,
        t.adds_before, t.adds_after, report.params_ratio.value()
    );
    s
}
