use serde::{Deserialize, Serialize};

use super::cost::Ratio;
use super::spec::{LayerKind, LayerSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedConfig {
    pub index: usize,
    pub c: usize,
    pub n: usize,
    pub achieved: Ratio,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Picks `{c, n}` per layer for a target compression ratio.
///
/// Standard and pointwise layers keep `n = N` and take
/// `c = max(1, round(C·n²/(N²·target)))`; linear layers do the same with `R`.
/// Depthwise layers take the largest `n` with `N²/n² ≥ target`, else `n = N`.
/// A target beyond `C·N²` is infeasible and falls back to `{1, 1}` with a
/// warning.
pub fn generate_config(layers: &[LayerSpec], target_ratio: f64) -> Result<Vec<GeneratedConfig>> {
    if !(target_ratio.is_finite() && target_ratio >= 1.0) {
        return Err(Error::InvalidConfig(format!("target ratio {target_ratio} must be ≥ 1")));
    }
    Ok(layers
        .iter()
        .map(|l| {
            let (big_c, big_n) = (l.c_in, l.k);
            let max_ratio = (big_c * big_n * big_n) as f64;
            let (c, n, warning) = if target_ratio > max_ratio {
                (1, 1, Some(format!(
                    "layer {}: target {target_ratio} exceeds the maximum ratio {max_ratio}; using c = 1, n = 1",
                    l.index
                )))
            } else if l.kind == LayerKind::Dwconv {
                let n = (1..=big_n)
                    .rev()
                    .find(|&n| (big_n * big_n) as f64 / (n * n) as f64 >= target_ratio)
                    .unwrap_or(big_n);
                (1, n, None)
            } else {
                let c = ((big_c as f64 / target_ratio).round() as usize).clamp(1, big_c);
                (c, big_n, None)
            };
            GeneratedConfig {
                index: l.index,
                c,
                n,
                achieved: Ratio::new((big_c * big_n * big_n) as u64, (c * n * n) as u64),
                warning,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::parse_network_str;

    fn layers() -> Vec<LayerSpec> {
        parse_network_str(
            r#"[{"kind": "conv", "cout": 64, "cin": 64, "k": 3, "c": 64, "n": 3, "pad": 1},
                {"kind": "dwconv", "cout": 64, "cin": 1, "k": 3, "c": 1, "n": 3, "pad": 1},
                {"kind": "pwconv", "cout": 32, "cin": 64, "c": 64},
                {"kind": "linear", "cout": 10, "cin": 32, "c": 32}]"#,
            Some((8, 8)),
        )
        .unwrap()
    }

    #[test]
    fn two_x() {
        let g = generate_config(&layers(), 2.0).unwrap();
        assert_eq!((g[0].c, g[0].n), (32, 3));
        assert_eq!(g[0].achieved, Ratio { num: 2, den: 1 });
        assert_eq!((g[1].c, g[1].n), (1, 2));
        assert_eq!(g[1].achieved, Ratio { num: 9, den: 4 });
        assert_eq!(g[2].c, 32);
        assert_eq!(g[3].c, 16);
        assert!(g.iter().all(|c| c.warning.is_none()));
    }

    #[test]
    fn one_x_is_identity() {
        for (g, l) in generate_config(&layers(), 1.0).unwrap().iter().zip(layers()) {
            assert_eq!((g.c, g.n), (l.c_in, l.k));
            assert_eq!(g.achieved, Ratio { num: 1, den: 1 });
        }
    }

    #[test]
    fn infeasible_targets_clamp() {
        let g = generate_config(&layers(), 20.0).unwrap();
        assert_eq!((g[1].c, g[1].n), (1, 1));
        assert!(g[1].warning.is_some());
        assert!(g[0].warning.is_none());
        assert!(generate_config(&layers(), 0.5).is_err());
    }
}
