use std::path::PathBuf;

use structconv::analyzer::*;
use structconv::counting::OpCounts;
use structconv::tensor::ConvGeometry;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn spec(kind: LayerKind, c_out: usize, c_in: usize, k: usize, c: usize, n: usize, geom: ConvGeometry, hw: (usize, usize)) -> LayerSpec {
    LayerSpec { index: 1, name: None, kind, c_out, c_in, k, c, n, geom, input_hw: hw }
}

fn assert_counts_match(s: &LayerSpec) {
    let counts = count_ops_instrumented(s, 9).unwrap();
    let cost = layer_costs(s).unwrap();
    assert_eq!(counts.before, OpCounts { mults: cost.mults_before, adds: cost.adds_before }, "{s:?}");
    assert_eq!(counts.after, OpCounts { mults: cost.mults_after, adds: cost.adds_after }, "{s:?}");
}

#[test]
fn formulas_equal_counts_on_small_convs() {
    let mut checked = 0;
    for big_c in 1..=4 {
        for big_n in 1..=4 {
            for c in 1..=big_c {
                for n in 1..=big_n {
                    for c_out in [1, 3] {
                        for hw in [(5, 7), (8, 8)] {
                            for (s, p, d) in grid(&[1, 2], &[0, 1], &[1, 2]) {
                                let kind = if big_n == 1 { LayerKind::Pwconv } else { LayerKind::Conv };
                                let l = spec(kind, c_out, big_c, big_n, c, n, ConvGeometry::new(s, p, d), hw);
                                if kind == LayerKind::Pwconv && p > 0 || l.validate().is_err() {
                                    continue;
                                }
                                assert_counts_match(&l);
                                checked += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    assert!(checked > 2000, "{checked}");
}

fn grid(a: &[usize], b: &[usize], c: &[usize]) -> Vec<(usize, usize, usize)> {
    a.iter()
        .flat_map(|&x| b.iter().flat_map(move |&y| c.iter().map(move |&z| (x, y, z))))
        .collect()
}

#[test]
fn formulas_equal_counts_on_depthwise_and_linear() {
    for channels in [1, 4] {
        for big_n in 1..=5 {
            for n in 1..=big_n {
                for (s, p, d) in grid(&[1, 2], &[0, 1, 2], &[1, 2]) {
                    let geom = ConvGeometry::new(s, p, d).with_groups(channels);
                    let l = spec(LayerKind::Dwconv, channels, 1, big_n, 1, n, geom, (7, 6));
                    if l.validate().is_ok() {
                        assert_counts_match(&l);
                    }
                }
            }
        }
    }
    for p in 1..=8 {
        for q in 1..=8 {
            for r in 1..=q {
                let l = spec(LayerKind::Linear, p, q, 1, r, 1, ConvGeometry::default(), (1, 1));
                assert_counts_match(&l);
            }
        }
    }
}

#[test]
fn additions_amortize_towards_basis_size() {
    // Four 2×2 patches in a 3×3 kernel: cn² − 1 = 3 adds per output.
    let per_output = |c_out: usize| {
        let l = spec(LayerKind::Conv, c_out, 1, 3, 1, 2, ConvGeometry::new(1, 1, 1), (8, 8));
        let cost = layer_costs(&l).unwrap();
        cost.adds_after as f64 / (c_out * 64) as f64
    };
    let (a, b, c) = (per_output(1), per_output(16), per_output(256));
    assert!(a > b && b > c);
    assert!((c - 3.0).abs() / 3.0 <= 0.02, "{c}");
}

#[test]
fn struct_mv2_a_totals() {
    let layers = parse_network_spec(&fixture("struct_mv2_a.json"), Some((224, 224))).unwrap();
    let report = analyze_network(&layers).unwrap();
    let before = report.totals.params_before as f64;
    let after = report.totals.params_after as f64;
    assert!((before / 3.50e6 - 1.0).abs() <= 0.05, "{before}");
    assert!((after / 2.62e6 - 1.0).abs() <= 0.05, "{after}");
    for l in &report.layers {
        let cost = l.cost;
        let cfg = l.layer.cfg();
        assert_eq!(
            cost.mults_after as u128 * cfg.kernel_len() as u128,
            cost.mults_before as u128 * cfg.num_basis() as u128,
            "layer {}",
            l.layer.index
        );
        assert!(cost.params_after <= cost.params_before);
    }
}

#[test]
fn all_fixtures_parse_and_shrink() {
    for (name, hw) in [("struct_mv2_a.json", 224), ("struct_mv2_b.json", 224), ("struct_effnet.json", 240)] {
        let layers = parse_network_spec(&fixture(name), Some((hw, hw))).unwrap();
        let report = analyze_network(&layers).unwrap();
        assert!(report.totals.params_after < report.totals.params_before, "{name}");
        assert!(report.totals.mults_after < report.totals.mults_before, "{name}");
        let json = serde_json::to_string(&report).unwrap();
        let back: NetworkCostReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
