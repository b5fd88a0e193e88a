//! Parameter, multiplication and addition counts before and after
//! decomposition, for single layers and whole networks.

mod cost;
mod generate;
mod instrumented;
mod spec;

pub use cost::{
    aggregate, analyze_network, compression_ratio, format_table, layer_costs, layer_report,
    network_report, CostReport, LayerReport, NetworkCostReport, Ratio,
};
pub use generate::{generate_config, GeneratedConfig};
pub use instrumented::{count_ops_instrumented, InstrumentedCounts, SIZE_GUARD};
pub use spec::{parse_network_spec, parse_network_str, LayerKind, LayerSpec};
