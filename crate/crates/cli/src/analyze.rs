use structconv::analyzer::{analyze_network, format_table, parse_network_spec};

use crate::args::AnalyzeArgs;
use crate::output::{emit, Failure};

pub fn run(args: &AnalyzeArgs) -> Result<(), Failure> {
    let layers = parse_network_spec(&args.config, args.input_size)?;
    let report = analyze_network(&layers)?;
    emit(args.format, &report, || format_table(&report))
}
