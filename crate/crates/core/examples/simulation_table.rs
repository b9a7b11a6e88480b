//! A small Monte-Carlo comparison of the CST and linear-baseline
//! estimators, printed as a markdown table.
//!
//! ```bash
//! cargo run --release -p cstq --example simulation_table
//! ```

use cstq::bandwidth::{BandwidthChoice, BootstrapSettings};
use cstq::simulation::{
    run_table, table_markdown, CurveEstimator, ErrorDist, EstimatorSpec, RId, SigmaId, SimDesign,
};

fn main() -> cstq::Result<()> {
    let designs: Vec<SimDesign> = [RId::R1, RId::R2, RId::R3]
        .into_iter()
        .enumerate()
        .map(|(i, r_id)| SimDesign {
            r_id,
            sigma_id: SigmaId::Unit,
            error_id: ErrorDist::Gpd(0.25),
            n: 500,
            m: 20,
            taus: vec![0.99, 0.995],
            seed: cstq::rng::derive_seed(99, i as u64),
        })
        .collect();
    let cst = EstimatorSpec::cst(BandwidthChoice::Bootstrap(BootstrapSettings {
        b: 30,
        ..Default::default()
    }));
    let linear = EstimatorSpec::linear_baseline();
    let estimators: [&dyn CurveEstimator; 2] = [&cst, &linear];
    let rows = run_table(&designs, &estimators)?;
    print!("{}", table_markdown(&rows));
    Ok(())
}
