//! Compare the direct bootstrap, residual bootstrap and leave-one-out
//! bandwidth criteria on one simulated sample.
//!
//! ```bash
//! cargo run --release -p cstq --example bandwidth_selection
//! ```

use cstq::bandwidth::{bootstrap_scores, loocv_scores, BandwidthPlan, BootstrapStrategy};
use cstq::simulation::{generate, ErrorDist, RId, SigmaId, SimDesign};
use cstq::Kernel;

fn main() -> cstq::Result<()> {
    let design = SimDesign {
        r_id: RId::R2,
        sigma_id: SigmaId::Unit,
        error_id: ErrorDist::Gpd(0.25),
        n: 500,
        m: 1,
        taus: vec![0.99],
        seed: 2024,
    };
    let sample = generate(&design, 0)?;
    let tau_c = 0.5;
    let kernel = Kernel::Epanechnikov;

    let plan = BandwidthPlan::default_for(&sample, 1);
    let direct = bootstrap_scores(&sample, tau_c, kernel, &plan)?;
    let residual = bootstrap_scores(
        &sample,
        tau_c,
        kernel,
        &BandwidthPlan {
            strategy: BootstrapStrategy::Residual,
            ..plan.clone()
        },
    )?;
    let loocv = loocv_scores(&sample, tau_c, kernel, &plan.h_grid)?;

    println!("h0 = {:.4}, B = {}", plan.h0, plan.b);
    println!(
        "{:>8} {:>12} {:>12} {:>12}",
        "h", "direct", "residual", "loocv"
    );
    for i in 0..plan.h_grid.len() {
        println!(
            "{:>8.4} {:>12.5} {:>12.5} {:>12.3}",
            plan.h_grid[i], direct.mean[i], residual.mean[i], loocv.mean[i]
        );
    }
    println!(
        "selected: direct {:.4}, residual {:.4}, loocv {:.4}",
        direct.argmin()?,
        residual.argmin()?,
        loocv.argmin()?
    );
    direct
        .write_csv(std::io::stdout())
        .map_err(|e| cstq::Error::Domain(e.to_string()))?;
    Ok(())
}
