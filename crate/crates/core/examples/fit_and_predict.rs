//! Fit the common-shape-tail model on simulated data and forecast extreme
//! conditional quantiles.
//!
//! ```bash
//! cargo run --release -p cstq --example fit_and_predict
//! ```

use cstq::bandwidth::{BandwidthChoice, BootstrapSettings};
use cstq::model::{FitSettings, FittedModel};
use cstq::simulation::{generate, true_quantile, ErrorDist, RId, SigmaId, SimDesign};

fn main() -> cstq::Result<()> {
    let design = SimDesign {
        r_id: RId::R3,
        sigma_id: SigmaId::Unit,
        error_id: ErrorDist::Gpd(0.25),
        n: 1000,
        m: 1,
        taus: vec![0.99],
        seed: 7,
    };
    let sample = generate(&design, 0)?;

    let settings = FitSettings {
        tau_c: 0.5,
        h: BandwidthChoice::Bootstrap(BootstrapSettings {
            b: 40,
            ..Default::default()
        }),
        ..FitSettings::default()
    };
    let model = settings.fit(&sample, None, 11)?;
    let FittedModel::Cst(cst) = &model else {
        unreachable!()
    };
    println!(
        "n = {}, h = {:.4}, k = {}, gamma_hat = {:.4}",
        cst.n(),
        cst.h,
        cst.tail.k,
        cst.tail.gamma_hat
    );

    println!("{:>6} {:>8} {:>10} {:>10}", "x", "tau", "estimate", "truth");
    for &x in &[-0.8, -0.4, 0.0, 0.4, 0.8] {
        for &tau in &[0.9, 0.99, 0.999] {
            let est = model.quantile(tau, x, None)?;
            let truth = true_quantile(&design, tau, x)?;
            println!("{x:>6.2} {tau:>8} {est:>10.4} {truth:>10.4}");
        }
    }

    // Below tau_c the strict quantile refuses; forecast falls back to the
    // local linear curve.
    assert!(model.quantile(0.3, 0.0, None).is_err());
    println!(
        "forecast at tau = 0.3, x = 0: {:.4}",
        model.forecast(0.3, 0.0, None)?
    );
    Ok(())
}
