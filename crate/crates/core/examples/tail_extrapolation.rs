//! Hill and Weissman estimators on Pareto residuals, for several `k`.
//!
//! ```bash
//! cargo run --release -p cstq --example tail_extrapolation
//! ```

use cstq::rng;
use cstq::tail::KRule;
use cstq::{hill, weissman_quantile};

fn main() -> cstq::Result<()> {
    let gamma = 0.5;
    let n = 5000;
    let mut g = rng::stream(3, 0);
    // Pareto(γ): U^(−γ).
    let residuals: Vec<f64> = (0..n).map(|_| rng::open01(&mut g).powf(-gamma)).collect();

    println!(
        "{:>6} {:>10} {:>12} {:>12}",
        "k", "gamma_hat", "q(0.999)", "q(0.9999)"
    );
    for k in [25, 50, 100, 200, 400] {
        let fit = hill(&residuals, k)?;
        let q3 = weissman_quantile(&fit, n, 0.999)?;
        let q4 = weissman_quantile(&fit, n, 0.9999)?;
        println!("{k:>6} {:>10.4} {q3:>12.3} {q4:>12.3}", fit.gamma_hat);
    }
    println!(
        "truth: gamma = {gamma}, q(0.999) = {:.3}, q(0.9999) = {:.3}",
        1e3f64.powf(gamma),
        1e4f64.powf(gamma)
    );

    for rule in [KRule::NQuarter, KRule::NThirdBaseline] {
        println!("{rule:?} gives k = {} at n = {n}", rule.resolve(n));
    }
    Ok(())
}
