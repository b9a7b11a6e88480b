//! Precipitation-like responses with a point mass at zero. The probability
//! of a dry outcome depends on how many ensemble members forecast zero.
//!
//! ```bash
//! cargo run --release -p cstq --example zero_inflation
//! ```

use cstq::bandwidth::BandwidthChoice;
use cstq::model::{FitSettings, FittedModel, Strategy};
use cstq::{rng, PairedSample};

fn main() -> cstq::Result<()> {
    let members = 51.0;
    let mut g = rng::stream(42, 0);
    let (mut xs, mut ys, mut zs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..3000 {
        let x = 20.0 * rng::open01(&mut g);
        let dry_members = (members * rng::open01(&mut g)).floor();
        let p_dry = 1.0 / (1.0 + (-(-2.0 + 0.08 * dry_members)).exp());
        let y = if rng::open01(&mut g) < p_dry {
            0.0
        } else {
            let u = rng::open01(&mut g);
            0.5 * x + 2.0 * ((1.0 - u).powf(-0.2) - 1.0) / 0.2
        };
        xs.push(x);
        ys.push(y);
        zs.push(dry_members);
    }
    let sample = PairedSample::new(xs, ys)?;

    let settings = FitSettings {
        strategy: Strategy::CstZeroInflated,
        tau_c: 0.9,
        h: BandwidthChoice::Rule { c: 1.0 },
        ..FitSettings::default()
    };
    let model = settings.fit(&sample, Some(&zs), 5)?;
    let FittedModel::ZeroInflated(zi) = &model else {
        unreachable!()
    };
    println!(
        "logistic: intercept {:.3}, slope {:.4}",
        zi.intercept, zi.slope
    );
    println!(
        "positive part: h = {:.3}, gamma_hat = {:.3}",
        zi.positive_model.h, zi.positive_model.tail.gamma_hat
    );

    println!(
        "{:>6} {:>6} {:>8} {:>10} {:>10} {:>10}",
        "x", "z", "p0", "q(0.5)", "q(0.95)", "q(0.995)"
    );
    for &x in &[2.0, 10.0, 18.0] {
        for &z in &[0.0, 25.0, 51.0] {
            let q: Vec<f64> = [0.5, 0.95, 0.995]
                .iter()
                .map(|&t| model.forecast(t, x, Some(z)))
                .collect::<cstq::Result<_>>()?;
            println!(
                "{x:>6} {z:>6} {:>8.3} {:>10.3} {:>10.3} {:>10.3}",
                zi.p0(z),
                q[0],
                q[1],
                q[2]
            );
        }
    }
    Ok(())
}
