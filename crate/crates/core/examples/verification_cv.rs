//! Leave-one-year-out verification of CST and linear-baseline forecasts
//! against climatology.
//!
//! ```bash
//! cargo run --release -p cstq --example verification_cv
//! ```

use cstq::bandwidth::BandwidthChoice;
use cstq::io::Dataset;
use cstq::model::{FitSettings, Strategy};
use cstq::rng;
use cstq::verification::{grouped_cv, mean_qvss, write_report_csv, CvOptions};

fn main() -> cstq::Result<()> {
    let mut g = rng::stream(8, 0);
    let mut data = Dataset::default();
    for year in 2001..=2007 {
        for _ in 0..250 {
            let x = 3.0 * rng::open01(&mut g);
            let u = rng::open01(&mut g);
            data.groups.push(year.to_string());
            data.xs.push(x);
            data.ys.push(x.exp() + ((1.0 - u).powf(-0.25) - 1.0) / 0.25);
        }
    }

    let opts = CvOptions {
        taus: vec![0.9, 51.0 / 52.0],
        filter: None,
        n_bins: 5,
        seed: 1,
    };
    for strategy in [Strategy::Cst, Strategy::LinearBaseline] {
        let settings = FitSettings {
            strategy,
            tau_c: 0.8,
            h: BandwidthChoice::Rule { c: 1.0 },
            ..FitSettings::default()
        };
        let out = grouped_cv(&data, &settings, &opts)?;
        println!("{strategy:?}");
        write_report_csv(&out.reports, std::io::stdout())
            .map_err(|e| cstq::Error::Domain(e.to_string()))?;
        for &tau in &opts.taus {
            println!(
                "mean QVSS at tau = {tau:.4}: {:.4}",
                mean_qvss(&out.reports, tau)
            );
        }
        let r = &out.reports[1];
        println!("reliability, group {} at tau = {:.4}:", r.group_key, r.tau);
        for p in &r.reliability_points {
            println!(
                "  forecast {:>8.3}  observed {:>8.3}  ({} rows)",
                p.mean_forecast, p.empirical_quantile, p.count
            );
        }
    }
    Ok(())
}
