//! Monte-Carlo comparison of extreme conditional quantile estimators.
//!
//! Data follow `Y = r(X) + σ(X) ε` with `X ~ U[−1, 1]` and `ε` drawn by
//! inverse-CDF sampling. Replication `i` of a design uses stream `i` of the
//! ChaCha20 generator keyed by the design seed: first `X` then `ε`, one pair
//! per observation.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthChoice;
use crate::error::{check_level, Error, Result};
use crate::quantreg::{fit_at_points, trapezoid, uniform_grid, Kernel, PairedSample};
use crate::rng;
use crate::tail::{fit_cst, fit_linear_baseline, BaselineAnchor, KRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RId {
    R1,
    R2,
    R3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaId {
    Unit,
    Tilted,
}

/// Error distribution with unit scale and zero location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Gpd(f64),
    StudentT1,
}

impl fmt::Display for RId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RId::R1 => "r1",
            RId::R2 => "r2",
            RId::R3 => "r3",
        })
    }
}

impl fmt::Display for SigmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaId::Unit => "unit",
            SigmaId::Tilted => "tilted",
        })
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorDist::Gpd(g) => write!(f, "GPD({g})"),
            ErrorDist::StudentT1 => f.write_str("t1"),
        }
    }
}

fn check_x(x: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("x must lie in [-1, 1], got {x}")))
    }
}

/// `r1 = x`, `r2 = eˣ`, `r3 = sin(2πx)(1 − eˣ)`.
pub fn r_func(id: RId, x: f64) -> Result<f64> {
    check_x(x)?;
    Ok(match id {
        RId::R1 => x,
        RId::R2 => x.exp(),
        RId::R3 => (2.0 * std::f64::consts::PI * x).sin() * -x.exp_m1(),
    })
}

/// `1` or `(4 + x)/4`.
pub fn sigma_func(id: SigmaId, x: f64) -> Result<f64> {
    check_x(x)?;
    Ok(match id {
        SigmaId::Unit => 1.0,
        SigmaId::Tilted => (4.0 + x) / 4.0,
    })
}

/// Quantile function of the error distribution.
pub fn error_quantile(dist: ErrorDist, tau: f64) -> Result<f64> {
    check_level(tau, "tau")?;
    Ok(match dist {
        ErrorDist::Gpd(g) if g == 0.0 => -(-tau).ln_1p(),
        ErrorDist::Gpd(g) => (-g * (-tau).ln_1p()).exp_m1() / g,
        ErrorDist::StudentT1 => (std::f64::consts::PI * (tau - 0.5)).tan(),
    })
}

/// One cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub r_id: RId,
    pub sigma_id: SigmaId,
    pub error_id: ErrorDist,
    pub n: usize,
    pub m: usize,
    pub taus: Vec<f64>,
    pub seed: u64,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::Domain(format!(
                "n must be at least 50, got {}",
                self.n
            )));
        }
        if self.m == 0 {
            return Err(Error::Domain("m must be positive".into()));
        }
        for &t in &self.taus {
            check_level(t, "tau")?;
        }
        if let ErrorDist::Gpd(g) = self.error_id {
            if !g.is_finite() {
                return Err(Error::Domain("GPD shape must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Sample `replication` of `design`.
pub fn generate(design: &SimDesign, replication: usize) -> Result<PairedSample> {
    design.validate()?;
    if replication >= design.m {
        return Err(Error::Domain(format!(
            "replication {replication} out of range for m = {}",
            design.m
        )));
    }
    let mut g = rng::stream(design.seed, replication as u64);
    let mut xs = Vec::with_capacity(design.n);
    let mut ys = Vec::with_capacity(design.n);
    for _ in 0..design.n {
        let x = 2.0 * rng::open01(&mut g) - 1.0;
        let e = error_quantile(design.error_id, rng::open01(&mut g))?;
        xs.push(x);
        ys.push(r_func(design.r_id, x)? + sigma_func(design.sigma_id, x)? * e);
    }
    PairedSample::new(xs, ys)
}

/// `Q(τ | x) = r(x) + σ(x) Q_ε(τ)`.
pub fn true_quantile(design: &SimDesign, tau: f64, x: f64) -> Result<f64> {
    Ok(r_func(design.r_id, x)?
        + sigma_func(design.sigma_id, x)? * error_quantile(design.error_id, tau)?)
}

/// Something that turns a sample into quantile curves on a grid.
pub trait CurveEstimator: Sync {
    fn name(&self) -> String;

    /// One curve per level in `taus`, each evaluated on `grid`. `seed` is the
    /// replication's private seed for any internal randomness.
    fn estimate(
        &self,
        sample: &PairedSample,
        taus: &[f64],
        grid: &[f64],
        seed: u64,
    ) -> Result<Vec<Vec<f64>>>;
}

fn default_tau_c() -> f64 {
    0.5
}
fn default_cst_k() -> KRule {
    KRule::NQuarter
}
fn default_baseline_k() -> KRule {
    KRule::NThirdBaseline
}
fn default_trim() -> usize {
    3
}

/// The estimators compared in the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Cst {
        #[serde(default = "default_tau_c")]
        tau_c: f64,
        #[serde(default = "default_cst_k")]
        k_rule: KRule,
        #[serde(default)]
        bandwidth: BandwidthChoice,
        #[serde(default)]
        kernel: Kernel,
    },
    LinearBaseline {
        #[serde(default = "default_baseline_k")]
        k_rule: KRule,
        #[serde(default = "default_trim")]
        trim: usize,
        #[serde(default)]
        anchor: BaselineAnchor,
    },
}

impl EstimatorSpec {
    pub fn cst(bandwidth: BandwidthChoice) -> Self {
        EstimatorSpec::Cst {
            tau_c: default_tau_c(),
            k_rule: default_cst_k(),
            bandwidth,
            kernel: Kernel::default(),
        }
    }

    pub fn linear_baseline() -> Self {
        EstimatorSpec::LinearBaseline {
            k_rule: default_baseline_k(),
            trim: default_trim(),
            anchor: BaselineAnchor::default(),
        }
    }
}

impl CurveEstimator for EstimatorSpec {
    fn name(&self) -> String {
        match self {
            EstimatorSpec::Cst { .. } => "CST".into(),
            EstimatorSpec::LinearBaseline { .. } => "linear".into(),
        }
    }

    fn estimate(
        &self,
        sample: &PairedSample,
        taus: &[f64],
        grid: &[f64],
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        match *self {
            EstimatorSpec::Cst {
                tau_c,
                k_rule,
                ref bandwidth,
                kernel,
            } => {
                let h = bandwidth.select(sample, tau_c, kernel, seed)?;
                let model = fit_cst(sample, tau_c, h, kernel, k_rule.resolve(sample.len()))?;
                let rhat = fit_at_points(sample.xs(), sample.ys(), None, tau_c, h, kernel, grid)
                    .into_iter()
                    .map(|r| r.map(|f| f.alpha))
                    .collect::<Result<Vec<f64>>>()?;
                taus.iter()
                    .map(|&tau| {
                        let q = model.tail_quantile(tau)?;
                        Ok(rhat.iter().map(|r| r + q).collect())
                    })
                    .collect()
            }
            EstimatorSpec::LinearBaseline {
                k_rule,
                trim,
                anchor,
            } => {
                let model =
                    fit_linear_baseline(sample, k_rule.resolve(sample.len()), trim, anchor)?;
                taus.iter()
                    .map(|&tau| grid.iter().map(|&x| model.predict(tau, x)).collect())
                    .collect()
            }
        }
    }
}

/// Monte-Carlo MISE at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct MiseResult {
    pub tau: f64,
    /// Mean over successful replications; NaN when none succeeded.
    pub mise: f64,
    pub failures: usize,
    pub successes: usize,
    /// Integrated squared error per replication, `None` on failure.
    pub per_replication: Vec<Option<f64>>,
}

/// Points of the integration grid on `[−1, 1]`.
pub const INTEGRATION_POINTS: usize = 101;

/// MISE of `estimator` at a single level.
pub fn mise(design: &SimDesign, estimator: &dyn CurveEstimator, tau: f64) -> Result<MiseResult> {
    Ok(mise_levels(design, estimator, &[tau])?.remove(0))
}

/// MISE at several levels from the same fits.
pub fn mise_levels(
    design: &SimDesign,
    estimator: &dyn CurveEstimator,
    taus: &[f64],
) -> Result<Vec<MiseResult>> {
    design.validate()?;
    if taus.is_empty() {
        return Err(Error::Domain("at least one level is required".into()));
    }
    for &t in taus {
        check_level(t, "tau")?;
    }
    let grid = uniform_grid(-1.0, 1.0, INTEGRATION_POINTS);
    let truth: Vec<Vec<f64>> = taus
        .iter()
        .map(|&t| grid.iter().map(|&x| true_quantile(design, t, x)).collect())
        .collect::<Result<_>>()?;
    let per_rep: Vec<Option<Vec<f64>>> = (0..design.m)
        .into_par_iter()
        .map(|rep| {
            let sample = generate(design, rep).ok()?;
            let curves = estimator
                .estimate(
                    &sample,
                    taus,
                    &grid,
                    rng::derive_seed(design.seed, rep as u64),
                )
                .ok()?;
            let mut ises = Vec::with_capacity(taus.len());
            for (curve, t) in curves.iter().zip(&truth) {
                let sq: Vec<f64> = curve.iter().zip(t).map(|(a, b)| (a - b).powi(2)).collect();
                let ise = trapezoid(&grid, &sq);
                if !ise.is_finite() {
                    return None;
                }
                ises.push(ise);
            }
            Some(ises)
        })
        .collect();
    Ok(taus
        .iter()
        .enumerate()
        .map(|(ti, &tau)| {
            let per_replication: Vec<Option<f64>> =
                per_rep.iter().map(|r| r.as_ref().map(|v| v[ti])).collect();
            let ok: Vec<f64> = per_replication.iter().flatten().copied().collect();
            let mise = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            };
            MiseResult {
                tau,
                mise,
                failures: design.m - ok.len(),
                successes: ok.len(),
                per_replication,
            }
        })
        .collect())
}

/// One output row of a simulation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub r: String,
    pub sigma: String,
    pub error: String,
    pub n: usize,
    pub m: usize,
    pub estimator: String,
    pub tau: f64,
    pub mise: f64,
    pub failures: usize,
    pub seed: u64,
}

/// Runs every estimator on every design; rows are ordered by design, then
/// estimator, then level.
pub fn run_table(
    designs: &[SimDesign],
    estimators: &[&dyn CurveEstimator],
) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for d in designs {
        for est in estimators {
            for res in mise_levels(d, *est, &d.taus)? {
                rows.push(TableRow {
                    r: d.r_id.to_string(),
                    sigma: d.sigma_id.to_string(),
                    error: d.error_id.to_string(),
                    n: d.n,
                    m: d.m,
                    estimator: est.name(),
                    tau: res.tau,
                    mise: res.mise,
                    failures: res.failures,
                    seed: d.seed,
                });
            }
        }
    }
    Ok(rows)
}

const HEADER: [&str; 10] = [
    "r",
    "sigma",
    "error",
    "n",
    "m",
    "estimator",
    "tau",
    "mise",
    "failures",
    "seed",
];

fn cells(row: &TableRow) -> [String; 10] {
    [
        row.r.clone(),
        row.sigma.clone(),
        row.error.clone(),
        row.n.to_string(),
        row.m.to_string(),
        row.estimator.clone(),
        crate::io::fmt_f64(row.tau),
        format!("{:.6}", row.mise),
        row.failures.to_string(),
        row.seed.to_string(),
    ]
}

pub fn write_table_csv<W: Write>(rows: &[TableRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(cells(r))?;
    }
    w.flush()
}

/// Aligned Markdown table.
pub fn table_markdown(rows: &[TableRow]) -> String {
    let body: Vec<[String; 10]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> = (0..HEADER.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([HEADER[c].len()])
                .max()
                .unwrap_or(3)
                .max(3)
        })
        .collect();
    let line = |vals: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = vals
            .zip(&widths)
            .map(|(v, w)| format!(" {v:<w$} "))
            .collect();
        format!("|{}|\n", parts.join("|"))
    };
    let mut s = line(&mut HEADER.iter().copied());
    let rule: Vec<String> = widths
        .iter()
        .map(|w| format!("-{}-", "-".repeat(*w)))
        .collect();
    s.push_str(&format!("|{}|\n", rule.join("|")));
    for r in &body {
        s.push_str(&line(&mut r.iter().map(String::as_str)));
    }
    s
}

/// Estimator entry of an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimator {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: EstimatorSpec,
}

impl CurveEstimator for NamedEstimator {
    fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.spec.name())
    }

    fn estimate(
        &self,
        sample: &PairedSample,
        taus: &[f64],
        grid: &[f64],
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        self.spec.estimate(sample, taus, grid, seed)
    }
}

fn default_m() -> usize {
    500
}

/// JSON experiment matrix: the Cartesian product of `r`, `sigma`, `errors`
/// and `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub r: Vec<RId>,
    pub sigma: Vec<SigmaId>,
    pub errors: Vec<ErrorDist>,
    pub n: Vec<usize>,
    #[serde(default = "default_m")]
    pub m: usize,
    pub taus: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    pub estimators: Vec<NamedEstimator>,
}

impl ExperimentFile {
    /// Designs in row-major order over `(errors, sigma, n, r)`. Cell `i`
    /// receives seed `derive_seed(seed, i)`; `seed_override` replaces the
    /// file seed.
    pub fn designs(&self, seed_override: Option<u64>) -> Vec<SimDesign> {
        let seed = seed_override.unwrap_or(self.seed);
        let mut out = Vec::new();
        for &error_id in &self.errors {
            for &sigma_id in &self.sigma {
                for &n in &self.n {
                    for &r_id in &self.r {
                        let i = out.len() as u64;
                        out.push(SimDesign {
                            r_id,
                            sigma_id,
                            error_id,
                            n,
                            m: self.m,
                            taus: self.taus.clone(),
                            seed: rng::derive_seed(seed, i),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn run(&self, seed_override: Option<u64>) -> Result<Vec<TableRow>> {
        let designs = self.designs(seed_override);
        for d in &designs {
            d.validate()?;
        }
        let ests: Vec<&dyn CurveEstimator> = self
            .estimators
            .iter()
            .map(|e| e as &dyn CurveEstimator)
            .collect();
        run_table(&designs, &ests)
    }
}
