//! Bandwidth selection for the `tau_c` threshold curve.
//!
//! The default selector minimises a bootstrap estimate of the integrated
//! squared error between a pilot curve (bandwidth `h0`, original sample) and
//! curves refitted on with-replacement resamples. Leave-one-out
//! cross-validation on the check loss is available as an alternative.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::quantreg::{fit_at_points, trapezoid, uniform_grid, Kernel, PairedSample, WindowBuf};
use crate::rng;

/// How bootstrap samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapStrategy {
    /// Resample the `(x, y)` pairs with replacement.
    #[default]
    Direct,
    /// Keep the covariates; draw `U ~ U(0,1)` per point and use a pilot
    /// residual above `tau_c` or a local linear quantile at level `U` below.
    Residual,
}

/// Inputs of the bootstrap selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub h_grid: Vec<f64>,
    pub h0: f64,
    pub b: usize,
    pub integration_grid: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub strategy: BootstrapStrategy,
}

/// Pilot bandwidth `0.9 · (x range) · n^{-1/5}`.
pub fn default_h0(sample: &PairedSample) -> f64 {
    let (lo, hi) = sample.x_range();
    0.9 * (hi - lo) * (sample.len() as f64).powf(-0.2)
}

/// `points` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

impl BandwidthPlan {
    /// Defaults: `h0` from [`default_h0`], 15 log-spaced candidates on
    /// `[h0/4, 4 h0]`, `B = 100`, 101-point integration grid over the data
    /// range.
    pub fn default_for(sample: &PairedSample, seed: u64) -> Self {
        Self::with_sizes(sample, seed, 100, 15, 101)
    }

    pub fn with_sizes(
        sample: &PairedSample,
        seed: u64,
        b: usize,
        grid_points: usize,
        integration_points: usize,
    ) -> Self {
        let h0 = default_h0(sample);
        let (lo, hi) = sample.x_range();
        Self {
            h_grid: log_grid(h0 / 4.0, 4.0 * h0, grid_points),
            h0,
            b,
            integration_grid: uniform_grid(lo, hi, integration_points),
            seed,
            strategy: BootstrapStrategy::Direct,
        }
    }

    fn validate(&self, sample: &PairedSample) -> Result<()> {
        if self.h_grid.is_empty() || self.h_grid.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Domain(
                "h_grid must be a nonempty list of positive bandwidths".into(),
            ));
        }
        if self.h_grid.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Domain("h_grid must be sorted".into()));
        }
        if !(self.h0 > 0.0) || !self.h0.is_finite() {
            return Err(Error::Domain("h0 must be positive".into()));
        }
        if self.b == 0 {
            return Err(Error::Domain("B must be positive".into()));
        }
        let (lo, hi) = sample.x_range();
        let g = &self.integration_grid;
        if g.len() < 2 || g.windows(2).any(|w| !(w[0] < w[1])) || g[0] < lo || g[g.len() - 1] > hi {
            return Err(Error::Domain(
                "integration grid must be strictly increasing with at least two points inside the data range".into(),
            ));
        }
        Ok(())
    }
}

/// Per-candidate scores of a bandwidth search.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthScores {
    pub h_grid: Vec<f64>,
    /// Mean score per candidate (`+∞` when any cell failed).
    pub mean: Vec<f64>,
    /// Standard error of the mean across bootstrap replications.
    pub se: Vec<f64>,
    /// Raw cells, indexed `[j][h]`; empty for cross-validation.
    pub cells: Vec<Vec<f64>>,
}

impl BandwidthScores {
    /// Minimising candidate, ties toward the larger bandwidth.
    pub fn argmin(&self) -> Result<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (&h, &s) in self.h_grid.iter().zip(&self.mean) {
            if !s.is_finite() {
                continue;
            }
            match best {
                Some((_, bs)) if s > bs => {}
                _ => best = Some((h, s)),
            }
        }
        best.map(|(h, _)| h)
            .ok_or_else(|| Error::Domain("no admissible bandwidth in the candidate grid".into()))
    }

    /// Writes `h,mean_S,se_S` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "mean_S", "se_S"])?;
        for i in 0..self.h_grid.len() {
            w.write_record([
                crate::io::fmt_f64(self.h_grid[i]),
                crate::io::fmt_f64(self.mean[i]),
                crate::io::fmt_f64(self.se[i]),
            ])?;
        }
        w.flush()
    }
}

/// Bootstrap bandwidth: the candidate minimising the average integrated
/// squared distance to the pilot curve.
pub fn bootstrap_bandwidth(
    sample: &PairedSample,
    tau_c: f64,
    kernel: Kernel,
    plan: &BandwidthPlan,
) -> Result<f64> {
    bootstrap_scores(sample, tau_c, kernel, plan)?.argmin()
}

/// Full score table of the bootstrap selector.
pub fn bootstrap_scores(
    sample: &PairedSample,
    tau_c: f64,
    kernel: Kernel,
    plan: &BandwidthPlan,
) -> Result<BandwidthScores> {
    check_level(tau_c, "tau_c")?;
    plan.validate(sample)?;
    let grid = &plan.integration_grid;
    let pilot = pilot_curve(sample, tau_c, kernel, plan.h0, grid)?;
    let n = sample.len();
    let cells: Vec<Vec<f64>> = match plan.strategy {
        BootstrapStrategy::Direct => (0..plan.b)
            .into_par_iter()
            .map(|j| {
                let counts = resample_counts(n, plan.seed, j as u64);
                score_row(
                    sample.xs(),
                    sample.ys(),
                    Some(&counts),
                    tau_c,
                    kernel,
                    &plan.h_grid,
                    grid,
                    &pilot,
                )
            })
            .collect(),
        BootstrapStrategy::Residual => {
            let fitted = fit_at_points(
                sample.xs(),
                sample.ys(),
                None,
                tau_c,
                plan.h0,
                kernel,
                sample.xs(),
            )
            .into_iter()
            .map(|r| r.map(|f| f.alpha))
            .collect::<Result<Vec<f64>>>()?;
            let positive: Vec<f64> = sample
                .ys()
                .iter()
                .zip(&fitted)
                .map(|(y, f)| y - f)
                .filter(|e| *e > 0.0)
                .collect();
            if positive.is_empty() {
                return Err(Error::Domain(
                    "residual bootstrap needs at least one positive pilot residual".into(),
                ));
            }
            (0..plan.b)
                .into_par_iter()
                .map(|j| {
                    let ys = residual_resample(
                        sample, &fitted, &positive, tau_c, kernel, plan.h0, plan.seed, j as u64,
                    );
                    score_row(
                        sample.xs(),
                        &ys,
                        None,
                        tau_c,
                        kernel,
                        &plan.h_grid,
                        grid,
                        &pilot,
                    )
                })
                .collect()
        }
    };
    Ok(summarise(plan.h_grid.clone(), cells))
}

/// Bootstrap scores where resample `j` is given as per-observation counts.
pub fn bootstrap_scores_with_counts(
    sample: &PairedSample,
    tau_c: f64,
    kernel: Kernel,
    plan: &BandwidthPlan,
    counts: impl Fn(usize) -> Vec<f64> + Sync,
) -> Result<BandwidthScores> {
    check_level(tau_c, "tau_c")?;
    plan.validate(sample)?;
    let grid = &plan.integration_grid;
    let pilot = pilot_curve(sample, tau_c, kernel, plan.h0, grid)?;
    let cells = (0..plan.b)
        .into_par_iter()
        .map(|j| {
            let c = counts(j);
            score_row(
                sample.xs(),
                sample.ys(),
                Some(&c),
                tau_c,
                kernel,
                &plan.h_grid,
                grid,
                &pilot,
            )
        })
        .collect();
    Ok(summarise(plan.h_grid.clone(), cells))
}

/// Multiplicities of a with-replacement resample of size `n` drawn from
/// stream `j`.
pub fn resample_counts(n: usize, seed: u64, j: u64) -> Vec<f64> {
    let mut g = rng::stream(seed, j);
    let mut counts = vec![0.0; n];
    for _ in 0..n {
        counts[g.random_range(0..n)] += 1.0;
    }
    counts
}

fn pilot_curve(
    sample: &PairedSample,
    tau_c: f64,
    kernel: Kernel,
    h0: f64,
    grid: &[f64],
) -> Result<Vec<f64>> {
    fit_at_points(sample.xs(), sample.ys(), None, tau_c, h0, kernel, grid)
        .into_iter()
        .map(|r| r.map(|f| f.alpha))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn score_row(
    xs: &[f64],
    ys: &[f64],
    mult: Option<&[f64]>,
    tau_c: f64,
    kernel: Kernel,
    h_grid: &[f64],
    grid: &[f64],
    pilot: &[f64],
) -> Vec<f64> {
    h_grid
        .iter()
        .map(|&h| {
            let fits: Result<Vec<f64>> = fit_at_points(xs, ys, mult, tau_c, h, kernel, grid)
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.map(|f| (f.alpha - pilot[i]).powi(2)))
                .collect();
            match fits {
                Ok(sq) => trapezoid(grid, &sq),
                Err(_) => f64::INFINITY,
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn residual_resample(
    sample: &PairedSample,
    fitted: &[f64],
    positive: &[f64],
    tau_c: f64,
    kernel: Kernel,
    h0: f64,
    seed: u64,
    j: u64,
) -> Vec<f64> {
    let mut g = rng::stream(seed, j);
    let mut buf = WindowBuf::default();
    sample
        .xs()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let u = rng::open01(&mut g);
            if u >= tau_c {
                fitted[i] + positive[g.random_range(0..positive.len())]
            } else {
                buf.fill(sample.xs(), sample.ys(), None, x, h0, kernel);
                buf.solve(u, x, None).map(|f| f.alpha).unwrap_or(fitted[i])
            }
        })
        .collect()
}

fn summarise(h_grid: Vec<f64>, cells: Vec<Vec<f64>>) -> BandwidthScores {
    let b = cells.len() as f64;
    let mut mean = Vec::with_capacity(h_grid.len());
    let mut se = Vec::with_capacity(h_grid.len());
    for hi in 0..h_grid.len() {
        let col: Vec<f64> = cells.iter().map(|row| row[hi]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            mean.push(f64::INFINITY);
            se.push(f64::INFINITY);
            continue;
        }
        let m = col.iter().sum::<f64>() / b;
        let var = if cells.len() > 1 {
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1.0)
        } else {
            0.0
        };
        mean.push(m);
        se.push((var / b).sqrt());
    }
    BandwidthScores {
        h_grid,
        mean,
        se,
        cells,
    }
}

/// Leave-one-out cross-validation on the `tau_c` check loss.
pub fn loocv_bandwidth(
    sample: &PairedSample,
    tau_c: f64,
    kernel: Kernel,
    h_grid: &[f64],
) -> Result<f64> {
    loocv_scores(sample, tau_c, kernel, h_grid)?.argmin()
}

pub fn loocv_scores(
    sample: &PairedSample,
    tau_c: f64,
    kernel: Kernel,
    h_grid: &[f64],
) -> Result<BandwidthScores> {
    check_level(tau_c, "tau_c")?;
    if sample.len() < 3 {
        return Err(Error::Domain(
            "leave-one-out needs at least three observations".into(),
        ));
    }
    if h_grid.is_empty() || h_grid.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Domain(
            "h_grid must be a nonempty list of positive bandwidths".into(),
        ));
    }
    let (xs, ys) = (sample.xs(), sample.ys());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mean: Vec<f64> = h_grid
        .par_iter()
        .map(|&h| {
            let mut mult = vec![1.0; xs.len()];
            let mut buf = WindowBuf::default();
            let mut last_beta = None;
            let mut total = 0.0;
            for &i in &order {
                mult[i] = 0.0;
                buf.fill(xs, ys, Some(&mult), xs[i], h, kernel);
                mult[i] = 1.0;
                match buf.solve(tau_c, xs[i], last_beta) {
                    Ok(f) => {
                        last_beta = Some(f.beta);
                        total += crate::quantreg::check_loss_unchecked(ys[i] - f.alpha, tau_c);
                    }
                    Err(_) => return f64::INFINITY,
                }
            }
            total
        })
        .collect();
    Ok(BandwidthScores {
        h_grid: h_grid.to_vec(),
        se: vec![0.0; mean.len()],
        mean,
        cells: Vec::new(),
    })
}

/// Bandwidth choice used by the fitting pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthChoice {
    Fixed(f64),
    /// `c · n^{-1/4}` (covariate range scaled).
    Rule {
        c: f64,
    },
    Bootstrap(BootstrapSettings),
    Loocv(LoocvSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoocvSettings {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Explicit candidates; replaces the log-spaced default grid.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

impl Default for LoocvSettings {
    fn default() -> Self {
        Self {
            grid_points: default_grid_points(),
            grid: None,
        }
    }
}

impl LoocvSettings {
    pub fn h_grid(&self, sample: &PairedSample) -> Vec<f64> {
        match &self.grid {
            Some(g) => g.clone(),
            None => {
                let h0 = default_h0(sample);
                log_grid(h0 / 4.0, 4.0 * h0, self.grid_points)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_integration_points")]
    pub integration_points: usize,
    #[serde(default)]
    pub h0: Option<f64>,
    #[serde(default)]
    pub strategy: BootstrapStrategy,
    /// Explicit candidates; replaces the log-spaced default grid.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

fn default_b() -> usize {
    100
}
fn default_grid_points() -> usize {
    15
}
fn default_integration_points() -> usize {
    101
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            b: default_b(),
            grid_points: default_grid_points(),
            integration_points: default_integration_points(),
            h0: None,
            strategy: BootstrapStrategy::Direct,
            grid: None,
        }
    }
}

impl BootstrapSettings {
    pub fn plan(&self, sample: &PairedSample, seed: u64) -> BandwidthPlan {
        let mut plan = BandwidthPlan::with_sizes(
            sample,
            seed,
            self.b,
            self.grid_points,
            self.integration_points,
        );
        if let Some(h0) = self.h0 {
            plan.h0 = h0;
            plan.h_grid = log_grid(h0 / 4.0, 4.0 * h0, self.grid_points);
        }
        if let Some(g) = &self.grid {
            plan.h_grid = g.clone();
        }
        plan.strategy = self.strategy;
        plan
    }
}

impl Default for BandwidthChoice {
    fn default() -> Self {
        BandwidthChoice::Bootstrap(BootstrapSettings::default())
    }
}

impl BandwidthChoice {
    /// Candidate scores behind the choice; `None` for fixed rules.
    pub fn scores(
        &self,
        sample: &PairedSample,
        tau_c: f64,
        kernel: Kernel,
        seed: u64,
    ) -> Result<Option<BandwidthScores>> {
        match self {
            BandwidthChoice::Fixed(_) | BandwidthChoice::Rule { .. } => Ok(None),
            BandwidthChoice::Bootstrap(s) => {
                bootstrap_scores(sample, tau_c, kernel, &s.plan(sample, seed)).map(Some)
            }
            BandwidthChoice::Loocv(s) => {
                loocv_scores(sample, tau_c, kernel, &s.h_grid(sample)).map(Some)
            }
        }
    }

    pub fn select(
        &self,
        sample: &PairedSample,
        tau_c: f64,
        kernel: Kernel,
        seed: u64,
    ) -> Result<f64> {
        match self {
            BandwidthChoice::Fixed(h) => Ok(*h),
            BandwidthChoice::Rule { c } => {
                let (lo, hi) = sample.x_range();
                Ok(c * (hi - lo) * (sample.len() as f64).powf(-0.25))
            }
            BandwidthChoice::Bootstrap(s) => {
                bootstrap_bandwidth(sample, tau_c, kernel, &s.plan(sample, seed))
            }
            BandwidthChoice::Loocv(s) => loocv_bandwidth(sample, tau_c, kernel, &s.h_grid(sample)),
        }
    }
}
