//! Forecast verification: quantile verification score, its skill score
//! against climatology, quantile reliability diagrams and leave-one-group-out
//! cross-validation.

use std::collections::BTreeSet;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::io::{fmt_f64, Dataset};
use crate::model::FitSettings;
use crate::quantreg::{check_loss_unchecked, PairedSample};
use crate::rng;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Domain(format!(
            "length mismatch: {a} observations, {b} forecasts"
        )));
    }
    if a == 0 {
        return Err(Error::Domain("at least one observation is required".into()));
    }
    Ok(())
}

/// `Σ ρ_τ(yᵢ − q̂ᵢ)`.
pub fn qvs(obs: &[f64], forecasts: &[f64], tau: f64) -> Result<f64> {
    check_level(tau, "tau")?;
    check_lengths(obs.len(), forecasts.len())?;
    Ok(obs
        .iter()
        .zip(forecasts)
        .map(|(y, q)| check_loss_unchecked(y - q, tau))
        .sum())
}

/// `1 − QVS / QVS_ref`.
pub fn skill(score: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::UndefinedSkill);
    }
    Ok(1.0 - score / reference)
}

pub fn qvss(obs: &[f64], forecasts: &[f64], reference_forecasts: &[f64], tau: f64) -> Result<f64> {
    check_lengths(obs.len(), reference_forecasts.len())?;
    skill(
        qvs(obs, forecasts, tau)?,
        qvs(obs, reference_forecasts, tau)?,
    )
}

/// Lower order statistic at `⌈n τ⌉` (1-based).
pub fn empirical_quantile(obs: &[f64], tau: f64) -> Result<f64> {
    check_level(tau, "tau")?;
    if obs.is_empty() {
        return Err(Error::Domain(
            "empirical quantile of an empty sample".into(),
        ));
    }
    let mut v = obs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((v.len() as f64 * tau).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}

/// Climatological forecast: the empirical `tau`-quantile of `obs`.
pub fn climatology_reference(obs: &[f64], tau: f64) -> Result<f64> {
    empirical_quantile(obs, tau)
}

/// One bin of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPoint {
    pub mean_forecast: f64,
    pub empirical_quantile: f64,
    pub count: usize,
}

/// Equal-count bins over the sorted forecasts; the remainder goes to the
/// lowest bins.
pub fn reliability_diagram(
    obs: &[f64],
    forecasts: &[f64],
    tau: f64,
    n_bins: usize,
) -> Result<Vec<ReliabilityPoint>> {
    check_level(tau, "tau")?;
    check_lengths(obs.len(), forecasts.len())?;
    let n = obs.len();
    if n_bins == 0 || n_bins > n {
        return Err(Error::Domain(format!(
            "n_bins must lie in 1..={n}, got {n_bins}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| forecasts[a].total_cmp(&forecasts[b]).then(a.cmp(&b)));
    let (base, extra) = (n / n_bins, n % n_bins);
    let mut out = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let size = base + usize::from(b < extra);
        let idx = &order[start..start + size];
        start += size;
        let mean = idx.iter().map(|&i| forecasts[i]).sum::<f64>() / size as f64;
        let bin_obs: Vec<f64> = idx.iter().map(|&i| obs[i]).collect();
        out.push(ReliabilityPoint {
            mean_forecast: mean,
            empirical_quantile: empirical_quantile(&bin_obs, tau)?,
            count: size,
        });
    }
    Ok(out)
}

/// Comparison operator of a [`RowFilter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterColumn {
    X,
    Z,
}

/// Conditioning on a covariate such as `x>5`, applied to scored rows and to
/// the climatological reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RowFilter {
    pub column: FilterColumn,
    pub op: CmpOp,
    pub value: f64,
}

impl RowFilter {
    pub fn keep(&self, x: f64, z: Option<f64>) -> bool {
        let v = match self.column {
            FilterColumn::X => x,
            FilterColumn::Z => match z {
                Some(z) => z,
                None => return false,
            },
        };
        match self.op {
            CmpOp::Gt => v > self.value,
            CmpOp::Ge => v >= self.value,
            CmpOp::Lt => v < self.value,
            CmpOp::Le => v <= self.value,
        }
    }
}

impl FromStr for RowFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Domain(format!("cannot parse filter {s:?}; expected e.g. \"x>5\""));
        let column = match t.chars().next() {
            Some('x') => FilterColumn::X,
            Some('z') => FilterColumn::Z,
            _ => return Err(bad()),
        };
        let rest = &t[1..];
        let (op, num) = if let Some(r) = rest.strip_prefix(">=") {
            (CmpOp::Ge, r)
        } else if let Some(r) = rest.strip_prefix("<=") {
            (CmpOp::Le, r)
        } else if let Some(r) = rest.strip_prefix('>') {
            (CmpOp::Gt, r)
        } else if let Some(r) = rest.strip_prefix('<') {
            (CmpOp::Lt, r)
        } else {
            return Err(bad());
        };
        let value: f64 = num.parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        Ok(RowFilter { column, op, value })
    }
}

impl TryFrom<String> for RowFilter {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RowFilter> for String {
    fn from(f: RowFilter) -> String {
        let c = match f.column {
            FilterColumn::X => "x",
            FilterColumn::Z => "z",
        };
        let op = match f.op {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
        };
        format!("{c}{op}{}", fmt_f64(f.value))
    }
}

/// Scores of one held-out group at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub group_key: String,
    pub tau: f64,
    pub n: usize,
    pub qvs: f64,
    pub qvs_reference: f64,
    /// NaN when the reference score is zero.
    pub qvss: f64,
    pub reliability_points: Vec<ReliabilityPoint>,
}

/// Cross-validation output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CvOutput {
    pub reports: Vec<VerificationReport>,
    /// Groups left without scored rows, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Options of [`grouped_cv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub taus: Vec<f64>,
    pub filter: Option<RowFilter>,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            taus: vec![0.95],
            filter: None,
            n_bins: 10,
            seed: 0,
        }
    }
}

/// Distinct group keys in sorted order.
pub fn group_keys(data: &Dataset) -> Vec<String> {
    data.groups
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Leave-one-group-out cross-validation. Fold `i` (groups in sorted order)
/// uses seed `derive_seed(seed, i)` for any randomness in the fit.
pub fn grouped_cv(data: &Dataset, settings: &FitSettings, opts: &CvOptions) -> Result<CvOutput> {
    let keys = group_keys(data);
    if keys.len() < 2 {
        return Err(Error::Domain(format!(
            "cross-validation needs at least two groups, found {}",
            keys.len()
        )));
    }
    if opts.taus.is_empty() {
        return Err(Error::Domain("at least one level is required".into()));
    }
    for &t in &opts.taus {
        check_level(t, "tau")?;
    }
    if opts.n_bins == 0 {
        return Err(Error::Domain("n_bins must be positive".into()));
    }
    let folds: Vec<Result<FoldResult>> = keys
        .par_iter()
        .enumerate()
        .map(|(i, key)| {
            run_fold(
                data,
                key,
                settings,
                opts,
                rng::derive_seed(opts.seed, i as u64),
            )
        })
        .collect();
    let mut out = CvOutput::default();
    for (key, fold) in keys.iter().zip(folds) {
        match fold? {
            FoldResult::Reports(r) => out.reports.extend(r),
            FoldResult::Skipped(reason) => out.skipped.push((key.clone(), reason)),
        }
    }
    Ok(out)
}

enum FoldResult {
    Reports(Vec<VerificationReport>),
    Skipped(String),
}

fn run_fold(
    data: &Dataset,
    key: &str,
    settings: &FitSettings,
    opts: &CvOptions,
    seed: u64,
) -> Result<FoldResult> {
    let z_at = |i: usize| data.zs.as_ref().map(|z| z[i]);
    let keep = |i: usize| opts.filter.is_none_or(|f| f.keep(data.xs[i], z_at(i)));
    let train: Vec<usize> = (0..data.len()).filter(|&i| data.groups[i] != key).collect();
    let test: Vec<usize> = (0..data.len())
        .filter(|&i| data.groups[i] == key && keep(i))
        .collect();
    if test.is_empty() {
        return Ok(FoldResult::Skipped("no rows left after filtering".into()));
    }
    let ref_obs: Vec<f64> = train
        .iter()
        .filter(|&&i| keep(i))
        .map(|&i| data.ys[i])
        .collect();
    if ref_obs.is_empty() {
        return Ok(FoldResult::Skipped(
            "no training rows left for the reference after filtering".into(),
        ));
    }
    let sample = PairedSample::new(
        train.iter().map(|&i| data.xs[i]).collect(),
        train.iter().map(|&i| data.ys[i]).collect(),
    )?;
    let train_z: Option<Vec<f64>> = data
        .zs
        .as_ref()
        .map(|z| train.iter().map(|&i| z[i]).collect());
    let model = settings.fit(&sample, train_z.as_deref(), seed)?;
    let test_x: Vec<f64> = test.iter().map(|&i| data.xs[i]).collect();
    let test_y: Vec<f64> = test.iter().map(|&i| data.ys[i]).collect();
    let test_z: Option<Vec<f64>> = data
        .zs
        .as_ref()
        .map(|z| test.iter().map(|&i| z[i]).collect());
    let mut reports = Vec::with_capacity(opts.taus.len());
    for &tau in &opts.taus {
        let fc = model.forecast_many(tau, &test_x, test_z.as_deref())?;
        let reference = vec![climatology_reference(&ref_obs, tau)?; test_y.len()];
        let score = qvs(&test_y, &fc, tau)?;
        let score_ref = qvs(&test_y, &reference, tau)?;
        reports.push(VerificationReport {
            group_key: key.to_string(),
            tau,
            n: test_y.len(),
            qvs: score,
            qvs_reference: score_ref,
            qvss: skill(score, score_ref).unwrap_or(f64::NAN),
            reliability_points: reliability_diagram(
                &test_y,
                &fc,
                tau,
                opts.n_bins.min(test_y.len()),
            )?,
        });
    }
    Ok(FoldResult::Reports(reports))
}

/// Mean skill over the folds at `tau`, ignoring undefined folds.
pub fn mean_qvss(reports: &[VerificationReport], tau: f64) -> f64 {
    let v: Vec<f64> = reports
        .iter()
        .filter(|r| r.tau == tau && r.qvss.is_finite())
        .map(|r| r.qvss)
        .collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `group,tau,qvs,qvs_ref,qvss` rows.
pub fn write_report_csv<W: Write>(reports: &[VerificationReport], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "tau", "qvs", "qvs_ref", "qvss"])?;
    for r in reports {
        w.write_record([
            r.group_key.clone(),
            fmt_f64(r.tau),
            fmt_f64(r.qvs),
            fmt_f64(r.qvs_reference),
            fmt_f64(r.qvss),
        ])?;
    }
    w.flush()
}

/// `group,tau,bin,mean_forecast,empirical_quantile,count` rows.
pub fn write_reliability_csv<W: Write>(
    reports: &[VerificationReport],
    out: W,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group",
        "tau",
        "bin",
        "mean_forecast",
        "empirical_quantile",
        "count",
    ])?;
    for r in reports {
        for (b, p) in r.reliability_points.iter().enumerate() {
            w.write_record([
                r.group_key.clone(),
                fmt_f64(r.tau),
                b.to_string(),
                fmt_f64(p.mean_forecast),
                fmt_f64(p.empirical_quantile),
                p.count.to_string(),
            ])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests;
