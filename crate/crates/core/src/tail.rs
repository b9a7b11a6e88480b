//! Residual tail estimation: Hill and Weissman estimators, the composed
//! common-shape-tail (CST) predictor and the linear-quantile baseline.

use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::quantreg::{
    check_bandwidth, fit_at_points, local_linear_quantile, weighted_qr, Design, Kernel,
    PairedSample,
};

/// Rule for the number of tail observations `k` given the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    /// `k = ⌊4 n^{1/4}⌋`, the CST default.
    NQuarter,
    /// `k = ⌊4.5 n^{1/3}⌋`, the linear-baseline default.
    NThirdBaseline,
    Fixed(usize),
}

impl KRule {
    pub fn resolve(self, n: usize) -> usize {
        let nf = n as f64;
        match self {
            // sqrt∘sqrt and cbrt are exact on perfect powers, unlike powf.
            KRule::NQuarter => (4.0 * nf.sqrt().sqrt()).floor() as usize,
            KRule::NThirdBaseline => (4.5 * nf.cbrt()).floor() as usize,
            KRule::Fixed(k) => k,
        }
    }
}

/// `yᵢ − rhat(xᵢ)` in input order.
pub fn residuals(sample: &PairedSample, mut rhat: impl FnMut(f64) -> f64) -> Result<Vec<f64>> {
    sample
        .xs()
        .iter()
        .zip(sample.ys())
        .enumerate()
        .map(|(index, (&x, &y))| {
            let r = rhat(x);
            if r.is_finite() {
                Ok(y - r)
            } else {
                Err(Error::Evaluation { index, x })
            }
        })
        .collect()
}

/// Hill fit on the top `k` order statistics of a residual sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub k: usize,
    /// The order statistic `e_{n−k,n}`.
    pub threshold: f64,
    pub gamma_hat: f64,
    /// `log e_{n−i+1,n} − log e_{n−k,n}` for `i = 1..=k`.
    pub sorted_exceedance_logs: Vec<f64>,
}

/// Hill estimator of the extreme value index from the `k` largest residuals.
///
/// Order statistics use an ascending sort with ties broken by input index;
/// the threshold is the `(n−k)`-th smallest value.
pub fn hill(residuals: &[f64], k: usize) -> Result<TailFit> {
    let n = residuals.len();
    if k == 0 || k >= n {
        return Err(Error::Domain(format!(
            "hill needs 0 < k < n, got k = {k}, n = {n}"
        )));
    }
    if residuals.iter().any(|e| !e.is_finite()) {
        return Err(Error::Domain("residuals must be finite".into()));
    }
    let mut sorted = residuals.to_vec();
    // Stable sort keeps equal values in input order.
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[n - k - 1];
    if !(threshold > 0.0) {
        return Err(Error::NonPositiveThreshold { threshold, k, n });
    }
    let log_t = threshold.ln();
    let logs: Vec<f64> = (1..=k).map(|i| sorted[n - i].ln() - log_t).collect();
    let gamma_hat = (logs.iter().sum::<f64>() / k as f64).max(0.0);
    Ok(TailFit {
        k,
        threshold,
        gamma_hat,
        sorted_exceedance_logs: logs,
    })
}

/// Weissman extrapolation `e_{n−k,n} (k / (n (1 − τ)))^γ̂`.
pub fn weissman_quantile(tail: &TailFit, n: usize, tau_n: f64) -> Result<f64> {
    check_level(tau_n, "tau_n")?;
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let ratio = tail.k as f64 / (n as f64 * (1.0 - tau_n));
    Ok(tail.threshold * ratio.powf(tail.gamma_hat))
}

/// Fitted CST model: the `tau_c` threshold curve plus a residual tail fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CstModel {
    pub training: PairedSample,
    pub tau_c: f64,
    pub h: f64,
    pub kernel: Kernel,
    pub tail: TailFit,
    pub residuals: Vec<f64>,
}

/// Two-step CST fit: local linear `tau_c` curve, residuals, Hill on the top
/// `k` residuals.
pub fn fit_cst(
    sample: &PairedSample,
    tau_c: f64,
    h: f64,
    kernel: Kernel,
    k: usize,
) -> Result<CstModel> {
    check_level(tau_c, "tau_c")?;
    check_bandwidth(h)?;
    let fits = fit_at_points(
        sample.xs(),
        sample.ys(),
        None,
        tau_c,
        h,
        kernel,
        sample.xs(),
    );
    let mut rhat = Vec::with_capacity(sample.len());
    for f in fits {
        rhat.push(f?.alpha);
    }
    let mut it = rhat.iter();
    let residuals = residuals(sample, |_| *it.next().expect("one fit per point"))?;
    let tail = hill(&residuals, k)?;
    Ok(CstModel {
        training: sample.clone(),
        tau_c,
        h,
        kernel,
        tail,
        residuals,
    })
}

impl CstModel {
    pub fn n(&self) -> usize {
        self.training.len()
    }

    /// `r̂(x)`, refitted locally at `x`.
    pub fn rhat(&self, x: f64) -> Result<f64> {
        Ok(local_linear_quantile(&self.training, self.tau_c, x, self.h, self.kernel)?.alpha)
    }

    /// `r̂` at many points (warm-started sweep, same estimator).
    pub fn rhat_many(&self, xs: &[f64]) -> Result<Vec<f64>> {
        fit_at_points(
            self.training.xs(),
            self.training.ys(),
            None,
            self.tau_c,
            self.h,
            self.kernel,
            xs,
        )
        .into_iter()
        .map(|r| r.map(|f| f.alpha))
        .collect()
    }

    /// Covariate-free tail quantile `Q̂_ε(τ)`.
    pub fn tail_quantile(&self, tau: f64) -> Result<f64> {
        if tau < self.tau_c {
            return Err(Error::BelowThresholdLevel {
                tau,
                tau_c: self.tau_c,
            });
        }
        weissman_quantile(&self.tail, self.n(), tau)
    }

    /// `Q̂(τ | x) = r̂(x) + Q̂_ε(τ)` for `τ ≥ tau_c`.
    pub fn predict(&self, tau: f64, x: f64) -> Result<f64> {
        let q = self.tail_quantile(tau)?;
        Ok(self.rhat(x)? + q)
    }

    /// Local linear estimate at levels below `tau_c`, CST above.
    pub fn quantile_or_local(&self, tau: f64, x: f64) -> Result<f64> {
        check_level(tau, "tau")?;
        if tau >= self.tau_c {
            self.predict(tau, x)
        } else {
            Ok(local_linear_quantile(&self.training, tau, x, self.h, self.kernel)?.alpha)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_level(self.tau_c, "tau_c")?;
        check_bandwidth(self.h)?;
        if self.residuals.len() != self.training.len() {
            return Err(Error::Domain(
                "residuals length differs from training length".into(),
            ));
        }
        if self.tail.k == 0 || self.tail.k >= self.training.len() {
            return Err(Error::Domain("tail k out of range".into()));
        }
        if !(self.tail.threshold > 0.0) || !(self.tail.gamma_hat >= 0.0) {
            return Err(Error::Domain(
                "tail threshold must be positive and gamma_hat nonnegative".into(),
            ));
        }
        if self.tail.sorted_exceedance_logs.len() != self.tail.k {
            return Err(Error::Domain("exceedance logs must have length k".into()));
        }
        Ok(())
    }
}

/// Free-function form of [`CstModel::predict`].
pub fn predict_cst(model: &CstModel, tau: f64, x: f64) -> Result<f64> {
    model.predict(tau, x)
}

/// Where the baseline's constant extreme value index is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineAnchor {
    /// Fitted quantile lines evaluated at the covariate mean.
    #[default]
    Mean,
    /// Average of the per-observation indices.
    PerPointAverage,
}

/// Linear quantile lines at intermediate levels with a Weissman-type
/// extrapolation from the lowest of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBaselineModel {
    /// `(tau, intercept, slope)`, ascending in `tau`; quantile line
    /// `intercept + slope · x`.
    pub coeffs_per_tau: Vec<(f64, f64, f64)>,
    pub k: usize,
    pub n: usize,
    pub gamma_hat: f64,
    pub tau_grid: Vec<f64>,
    pub anchor: BaselineAnchor,
}

/// Fits lines at `τ_j = (n−j)/n` for `j = k, …, trim` (the `trim` most
/// extreme levels above are dropped) and a constant extreme value index from
/// the log-ratios of the fitted quantiles to the anchor level `(n−k)/n`.
pub fn fit_linear_baseline(
    sample: &PairedSample,
    k: usize,
    trim: usize,
    anchor: BaselineAnchor,
) -> Result<LinearBaselineModel> {
    let n = sample.len();
    if k == 0 || k + trim >= n || trim >= k {
        return Err(Error::Domain(format!(
            "linear baseline needs trim < k and k + trim < n (k = {k}, trim = {trim}, n = {n})"
        )));
    }
    let ones = vec![1.0; n];
    let mut coeffs = Vec::with_capacity(k - trim + 1);
    for j in (trim..=k).rev() {
        let tau = (n - j) as f64 / n as f64;
        let (a, b) = fit_global_line(sample, tau, &ones)?;
        coeffs.push((tau, a, b));
    }
    let tau_grid = coeffs.iter().map(|c| c.0).collect();
    let gamma_at = |x: f64| -> Result<f64> {
        let (tau_a, a0, b0) = coeffs[0];
        let q_anchor = a0 + b0 * x;
        if !(q_anchor > 0.0) {
            return Err(Error::NonPositiveQuantile {
                tau: tau_a,
                value: q_anchor,
            });
        }
        let mut acc = 0.0;
        for &(tau, a, b) in &coeffs[1..] {
            let q = a + b * x;
            if !(q > 0.0) {
                return Err(Error::NonPositiveQuantile { tau, value: q });
            }
            acc += (q / q_anchor).ln();
        }
        Ok(acc / (coeffs.len() - 1) as f64)
    };
    let gamma = match anchor {
        BaselineAnchor::Mean => {
            let mean = sample.xs().iter().sum::<f64>() / n as f64;
            gamma_at(mean)?
        }
        BaselineAnchor::PerPointAverage => {
            let mut acc = 0.0;
            for &x in sample.xs() {
                acc += gamma_at(x)?;
            }
            acc / n as f64
        }
    };
    Ok(LinearBaselineModel {
        coeffs_per_tau: coeffs,
        k,
        n,
        gamma_hat: gamma.max(0.0),
        tau_grid,
        anchor,
    })
}

fn fit_global_line(sample: &PairedSample, tau: f64, w: &[f64]) -> Result<(f64, f64)> {
    let f = weighted_qr(sample, tau, w, Design::InterceptSlopeAbout(0.0))?;
    Ok((f.alpha, f.beta))
}

impl LinearBaselineModel {
    /// Level of the anchor line, `(n − k)/n`.
    pub fn anchor_level(&self) -> f64 {
        self.coeffs_per_tau[0].0
    }

    /// Anchor line scaled by `(k / (n (1 − τ)))^γ̂`, for `τ` at or above the
    /// anchor level.
    pub fn predict(&self, tau: f64, x: f64) -> Result<f64> {
        check_level(tau, "tau")?;
        let (tau_a, a, b) = self.coeffs_per_tau[0];
        if tau < tau_a {
            return Err(Error::BelowThresholdLevel { tau, tau_c: tau_a });
        }
        let q = a + b * x;
        if !(q > 0.0) {
            return Err(Error::NonPositiveQuantile {
                tau: tau_a,
                value: q,
            });
        }
        let ratio = self.k as f64 / (self.n as f64 * (1.0 - tau));
        Ok(q * ratio.powf(self.gamma_hat))
    }

    /// Linear quantile line at any level: the fitted line for levels inside
    /// the grid is not stored, so below the anchor a fresh global fit on
    /// `training` is used.
    pub fn quantile_or_linear(&self, training: &PairedSample, tau: f64, x: f64) -> Result<f64> {
        check_level(tau, "tau")?;
        if tau >= self.anchor_level() {
            return self.predict(tau, x);
        }
        let ones = vec![1.0; training.len()];
        let (a, b) = fit_global_line(training, tau, &ones)?;
        Ok(a + b * x)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs_per_tau.len() < 2 || self.coeffs_per_tau.len() != self.tau_grid.len() {
            return Err(Error::Domain(
                "baseline needs at least two fitted levels".into(),
            ));
        }
        if self.tau_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("tau_grid must be strictly increasing".into()));
        }
        if !(self.gamma_hat >= 0.0) || self.k == 0 || self.k >= self.n {
            return Err(Error::Domain("invalid baseline tail parameters".into()));
        }
        Ok(())
    }
}

/// Free-function form of [`LinearBaselineModel::predict`].
pub fn predict_linear_baseline(model: &LinearBaselineModel, tau: f64, x: f64) -> Result<f64> {
    model.predict(tau, x)
}

#[cfg(test)]
mod tests;
