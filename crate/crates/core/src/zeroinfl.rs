//! Point mass at zero: a logistic model for `P(Y = 0 | z)` composed with a
//! CST model fitted on the strictly positive responses.
//!
//! ```text
//! F(y | x, z) = p₀(z) + (1 − p₀(z)) F⁺(y | x)
//! Q(τ | x, z) = 0                                  if τ ≤ p₀(z)
//!             = Q⁺((τ − p₀(z)) / (1 − p₀(z)) | x)  otherwise
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::quantreg::{local_linear_quantile, Kernel, PairedSample};
use crate::tail::{fit_cst, CstModel};

/// Newton stopping rule: small gradient and small step.
const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;
const STEP_TOL: f64 = 1e-6;

/// Ridge used when none is given.
pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Ridge of the single automatic retry.
pub const RETRY_RIDGE: f64 = 1e-3;
/// Floor on the rescaled level for the local linear fallback.
pub const LEVEL_FLOOR: f64 = 0.01;

/// Meaning of the dry-day covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    /// Number of ensemble members forecasting exactly zero.
    #[default]
    ZeroMemberCount,
    Custom,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Ridge-penalised logistic regression of `is_dry` on `(1, z)` by Newton's
/// method. The penalty `ridge/2 · (a² + b²)` applies to both coefficients.
pub fn fit_logistic(z: &[f64], is_dry: &[bool], ridge: f64) -> Result<(f64, f64)> {
    if z.len() != is_dry.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} covariates, {} labels",
            z.len(),
            is_dry.len()
        )));
    }
    if z.len() < 2 {
        return Err(Error::Domain(
            "logistic fit needs at least two observations".into(),
        ));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!(
            "ridge must be a nonnegative number, got {ridge}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "covariate contains a non-finite value".into(),
        ));
    }
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..MAX_ITER {
        let (mut ga, mut gb) = (-ridge * a, -ridge * b);
        let (mut haa, mut hab, mut hbb) = (ridge, 0.0, ridge);
        for (&zi, &d) in z.iter().zip(is_dry) {
            let p = sigmoid(a + b * zi);
            let r = if d { 1.0 } else { 0.0 } - p;
            ga += r;
            gb += r * zi;
            let v = p * (1.0 - p);
            haa += v;
            hab += v * zi;
            hbb += v * zi * zi;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else if haa > 0.0 {
            // Constant covariate without ridge: only the intercept is identified.
            (ga / haa, 0.0)
        } else {
            break;
        };
        // Under separation the gradient vanishes while the steps do not.
        if ga.hypot(gb) < GRAD_TOL && da.hypot(db) < STEP_TOL * (1.0 + a.hypot(b)) {
            return Ok((a, b));
        }
        a += da;
        b += db;
        if !(a.is_finite() && b.is_finite()) {
            break;
        }
    }
    if ridge == 0.0 {
        Err(Error::SeparationSuspected {
            iterations: MAX_ITER,
        })
    } else if a.is_finite() && b.is_finite() {
        Ok((a, b))
    } else {
        Err(Error::Domain("logistic fit diverged".into()))
    }
}

/// Logistic point mass plus a positive-part CST model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflatedModel {
    pub intercept: f64,
    pub slope: f64,
    pub positive_model: CstModel,
    #[serde(default)]
    pub covariate_kind: CovariateKind,
}

impl ZeroInflatedModel {
    /// `p₀(z)`.
    pub fn p0(&self, z: f64) -> f64 {
        sigmoid(self.intercept + self.slope * z)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intercept.is_finite() && self.slope.is_finite()) {
            return Err(Error::Domain("logistic coefficients must be finite".into()));
        }
        if self
            .positive_model
            .training
            .ys()
            .iter()
            .any(|&y| !(y > 0.0))
        {
            return Err(Error::Domain(
                "positive-part model holds a non-positive response".into(),
            ));
        }
        self.positive_model.validate()
    }
}

/// Settings of [`fit_zero_inflated`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroInflationFit {
    pub tau_c: f64,
    pub h: f64,
    pub kernel: Kernel,
    pub k: usize,
    /// `None` means [`DEFAULT_RIDGE`] with one retry at [`RETRY_RIDGE`].
    pub ridge: Option<f64>,
    pub covariate_kind: CovariateKind,
}

/// Fits `p₀` on all rows and the CST model on rows with `y > 0`.
pub fn fit_zero_inflated(
    sample: &PairedSample,
    z: &[f64],
    settings: &ZeroInflationFit,
) -> Result<ZeroInflatedModel> {
    if z.len() != sample.len() {
        return Err(Error::Domain(format!(
            "{} dry-day covariates for {} observations",
            z.len(),
            sample.len()
        )));
    }
    let dry: Vec<bool> = sample.ys().iter().map(|&y| y <= 0.0).collect();
    let (intercept, slope) = match settings.ridge {
        Some(r) => fit_logistic(z, &dry, r)?,
        None => match fit_logistic(z, &dry, DEFAULT_RIDGE) {
            Err(Error::SeparationSuspected { .. }) | Err(Error::Domain(_)) => {
                fit_logistic(z, &dry, RETRY_RIDGE)?
            }
            other => other?,
        },
    };
    let positive = sample.filter(|_, y| y > 0.0).ok_or_else(|| {
        Error::Domain("no strictly positive responses to fit the positive part".into())
    })?;
    let positive_model = fit_cst(
        &positive,
        settings.tau_c,
        settings.h,
        settings.kernel,
        settings.k,
    )?;
    Ok(ZeroInflatedModel {
        intercept,
        slope,
        positive_model,
        covariate_kind: settings.covariate_kind,
    })
}

/// `Q(τ | x, z)`; the rescaled level `τ′` is compared with the positive
/// model's `tau_c`. Below it, a local linear quantile at `max(τ′, 0.01)` is
/// used. Never negative.
pub fn zi_quantile(model: &ZeroInflatedModel, tau: f64, x: f64, z: f64) -> Result<f64> {
    check_level(tau, "tau")?;
    let p0 = model.p0(z);
    if tau <= p0 {
        return Ok(0.0);
    }
    let inner = (tau - p0) / (1.0 - p0);
    let pm = &model.positive_model;
    let q = if inner >= pm.tau_c {
        pm.predict(inner, x)?
    } else {
        local_linear_quantile(&pm.training, inner.max(LEVEL_FLOOR), x, pm.h, pm.kernel)?.alpha
    };
    Ok(q.max(0.0))
}
