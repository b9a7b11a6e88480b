//! Fitting strategies shared by the command line and cross-validation.

use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthChoice;
use crate::error::{check_level, Error, Result};
use crate::quantreg::{weighted_qr, Design, Kernel, PairedSample};
use crate::tail::{
    fit_cst, fit_linear_baseline, BaselineAnchor, CstModel, KRule, LinearBaselineModel,
};
use crate::zeroinfl::{
    fit_zero_inflated, zi_quantile, CovariateKind, ZeroInflatedModel, ZeroInflationFit,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Cst,
    CstZeroInflated,
    LinearBaseline,
}

fn default_tau_c() -> f64 {
    0.95
}
fn default_trim() -> usize {
    3
}

/// Everything needed to fit one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_tau_c")]
    pub tau_c: f64,
    /// Defaults to `n_quarter` for CST and `n_third_baseline` for the
    /// linear baseline.
    #[serde(default)]
    pub k_rule: Option<KRule>,
    #[serde(default)]
    pub h: BandwidthChoice,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_trim")]
    pub trim: usize,
    #[serde(default)]
    pub anchor: BaselineAnchor,
    /// Logistic ridge; `None` uses the default with one automatic retry.
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub covariate_kind: CovariateKind,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            strategy: Strategy::Cst,
            tau_c: default_tau_c(),
            k_rule: None,
            h: BandwidthChoice::default(),
            kernel: Kernel::default(),
            trim: default_trim(),
            anchor: BaselineAnchor::default(),
            ridge: None,
            covariate_kind: CovariateKind::default(),
        }
    }
}

impl FitSettings {
    pub fn k_rule(&self) -> KRule {
        self.k_rule.unwrap_or(match self.strategy {
            Strategy::LinearBaseline => KRule::NThirdBaseline,
            _ => KRule::NQuarter,
        })
    }

    /// Sample on which the bandwidth is selected: positive responses for
    /// the zero-inflated strategy, everything otherwise.
    fn bandwidth_sample(&self, sample: &PairedSample) -> Result<PairedSample> {
        match self.strategy {
            Strategy::CstZeroInflated => sample
                .filter(|_, y| y > 0.0)
                .ok_or_else(|| Error::Domain("no strictly positive responses".into())),
            _ => Ok(sample.clone()),
        }
    }

    /// Bandwidth the fit would use.
    pub fn select_bandwidth(&self, sample: &PairedSample, seed: u64) -> Result<f64> {
        let s = self.bandwidth_sample(sample)?;
        self.h.select(&s, self.tau_c, self.kernel, seed)
    }

    /// Candidate scores of the bandwidth search, if the choice has any.
    pub fn bandwidth_scores(
        &self,
        sample: &PairedSample,
        seed: u64,
    ) -> Result<Option<crate::bandwidth::BandwidthScores>> {
        let s = self.bandwidth_sample(sample)?;
        self.h.scores(&s, self.tau_c, self.kernel, seed)
    }

    /// Fits the configured model; `z` is required for the zero-inflated
    /// strategy.
    pub fn fit(&self, sample: &PairedSample, z: Option<&[f64]>, seed: u64) -> Result<FittedModel> {
        match self.strategy {
            Strategy::Cst => {
                check_level(self.tau_c, "tau_c")?;
                let h = self.select_bandwidth(sample, seed)?;
                let k = self.k_rule().resolve(sample.len());
                Ok(FittedModel::Cst(fit_cst(
                    sample,
                    self.tau_c,
                    h,
                    self.kernel,
                    k,
                )?))
            }
            Strategy::CstZeroInflated => {
                check_level(self.tau_c, "tau_c")?;
                let z = z.ok_or_else(|| {
                    Error::Domain("the zero-inflated strategy needs a z column".into())
                })?;
                let h = self.select_bandwidth(sample, seed)?;
                let positives = sample.ys().iter().filter(|&&y| y > 0.0).count();
                let fit = ZeroInflationFit {
                    tau_c: self.tau_c,
                    h,
                    kernel: self.kernel,
                    k: self.k_rule().resolve(positives),
                    ridge: self.ridge,
                    covariate_kind: self.covariate_kind,
                };
                Ok(FittedModel::ZeroInflated(fit_zero_inflated(
                    sample, z, &fit,
                )?))
            }
            Strategy::LinearBaseline => {
                let k = self.k_rule().resolve(sample.len());
                Ok(FittedModel::LinearBaseline {
                    model: fit_linear_baseline(sample, k, self.trim, self.anchor)?,
                    training: sample.clone(),
                })
            }
        }
    }
}

/// A fitted model of any strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Cst(CstModel),
    ZeroInflated(ZeroInflatedModel),
    LinearBaseline {
        model: LinearBaselineModel,
        training: PairedSample,
    },
}

impl FittedModel {
    pub fn strategy(&self) -> Strategy {
        match self {
            FittedModel::Cst(_) => Strategy::Cst,
            FittedModel::ZeroInflated(_) => Strategy::CstZeroInflated,
            FittedModel::LinearBaseline { .. } => Strategy::LinearBaseline,
        }
    }

    /// Lowest level served by the extreme-value part.
    pub fn threshold_level(&self) -> f64 {
        match self {
            FittedModel::Cst(m) => m.tau_c,
            FittedModel::ZeroInflated(m) => m.positive_model.tau_c,
            FittedModel::LinearBaseline { model, .. } => model.anchor_level(),
        }
    }

    fn need_z(z: Option<f64>) -> Result<f64> {
        z.ok_or_else(|| Error::Domain("zero-inflated prediction needs z".into()))
    }

    /// Model quantile; levels below the threshold level are an error for
    /// the CST and baseline models.
    pub fn quantile(&self, tau: f64, x: f64, z: Option<f64>) -> Result<f64> {
        check_level(tau, "tau")?;
        match self {
            FittedModel::Cst(m) => m.predict(tau, x),
            FittedModel::ZeroInflated(m) => zi_quantile(m, tau, x, Self::need_z(z)?),
            FittedModel::LinearBaseline { model, .. } => model.predict(tau, x),
        }
    }

    /// Forecast at any level: below the threshold level the CST model uses
    /// the local linear estimator and the baseline a global linear quantile
    /// fit.
    pub fn forecast(&self, tau: f64, x: f64, z: Option<f64>) -> Result<f64> {
        check_level(tau, "tau")?;
        match self {
            FittedModel::Cst(m) => m.quantile_or_local(tau, x),
            FittedModel::ZeroInflated(m) => zi_quantile(m, tau, x, Self::need_z(z)?),
            FittedModel::LinearBaseline { model, training } => {
                model.quantile_or_linear(training, tau, x)
            }
        }
    }

    /// Forecasts for many points at one level. Above the threshold level the
    /// CST curve is evaluated with one warm-started sweep.
    pub fn forecast_many(&self, tau: f64, xs: &[f64], zs: Option<&[f64]>) -> Result<Vec<f64>> {
        check_level(tau, "tau")?;
        if let FittedModel::Cst(m) = self {
            if tau >= m.tau_c {
                let q = m.tail_quantile(tau)?;
                return Ok(m.rhat_many(xs)?.into_iter().map(|r| r + q).collect());
            }
        }
        if let FittedModel::LinearBaseline { model, training } = self {
            if tau < model.anchor_level() {
                let ones = vec![1.0; training.len()];
                let f = weighted_qr(training, tau, &ones, Design::InterceptSlopeAbout(0.0))?;
                return Ok(xs.iter().map(|x| f.alpha + f.beta * x).collect());
            }
        }
        xs.iter()
            .enumerate()
            .map(|(i, &x)| self.forecast(tau, x, zs.map(|z| z[i])))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FittedModel::Cst(m) => m.validate(),
            FittedModel::ZeroInflated(m) => m.validate(),
            FittedModel::LinearBaseline { model, training } => {
                model.validate()?;
                if model.n != training.len() {
                    return Err(Error::Domain(
                        "baseline training size disagrees with n".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}
