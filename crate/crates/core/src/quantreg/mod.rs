//! Check-loss primitives, kernels and local linear quantile regression.

mod solver;

pub use solver::TOL_OBJ;

use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};

/// Quantile check loss `ρ_τ(u) = u (τ − 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    check_level(tau, "tau")?;
    Ok(check_loss_unchecked(u, tau))
}

#[inline]
pub(crate) fn check_loss_unchecked(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Regression data `(xᵢ, yᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSample")]
pub struct PairedSample {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSample {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl TryFrom<RawSample> for PairedSample {
    type Error = Error;

    fn try_from(raw: RawSample) -> Result<Self> {
        PairedSample::new(raw.xs, raw.ys)
    }
}

impl PairedSample {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Domain(format!(
                "xs and ys differ in length ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 2 {
            return Err(Error::Domain("a sample needs at least two pairs".into()));
        }
        if let Some(i) = xs.iter().chain(&ys).position(|v| !v.is_finite()) {
            let (which, idx) = if i < xs.len() {
                ("xs", i)
            } else {
                ("ys", i - xs.len())
            };
            return Err(Error::Domain(format!("non-finite value in {which}[{idx}]")));
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// `(min xs, max xs)`.
    pub fn x_range(&self) -> (f64, f64) {
        self.xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// A copy with `c` added to every response.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| y + c).collect(),
        }
    }

    /// Pairs satisfying `keep(x, y)`, or `None` when fewer than two remain.
    pub fn filter(&self, mut keep: impl FnMut(f64, f64) -> bool) -> Option<Self> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .xs
            .iter()
            .zip(&self.ys)
            .filter(|(&x, &y)| keep(x, y))
            .map(|(&x, &y)| (x, y))
            .unzip();
        (xs.len() >= 2).then_some(Self { xs, ys })
    }
}

/// Symmetric kernel densities supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Triangular,
    Biweight,
}

impl Kernel {
    pub fn evaluate(self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        self.profile(a)
    }

    /// The density at `|u| = a` for `0 ≤ a < 1`.
    #[inline(always)]
    fn profile(self, a: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - a * a),
            Kernel::Triangular => 1.0 - a,
            Kernel::Biweight => {
                let t = 1.0 - a * a;
                0.9375 * t * t
            }
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Triangular => "triangular",
            Kernel::Biweight => "biweight",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "triangular" => Ok(Kernel::Triangular),
            "biweight" => Ok(Kernel::Biweight),
            other => Err(Error::Domain(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Result of one weighted check-loss fit: level `alpha` and slope `beta`
/// about the expansion point `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub alpha: f64,
    pub beta: f64,
    pub x0: f64,
    /// Number of observations with nonzero weight.
    pub n_eff: usize,
    /// Achieved value of the weighted check-loss objective.
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    InterceptOnly,
    InterceptSlopeAbout(f64),
}

/// Minimises `Σ wᵢ ρ_τ(yᵢ − α − β (xᵢ − x0))` over `(α, β)`, or over `α`
/// alone for [`Design::InterceptOnly`]. The result is an exact vertex
/// optimum.
pub fn weighted_qr(
    sample: &PairedSample,
    tau: f64,
    weights: &[f64],
    design: Design,
) -> Result<LocalFit> {
    check_level(tau, "tau")?;
    if weights.len() != sample.len() {
        return Err(Error::Domain(format!(
            "weights length {} does not match sample length {}",
            weights.len(),
            sample.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Domain(format!(
            "weights must be finite and nonnegative, got {w}"
        )));
    }
    let x0 = match design {
        Design::InterceptOnly => f64::NAN,
        Design::InterceptSlopeAbout(x0) => x0,
    };
    let mut buf = WindowBuf::default();
    for ((&x, &y), &w) in sample.xs.iter().zip(&sample.ys).zip(weights) {
        if w > 0.0 {
            buf.push(if x0.is_nan() { 0.0 } else { x - x0 }, y, w);
        }
    }
    match design {
        Design::InterceptOnly => {
            if buf.is_empty() {
                return Err(Error::DegenerateWindow {
                    x: f64::NAN,
                    reason: "all weights are zero".into(),
                });
            }
            let alpha = solver::fit_intercept(&buf.y, &buf.w, tau);
            Ok(LocalFit {
                alpha,
                beta: 0.0,
                x0: 0.0,
                n_eff: buf.len(),
                objective: solver::objective(&buf.d, &buf.y, &buf.w, tau, alpha, 0.0),
            })
        }
        Design::InterceptSlopeAbout(x0) => buf.solve(tau, x0, None),
    }
}

/// Kernel-weighted observations around an expansion point.
#[derive(Debug, Default)]
pub(crate) struct WindowBuf {
    d: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    /// Position of each entry in the slices it was gathered from.
    src: Vec<usize>,
}

impl WindowBuf {
    fn push(&mut self, d: f64, y: f64, w: f64) {
        self.d.push(d);
        self.y.push(y);
        self.w.push(w);
        self.src.push(self.src.len());
    }

    fn clear(&mut self) {
        self.d.clear();
        self.y.clear();
        self.w.clear();
        self.src.clear();
    }

    fn len(&self) -> usize {
        self.d.len()
    }

    fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Gathers `K((xᵢ − x)/h) · multᵢ` weights for points strictly inside
    /// the window.
    pub(crate) fn fill(
        &mut self,
        xs: &[f64],
        ys: &[f64],
        mult: Option<&[f64]>,
        x: f64,
        h: f64,
        kernel: Kernel,
    ) {
        // One monomorphised loop per kernel.
        match kernel {
            Kernel::Epanechnikov => {
                self.fill_with(xs, ys, mult, x, h, |a| Kernel::Epanechnikov.profile(a))
            }
            Kernel::Triangular => {
                self.fill_with(xs, ys, mult, x, h, |a| Kernel::Triangular.profile(a))
            }
            Kernel::Biweight => self.fill_with(xs, ys, mult, x, h, |a| Kernel::Biweight.profile(a)),
        }
    }

    /// `k` is the kernel on `[0, 1)` as a function of `|u|`.
    #[inline(always)]
    fn fill_with(
        &mut self,
        xs: &[f64],
        ys: &[f64],
        mult: Option<&[f64]>,
        x: f64,
        h: f64,
        k: impl Fn(f64) -> f64,
    ) {
        self.clear();
        self.d.reserve(xs.len());
        self.y.reserve(xs.len());
        self.w.reserve(xs.len());
        self.src.reserve(xs.len());
        for i in 0..xs.len() {
            let d = xs[i] - x;
            let a = (d / h).abs();
            if d.abs() >= h || a >= 1.0 {
                continue;
            }
            let w = match mult {
                Some(m) => k(a) * m[i],
                None => k(a),
            };
            if w > 0.0 {
                self.d.push(d);
                self.y.push(ys[i]);
                self.w.push(w);
                self.src.push(i);
            }
        }
    }

    /// Window fill for covariates sorted ascending with positive
    /// multiplicities, restricted to `range`. Points that round onto the
    /// kernel's edge can only sit at the two ends and are trimmed there; the
    /// result matches [`WindowBuf::fill`] on the same points. Returns the
    /// trimmed range.
    fn fill_sorted(
        &mut self,
        xs: &[f64],
        ys: &[f64],
        mult: Option<&[f64]>,
        range: std::ops::Range<usize>,
        x: f64,
        h: f64,
        kernel: Kernel,
    ) -> std::ops::Range<usize> {
        let outside = |v: f64| (v - x).abs() >= h || ((v - x) / h).abs() >= 1.0;
        let (mut lo, mut hi) = (range.start, range.end);
        while lo < hi && outside(xs[lo]) {
            lo += 1;
        }
        while hi > lo && outside(xs[hi - 1]) {
            hi -= 1;
        }
        self.clear();
        self.d.extend(xs[lo..hi].iter().map(|v| v - x));
        self.y.extend_from_slice(&ys[lo..hi]);
        self.w
            .extend(self.d.iter().map(|d| kernel.profile((d / h).abs())));
        if let Some(m) = mult {
            self.w.iter_mut().zip(&m[lo..hi]).for_each(|(w, m)| *w *= m);
        }
        self.src.extend(0..hi - lo);
        lo..hi
    }

    pub(crate) fn solve(&self, tau: f64, x0: f64, beta_start: Option<f64>) -> Result<LocalFit> {
        let start = beta_start.map_or(solver::Start::Cold, solver::Start::Slope);
        self.solve_from(tau, x0, start).map(|(fit, _)| fit)
    }

    /// As [`WindowBuf::solve`], also returning the source positions of the
    /// two observations spanning the fitted line.
    fn solve_from(
        &self,
        tau: f64,
        x0: f64,
        start: solver::Start,
    ) -> Result<(LocalFit, Option<(usize, usize)>)> {
        if self.is_empty() {
            return Err(Error::DegenerateWindow {
                x: x0,
                reason: "no observation has positive weight".into(),
            });
        }
        let first = self.d[0];
        if self.d.iter().all(|&d| d == first) {
            return Err(Error::DegenerateWindow {
                x: x0,
                reason: format!(
                    "all {} weighted observations share one covariate value; slope unidentifiable",
                    self.len()
                ),
            });
        }
        let fit = solver::fit_slope(&self.d, &self.y, &self.w, tau, start);
        let local = LocalFit {
            alpha: fit.alpha,
            beta: fit.beta,
            x0,
            n_eff: self.len(),
            objective: fit.objective,
        };
        Ok((local, fit.basis.map(|(p, q)| (self.src[p], self.src[q]))))
    }
}

/// Local linear estimate of the conditional `tau`-quantile at `x`.
pub fn local_linear_quantile(
    sample: &PairedSample,
    tau: f64,
    x: f64,
    h: f64,
    kernel: Kernel,
) -> Result<LocalFit> {
    check_level(tau, "tau")?;
    check_bandwidth(h)?;
    fit_at_points(&sample.xs, &sample.ys, None, tau, h, kernel, &[x])
        .pop()
        .expect("one point in, one fit out")
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "bandwidth must be positive and finite, got {h}"
        )))
    }
}

/// Evaluates the local linear fit at many points, visiting them in ascending
/// order and warm-starting each solve from the previous optimal line. Results are
/// returned in input order. `mult` holds per-observation multiplicities
/// (bootstrap counts).
pub(crate) fn fit_at_points(
    xs: &[f64],
    ys: &[f64],
    mult: Option<&[f64]>,
    tau: f64,
    h: f64,
    kernel: Kernel,
    points: &[f64],
) -> Vec<Result<LocalFit>> {
    // Observations sorted by covariate so that each window is a contiguous
    // slice; the bounds reproduce the `|xᵢ − x| < h` test exactly.
    // Zero multiplicities never enter a window, so they are dropped up front.
    let mut idx: Vec<usize> = match mult {
        Some(m) => (0..xs.len()).filter(|&i| m[i] != 0.0).collect(),
        None => (0..xs.len()).collect(),
    };
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    let sx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
    let sy: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    let sm: Option<Vec<f64>> = mult.map(|m| idx.iter().map(|&i| m[i]).collect());

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let mut out: Vec<Option<Result<LocalFit>>> = vec![None; points.len()];
    let mut buf = WindowBuf::default();
    // Last optimal line as positions in the sorted sample.
    let mut last: Option<(usize, usize)> = None;
    let mut last_beta = None;
    for i in order {
        let x = points[i];
        let lo = sx.partition_point(|&v| x - v >= h);
        let hi = sx.partition_point(|&v| v - x < h);
        let (lo, hi) = (lo.min(hi), hi);
        let kept = buf.fill_sorted(&sx, &sy, sm.as_deref(), lo..hi, x, h, kernel);
        let lo = kept.start;
        let locate = |g: usize| kept.contains(&g).then(|| g - lo);
        let start = match last.map(|(a, b)| (locate(a), locate(b))) {
            Some((Some(p), Some(q))) => solver::Start::Vertex(p, q),
            _ => last_beta.map_or(solver::Start::Cold, solver::Start::Slope),
        };
        let res = buf.solve_from(tau, x, start);
        out[i] = Some(res.map(|(fit, basis)| {
            last = basis.map(|(a, b)| (a + lo, b + lo));
            last_beta = Some(fit.beta);
            fit
        }));
    }
    out.into_iter()
        .map(|r| r.expect("every point visited"))
        .collect()
}

/// The fitted `tau_c` quantile curve at each grid point.
pub fn threshold_curve(
    sample: &PairedSample,
    tau_c: f64,
    h: f64,
    kernel: Kernel,
    grid: &[f64],
) -> Result<Vec<LocalFit>> {
    check_level(tau_c, "tau_c")?;
    check_bandwidth(h)?;
    if grid.is_empty() {
        return Err(Error::Domain("grid must not be empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Domain("grid must be sorted ascending".into()));
    }
    let (lo, hi) = sample.x_range();
    if grid[0] < lo || grid[grid.len() - 1] > hi {
        return Err(Error::Domain(format!(
            "grid must lie inside the data range [{lo}, {hi}]"
        )));
    }
    fit_at_points(&sample.xs, &sample.ys, None, tau_c, h, kernel, grid)
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::CurvePoint {
                index,
                x: grid[index],
                source: Box::new(e),
            })
        })
        .collect()
}

/// `n` uniformly spaced points from `a` to `b` inclusive.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Composite trapezoid rule over an ascending grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
        .sum()
}
