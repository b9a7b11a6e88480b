//! Exact weighted check-loss minimisation for one or two coefficients.
//!
//! The two-coefficient problem `min Σ wᵢ ρ_τ(yᵢ − α − β dᵢ)` is a convex,
//! piecewise-linear program whose optimum is attained on a line through two
//! observations. A smoothed IRLS pass gives a starting slope; the vertex
//! polish then pivots between lines through pairs of observations until no
//! rotation about a point on the current line lowers the objective.

use std::cell::RefCell;

/// Relative optimality tolerance shared by all check-loss solves.
pub const TOL_OBJ: f64 = 1e-8;

/// Minimum relative decrease accepted by a pivot.
const PIVOT_EPS: f64 = 1e-13;

pub(crate) fn objective(d: &[f64], y: &[f64], w: &[f64], tau: f64, alpha: f64, beta: f64) -> f64 {
    d.iter()
        .zip(y)
        .zip(w)
        .map(|((&di, &yi), &wi)| weighted_rho(yi - alpha - beta * di, wi, tau))
        .sum()
}

/// `w ρ_τ(r)` as `(w τ) r` or `(w (τ − 1)) r`.
#[inline(always)]
fn weighted_rho(r: f64, w: f64, tau: f64) -> f64 {
    signed_weight(r, w, tau) * r
}

#[inline(always)]
fn signed_weight(r: f64, w: f64, tau: f64) -> f64 {
    if r > 0.0 {
        w * tau
    } else {
        w * (tau - 1.0)
    }
}

type Candidate = (f64, f64, usize);

/// Independent partial sums in the vertex check, reduced in a fixed order.
const LANES: usize = 4;

thread_local! {
    static CANDIDATES: RefCell<Vec<Candidate>> = const { RefCell::new(Vec::new()) };
}

/// First entry, in `(key, index)` order, at which the running weight reaches
/// `target`; the largest entry when it never does. Expected linear time.
fn weighted_select(items: &mut [Candidate], target: f64) -> (f64, usize) {
    let total = items.iter().map(|e| e.1).sum();
    weighted_select_near(items, target, None, total)
}

fn less(a: &Candidate, b: &Candidate) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.2 < b.2)
}

/// Sample size for pivot choice.
const SAMPLE: usize = 24;

/// Pivot position for a partition of `slice` when the answer sits at
/// weight `want` out of `total`: a sample entry just past the estimated
/// answer, on the side that leaves the smaller part to search.
fn sampled_pivot(slice: &[Candidate], want: f64, total: f64) -> usize {
    let n = slice.len();
    let mut sample = [(0.0, 0.0, 0usize); SAMPLE];
    let mut pos = [0usize; SAMPLE];
    for k in 0..SAMPLE {
        pos[k] = (2 * k + 1) * n / (2 * SAMPLE);
    }
    pos.sort_unstable_by(|&a, &b| {
        let (x, y) = (&slice[a], &slice[b]);
        x.0.total_cmp(&y.0).then(x.2.cmp(&y.2))
    });
    let mut sw = 0.0;
    for k in 0..SAMPLE {
        sample[k] = slice[pos[k]];
        sw += sample[k].1;
    }
    if !(sw > 0.0 && total > 0.0) {
        return pos[SAMPLE / 2];
    }
    let goal = want / total * sw;
    let mut acc = 0.0;
    let mut k = SAMPLE - 1;
    for (i, e) in sample.iter().enumerate() {
        acc += e.1;
        if acc >= goal {
            k = i;
            break;
        }
    }
    let k = if 2 * k < SAMPLE { (k + 2).min(SAMPLE - 1) } else { k.saturating_sub(2) };
    pos[k]
}

/// As [`weighted_select`], with the first partition taken at `hint`, a key
/// expected to lie close to the answer. `total` is the summed weight.
fn weighted_select_near(items: &mut [Candidate], target: f64, hint: Option<f64>, total: f64) -> (f64, usize) {
    let mut acc = 0.0;
    let mut rest = total;
    let mut slice = items;
    if let Some(hv) = hint {
        let (mut store, mut left) = (0, 0.0);
        for i in 0..slice.len() {
            let e = slice[i];
            let lt = e.0 < hv;
            slice[i] = slice[store];
            slice[store] = e;
            left += if lt { e.1 } else { 0.0 };
            store += lt as usize;
        }
        if store > 0 && left >= target {
            slice = &mut slice[..store];
            rest = left;
        } else if store < slice.len() {
            acc = left;
            rest -= left;
            slice = &mut slice[store..];
        }
    }
    // The answer always stays inside `slice`; `acc` is the weight before it
    // and `rest` estimates the weight inside it.
    while slice.len() > 16 {
        let n = slice.len();
        let m = if n > 4 * SAMPLE {
            sampled_pivot(slice, target - acc, rest)
        } else {
            let (a, b, c) = (0, n / 2, n - 1);
            if less(&slice[a], &slice[b]) == less(&slice[b], &slice[c]) {
                b
            } else if less(&slice[a], &slice[b]) == less(&slice[c], &slice[a]) {
                a
            } else {
                c
            }
        };
        slice.swap(m, n - 1);
        let pivot = slice[n - 1];
        let mut store = 0;
        let mut left = 0.0;
        for i in 0..n - 1 {
            let e = slice[i];
            let lt = less(&e, &pivot);
            slice[i] = slice[store];
            slice[store] = e;
            left += if lt { e.1 } else { 0.0 };
            store += lt as usize;
        }
        slice.swap(store, n - 1);
        if store > 0 && acc + left >= target {
            slice = &mut slice[..store];
            rest = left;
            continue;
        }
        acc += left + pivot.1;
        if acc >= target || store + 1 == n {
            return (pivot.0, pivot.2);
        }
        rest -= left + pivot.1;
        slice = &mut slice[store + 1..];
    }
    slice.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    for e in slice.iter() {
        acc += e.1;
        if acc >= target {
            return (e.0, e.2);
        }
    }
    let last = slice[slice.len() - 1];
    (last.0, last.2)
}

/// Lower weighted `tau`-quantile: the smallest value whose cumulative weight
/// reaches `tau` times the total weight. Returns the index of that value.
pub(crate) fn weighted_quantile_index(values: &[f64], w: &[f64], tau: f64) -> usize {
    let mut items: Vec<(f64, f64, usize)> = values.iter().zip(w).enumerate().map(|(i, (&v, &wi))| (v, wi, i)).collect();
    let total: f64 = w.iter().sum();
    weighted_select(&mut items, tau * total).1
}

/// Minimises `Σ w ρ_τ(y − α)` exactly.
pub(crate) fn fit_intercept(y: &[f64], w: &[f64], tau: f64) -> f64 {
    y[weighted_quantile_index(y, w, tau)]
}

/// Weighted least squares of `y` on `(1, d)`; `None` when singular.
fn wls(d: &[f64], y: &[f64], v: &[f64]) -> Option<(f64, f64)> {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&di, &yi), &vi) in d.iter().zip(y).zip(v) {
        s0 += vi;
        s1 += vi * di;
        s2 += vi * di * di;
        t0 += vi * yi;
        t1 += vi * di * yi;
    }
    let det = s0 * s2 - s1 * s1;
    if !(det.abs() > 1e-14 * (s0 * s2).abs().max(f64::MIN_POSITIVE)) {
        return None;
    }
    let beta = (s0 * t1 - s1 * t0) / det;
    let alpha = (t0 - s1 * beta) / s0;
    (alpha.is_finite() && beta.is_finite()).then_some((alpha, beta))
}

/// Starting slope from IRLS on a Huber-smoothed check loss with the
/// smoothing parameter shrinking geometrically from 1e-1 to 1e-6 (relative to
/// the response spread).
fn irls_start(d: &[f64], y: &[f64], w: &[f64], tau: f64) -> f64 {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = if hi > lo { hi - lo } else { 1.0 };
    let (mut alpha, mut beta) = match wls(d, y, w) {
        Some(ab) => ab,
        None => return 0.0,
    };
    let mut v = vec![0.0; d.len()];
    let mut c = 0.1 * scale;
    for _stage in 0..6 {
        for _ in 0..2 {
            for i in 0..d.len() {
                let r = y[i] - alpha - beta * d[i];
                let side = if r < 0.0 { 1.0 - tau } else { tau };
                v[i] = w[i] * side / r.abs().max(c);
            }
            match wls(d, y, &v) {
                Some((a, b)) => {
                    alpha = a;
                    beta = b;
                }
                None => return beta,
            }
        }
        c *= 0.1;
    }
    beta
}

/// Best slope among lines through observation `p`, with the index of the
/// second observation defining that line.
/// `near` is a slope expected to be close to the answer.
fn rotate_about(d: &[f64], y: &[f64], w: &[f64], tau: f64, p: usize, near: f64) -> Option<(f64, usize)> {
    CANDIDATES.with_borrow_mut(|cand| {
        if cand.len() < d.len() {
            cand.resize(d.len(), (0.0, 0.0, 0));
        }
        let (dp, yp) = (d[p], y[p]);
        let (mut len, mut down, mut total) = (0, 0.0, 0.0);
        for j in 0..d.len() {
            let dd = d[j] - dp;
            let keep = j != p && dd != 0.0 && w[j] != 0.0;
            let a = w[j] * dd.abs();
            // Left derivative at -inf contributes -a·τ_j, where τ_j flips with
            // the sign of dd.
            let side = if dd > 0.0 { a * tau } else { a * (1.0 - tau) };
            down += if keep { side } else { 0.0 };
            total += if keep { a } else { 0.0 };
            cand[len] = ((y[j] - yp) / dd, a, j);
            len += keep as usize;
        }
        if len == 0 {
            return None;
        }
        Some(weighted_select_near(&mut cand[..len], down, Some(near), total))
    })
}

/// Where the vertex polish starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Start {
    Cold,
    Slope(f64),
    /// The line through two observations.
    Vertex(usize, usize),
}

/// Solution of the two-coefficient problem; `basis` names the pair of
/// observations spanning the optimal line when there is one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SlopeFit {
    pub alpha: f64,
    pub beta: f64,
    pub objective: f64,
    pub basis: Option<(usize, usize)>,
}

enum Verdict {
    Optimal,
    /// Rotating about the given end may lower the objective.
    RotateAbout(usize),
    /// Some other observation also lies on the line.
    Degenerate,
}

/// Objective of the line through `p` and `q` together with a subgradient
/// test there: the line is optimal when multipliers in `[(τ−1)wₖ, τwₖ]` for
/// the two ends balance the signs of all other residuals. `scale` is
/// `Σ wᵢ (1 + |dᵢ|)`.
#[allow(clippy::too_many_arguments)]
fn check_vertex(
    d: &[f64],
    y: &[f64],
    w: &[f64],
    tau: f64,
    alpha: f64,
    beta: f64,
    p: usize,
    q: usize,
    scale: f64,
) -> (Verdict, f64) {
    let mut lanes = [[0.0f64; LANES]; 4];
    let mut step = |l: usize, di: f64, yi: f64, wi: f64| {
        let r = yi - alpha - beta * di;
        let wpsi = signed_weight(r, wi, tau);
        lanes[0][l] += wpsi * r;
        lanes[1][l] += wpsi;
        lanes[2][l] += wpsi * di;
        lanes[3][l] += if r.abs() <= 1e-12 * (1.0 + yi.abs()) { 1.0 } else { 0.0 };
    };
    let (dc, yc, wc) = (d.chunks_exact(LANES), y.chunks_exact(LANES), w.chunks_exact(LANES));
    let (dr, yr, wr) = (dc.remainder(), yc.remainder(), wc.remainder());
    for ((dl, yl), wl) in dc.zip(yc).zip(wc) {
        for l in 0..LANES {
            step(l, dl[l], yl[l], wl[l]);
        }
    }
    for l in 0..dr.len() {
        step(l, dr[l], yr[l], wr[l]);
    }
    let total = |v: &[f64; LANES]| v.iter().sum::<f64>();
    let (obj, mut g0, mut g1) = (total(&lanes[0]), total(&lanes[1]), total(&lanes[2]));
    let mut on_line = total(&lanes[3]) as usize;
    // Take the two ends back out.
    for k in [p, q] {
        let r = y[k] - alpha - beta * d[k];
        on_line -= (r.abs() <= 1e-12 * (1.0 + y[k].abs())) as usize;
        let wpsi = signed_weight(r, w[k], tau);
        g0 -= wpsi;
        g1 -= wpsi * d[k];
    }
    let degenerate = on_line > 0;
    if degenerate {
        return (Verdict::Degenerate, obj);
    }
    let ap = (g0 * d[q] - g1) / (d[p] - d[q]);
    let aq = -g0 - ap;
    let slack = 1e-10 * scale;
    let inside = |a: f64, wk: f64| a >= (tau - 1.0) * wk - slack && a <= tau * wk + slack;
    let verdict = match (inside(ap, w[p]), inside(aq, w[q])) {
        (true, true) => Verdict::Optimal,
        // p's multiplier is infeasible, so p leaves the line and q stays.
        (false, _) => Verdict::RotateAbout(q),
        (true, false) => Verdict::RotateAbout(p),
    };
    (verdict, obj)
}

/// Exact minimiser of `Σ w ρ_τ(y − α − β d)`. Requires at least two distinct
/// `d` values among positively weighted points.
pub(crate) fn fit_slope(d: &[f64], y: &[f64], w: &[f64], tau: f64, start: Start) -> SlopeFit {
    let (mut alpha, mut beta, mut p, mut q);
    match start {
        Start::Vertex(i, j) if i < d.len() && j < d.len() && d[i] != d[j] && w[i] > 0.0 && w[j] > 0.0 => {
            beta = (y[j] - y[i]) / (d[j] - d[i]);
            alpha = y[i] - beta * d[i];
            p = i;
            q = j;
        }
        _ => {
            beta = match start {
                Start::Slope(b) => b,
                _ => irls_start(d, y, w, tau),
            };
            let resid: Vec<f64> = d.iter().zip(y).map(|(&di, &yi)| yi - beta * di).collect();
            p = weighted_quantile_index(&resid, w, tau);
            alpha = resid[p];
            // The best line through p is never worse than the current one.
            let Some((b, j)) = rotate_about(d, y, w, tau, p, beta) else {
                let objective = objective(d, y, w, tau, alpha, beta);
                return SlopeFit { alpha, beta, objective, basis: None };
            };
            beta = b;
            alpha = y[p] - b * d[p];
            q = j;
        }
    }

    let scale: f64 = d.iter().zip(w).map(|(&di, &wi)| wi * (1.0 + di.abs())).sum();
    let (mut verdict, mut obj) = check_vertex(d, y, w, tau, alpha, beta, p, q, scale);
    let max_steps = 4 * d.len() + 50;
    for _ in 0..max_steps {
        if obj == 0.0 {
            break;
        }
        let ends = match verdict {
            Verdict::Optimal => break,
            Verdict::RotateAbout(k) if k == q => [q, p],
            _ => [p, q],
        };
        let mut moved = false;
        for keep in ends {
            let Some((b, j)) = rotate_about(d, y, w, tau, keep, beta) else {
                continue;
            };
            let a = y[keep] - b * d[keep];
            let (v, o) = check_vertex(d, y, w, tau, a, b, keep, j, scale);
            if o < obj - PIVOT_EPS * (1.0 + obj) {
                (alpha, beta, p, q, verdict, obj) = (a, b, keep, j, v, o);
                moved = true;
                break;
            }
        }
        if moved {
            continue;
        }
        // Degenerate vertex: other observations may also lie on the line.
        match degenerate_pivot(d, y, w, tau, alpha, beta, obj, p, q) {
            Some((a, b, _, piv, j)) => {
                (alpha, beta, p, q) = (a, b, piv, j);
                (verdict, obj) = check_vertex(d, y, w, tau, alpha, beta, p, q, scale);
            }
            None => break,
        }
    }
    // Same vertex, same bits, whichever end was the pivot.
    let (p, q) = (p.min(q), p.max(q));
    let a = y[p] - beta * d[p];
    if a != alpha {
        alpha = a;
        obj = objective(d, y, w, tau, alpha, beta);
    }
    SlopeFit { alpha, beta, objective: obj, basis: Some((p, q)) }
}

fn try_rotation(
    d: &[f64],
    y: &[f64],
    w: &[f64],
    tau: f64,
    p: usize,
    beta: f64,
    obj: f64,
) -> Option<(f64, f64, f64, usize)> {
    let (b, j) = rotate_about(d, y, w, tau, p, beta)?;
    let a = y[p] - b * d[p];
    let o = objective(d, y, w, tau, a, b);
    (o < obj - PIVOT_EPS * (1.0 + obj)).then_some((a, b, o, j))
}

#[allow(clippy::too_many_arguments)]
fn degenerate_pivot(
    d: &[f64],
    y: &[f64],
    w: &[f64],
    tau: f64,
    alpha: f64,
    beta: f64,
    obj: f64,
    p: usize,
    q: usize,
) -> Option<(f64, f64, f64, usize, usize)> {
    for i in 0..d.len() {
        if i == p || i == q || w[i] == 0.0 || d[i] == d[p] || d[i] == d[q] {
            continue;
        }
        let r = y[i] - alpha - beta * d[i];
        if r.abs() > 1e-12 * (1.0 + y[i].abs()) {
            continue;
        }
        if let Some((a, b, o, j)) = try_rotation(d, y, w, tau, i, beta, obj) {
            return Some((a, b, o, i, j));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(d: &[f64], y: &[f64], w: &[f64], tau: f64) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] == d[j] {
                    continue;
                }
                let b = (y[j] - y[i]) / (d[j] - d[i]);
                let a = y[i] - b * d[i];
                best = best.min(objective(d, y, w, tau, a, b));
            }
        }
        best
    }

    #[test]
    fn slope_fit_matches_vertex_enumeration() {
        let d = [-0.9, -0.5, -0.2, 0.1, 0.3, 0.35, 0.8, 0.95];
        let y = [1.0, -0.3, 2.2, 0.4, 5.0, 0.9, 1.1, 3.3];
        let w = [0.2, 1.0, 0.7, 1.3, 0.5, 0.9, 1.1, 0.4];
        for &tau in &[0.1, 0.25, 0.5, 0.8, 0.95] {
            let obj = fit_slope(&d, &y, &w, tau, Start::Cold).objective;
            let best = brute_force(&d, &y, &w, tau);
            assert!(obj <= best + TOL_OBJ * (1.0 + best), "tau {tau}: {obj} vs {best}");
            // Any warm start lands on the same optimal value.
            let mut starts: Vec<Start> = [-10.0, 0.0, 3.0].map(Start::Slope).to_vec();
            starts.extend((0..d.len()).flat_map(|i| (0..d.len()).map(move |j| Start::Vertex(i, j))));
            for start in starts {
                let o2 = fit_slope(&d, &y, &w, tau, start).objective;
                assert!((o2 - best).abs() <= TOL_OBJ * (1.0 + best), "{start:?}");
            }
        }
    }

    fn select_by_sorting(items: &[(f64, f64, usize)], target: f64) -> (f64, usize) {
        let mut v = items.to_vec();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut acc = 0.0;
        for &(k, w, i) in &v {
            acc += w;
            if acc >= target {
                return (k, i);
            }
        }
        let last = v.last().unwrap();
        (last.0, last.2)
    }

    proptest::proptest! {
        #[test]
        fn weighted_select_matches_sorting(
            raw in proptest::collection::vec((0i32..200, 0u32..8), 1..400),
            frac in 0.0f64..1.2,
            hint in proptest::option::of(-1i32..201),
            skew in 0.0f64..3.0,
        ) {
            // Integer-valued weights keep partial sums exact.
            let items: Vec<(f64, f64, usize)> =
                raw.iter().enumerate().map(|(i, &(k, w))| (k as f64, w as f64, i)).collect();
            let total: f64 = items.iter().map(|e| e.1).sum();
            let target = (frac * total).round();
            let mut work = items.clone();
            proptest::prop_assert_eq!(weighted_select(&mut work, target), select_by_sorting(&items, target));
            let mut work = items.clone();
            // The total only steers pivot choice, so a wrong one is harmless.
            let near = weighted_select_near(&mut work, target, hint.map(f64::from), skew * total);
            proptest::prop_assert_eq!(near, select_by_sorting(&items, target));
        }
    }

    proptest::proptest! {
        #[test]
        fn any_start_reaches_the_vertex_optimum(
            pts in proptest::collection::vec((-20i32..20, -30i32..30, 1u32..5), 3..25),
            tau in 0.05f64..0.95,
            i in 0usize..25,
            j in 0usize..25,
            slope in -5.0f64..5.0,
        ) {
            // Coarse lattices produce ties and several points on one line.
            let d: Vec<f64> = pts.iter().map(|p| f64::from(p.0) / 10.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| f64::from(p.1) / 7.0).collect();
            let w: Vec<f64> = pts.iter().map(|p| f64::from(p.2)).collect();
            proptest::prop_assume!(d.iter().any(|&v| v != d[0]));
            let best = brute_force(&d, &y, &w, tau);
            let n = d.len();
            for start in [Start::Cold, Start::Slope(slope), Start::Vertex(i % n, j % n)] {
                let fit = fit_slope(&d, &y, &w, tau, start);
                proptest::prop_assert!(fit.objective <= best + TOL_OBJ * (1.0 + best), "{:?}: {} vs {}", start, fit.objective, best);
                let direct = objective(&d, &y, &w, tau, fit.alpha, fit.beta);
                proptest::prop_assert!((direct - fit.objective).abs() <= 1e-12 * (1.0 + best));
            }
        }
    }

    #[test]
    fn intercept_is_lower_weighted_quantile() {
        let y = [3.0, 1.0, 2.0, 5.0];
        let w = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(fit_intercept(&y, &w, 0.5), 2.0);
        assert_eq!(fit_intercept(&y, &w, 0.51), 3.0);
        assert_eq!(fit_intercept(&y, &w, 0.99), 5.0);
    }
}
