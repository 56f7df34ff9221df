//! Bounded optimizers: a projected quasi-Newton method for smooth objectives
//! (lengthscale estimation) and a coordinate pattern search for noisy or
//! piecewise-smooth ones (MAP calibration).

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence threshold on the projected gradient (sup norm).
    pub grad_tol: f64,
    /// Relative objective decrease below which iteration stops.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, f_tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Minimizes `f` over the box `[lo, hi]` with projected BFGS and an Armijo
/// backtracking line search.
///
/// `f` returns the value and gradient, or `None` where it cannot be evaluated
/// (treated as `+inf` by the line search). Returns `None` only if the start
/// point itself cannot be evaluated.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: BfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return None;
    }
    let identity = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|v| *v = 0.0);
        (0..n).for_each(|i| h[i * n + i] = 1.0);
    };
    let mut h = vec![0.0; n * n];
    identity(&mut h);
    let mut fresh = true;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let at_lo = |i: usize| x[i] <= lo[i] && g[i] > 0.0;
        let at_hi = |i: usize| x[i] >= hi[i] && g[i] < 0.0;
        let active: Vec<bool> = (0..n).map(|i| at_lo(i) || at_hi(i)).collect();
        let pg_norm = (0..n).filter(|&i| !active[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg_norm < opts.grad_tol {
            break;
        }
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| !active[i]) {
            d[i] = -(0..n).filter(|&j| !active[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        if dot(&d, &g) >= 0.0 {
            identity(&mut h);
            fresh = true;
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -g[i] };
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            clamp_into(&mut xn, lo, hi);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            if let Some((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ <= fx + 1e-4 * dot(&g, &step) {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            if fresh {
                break;
            }
            identity(&mut h);
            fresh = true;
            continue;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            // H <- (I - r s y^T) H (I - r y s^T) + r s s^T
            let r = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -r * (s[i] * hy[j] + hy[i] * s[j]) + (r * r * yhy + r) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        let decrease = fx - fn_;
        x = xn;
        g = gn;
        fx = fn_;
        if decrease <= opts.f_tol * (1.0 + fx.abs()) {
            break;
        }
    }
    Some(Minimum { x, f: fx, iterations: it })
}

#[derive(Clone, Copy, Debug)]
pub struct PatternSearchOptions {
    /// Initial poll step as a fraction of each coordinate's range.
    pub initial_step: f64,
    pub min_step: f64,
    pub shrink: f64,
    pub max_evals: usize,
}

impl Default for PatternSearchOptions {
    fn default() -> Self {
        Self { initial_step: 0.25, min_step: 1e-6, shrink: 0.5, max_evals: 4000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Maximizes `f` over `[lo, hi]` by coordinate polling with a geometrically
/// shrinking mesh. Non-finite values count as `-inf`.
pub fn pattern_search_max<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: PatternSearchOptions) -> PatternResult
where
    F: FnMut(&[f64]) -> f64,
{
    let sanitize = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let mut fx = sanitize(f(&x));
    let mut evals = 1;
    let mut step = opts.initial_step;
    while step >= opts.min_step && evals < opts.max_evals {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for k in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[k] = (cand[k] + dir * step * (hi[k] - lo[k])).clamp(lo[k], hi[k]);
                if cand[k] == x[k] {
                    continue;
                }
                let v = sanitize(f(&cand));
                evals += 1;
                if v > best.as_ref().map_or(fx, |b| b.1) {
                    best = Some((cand, v));
                }
            }
        }
        match best {
            Some((xb, vb)) => {
                x = xb;
                fx = vb;
            }
            None => step *= opts.shrink,
        }
    }
    PatternResult { x, value: fx, evals }
}
