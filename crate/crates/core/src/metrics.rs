//! Prediction scores.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err};
use crate::Result;

/// Truth magnitudes below this are left out of the MAPE.
pub const MAPE_MASK: f64 = 1e-12;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(shape_err!("length mismatch: {a} vs {b}"));
    }
    if a == 0 {
        return Err(arg_err!("nothing to score"));
    }
    Ok(())
}

/// `(u - l) + (2/alpha)(l - y)[y < l] + (2/alpha)(y - u)[y > u]`.
pub fn interval_score(l: f64, u: f64, y: f64, alpha: f64) -> Result<f64> {
    if l > u {
        return Err(arg_err!("lower bound {l} above upper bound {u}"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(arg_err!("alpha {alpha} outside (0, 1)"));
    }
    let mut s = u - l;
    if y < l {
        s += 2.0 / alpha * (l - y);
    }
    if y > u {
        s += 2.0 / alpha * (y - u);
    }
    Ok(s)
}

/// Mean interval score over paired bounds and truths.
pub fn mean_interval_score(lows: &[f64], highs: &[f64], truths: &[f64], alpha: f64) -> Result<f64> {
    same_len(lows.len(), truths.len())?;
    same_len(highs.len(), truths.len())?;
    let mut total = 0.0;
    for ((l, u), y) in lows.iter().zip(highs).zip(truths) {
        total += interval_score(*l, *u, *y, alpha)?;
    }
    Ok(total / truths.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    /// Entries dropped for a near-zero truth.
    pub masked: usize,
}

/// Mean of `|pred - truth| / |truth|` over entries with a non-zero truth.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<Mape> {
    same_len(pred.len(), truth.len())?;
    let (mut sum, mut used) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() < MAPE_MASK {
            continue;
        }
        sum += ((p - t) / t).abs();
        used += 1;
    }
    if used == 0 {
        return Err(arg_err!("every truth value is zero"));
    }
    Ok(Mape { value: sum / used as f64, masked: truth.len() - used })
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(pred.len(), truth.len())?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Fraction of truths inside `[low, high]`.
pub fn coverage(lows: &[f64], highs: &[f64], truths: &[f64]) -> Result<f64> {
    same_len(lows.len(), truths.len())?;
    same_len(highs.len(), truths.len())?;
    let hits = truths.iter().zip(lows.iter().zip(highs)).filter(|(y, (l, u))| **l <= **y && **y <= **u).count();
    Ok(hits as f64 / truths.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mape: f64,
    pub mape_masked: usize,
    pub rmse: f64,
    /// Mean 95% interval score.
    pub interval_score: f64,
    pub coverage_95: f64,
}

/// All scores for point predictions with 95% bounds.
pub fn score_report(mean: &[f64], lows: &[f64], highs: &[f64], truths: &[f64]) -> Result<ScoreReport> {
    let m = mape(mean, truths)?;
    Ok(ScoreReport {
        mape: m.value,
        mape_masked: m.masked,
        rmse: rmse(mean, truths)?,
        interval_score: mean_interval_score(lows, highs, truths, 0.05)?,
        coverage_95: coverage(lows, highs, truths)?,
    })
}

/// Per-entry interval scores, e.g. for medians over a hold-out set.
pub fn interval_scores(lows: &[f64], highs: &[f64], truths: &[f64], alpha: f64) -> Result<Vec<f64>> {
    same_len(lows.len(), truths.len())?;
    same_len(highs.len(), truths.len())?;
    lows.iter().zip(highs).zip(truths).map(|((l, u), y)| interval_score(*l, *u, *y, alpha)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn interval_score_cases() {
        assert_eq!(interval_score(0.0, 1.0, 0.4, 0.05).unwrap(), 1.0);
        assert!((interval_score(0.0, 1.0, -0.5, 0.05).unwrap() - 21.0).abs() < 1e-12);
        assert!((interval_score(0.0, 1.0, 1.5, 0.05).unwrap() - 21.0).abs() < 1e-12);
        assert_eq!(interval_score(2.0, 2.0, 2.0, 0.05).unwrap(), 0.0);
        assert!(interval_score(1.0, 0.0, 0.5, 0.05).is_err());
        assert!(interval_score(0.0, 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn interval_score_minimized_by_zero_width_at_truth() {
        let y = 0.3;
        for i in 0..=40 {
            for j in i..=40 {
                let (l, u) = (i as f64 * 0.025 - 0.2, j as f64 * 0.025 - 0.2);
                assert!(interval_score(l, u, y, 0.05).unwrap() >= 0.0);
            }
        }
        assert_eq!(interval_score(y, y, y, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn mape_cases() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        let t = [1.0, -2.0, 4.0];
        let p: Vec<f64> = t.iter().map(|v| 1.1 * v).collect();
        assert!((mape(&p, &t).unwrap().value - 0.1).abs() < 1e-12);
        // |1.5-1|/1 = .5, |-1+2|/2 = .5, |3-4|/4 = .25
        assert!((mape(&[1.5, -1.0, 3.0], &t).unwrap().value - 1.25 / 3.0).abs() < 1e-12);
        let masked = mape(&[1.0, 5.0], &[1.0, 0.0]).unwrap();
        assert_eq!((masked.value, masked.masked), (0.0, 1));
        assert!(mape(&[1.0], &[0.0]).is_err());
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_and_coverage() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - (12.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(coverage(&[-1.0, -1.0], &[1.0, 1.0], &[0.0, 0.5]).unwrap(), 1.0);
        assert_eq!(coverage(&[-1.0, -1.0], &[1.0, 1.0], &[0.0, 1.5]).unwrap(), 0.5);
        assert!(coverage(&[0.0], &[1.0, 2.0], &[0.5]).is_err());
    }

    #[test]
    fn gaussian_interval_coverage() {
        let mut rng = rng_for(4, &[]);
        let n = 10_000;
        let truths: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let lows = alloc::vec![-1.959964; n];
        let highs = alloc::vec![1.959964; n];
        let c = coverage(&lows, &highs, &truths).unwrap();
        assert!((c - 0.95).abs() < 0.02, "{c}");
    }

    #[test]
    fn permutation_invariance() {
        let p = [1.0, 2.5, -3.0, 4.0];
        let t = [1.2, 2.0, -2.0, 5.0];
        let (pr, tr) = ([4.0, -3.0, 2.5, 1.0], [5.0, -2.0, 2.0, 1.2]);
        assert!((mape(&p, &t).unwrap().value - mape(&pr, &tr).unwrap().value).abs() < 1e-15);
        assert!((rmse(&p, &t).unwrap() - rmse(&pr, &tr).unwrap()).abs() < 1e-15);
    }
}
