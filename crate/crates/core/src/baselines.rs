//! Classical critical-gap estimators.
//!
//! * Raff: the gap size `t` where the number of accepted gaps `<= t` equals
//!   the number of rejected gaps `> t`. The difference of the two counts is a
//!   nondecreasing step function; its sign change is returned, or the middle
//!   of the interval on which it is exactly zero.
//! * Ashworth: `mean(a) - q var(a)` over accepted gaps `a` (sample variance),
//!   for opposing flow `q` in vehicles per second.
//! * Troutbeck: lognormal critical-gap distribution `F` fitted by maximizing
//!   `sum_v ln[F(a_v) - F(r_v)]`, where `a_v` is the accepted gap of vehicle
//!   `v` and `r_v` its largest rejected gap (0 when it rejected none).
//!   Vehicles with `a_v <= r_v` are dropped. The estimate is the mean of `F`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimation::optimize::{nelder_mead, NelderMeadOptions};
use crate::numerics::normal_cdf;

fn split_gaps(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let (mut acc, mut rej) = (Vec::new(), Vec::new());
    for o in data.observations() {
        if o.accepted {
            acc.push(o.gap_size);
        } else {
            rej.push(o.gap_size);
        }
    }
    (acc, rej)
}

/// Raff's critical gap from all accepted and rejected gaps.
pub fn raff(data: &Dataset) -> Result<f64> {
    let (acc, rej) = split_gaps(data);
    raff_from_gaps(&acc, &rej)
}

pub fn raff_from_gaps(accepted: &[f64], rejected: &[f64]) -> Result<f64> {
    if accepted.is_empty() || rejected.is_empty() {
        return Err(Error::Estimator(
            "Raff needs at least one accepted and one rejected gap".into(),
        ));
    }
    let mut acc = accepted.to_vec();
    let mut rej = rejected.to_vec();
    acc.sort_by(f64::total_cmp);
    rej.sort_by(f64::total_cmp);
    let mut knots: Vec<f64> = acc.iter().chain(&rej).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    // Count difference on [knots[i], knots[i+1]).
    let diff = |t: f64| {
        let a = acc.partition_point(|&x| x <= t) as i64;
        let r = (rej.len() - rej.partition_point(|&x| x <= t)) as i64;
        a - r
    };
    for (i, &t) in knots.iter().enumerate() {
        let d = diff(t);
        if d > 0 {
            return Ok(t);
        }
        if d == 0 {
            let end = knots[i + 1..]
                .iter()
                .copied()
                .find(|&u| diff(u) > 0)
                .expect("count difference is positive past the largest gap");
            return Ok(0.5 * (t + end));
        }
    }
    Err(Error::Estimator("accepted and rejected curves never cross".into()))
}

/// Ashworth's critical gap for opposing flow `q` (vehicles per second).
pub fn ashworth(data: &Dataset, q: f64) -> Result<f64> {
    let (acc, _) = split_gaps(data);
    ashworth_from_gaps(&acc, q)
}

pub fn ashworth_from_gaps(accepted: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::domain(format!("opposing flow must be positive, got {q}")));
    }
    if accepted.len() < 2 {
        return Err(Error::Estimator("Ashworth needs at least two accepted gaps".into()));
    }
    let n = accepted.len() as f64;
    let mean = accepted.iter().sum::<f64>() / n;
    let var = accepted.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(mean - q * var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TroutbeckEstimate {
    /// Mean of the fitted critical-gap distribution, seconds.
    pub mean: f64,
    pub log_mean: f64,
    pub log_sd: f64,
    pub vehicles_used: usize,
    pub vehicles_excluded: usize,
    pub excluded_fraction: f64,
}

/// Troutbeck's maximum-likelihood critical gap.
pub fn troutbeck(data: &Dataset) -> Result<TroutbeckEstimate> {
    let pairs: Vec<(f64, f64)> = data
        .vehicles()
        .map(|v| {
            let a = v.last().expect("vehicles are nonempty").gap_size;
            let r = v[..v.len() - 1].iter().map(|o| o.gap_size).fold(0.0, f64::max);
            (r, a)
        })
        .collect();
    troutbeck_from_pairs(&pairs)
}

/// `pairs` holds `(largest rejected gap or 0, accepted gap)` per vehicle.
pub fn troutbeck_from_pairs(pairs: &[(f64, f64)]) -> Result<TroutbeckEstimate> {
    let used: Vec<(f64, f64)> = pairs.iter().copied().filter(|(r, a)| a > r).collect();
    if used.is_empty() {
        return Err(Error::Estimator(
            "every vehicle has accepted gap <= largest rejected gap".into(),
        ));
    }
    let excluded = pairs.len() - used.len();
    let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
    let logs: Vec<(f64, f64)> = used.iter().map(|&(r, a)| (ln(r), a.ln())).collect();
    let neg_ll = |x: &[f64]| {
        let (mu, sd) = (x[0], x[1].exp());
        let mut s = 0.0;
        for &(lr, la) in &logs {
            let zr = (lr - mu) / sd;
            let za = (la - mu) / sd;
            // Difference taken in the tail where it is accurate.
            let p = if zr > 0.0 {
                normal_cdf(-zr) - normal_cdf(-za)
            } else {
                normal_cdf(za) - normal_cdf(zr)
            };
            s += p.max(1e-300).ln();
        }
        -s
    };
    let mid: Vec<f64> = used
        .iter()
        .map(|&(r, a)| if r > 0.0 { (0.5 * (r + a)).ln() } else { a.ln() })
        .collect();
    let m0 = mid.iter().sum::<f64>() / mid.len() as f64;
    let sd0 = (mid.iter().map(|x| (x - m0).powi(2)).sum::<f64>() / mid.len() as f64)
        .sqrt()
        .max(0.05);
    let opts = NelderMeadOptions {
        step: 0.2,
        ftol: 1e-12,
        xtol: 1e-9,
        max_evals: 10_000,
    };
    let m = nelder_mead(neg_ll, &[m0, sd0.ln()], opts);
    if !m.f.is_finite() {
        return Err(Error::Estimator("Troutbeck likelihood is not finite".into()));
    }
    let (log_mean, log_sd) = (m.x[0], m.x[1].exp());
    Ok(TroutbeckEstimate {
        mean: (log_mean + 0.5 * log_sd * log_sd).exp(),
        log_mean,
        log_sd,
        vehicles_used: used.len(),
        vehicles_excluded: excluded,
        excluded_fraction: excluded as f64 / pairs.len() as f64,
    })
}
