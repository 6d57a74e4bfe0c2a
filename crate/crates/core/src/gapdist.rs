//! Law of the opposing-stream gap sizes.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{normal_cdf, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapFamily {
    Empirical,
    #[serde(rename = "exp")]
    Exponential,
    Lognormal,
}

impl FromStr for GapFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(GapFamily::Empirical),
            "exp" | "exponential" => Ok(GapFamily::Exponential),
            "lognormal" => Ok(GapFamily::Lognormal),
            _ => Err(Error::Usage(format!(
                "unknown gap distribution '{s}' (expected empirical, exp or lognormal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GapDistribution {
    /// Sorted sample of gap sizes, seconds.
    Empirical { gaps: Vec<f64> },
    #[serde(rename = "exp")]
    Exponential { rate: f64 },
    /// Moments of `ln G`.
    Lognormal { log_mean: f64, log_sd: f64 },
}

/// Fits `family` to a sample of gap sizes.
pub fn fit(gaps: &[f64], family: GapFamily) -> Result<GapDistribution> {
    if gaps.is_empty() {
        return Err(Error::Dataset("no gaps to fit a gap distribution to".into()));
    }
    for (i, &g) in gaps.iter().enumerate() {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::Data {
                row: i + 1,
                reason: format!("gap size must be positive, got {g}"),
            });
        }
    }
    let n = gaps.len() as f64;
    match family {
        GapFamily::Empirical => {
            let mut sorted = gaps.to_vec();
            sorted.sort_by(f64::total_cmp);
            Ok(GapDistribution::Empirical { gaps: sorted })
        }
        GapFamily::Exponential => {
            let mean = gaps.iter().sum::<f64>() / n;
            GapDistribution::exponential(1.0 / mean)
        }
        GapFamily::Lognormal => {
            if gaps.len() < 2 {
                return Err(Error::Dataset("lognormal fit needs at least two gaps".into()));
            }
            let logs: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
            let m = logs.iter().sum::<f64>() / n;
            let var = logs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            if !(var > 0.0) {
                return Err(Error::Dataset(
                    "lognormal fit needs gaps with positive log-variance".into(),
                ));
            }
            GapDistribution::lognormal(m, var.sqrt())
        }
    }
}

impl GapDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::domain(format!("exponential rate must be positive, got {rate}")));
        }
        Ok(GapDistribution::Exponential { rate })
    }

    pub fn lognormal(log_mean: f64, log_sd: f64) -> Result<Self> {
        if !log_mean.is_finite() || !(log_sd > 0.0) || !log_sd.is_finite() {
            return Err(Error::domain(format!(
                "invalid lognormal parameters ({log_mean}, {log_sd})"
            )));
        }
        Ok(GapDistribution::Lognormal { log_mean, log_sd })
    }

    pub fn family(&self) -> GapFamily {
        match self {
            GapDistribution::Empirical { .. } => GapFamily::Empirical,
            GapDistribution::Exponential { .. } => GapFamily::Exponential,
            GapDistribution::Lognormal { .. } => GapFamily::Lognormal,
        }
    }

    /// `P(G <= x)`; the step function for an empirical law.
    pub fn cdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        match self {
            GapDistribution::Empirical { gaps } => {
                gaps.partition_point(|&g| g <= x) as f64 / gaps.len() as f64
            }
            GapDistribution::Exponential { rate } => -(-rate * x).exp_m1(),
            GapDistribution::Lognormal { log_mean, log_sd } => {
                normal_cdf((x.ln() - log_mean) / log_sd)
            }
        }
    }

    /// Inverse CDF. For an empirical law, the smallest sample value whose
    /// step CDF reaches `p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_prob(p)?;
        Ok(match self {
            GapDistribution::Empirical { gaps } => {
                gaps[step_index(p, gaps.len()) - 1]
            }
            _ => self.smooth_quantile(p)?,
        })
    }

    /// `E[G; G <= t] = int_0^t g f_G(g) dg`.
    pub fn mean_below(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        match self {
            GapDistribution::Empirical { gaps } => {
                let k = gaps.partition_point(|&g| g <= t);
                gaps[..k].iter().sum::<f64>() / gaps.len() as f64
            }
            GapDistribution::Exponential { rate } => {
                if t.is_infinite() {
                    return 1.0 / rate;
                }
                let x = rate * t;
                (1.0 - (-x).exp() * (1.0 + x)) / rate
            }
            GapDistribution::Lognormal { log_mean, log_sd } => {
                let full = (log_mean + 0.5 * log_sd * log_sd).exp();
                if t.is_infinite() {
                    return full;
                }
                full * normal_cdf((t.ln() - log_mean - log_sd * log_sd) / log_sd)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean_below(f64::INFINITY)
    }

    /// Continuous CDF. Parametric laws are unchanged; an empirical law is
    /// interpolated linearly between `(0, 0)` and the points `(x, F_n(x))`
    /// at the distinct sample values.
    pub fn smooth_cdf(&self, x: f64) -> f64 {
        match self {
            GapDistribution::Empirical { gaps } => {
                if !(x > 0.0) {
                    return 0.0;
                }
                let n = gaps.len() as f64;
                let j = gaps.partition_point(|&g| g <= x);
                if j == gaps.len() {
                    return 1.0;
                }
                let lo = if j == 0 { 0.0 } else { gaps[j - 1] };
                let hi = gaps[j];
                let hi_p = gaps.partition_point(|&g| g <= hi) as f64 / n;
                let lo_p = j as f64 / n;
                lo_p + (x - lo) / (hi - lo) * (hi_p - lo_p)
            }
            _ => self.cdf(x),
        }
    }

    /// Inverse of [`smooth_cdf`](Self::smooth_cdf) on `[0, 1]`.
    pub fn smooth_quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("probability must lie in [0, 1], got {p}")));
        }
        Ok(match self {
            GapDistribution::Empirical { gaps } => {
                let n = gaps.len();
                let hi = gaps[step_index(p, n) - 1];
                let below = gaps.partition_point(|&g| g < hi);
                let lo = if below == 0 { 0.0 } else { gaps[below - 1] };
                let lo_p = below as f64 / n as f64;
                let hi_p = gaps.partition_point(|&g| g <= hi) as f64 / n as f64;
                lo + (p - lo_p) / (hi_p - lo_p) * (hi - lo)
            }
            GapDistribution::Exponential { rate } => -(-p).ln_1p() / rate,
            GapDistribution::Lognormal { log_mean, log_sd } => {
                if p == 0.0 {
                    0.0
                } else {
                    (log_mean + log_sd * normal_quantile(p)).exp()
                }
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            GapDistribution::Empirical { gaps } => gaps[rng.random_range(0..gaps.len())],
            GapDistribution::Exponential { rate } => {
                Exp::new(*rate).expect("rate validated").sample(rng)
            }
            GapDistribution::Lognormal { log_mean, log_sd } => LogNormal::new(*log_mean, *log_sd)
                .expect("parameters validated")
                .sample(rng),
        }
    }

    /// Number of sample points for an empirical law.
    pub fn sample_size(&self) -> Option<usize> {
        match self {
            GapDistribution::Empirical { gaps } => Some(gaps.len()),
            _ => None,
        }
    }
}

/// Smallest `i` in `1..=n` with `i / n >= p`.
fn step_index(p: f64, n: usize) -> usize {
    let mut i = ((p * n as f64).ceil() as usize).clamp(1, n);
    while i > 1 && (i - 1) as f64 / n as f64 >= p {
        i -= 1;
    }
    while i < n && (i as f64 / n as f64) < p {
        i += 1;
    }
    i
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn exponential_fit_from_mean() {
        let gaps: Vec<f64> = (0..40).map(|i| 3.78 + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d = fit(&gaps, GapFamily::Exponential).unwrap();
        match d {
            GapDistribution::Exponential { rate } => assert!((rate - 0.2646).abs() < 1e-4),
            _ => unreachable!(),
        }
    }

    #[test]
    fn degenerate_sample() {
        assert!(fit(&[2.0, 2.0, 2.0], GapFamily::Empirical).is_ok());
        assert!(fit(&[2.0, 2.0, 2.0], GapFamily::Lognormal).is_err());
    }

    #[test]
    fn nonpositive_gap_cites_row() {
        match fit(&[1.0, 2.0, -1.0], GapFamily::Empirical) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exponential_closed_forms() {
        let d = GapDistribution::exponential(0.5).unwrap();
        assert!((d.quantile(0.5).unwrap() - 2.0f64.ln() / 0.5).abs() < 1e-12);
        assert!((d.mean_below(f64::INFINITY) - 2.0).abs() < 1e-12);
        let expect = 2.0 * (1.0 - (-2.0f64).exp() * 3.0);
        assert!((d.mean_below(4.0) - expect).abs() < 1e-12);
        assert!((d.mean_below(4.0) - 1.18799).abs() < 1e-5);
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
    }

    #[test]
    fn lognormal_partial_mean_matches_quadrature() {
        let d = GapDistribution::lognormal(1.2, 0.5).unwrap();
        let t = 4.0;
        let f = |g: f64| {
            let z = (g.ln() - 1.2) / 0.5;
            g * (-0.5 * z * z).exp() / (g * 0.5 * (2.0 * std::f64::consts::PI).sqrt())
        };
        let q = crate::numerics::integrate_adaptive(f, 1e-12, t, 1e-13, 1e-12).unwrap();
        assert!((d.mean_below(t) - q).abs() < 1e-9);
    }

    #[test]
    fn empirical_step_functions() {
        let d = fit(&[3.0, 1.0, 2.0], GapFamily::Empirical).unwrap();
        assert!((d.cdf(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.cdf(0.5), 0.0);
        assert_eq!(d.quantile(0.5).unwrap(), 2.0);
        assert_eq!(d.quantile(2.0 / 3.0).unwrap(), 2.0);
        assert_eq!(d.quantile(0.7).unwrap(), 3.0);
        assert!((d.mean_below(2.5) - 1.0).abs() < 1e-15);
        assert!((d.mean() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn smooth_empirical_interpolates_knots() {
        let d = fit(&[1.0, 2.0, 2.0, 4.0], GapFamily::Empirical).unwrap();
        assert_eq!(d.smooth_cdf(1.0), 0.25);
        assert_eq!(d.smooth_cdf(0.5), 0.125);
        assert_eq!(d.smooth_cdf(2.0), 0.75);
        assert_eq!(d.smooth_cdf(3.0), 0.875);
        assert_eq!(d.smooth_cdf(5.0), 1.0);
        assert_eq!(d.smooth_quantile(0.875).unwrap(), 3.0);
        assert_eq!(d.smooth_quantile(0.125).unwrap(), 0.5);
        assert!((d.smooth_quantile(0.6).unwrap() - 1.7).abs() < 1e-15);
    }

    #[test]
    fn sampling_mean() {
        let d = GapDistribution::lognormal(1.0, 0.4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let m = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m / d.mean() - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn empirical_quantile_sandwich(xs in prop::collection::vec(0.1f64..20.0, 1..60), x in 0.05f64..25.0) {
            let d = fit(&xs, GapFamily::Empirical).unwrap();
            let n = xs.len() as f64;
            let c = d.cdf(x);
            if c > 0.0 && c < 1.0 {
                prop_assert!(d.quantile(c).unwrap() <= x);
                let upper = c + 1.0 / n;
                if upper < 1.0 {
                    prop_assert!(x <= d.quantile(upper).unwrap());
                }
            }
        }

        #[test]
        fn smooth_round_trip(xs in prop::collection::vec(0.1f64..20.0, 2..60), p in 0.0f64..1.0) {
            let d = fit(&xs, GapFamily::Empirical).unwrap();
            let q = d.smooth_quantile(p).unwrap();
            prop_assert!((d.smooth_cdf(q) - p).abs() < 1e-12);
        }

        #[test]
        fn smooth_round_trip_with_ties(xs in prop::collection::vec(1u8..6, 2..40), p in 0.0f64..1.0) {
            let xs: Vec<f64> = xs.into_iter().map(|x| x as f64 * 0.5).collect();
            let d = fit(&xs, GapFamily::Empirical).unwrap();
            let q = d.smooth_quantile(p).unwrap();
            prop_assert!((d.smooth_cdf(q) - p).abs() < 1e-12);
        }

        #[test]
        fn mean_below_monotone_and_bounded(t1 in 0.0f64..30.0, dt in 0.0f64..5.0) {
            for d in [
                GapDistribution::exponential(0.3).unwrap(),
                GapDistribution::lognormal(1.1, 0.6).unwrap(),
                fit(&[0.5, 1.5, 2.5, 7.0, 9.0], GapFamily::Empirical).unwrap(),
            ] {
                let a = d.mean_below(t1);
                let b = d.mean_below(t1 + dt);
                prop_assert!(b >= a);
                prop_assert!(b <= d.mean() + 1e-12);
            }
        }
    }
}
