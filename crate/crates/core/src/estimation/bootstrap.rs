use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{optimize_from, FitResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gapdist::fit as fit_gaps;
use crate::models::Likelihood;

/// Largest share of replicates that may fail before the bootstrap errors.
const MAX_DROP_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    /// Whole vehicles, keeping each gap sequence together.
    Vehicle,
    /// Individual gap observations.
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub unit: ResampleUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInterval {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub kept: usize,
    pub dropped: usize,
    pub unit: ResampleUnit,
    pub seed: u64,
    pub params: Vec<ParamInterval>,
    pub emulator: Vec<ParamInterval>,
    pub warnings: Vec<String>,
}

/// Refits `full` on resampled data.
///
/// Replicate `b` draws from its own ChaCha8 stream (`seed`, stream `b`), is
/// started at the full-data estimate and refits the gap law before computing
/// emulator gaps. Non-converged replicates are dropped.
pub fn bootstrap(data: &Dataset, full: &FitResult, opts: &BootstrapOptions) -> Result<BootstrapSummary> {
    if opts.replicates < 2 {
        return Err(Error::Usage("bootstrap needs at least 2 replicates".into()));
    }
    if data.digest() != full.data_digest {
        return Err(Error::Usage(
            "bootstrap data differ from the data the estimate was fitted to".into(),
        ));
    }
    let keys = full.spec.cell_keys();
    let mut config = full.config.clone();
    config.multistart = 1;
    let start = vec![full.theta()];
    let n_units = match opts.unit {
        ResampleUnit::Vehicle => data.n_vehicles(),
        ResampleUnit::Gap => data.n_obs(),
    };

    let reps: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64);
            let picks: Vec<usize> = (0..n_units).map(|_| rng.random_range(0..n_units)).collect();
            let rep = match opts.unit {
                ResampleUnit::Vehicle => data.resample_vehicles(&picks),
                ResampleUnit::Gap => data.resample_gaps(&picks),
            };
            let gaps = fit_gaps(&rep.gap_sizes(), config.gap_family).ok()?;
            let lik = Likelihood::new(config.model, &keys, rep.observations(), config.nodes).ok()?;
            let r = optimize_from(&rep, &config, &keys, &lik, &start, false, gaps).ok()?;
            if !r.converged {
                return None;
            }
            let taus: Option<Vec<f64>> = r.emulator.iter().map(|e| e.tau_e).collect();
            Some((r.theta(), taus?))
        })
        .collect();

    let kept: Vec<&(Vec<f64>, Vec<f64>)> = reps.iter().flatten().collect();
    let dropped = opts.replicates - kept.len();
    if dropped as f64 > MAX_DROP_FRACTION * opts.replicates as f64 {
        return Err(Error::Bootstrap(format!(
            "{dropped} of {} replicates failed to converge",
            opts.replicates
        )));
    }
    let mut warnings = Vec::new();
    if opts.replicates < 200 {
        warnings.push(format!(
            "{} replicates: standard errors need at least 200",
            opts.replicates
        ));
    }
    if opts.replicates < 999 {
        warnings.push(format!(
            "{} replicates: percentile intervals need at least 999",
            opts.replicates
        ));
    }
    if dropped > 0 {
        warnings.push(format!("{dropped} replicates dropped (not converged)"));
    }
    let theta = full.theta();
    let params = full
        .param_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let xs: Vec<f64> = kept.iter().map(|r| r.0[i]).collect();
            interval(name, theta[i], xs)
        })
        .collect();
    let emulator = full
        .emulator
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let xs: Vec<f64> = kept.iter().map(|r| r.1[i]).collect();
            interval(e.label(), e.tau_e.unwrap_or(f64::NAN), xs)
        })
        .collect();
    Ok(BootstrapSummary {
        replicates: opts.replicates,
        kept: kept.len(),
        dropped,
        unit: opts.unit,
        seed: opts.seed,
        params,
        emulator,
        warnings,
    })
}

fn interval(name: String, estimate: f64, mut xs: Vec<f64>) -> ParamInterval {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    xs.sort_by(f64::total_cmp);
    ParamInterval {
        name,
        estimate,
        se,
        ci_low: quantile7(&xs, 0.025),
        ci_high: quantile7(&xs, 0.975),
    }
}

/// Linear-interpolation sample quantile of sorted data (Hyndman-Fan type 7).
pub(crate) fn quantile7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let xs: Vec<f64> = (1..=5).map(f64::from).collect();
        assert_eq!(quantile7(&xs, 0.5), 3.0);
        assert_eq!(quantile7(&xs, 0.0), 1.0);
        assert_eq!(quantile7(&xs, 1.0), 5.0);
        // numpy.percentile([1..5], 2.5) = 1.1
        assert!((quantile7(&xs, 0.025) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn interval_of_constant_sample() {
        let i = interval("x".into(), 2.0, vec![2.0; 10]);
        assert_eq!(i.se, 0.0);
        assert_eq!((i.ci_low, i.ci_high), (2.0, 2.0));
    }
}
