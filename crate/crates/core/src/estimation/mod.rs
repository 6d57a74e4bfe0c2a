//! Maximum-likelihood fitting, bootstrap inference and likelihood-ratio tests.
//!
//! Parameters are optimized on an unconstrained scale: `ln` for every
//! positive parameter and `alpha/beta = e^2 sigmoid(x)` for the bias ratio
//! (plain `ln` when the upper bound is relaxed). A simplex search from each
//! start is polished with BFGS on the analytic gradient.

mod bootstrap;
mod lrtest;
pub(crate) mod optimize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap, BootstrapOptions, BootstrapSummary, ParamInterval, ResampleUnit};
pub use lrtest::{lr_statistic, lr_test, LrTest};

use crate::baselines::raff;
use crate::data::Dataset;
use crate::emulator::emulator_gap_with_nodes;
use crate::error::{Error, Result};
use crate::gapdist::{fit as fit_gaps, GapDistribution, GapFamily};
use crate::models::{ClassKey, Conditioning, CriticalGapSpec, Likelihood, ModelKind};
use crate::numerics::DEFAULT_NODES;
use crate::perception::{PerceptionParams, ALPHA_OVER_BETA_MAX};
use optimize::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};

pub const FORMAT_VERSION: u32 = 1;

/// Relative distance to a bound below which a parameter is flagged.
const BOUNDARY_TOL: f64 = 1e-4;
/// Transformed coordinates beyond this magnitude count as at a bound.
const TRANSFORMED_LIMIT: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub relax_alpha_bound: bool,
    pub multistart: usize,
    /// Gradient tolerance (infinity norm, transformed scale).
    pub gtol: f64,
    /// Relative function tolerance of the simplex stage.
    pub simplex_ftol: f64,
    pub max_evals: usize,
    pub nodes: usize,
    pub seed: u64,
    /// Gap law used for emulator critical gaps.
    pub gap_family: GapFamily,
}

impl FitConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            relax_alpha_bound: false,
            multistart: 8,
            gtol: 1e-6,
            simplex_ftol: 1e-9,
            max_evals: 4000,
            nodes: DEFAULT_NODES,
            seed: 0,
            gap_family: GapFamily::Empirical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multistart < 1 {
            return Err(Error::Config("multistart must be at least 1".into()));
        }
        if !(self.gtol > 0.0) || !(self.simplex_ftol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.nodes < 8 {
            return Err(Error::Config("quadrature needs at least 8 nodes".into()));
        }
        Ok(())
    }
}

/// Emulator critical gap for one cell and conditioning value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorGap {
    pub cell: ClassKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<u32>,
    pub tau_e: Option<f64>,
}

impl EmulatorGap {
    pub fn conditioning(&self) -> Conditioning {
        match (self.w, self.r) {
            (Some(w), _) => Conditioning::Wait(w),
            (_, Some(r)) => Conditioning::Rejected(r),
            _ => Conditioning::None,
        }
    }

    pub fn label(&self) -> String {
        let cell = if self.cell.subject.is_empty() {
            "all".to_string()
        } else {
            self.cell.to_string()
        };
        match (self.w, self.r) {
            (Some(w), _) => format!("{cell} w={w}"),
            (_, Some(r)) => format!("{cell} r={r}"),
            _ => cell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub log_likelihood: f64,
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub format_version: u32,
    pub model: ModelKind,
    pub perception: PerceptionParams,
    pub spec: CriticalGapSpec,
    pub max_ll: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub n_vehicles: usize,
    pub n_params: usize,
    pub aic: f64,
    pub boundary_flags: Vec<String>,
    pub gradient_norm: f64,
    pub clamped_probabilities: usize,
    pub warnings: Vec<String>,
    pub starts: Vec<StartReport>,
    pub config: FitConfig,
    pub data_digest: String,
    pub gap_distribution: GapDistribution,
    pub emulator: Vec<EmulatorGap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
}

impl FitResult {
    /// Natural parameters: `[alpha/beta, v, k, cell params..]`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = vec![self.perception.alpha_over_beta, self.perception.v, self.perception.k];
        t.extend(self.spec.flat_params());
        t
    }

    pub fn param_names(&self) -> Vec<String> {
        param_names(self.model, &self.spec.cell_keys())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: FitResult = serde_json::from_str(s)?;
        if r.format_version != FORMAT_VERSION {
            return Err(Error::Usage(format!(
                "fit result format version {} is not supported (expected {FORMAT_VERSION})",
                r.format_version
            )));
        }
        Ok(r)
    }
}

pub fn param_names(kind: ModelKind, keys: &[ClassKey]) -> Vec<String> {
    let mut names: Vec<String> = ["alpha_over_beta", "v", "k"].iter().map(|s| s.to_string()).collect();
    if kind == ModelKind::Constant {
        names.push("tau_scaled".into());
        return names;
    }
    for k in keys {
        for p in kind.cell_param_names() {
            names.push(format!("{p}[{k}]"));
        }
    }
    names
}

#[derive(Debug, Clone, Copy)]
struct Transform {
    relax_alpha: bool,
}

impl Transform {
    fn to_x(self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i == 0 && !self.relax_alpha {
                    let q = (t / ALPHA_OVER_BETA_MAX).clamp(1e-12, 1.0 - 1e-12);
                    (q / (1.0 - q)).ln()
                } else {
                    t.ln()
                }
            })
            .collect()
    }

    fn to_theta(self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                if i == 0 && !self.relax_alpha {
                    ALPHA_OVER_BETA_MAX / (1.0 + (-v).exp())
                } else {
                    v.exp()
                }
            })
            .collect()
    }

    /// `d theta_i / d x_i`.
    fn jacobian(self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i == 0 && !self.relax_alpha {
                    t * (1.0 - t / ALPHA_OVER_BETA_MAX)
                } else {
                    t
                }
            })
            .collect()
    }
}

/// Fits `config.model` to `data`.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    fit_with_starts(data, config, &[])
}

/// Like [`fit`], additionally starting from each of `previous` embedded into
/// the target model. Embedding a nested fit guarantees the result is at
/// least as good as that fit.
pub fn fit_with_starts(data: &Dataset, config: &FitConfig, previous: &[FitResult]) -> Result<FitResult> {
    config.validate()?;
    let kind = config.model;
    let keys = data.cells(kind);
    let mut warnings = identification_warnings(data, kind, &keys);
    let mut starts = Vec::new();
    for prev in previous {
        match embed(prev, kind, &keys) {
            Some(t) => starts.push(t),
            None => warnings.push(format!(
                "start from {} fit ignored: not nested in {kind}",
                prev.model
            )),
        }
    }
    let base = heuristic_start(data, kind, &keys);
    starts.push(base.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 1..config.multistart {
        starts.push(perturb(&base, &mut rng, config.relax_alpha_bound));
    }
    let gap_dist = fit_gaps(&data.gap_sizes(), config.gap_family)?;
    let lik = Likelihood::new(kind, &keys, data.observations(), config.nodes)?;
    let mut result = optimize_from(data, config, &keys, &lik, &starts, true, gap_dist)?;
    warnings.append(&mut result.warnings);
    result.warnings = warnings;
    if !result.converged {
        let best_ll = result.max_ll;
        return Err(Error::Convergence {
            best_ll,
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Runs every start and assembles the result for the best one.
pub(crate) fn optimize_from(
    data: &Dataset,
    config: &FitConfig,
    keys: &[ClassKey],
    lik: &Likelihood,
    starts: &[Vec<f64>],
    simplex: bool,
    gap_dist: GapDistribution,
) -> Result<FitResult> {
    let tr = Transform {
        relax_alpha: config.relax_alpha_bound,
    };
    let runs: Vec<(Vec<f64>, f64, bool, f64, usize)> = starts
        .par_iter()
        .map(|theta0| run_start(lik, tr, config, theta0, simplex))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numeric("log-likelihood is not finite at any start".into()))?;
    let (x, f, grad_ok, gnorm, _) = runs[best].clone();
    let theta = tr.to_theta(&x);
    let eval = lik.evaluate(&theta, false);
    let boundary_flags = boundary_flags(config.model, keys, &theta, &x, config.relax_alpha_bound);
    let perception = PerceptionParams::relaxed(theta[0], theta[2], theta[1])?;
    let spec = CriticalGapSpec::from_flat(config.model, keys, &theta[3..])?;
    let mut warnings = Vec::new();
    if eval.clamped > 0 {
        warnings.push(format!(
            "{} acceptance probabilities clamped at the optimum",
            eval.clamped
        ));
    }
    let emulator = emulator_gaps(&spec, &perception, &gap_dist, config.nodes, &mut warnings);
    let n_params = 3 + spec.n_params();
    let max_ll = -f;
    Ok(FitResult {
        format_version: FORMAT_VERSION,
        model: config.model,
        perception,
        spec,
        max_ll,
        converged: grad_ok || !boundary_flags.is_empty(),
        n_obs: data.n_obs(),
        n_vehicles: data.n_vehicles(),
        n_params,
        aic: 2.0 * n_params as f64 - 2.0 * max_ll,
        boundary_flags,
        gradient_norm: gnorm,
        clamped_probabilities: eval.clamped,
        warnings,
        starts: runs
            .iter()
            .map(|r| StartReport {
                log_likelihood: -r.1,
                converged: r.2,
                evaluations: r.4,
            })
            .collect(),
        config: config.clone(),
        data_digest: data.digest(),
        gap_distribution: gap_dist,
        emulator,
        bootstrap: None,
    })
}

/// Returns `(x, -ll, gradient converged, gradient norm, evaluations)`.
fn run_start(
    lik: &Likelihood,
    tr: Transform,
    config: &FitConfig,
    theta0: &[f64],
    simplex: bool,
) -> (Vec<f64>, f64, bool, f64, usize) {
    let f = |x: &[f64]| -lik.evaluate(&tr.to_theta(x), false).ll;
    let fg = |x: &[f64]| {
        let theta = tr.to_theta(x);
        let e = lik.evaluate(&theta, true);
        let jac = tr.jacobian(&theta);
        let g: Vec<f64> = e.grad.iter().zip(&jac).map(|(g, j)| -g * j).collect();
        (-e.ll, g)
    };
    let mut x = tr.to_x(theta0);
    let mut evals = 0;
    if simplex {
        let m = nelder_mead(
            f,
            &x,
            NelderMeadOptions {
                step: 0.5,
                ftol: config.simplex_ftol,
                xtol: 1e-6,
                max_evals: config.max_evals,
            },
        );
        x = m.x;
        evals += m.evals;
    }
    let m = bfgs(
        fg,
        &x,
        BfgsOptions {
            gtol: config.gtol,
            max_iter: 500,
        },
    );
    evals += m.evals;
    (m.x, m.f, m.converged, m.grad_norm.unwrap_or(f64::NAN), evals)
}

fn boundary_flags(kind: ModelKind, keys: &[ClassKey], theta: &[f64], x: &[f64], relax: bool) -> Vec<String> {
    let names = param_names(kind, keys);
    let mut flags = Vec::new();
    for (i, name) in names.iter().enumerate() {
        if i == 0 && !relax {
            if theta[0] >= ALPHA_OVER_BETA_MAX * (1.0 - BOUNDARY_TOL) {
                flags.push(format!("{name}:upper"));
            } else if x[0] < -TRANSFORMED_LIMIT {
                flags.push(format!("{name}:lower"));
            }
            continue;
        }
        if x[i] < -TRANSFORMED_LIMIT {
            flags.push(format!("{name}:lower"));
        } else if x[i] > TRANSFORMED_LIMIT {
            flags.push(format!("{name}:upper"));
        }
    }
    flags
}

fn identification_warnings(data: &Dataset, kind: ModelKind, keys: &[ClassKey]) -> Vec<String> {
    let mut out = Vec::new();
    for key in keys {
        let matches = |o: &&crate::models::GapObservation| {
            kind == ModelKind::Constant
                || o.subject_class == key.subject
                    && (!kind.uses_opposing() || key.opposing.as_deref() == Some(&o.opposing_class))
        };
        let acc = data.observations().iter().filter(matches).filter(|o| o.accepted).count();
        let rej = data.observations().iter().filter(matches).filter(|o| !o.accepted).count();
        if acc == 0 || rej == 0 {
            out.push(format!(
                "cell ({key}) has {acc} accepted and {rej} rejected gaps; its critical gap is weakly identified"
            ));
        }
    }
    out
}

fn heuristic_start(data: &Dataset, kind: ModelKind, keys: &[ClassKey]) -> Vec<f64> {
    let tau = raff(data).unwrap_or_else(|_| {
        let mut g = data.gap_sizes();
        g.sort_by(f64::total_cmp);
        g[g.len() / 2]
    });
    let mut theta = vec![2.0, 0.3, 0.5];
    let n_cells = if kind == ModelKind::Constant { 1 } else { keys.len() };
    for _ in 0..n_cells {
        match kind {
            ModelKind::WaitingTime => theta.extend([0.4 * tau, 0.9 * tau, 2.0]),
            ModelKind::RejectedGaps => theta.extend([0.4 * tau, 0.9 * tau, 1.0]),
            ModelKind::BiValued => theta.extend([1.2 * tau, tau]),
            _ => theta.push(tau),
        }
    }
    theta
}

fn perturb(base: &[f64], rng: &mut ChaCha8Rng, relax: bool) -> Vec<f64> {
    base.iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = (rng.random_range(-1.0..1.0) * 3.0f64.ln()).exp();
            let v = t * f;
            if i == 0 && !relax {
                v.min(0.95 * ALPHA_OVER_BETA_MAX)
            } else {
                v
            }
        })
        .collect()
}

/// Natural parameters of `prev` expressed in `kind` over `keys`.
fn embed(prev: &FitResult, kind: ModelKind, keys: &[ClassKey]) -> Option<Vec<f64>> {
    if !prev.model.is_nested_in(kind) {
        return None;
    }
    let mut theta = vec![
        prev.perception.alpha_over_beta,
        prev.perception.v,
        prev.perception.k,
    ];
    if prev.model == kind {
        let idx: Option<Vec<usize>> = keys.iter().map(|k| prev.spec.cell_index(k).ok()).collect();
        for i in idx? {
            theta.extend(prev.spec.cell_params(i));
        }
        return Some(theta);
    }
    let n_cells = if kind == ModelKind::Constant { 1 } else { keys.len() };
    for key in keys.iter().take(n_cells) {
        let tau = prev.spec.cell_params(prev.spec.cell_index(key).ok()?)[0];
        match kind {
            ModelKind::WaitingTime | ModelKind::RejectedGaps => {
                let a = 1e-9 * tau;
                theta.extend([a, tau - a, 1.0]);
            }
            ModelKind::BiValued => theta.extend([tau, tau]),
            _ => theta.push(tau),
        }
    }
    Some(theta)
}

/// Default emulator targets: each cell, at `w = 0` and `w = 10` s for
/// waiting-time models, `r = 0` and `r = 4` for rejected-gap models, and
/// `w = 0` / `w > 0` for bi-valued models.
pub fn default_emulator_targets(spec: &CriticalGapSpec) -> Vec<EmulatorGap> {
    let mut out = Vec::new();
    for cell in spec.cell_keys() {
        let conds: Vec<(Option<f64>, Option<u32>)> = match spec.kind() {
            ModelKind::WaitingTime => vec![(Some(0.0), None), (Some(10.0), None)],
            ModelKind::BiValued => vec![(Some(0.0), None), (Some(1.0), None)],
            ModelKind::RejectedGaps => vec![(None, Some(0)), (None, Some(4))],
            _ => vec![(None, None)],
        };
        for (w, r) in conds {
            out.push(EmulatorGap {
                cell: cell.clone(),
                w,
                r,
                tau_e: None,
            });
        }
    }
    out
}

pub(crate) fn emulator_gaps(
    spec: &CriticalGapSpec,
    p: &PerceptionParams,
    d: &GapDistribution,
    nodes: usize,
    warnings: &mut Vec<String>,
) -> Vec<EmulatorGap> {
    let mut targets = default_emulator_targets(spec);
    for t in &mut targets {
        match emulator_gap_with_nodes(spec, &t.cell, p, d, t.conditioning(), nodes) {
            Ok(v) => t.tau_e = Some(v),
            Err(e) => warnings.push(format!("emulator gap {}: {e}", t.label())),
        }
    }
    targets
}
