//! Emulator critical gaps: the observed-gap threshold `tau_e` with
//! `F_G(tau_e) = E_G[1 - p_A(G)]`.

use rayon::prelude::*;
use std::io::Write;

use crate::error::{Error, Result};
use crate::gapdist::GapDistribution;
use crate::models::{AcceptanceKernel, ClassKey, Conditioning, CriticalGapSpec, ModelKind};
use crate::numerics::{integrate_adaptive, invert_monotone, pairwise_sum, DEFAULT_NODES};
use crate::perception::PerceptionParams;

const QUAD_ABS_TOL: f64 = 1e-13;
const QUAD_REL_TOL: f64 = 1e-12;

/// Resolved cell and conditioning for one emulator evaluation.
struct Target {
    kind: ModelKind,
    cell: Vec<f64>,
    w: f64,
    r: f64,
}

fn resolve(spec: &CriticalGapSpec, key: &ClassKey, cond: Conditioning) -> Result<Target> {
    let kind = spec.kind();
    let idx = spec.cell_index(key)?;
    let (w, r) = match (kind, cond) {
        (ModelKind::WaitingTime | ModelKind::BiValued, Conditioning::Wait(w)) if w >= 0.0 => (w, 0.0),
        (ModelKind::WaitingTime | ModelKind::BiValued, _) => {
            return Err(Error::Config(format!(
                "{kind} emulator gap needs a nonnegative waiting time"
            )))
        }
        (ModelKind::RejectedGaps, Conditioning::Rejected(r)) => (0.0, r as f64),
        (ModelKind::RejectedGaps, _) => {
            return Err(Error::Config("sor emulator gap needs a rejected-gap count".into()))
        }
        _ => (0.0, 0.0),
    };
    Ok(Target {
        kind,
        cell: spec.cell_params(idx),
        w,
        r,
    })
}

/// `int_0^inf (1 - p_A(g)) f_G(g) dg`.
///
/// Exact sample mean for an empirical law; adaptive quadrature in
/// probability space otherwise.
pub fn rejection_mass(
    spec: &CriticalGapSpec,
    key: &ClassKey,
    p: &PerceptionParams,
    d: &GapDistribution,
    cond: Conditioning,
    nodes: usize,
) -> Result<f64> {
    let t = resolve(spec, key, cond)?;
    let kernel = AcceptanceKernel::new(p.alpha_over_beta, p.v, p.k, nodes)?;
    let reject = |g: f64| {
        if g > 0.0 {
            kernel.prob(t.kind, &t.cell, g, t.w, t.r, false)
        } else {
            1.0
        }
    };
    let mass = match d {
        GapDistribution::Empirical { gaps } => {
            let terms: Vec<f64> = gaps.par_iter().with_min_len(1024).map(|&g| reject(g)).collect();
            pairwise_sum(&terms) / gaps.len() as f64
        }
        _ => {
            // Split at the gap whose mean perceived size equals the
            // (mean-conditioned) threshold, where the integrand drops.
            let tau = effective_tau(&t, p);
            let g_star = invert_monotone(|g| p.mean_perceived(g), tau, (0.0, tau))?;
            let q_star = d.cdf(g_star);
            let h = |q: f64| reject(d.smooth_quantile(q).unwrap_or(f64::NAN));
            let lower = integrate_adaptive(h, 0.0, q_star, QUAD_ABS_TOL, QUAD_REL_TOL)?;
            let upper = integrate_adaptive(h, q_star, 1.0, QUAD_ABS_TOL, QUAD_REL_TOL)?;
            lower + upper
        }
    };
    if !mass.is_finite() {
        return Err(Error::Numeric(format!("rejection mass evaluated to {mass}")));
    }
    Ok(mass)
}

fn effective_tau(t: &Target, p: &PerceptionParams) -> f64 {
    let c = &t.cell;
    match t.kind {
        ModelKind::WaitingTime => {
            let wp = if t.w > 0.0 { p.mean_perceived(t.w) } else { 0.0 };
            c[0] * (-wp / c[2]).exp() + c[1]
        }
        ModelKind::RejectedGaps => c[0] * (-t.r / c[2]).exp() + c[1],
        ModelKind::BiValued => {
            if t.w == 0.0 {
                c[0]
            } else {
                c[1]
            }
        }
        _ => c[0],
    }
}

/// Emulator critical gap in seconds.
pub fn emulator_gap(
    spec: &CriticalGapSpec,
    key: &ClassKey,
    p: &PerceptionParams,
    d: &GapDistribution,
    cond: Conditioning,
) -> Result<f64> {
    emulator_gap_with_nodes(spec, key, p, d, cond, DEFAULT_NODES)
}

pub fn emulator_gap_with_nodes(
    spec: &CriticalGapSpec,
    key: &ClassKey,
    p: &PerceptionParams,
    d: &GapDistribution,
    cond: Conditioning,
    nodes: usize,
) -> Result<f64> {
    let mass = rejection_mass(spec, key, p, d, cond, nodes)?;
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::Range(format!(
            "rejection mass {mass} for cell ({key}) is outside the open unit interval"
        )));
    }
    d.smooth_quantile(mass)
}

/// Emulator gap for a mixture of cells, e.g. one subject class facing the
/// observed blend of opposing classes. `weights` need not be normalized.
pub fn mixed_emulator_gap(
    spec: &CriticalGapSpec,
    weights: &[(ClassKey, f64)],
    p: &PerceptionParams,
    d: &GapDistribution,
    cond: Conditioning,
    nodes: usize,
) -> Result<f64> {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    if weights.is_empty() || !(total > 0.0) || weights.iter().any(|w| !(w.1 >= 0.0)) {
        return Err(Error::Config("cell weights must be nonnegative with a positive sum".into()));
    }
    let mut mass = 0.0;
    for (key, w) in weights {
        if *w > 0.0 {
            mass += w / total * rejection_mass(spec, key, p, d, cond, nodes)?;
        }
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::Range(format!(
            "mixed rejection mass {mass} is outside the open unit interval"
        )));
    }
    d.smooth_quantile(mass)
}

/// `tau_e` along a grid of waiting times or rejected-gap counts.
pub fn emulator_profile(
    spec: &CriticalGapSpec,
    key: &ClassKey,
    p: &PerceptionParams,
    d: &GapDistribution,
    grid: &[Conditioning],
    nodes: usize,
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::Usage("emulator profile grid is empty".into()));
    }
    let values: Vec<f64> = grid
        .iter()
        .map(|c| match *c {
            Conditioning::Wait(w) => Ok(w),
            Conditioning::Rejected(r) => Ok(r as f64),
            Conditioning::None => Err(Error::Usage("profile grid needs w or r values".into())),
        })
        .collect::<Result<_>>()?;
    if values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Usage("emulator profile grid must be sorted".into()));
    }
    grid.par_iter()
        .zip(values.par_iter())
        .map(|(c, &x)| Ok((x, emulator_gap_with_nodes(spec, key, p, d, *c, nodes)?)))
        .collect()
}

/// Writes a profile as CSV with header `conditioning_value,tau_e`.
pub fn write_profile_csv<W: Write>(out: W, profile: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["conditioning_value", "tau_e"])?;
    for (x, t) in profile {
        w.write_record([x.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
