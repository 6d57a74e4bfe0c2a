//! Acceptance probabilities with analytic derivatives.
//!
//! Natural parameter order for a likelihood is
//! `[alpha/beta, v, k, cell_0 params.., cell_1 params.., ..]`.

use rayon::prelude::*;

use super::{ClassKey, GapObservation, ModelKind, PROB_CEIL_GAP, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{normal_cdf, normal_pdf, pairwise_sum, GaussHermite, LognormalRule, UnitMeanLognormal};

/// Perception-dependent quantities shared by every observation of one
/// likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct AcceptanceKernel {
    a: f64,
    k: f64,
    lambda: f64,
    sigma: f64,
    half: f64,
    u: Vec<f64>,
    wt: Vec<f64>,
    du_dlam: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ObsTerm {
    pub ll: f64,
    /// d ll / d(alpha/beta, lambda, k, cell params)
    pub d: [f64; 6],
    pub clamped: bool,
}

impl AcceptanceKernel {
    pub fn new(alpha_over_beta: f64, v: f64, k: f64, nodes: usize) -> Result<Self> {
        let gh = GaussHermite::new(nodes)?;
        Self::with_rule(alpha_over_beta, v, k, &gh)
    }

    pub fn with_rule(alpha_over_beta: f64, v: f64, k: f64, gh: &GaussHermite) -> Result<Self> {
        if !(alpha_over_beta >= 0.0 && k > 0.0) || !alpha_over_beta.is_finite() || !k.is_finite() {
            return Err(Error::domain(format!(
                "invalid perception parameters alpha/beta = {alpha_over_beta}, k = {k}"
            )));
        }
        let dist = UnitMeanLognormal::new(v)?;
        let rule = LognormalRule::new(gh, &dist);
        let lambda = dist.sigma_sq();
        let sigma = dist.sigma();
        let du_dlam = rule
            .points()
            .iter()
            .zip(rule.std_normal())
            .map(|(&u, &s)| u * (-0.5 + s / (2.0 * sigma)))
            .collect();
        Ok(Self {
            a: alpha_over_beta,
            k,
            lambda,
            sigma,
            half: 0.5 * lambda,
            u: rule.points().to_vec(),
            wt: rule.weights().to_vec(),
            du_dlam,
        })
    }

    /// `(P(accept), P(reject))`, each computed directly.
    pub fn probs(&self, kind: ModelKind, cell: &[f64], g: f64, w: f64, r: f64) -> (f64, f64) {
        (
            self.eval(kind, cell, g, w, r, true, false).0,
            self.eval(kind, cell, g, w, r, false, false).0,
        )
    }

    /// Probability of the given outcome.
    pub fn prob(&self, kind: ModelKind, cell: &[f64], g: f64, w: f64, r: f64, accepted: bool) -> f64 {
        self.eval(kind, cell, g, w, r, accepted, false).0
    }

    /// Log-probability of the outcome, clamped, with its gradient.
    pub fn term(
        &self,
        kind: ModelKind,
        cell: &[f64],
        obs: &PreparedObs,
        grad: bool,
    ) -> ObsTerm {
        let (p, dp) = self.eval(kind, cell, obs.g, obs.w, obs.r, obs.accepted, grad);
        let (lo, hi) = if obs.accepted {
            (PROB_FLOOR, 1.0 - PROB_CEIL_GAP)
        } else {
            (PROB_CEIL_GAP, 1.0 - PROB_FLOOR)
        };
        if !(p >= lo) || p > hi {
            let pc = if p > hi { hi } else { lo };
            return ObsTerm {
                ll: pc.ln(),
                d: [0.0; 6],
                clamped: true,
            };
        }
        let mut d = [0.0; 6];
        if grad {
            for (di, dpi) in d.iter_mut().zip(dp) {
                *di = dpi / p;
            }
        }
        ObsTerm {
            ll: p.ln(),
            d,
            clamped: false,
        }
    }

    /// Probability of the outcome and its derivative with respect to
    /// `(alpha/beta, lambda, k, cell params)`.
    #[allow(clippy::too_many_arguments)]
    fn eval(
        &self,
        kind: ModelKind,
        cell: &[f64],
        g: f64,
        w: f64,
        r: f64,
        accepted: bool,
        grad: bool,
    ) -> (f64, [f64; 6]) {
        let eg = (-g / self.k).exp();
        let bias = self.a * eg + 1.0;
        let ln_d = (bias * g).ln();
        let dlnd_da = eg / bias;
        let dlnd_dk = self.a * eg * g / (self.k * self.k) / bias;

        if kind == ModelKind::WaitingTime && w > 0.0 {
            return self.eval_waiting(cell, w, ln_d, dlnd_da, dlnd_dk, accepted, grad);
        }

        let (tau, dtau) = match kind {
            ModelKind::Constant | ModelKind::BySubject | ModelKind::BySubjectOpposing => {
                (cell[0], [1.0, 0.0, 0.0])
            }
            ModelKind::WaitingTime => (cell[0] + cell[1], [1.0, 1.0, 0.0]),
            ModelKind::RejectedGaps => {
                let e = (-r / cell[2]).exp();
                (
                    cell[0] * e + cell[1],
                    [e, 1.0, cell[0] * e * r / (cell[2] * cell[2])],
                )
            }
            ModelKind::BiValued => {
                if w == 0.0 {
                    (cell[0], [1.0, 0.0, 0.0])
                } else {
                    (cell[1], [0.0, 1.0, 0.0])
                }
            }
        };
        let l = tau.ln() - ln_d;
        let z = (l + self.half) / self.sigma;
        let (p, dp_dz) = if accepted {
            (normal_cdf(-z), -normal_pdf(z))
        } else {
            (normal_cdf(z), normal_pdf(z))
        };
        if !grad {
            return (p, [0.0; 6]);
        }
        let dz_dtau = 1.0 / (self.sigma * tau);
        let out = [
            -dp_dz * dlnd_da / self.sigma,
            dp_dz * (self.half - l) / (2.0 * self.lambda * self.sigma),
            -dp_dz * dlnd_dk / self.sigma,
            dp_dz * dz_dtau * dtau[0],
            dp_dz * dz_dtau * dtau[1],
            dp_dz * dz_dtau * dtau[2],
        ];
        (p, out)
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_waiting(
        &self,
        cell: &[f64],
        w: f64,
        ln_d: f64,
        dlnd_da: f64,
        dlnd_dk: f64,
        accepted: bool,
        grad: bool,
    ) -> (f64, [f64; 6]) {
        let (ca, cc, cl) = (cell[0], cell[1], cell[2]);
        let ew = (-w / self.k).exp();
        let m = (self.a * ew + 1.0) * w;
        let sign = if accepted { -1.0 } else { 1.0 };

        let mut p = 0.0;
        let (mut s_q, mut s_lam, mut t_m, mut t_ulam) = (0.0, 0.0, 0.0, 0.0);
        let (mut t_a, mut t_c, mut t_l) = (0.0, 0.0, 0.0);
        for j in 0..self.u.len() {
            let u = self.u[j];
            let e = (-m * u / cl).exp();
            let tau = ca * e + cc;
            let l = tau.ln() - ln_d;
            let z = (l + self.half) / self.sigma;
            p += self.wt[j] * normal_cdf(sign * z);
            if grad {
                let q = self.wt[j] * sign * normal_pdf(z);
                let zt = q / (self.sigma * tau);
                s_q += q;
                s_lam += q * (self.half - l);
                let ae = ca * e;
                t_m -= zt * ae * u / cl;
                t_ulam -= zt * ae * m / cl * self.du_dlam[j];
                t_a += zt * e;
                t_c += zt;
                t_l += zt * ae * m * u / (cl * cl);
            }
        }
        if !grad {
            return (p, [0.0; 6]);
        }
        let dm_da = ew * w;
        let dm_dk = self.a * ew * w * w / (self.k * self.k);
        let out = [
            t_m * dm_da - s_q * dlnd_da / self.sigma,
            t_ulam + s_lam / (2.0 * self.lambda * self.sigma),
            t_m * dm_dk - s_q * dlnd_dk / self.sigma,
            t_a,
            t_c,
            t_l,
        ];
        (p, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PreparedObs {
    pub g: f64,
    pub w: f64,
    pub r: f64,
    pub accepted: bool,
    pub cell: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub ll: f64,
    /// Gradient in natural parameters; empty unless requested.
    pub grad: Vec<f64>,
    pub clamped: usize,
}

/// Log-likelihood of a fixed dataset as a function of natural parameters.
#[derive(Debug, Clone)]
pub(crate) struct Likelihood {
    kind: ModelKind,
    n_cells: usize,
    obs: Vec<PreparedObs>,
    gh: GaussHermite,
}

/// Index of the cell in `keys` that `obs` falls in.
fn locate_cell(kind: ModelKind, keys: &[ClassKey], obs: &GapObservation) -> Result<usize> {
    if kind == ModelKind::Constant {
        return Ok(0);
    }
    keys.iter()
        .position(|k| {
            k.subject == obs.subject_class
                && (!kind.uses_opposing() || k.opposing.as_deref() == Some(obs.opposing_class.as_str()))
        })
        .ok_or_else(|| {
            let key = if kind.uses_opposing() {
                obs.key()
            } else {
                ClassKey::subject_only(obs.subject_class.clone())
            };
            Error::Config(format!("class key ({key}) not present in {kind} spec"))
        })
}

impl Likelihood {
    pub fn new(kind: ModelKind, keys: &[ClassKey], data: &[GapObservation], nodes: usize) -> Result<Self> {
        let n_cells = if kind == ModelKind::Constant { 1 } else { keys.len() };
        let obs = data
            .iter()
            .map(|o| {
                Ok(PreparedObs {
                    g: o.gap_size,
                    w: o.waiting_time,
                    r: o.rejected_count as f64,
                    accepted: o.accepted,
                    cell: locate_cell(kind, keys, o)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            n_cells,
            obs,
            gh: GaussHermite::new(nodes)?,
        })
    }

    pub fn n_params(&self) -> usize {
        3 + self.n_cells * self.kind.cell_arity()
    }

    pub fn evaluate(&self, theta: &[f64], grad: bool) -> Evaluation {
        debug_assert_eq!(theta.len(), self.n_params());
        let fail = || Evaluation {
            ll: f64::NEG_INFINITY,
            grad: if grad { vec![0.0; theta.len()] } else { Vec::new() },
            clamped: 0,
        };
        let kernel = match AcceptanceKernel::with_rule(theta[0], theta[1], theta[2], &self.gh) {
            Ok(k) => k,
            Err(_) => return fail(),
        };
        let ar = self.kind.cell_arity();
        let cells = &theta[3..];
        let terms: Vec<ObsTerm> = self
            .obs
            .par_iter()
            .with_min_len(256)
            .map(|o| kernel.term(self.kind, &cells[o.cell * ar..(o.cell + 1) * ar], o, grad))
            .collect();
        let lls: Vec<f64> = terms.iter().map(|t| t.ll).collect();
        let ll = pairwise_sum(&lls);
        let clamped = terms.iter().filter(|t| t.clamped).count();
        let mut g = Vec::new();
        if grad {
            g = vec![0.0; theta.len()];
            for (t, o) in terms.iter().zip(&self.obs) {
                g[0] += t.d[0];
                g[1] += t.d[1];
                g[2] += t.d[2];
                let base = 3 + o.cell * ar;
                for i in 0..ar {
                    g[base + i] += t.d[3 + i];
                }
            }
            // lambda = ln(1 + v)
            g[1] /= 1.0 + theta[1];
        }
        if !ll.is_finite() {
            return fail();
        }
        Evaluation { ll, grad: g, clamped }
    }
}
