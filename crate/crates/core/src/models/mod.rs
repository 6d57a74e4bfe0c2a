//! Critical-gap structures, per-gap acceptance probabilities and the
//! log-likelihood of a set of gap decisions.

mod kernel;
mod spec;

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::DEFAULT_NODES;
use crate::perception::PerceptionParams;

pub(crate) use kernel::{AcceptanceKernel, Likelihood};
pub use spec::{CellBiValued, CellDecay, CellTau, CriticalGapSpec, SubjectTau};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;
/// `p_A` is clamped to at most `1 - PROB_CEIL_GAP`.
pub const PROB_CEIL_GAP: f64 = 1e-15;

/// The six critical-gap structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "const")]
    Constant,
    #[serde(rename = "s")]
    BySubject,
    #[serde(rename = "so")]
    BySubjectOpposing,
    #[serde(rename = "sow")]
    WaitingTime,
    #[serde(rename = "sor")]
    RejectedGaps,
    #[serde(rename = "so2")]
    BiValued,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Constant,
        ModelKind::BySubject,
        ModelKind::BySubjectOpposing,
        ModelKind::WaitingTime,
        ModelKind::RejectedGaps,
        ModelKind::BiValued,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ModelKind::Constant => "const",
            ModelKind::BySubject => "s",
            ModelKind::BySubjectOpposing => "so",
            ModelKind::WaitingTime => "sow",
            ModelKind::RejectedGaps => "sor",
            ModelKind::BiValued => "so2",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .ok_or_else(|| Error::Usage(format!("unknown model kind '{code}'")))
    }

    /// Number of critical-gap parameters per class cell.
    pub fn cell_arity(self) -> usize {
        match self {
            ModelKind::Constant | ModelKind::BySubject | ModelKind::BySubjectOpposing => 1,
            ModelKind::WaitingTime | ModelKind::RejectedGaps => 3,
            ModelKind::BiValued => 2,
        }
    }

    /// Names of the per-cell parameters, in storage order.
    pub fn cell_param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Constant | ModelKind::BySubject | ModelKind::BySubjectOpposing => {
                &["tau_scaled"]
            }
            ModelKind::WaitingTime => &["a_scaled", "c_scaled", "l_scaled"],
            ModelKind::RejectedGaps => &["a_scaled", "c_scaled", "l"],
            ModelKind::BiValued => &["tau_zero_scaled", "tau_nonzero_scaled"],
        }
    }

    pub fn uses_subject(self) -> bool {
        self != ModelKind::Constant
    }

    pub fn uses_opposing(self) -> bool {
        !matches!(self, ModelKind::Constant | ModelKind::BySubject)
    }

    fn lattice_level(self) -> u8 {
        match self {
            ModelKind::Constant => 0,
            ModelKind::BySubject => 1,
            ModelKind::BySubjectOpposing => 2,
            _ => 3,
        }
    }

    /// True when `self` is a restriction of `other`:
    /// `const ⊂ s ⊂ so ⊂ {so2, sow, sor}`.
    pub fn is_nested_in(self, other: ModelKind) -> bool {
        self == other || self.lattice_level() < other.lattice_level()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Declared class labels: `SV` for subject vehicles, `OV` for opposing vehicles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSets {
    pub subject: Vec<String>,
    pub opposing: Vec<String>,
}

impl Default for ClassSets {
    fn default() -> Self {
        Self {
            subject: vec!["2".into(), "4".into()],
            opposing: vec!["S".into(), "B".into()],
        }
    }
}

impl ClassSets {
    pub fn subject_index(&self, label: &str) -> Option<usize> {
        self.subject.iter().position(|s| s == label)
    }

    pub fn opposing_index(&self, label: &str) -> Option<usize> {
        self.opposing.iter().position(|s| s == label)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, set) in [("subject", &self.subject), ("opposing", &self.opposing)] {
            if set.is_empty() {
                return Err(Error::Config(format!("{name} class set is empty")));
            }
            for (i, a) in set.iter().enumerate() {
                if set[..i].contains(a) {
                    return Err(Error::Config(format!("duplicate {name} class '{a}'")));
                }
            }
        }
        Ok(())
    }
}

/// Class cell an observation falls in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassKey {
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opposing: Option<String>,
}

impl ClassKey {
    pub fn new(subject: impl Into<String>, opposing: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            opposing: Some(opposing.into()),
        }
    }

    pub fn subject_only(subject: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            opposing: None,
        }
    }
}

impl fmt::Display for ClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.opposing {
            Some(o) => write!(f, "{},{}", self.subject, o),
            None => f.write_str(&self.subject),
        }
    }
}

/// One evaluated gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapObservation {
    pub vehicle_id: String,
    pub gap_index: u32,
    /// Gap size, seconds.
    pub gap_size: f64,
    pub subject_class: String,
    pub opposing_class: String,
    /// Time already waited when the gap arrives, seconds.
    pub waiting_time: f64,
    /// Gaps rejected before this one.
    pub rejected_count: u32,
    pub accepted: bool,
}

impl GapObservation {
    pub fn key(&self) -> ClassKey {
        ClassKey::new(self.subject_class.clone(), self.opposing_class.clone())
    }
}

/// What the critical gap is evaluated at, beyond the class cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conditioning {
    None,
    /// Waiting time. Perceived (beta-scaled) for [`tau_scaled_at`]; observed
    /// seconds for the emulator.
    Wait(f64),
    Rejected(u32),
}

/// Beta-scaled critical gap of `spec` in cell `key`.
///
/// For waiting-time specs `cond` carries the perceived waiting time; for
/// bi-valued specs only whether it is zero matters.
pub fn tau_scaled_at(spec: &CriticalGapSpec, key: &ClassKey, cond: Conditioning) -> Result<f64> {
    let idx = spec.cell_index(key)?;
    let params = spec.cell_params(idx);
    let kind = spec.kind();
    match kind {
        ModelKind::Constant | ModelKind::BySubject | ModelKind::BySubjectOpposing => Ok(params[0]),
        ModelKind::WaitingTime => match cond {
            Conditioning::Wait(wp) if wp >= 0.0 => Ok(params[0] * (-wp / params[2]).exp() + params[1]),
            _ => Err(Error::Config(
                "waiting-time critical gap needs a nonnegative perceived waiting time".into(),
            )),
        },
        ModelKind::RejectedGaps => match cond {
            Conditioning::Rejected(r) => {
                Ok(params[0] * (-(r as f64) / params[2]).exp() + params[1])
            }
            _ => Err(Error::Config(
                "rejected-gap critical gap needs a rejected-gap count".into(),
            )),
        },
        ModelKind::BiValued => match cond {
            Conditioning::Wait(w) if w >= 0.0 => Ok(if w == 0.0 { params[0] } else { params[1] }),
            _ => Err(Error::Config("bi-valued critical gap needs a waiting time".into())),
        },
    }
}

/// Probability that `obs` is accepted under `spec` and `p`.
pub fn accept_prob(obs: &GapObservation, spec: &CriticalGapSpec, p: &PerceptionParams) -> Result<f64> {
    accept_prob_with_nodes(obs, spec, p, DEFAULT_NODES)
}

pub fn accept_prob_with_nodes(
    obs: &GapObservation,
    spec: &CriticalGapSpec,
    p: &PerceptionParams,
    nodes: usize,
) -> Result<f64> {
    validate_observation(obs)?;
    let idx = spec.cell_index(&obs.key())?;
    let kernel = AcceptanceKernel::new(p.alpha_over_beta, p.v, p.k, nodes)?;
    let (acc, _) = kernel.probs(
        spec.kind(),
        &spec.cell_params(idx),
        obs.gap_size,
        obs.waiting_time,
        obs.rejected_count as f64,
    );
    if !acc.is_finite() {
        return Err(Error::Numeric(format!(
            "acceptance probability is {acc} for gap {} of vehicle {}",
            obs.gap_size, obs.vehicle_id
        )));
    }
    Ok(acc)
}

fn validate_observation(obs: &GapObservation) -> Result<()> {
    if !(obs.gap_size > 0.0) || !obs.gap_size.is_finite() {
        return Err(Error::domain(format!("gap size must be positive, got {}", obs.gap_size)));
    }
    if !(obs.waiting_time >= 0.0) || !obs.waiting_time.is_finite() {
        return Err(Error::domain(format!(
            "waiting time must be nonnegative, got {}",
            obs.waiting_time
        )));
    }
    Ok(())
}

/// Log-likelihood together with the number of clamped probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub clamped: usize,
}

/// `sum_i [d_i ln p_A(i) + (1 - d_i) ln(1 - p_A(i))]`.
pub fn log_likelihood(
    data: &[GapObservation],
    spec: &CriticalGapSpec,
    p: &PerceptionParams,
) -> Result<LogLikelihood> {
    log_likelihood_with_nodes(data, spec, p, DEFAULT_NODES)
}

pub fn log_likelihood_with_nodes(
    data: &[GapObservation],
    spec: &CriticalGapSpec,
    p: &PerceptionParams,
    nodes: usize,
) -> Result<LogLikelihood> {
    if data.is_empty() {
        return Err(Error::Dataset("log-likelihood of an empty dataset".into()));
    }
    for obs in data {
        validate_observation(obs)?;
    }
    spec.validate()?;
    let keys = spec.cell_keys();
    let lik = Likelihood::new(spec.kind(), &keys, data, nodes)?;
    let mut theta = vec![p.alpha_over_beta, p.v, p.k];
    theta.extend(spec.flat_params());
    let eval = lik.evaluate(&theta, false);
    Ok(LogLikelihood {
        value: eval.ll,
        clamped: eval.clamped,
    })
}
