use serde::{Deserialize, Serialize};

use super::{ClassKey, ModelKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTau {
    pub subject: String,
    pub tau_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTau {
    pub subject: String,
    pub opposing: String,
    pub tau_scaled: f64,
}

/// `tau = a e^{-x/l} + c`. For waiting-time specs `l` is beta-scaled seconds;
/// for rejected-gap specs it is a plain count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDecay {
    pub subject: String,
    pub opposing: String,
    pub a_scaled: f64,
    pub c_scaled: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBiValued {
    pub subject: String,
    pub opposing: String,
    pub tau_zero_scaled: f64,
    pub tau_nonzero_scaled: f64,
}

/// A critical-gap structure with all values in units of `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CriticalGapSpec {
    #[serde(rename = "const")]
    Constant { tau_scaled: f64 },
    #[serde(rename = "s")]
    BySubject { cells: Vec<SubjectTau> },
    #[serde(rename = "so")]
    BySubjectOpposing { cells: Vec<CellTau> },
    #[serde(rename = "sow")]
    WaitingTime { cells: Vec<CellDecay> },
    #[serde(rename = "sor")]
    RejectedGaps { cells: Vec<CellDecay> },
    #[serde(rename = "so2")]
    BiValued { cells: Vec<CellBiValued> },
}

impl CriticalGapSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            CriticalGapSpec::Constant { .. } => ModelKind::Constant,
            CriticalGapSpec::BySubject { .. } => ModelKind::BySubject,
            CriticalGapSpec::BySubjectOpposing { .. } => ModelKind::BySubjectOpposing,
            CriticalGapSpec::WaitingTime { .. } => ModelKind::WaitingTime,
            CriticalGapSpec::RejectedGaps { .. } => ModelKind::RejectedGaps,
            CriticalGapSpec::BiValued { .. } => ModelKind::BiValued,
        }
    }

    /// Cell keys in storage order. A constant spec has one cell with an empty
    /// subject label that matches every observation.
    pub fn cell_keys(&self) -> Vec<ClassKey> {
        match self {
            CriticalGapSpec::Constant { .. } => vec![ClassKey::subject_only("")],
            CriticalGapSpec::BySubject { cells } => cells
                .iter()
                .map(|c| ClassKey::subject_only(c.subject.clone()))
                .collect(),
            CriticalGapSpec::BySubjectOpposing { cells } => cells
                .iter()
                .map(|c| ClassKey::new(c.subject.clone(), c.opposing.clone()))
                .collect(),
            CriticalGapSpec::WaitingTime { cells } | CriticalGapSpec::RejectedGaps { cells } => cells
                .iter()
                .map(|c| ClassKey::new(c.subject.clone(), c.opposing.clone()))
                .collect(),
            CriticalGapSpec::BiValued { cells } => cells
                .iter()
                .map(|c| ClassKey::new(c.subject.clone(), c.opposing.clone()))
                .collect(),
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            CriticalGapSpec::Constant { .. } => 1,
            CriticalGapSpec::BySubject { cells } => cells.len(),
            CriticalGapSpec::BySubjectOpposing { cells } => cells.len(),
            CriticalGapSpec::WaitingTime { cells } | CriticalGapSpec::RejectedGaps { cells } => {
                cells.len()
            }
            CriticalGapSpec::BiValued { cells } => cells.len(),
        }
    }

    /// Number of free critical-gap parameters.
    pub fn n_params(&self) -> usize {
        self.n_cells() * self.kind().cell_arity()
    }

    /// Index of the cell matching `key`.
    pub fn cell_index(&self, key: &ClassKey) -> Result<usize> {
        let kind = self.kind();
        if kind == ModelKind::Constant {
            return Ok(0);
        }
        let keys = self.cell_keys();
        keys.iter()
            .position(|k| {
                k.subject == key.subject
                    && (!kind.uses_opposing() || k.opposing.is_some() && k.opposing == key.opposing)
            })
            .ok_or_else(|| {
                Error::Config(format!("class key ({key}) not present in {kind} spec"))
            })
    }

    /// Parameters of cell `idx` in the order of [`ModelKind::cell_param_names`].
    pub fn cell_params(&self, idx: usize) -> Vec<f64> {
        match self {
            CriticalGapSpec::Constant { tau_scaled } => vec![*tau_scaled],
            CriticalGapSpec::BySubject { cells } => vec![cells[idx].tau_scaled],
            CriticalGapSpec::BySubjectOpposing { cells } => vec![cells[idx].tau_scaled],
            CriticalGapSpec::WaitingTime { cells } | CriticalGapSpec::RejectedGaps { cells } => {
                let c = &cells[idx];
                vec![c.a_scaled, c.c_scaled, c.l]
            }
            CriticalGapSpec::BiValued { cells } => {
                vec![cells[idx].tau_zero_scaled, cells[idx].tau_nonzero_scaled]
            }
        }
    }

    /// All cell parameters concatenated in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        (0..self.n_cells())
            .flat_map(|i| self.cell_params(i))
            .collect()
    }

    /// Builds a spec of `kind` over `keys` from flat parameters.
    pub fn from_flat(kind: ModelKind, keys: &[ClassKey], params: &[f64]) -> Result<Self> {
        let ar = kind.cell_arity();
        let n_cells = if kind == ModelKind::Constant { 1 } else { keys.len() };
        if params.len() != ar * n_cells {
            return Err(Error::Config(format!(
                "{kind} spec over {n_cells} cells needs {} parameters, got {}",
                ar * n_cells,
                params.len()
            )));
        }
        let opp = |k: &ClassKey| -> Result<String> {
            k.opposing
                .clone()
                .ok_or_else(|| Error::Config(format!("{kind} spec needs opposing class in key ({k})")))
        };
        let spec = match kind {
            ModelKind::Constant => CriticalGapSpec::Constant {
                tau_scaled: params[0],
            },
            ModelKind::BySubject => CriticalGapSpec::BySubject {
                cells: keys
                    .iter()
                    .zip(params)
                    .map(|(k, &t)| SubjectTau {
                        subject: k.subject.clone(),
                        tau_scaled: t,
                    })
                    .collect(),
            },
            ModelKind::BySubjectOpposing => CriticalGapSpec::BySubjectOpposing {
                cells: keys
                    .iter()
                    .zip(params)
                    .map(|(k, &t)| {
                        Ok(CellTau {
                            subject: k.subject.clone(),
                            opposing: opp(k)?,
                            tau_scaled: t,
                        })
                    })
                    .collect::<Result<_>>()?,
            },
            ModelKind::WaitingTime | ModelKind::RejectedGaps => {
                let cells = keys
                    .iter()
                    .zip(params.chunks(3))
                    .map(|(k, p)| {
                        Ok(CellDecay {
                            subject: k.subject.clone(),
                            opposing: opp(k)?,
                            a_scaled: p[0],
                            c_scaled: p[1],
                            l: p[2],
                        })
                    })
                    .collect::<Result<_>>()?;
                if kind == ModelKind::WaitingTime {
                    CriticalGapSpec::WaitingTime { cells }
                } else {
                    CriticalGapSpec::RejectedGaps { cells }
                }
            }
            ModelKind::BiValued => CriticalGapSpec::BiValued {
                cells: keys
                    .iter()
                    .zip(params.chunks(2))
                    .map(|(k, p)| {
                        Ok(CellBiValued {
                            subject: k.subject.clone(),
                            opposing: opp(k)?,
                            tau_zero_scaled: p[0],
                            tau_nonzero_scaled: p[1],
                        })
                    })
                    .collect::<Result<_>>()?,
            },
        };
        Ok(spec)
    }

    /// Checks positivity and that no cell is listed twice.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind();
        if self.n_cells() == 0 {
            return Err(Error::Config(format!("{kind} spec has no cells")));
        }
        let keys = self.cell_keys();
        for (i, k) in keys.iter().enumerate() {
            if keys[..i].contains(k) {
                return Err(Error::Config(format!("duplicate cell ({k}) in {kind} spec")));
            }
            for (name, &x) in kind.cell_param_names().iter().zip(self.cell_params(i).iter()) {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(Error::Config(format!(
                        "{name} must be positive and finite in cell ({k}), got {x}"
                    )));
                }
            }
        }
        Ok(())
    }
}
