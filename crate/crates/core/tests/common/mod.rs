#![allow(dead_code)]

use critgap::data::{MixEntry, SimulationParams};
use critgap::gapdist::GapDistribution;
use critgap::models::{CellBiValued, CellDecay, CellTau, ClassSets, CriticalGapSpec, SubjectTau};
use critgap::perception::PerceptionParams;

/// Mean observed gap at the first site, seconds.
pub const MEAN_GAP: f64 = 3.78;

pub fn exp_gaps() -> GapDistribution {
    GapDistribution::exponential(1.0 / MEAN_GAP).unwrap()
}

pub fn single_cell_mix() -> Vec<MixEntry> {
    vec![MixEntry {
        subject: "4".into(),
        opposing: "B".into(),
        prob: 1.0,
    }]
}

/// Class shares of the first site: 463 two-wheelers, 1055 four-wheelers,
/// opposing classes split evenly.
pub fn site_mix() -> Vec<MixEntry> {
    let p2 = 463.0 / 1518.0;
    let mut out = Vec::new();
    for (s, ps) in [("2", p2), ("4", 1.0 - p2)] {
        for o in ["S", "B"] {
            out.push(MixEntry {
                subject: s.into(),
                opposing: o.into(),
                prob: 0.5 * ps,
            });
        }
    }
    out
}

pub fn constant_truth() -> SimulationParams {
    SimulationParams {
        perception: PerceptionParams::relaxed(7.39, 0.47, 0.32).unwrap(),
        spec: CriticalGapSpec::Constant { tau_scaled: 4.33 },
        gaps: exp_gaps(),
        class_mix: single_cell_mix(),
        classes: None,
    }
}

pub fn decay(s: &str, o: &str, a: f64, c: f64, l: f64) -> CellDecay {
    CellDecay {
        subject: s.into(),
        opposing: o.into(),
        a_scaled: a,
        c_scaled: c,
        l,
    }
}

/// Waiting-time truth with the first site's (4,B) cell.
pub fn waiting_truth() -> SimulationParams {
    SimulationParams {
        perception: PerceptionParams::relaxed(7.39, 0.46, 0.24).unwrap(),
        spec: CriticalGapSpec::WaitingTime {
            cells: vec![decay("4", "B", 2.77, 3.98, 1.23)],
        },
        gaps: exp_gaps(),
        class_mix: single_cell_mix(),
        classes: None,
    }
}

/// Waiting-time truth over all four cells of the first site.
pub fn waiting_truth_all_cells() -> SimulationParams {
    SimulationParams {
        perception: PerceptionParams::relaxed(7.39, 0.46, 0.24).unwrap(),
        spec: CriticalGapSpec::WaitingTime {
            cells: vec![
                decay("2", "S", 1.50, 3.06, 1.71),
                decay("2", "B", 2.15, 3.62, 0.79),
                decay("4", "S", 3.02, 2.89, 1.88),
                decay("4", "B", 2.77, 3.98, 1.23),
            ],
        },
        gaps: exp_gaps(),
        class_mix: site_mix(),
        classes: Some(ClassSets::default()),
    }
}

/// One spec of every kind over the default class sets.
pub fn specs_of_every_kind() -> Vec<CriticalGapSpec> {
    let cells = [("2", "S"), ("2", "B"), ("4", "S"), ("4", "B")];
    vec![
        CriticalGapSpec::Constant { tau_scaled: 4.0 },
        CriticalGapSpec::BySubject {
            cells: vec![
                SubjectTau {
                    subject: "2".into(),
                    tau_scaled: 3.5,
                },
                SubjectTau {
                    subject: "4".into(),
                    tau_scaled: 4.5,
                },
            ],
        },
        CriticalGapSpec::BySubjectOpposing {
            cells: cells
                .iter()
                .enumerate()
                .map(|(i, (s, o))| CellTau {
                    subject: s.to_string(),
                    opposing: o.to_string(),
                    tau_scaled: 3.0 + 0.5 * i as f64,
                })
                .collect(),
        },
        CriticalGapSpec::WaitingTime {
            cells: cells
                .iter()
                .enumerate()
                .map(|(i, (s, o))| decay(s, o, 1.5 + 0.4 * i as f64, 3.0 + 0.3 * i as f64, 0.8 + 0.3 * i as f64))
                .collect(),
        },
        CriticalGapSpec::RejectedGaps {
            cells: cells
                .iter()
                .enumerate()
                .map(|(i, (s, o))| decay(s, o, 2.0 + 0.2 * i as f64, 3.2 + 0.2 * i as f64, 1.0 + 0.5 * i as f64))
                .collect(),
        },
        CriticalGapSpec::BiValued {
            cells: cells
                .iter()
                .enumerate()
                .map(|(i, (s, o))| CellBiValued {
                    subject: s.to_string(),
                    opposing: o.to_string(),
                    tau_zero_scaled: 5.0 + 0.3 * i as f64,
                    tau_nonzero_scaled: 3.5 + 0.2 * i as f64,
                })
                .collect(),
        },
    ]
}
