//! Average waiting times.
//!
//! A driver who accepts the first gap larger than `tau_e` out of an iid gap
//! stream waits, on average, `E[G; G <= tau_e] / (1 - F_G(tau_e))`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::emulator::mixed_emulator_gap;
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::gapdist::GapDistribution;
use crate::models::{ClassKey, Conditioning, ModelKind};

/// Computed average waiting time for threshold `tau_e`, seconds.
pub fn c_awt(tau_e: f64, d: &GapDistribution) -> Result<f64> {
    if !(tau_e >= 0.0) || !tau_e.is_finite() {
        return Err(Error::domain(format!("threshold must be nonnegative, got {tau_e}")));
    }
    let accept = 1.0 - d.cdf(tau_e);
    if !(accept > 0.0) {
        return Err(Error::InfiniteWait(tau_e));
    }
    Ok(d.mean_below(tau_e) / accept)
}

/// Observed average waiting times over a selection of vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedWait {
    /// Mean recorded waiting time on the accepted gap.
    pub recorded: f64,
    /// Mean sum of rejected gap sizes.
    pub rejected_sum: f64,
    pub vehicles: usize,
}

/// Observed average waiting time, optionally for one subject class.
pub fn o_awt(data: &Dataset, subject: Option<&str>) -> Result<f64> {
    Ok(observed_wait(data, subject)?.recorded)
}

/// Both waiting-time definitions: the recorded `waiting_time_s` of the
/// accepted row and the sum of the vehicle's rejected gaps.
pub fn observed_wait(data: &Dataset, subject: Option<&str>) -> Result<ObservedWait> {
    let (mut rec, mut sum, mut n) = (0.0, 0.0, 0usize);
    for v in data.vehicles() {
        let last = v.last().expect("vehicles are nonempty");
        if subject.is_some_and(|s| s != last.subject_class) || !last.accepted {
            continue;
        }
        rec += last.waiting_time;
        sum += v[..v.len() - 1].iter().map(|o| o.gap_size).sum::<f64>();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Dataset(match subject {
            Some(s) => format!("no accepted gaps for subject class '{s}'"),
            None => "no accepted gaps".into(),
        }));
    }
    Ok(ObservedWait {
        recorded: rec / n as f64,
        rejected_sum: sum / n as f64,
        vehicles: n,
    })
}

/// Share of observed gaps falling in each cell of `kind`, optionally for one
/// subject class.
pub fn cell_weights(data: &Dataset, kind: ModelKind, subject: Option<&str>) -> Vec<(ClassKey, f64)> {
    data.cells(kind)
        .into_iter()
        .filter(|k| kind == ModelKind::Constant || subject.is_none_or(|s| k.subject == s))
        .map(|k| {
            let n = data
                .observations()
                .iter()
                .filter(|o| subject.is_none_or(|s| o.subject_class == s))
                .filter(|o| {
                    kind == ModelKind::Constant
                        || o.subject_class == k.subject
                            && k.opposing.as_ref().is_none_or(|c| *c == o.opposing_class)
                })
                .count();
            (k, n as f64)
        })
        .collect()
}

/// Conditioning of a vehicle's first gap.
pub fn first_gap(kind: ModelKind) -> Conditioning {
    match kind {
        ModelKind::WaitingTime | ModelKind::BiValued => Conditioning::Wait(0.0),
        ModelKind::RejectedGaps => Conditioning::Rejected(0),
        _ => Conditioning::None,
    }
}

/// One line of a computed-versus-observed waiting time comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwtRow {
    /// Subject class, or `None` for all vehicles.
    pub subject: Option<String>,
    pub tau_e: f64,
    pub c_awt: f64,
    pub o_awt: ObservedWait,
}

/// C-AWT from the fitted emulator gap next to O-AWT, per subject class and
/// overall. The emulator gap mixes the cells a class faces in proportion to
/// their observed gap counts, at first-gap conditioning.
pub fn awt_report(data: &Dataset, fit: &FitResult) -> Result<Vec<AwtRow>> {
    let d = &fit.gap_distribution;
    let mut subjects: Vec<Option<String>> = data
        .classes()
        .subject
        .iter()
        .filter(|s| data.observations().iter().any(|o| &o.subject_class == *s))
        .map(|s| Some(s.clone()))
        .collect();
    subjects.push(None);
    subjects
        .into_iter()
        .map(|s| {
            let weights = cell_weights(data, fit.model, s.as_deref());
            let tau_e = mixed_emulator_gap(
                &fit.spec,
                &weights,
                &fit.perception,
                d,
                first_gap(fit.model),
                fit.config.nodes,
            )?;
            Ok(AwtRow {
                c_awt: c_awt(tau_e, d)?,
                o_awt: observed_wait(data, s.as_deref())?,
                subject: s,
                tau_e,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gapdist::{fit, GapFamily};
    use crate::models::{ClassSets, GapObservation};

    fn row(v: &str, i: u32, g: f64, s: &str, w: f64, acc: bool) -> GapObservation {
        GapObservation {
            vehicle_id: v.into(),
            gap_index: i,
            gap_size: g,
            subject_class: s.into(),
            opposing_class: "S".into(),
            waiting_time: w,
            rejected_count: i - 1,
            accepted: acc,
        }
    }

    #[test]
    fn exponential_closed_form() {
        let d = GapDistribution::exponential(0.5).unwrap();
        let expect = (2.0 - 6.0 * (-2.0f64).exp()) / (-2.0f64).exp();
        let c = c_awt(4.0, &d).unwrap();
        assert!((c - expect).abs() < 1e-12);
        // Discrete-event oracle, 1e6 vehicles (numpy, seed 12345): 8.78036
        assert!((c - 8.78036).abs() / 8.78036 < 0.02);
        assert!((c - 8.778).abs() < 1e-3);
        assert_eq!(c_awt(0.0, &d).unwrap(), 0.0);
    }

    #[test]
    fn no_acceptable_gap() {
        let d = fit(&[1.0, 2.0, 3.0], GapFamily::Empirical).unwrap();
        assert!(matches!(c_awt(3.0, &d), Err(Error::InfiniteWait(_))));
        assert!(c_awt(2.5, &d).is_ok());
    }

    #[test]
    fn c_awt_increasing() {
        let d = GapDistribution::lognormal(1.2, 0.5).unwrap();
        let mut prev = -1.0;
        for i in 1..80 {
            let c = c_awt(0.1 * i as f64, &d).unwrap();
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn observed_waits() {
        let rows = vec![
            row("a", 1, 2.0, "2", 0.0, false),
            row("a", 2, 3.0, "2", 2.0, false),
            row("a", 3, 6.0, "2", 5.0, true),
            row("b", 1, 7.0, "4", 0.0, true),
        ];
        let d = Dataset::from_observations(rows, ClassSets::default()).unwrap();
        assert_eq!(o_awt(&d, Some("2")).unwrap(), 5.0);
        assert_eq!(o_awt(&d, Some("4")).unwrap(), 0.0);
        assert_eq!(o_awt(&d, None).unwrap(), 2.5);
        assert_eq!(observed_wait(&d, Some("2")).unwrap().rejected_sum, 5.0);
        assert!(o_awt(&d, Some("9")).is_err());
    }
}
