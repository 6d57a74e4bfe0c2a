//! Gap-decision datasets: CSV ingestion, validation and simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gapdist::GapDistribution;
use crate::models::{ClassKey, ClassSets, CriticalGapSpec, GapObservation, ModelKind};
use crate::perception::{draw_error, PerceptionParams};

pub const HEADER: [&str; 8] = [
    "vehicle_id",
    "gap_index",
    "gap_size_s",
    "subject_class",
    "opposing_class",
    "waiting_time_s",
    "rejected_count",
    "accepted",
];

/// Longest gap sequence a simulated vehicle may face.
pub const MAX_GAPS_PER_VEHICLE: usize = 10_000;

/// Validated observations, grouped by vehicle (vehicles in id order, gaps in
/// index order).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: ClassSets,
    observations: Vec<GapObservation>,
    /// Start offset of each vehicle in `observations`, plus a final sentinel.
    bounds: Vec<usize>,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    vehicle_id: String,
    gap_index: u32,
    gap_size_s: f64,
    subject_class: String,
    opposing_class: String,
    waiting_time_s: f64,
    rejected_count: u32,
    accepted: u8,
}

impl Dataset {
    /// Groups, sorts and validates `rows`, each paired with the row number
    /// to cite in errors.
    fn build(classes: ClassSets, rows: Vec<(usize, GapObservation)>) -> Result<Self> {
        classes.validate()?;
        if rows.is_empty() {
            return Err(Error::Dataset("dataset has no observations".into()));
        }
        let mut groups: BTreeMap<String, Vec<(usize, GapObservation)>> = BTreeMap::new();
        for (row, o) in rows {
            groups.entry(o.vehicle_id.clone()).or_default().push((row, o));
        }
        let mut observations = Vec::new();
        let mut bounds = vec![0];
        for (_, mut seq) in groups {
            seq.sort_by_key(|(_, o)| o.gap_index);
            validate_vehicle(&classes, &seq)?;
            observations.extend(seq.into_iter().map(|(_, o)| o));
            bounds.push(observations.len());
        }
        Ok(Self {
            classes,
            observations,
            bounds,
        })
    }

    /// Validates observations given in any order.
    pub fn from_observations(observations: Vec<GapObservation>, classes: ClassSets) -> Result<Self> {
        let rows = observations.into_iter().enumerate().map(|(i, o)| (i + 1, o)).collect();
        Self::build(classes, rows)
    }

    /// Concatenation of whole vehicles without revalidation; vehicle ids may
    /// repeat. Used for resampling.
    pub(crate) fn resample_vehicles(&self, picks: &[usize]) -> Self {
        let mut observations = Vec::new();
        let mut bounds = vec![0];
        for &v in picks {
            observations.extend_from_slice(self.vehicle(v));
            bounds.push(observations.len());
        }
        Self {
            classes: self.classes.clone(),
            observations,
            bounds,
        }
    }

    /// Single-gap resampling; every drawn observation becomes its own group.
    pub(crate) fn resample_gaps(&self, picks: &[usize]) -> Self {
        let observations: Vec<GapObservation> =
            picks.iter().map(|&i| self.observations[i].clone()).collect();
        let bounds = (0..=observations.len()).collect();
        Self {
            classes: self.classes.clone(),
            observations,
            bounds,
        }
    }

    pub fn classes(&self) -> &ClassSets {
        &self.classes
    }

    pub fn observations(&self) -> &[GapObservation] {
        &self.observations
    }

    pub fn n_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn vehicle(&self, i: usize) -> &[GapObservation] {
        &self.observations[self.bounds[i]..self.bounds[i + 1]]
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &[GapObservation]> + '_ {
        self.bounds.windows(2).map(|b| &self.observations[b[0]..b[1]])
    }

    pub fn gap_sizes(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.gap_size).collect()
    }

    /// Class cells that occur in the data, in declared class-set order.
    pub fn cells(&self, kind: ModelKind) -> Vec<ClassKey> {
        let mut out = Vec::new();
        if kind == ModelKind::Constant {
            return vec![ClassKey::subject_only("")];
        }
        for s in &self.classes.subject {
            if kind.uses_opposing() {
                for o in &self.classes.opposing {
                    if self
                        .observations
                        .iter()
                        .any(|x| &x.subject_class == s && &x.opposing_class == o)
                    {
                        out.push(ClassKey::new(s.clone(), o.clone()));
                    }
                }
            } else if self.observations.iter().any(|x| &x.subject_class == s) {
                out.push(ClassKey::subject_only(s.clone()));
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical CSV form and the class sets.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.classes).expect("class sets serialize"));
        h.update(&buf);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for o in &self.observations {
            w.write_record([
                o.vehicle_id.clone(),
                o.gap_index.to_string(),
                o.gap_size.to_string(),
                o.subject_class.clone(),
                o.opposing_class.clone(),
                o.waiting_time.to_string(),
                o.rejected_count.to_string(),
                u8::from(o.accepted).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn validate_vehicle(classes: &ClassSets, seq: &[(usize, GapObservation)]) -> Result<()> {
    let err = |row: usize, reason: String| Err(Error::Data { row, reason });
    let n = seq.len();
    let first = &seq[0].1;
    for (j, (row, o)) in seq.iter().enumerate() {
        let row = *row;
        let v = &o.vehicle_id;
        if classes.subject_index(&o.subject_class).is_none() {
            return err(row, format!("unknown subject class '{}'", o.subject_class));
        }
        if classes.opposing_index(&o.opposing_class).is_none() {
            return err(row, format!("unknown opposing class '{}'", o.opposing_class));
        }
        if !(o.gap_size > 0.0) || !o.gap_size.is_finite() {
            return err(row, format!("gap size must be positive, got {}", o.gap_size));
        }
        if !(o.waiting_time >= 0.0) || !o.waiting_time.is_finite() {
            return err(row, format!("waiting time must be nonnegative, got {}", o.waiting_time));
        }
        if o.subject_class != first.subject_class {
            return err(row, format!("vehicle {v} changes subject class"));
        }
        if j > 0 && o.gap_index == seq[j - 1].1.gap_index {
            return err(row, format!("vehicle {v} repeats gap index {}", o.gap_index));
        }
        if o.rejected_count as usize != j {
            return err(
                row,
                format!("vehicle {v}: rejected_count {} on gap {} (expected {j})", o.rejected_count, j + 1),
            );
        }
        if j == 0 && o.waiting_time != 0.0 {
            return err(row, format!("vehicle {v}: first gap must have zero waiting time"));
        }
        if j > 0 && o.waiting_time < seq[j - 1].1.waiting_time {
            return err(row, format!("vehicle {v}: waiting time decreases"));
        }
        if o.accepted && j + 1 != n {
            return err(row, format!("vehicle {v}: accepted gap is not the last gap"));
        }
        if !o.accepted && j + 1 == n {
            return err(row, format!("vehicle {v}: last gap is not accepted"));
        }
    }
    Ok(())
}

/// Reads and validates a dataset. Reported row numbers are file line numbers.
pub fn read_csv<R: Read>(input: R, classes: ClassSets) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Data {
            row: 1,
            reason: format!(
                "header must be '{}', got '{}'",
                HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let raw: RawRow = rec.deserialize(Some(&header)).map_err(|e| Error::Data {
            row: line,
            reason: e.to_string(),
        })?;
        let accepted = match raw.accepted {
            0 => false,
            1 => true,
            x => {
                return Err(Error::Data {
                    row: line,
                    reason: format!("accepted must be 0 or 1, got {x}"),
                })
            }
        };
        rows.push((
            line,
            GapObservation {
                vehicle_id: raw.vehicle_id,
                gap_index: raw.gap_index,
                gap_size: raw.gap_size_s,
                subject_class: raw.subject_class,
                opposing_class: raw.opposing_class,
                waiting_time: raw.waiting_time_s,
                rejected_count: raw.rejected_count,
                accepted,
            },
        ));
    }
    Dataset::build(classes, rows)
}

pub fn load_csv(path: &Path, classes: ClassSets) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, classes)
}

/// Reads a class-set sidecar: `{"subject": [...], "opposing": [...]}`.
pub fn load_classes(path: &Path) -> Result<ClassSets> {
    let c: ClassSets = serde_json::from_reader(std::fs::File::open(path)?)?;
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub subject: String,
    pub opposing: String,
    pub prob: f64,
}

/// Everything needed to generate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub perception: PerceptionParams,
    pub spec: CriticalGapSpec,
    pub gaps: GapDistribution,
    pub class_mix: Vec<MixEntry>,
    #[serde(default)]
    pub classes: Option<ClassSets>,
}

struct Mix {
    /// (subject, cumulative marginal, [(opposing, cumulative conditional)])
    subjects: Vec<(String, f64, Vec<(String, f64)>)>,
}

impl Mix {
    fn new(entries: &[MixEntry]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("class mix is empty".into()));
        }
        let total: f64 = entries.iter().map(|e| e.prob).sum();
        if entries.iter().any(|e| !(e.prob >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "class mix probabilities must be nonnegative and sum to 1 (sum {total})"
            )));
        }
        let mut subjects: Vec<(String, f64, Vec<(String, f64)>)> = Vec::new();
        for e in entries {
            match subjects.iter_mut().find(|s| s.0 == e.subject) {
                Some(s) => s.2.push((e.opposing.clone(), e.prob)),
                None => subjects.push((e.subject.clone(), 0.0, vec![(e.opposing.clone(), e.prob)])),
            }
        }
        let mut cum = 0.0;
        for s in &mut subjects {
            let marg: f64 = s.2.iter().map(|o| o.1).sum();
            cum += marg;
            s.1 = cum / total;
            let mut c = 0.0;
            for o in &mut s.2 {
                c += o.1;
                o.1 = if marg > 0.0 { c / marg } else { 1.0 };
            }
        }
        Ok(Self { subjects })
    }

    fn pick<'a, T>(items: &'a [T], cum: impl Fn(&T) -> f64, u: f64) -> &'a T {
        items.iter().find(|x| u < cum(x)).unwrap_or(&items[items.len() - 1])
    }
}

/// Generates `n_vehicles` gap-decision sequences.
///
/// Each vehicle uses its own ChaCha8 stream (`seed`, stream = vehicle index),
/// so the output does not depend on scheduling.
pub fn simulate(params: &SimulationParams, n_vehicles: usize, seed: u64) -> Result<Dataset> {
    if n_vehicles == 0 {
        return Err(Error::Usage("n_vehicles must be at least 1".into()));
    }
    params.spec.validate()?;
    let mix = Mix::new(&params.class_mix)?;
    let kind = params.spec.kind();
    // Cell parameters for every mix entry, looked up once.
    let mut cell_params: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for e in &params.class_mix {
        let idx = params.spec.cell_index(&ClassKey::new(e.subject.clone(), e.opposing.clone()))?;
        cell_params.insert((e.subject.clone(), e.opposing.clone()), params.spec.cell_params(idx));
    }
    let classes = match &params.classes {
        Some(c) => c.clone(),
        None => derive_classes(&params.class_mix),
    };
    let p = params.perception;
    let err = p.error_dist();
    let width = n_vehicles.to_string().len();

    let per_vehicle: Vec<Result<Vec<GapObservation>>> = (0..n_vehicles)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let id = format!("v{:0width$}", i + 1);
            let us: f64 = rng.random();
            let (subject, _, opp) = Mix::pick(&mix.subjects, |s| s.1, us);
            let mut out = Vec::new();
            let (mut w, mut r) = (0.0f64, 0u32);
            loop {
                if out.len() == MAX_GAPS_PER_VEHICLE {
                    return Err(Error::Simulation(format!(
                        "vehicle {id} rejected {MAX_GAPS_PER_VEHICLE} gaps (alpha/beta = {}, k = {}, v = {}, spec {})",
                        p.alpha_over_beta,
                        p.k,
                        p.v,
                        serde_json::to_string(&params.spec).unwrap_or_default()
                    )));
                }
                let uo: f64 = rng.random();
                let (opposing, _) = Mix::pick(opp, |o| o.1, uo);
                let g = params.gaps.sample(&mut rng);
                let perceived = p.mean_perceived(g) * draw_error(&err, &mut rng);
                let c = &cell_params[&(subject.clone(), opposing.clone())];
                let tau = match kind {
                    ModelKind::WaitingTime => {
                        let wp = if w > 0.0 {
                            p.mean_perceived(w) * draw_error(&err, &mut rng)
                        } else {
                            0.0
                        };
                        c[0] * (-wp / c[2]).exp() + c[1]
                    }
                    ModelKind::RejectedGaps => c[0] * (-(r as f64) / c[2]).exp() + c[1],
                    ModelKind::BiValued => {
                        if w == 0.0 {
                            c[0]
                        } else {
                            c[1]
                        }
                    }
                    _ => c[0],
                };
                let accepted = perceived > tau;
                out.push(GapObservation {
                    vehicle_id: id.clone(),
                    gap_index: r + 1,
                    gap_size: g,
                    subject_class: subject.clone(),
                    opposing_class: opposing.clone(),
                    waiting_time: w,
                    rejected_count: r,
                    accepted,
                });
                if accepted {
                    return Ok(out);
                }
                w += g;
                r += 1;
            }
        })
        .collect();
    let mut obs = Vec::new();
    for v in per_vehicle {
        obs.extend(v?);
    }
    Dataset::from_observations(obs, classes)
}

fn derive_classes(mix: &[MixEntry]) -> ClassSets {
    let default = ClassSets::default();
    let fits = mix.iter().all(|e| {
        default.subject_index(&e.subject).is_some() && default.opposing_index(&e.opposing).is_some()
    });
    if fits {
        return default;
    }
    let mut c = ClassSets {
        subject: Vec::new(),
        opposing: Vec::new(),
    };
    for e in mix {
        if !c.subject.contains(&e.subject) {
            c.subject.push(e.subject.clone());
        }
        if !c.opposing.contains(&e.opposing) {
            c.opposing.push(e.opposing.clone());
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_VEHICLES: &str = "\
vehicle_id,gap_index,gap_size_s,subject_class,opposing_class,waiting_time_s,rejected_count,accepted
a,1,2.0,2,S,0,0,0
a,2,3.0,2,B,2.0,1,0
a,3,6.5,2,S,5.0,2,1
b,1,7.25,4,B,0,0,1
";

    #[test]
    fn reads_two_vehicles() {
        let d = read_csv(TWO_VEHICLES.as_bytes(), ClassSets::default()).unwrap();
        assert_eq!(d.n_vehicles(), 2);
        assert_eq!(d.n_obs(), 4);
        assert_eq!(d.vehicle(0).len(), 3);
    }

    #[test]
    fn accepted_not_last_cites_row() {
        let bad = TWO_VEHICLES.replace("a,2,3.0,2,B,2.0,1,0", "a,2,3.0,2,B,2.0,1,1");
        match read_csv(bad.as_bytes(), ClassSets::default()) {
            Err(Error::Data { row, reason }) => {
                assert_eq!(row, 3);
                assert!(reason.contains("not the last"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rows_out_of_order_are_grouped() {
        let lines: Vec<&str> = TWO_VEHICLES.lines().collect();
        let shuffled = [lines[0], lines[4], lines[3], lines[1], lines[2]].join("\n");
        let a = read_csv(TWO_VEHICLES.as_bytes(), ClassSets::default()).unwrap();
        let b = read_csv(shuffled.as_bytes(), ClassSets::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invariant_violations() {
        let cases = [
            ("a,2,3.0,2,B,2.0,1,0", "a,2,3.0,2,B,2.0,2,0", "rejected_count"),
            ("a,1,2.0,2,S,0,0,0", "a,1,2.0,2,S,0.5,0,0", "zero waiting"),
            ("a,3,6.5,2,S,5.0,2,1", "a,3,6.5,2,S,1.0,2,1", "decreases"),
            ("b,1,7.25,4,B,0,0,1", "b,1,7.25,4,X,0,0,1", "unknown opposing"),
            ("a,2,3.0,2,B,2.0,1,0", "a,2,3.0,4,B,2.0,1,0", "subject class"),
            ("b,1,7.25,4,B,0,0,1", "b,1,7.25,4,B,0,0,0", "not accepted"),
            ("b,1,7.25,4,B,0,0,1", "b,1,-1,4,B,0,0,1", "positive"),
        ];
        for (from, to, needle) in cases {
            let bad = TWO_VEHICLES.replace(from, to);
            let e = read_csv(bad.as_bytes(), ClassSets::default()).unwrap_err();
            assert!(e.to_string().contains(needle), "{needle}: {e}");
        }
    }

    #[test]
    fn header_mismatch() {
        let bad = TWO_VEHICLES.replace("gap_size_s", "gap");
        match read_csv(bad.as_bytes(), ClassSets::default()) {
            Err(Error::Data { row: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_and_digest() {
        let d = read_csv(TWO_VEHICLES.as_bytes(), ClassSets::default()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), ClassSets::default()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.digest(), d.digest());
        assert_eq!(d.digest().len(), 64);
    }

    fn const_params(tau: f64, gaps: GapDistribution) -> SimulationParams {
        SimulationParams {
            perception: PerceptionParams::new(1e-12, 0.5, 1e-12).unwrap(),
            spec: CriticalGapSpec::Constant { tau_scaled: tau },
            gaps,
            class_mix: vec![
                MixEntry { subject: "2".into(), opposing: "S".into(), prob: 0.5 },
                MixEntry { subject: "4".into(), opposing: "B".into(), prob: 0.5 },
            ],
            classes: None,
        }
    }

    #[test]
    fn all_gaps_accepted_when_above_threshold() {
        let p = const_params(4.0, GapDistribution::Empirical { gaps: vec![5.0] });
        let d = simulate(&p, 200, 1).unwrap();
        assert_eq!(d.n_obs(), 200);
        assert!(d.observations().iter().all(|o| o.accepted && o.waiting_time == 0.0));
    }

    #[test]
    fn waiting_time_is_sum_of_rejected_gaps() {
        let p = const_params(4.0, GapDistribution::exponential(0.3).unwrap());
        let d = simulate(&p, 300, 2).unwrap();
        for v in d.vehicles() {
            let mut w = 0.0;
            for o in v {
                assert_eq!(o.waiting_time, w);
                w += o.gap_size;
            }
        }
    }

    #[test]
    fn rejections_grow_with_threshold() {
        let count = |tau| {
            let p = const_params(tau, GapDistribution::exponential(0.3).unwrap());
            let d = simulate(&p, 2000, 3).unwrap();
            (d.n_obs() - d.n_vehicles()) as f64 / d.n_vehicles() as f64
        };
        assert!(count(3.0) < count(4.0));
        assert!(count(4.0) < count(5.0));
    }

    #[test]
    fn simulation_cap() {
        let p = const_params(1e4, GapDistribution::exponential(1.0).unwrap());
        assert!(matches!(simulate(&p, 2, 4), Err(Error::Simulation(_))));
    }

    #[test]
    fn mix_must_sum_to_one() {
        let mut p = const_params(4.0, GapDistribution::exponential(1.0).unwrap());
        p.class_mix[0].prob = 0.2;
        assert!(simulate(&p, 2, 4).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = const_params(4.0, GapDistribution::exponential(0.3).unwrap());
        assert_eq!(simulate(&p, 500, 9).unwrap(), simulate(&p, 500, 9).unwrap());
        assert_ne!(simulate(&p, 500, 9).unwrap(), simulate(&p, 500, 10).unwrap());
    }
}
