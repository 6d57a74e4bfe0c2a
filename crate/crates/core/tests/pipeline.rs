mod common;

use critgap::data::{read_csv, simulate};
use critgap::estimation::{fit, FitConfig, FitResult};
use critgap::models::{ClassSets, ModelKind};
use critgap::waiting::{awt_report, c_awt, cell_weights, observed_wait};

use common::*;

#[test]
fn csv_round_trip_of_simulated_data() {
    let data = simulate(&waiting_truth_all_cells(), 300, 2).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = read_csv(&buf[..], ClassSets::default()).unwrap();
    assert_eq!(back.observations(), data.observations());
    assert_eq!(back.digest(), data.digest());
}

#[test]
fn waiting_report_for_a_constant_fit() {
    let data = simulate(&constant_truth(), 600, 5).unwrap();
    let mut config = FitConfig::new(ModelKind::Constant);
    config.multistart = 2;
    let r = fit(&data, &config).unwrap();
    let json = r.to_json().unwrap();
    assert_eq!(FitResult::from_json(&json).unwrap(), r);

    let rows = awt_report(&data, &r).unwrap();
    // Only class 4 occurs, plus the overall row.
    assert_eq!(rows.len(), 2);
    let all = rows.iter().find(|row| row.subject.is_none()).unwrap();
    assert_eq!(Some(all.tau_e), r.emulator[0].tau_e);
    assert_eq!(all.c_awt, c_awt(all.tau_e, &r.gap_distribution).unwrap());
    assert_eq!(all.o_awt, observed_wait(&data, None).unwrap());
    assert_eq!(rows[0].tau_e, all.tau_e);
}

#[test]
fn cell_weights_count_gaps() {
    let data = simulate(&waiting_truth_all_cells(), 300, 3).unwrap();
    let total: f64 = cell_weights(&data, ModelKind::BySubjectOpposing, None).iter().map(|w| w.1).sum();
    assert_eq!(total as usize, data.n_obs());
    let two: f64 = cell_weights(&data, ModelKind::BySubject, Some("2")).iter().map(|w| w.1).sum();
    let n2 = data.observations().iter().filter(|o| o.subject_class == "2").count();
    assert_eq!(two as usize, n2);
    let constant = cell_weights(&data, ModelKind::Constant, Some("2"));
    assert_eq!(constant.len(), 1);
    assert_eq!(constant[0].1 as usize, n2);
}
