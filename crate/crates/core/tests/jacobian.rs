mod common;

use gridline::power_flow::{residual_nodes, SlackRows};
use gridline::sensitivity::{compare_jacobians, numeric_jacobian, UnknownLayout};
use gridline::{assemble_jacobian, fd_check, AngleRegime};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{arb_case, random_case};

fn true_angles(snaps: &[gridline::Snapshot]) -> Vec<Vec<f64>> {
    snaps.iter().map(|s| s.theta.clone().unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_matches_central_differences(case in arb_case(8, 2)) {
        let snaps = case.snapshots(true);
        let thetas = true_angles(&snaps);
        for regime in [AngleRegime::Pmu, AngleRegime::Rms] {
            let report = fd_check(&case.topology, &case.params, &snaps, regime, Some(&thetas), 1e-7).unwrap();
            prop_assert!(report.passes(1e-6), "{:?}: {:?}", regime, report);
        }
    }

    /// Line columns of node `k`'s rows vanish unless the line ends at `k`.
    #[test]
    fn line_columns_follow_incidence(case in arb_case(10, 1)) {
        let snaps = case.snapshots(true);
        let thetas = true_angles(&snaps);
        let jac = assemble_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Rms, Some(&thetas)).unwrap();
        let layout = UnknownLayout::new(&case.topology, 1, AngleRegime::Rms);
        let nodes = residual_nodes(&case.topology, SlackRows::Drop);
        let block = nodes.len();
        for (i, &k) in nodes.iter().enumerate() {
            for line in case.topology.lines() {
                let touches = line.top == k || line.bottom == k;
                for row in [i, block + i] {
                    for col in [layout.r_col(line.id), layout.x_col(line.id)] {
                        if !touches {
                            prop_assert_eq!(jac.matrix[(row, col)], 0.0);
                        }
                    }
                }
            }
        }
    }
}

/// Central-difference error shrinks with the square of the step while
/// truncation dominates.
#[test]
fn finite_difference_error_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let case = random_case(&mut rng, 3..=6, 2);
        let snaps = case.snapshots(true);
        let thetas = true_angles(&snaps);
        let analytic =
            assemble_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Rms, Some(&thetas)).unwrap();
        let error = |step: f64| {
            let numeric =
                numeric_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Rms, &thetas, step).unwrap();
            (&analytic.matrix - numeric).amax()
        };
        let (coarse, fine) = (error(1e-3), error(1e-4));
        let ratio = coarse / fine;
        assert!((50.0..200.0).contains(&ratio), "ratio {ratio} ({coarse:e} vs {fine:e})");
    }
}

#[test]
fn corrupted_entry_is_located() {
    let case = random_case(&mut ChaCha8Rng::seed_from_u64(9), 4..=4, 2);
    let snaps = case.snapshots(true);
    let thetas = true_angles(&snaps);
    let mut analytic =
        assemble_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Rms, Some(&thetas)).unwrap();
    let numeric = numeric_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Rms, &thetas, 1e-7).unwrap();
    analytic.matrix[(2, 1)] += 0.5;
    let report = compare_jacobians(&analytic, &numeric, 1e-7);
    assert!(!report.passes(1e-6));
    assert_eq!((report.worst_row, report.worst_col), (2, 1));
    assert_eq!(report.worst_label, "R2");
}

#[test]
fn rms_regime_needs_angle_estimates() {
    let case = random_case(&mut ChaCha8Rng::seed_from_u64(3), 3..=3, 2);
    let snaps = case.snapshots(false);
    assert!(assemble_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Rms, None).is_err());
    assert!(assemble_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Pmu, None).is_err());
}

#[test]
fn zero_injections_flatten_the_jacobian() {
    let case = random_case(&mut ChaCha8Rng::seed_from_u64(4), 4..=4, 1);
    let mut flat = case.clone();
    for inj in &mut flat.schedule {
        inj.p.iter_mut().for_each(|v| *v = 0.0);
        inj.q.iter_mut().for_each(|v| *v = 0.0);
    }
    let snaps = flat.snapshots(true);
    let thetas = true_angles(&snaps);
    let jac = assemble_jacobian(&flat.topology, &flat.params, &snaps, AngleRegime::Pmu, Some(&thetas)).unwrap();
    let scale = flat.params.r.iter().chain(&flat.params.x).map(|v| 1.0 / (v * v)).fold(0.0, f64::max);
    assert!(jac.matrix.amax() <= 1e-12 * scale, "{}", jac.matrix.amax());
    let report = fd_check(&flat.topology, &flat.params, &snaps, AngleRegime::Pmu, Some(&thetas), 1e-7).unwrap();
    assert!(report.passes(1e-6));
}

#[test]
fn csv_dump_has_labelled_header() {
    let case = random_case(&mut ChaCha8Rng::seed_from_u64(6), 3..=3, 2);
    let snaps = case.snapshots(true);
    let thetas = true_angles(&snaps);
    let jac = assemble_jacobian(&case.topology, &case.params, &snaps, AngleRegime::Rms, Some(&thetas)).unwrap();
    let mut buf = Vec::new();
    jac.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), jac.matrix.ncols());
    assert_eq!(&header[..4], &["R1", "R2", "X1", "X2"]);
    assert!(header[4].starts_with("theta[t1]@"));
    assert_eq!(lines.count(), jac.matrix.nrows());
}
