mod common;

use gridline::io::{read_snapshots, write_snapshots, ReportFile, TopologyFile};
use gridline::power_flow::{Injection, SynthesisOptions};
use gridline::scenario::district;
use gridline::{estimate_nr_rms, mismatch, synthesize_snapshots, EstimationProblem, NoiseModel, SolverConfig};
use proptest::prelude::*;

use common::{arb_case, district_case};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_snapshots_satisfy_the_power_balance(case in arb_case(10, 3)) {
        for snap in case.snapshots(true) {
            let r = mismatch(&case.topology, &case.params, &snap, None).unwrap();
            prop_assert!(r.amax() < 1e-9, "{}", r.amax());
        }
    }

    #[test]
    fn csv_round_trip_preserves_si_values(case in arb_case(6, 3), angles in any::<bool>()) {
        let base = district().base;
        let snaps = case.snapshots(angles);
        let mut first = Vec::new();
        write_snapshots(&mut first, &snaps, &base).unwrap();
        let back = read_snapshots(first.as_slice(), case.topology.node_count(), &base).unwrap();
        let mut second = Vec::new();
        write_snapshots(&mut second, &back, &base).unwrap();
        prop_assert_eq!(first, second);
        for (a, b) in snaps.iter().zip(&back) {
            prop_assert_eq!(&a.label, &b.label);
            prop_assert_eq!(a.theta.is_some(), b.theta.is_some());
            for (x, y) in a.vmag.iter().zip(&b.vmag) {
                prop_assert!((x - y).abs() <= 2.0 * f64::EPSILON * x.abs());
            }
        }
    }
}

#[test]
fn noise_is_seeded_per_entry() {
    let c = district_case();
    let topo = &c.district.topology;
    let schedule: Vec<Injection> = (0..6)
        .map(|i| Injection {
            label: format!("s{i}"),
            p: vec![0.0, -0.1 * i as f64, 0.05, 0.1],
            q: vec![0.0, 0.02, -0.03, 0.0],
        })
        .collect();
    let noise = NoiseModel {
        vmag_rel_sigma: 1e-3,
        pq_abs_sigma: 1e-3,
        theta_abs_sigma: 1e-3,
        seed: 17,
    };
    let options = SynthesisOptions {
        emit_angles: true,
        ..SynthesisOptions::default()
    };
    let all = synthesize_snapshots(topo, &c.truth, &schedule, &noise, &options).unwrap();
    assert_eq!(all, synthesize_snapshots(topo, &c.truth, &schedule, &noise, &options).unwrap());

    let single = std::thread::scope(|s| {
        s.spawn(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap()
                .install(|| synthesize_snapshots(topo, &c.truth, &schedule, &noise, &options).unwrap())
        })
        .join()
        .unwrap()
    });
    assert_eq!(all, single);

    let other = NoiseModel { seed: 18, ..noise };
    assert_ne!(all, synthesize_snapshots(topo, &c.truth, &schedule, &other, &options).unwrap());
    let clean = synthesize_snapshots(topo, &c.truth, &schedule, &NoiseModel::noiseless(), &options).unwrap();
    for (noisy, clean) in all.iter().zip(&clean) {
        let theta = noisy.theta.as_ref().unwrap();
        assert_eq!(theta[0], 0.0);
        assert_ne!(noisy.vmag, clean.vmag);
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let c = district_case();

    let topo_path = dir.path().join("topology.json");
    TopologyFile::from_model(&c.district.topology, &c.district.datasheet_ohm)
        .write(&topo_path)
        .unwrap();
    let (topo, ohm) = TopologyFile::read(&topo_path).unwrap().to_model().unwrap();
    assert_eq!(topo, c.district.topology);
    assert_eq!(ohm, c.district.datasheet_ohm);

    let csv_path = dir.path().join("snapshots.csv");
    write_snapshots(std::fs::File::create(&csv_path).unwrap(), &c.snapshots, &c.district.base).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("t,node,p_w,q_var,vmag_v,theta_rad\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    let snaps = read_snapshots(std::fs::File::open(&csv_path).unwrap(), 4, &c.district.base).unwrap();
    assert_eq!(snaps.len(), 2);

    let problem = EstimationProblem::new(topo, snaps.clone(), c.datasheet.clone());
    let report = estimate_nr_rms(&problem).unwrap();
    let file = ReportFile::new(&report, &problem.topology, &SolverConfig::default(), &c.district.base, &snaps);
    let json_path = dir.path().join("report.json");
    file.write(&json_path).unwrap();
    let back: ReportFile = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.lines.len(), 3);
    assert!((back.lines[0].r_ohm / back.lines[0].r_pu - 16.0).abs() < 1e-12);
    assert_eq!(back.input_fingerprint.len(), 64);
}
