#![allow(dead_code)]

use gridline::power_flow::{Injection, SynthesisOptions};
use gridline::scenario::{district, perturb, schedule_to_per_unit, two_instance, District};
use gridline::{synthesize_snapshots, GridTopology, LineParams, NoiseModel, Snapshot};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random radial grid with physical line parameters and a few injection
/// sets that a load flow can carry.
#[derive(Debug, Clone)]
pub struct Case {
    pub topology: GridTopology,
    pub params: LineParams,
    pub schedule: Vec<Injection>,
}

impl Case {
    pub fn snapshots(&self, angles: bool) -> Vec<Snapshot> {
        let options = SynthesisOptions {
            emit_angles: angles,
            ..SynthesisOptions::default()
        };
        synthesize_snapshots(&self.topology, &self.params, &self.schedule, &NoiseModel::noiseless(), &options)
            .expect("random cases stay within load-flow range")
    }
}

/// Node `k > 0` hangs off a random earlier node, lines point either way and
/// the slack is any node.
pub fn random_case(rng: &mut ChaCha8Rng, nodes: std::ops::RangeInclusive<usize>, snapshots: usize) -> Case {
    let n = rng.random_range(nodes);
    let edges: Vec<(usize, usize)> = (1..n)
        .map(|k| {
            let parent = rng.random_range(0..k);
            if rng.random_bool(0.5) {
                (parent, k)
            } else {
                (k, parent)
            }
        })
        .collect();
    let slack = rng.random_range(0..n);
    let topology = GridTopology::new(n, &edges, slack).unwrap();
    let mut draw = |lo: f64, hi: f64, len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(lo..hi)).collect() };
    let params = LineParams {
        r: draw(0.005, 0.1, n - 1),
        x: draw(0.005, 0.1, n - 1),
    };
    let schedule = (0..snapshots)
        .map(|t| Injection {
            label: format!("t{}", t + 1),
            p: draw(-0.2, 0.2, n),
            q: draw(-0.2, 0.2, n),
        })
        .collect();
    Case {
        topology,
        params,
        schedule,
    }
}

pub fn arb_case(max_nodes: usize, snapshots: usize) -> impl Strategy<Value = Case> {
    any::<u64>().prop_map(move |seed| random_case(&mut ChaCha8Rng::seed_from_u64(seed), 2..=max_nodes, snapshots))
}

/// The bundled district with a seeded ±25% truth and the ±3 kW/kvar pair.
pub struct DistrictCase {
    pub district: District,
    pub datasheet: LineParams,
    pub truth: LineParams,
    pub snapshots: Vec<Snapshot>,
}

pub const TRUTH_SEED: u64 = 42;

pub fn district_case() -> DistrictCase {
    let district = district();
    let datasheet = district.datasheet_pu();
    let truth = perturb(&datasheet, 0.25, TRUTH_SEED);
    let n = district.topology.node_count();
    let schedule = schedule_to_per_unit(&two_instance(n, &district.load_nodes, 3000.0, 3000.0), &district.base);
    let snapshots = synthesize_snapshots(
        &district.topology,
        &truth,
        &schedule,
        &NoiseModel::noiseless(),
        &SynthesisOptions::default(),
    )
    .unwrap();
    DistrictCase {
        district,
        datasheet,
        truth,
        snapshots,
    }
}
