use gridtop_core::formats::{self, NoiseManifest, Orientation};
use gridtop_core::ident::{identify_phase, identify_topology, score};
use gridtop_core::sim::{gen_rbts_like, simulate_phase};
use gridtop_core::{NetworkSpec, NodeId, NoiseConfig, ReadingsMatrix, SampleCount};
use proptest::prelude::*;

fn noisy_phase(seed: u64, multiplier: f64) -> gridtop_core::GroundTruth {
    let cfg = NoiseConfig::default().with_seed(seed);
    simulate_phase((20, 30), SampleCount::PerIndependent(multiplier), Some(&cfg), seed).unwrap()
}

#[test]
fn bundle_survives_disk_and_is_identified() {
    let gt = noisy_phase(1, 3.0);
    let dir = tempfile::tempdir().unwrap();
    let (topo, readings) = (dir.path().join("t.json"), dir.path().join("r.csv"));
    formats::write_topology(&gt.network, formats::create(&topo).unwrap()).unwrap();
    formats::write_readings(&gt.noisy_readings, formats::create(&readings).unwrap(), Orientation::Intervals)
        .unwrap();

    let net = formats::read_topology(formats::open(&topo).unwrap()).unwrap();
    let z = formats::read_readings(formats::open(&readings).unwrap(), Orientation::Intervals, 15.0).unwrap();
    let res = identify_topology(&z, net.layers(), &NoiseConfig::default()).unwrap();
    let s = score(&res, &gt.network).unwrap();
    assert!(s.success, "{s:?}");
}

#[test]
fn estimate_dump_lines_up_with_injected_manifest() {
    let cfg = NoiseConfig::default().with_seed(2);
    let gt = simulate_phase((75, 100), SampleCount::PerNode(4.0), Some(&cfg), 2).unwrap();
    let injected = NoiseManifest::injected(&gt, 2);
    let layers = gt.network.layers();
    let pair = identify_phase(&gt.noisy_readings, &layers[1].members, &layers[0].members, &cfg).unwrap();
    let estimated = NoiseManifest::estimated(&pair, &cfg);

    assert_eq!(estimated.layer_pairs[0].parent_level, injected.layer_pairs[0].parent_level);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    assert!(rel(estimated.layer_pairs[0].mu_t, injected.layer_pairs[0].mu_t) < 0.05);
    // Per-parent mean loss, matched by node id.
    for (k, id) in estimated.node_order.iter().take(3).enumerate() {
        let truth = injected.stats.mu_lambda[id.0];
        assert!(rel(estimated.stats.mu_lambda[k], truth) < 0.25, "parent {id}");
    }
    // Consumers carry no loss in either.
    assert!(estimated.stats.mu_lambda[3..].iter().all(|&v| v == 0.0));
}

#[test]
fn meter_order_in_the_readings_does_not_matter() {
    let gt = noisy_phase(3, 3.0);
    let z = &gt.noisy_readings;
    let mut order: Vec<NodeId> = z.node_order().to_vec();
    order.reverse();
    let reversed = z.select(&order).unwrap();
    let layers = gt.network.layers();
    let cfg = NoiseConfig::default();
    let a = identify_topology(z, layers, &cfg).unwrap();
    let b = identify_topology(&reversed, layers, &cfg).unwrap();
    assert_eq!(a.network.edges(), b.network.edges());
    let (pa, pb) = (a.pairs[0].as_ref().unwrap(), b.pairs[0].as_ref().unwrap());
    let diff = (&pa.raw_regression - &pb.raw_regression)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff < 1e-8, "{diff}");
}

#[test]
fn small_multilayer_network_at_two_n() {
    let cfg = NoiseConfig::default().with_seed(4);
    let gt = gen_rbts_like(&NetworkSpec::uniform(2, 3, 10), SampleCount::PerNode(2.0), Some(&cfg), 4).unwrap();
    let res = identify_topology(&gt.noisy_readings, gt.network.layers(), &cfg).unwrap();
    assert!(res.is_complete());
    assert_eq!(res.pairs.len(), 3);
    assert!(score(&res, &gt.network).unwrap().success);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Scaling every reading by the same factor leaves the regression unchanged.
    #[test]
    fn regression_is_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let gt = noisy_phase(seed, 2.0);
        let z = &gt.noisy_readings;
        let scaled = ReadingsMatrix::new(
            z.values().mapv(|v| v * scale),
            z.node_order().to_vec(),
            z.interval_minutes(),
        ).unwrap();
        let layers = gt.network.layers();
        let cfg = NoiseConfig::default();
        let a = identify_phase(z, &layers[1].members, &layers[0].members, &cfg).unwrap();
        let b = identify_phase(&scaled, &layers[1].members, &layers[0].members, &cfg).unwrap();
        let diff = (&a.raw_regression - &b.raw_regression).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(diff < 1e-7, "{}", diff);
        prop_assert_eq!(a.inferred_edges, b.inferred_edges);
    }
}
