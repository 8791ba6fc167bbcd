use locb_core::environment::{generate_synthetic, SyntheticEnv, SyntheticParams, SyntheticWorld};
use locb_core::evaluation::f1_accuracy;
use locb_core::rng::{stream, Stream};
use locb_core::{
    simulate, AlphaSchedule, ClusteringConfig, ConfidenceConfig, LocbPolicy, Policy, RadiusMode,
    SimulationOptions, SimulationOutcome,
};
use proptest::prelude::*;

fn world(p: &SyntheticParams, master: u64) -> SyntheticWorld {
    generate_synthetic(p, &mut stream(master, 0, Stream::World)).unwrap()
}

fn run_locb(w: &SyntheticWorld, master: u64, tau: f64, opts: &SimulationOptions) -> (LocbPolicy, SimulationOutcome) {
    let conf = ConfidenceConfig::new(0.1, w.n, w.sigma, w.dim(), RadiusMode::PracticalClustering).unwrap();
    let cfg = ClusteringConfig {
        gamma: 0.2,
        tau,
        seeds: (0..w.n).collect(),
    };
    let mut pol = LocbPolicy::new(w.n, &cfg, conf, AlphaSchedule::PracticalRegret).unwrap();
    let mut env = SyntheticEnv::new(w, stream(master, 0, Stream::Rounds), stream(master, 0, Stream::Noise));
    let out = simulate(&mut env, &mut pol, opts).unwrap();
    (pol, out)
}

#[test]
fn noisy_world_recovers_planted_clusters() {
    let p = SyntheticParams {
        sigma: 0.4,
        ..SyntheticParams::default()
    };
    let w = world(&p, 11);
    let (pol, out) = run_locb(&w, 11, 10.0, &SimulationOptions::until_termination(1_000_000));
    assert!(!out.aborted);
    assert_eq!(pol.terminated_round(), out.terminated_round);
    assert!(out.terminated_round.is_some());
    let clusters = out.final_clusters.unwrap();
    assert_eq!(clusters.len(), w.n);
    assert!(clusters.iter().all(|(s, m)| m.contains(s)));
    let sets: Vec<Vec<usize>> = clusters.into_iter().map(|c| c.1).collect();
    let acc = f1_accuracy(&sets, &w.clusters).unwrap();
    assert!(acc.f1 > 0.75, "{acc:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn short_runs_keep_invariants(master in 0u64..1000, n in 4usize..16, k in 2usize..6) {
        let p = SyntheticParams {
            n,
            n_clusters: 2,
            size_min: 1,
            size_max: n - 1,
            arms: k,
            ..SyntheticParams::default()
        };
        let w = world(&p, master);
        let opts = SimulationOptions::horizon(300);
        let (pol, out) = run_locb(&w, master, 10.0, &opts);
        prop_assert_eq!(out.rounds(), 300);
        prop_assert!(out.choices.iter().all(|&c| c < k));
        prop_assert!(out.regret.instantaneous().iter().all(|&r| r >= -1e-12));
        for s in pol.cluster_states() {
            prop_assert!(s.members().contains(s.seed));
            if let Some(t) = s.terminated_round() {
                prop_assert!(t <= 300);
            }
        }
        let (_, again) = run_locb(&w, master, 10.0, &opts);
        prop_assert_eq!(&out.choices, &again.choices);
        prop_assert_eq!(out.regret.instantaneous(), again.regret.instantaneous());
    }
}
