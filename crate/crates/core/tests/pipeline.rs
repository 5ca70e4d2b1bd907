mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skorokhod::martransport::{price_bounds, Leg, TransportPayoff};
use skorokhod::multistop::{forward_masses, stopped_laws};
use skorokhod::oracles::mc_embedding_check;
use skorokhod::solve::{solve_embedding, SolveSettings};
use skorokhod::{
    check_convex_order, wasserstein1, Augment, Clock, DiscreteMeasure, DualConfig, Instance, Lattice, PeacockVector,
};

fn lattice(steps: usize) -> Lattice {
    Lattice::new(steps, 1.0 / 16.0, Clock::Saturating, Augment::NONE).unwrap()
}

#[test]
fn optimal_embedding_reproduces_the_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..6 {
        let mu = common::random_peacock(&mut rng, 2, 0.25, 4);
        let payoff = common::random_capped_payoff(&mut rng, 2);
        let settings = SolveSettings {
            dual: false,
            ..Default::default()
        };
        let out = solve_embedding(&lattice(40), &payoff, &mu, &settings).unwrap();
        let ps = out.report.primal.unwrap();
        assert!(ps.marginal_error < 1e-9, "{}", ps.marginal_error);
        assert!(ps.flow_residual < 1e-9);

        // the randomized policy pushes forward to the same laws
        let inst = &out.instance;
        let policy = ps.policy(inst);
        let laws = stopped_laws(inst, &forward_masses(inst, &policy));
        for (k, law) in laws.iter().enumerate() {
            let m = DiscreteMeasure::new(law.iter().map(|&(l, w)| (l as f64 * inst.h(), w))).unwrap();
            assert!(wasserstein1(&m, mu.get(k)) < 1e-8);
        }
        let mc = mc_embedding_check(inst, &policy, &mu, 4000, 5).unwrap();
        assert_eq!(mc.truncated, 0);
        assert!(mc.marginals.iter().all(|c| c.within), "{mc:?}");
    }
}

#[test]
fn dual_bounds_the_primal_from_above_at_every_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mu = common::random_peacock(&mut rng, 1, 0.25, 4);
    let payoff = common::random_capped_payoff(&mut rng, 1);
    let settings = SolveSettings {
        optimizer: DualConfig {
            iterations: 300,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = solve_embedding(&lattice(30), &payoff, &mu, &settings).unwrap();
    let primal = out.report.primal.unwrap().value;
    assert!(out.history.iter().all(|r| r.objective >= primal - 1e-9));
    assert!(out.history.windows(2).all(|w| w[1].best <= w[0].best));
}

#[test]
fn price_bounds_are_ordered() {
    let mu = PeacockVector::new(vec![
        DiscreteMeasure::new([(-0.5, 0.5), (0.5, 0.5)]).unwrap(),
        DiscreteMeasure::new([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]).unwrap(),
    ])
    .unwrap();
    let tp = TransportPayoff {
        maturities: vec![1.0, 2.0],
        legs: vec![
            Leg::Lookback {
                maturity: 2,
                weight: 1.0,
                cap: Some(1.0),
            },
            Leg::LocalTime {
                maturity: 2,
                weight: -0.5,
                cap: Some(1.0),
            },
        ],
    };
    let l = Lattice::new(16, 0.25, Clock::Saturating, Augment::NONE).unwrap();
    let b = price_bounds(&tp, &mu, &l, &SolveSettings::default()).unwrap();
    assert!(
        b.lower.bound <= b.upper.bound + 1e-9,
        "[{}, {}]",
        b.lower.bound,
        b.upper.bound
    );
    assert!(b.upper.solve.gap.as_ref().unwrap().pass);
    assert!(b.lower.solve.gap.as_ref().unwrap().pass);
}

#[test]
fn instance_summary_matches_the_marginal_hulls() {
    let mu = PeacockVector::new(vec![DiscreteMeasure::new([(-0.5, 0.5), (0.5, 0.5)]).unwrap()]).unwrap();
    let inst = Instance::for_marginals(&lattice(20), &skorokhod::PayoffSpec::zero(1), &mu, Default::default()).unwrap();
    let s = skorokhod::solve::summarize(&inst, Default::default());
    assert_eq!(s.windows, vec![(-0.5, 0.5)]);
    assert_eq!(s.h, 0.25);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn validation_agrees_with_the_pairwise_report(seed in 0u64..10_000, n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ms = common::random_peacock(&mut rng, n, 0.5, 5).measures().to_vec();
        if seed % 2 == 0 {
            ms.reverse();
        }
        let report = PeacockVector::report(&ms);
        prop_assert_eq!(PeacockVector::new(ms.clone()).is_ok(), report.valid);
        for (pair, check) in ms.windows(2).zip(&report.pairs) {
            prop_assert_eq!(check_convex_order(&pair[0], &pair[1]).unwrap().ordered, check.ordered);
        }
    }

    #[test]
    fn snapping_keeps_mean_and_order(xs in prop::collection::vec(-2.0f64..2.0, 2..12), spacing in 0.05f64..0.5) {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
        let m = DiscreteMeasure::uniform(&centered).unwrap();
        let (s, err) = m.snap_to_grid(spacing).unwrap();
        prop_assert!(s.mean().abs() < 1e-9);
        prop_assert!(err <= spacing);
        // snapping spreads mass: the original is below it in convex order
        prop_assert!(check_convex_order(&m, &s).unwrap().ordered);
    }
}
