//! Structural invariants checked over randomized simulated datasets.

use msclust::bands::band_from_replicates;
use msclust::resample::{bootstrap_with_counts, multiplier_replicates, multiplier_with};
use msclust::{
    aalen_johansen, build_panel, estimate_target, ks_two_sample, nelson_aalen, simulate_trial,
    state_occupation, target_influence, Arm, BandSpec, Cluster, ClusteredDataset, Error, Method,
    SeedSpec, SimConfig, Target, TestSpec, Transform, WeightKind, Weighting,
};
use proptest::prelude::*;

fn dataset(seed: u64, clusters: usize, lo: usize, hi: usize) -> ClusteredDataset<f64> {
    simulate_trial(
        &SimConfig::one_sample(clusters, lo, hi),
        SeedSpec::new(seed),
    )
}

fn weighting() -> impl Strategy<Value = Weighting> {
    prop_oneof![Just(Weighting::AllMembers), Just(Weighting::TypicalMember)]
}

fn target() -> impl Strategy<Value = Target<f64>> {
    prop_oneof![
        (1usize..=3).prop_map(|state| Target::Occupation { state }),
        Just(Target::Transition {
            from: 1,
            to: 2,
            origin: 0.0
        }),
        Just(Target::Transition {
            from: 1,
            to: 3,
            origin: 0.0
        }),
        Just(Target::Transition {
            from: 1,
            to: 1,
            origin: 0.0
        }),
    ]
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

pub fn transition_rows_sum_to_one(cases: u32) {
    proptest!(config(cases), |(
        seed in any::<u64>(), n in 3usize..25, lo in 1usize..4, extra in 0usize..5,
        w in weighting(), origin in 0.0f64..1.0,
    )| {
        let data = dataset(seed, n, lo, lo + extra);
        let panel = build_panel(&data, w);
        let aj = aalen_johansen(&nelson_aalen(&panel), origin);
        for g in 0..aj.grid().len() {
            for row in aj.matrix(g).chunks(3) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let occ = state_occupation(&data, w).unwrap();
        for g in 0..occ.grid().len() {
            prop_assert!((occ.at_index(g).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    });
}

/// Also covers multiplier draws with all `ξ` equal, which reduce to a multiple of the sum.
pub fn influence_functions_sum_to_zero(cases: u32) {
    proptest!(config(cases), |(
        seed in any::<u64>(), n in 3usize..25, lo in 1usize..4, extra in 0usize..5,
        w in weighting(), target in target(), xi in -3.0f64..3.0,
    )| {
        let panel = build_panel(&dataset(seed, n, lo, lo + extra), w);
        let set = target_influence(&panel, target);
        prop_assume!(!matches!(set, Err(Error::EmptySupport)));
        let set = set.unwrap();
        prop_assert!(set.max_abs_sum() < 1e-10, "{}", set.max_abs_sum());
        let equal = multiplier_with(&set, vec![xi; set.n()]);
        prop_assert!(equal.values.iter().all(|v| v.abs() < 1e-10));
    });
}

pub fn identity_bootstrap_is_the_point_estimate(cases: u32) {
    proptest!(config(cases), |(
        seed in any::<u64>(), n in 2usize..25, lo in 1usize..4, extra in 0usize..5,
        w in weighting(), target in target(),
    )| {
        let panel = build_panel(&dataset(seed, n, lo, lo + extra), w);
        let point = estimate_target(&panel, target);
        prop_assume!(!matches!(point, Err(Error::EmptySupport)));
        let point = point.unwrap();
        let rep = bootstrap_with_counts(&panel, &target, vec![1; n]).unwrap();
        prop_assert_eq!(&rep.values, &point.values);
        prop_assert_eq!(&rep.valid, &point.valid);
    });
}

pub fn critical_value_grows_as_alpha_shrinks(cases: u32) {
    proptest!(config(cases), |(seed in any::<u64>(), n in 10usize..30, w in weighting())| {
        let panel = build_panel(&dataset(seed, n, 2, 6), w);
        let target = Target::Occupation { state: 2 };
        let point = estimate_target(&panel, target).unwrap();
        let set = target_influence(&panel, target).unwrap();
        let reps = multiplier_replicates(&set, 200, SeedSpec::new(seed));
        let var: Vec<f64> = (0..set.grid().len()).map(|g| set.covariance_index(g, g)).collect();
        let band = |alpha| {
            let spec = BandSpec { alpha, transform: Transform::Identity, ..BandSpec::default() };
            band_from_replicates(&point, &reps, &var, &point.valid, &spec, None)
        };
        let (strict, loose) = (band(0.01).unwrap(), band(0.05).unwrap());
        prop_assert!(strict.critical_value >= loose.critical_value);
    });
}

pub fn duplicated_arms_give_unit_p_value(cases: u32) {
    proptest!(config(cases), |(
        seed in any::<u64>(), n in 4usize..15, w in weighting(),
        ratio in any::<bool>(), bootstrap in any::<bool>(),
    )| {
        let base = dataset(seed, n, 2, 5);
        // Every member appears once in each arm of its own cluster.
        let clusters = base
            .clusters
            .iter()
            .map(|c| {
                let members = [(Arm::One, "a"), (Arm::Two, "b")]
                    .into_iter()
                    .flat_map(|(a, tag)| {
                        c.members.iter().map(move |p| {
                            let mut p = p.clone().with_arm(a);
                            p.id = format!("{tag}{}", p.id);
                            p
                        })
                    })
                    .collect();
                Cluster::new(c.id.clone(), members)
            })
            .collect();
        let data = ClusteredDataset::new(base.state_space.clone(), clusters);
        let spec = TestSpec {
            target: Target::Occupation { state: 2 },
            weighting: w,
            weight: if ratio { WeightKind::RiskRatio } else { WeightKind::IndicatorRiskSets },
            method: if bootstrap { Method::ClusterBootstrap } else { Method::Influence },
            reps: 100,
            corrected: false,
        };
        let r = ks_two_sample(&data, &spec, SeedSpec::new(seed));
        prop_assume!(!matches!(r, Err(Error::EmptyComparisonDomain)));
        let r = r.unwrap();
        prop_assert_eq!(r.statistic, 0.0);
        prop_assert_eq!(r.p_value, 1.0);
    });
}
