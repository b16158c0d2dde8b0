//! Two-sample Kolmogorov–Smirnov-type comparison of transition or occupation
//! curves between the two arms of a clustered design.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::{estimate_target, target_start, Target};
use crate::infl::target_influence;
use crate::model::{Arm, ClusteredDataset, StateSpace};
use crate::panel::{build_panel_on_grid, RiskPanel, Weighting};
use crate::resample::{
    bootstrap_with_counts, multinomial_counts, normal_multipliers, Method, SeedSpec,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightKind {
    /// One where every required risk set is non-empty in both samples.
    IndicatorRiskSets,
    /// `Π Ȳ₁Ȳ₂ / Σ (Ȳ₁ + Ȳ₂)` over the required states.
    RiskRatio,
}

impl WeightKind {
    pub fn name(self) -> &'static str {
        match self {
            WeightKind::IndicatorRiskSets => "indicator",
            WeightKind::RiskRatio => "ratio",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightCurve<T> {
    pub kind: WeightKind,
    pub grid: Vec<T>,
    pub values: Vec<T>,
    /// Transient states (1-based) whose risk sets enter the weight.
    pub path_set: Vec<usize>,
}

/// Transient states visitable on the way to the target: `L(h, j)` for a
/// transition and the union over transient `h` for occupation of `j`.
pub fn path_set<T: Scalar>(space: &StateSpace, target: &Target<T>) -> Vec<usize> {
    let set: BTreeSet<usize> = match *target {
        Target::Transition { from, to, .. } => space.visitable_between(from, to),
        Target::Occupation { state } => space
            .transient_states()
            .flat_map(|h| space.visitable_between(h, state))
            .collect(),
    };
    set.into_iter().collect()
}

/// Weight on the common grid of two panels. Sample averages use the panels'
/// own weighting, so typical-member panels give the `M⁻¹`-scaled version.
pub fn make_weight<T: Scalar>(
    sample1: &RiskPanel<T>,
    sample2: &RiskPanel<T>,
    kind: WeightKind,
    path: &[usize],
) -> Result<WeightCurve<T>> {
    if sample1.grid() != sample2.grid() {
        return Err(Error::InvalidArgument(
            "weight needs both samples on a common grid".into(),
        ));
    }
    let n1 = T::from_usize_exact(sample1.n_clusters());
    let n2 = T::from_usize_exact(sample2.n_clusters());
    let values = (0..sample1.grid().len())
        .map(|g| {
            if path.is_empty() {
                return T::zero();
            }
            let mut prod = T::one();
            let mut sum = T::zero();
            for &l in path {
                let y1 = sample1.y_bar(g, l) / n1;
                let y2 = sample2.y_bar(g, l) / n2;
                prod = prod * y1 * y2;
                sum = sum + y1 + y2;
            }
            match kind {
                WeightKind::IndicatorRiskSets => {
                    if prod > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                WeightKind::RiskRatio => {
                    if prod > T::zero() {
                        prod / sum
                    } else {
                        T::zero()
                    }
                }
            }
        })
        .collect();
    Ok(WeightCurve {
        kind,
        grid: sample1.grid().to_vec(),
        values,
        path_set: path.to_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSpec<T> {
    pub target: Target<T>,
    pub weighting: Weighting,
    pub weight: WeightKind,
    pub method: Method,
    pub reps: usize,
    /// Report `(1 + #)/(B + 1)` instead of the plain proportion.
    pub corrected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestResult<T> {
    /// `K_n = sup_t |Ŵ(t) Δ̂(t)|`.
    pub statistic: T,
    /// `√n K_n`, compared against the null realizations.
    pub scaled_statistic: T,
    pub p_value: f64,
    pub grid: Vec<T>,
    pub difference: Vec<T>,
    pub weight: Vec<T>,
    pub reps: usize,
    /// Null realizations with at least one usable grid point.
    pub effective_reps: usize,
    pub method: Method,
    pub seed: u64,
}

pub fn check_arms<T: Scalar>(data: &ClusteredDataset<T>) -> Result<()> {
    for c in &data.clusters {
        if c.arm_count(Arm::One) == 0 || c.arm_count(Arm::Two) == 0 {
            return Err(Error::ArmMissingInCluster(c.id.clone()));
        }
    }
    Ok(())
}

/// Arm panels on the grid of all transition times in `data`.
pub fn arm_panels<T: Scalar>(
    data: &ClusteredDataset<T>,
    weighting: Weighting,
) -> Result<(RiskPanel<T>, RiskPanel<T>)> {
    check_arms(data)?;
    let grid = data.transition_times();
    let p1 = build_panel_on_grid(&data.arm_subset(Arm::One), weighting, grid.clone())?;
    let p2 = build_panel_on_grid(&data.arm_subset(Arm::Two), weighting, grid)?;
    Ok((p1, p2))
}

pub fn ks_two_sample<T: Scalar>(
    data: &ClusteredDataset<T>,
    spec: &TestSpec<T>,
    seed: SeedSpec,
) -> Result<TestResult<T>> {
    if spec.reps < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 replicates are required, got {}",
            spec.reps
        )));
    }
    spec.target.check(&data.state_space)?;
    let (p1, p2) = arm_panels(data, spec.weighting)?;
    let target = spec.target;
    let c1 = estimate_target(&p1, target)?;
    let c2 = estimate_target(&p2, target)?;
    let start = target_start(p1.grid(), &target);
    let full = make_weight(&p1, &p2, spec.weight, &path_set(&data.state_space, &target))?;
    let weight: Vec<T> = full.values[start..]
        .iter()
        .zip(c1.valid.iter().zip(&c2.valid))
        .map(|(&w, (&a, &b))| if a && b { w } else { T::zero() })
        .collect();
    let active: Vec<usize> = (0..weight.len())
        .filter(|&g| weight[g] > T::zero())
        .collect();
    if active.is_empty() {
        return Err(Error::EmptyComparisonDomain);
    }
    let difference: Vec<T> = c1
        .values
        .iter()
        .zip(&c2.values)
        .map(|(&a, &b)| a - b)
        .collect();
    let n = data.n_clusters();
    let root_n = T::from_usize_exact(n).sqrt();
    let statistic = active
        .iter()
        .map(|&g| (weight[g] * difference[g]).abs())
        .fold(T::zero(), T::max);
    let scaled = root_n * statistic;

    let null: Vec<Option<T>> = match spec.method {
        Method::Influence => {
            let s1 = target_influence(&p1, target)?;
            let s2 = target_influence(&p2, target)?;
            let inv_root_n = root_n.recip();
            (0..spec.reps)
                .into_par_iter()
                .map(|b| {
                    let xi: Vec<T> = normal_multipliers(n, seed, b as u64);
                    let sup = active
                        .iter()
                        .map(|&g| {
                            let s: T = (0..n)
                                .map(|i| (s1.cluster(i)[g] - s2.cluster(i)[g]) * xi[i])
                                .sum();
                            (weight[g] * s * inv_root_n).abs()
                        })
                        .fold(T::zero(), T::max);
                    Some(sup)
                })
                .collect()
        }
        Method::ClusterBootstrap => (0..spec.reps)
            .into_par_iter()
            .map(|b| {
                let counts = multinomial_counts(n, seed, b as u64);
                let r1 = bootstrap_with_counts(&p1, &target, counts.clone());
                let r2 = bootstrap_with_counts(&p2, &target, counts);
                let (r1, r2) = match (r1, r2) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => return None,
                };
                active
                    .iter()
                    .filter(|&&g| r1.valid[g] && r2.valid[g])
                    .map(|&g| {
                        (weight[g] * root_n * (r1.values[g] - r2.values[g] - difference[g])).abs()
                    })
                    .reduce(T::max)
            })
            .collect(),
    };
    let usable: Vec<T> = null.into_iter().flatten().collect();
    if usable.is_empty() {
        return Err(Error::EmptyComparisonDomain);
    }
    let exceed = usable.iter().filter(|&&v| v >= scaled).count();
    let p_value = if spec.corrected {
        (1 + exceed) as f64 / (usable.len() + 1) as f64
    } else {
        exceed as f64 / usable.len() as f64
    };
    Ok(TestResult {
        statistic,
        scaled_statistic: scaled,
        p_value,
        grid: c1.grid,
        difference,
        weight,
        reps: spec.reps,
        effective_reps: usable.len(),
        method: spec.method,
        seed: seed.master,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cluster, SubjectPath, Transition};

    fn tr(time: f64, from: usize, to: usize) -> Transition<f64> {
        Transition { time, from, to }
    }

    fn two_arm(shift: f64, copy: bool) -> ClusteredDataset<f64> {
        let clusters = (0..8)
            .map(|i| {
                let t = 0.5 + 0.3 * i as f64;
                let a = SubjectPath::censored("a", 1, vec![tr(t, 1, 2), tr(t + 1.0, 2, 3)], 6.0)
                    .with_arm(Arm::One);
                let b =
                    SubjectPath::censored("b", 1, vec![tr(t + 0.1, 1, 3)], 6.0).with_arm(Arm::One);
                let (c, d) = if copy {
                    let mut c = a.clone();
                    let mut d = b.clone();
                    c.id = "c".into();
                    d.id = "d".into();
                    (c.with_arm(Arm::Two), d.with_arm(Arm::Two))
                } else {
                    (
                        SubjectPath::censored("c", 1, vec![tr(t + shift, 1, 2)], 6.0)
                            .with_arm(Arm::Two),
                        SubjectPath::censored("d", 1, vec![], 3.0 + 0.1 * i as f64)
                            .with_arm(Arm::Two),
                    )
                };
                Cluster::new(format!("k{i}"), vec![a, b, c, d])
            })
            .collect();
        ClusteredDataset::new(StateSpace::illness_death(), clusters)
    }

    fn spec(method: Method, weight: WeightKind) -> TestSpec<f64> {
        TestSpec {
            target: Target::Occupation { state: 2 },
            weighting: Weighting::TypicalMember,
            weight,
            method,
            reps: 200,
            corrected: false,
        }
    }

    #[test]
    fn identical_arms_give_unit_p_value() {
        let ds = two_arm(0.0, true);
        for method in [Method::Influence, Method::ClusterBootstrap] {
            for w in [WeightKind::IndicatorRiskSets, WeightKind::RiskRatio] {
                let r = ks_two_sample(&ds, &spec(method, w), SeedSpec::new(1)).unwrap();
                assert_eq!(r.statistic, 0.0);
                assert_eq!(r.p_value, 1.0);
            }
        }
    }

    #[test]
    fn different_arms_give_valid_p_value() {
        let ds = two_arm(0.7, false);
        for method in [Method::Influence, Method::ClusterBootstrap] {
            let r =
                ks_two_sample(&ds, &spec(method, WeightKind::RiskRatio), SeedSpec::new(2)).unwrap();
            assert!(r.statistic > 0.0);
            assert!((0.0..=1.0).contains(&r.p_value));
            let again =
                ks_two_sample(&ds, &spec(method, WeightKind::RiskRatio), SeedSpec::new(2)).unwrap();
            assert_eq!(r, again);
        }
    }

    #[test]
    fn missing_arm_is_rejected() {
        let mut ds = two_arm(0.0, true);
        ds.clusters[3].members.retain(|m| m.arm == Some(Arm::One));
        let err = ks_two_sample(
            &ds,
            &spec(Method::Influence, WeightKind::RiskRatio),
            SeedSpec::new(1),
        );
        assert!(matches!(err, Err(Error::ArmMissingInCluster(id)) if id == "k3"));
    }

    #[test]
    fn ratio_weight_survival_example() {
        let sample = |m: usize| {
            let members = (0..m)
                .map(|j| SubjectPath::censored(j.to_string(), 1, vec![tr(1.0, 1, 2)], 2.0))
                .collect();
            ClusteredDataset::new(StateSpace::survival(), vec![Cluster::new("a", members)])
        };
        let p1 = build_panel_on_grid(&sample(2), Weighting::AllMembers, vec![1.0, 1.5]).unwrap();
        let p2 = build_panel_on_grid(&sample(3), Weighting::AllMembers, vec![1.0, 1.5]).unwrap();
        let w = make_weight(&p1, &p2, WeightKind::RiskRatio, &[1]).unwrap();
        assert!((w.values[0] - 1.2).abs() < 1e-15);
        // nobody remains in state 1 after everyone left at t=1.
        assert_eq!(w.values[1], 0.0);
        let ind = make_weight(&p1, &p2, WeightKind::IndicatorRiskSets, &[1]).unwrap();
        assert_eq!(ind.values, vec![1.0, 0.0]);
    }
}
