//! Multiplier (wild) realizations and the nonparametric cluster bootstrap.
//!
//! Every replicate draws from its own ChaCha stream selected by the replicate
//! index, so results do not depend on scheduling or the number of workers.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::{estimate_target, evaluate_target, Target, TargetCurve};
use crate::infl::{target_influence, InfluenceSet};
use crate::panel::RiskPanel;
use crate::scalar::Scalar;

/// Master seed; replicate `b` reads stream `b` of the master generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(index);
        rng
    }

    /// Independent seed for a sub-task (e.g. one simulated dataset).
    pub fn child(&self, index: u64) -> SeedSpec {
        SeedSpec {
            master: splitmix64(self.master ^ splitmix64(index.wrapping_add(1))),
        }
    }
}

/// Standard normal multipliers `ξ_1..ξ_n` for replicate `b`.
pub fn normal_multipliers<T: Scalar>(n: usize, seed: SeedSpec, b: u64) -> Vec<T> {
    let mut rng = seed.rng(b);
    (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Multinomial(n; 1/n, …, 1/n) cluster counts for replicate `b`.
pub fn multinomial_counts(n: usize, seed: SeedSpec, b: u64) -> Vec<u32> {
    let mut rng = seed.rng(b);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// `B̂(t_g) = n^{-1/2} Σ_i ĝ_i(t_g) ξ_i` on the influence set's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierRealization<T> {
    pub xi: Vec<T>,
    pub values: Vec<T>,
}

pub fn multiplier_with<T: Scalar>(set: &InfluenceSet<T>, xi: Vec<T>) -> MultiplierRealization<T> {
    assert_eq!(xi.len(), set.n(), "one multiplier per cluster");
    let scale = T::from_usize_exact(set.n()).sqrt().recip();
    let mut values = vec![T::zero(); set.grid().len()];
    for (i, &x) in xi.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (v, &g) in values.iter_mut().zip(set.cluster(i)) {
            *v = *v + g * x;
        }
    }
    values.iter_mut().for_each(|v| *v = *v * scale);
    MultiplierRealization { xi, values }
}

pub fn multiplier_draw<T: Scalar>(
    set: &InfluenceSet<T>,
    seed: SeedSpec,
    b: u64,
) -> MultiplierRealization<T> {
    multiplier_with(set, normal_multipliers(set.n(), seed, b))
}

/// Target re-estimated under multinomial cluster counts on the original grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapReplicate<T> {
    pub counts: Vec<u32>,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

pub fn bootstrap_with_counts<T: Scalar>(
    panel: &RiskPanel<T>,
    target: &Target<T>,
    counts: Vec<u32>,
) -> Result<BootstrapReplicate<T>> {
    if counts.len() != panel.n_clusters() {
        return Err(Error::InvalidArgument(format!(
            "{} bootstrap counts for {} clusters",
            counts.len(),
            panel.n_clusters()
        )));
    }
    let (values, valid) = evaluate_target(panel, target, Some(&counts))?;
    Ok(BootstrapReplicate {
        counts,
        values,
        valid,
    })
}

pub fn cluster_bootstrap_draw<T: Scalar>(
    panel: &RiskPanel<T>,
    target: &Target<T>,
    seed: SeedSpec,
    b: u64,
) -> Result<BootstrapReplicate<T>> {
    let n = panel.n_clusters();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "cluster bootstrap needs at least 2 clusters".into(),
        ));
    }
    bootstrap_with_counts(panel, target, multinomial_counts(n, seed, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Multiplier realizations from the influence functions.
    Influence,
    /// Nonparametric cluster bootstrap.
    ClusterBootstrap,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Influence => "if",
            Method::ClusterBootstrap => "cb",
        }
    }
}

/// `B` replicate trajectories of the centred, `√n`-scaled estimator on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateMatrix<T> {
    pub method: Method,
    pub grid: Vec<T>,
    /// Row-major `B × grid.len()`.
    pub values: Vec<T>,
    pub valid: Vec<bool>,
    pub n_clusters: usize,
}

impl<T: Scalar> ReplicateMatrix<T> {
    pub fn replicates(&self) -> usize {
        if self.grid.is_empty() {
            0
        } else {
            self.values.len() / self.grid.len()
        }
    }

    pub fn row(&self, b: usize) -> &[T] {
        let g = self.grid.len();
        &self.values[b * g..(b + 1) * g]
    }

    pub fn row_valid(&self, b: usize) -> &[bool] {
        let g = self.grid.len();
        &self.valid[b * g..(b + 1) * g]
    }

    /// Standard deviation across replicates at grid index `g`, over replicates valid there.
    pub fn sd_at(&self, g: usize) -> Option<T> {
        let vals: Vec<T> = (0..self.replicates())
            .filter(|&b| self.row_valid(b)[g])
            .map(|b| self.row(b)[g])
            .collect();
        if vals.len() < 2 {
            return None;
        }
        let m = T::from_usize_exact(vals.len());
        let mean = vals.iter().copied().sum::<T>() / m;
        let ss: T = vals.iter().map(|&v| (v - mean) * (v - mean)).sum();
        Some((ss / (m - T::one())).sqrt())
    }
}

pub fn multiplier_replicates<T: Scalar>(
    set: &InfluenceSet<T>,
    reps: usize,
    seed: SeedSpec,
) -> ReplicateMatrix<T> {
    let rows: Vec<Vec<T>> = (0..reps)
        .into_par_iter()
        .map(|b| multiplier_draw(set, seed, b as u64).values)
        .collect();
    ReplicateMatrix {
        method: Method::Influence,
        grid: set.grid().to_vec(),
        values: rows.concat(),
        valid: set.valid().repeat(reps),
        n_clusters: set.n(),
    }
}

/// Replicates `√n (P̂* − P̂)`, valid where both the point estimate and the
/// replicate have non-empty risk sets.
pub fn bootstrap_replicates<T: Scalar>(
    panel: &RiskPanel<T>,
    point: &TargetCurve<T>,
    reps: usize,
    seed: SeedSpec,
) -> Result<ReplicateMatrix<T>> {
    let n = panel.n_clusters();
    let root_n = T::from_usize_exact(n).sqrt();
    let rows: Vec<(Vec<T>, Vec<bool>)> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let rep =
                cluster_bootstrap_draw(panel, &point.target, seed, b as u64).map_err(|e| {
                    Error::Replicate {
                        index: b,
                        source: Box::new(e),
                    }
                })?;
            let vals = rep
                .values
                .iter()
                .zip(&point.values)
                .map(|(&s, &p)| root_n * (s - p))
                .collect();
            let ok = rep
                .valid
                .iter()
                .zip(&point.valid)
                .map(|(&a, &b)| a && b)
                .collect();
            Ok((vals, ok))
        })
        .collect::<Result<_>>()?;
    let (values, valid): (Vec<Vec<T>>, Vec<Vec<bool>>) = rows.into_iter().unzip();
    Ok(ReplicateMatrix {
        method: Method::ClusterBootstrap,
        grid: point.grid.clone(),
        values: values.concat(),
        valid: valid.concat(),
        n_clusters: n,
    })
}

/// Replicate trajectories for `target` by either method.
pub fn replicate_curves<T: Scalar>(
    panel: &RiskPanel<T>,
    target: Target<T>,
    method: Method,
    reps: usize,
    seed: SeedSpec,
) -> Result<ReplicateMatrix<T>> {
    if reps == 0 {
        return Err(Error::InvalidArgument(
            "at least one replicate is required".into(),
        ));
    }
    match method {
        Method::Influence => Ok(multiplier_replicates(
            &target_influence(panel, target)?,
            reps,
            seed,
        )),
        Method::ClusterBootstrap => {
            bootstrap_replicates(panel, &estimate_target(panel, target)?, reps, seed)
        }
    }
}
