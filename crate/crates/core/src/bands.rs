//! Pointwise confidence intervals and simultaneous confidence bands.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estim::{estimate_target, TargetCurve};
use crate::infl::target_influence;
use crate::panel::RiskPanel;
use crate::resample::{
    bootstrap_replicates, multiplier_replicates, Method, ReplicateMatrix, SeedSpec,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    /// `g(x) = log(-log x)`
    LogLog,
    /// `g(x) = log(x / (1 - x))`
    Logit,
    Identity,
}

impl Transform {
    pub fn in_domain<T: Scalar>(self, x: T) -> bool {
        match self {
            Transform::Identity => x.is_finite(),
            _ => x > T::zero() && x < T::one(),
        }
    }

    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Transform::LogLog => (-x.ln()).ln(),
            Transform::Logit => (x / (T::one() - x)).ln(),
            Transform::Identity => x,
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Transform::LogLog => T::one() / (x * x.ln()),
            Transform::Logit => T::one() / (x * (T::one() - x)),
            Transform::Identity => T::one(),
        }
    }

    pub fn inverse<T: Scalar>(self, y: T) -> T {
        match self {
            Transform::LogLog => (-y.exp()).exp(),
            Transform::Logit => T::one() / (T::one() + (-y).exp()),
            Transform::Identity => y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::LogLog => "loglog",
            Transform::Logit => "logit",
            Transform::Identity => "identity",
        }
    }
}

/// Two-sided standard normal quantile `z_{1-α/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// `g⁻¹(g(p̂) ± z |ġ(p̂)| se)`, returned in increasing order.
pub fn pointwise_ci<T: Scalar>(
    estimate: T,
    se: T,
    transform: Transform,
    alpha: f64,
) -> Result<(T, T)> {
    if !transform.in_domain(estimate) {
        return Err(Error::TransformDomain(estimate.to_f64_lossy()));
    }
    if !(alpha > 0.0 && alpha < 1.0) || se < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} or se {se} out of range"
        )));
    }
    if se == T::zero() {
        return Ok((estimate, estimate));
    }
    let half = T::lit(normal_quantile(alpha)) * transform.derivative(estimate).abs() * se;
    let centre = transform.apply(estimate);
    let a = transform.inverse(centre - half);
    let b = transform.inverse(centre + half);
    Ok((a.min(b), a.max(b)))
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub transform: Transform,
    pub alpha: f64,
    /// Band domain as percentiles of the target's jump times.
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub reps: usize,
    pub method: Method,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            transform: Transform::LogLog,
            alpha: 0.05,
            lower_pct: 0.10,
            upper_pct: 0.90,
            reps: 1000,
            method: Method::Influence,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Band<T> {
    pub grid: Vec<T>,
    pub estimate: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub critical_value: T,
    pub alpha: f64,
    pub method: Method,
    pub transform: Transform,
    pub reps: usize,
    /// Replicates with at least one valid point in the domain.
    pub effective_reps: usize,
    pub seed: Option<u64>,
    /// Domain grid points dropped because the estimate was outside the transform's domain.
    pub dropped: usize,
}

impl<T: Scalar> Band<T> {
    /// `(lower, upper)` at time `t`, if `t` lies in the band's domain.
    pub fn at(&self, t: T) -> Option<(T, T)> {
        let n = self.grid.partition_point(|&u| u <= t);
        if n == 0 || t > *self.grid.last()? {
            return None;
        }
        Some((self.lower[n - 1], self.upper[n - 1]))
    }
}

/// Grid points inside the percentile window of the target's jump times.
pub fn band_domain<T: Scalar>(
    panel: &RiskPanel<T>,
    point: &TargetCurve<T>,
    lower_pct: f64,
    upper_pct: f64,
) -> Result<Vec<bool>> {
    let mut jumps: Vec<f64> = point
        .target
        .driving_transitions(panel.state_space())
        .into_iter()
        .flat_map(|(h, j)| panel.jump_times(h, j))
        .map(|t| t.to_f64_lossy())
        .filter(|&t| t > origin_of(point))
        .collect();
    if jumps.is_empty() {
        return Err(Error::EmptyDomain);
    }
    jumps.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&jumps, lower_pct);
    let hi = quantile_sorted(&jumps, upper_pct);
    Ok(point
        .grid
        .iter()
        .map(|t| (lo..=hi).contains(&t.to_f64_lossy()))
        .collect())
}

fn origin_of<T: Scalar>(point: &TargetCurve<T>) -> f64 {
    match point.target {
        crate::estim::Target::Transition { origin, .. } => origin.to_f64_lossy(),
        crate::estim::Target::Occupation { .. } => f64::NEG_INFINITY,
    }
}

/// Band from a replicate matrix on the point curve's grid.
///
/// `variance` is the pointwise variance of `√n (P̂ − P)` used in the weight
/// `q̂ = 1 / (1 + σ̂²)`; `domain` restricts the sup.
pub fn band_from_replicates<T: Scalar>(
    point: &TargetCurve<T>,
    reps: &ReplicateMatrix<T>,
    variance: &[T],
    domain: &[bool],
    spec: &BandSpec,
    seed: Option<u64>,
) -> Result<Band<T>> {
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {} must lie in (0, 1)",
            spec.alpha
        )));
    }
    let mut dropped = 0;
    let idx: Vec<usize> = (0..point.grid.len())
        .filter(|&g| domain[g] && point.valid[g])
        .filter(|&g| {
            let ok = spec.transform.in_domain(point.values[g]);
            dropped += usize::from(!ok);
            ok
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let scale: Vec<T> = idx
        .iter()
        .map(|&g| spec.transform.derivative(point.values[g]).abs() / (T::one() + variance[g]))
        .collect();

    let mut sups: Vec<f64> = (0..reps.replicates())
        .filter_map(|b| {
            let row = reps.row(b);
            let ok = reps.row_valid(b);
            idx.iter()
                .zip(&scale)
                .filter(|(&g, _)| ok[g])
                .map(|(&g, &s)| (s * row[g]).abs().to_f64_lossy())
                .reduce(f64::max)
        })
        .collect();
    if sups.is_empty() {
        return Err(Error::EmptyDomain);
    }
    sups.sort_by(f64::total_cmp);
    let rank = ((1.0 - spec.alpha) * sups.len() as f64).ceil() as usize;
    let critical = sups[rank.clamp(1, sups.len()) - 1];

    let root_n = T::from_usize_exact(reps.n_clusters).sqrt();
    let c = T::lit(critical);
    let mut band = Band {
        grid: Vec::with_capacity(idx.len()),
        estimate: Vec::with_capacity(idx.len()),
        lower: Vec::with_capacity(idx.len()),
        upper: Vec::with_capacity(idx.len()),
        critical_value: c,
        alpha: spec.alpha,
        method: reps.method,
        transform: spec.transform,
        reps: reps.replicates(),
        effective_reps: sups.len(),
        seed,
        dropped,
    };
    for &g in &idx {
        let p = point.values[g];
        let half = c * (T::one() + variance[g]) / root_n;
        let centre = spec.transform.apply(p);
        let a = spec.transform.inverse(centre - half);
        let b = spec.transform.inverse(centre + half);
        band.grid.push(point.grid[g]);
        band.estimate.push(p);
        band.lower.push(a.min(b));
        band.upper.push(a.max(b));
    }
    Ok(band)
}

/// Pointwise variance of the replicates (bootstrap) or of the influence functions.
pub fn replicate_variance<T: Scalar>(reps: &ReplicateMatrix<T>) -> Vec<T> {
    (0..reps.grid.len())
        .map(|g| reps.sd_at(g).map_or(T::zero(), |s| s * s))
        .collect()
}

/// Simultaneous band for the target of `point`, drawing replicates per `spec.method`.
pub fn simultaneous_band<T: Scalar>(
    panel: &RiskPanel<T>,
    point: &TargetCurve<T>,
    spec: &BandSpec,
    seed: SeedSpec,
) -> Result<Band<T>> {
    let domain = band_domain(panel, point, spec.lower_pct, spec.upper_pct)?;
    let (reps, variance) = match spec.method {
        Method::Influence => {
            let set = target_influence(panel, point.target)?;
            let var: Vec<T> = (0..set.grid().len())
                .map(|g| set.covariance_index(g, g))
                .collect();
            (multiplier_replicates(&set, spec.reps, seed), var)
        }
        Method::ClusterBootstrap => {
            let reps = bootstrap_replicates(panel, point, spec.reps, seed)?;
            let var = replicate_variance(&reps);
            (reps, var)
        }
    };
    band_from_replicates(point, &reps, &variance, &domain, spec, Some(seed.master))
}

/// Convenience: estimate the target and its band in one call.
pub fn band_for_target<T: Scalar>(
    panel: &RiskPanel<T>,
    target: crate::estim::Target<T>,
    spec: &BandSpec,
    seed: SeedSpec,
) -> Result<(TargetCurve<T>, Band<T>)> {
    let point = estimate_target(panel, target)?;
    let band = simultaneous_band(panel, &point, spec, seed)?;
    Ok((point, band))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estim::Target;
    use crate::infl::target_influence;
    use crate::model::{Cluster, ClusteredDataset, StateSpace, SubjectPath, Transition};
    use crate::panel::{build_panel, Weighting};
    use crate::resample::multiplier_with;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pointwise_examples() {
        for tf in [Transform::LogLog, Transform::Logit, Transform::Identity] {
            assert_eq!(pointwise_ci(0.5, 0.0, tf, 0.05).unwrap(), (0.5, 0.5));
        }
        let (lo, hi) = pointwise_ci(0.5, 0.1, Transform::Identity, 0.05).unwrap();
        assert_abs_diff_eq!(lo, 0.304, epsilon = 5e-4);
        assert_abs_diff_eq!(hi, 0.696, epsilon = 5e-4);
        let (lo, hi) = pointwise_ci(0.97, 0.05, Transform::LogLog, 0.05).unwrap();
        assert!(lo > 0.0 && hi < 1.0 && lo < 0.97 && 0.97 < hi);
        assert!(matches!(
            pointwise_ci(1.0, 0.1, Transform::LogLog, 0.05),
            Err(Error::TransformDomain(_))
        ));
        assert!(matches!(
            pointwise_ci(0.0, 0.1, Transform::Logit, 0.05),
            Err(Error::TransformDomain(_))
        ));
    }

    #[test]
    fn transforms_invert() {
        for tf in [Transform::LogLog, Transform::Logit, Transform::Identity] {
            for x in [0.01f64, 0.3, 0.77, 0.999] {
                assert_abs_diff_eq!(tf.inverse(tf.apply(x)), x, epsilon = 1e-12);
                let h = 1e-6;
                let num = (tf.apply(x + h) - tf.apply(x - h)) / (2.0 * h);
                assert_abs_diff_eq!(tf.derivative(x), num, epsilon = 1e-4 * num.abs().max(1.0));
            }
        }
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.1), 1.3, epsilon = 1e-12);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
    }

    fn data() -> ClusteredDataset<f64> {
        let tr = |time, from, to| Transition { time, from, to };
        let clusters = (0..12)
            .map(|i| {
                let t = 0.3 + 0.21 * i as f64;
                let mut m = vec![SubjectPath::censored(
                    "1",
                    1,
                    vec![tr(t, 1, 2), tr(t + 0.9, 2, 3)],
                    6.0,
                )];
                if i % 3 != 0 {
                    m.push(SubjectPath::censored("2", 1, vec![tr(t + 0.05, 1, 3)], 6.0));
                }
                m.push(SubjectPath::censored("3", 1, vec![], 1.0 + 0.3 * i as f64));
                Cluster::new(format!("c{i}"), m)
            })
            .collect();
        ClusteredDataset::new(StateSpace::illness_death(), clusters)
    }

    #[test]
    fn zero_replicates_collapse_band() {
        let panel = build_panel(&data(), Weighting::TypicalMember);
        let point = estimate_target(&panel, Target::Occupation { state: 2 }).unwrap();
        let set = target_influence(&panel, point.target).unwrap();
        let zero = multiplier_with(&set, vec![0.0; set.n()]);
        let reps = ReplicateMatrix {
            method: Method::Influence,
            grid: set.grid().to_vec(),
            values: zero.values,
            valid: set.valid().to_vec(),
            n_clusters: set.n(),
        };
        let var: Vec<f64> = (0..set.grid().len())
            .map(|g| set.covariance_index(g, g))
            .collect();
        let domain = band_domain(&panel, &point, 0.1, 0.9).unwrap();
        let band =
            band_from_replicates(&point, &reps, &var, &domain, &BandSpec::default(), None).unwrap();
        assert_eq!(band.critical_value, 0.0);
        for g in 0..band.grid.len() {
            assert_abs_diff_eq!(band.lower[g], band.estimate[g], epsilon = 1e-15);
            assert_abs_diff_eq!(band.upper[g], band.estimate[g], epsilon = 1e-15);
        }
    }

    #[test]
    fn bands_nest_in_alpha_and_contain_estimate() {
        let panel = build_panel(&data(), Weighting::TypicalMember);
        let point = estimate_target(&panel, Target::Occupation { state: 2 }).unwrap();
        for method in [Method::Influence, Method::ClusterBootstrap] {
            let mut prev: Option<Band<f64>> = None;
            for alpha in [0.10, 0.05, 0.01] {
                let spec = BandSpec {
                    alpha,
                    reps: 400,
                    method,
                    ..BandSpec::default()
                };
                let band = simultaneous_band(&panel, &point, &spec, SeedSpec::new(3)).unwrap();
                for g in 0..band.grid.len() {
                    assert!(band.lower[g] <= band.estimate[g] && band.estimate[g] <= band.upper[g]);
                    assert!(band.lower[g] > 0.0 && band.upper[g] < 1.0);
                }
                if let Some(p) = prev {
                    assert!(band.critical_value >= p.critical_value);
                }
                prev = Some(band);
            }
        }
    }
}
