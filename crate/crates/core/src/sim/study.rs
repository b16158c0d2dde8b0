//! Monte Carlo harness: pointwise accuracy, band coverage and test
//! calibration over repeated simulated trials.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_trial, true_occupation, SimConfig};
use crate::bands::{
    band_domain, band_from_replicates, pointwise_ci, quantile_sorted, replicate_variance, Band,
    BandSpec, Transform,
};
use crate::error::{Error, Result};
use crate::estim::{estimate_target, Target, TargetCurve};
use crate::infl::target_influence;
use crate::ks::{ks_two_sample, TestSpec, WeightKind};
use crate::model::ClusteredDataset;
use crate::panel::{build_panel, Weighting};
use crate::resample::{bootstrap_replicates, multiplier_replicates, Method, SeedSpec};

const ILL: Target<f64> = Target::Occupation { state: 2 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneSampleDesign {
    pub sim: SimConfig,
    pub datasets: usize,
    /// Multiplier sets / bootstrap replicates per dataset.
    pub reps: usize,
    pub seed: u64,
    /// Follow-up time percentiles at which pointwise intervals are assessed.
    pub percentiles: Vec<f64>,
    pub alpha: f64,
    pub transform: Transform,
    pub domain: (f64, f64),
}

impl OneSampleDesign {
    pub fn new(sim: SimConfig, datasets: usize, reps: usize, seed: u64) -> Self {
        Self {
            sim,
            datasets,
            reps,
            seed,
            percentiles: vec![0.4, 0.6],
            alpha: 0.05,
            transform: Transform::LogLog,
            domain: (0.10, 0.90),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleDesign {
    pub sim: SimConfig,
    pub datasets: usize,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub weighting: Weighting,
    pub weight: WeightKind,
}

impl TwoSampleDesign {
    pub fn new(sim: SimConfig, datasets: usize, reps: usize, seed: u64) -> Self {
        Self {
            sim,
            datasets,
            reps,
            seed,
            alpha: 0.05,
            weighting: Weighting::TypicalMember,
            weight: WeightKind::RiskRatio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    OneSample(OneSampleDesign),
    TwoSample(TwoSampleDesign),
}

/// Accuracy of one method's estimate and interval at a follow-up percentile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseSummary {
    pub method: String,
    pub bias: f64,
    pub mcsd: f64,
    pub ase: f64,
    pub coverage: f64,
    /// Datasets where the interval could not be formed (counted as misses).
    pub undefined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileSummary {
    pub percentile: f64,
    pub mean_time: f64,
    pub mean_truth: f64,
    pub methods: Vec<PointwiseSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub method: String,
    pub coverage: f64,
    pub mean_critical_value: f64,
    pub mean_domain_points: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneSampleReport {
    pub design: OneSampleDesign,
    pub pointwise: Vec<PercentileSummary>,
    pub bands: Vec<BandSummary>,
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub method: String,
    pub rejection_rate: f64,
    pub mean_p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub design: TwoSampleDesign,
    pub rejections: Vec<RejectionSummary>,
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioReport {
    OneSample(OneSampleReport),
    TwoSample(TwoSampleReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenarios: Vec<ScenarioReport>,
    pub runtime_secs: f64,
}

const METHODS: [&str; 3] = ["naive", "if", "cb"];

/// One method's result at one percentile in one dataset.
#[derive(Clone, Copy, Debug)]
struct PointOutcome {
    estimate: f64,
    se: f64,
    covered: Option<bool>,
}

#[derive(Clone, Debug)]
struct DatasetOutcome {
    times: Vec<f64>,
    truths: Vec<f64>,
    /// `[percentile][method]`.
    points: Vec<[PointOutcome; 3]>,
    /// `[method]`: (covered, critical value, domain size).
    bands: [(bool, f64, usize); 3],
}

fn index_at(grid: &[f64], t: f64) -> Option<usize> {
    grid.partition_point(|&u| u <= t).checked_sub(1)
}

/// Follow-up time of each subject: its last observation.
pub fn follow_up_times(data: &ClusteredDataset<f64>) -> Vec<f64> {
    let mut t: Vec<f64> = data.subjects().map(|s| s.terminus.time).collect();
    t.sort_by(f64::total_cmp);
    t
}

fn point_outcome(
    curve: &TargetCurve<f64>,
    se: impl Fn(usize) -> Option<f64>,
    t: f64,
    truth: f64,
    design: &OneSampleDesign,
) -> PointOutcome {
    let Some(g) = index_at(&curve.grid, t) else {
        return PointOutcome {
            estimate: 0.0,
            se: f64::NAN,
            covered: None,
        };
    };
    let estimate = curve.values[g];
    let se = if curve.valid[g] { se(g) } else { None };
    let covered = se
        .and_then(|s| pointwise_ci(estimate, s, design.transform, design.alpha).ok())
        .map(|(lo, hi)| lo <= truth && truth <= hi);
    PointOutcome {
        estimate,
        se: se.unwrap_or(f64::NAN),
        covered,
    }
}

fn band_covers(band: &Band<f64>, sim: &SimConfig) -> bool {
    band.grid
        .iter()
        .zip(band.lower.iter().zip(&band.upper))
        .all(|(&t, (&lo, &hi))| {
            let p = true_occupation(sim, t);
            lo <= p && p <= hi
        })
}

fn one_sample_dataset(design: &OneSampleDesign, r: usize) -> Result<DatasetOutcome> {
    let seed = SeedSpec::new(design.seed).child(r as u64);
    let data = simulate_trial(&design.sim, seed);
    let follow = follow_up_times(&data);
    let times: Vec<f64> = design
        .percentiles
        .iter()
        .map(|&p| quantile_sorted(&follow, p))
        .collect();
    let truths: Vec<f64> = times
        .iter()
        .map(|&t| true_occupation(&design.sim, t))
        .collect();
    let spec = |method| BandSpec {
        transform: design.transform,
        alpha: design.alpha,
        lower_pct: design.domain.0,
        upper_pct: design.domain.1,
        reps: design.reps,
        method,
    };

    let panel = build_panel(&data, Weighting::TypicalMember);
    let point = estimate_target(&panel, ILL)?;
    let domain = band_domain(&panel, &point, design.domain.0, design.domain.1)?;
    let n = panel.n_clusters() as f64;

    let set = target_influence(&panel, ILL)?;
    let if_var: Vec<f64> = (0..point.grid.len())
        .map(|g| set.covariance_index(g, g))
        .collect();
    let if_reps = multiplier_replicates(&set, design.reps, seed.child(1));
    let if_band = band_from_replicates(
        &point,
        &if_reps,
        &if_var,
        &domain,
        &spec(Method::Influence),
        None,
    )?;

    let cb_reps = bootstrap_replicates(&panel, &point, design.reps, seed.child(2))?;
    let cb_var = replicate_variance(&cb_reps);
    let cb_band = band_from_replicates(
        &point,
        &cb_reps,
        &cb_var,
        &domain,
        &spec(Method::ClusterBootstrap),
        None,
    )?;

    // Working independence: every subject is its own cluster.
    let flat = data.as_singletons();
    let npanel = build_panel(&flat, Weighting::AllMembers);
    let npoint = estimate_target(&npanel, ILL)?;
    let ndomain = band_domain(&npanel, &npoint, design.domain.0, design.domain.1)?;
    let nset = target_influence(&npanel, ILL)?;
    let nn = npanel.n_clusters() as f64;
    let n_var: Vec<f64> = (0..npoint.grid.len())
        .map(|g| nset.covariance_index(g, g))
        .collect();
    let n_reps = multiplier_replicates(&nset, design.reps, seed.child(3));
    let n_band = band_from_replicates(
        &npoint,
        &n_reps,
        &n_var,
        &ndomain,
        &spec(Method::Influence),
        None,
    )?;

    let points = times
        .iter()
        .zip(&truths)
        .map(|(&t, &truth)| {
            [
                point_outcome(&npoint, |g| Some((n_var[g] / nn).sqrt()), t, truth, design),
                point_outcome(&point, |g| Some((if_var[g] / n).sqrt()), t, truth, design),
                point_outcome(
                    &point,
                    |g| cb_reps.sd_at(g).map(|s| s / n.sqrt()),
                    t,
                    truth,
                    design,
                ),
            ]
        })
        .collect();
    let summary = |b: &Band<f64>| (band_covers(b, &design.sim), b.critical_value, b.grid.len());
    Ok(DatasetOutcome {
        times,
        truths,
        points,
        bands: [summary(&n_band), summary(&if_band), summary(&cb_band)],
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs.iter().copied());
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

fn check_design(datasets: usize, reps: usize, alpha: f64, sim: &SimConfig) -> Result<()> {
    if datasets < 2 {
        return Err(Error::InvalidArgument(
            "a study needs at least two datasets".into(),
        ));
    }
    if reps < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 replicates are required, got {reps}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} must lie in (0, 1)"
        )));
    }
    sim.validate().map_err(Error::InvalidArgument)
}

fn with_index<T>(r: usize, res: Result<T>) -> Result<T> {
    res.map_err(|e| Error::Replicate {
        index: r,
        source: Box::new(e),
    })
}

pub fn run_one_sample(design: &OneSampleDesign) -> Result<OneSampleReport> {
    check_design(design.datasets, design.reps, design.alpha, &design.sim)?;
    let start = Instant::now();
    let outcomes: Vec<DatasetOutcome> = (0..design.datasets)
        .into_par_iter()
        .map(|r| with_index(r, one_sample_dataset(design, r)))
        .collect::<Result<_>>()?;
    let r = outcomes.len() as f64;

    let pointwise = design
        .percentiles
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let methods = METHODS
                .iter()
                .enumerate()
                .map(|(m, name)| {
                    let est: Vec<f64> = outcomes.iter().map(|o| o.points[k][m].estimate).collect();
                    let ses: Vec<f64> = outcomes
                        .iter()
                        .map(|o| o.points[k][m].se)
                        .filter(|s| s.is_finite())
                        .collect();
                    PointwiseSummary {
                        method: name.to_string(),
                        bias: mean(
                            outcomes
                                .iter()
                                .map(|o| o.points[k][m].estimate - o.truths[k]),
                        ),
                        mcsd: sd(&est),
                        ase: mean(ses.into_iter()),
                        coverage: outcomes
                            .iter()
                            .filter(|o| o.points[k][m].covered == Some(true))
                            .count() as f64
                            / r,
                        undefined: outcomes
                            .iter()
                            .filter(|o| o.points[k][m].covered.is_none())
                            .count(),
                    }
                })
                .collect();
            PercentileSummary {
                percentile: p,
                mean_time: mean(outcomes.iter().map(|o| o.times[k])),
                mean_truth: mean(outcomes.iter().map(|o| o.truths[k])),
                methods,
            }
        })
        .collect();
    let bands = METHODS
        .iter()
        .enumerate()
        .map(|(m, name)| BandSummary {
            method: name.to_string(),
            coverage: outcomes.iter().filter(|o| o.bands[m].0).count() as f64 / r,
            mean_critical_value: mean(outcomes.iter().map(|o| o.bands[m].1)),
            mean_domain_points: mean(outcomes.iter().map(|o| o.bands[m].2 as f64)),
        })
        .collect();
    Ok(OneSampleReport {
        design: design.clone(),
        pointwise,
        bands,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_two_sample(design: &TwoSampleDesign) -> Result<TwoSampleReport> {
    check_design(design.datasets, design.reps, design.alpha, &design.sim)?;
    let start = Instant::now();
    let methods = [Method::Influence, Method::ClusterBootstrap];
    let p_values: Vec<[f64; 2]> = (0..design.datasets)
        .into_par_iter()
        .map(|r| {
            let seed = SeedSpec::new(design.seed).child(r as u64);
            let data = simulate_trial(&design.sim, seed);
            let mut out = [0.0; 2];
            for (m, &method) in methods.iter().enumerate() {
                let spec = TestSpec {
                    target: ILL,
                    weighting: design.weighting,
                    weight: design.weight,
                    method,
                    reps: design.reps,
                    corrected: false,
                };
                out[m] =
                    with_index(r, ks_two_sample(&data, &spec, seed.child(1 + m as u64)))?.p_value;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let r = p_values.len() as f64;
    let rejections = methods
        .iter()
        .enumerate()
        .map(|(m, method)| RejectionSummary {
            method: method.name().to_string(),
            rejection_rate: p_values.iter().filter(|p| p[m] <= design.alpha).count() as f64 / r,
            mean_p_value: mean(p_values.iter().map(|p| p[m])),
        })
        .collect();
    Ok(TwoSampleReport {
        design: design.clone(),
        rejections,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_study(scenarios: &[Scenario]) -> Result<StudyReport> {
    let start = Instant::now();
    let scenarios = scenarios
        .iter()
        .map(|s| match s {
            Scenario::OneSample(d) => run_one_sample(d).map(ScenarioReport::OneSample),
            Scenario::TwoSample(d) => run_two_sample(d).map(ScenarioReport::TwoSample),
        })
        .collect::<Result<_>>()?;
    Ok(StudyReport {
        scenarios,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Named presets. Tables 1 to 3 share one one-sample run per design; table 4
/// runs the two-sample test under no effect and under the +0.5 arm effect.
pub fn preset(
    name: &str,
    clusters: &[usize],
    sizes: (usize, usize),
    datasets: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<Scenario>> {
    let (lo, hi) = sizes;
    match name {
        "table1" | "table2" | "table3" => Ok(clusters
            .iter()
            .map(|&n| {
                Scenario::OneSample(OneSampleDesign::new(
                    SimConfig::one_sample(n, lo, hi),
                    datasets,
                    reps,
                    seed,
                ))
            })
            .collect()),
        "table4" => Ok(clusters
            .iter()
            .flat_map(|&n| {
                [0.0, 0.5].map(|effect| {
                    Scenario::TwoSample(TwoSampleDesign::new(
                        SimConfig::two_arm(n, lo, hi, effect),
                        datasets,
                        reps,
                        seed,
                    ))
                })
            })
            .collect()),
        other => Err(Error::InvalidArgument(format!(
            "unknown scenario '{other}'"
        ))),
    }
}
