//! Clustered illness-death generator with shared gamma frailty and
//! informative cluster size, plus the Monte Carlo study harness.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::model::{Arm, Cluster, ClusteredDataset, StateSpace, SubjectPath, Transition};
use crate::resample::SeedSpec;

pub mod study;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Frailty {
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Every cluster shares the same multiplier (0 switches all hazards off).
    Fixed {
        value: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmDesign {
    None,
    /// Members alternate between arms within each cluster (1:1).
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub clusters: usize,
    pub size_min: usize,
    pub size_max: usize,
    pub frailty: Frailty,
    pub rate_12: f64,
    /// Added to the 1→2 rate when the cluster size is at most its expectation.
    pub small_cluster_bump: f64,
    pub rate_13: f64,
    pub rate_23: f64,
    /// Added to the 1→2 rate in arm 2.
    pub arm_effect: f64,
    pub censor_max: f64,
    pub arms: ArmDesign,
}

impl SimConfig {
    pub fn one_sample(clusters: usize, size_min: usize, size_max: usize) -> Self {
        Self {
            clusters,
            size_min,
            size_max,
            frailty: Frailty::Gamma {
                shape: 1.0,
                scale: 1.0,
            },
            rate_12: 0.25,
            small_cluster_bump: 0.25,
            rate_13: 0.25,
            rate_23: 0.5,
            arm_effect: 0.0,
            censor_max: 3.0,
            arms: ArmDesign::None,
        }
    }

    pub fn two_arm(clusters: usize, size_min: usize, size_max: usize, arm_effect: f64) -> Self {
        Self {
            arm_effect,
            arms: ArmDesign::Balanced,
            ..Self::one_sample(clusters, size_min, size_max)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.clusters == 0 {
            return Err("at least one cluster is required".into());
        }
        if self.size_min == 0 || self.size_min > self.size_max {
            return Err(format!(
                "invalid cluster size range [{}, {}]",
                self.size_min, self.size_max
            ));
        }
        if self.arms == ArmDesign::Balanced && self.size_min < 2 {
            return Err("two-arm designs need clusters of size at least 2".into());
        }
        let rates = [self.rate_12, self.rate_13, self.rate_23];
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err("base rates must be positive".into());
        }
        if self.small_cluster_bump < 0.0
            || self.arm_effect < 0.0
            || self.censor_max.is_nan()
            || self.censor_max <= 0.0
        {
            return Err(
                "rate increments must be non-negative and the censoring bound positive".into(),
            );
        }
        match self.frailty {
            Frailty::Gamma { shape, scale } if !(shape > 0.0 && scale > 0.0) => {
                Err("gamma frailty needs positive shape and scale".into())
            }
            Frailty::Fixed { value } if value.is_nan() || value < 0.0 => {
                Err("fixed frailty must be non-negative".into())
            }
            _ => Ok(()),
        }
    }

    pub fn mean_size(&self) -> f64 {
        (self.size_min + self.size_max) as f64 / 2.0
    }

    /// `P(M ≤ E M)` under the discrete uniform size law.
    pub fn small_cluster_prob(&self) -> f64 {
        let mean = self.mean_size();
        let small = (self.size_min..=self.size_max)
            .filter(|&m| m as f64 <= mean)
            .count();
        small as f64 / (self.size_max - self.size_min + 1) as f64
    }

    fn rate_12_for(&self, size: usize, arm: Option<Arm>) -> f64 {
        let bump = if size as f64 <= self.mean_size() {
            self.small_cluster_bump
        } else {
            0.0
        };
        let effect = if arm == Some(Arm::Two) {
            self.arm_effect
        } else {
            0.0
        };
        self.rate_12 + bump + effect
    }

    fn draw_frailty(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.frailty {
            Frailty::Gamma { shape, scale } => {
                Gamma::new(shape, scale).expect("validated").sample(rng)
            }
            Frailty::Fixed { value } => value,
        }
    }
}

fn exp_time(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rate > 0.0 {
        e / rate
    } else {
        f64::INFINITY
    }
}

/// Uncensored path end-points: `(time of leaving 1, went to 2, time of 2→3)`.
fn latent_path(rng: &mut ChaCha8Rng, a12: f64, a13: f64, a23: f64, v: f64) -> (f64, bool, f64) {
    let t12 = exp_time(rng, a12 * v);
    let t13 = exp_time(rng, a13 * v);
    if t12 < t13 {
        (t12, true, t12 + exp_time(rng, a23 * v))
    } else {
        (t13, false, f64::INFINITY)
    }
}

pub fn simulate_trial(cfg: &SimConfig, seed: SeedSpec) -> ClusteredDataset<f64> {
    cfg.validate().expect("invalid simulation config");
    let mut rng = seed.rng(0);
    let mut clusters = Vec::with_capacity(cfg.clusters);
    for i in 0..cfg.clusters {
        let size = rng.random_range(cfg.size_min..=cfg.size_max);
        let v = cfg.draw_frailty(&mut rng);
        let mut members = Vec::with_capacity(size);
        for m in 0..size {
            let arm = match cfg.arms {
                ArmDesign::None => None,
                ArmDesign::Balanced => Some(if m % 2 == 0 { Arm::One } else { Arm::Two }),
            };
            let a12 = cfg.rate_12_for(size, arm);
            let c = rng.random::<f64>() * cfg.censor_max;
            let (t1, ill, t23) = latent_path(&mut rng, a12, cfg.rate_13, cfg.rate_23, v);
            let id = format!("s{}", m + 1);
            let path = if t1 > c {
                SubjectPath::censored(id, 1, vec![], c)
            } else if !ill {
                SubjectPath::absorbed(
                    id,
                    1,
                    vec![Transition {
                        time: t1,
                        from: 1,
                        to: 3,
                    }],
                )
            } else if t23 <= c {
                SubjectPath::absorbed(
                    id,
                    1,
                    vec![
                        Transition {
                            time: t1,
                            from: 1,
                            to: 2,
                        },
                        Transition {
                            time: t23,
                            from: 2,
                            to: 3,
                        },
                    ],
                )
            } else {
                SubjectPath::censored(
                    id,
                    1,
                    vec![Transition {
                        time: t1,
                        from: 1,
                        to: 2,
                    }],
                    c,
                )
            };
            members.push(match arm {
                Some(a) => path.with_arm(a),
                None => path,
            });
        }
        clusters.push(Cluster::new(format!("c{}", i + 1), members));
    }
    ClusteredDataset::new(StateSpace::illness_death(), clusters)
}

/// Outcome shares of simulated subjects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    /// Censored without any transition.
    pub censored: f64,
    /// Ever observed in state 2.
    pub ill: f64,
    /// Share of the ill who were later observed to die.
    pub ill_then_dead: f64,
    /// Observed 1→3 without illness.
    pub direct_death: f64,
}

pub fn marginals(data: &ClusteredDataset<f64>) -> Marginals {
    let (mut cens, mut ill, mut ill_dead, mut direct, mut total) =
        (0usize, 0usize, 0usize, 0usize, 0usize);
    for s in data.subjects() {
        total += 1;
        match s.records.first() {
            None => cens += 1,
            Some(r) if r.to == 2 => {
                ill += 1;
                ill_dead += usize::from(s.records.len() > 1);
            }
            Some(_) => direct += 1,
        }
    }
    let t = total as f64;
    Marginals {
        censored: cens as f64 / t,
        ill: ill as f64 / t,
        ill_then_dead: if ill == 0 {
            0.0
        } else {
            ill_dead as f64 / ill as f64
        },
        direct_death: direct as f64 / t,
    }
}

/// `E[e^{-x V}]` and `E[V e^{-x V}]` under the frailty law.
fn frailty_transforms(f: Frailty, x: f64) -> (f64, f64) {
    match f {
        Frailty::Gamma { shape, scale } => {
            let base = 1.0 + scale * x;
            (base.powf(-shape), shape * scale * base.powf(-shape - 1.0))
        }
        Frailty::Fixed { value } => ((-x * value).exp(), value * (-x * value).exp()),
    }
}

/// True typical-member probability of occupying state 2 at `t` for the
/// given arm (`None` for one-sample designs), in closed form.
pub fn true_occupation_arm(cfg: &SimConfig, arm: Option<Arm>, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let given_rate = |a: f64| {
        let r = a + cfg.rate_13;
        let c = cfg.rate_23;
        if (r - c).abs() < 1e-12 {
            a * t * frailty_transforms(cfg.frailty, c * t).1
        } else {
            a / (r - c)
                * (frailty_transforms(cfg.frailty, c * t).0
                    - frailty_transforms(cfg.frailty, r * t).0)
        }
    };
    let p_small = cfg.small_cluster_prob();
    let effect = if arm == Some(Arm::Two) {
        cfg.arm_effect
    } else {
        0.0
    };
    let base = cfg.rate_12 + effect;
    p_small * given_rate(base + cfg.small_cluster_bump) + (1.0 - p_small) * given_rate(base)
}

pub fn true_occupation(cfg: &SimConfig, t: f64) -> f64 {
    true_occupation_arm(cfg, None, t)
}

/// Brute-force Monte Carlo value of the same quantity from `subjects`
/// uncensored single-subject clusters, with its standard error.
pub fn true_occupation_mc(cfg: &SimConfig, t: f64, subjects: usize, seed: SeedSpec) -> (f64, f64) {
    let mut rng = seed.rng(0);
    let mut hits = 0usize;
    for _ in 0..subjects {
        let size = rng.random_range(cfg.size_min..=cfg.size_max);
        let v = cfg.draw_frailty(&mut rng);
        let (t1, ill, t23) = latent_path(
            &mut rng,
            cfg.rate_12_for(size, None),
            cfg.rate_13,
            cfg.rate_23,
            v,
        );
        hits += usize::from(ill && t1 <= t && t < t23);
    }
    let p = hits as f64 / subjects as f64;
    (p, (p * (1.0 - p) / subjects as f64).sqrt())
}
