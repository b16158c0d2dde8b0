//! Cluster-aggregated counting and at-risk processes on the pooled jump-time grid.
//!
//! At-risk indicators are left-continuous: a subject counts in `Y_h(t)` when it
//! occupied `h` just before `t`, entered strictly before `t` and was still under
//! observation at `t`. A censoring tied with an event therefore leaves the
//! censored subject in the risk set at that time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, ClusteredDataset, StateSpace, SubjectPath};
use crate::scalar::Scalar;

/// Cluster weight `w_i`: 1 for the all-members estimand, `1/M_i` for the typical member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weighting {
    AllMembers,
    TypicalMember,
}

impl Weighting {
    pub fn cluster_weight<T: Scalar>(self, size: usize) -> T {
        match self {
            Weighting::AllMembers => T::one(),
            Weighting::TypicalMember => T::one() / T::from_usize_exact(size),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Weighting::AllMembers => "all",
            Weighting::TypicalMember => "typical",
        }
    }
}

/// Raw per-cluster increments, kept sparse and sorted by grid index.
#[derive(Clone, Debug)]
pub(crate) struct ClusterProcess<T> {
    pub size: usize,
    /// `(grid index, transition index, ΔN_{i·,hj})`
    pub events: Vec<(usize, usize, T)>,
    /// `(grid index, state index, change in Y_{i·,h})`
    pub risk_changes: Vec<(usize, usize, i32)>,
    /// `Y_{i·,h}(0+)` per state index.
    pub initial: Vec<T>,
}

/// Weighted pooled processes `dN̄` (grid × transitions) and `Ȳ` (grid × states).
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate<T> {
    pub dn: Vec<T>,
    pub y: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct RiskPanel<T> {
    space: StateSpace,
    weighting: Weighting,
    grid: Vec<T>,
    /// Allowed transitions as 0-based `(from, to)`.
    transitions: Vec<(usize, usize)>,
    tr_lookup: Vec<Option<usize>>,
    pub(crate) clusters: Vec<ClusterProcess<T>>,
    weights: Vec<T>,
    agg: Aggregate<T>,
    landmark_time: Option<T>,
}

/// Builds the panel on the grid of all distinct transition times.
pub fn build_panel<T: Scalar>(data: &ClusteredDataset<T>, weighting: Weighting) -> RiskPanel<T> {
    build_panel_on_grid(data, weighting, data.transition_times())
        .expect("own transition times form a valid grid")
}

/// Builds the panel on a caller-supplied grid, which must contain every
/// transition time of `data` (used to put two samples on a common grid).
pub fn build_panel_on_grid<T: Scalar>(
    data: &ClusteredDataset<T>,
    weighting: Weighting,
    grid: Vec<T>,
) -> Result<RiskPanel<T>> {
    let space = data.state_space.clone();
    let k = space.k();
    let transitions: Vec<(usize, usize)> = space
        .transitions()
        .into_iter()
        .map(|(h, j)| (h - 1, j - 1))
        .collect();
    let mut tr_lookup = vec![None; k * k];
    for (idx, &(h, j)) in transitions.iter().enumerate() {
        tr_lookup[h * k + j] = Some(idx);
    }
    let g_len = grid.len();

    let mut clusters = Vec::with_capacity(data.clusters.len());
    for c in &data.clusters {
        let mut proc = ClusterProcess {
            size: c.size(),
            events: Vec::new(),
            risk_changes: Vec::new(),
            initial: vec![T::zero(); k],
        };
        for s in &c.members {
            if s.entry_time == T::zero() && s.terminus.time > T::zero() {
                proc.initial[s.entry_state - 1] = proc.initial[s.entry_state - 1] + T::one();
            }
            for (start, end, state) in s.sojourns() {
                let lo = grid.partition_point(|&t| t <= start);
                let hi = grid.partition_point(|&t| t <= end);
                if lo < hi {
                    proc.risk_changes.push((lo, state - 1, 1));
                    if hi < g_len {
                        proc.risk_changes.push((hi, state - 1, -1));
                    }
                }
            }
            for r in &s.records {
                let g = grid
                    .binary_search_by(|t| t.partial_cmp(&r.time).expect("finite"))
                    .map_err(|_| {
                        Error::InvalidArgument(format!(
                            "transition time {} missing from grid",
                            r.time
                        ))
                    })?;
                let tr = tr_lookup[(r.from - 1) * k + (r.to - 1)].ok_or_else(|| {
                    Error::InvalidArgument(format!("transition {}->{} not allowed", r.from, r.to))
                })?;
                proc.events.push((g, tr, T::one()));
            }
        }
        proc.events.sort_by_key(|e| (e.0, e.1));
        proc.events.dedup_by(|b, a| {
            if a.0 == b.0 && a.1 == b.1 {
                a.2 = a.2 + b.2;
                true
            } else {
                false
            }
        });
        proc.risk_changes.sort_by_key(|e| (e.0, e.1));
        clusters.push(proc);
    }

    let weights: Vec<T> = clusters
        .iter()
        .map(|c| weighting.cluster_weight(c.size))
        .collect();
    let mut panel = RiskPanel {
        space,
        weighting,
        grid,
        transitions,
        tr_lookup,
        clusters,
        weights,
        agg: Aggregate {
            dn: Vec::new(),
            y: Vec::new(),
        },
        landmark_time: data.landmark_time,
    };
    panel.agg = panel.aggregate(&panel.weights);
    Ok(panel)
}

impl<T: Scalar> RiskPanel<T> {
    pub fn state_space(&self) -> &StateSpace {
        &self.space
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn landmark_time(&self) -> Option<T> {
        self.landmark_time
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn k(&self) -> usize {
        self.space.k()
    }

    pub fn cluster_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.clusters.iter().map(|c| c.size)
    }

    /// Base cluster weights `w_i`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub(crate) fn transitions0(&self) -> &[(usize, usize)] {
        &self.transitions
    }

    pub(crate) fn transition_index0(&self, from: usize, to: usize) -> Option<usize> {
        self.tr_lookup[from * self.k() + to]
    }

    pub fn aggregate_ref(&self) -> &Aggregate<T> {
        &self.agg
    }

    /// `dN̄_{hj}(t_g)` under the panel weighting (states 1-based).
    pub fn dn_bar(&self, g: usize, from: usize, to: usize) -> T {
        self.transition_index0(from - 1, to - 1)
            .map_or(T::zero(), |tr| self.agg.dn[g * self.transitions.len() + tr])
    }

    /// `Ȳ_h(t_g)` under the panel weighting (state 1-based).
    pub fn y_bar(&self, g: usize, state: usize) -> T {
        self.agg.y[g * self.k() + state - 1]
    }

    /// Grid points in the support `J_h`: pooled at-risk positive.
    pub fn support(&self, state: usize) -> Vec<bool> {
        (0..self.grid.len())
            .map(|g| self.y_bar(g, state) > T::zero())
            .collect()
    }

    /// Grid times at which at least one `from -> to` transition occurs.
    pub fn jump_times(&self, from: usize, to: usize) -> Vec<T> {
        let ntr = self.transitions.len();
        match self.transition_index0(from - 1, to - 1) {
            None => Vec::new(),
            Some(tr) => (0..self.grid.len())
                .filter(|&g| self.agg.dn[g * ntr + tr] > T::zero())
                .map(|g| self.grid[g])
                .collect(),
        }
    }

    /// Per-cluster `Y_{i·,h}(0+)`, state 1-based.
    pub fn initial_at_risk(&self, cluster: usize, state: usize) -> T {
        self.clusters[cluster].initial[state - 1]
    }

    /// Weighted pooled processes for arbitrary cluster weights `c_i ≥ 0`.
    ///
    /// Positivity of `Ȳ` is decided on integer counts so that risk sets emptied
    /// by weighting are exactly zero rather than rounding residue.
    pub fn aggregate(&self, cluster_weights: &[T]) -> Aggregate<T> {
        let k = self.k();
        let ntr = self.transitions.len();
        let g_len = self.grid.len();
        let mut dn = vec![T::zero(); g_len * ntr];
        let mut y = vec![T::zero(); g_len * k];
        let mut count = vec![0i64; g_len * k];
        for (c, &w) in self.clusters.iter().zip(cluster_weights) {
            if w == T::zero() {
                continue;
            }
            for &(g, tr, n) in &c.events {
                dn[g * ntr + tr] = dn[g * ntr + tr] + w * n;
            }
            for &(g, l, d) in &c.risk_changes {
                let idx = g * k + l;
                y[idx] = y[idx] + w * T::from_i32(d).expect("small count");
                count[idx] += i64::from(d);
            }
        }
        for g in 1..g_len {
            for l in 0..k {
                let (prev, cur) = ((g - 1) * k + l, g * k + l);
                y[cur] = y[cur] + y[prev];
                count[cur] += count[prev];
            }
        }
        for (v, &c) in y.iter_mut().zip(&count) {
            if c <= 0 {
                *v = T::zero();
            }
        }
        Aggregate { dn, y }
    }

    /// Cluster weights `w_i · U_i` for multinomial bootstrap counts `U_i`.
    pub fn bootstrap_weights(&self, counts: &[u32]) -> Vec<T> {
        self.weights
            .iter()
            .zip(counts)
            .map(|(&w, &u)| {
                if u == 1 {
                    w
                } else {
                    w * T::from_u32(u).expect("count")
                }
            })
            .collect()
    }
}

/// Landmark time and conditioning state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkSpec<T> {
    pub time: T,
    pub state: usize,
}

/// Keeps subjects occupying `spec.state` and under observation at `spec.time`,
/// re-entering them at the landmark. Clusters keep their original size for
/// typical-member weighting; clusters left empty are dropped.
pub fn landmark_restrict<T: Scalar>(
    data: &ClusteredDataset<T>,
    spec: LandmarkSpec<T>,
) -> Result<ClusteredDataset<T>> {
    let tau = data.horizon();
    if !(spec.time >= T::zero() && spec.time < tau) {
        return Err(Error::InvalidArgument(format!(
            "landmark time {} must lie in [0, {tau})",
            spec.time
        )));
    }
    if !data.state_space.contains(spec.state) {
        return Err(Error::InvalidArgument(format!(
            "landmark state {} outside the state space",
            spec.state
        )));
    }
    let s = spec.time;
    let clusters: Vec<Cluster<T>> = data
        .clusters
        .iter()
        .filter_map(|c| {
            let members: Vec<SubjectPath<T>> = c
                .members
                .iter()
                .filter(|m| m.entry_time <= s && m.terminus.time > s && m.state_at(s) == spec.state)
                .map(|m| SubjectPath {
                    id: m.id.clone(),
                    entry_time: s,
                    entry_state: spec.state,
                    records: m.records.iter().filter(|r| r.time > s).copied().collect(),
                    terminus: m.terminus,
                    arm: m.arm,
                })
                .collect();
            if members.is_empty() {
                return None;
            }
            let nominal_size = (members.len() != c.size()).then_some(c.size());
            Some(Cluster {
                id: c.id.clone(),
                members,
                nominal_size,
            })
        })
        .collect();
    if clusters.is_empty() {
        return Err(Error::NoSubjectsAtLandmark {
            time: s.to_f64_lossy(),
            state: spec.state,
        });
    }
    let mut out = ClusteredDataset::new(data.state_space.clone(), clusters);
    out.landmark_time = Some(s);
    Ok(out)
}
