//! Per-cluster influence trajectories for transition and occupation estimators.
//!
//! Each trajectory is accumulated forward in time without matrix inversion:
//! `R_i(t_g) = R_i(t_{g-1}) (I + ΔÂ(t_g)) + a(t_g) D_i(t_g)` where `a` is the
//! estimate just before `t_g` and `D_i` holds the cluster's scaled martingale
//! residuals. Every state's trajectory is produced at once.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estim::{
    increments_from, initial_law, needed_states, nelson_aalen, step_row, target_start,
    CumulativeIntensityPath, Target,
};
use crate::panel::{RiskPanel, Weighting};
use crate::scalar::Scalar;

/// Influence trajectories `ĝ_i(t_g)` for one target, one row per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceSet<T> {
    pub target: Target<T>,
    pub weighting: Weighting,
    grid: Vec<T>,
    valid: Vec<bool>,
    /// Row-major `n × grid.len()`; zero at invalid points.
    values: Vec<T>,
    n: usize,
}

impl<T: Scalar> InfluenceSet<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn cluster(&self, i: usize) -> &[T] {
        let g = self.grid.len();
        &self.values[i * g..(i + 1) * g]
    }

    /// Index of the grid point governing time `t` if it is in the valid domain.
    pub fn index_of(&self, t: T) -> Result<usize> {
        let n = self.grid.partition_point(|&u| u <= t);
        if n == 0 || !self.valid[n - 1] {
            return Err(Error::OutOfDomain(t.to_f64_lossy()));
        }
        Ok(n - 1)
    }

    /// `n⁻¹ Σ_i ĝ_i(t_a) ĝ_i(t_b)` at grid indices.
    pub fn covariance_index(&self, a: usize, b: usize) -> T {
        let g = self.grid.len();
        let s: T = (0..self.n)
            .map(|i| self.values[i * g + a] * self.values[i * g + b])
            .sum();
        s / T::from_usize_exact(self.n)
    }

    /// Standard errors `sqrt(n⁻¹ Σ ĝ² / n)` at every grid point (zero where invalid).
    pub fn standard_errors(&self) -> Vec<T> {
        let n = T::from_usize_exact(self.n);
        (0..self.grid.len())
            .map(|g| (self.covariance_index(g, g) / n).sqrt())
            .collect()
    }

    /// Largest `|Σ_i ĝ_i(t_g)|` over the grid.
    pub fn max_abs_sum(&self) -> T {
        let g_len = self.grid.len();
        (0..g_len)
            .map(|g| {
                (0..self.n)
                    .map(|i| self.values[i * g_len + g])
                    .sum::<T>()
                    .abs()
            })
            .fold(T::zero(), T::max)
    }

    pub(crate) fn from_parts(
        target: Target<T>,
        weighting: Weighting,
        grid: Vec<T>,
        valid: Vec<bool>,
        values: Vec<T>,
        n: usize,
    ) -> Self {
        Self {
            target,
            weighting,
            grid,
            valid,
            values,
            n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceEstimate<T> {
    pub t1: T,
    pub t2: T,
    pub value: T,
    pub n: usize,
}

impl<T: Scalar> CovarianceEstimate<T> {
    /// `sqrt(value / n)`; meaningful when `t1 == t2`.
    pub fn standard_error(&self) -> T {
        (self.value / T::from_usize_exact(self.n)).sqrt()
    }
}

pub fn covariance_at<T: Scalar>(
    set: &InfluenceSet<T>,
    t1: T,
    t2: T,
) -> Result<CovarianceEstimate<T>> {
    let a = set.index_of(t1)?;
    let b = set.index_of(t2)?;
    Ok(CovarianceEstimate {
        t1,
        t2,
        value: set.covariance_index(a, b),
        n: set.n,
    })
}

fn check_grid<T: Scalar>(
    panel: &RiskPanel<T>,
    intensity: &CumulativeIntensityPath<T>,
) -> Result<()> {
    if panel.grid() != intensity.grid() || panel.weighting() != intensity.weighting() {
        return Err(Error::InvalidArgument(
            "intensity path was not estimated from this panel".into(),
        ));
    }
    Ok(())
}

/// Shared forward recursion. `start_row` seeds `a` before the first step and
/// `seed(i)` seeds `R_i`.
fn accumulate<T: Scalar>(
    panel: &RiskPanel<T>,
    target: Target<T>,
    start_row: Vec<T>,
    initial: Option<&[T]>,
    col: usize,
    seed: impl Fn(usize) -> Vec<T> + Sync,
) -> Result<InfluenceSet<T>> {
    let k = panel.k();
    let kk = k * k;
    let agg = panel.aggregate_ref();
    let inc = increments_from(panel, agg);
    let grid = panel.grid();
    let g_len = grid.len();
    let start = target_start(grid, &target);
    let trs = panel.transitions0();
    let ntr = trs.len();
    let n = panel.n_clusters();
    let n_t = T::from_usize_exact(n);

    let needed = needed_states(panel, &target, initial);
    let valid: Vec<bool> = (start..g_len)
        .map(|g| !needed.is_empty() && needed.iter().all(|&l| agg.y[g * k + l] > T::zero()))
        .collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptySupport);
    }

    // a(t_g): estimate just before t_g, for g >= start.
    let mut before = Vec::with_capacity((g_len - start) * k);
    let mut row = start_row;
    let mut scratch = vec![T::zero(); k];
    for g in start..g_len {
        before.extend_from_slice(&row);
        step_row(&mut row, &inc[g * kk..(g + 1) * kk], &mut scratch);
    }

    let weights = panel.weights();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = &panel.clusters[i];
            let w = weights[i];
            let mut y = vec![0i64; k];
            let mut r = seed(i);
            let mut scratch = vec![T::zero(); k];
            let mut dn = vec![T::zero(); ntr];
            let mut out = Vec::with_capacity(g_len - start);
            let (mut ri, mut ei) = (0, 0);
            for g in 0..g_len {
                while ri < c.risk_changes.len() && c.risk_changes[ri].0 == g {
                    let (_, l, d) = c.risk_changes[ri];
                    y[l] += i64::from(d);
                    ri += 1;
                }
                dn.iter_mut().for_each(|v| *v = T::zero());
                while ei < c.events.len() && c.events[ei].0 == g {
                    let (_, tr, cnt) = c.events[ei];
                    dn[tr] = dn[tr] + cnt;
                    ei += 1;
                }
                if g < start {
                    continue;
                }
                let step = &inc[g * kk..(g + 1) * kk];
                step_row(&mut r, step, &mut scratch);
                let a = &before[(g - start) * k..(g - start + 1) * k];
                for (tr, &(l, q)) in trs.iter().enumerate() {
                    let ybar = agg.y[g * k + l];
                    if ybar <= T::zero() || a[l] == T::zero() {
                        continue;
                    }
                    let y_il = T::from_i64(y[l]).expect("count");
                    let resid = dn[tr] - y_il * step[l * k + q];
                    if resid == T::zero() {
                        continue;
                    }
                    let v = n_t * a[l] * w / ybar * resid;
                    r[q] = r[q] + v;
                    r[l] = r[l] - v;
                }
                out.push(r[col]);
            }
            out
        })
        .collect();

    let width = g_len - start;
    let mut values = Vec::with_capacity(n * width);
    for row in rows {
        values.extend(
            row.into_iter()
                .zip(&valid)
                .map(|(v, &ok)| if ok { v } else { T::zero() }),
        );
    }
    Ok(InfluenceSet::from_parts(
        target,
        panel.weighting(),
        grid[start..].to_vec(),
        valid,
        values,
        n,
    ))
}

/// `γ̂_{i,hj}(s, ·)` for every cluster.
pub fn transition_influence<T: Scalar>(
    panel: &RiskPanel<T>,
    intensity: &CumulativeIntensityPath<T>,
    s: T,
    from: usize,
    to: usize,
) -> Result<InfluenceSet<T>> {
    check_grid(panel, intensity)?;
    let target = Target::Transition {
        from,
        to,
        origin: s,
    };
    target.check(panel.state_space())?;
    let k = panel.k();
    let mut e = vec![T::zero(); k];
    e[from - 1] = T::one();
    accumulate(panel, target, e, None, to - 1, |_| vec![T::zero(); k])
}

/// `ψ̂_{ij}(·)` (all-members) or `ψ̂′_{ij}(·)` (typical member), chosen by the panel weighting.
pub fn occupation_influence<T: Scalar>(
    panel: &RiskPanel<T>,
    intensity: &CumulativeIntensityPath<T>,
    state: usize,
) -> Result<InfluenceSet<T>> {
    check_grid(panel, intensity)?;
    let target = Target::Occupation { state };
    target.check(panel.state_space())?;
    let k = panel.k();
    let n = panel.n_clusters();
    let n_t = T::from_usize_exact(n);
    let ones = vec![T::one(); n];
    let (law, pi) = initial_law(panel, &ones)?;

    let sizes: Vec<T> = panel.cluster_sizes().map(T::from_usize_exact).collect();
    let y0 = |i: usize, h: usize| panel.clusters[i].initial[h];
    let y0_all = |i: usize| panel.clusters[i].initial.iter().copied().sum::<T>();
    let transient: Vec<usize> = panel
        .state_space()
        .transient_states()
        .map(|h| h - 1)
        .collect();
    let mean = |f: &dyn Fn(usize) -> T| (0..n).map(f).sum::<T>() / n_t;

    let terms: Vec<Vec<T>> = match panel.weighting() {
        Weighting::AllMembers => {
            let m_bar = mean(&|i| sizes[i]);
            let y0_bar: Vec<T> = (0..k).map(|h| mean(&|i| y0(i, h))).collect();
            (0..n)
                .map(|i| {
                    let shared = (sizes[i] - m_bar) / m_bar + (y0_all(i) / sizes[i] - pi) / pi;
                    let mut t = vec![T::zero(); k];
                    for &h in &transient {
                        t[h] = (y0(i, h) - y0_bar[h]) / (pi * m_bar) - law[h] * shared;
                    }
                    t
                })
                .collect()
        }
        Weighting::TypicalMember => {
            let scaled_bar: Vec<T> = (0..k).map(|h| mean(&|i| y0(i, h) / sizes[i])).collect();
            (0..n)
                .map(|i| {
                    let shared = y0_all(i) / sizes[i] - pi;
                    let mut t = vec![T::zero(); k];
                    for &h in &transient {
                        t[h] = (y0(i, h) / sizes[i] - scaled_bar[h] - law[h] * shared) / pi;
                    }
                    t
                })
                .collect()
        }
    };
    accumulate(panel, target, law.clone(), Some(&law), state - 1, |i| {
        terms[i].clone()
    })
}

/// Influence set for any target, estimating the intensities from the panel.
pub fn target_influence<T: Scalar>(
    panel: &RiskPanel<T>,
    target: Target<T>,
) -> Result<InfluenceSet<T>> {
    let na = nelson_aalen(panel);
    match target {
        Target::Transition { from, to, origin } => {
            transition_influence(panel, &na, origin, from, to)
        }
        Target::Occupation { state } => occupation_influence(panel, &na, state),
    }
}
