//! Nelson–Aalen increments, Aalen–Johansen product integrals and state
//! occupation probabilities.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusteredDataset, StateSpace};
use crate::panel::{build_panel, Aggregate, RiskPanel, Weighting};
use crate::scalar::Scalar;

/// Step-wise cumulative intensity matrices: one `k×k` increment per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeIntensityPath<T> {
    k: usize,
    grid: Vec<T>,
    /// Row-major `k×k` blocks, one per grid point.
    increments: Vec<T>,
    weighting: Weighting,
    landmark_time: Option<T>,
}

impl<T: Scalar> CumulativeIntensityPath<T> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    /// `ΔÂ(t_g)` as a row-major `k×k` block.
    pub fn increment(&self, g: usize) -> &[T] {
        let kk = self.k * self.k;
        &self.increments[g * kk..(g + 1) * kk]
    }

    /// `Â_{hj}(t)`, states 1-based.
    pub fn cumulative(&self, from: usize, to: usize, t: T) -> T {
        let end = self.grid.partition_point(|&u| u <= t);
        (0..end)
            .map(|g| self.increment(g)[(from - 1) * self.k + to - 1])
            .fold(T::zero(), |a, b| a + b)
    }
}

/// Increments `dN̄_{hj}/Ȳ_h` with the diagonal closing each row to zero.
pub(crate) fn increments_from<T: Scalar>(panel: &RiskPanel<T>, agg: &Aggregate<T>) -> Vec<T> {
    let k = panel.k();
    let kk = k * k;
    let trs = panel.transitions0();
    let ntr = trs.len();
    let g_len = panel.grid().len();
    let mut inc = vec![T::zero(); g_len * kk];
    for g in 0..g_len {
        let block = &mut inc[g * kk..(g + 1) * kk];
        for (tr, &(h, j)) in trs.iter().enumerate() {
            let dn = agg.dn[g * ntr + tr];
            let y = agg.y[g * k + h];
            if dn > T::zero() && y > T::zero() {
                let a = dn / y;
                block[h * k + j] = a;
                block[h * k + h] = block[h * k + h] - a;
            }
        }
    }
    inc
}

pub fn nelson_aalen<T: Scalar>(panel: &RiskPanel<T>) -> CumulativeIntensityPath<T> {
    CumulativeIntensityPath {
        k: panel.k(),
        grid: panel.grid().to_vec(),
        increments: increments_from(panel, panel.aggregate_ref()),
        weighting: panel.weighting(),
        landmark_time: panel.landmark_time(),
    }
}

/// Right-multiplies the row vector `row` by `I + inc` in place.
///
/// The diagonal factor `1 + ΔÂ_hh` is floored at zero so that rounding in a
/// complete exit cannot produce a negative probability.
pub(crate) fn step_row<T: Scalar>(row: &mut [T], inc: &[T], scratch: &mut [T]) {
    let k = row.len();
    scratch.copy_from_slice(row);
    for (l, &r) in scratch.iter().enumerate() {
        if r == T::zero() {
            continue;
        }
        let base = &inc[l * k..(l + 1) * k];
        if base.iter().all(|&a| a == T::zero()) {
            continue;
        }
        for (q, &a) in base.iter().enumerate() {
            if q == l {
                let stay = (T::one() + a).max(T::zero());
                row[l] = row[l] - r + r * stay;
            } else if a != T::zero() {
                row[q] = row[q] + r * a;
            }
        }
    }
}

fn check_row_sum<T: Scalar>(row: &[T], steps: usize) {
    let sum: T = row.iter().copied().sum();
    let tol = T::stochastic_tol() * T::from_usize_exact(steps + 1);
    assert!(
        (sum - T::one()).abs() <= tol,
        "row sum drifted to {sum} after {steps} product steps"
    );
}

/// `P̂(s, t_g)` for every grid point `t_g > s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionCurve<T> {
    origin: T,
    k: usize,
    grid: Vec<T>,
    matrices: Vec<T>,
    weighting: Weighting,
    /// Set when `s > 0` and the data were not restricted to a landmark at `s`.
    pub markov_only: bool,
}

impl<T: Scalar> TransitionCurve<T> {
    pub fn origin(&self) -> T {
        self.origin
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn matrix(&self, g: usize) -> &[T] {
        let kk = self.k * self.k;
        &self.matrices[g * kk..(g + 1) * kk]
    }

    /// `P̂_{hj}(s, t)`, states 1-based; identity before the first jump.
    pub fn prob(&self, from: usize, to: usize, t: T) -> T {
        let n = self.grid.partition_point(|&u| u <= t);
        if n == 0 || t < self.origin {
            return if from == to { T::one() } else { T::zero() };
        }
        self.matrix(n - 1)[(from - 1) * self.k + to - 1]
    }
}

pub fn aalen_johansen<T: Scalar>(
    intensity: &CumulativeIntensityPath<T>,
    s: T,
) -> TransitionCurve<T> {
    let k = intensity.k;
    let start = intensity.grid.partition_point(|&u| u <= s);
    let mut rows: Vec<Vec<T>> = (0..k)
        .map(|h| {
            (0..k)
                .map(|j| if h == j { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    let mut scratch = vec![T::zero(); k];
    let mut matrices = Vec::with_capacity((intensity.grid.len() - start) * k * k);
    for (step, g) in (start..intensity.grid.len()).enumerate() {
        let inc = intensity.increment(g);
        for row in rows.iter_mut() {
            step_row(row, inc, &mut scratch);
            check_row_sum(row, step);
            matrices.extend_from_slice(row);
        }
    }
    let markov_only = s > T::zero() && intensity.landmark_time != Some(s);
    TransitionCurve {
        origin: s,
        k,
        grid: intensity.grid[start..].to_vec(),
        matrices,
        weighting: intensity.weighting,
        markov_only,
    }
}

/// Initial law `P̂_h(0)` and `π̂` under cluster multiplicities `counts` (all ones
/// for the point estimate, multinomial counts for a bootstrap replicate).
pub(crate) fn initial_law<T: Scalar>(panel: &RiskPanel<T>, counts: &[T]) -> Result<(Vec<T>, T)> {
    let k = panel.k();
    let mut total = T::zero();
    let mut pi_num = T::zero();
    let mut size_sum = T::zero();
    let mut y0 = vec![T::zero(); k];
    let mut y0_scaled = vec![T::zero(); k];
    let mut any = false;
    for (c, &u) in panel.clusters.iter().zip(counts) {
        if u == T::zero() {
            continue;
        }
        let m = T::from_usize_exact(c.size);
        let row: T = c.initial.iter().copied().sum();
        any |= row > T::zero();
        total = total + u;
        pi_num = pi_num + u * row / m;
        size_sum = size_sum + u * m;
        for h in 0..k {
            y0[h] = y0[h] + u * c.initial[h];
            y0_scaled[h] = y0_scaled[h] + u * c.initial[h] / m;
        }
    }
    if !any {
        return Err(Error::NoInitialRiskSet);
    }
    let pi = pi_num / total;
    let law = match panel.weighting() {
        Weighting::AllMembers => y0.iter().map(|&y| y / (pi * size_sum)).collect(),
        Weighting::TypicalMember => y0_scaled.iter().map(|&y| y / (total * pi)).collect(),
    };
    Ok((law, pi))
}

/// Occupation probabilities `P̂_j(t)` as step functions on `[0, τ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationCurve<T> {
    k: usize,
    grid: Vec<T>,
    probs: Vec<T>,
    initial: Vec<T>,
    pi_hat: T,
    weighting: Weighting,
}

impl<T: Scalar> OccupationCurve<T> {
    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    /// Estimated probability of being under observation at `0+`.
    pub fn pi_hat(&self) -> T {
        self.pi_hat
    }

    /// `P̂_h(0)`, state 1-based.
    pub fn initial(&self, state: usize) -> T {
        self.initial[state - 1]
    }

    /// Occupation vector at grid point `g`.
    pub fn at_index(&self, g: usize) -> &[T] {
        &self.probs[g * self.k..(g + 1) * self.k]
    }

    /// `P̂_j(t)`, state 1-based.
    pub fn prob(&self, state: usize, t: T) -> T {
        let n = self.grid.partition_point(|&u| u <= t);
        if n == 0 {
            self.initial[state - 1]
        } else {
            self.at_index(n - 1)[state - 1]
        }
    }

    /// Trajectory of one state over the grid.
    pub fn series(&self, state: usize) -> Vec<T> {
        (0..self.grid.len())
            .map(|g| self.at_index(g)[state - 1])
            .collect()
    }
}

pub fn state_occupation<T: Scalar>(
    data: &ClusteredDataset<T>,
    w: Weighting,
) -> Result<OccupationCurve<T>> {
    let panel = build_panel(data, w);
    let na = nelson_aalen(&panel);
    occupation_from_panel(&panel, &na)
}

pub fn occupation_from_panel<T: Scalar>(
    panel: &RiskPanel<T>,
    intensity: &CumulativeIntensityPath<T>,
) -> Result<OccupationCurve<T>> {
    let k = panel.k();
    let ones = vec![T::one(); panel.n_clusters()];
    let (initial, pi_hat) = initial_law(panel, &ones)?;
    let mut row = initial.clone();
    let mut scratch = vec![T::zero(); k];
    let mut probs = Vec::with_capacity(intensity.grid.len() * k);
    for g in 0..intensity.grid.len() {
        step_row(&mut row, intensity.increment(g), &mut scratch);
        probs.extend_from_slice(&row);
    }
    Ok(OccupationCurve {
        k,
        grid: intensity.grid.clone(),
        probs,
        initial,
        pi_hat,
        weighting: panel.weighting(),
    })
}

/// Functional of the multi-state process that resampling and inference target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target<T> {
    /// `P_{hj}(s, ·)`, states 1-based.
    Transition { from: usize, to: usize, origin: T },
    /// `P_j(·)`, state 1-based.
    Occupation { state: usize },
}

impl<T: Scalar> Target<T> {
    pub fn check(&self, space: &StateSpace) -> Result<()> {
        let ok = match *self {
            Target::Transition { from, to, origin } => {
                space.contains(from)
                    && space.contains(to)
                    && !space.is_absorbing(from)
                    && origin >= T::zero()
            }
            Target::Occupation { state } => space.contains(state),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "target {self:?} is not defined on this state space"
            )))
        }
    }

    /// Transitions whose jump times delimit the default band domain.
    pub fn driving_transitions(&self, space: &StateSpace) -> Vec<(usize, usize)> {
        match *self {
            Target::Transition { from, to, .. } if from != to => vec![(from, to)],
            Target::Transition { from, .. } => space
                .transitions()
                .into_iter()
                .filter(|&(a, _)| a == from)
                .collect(),
            Target::Occupation { state } => {
                let into: Vec<_> = space
                    .transitions()
                    .into_iter()
                    .filter(|&(_, b)| b == state)
                    .collect();
                if into.is_empty() {
                    space
                        .transitions()
                        .into_iter()
                        .filter(|&(a, _)| a == state)
                        .collect()
                } else {
                    into
                }
            }
        }
    }
}

/// States (0-based) whose pooled risk sets must be non-empty for the target
/// to be estimable at a grid point.
pub(crate) fn needed_states<T: Scalar>(
    panel: &RiskPanel<T>,
    target: &Target<T>,
    initial: Option<&[T]>,
) -> Vec<usize> {
    let space = panel.state_space();
    let set: BTreeSet<usize> = match *target {
        Target::Transition { from, to, .. } => space.visitable_between(from, to),
        Target::Occupation { state } => {
            let init = initial.expect("occupation needs the initial law");
            space
                .transient_states()
                .filter(|&h| init[h - 1] > T::zero())
                .flat_map(|h| space.visitable_between(h, state))
                .collect()
        }
    };
    set.into_iter().map(|l| l - 1).collect()
}

/// Target evaluated on its grid, with the mask of grid points where every
/// needed risk set is non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetCurve<T> {
    pub target: Target<T>,
    pub weighting: Weighting,
    pub grid: Vec<T>,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> TargetCurve<T> {
    pub fn valid_points(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.grid
            .iter()
            .zip(&self.values)
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|((&t, &p), _)| (t, p))
    }
}

/// First grid index strictly after the target's origin.
pub(crate) fn target_start<T: Scalar>(grid: &[T], target: &Target<T>) -> usize {
    match *target {
        Target::Transition { origin, .. } => grid.partition_point(|&u| u <= origin),
        Target::Occupation { .. } => 0,
    }
}

/// Target values and validity under cluster multiplicities `counts`, reusing
/// the panel's grid. With all counts equal to one this is the point estimate.
pub(crate) fn evaluate_target<T: Scalar>(
    panel: &RiskPanel<T>,
    target: &Target<T>,
    counts: Option<&[u32]>,
) -> Result<(Vec<T>, Vec<bool>)> {
    let k = panel.k();
    let owned;
    let agg = match counts {
        None => panel.aggregate_ref(),
        Some(u) => {
            owned = panel.aggregate(&panel.bootstrap_weights(u));
            &owned
        }
    };
    let inc = increments_from(panel, agg);
    let kk = k * k;
    let start = target_start(panel.grid(), target);
    let (mut row, col, initial) = match *target {
        Target::Transition { from, to, .. } => {
            let mut r = vec![T::zero(); k];
            r[from - 1] = T::one();
            (r, to - 1, None)
        }
        Target::Occupation { state } => {
            let mult: Vec<T> = match counts {
                None => vec![T::one(); panel.n_clusters()],
                Some(u) => u.iter().map(|&x| T::from_u32(x).expect("count")).collect(),
            };
            let (law, _) = initial_law(panel, &mult)?;
            (law.clone(), state - 1, Some(law))
        }
    };
    let needed = needed_states(panel, target, initial.as_deref());
    let mut scratch = vec![T::zero(); k];
    let g_len = panel.grid().len();
    let mut values = Vec::with_capacity(g_len - start);
    let mut valid = Vec::with_capacity(g_len - start);
    for g in start..g_len {
        step_row(&mut row, &inc[g * kk..(g + 1) * kk], &mut scratch);
        values.push(row[col]);
        valid.push(!needed.is_empty() && needed.iter().all(|&l| agg.y[g * k + l] > T::zero()));
    }
    Ok((values, valid))
}

pub fn estimate_target<T: Scalar>(
    panel: &RiskPanel<T>,
    target: Target<T>,
) -> Result<TargetCurve<T>> {
    target.check(panel.state_space())?;
    let (values, valid) = evaluate_target(panel, &target, None)?;
    let start = target_start(panel.grid(), &target);
    Ok(TargetCurve {
        target,
        weighting: panel.weighting(),
        grid: panel.grid()[start..].to_vec(),
        values,
        valid,
    })
}
