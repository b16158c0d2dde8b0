//! Multi-state domain types and validation of the data-checkable assumptions.
//!
//! States are labelled `1..=k` throughout the public API. The exchangeability
//! conditions behind the estimators (censoring and truncation independent of the
//! event process, members exchangeable given cluster size) are distributional and
//! cannot be checked from a single dataset; only path-level structure is validated.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Finite state space with absorbing subset and allowed direct transitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    k: usize,
    absorbing: BTreeSet<usize>,
    allowed: BTreeSet<(usize, usize)>,
}

impl StateSpace {
    /// All transitions `h -> j` with `h` transient are allowed.
    pub fn new(k: usize, absorbing: impl IntoIterator<Item = usize>) -> Result<Self, String> {
        let absorbing: BTreeSet<usize> = absorbing.into_iter().collect();
        let mut allowed = BTreeSet::new();
        for h in 1..=k {
            if absorbing.contains(&h) {
                continue;
            }
            for j in 1..=k {
                if j != h {
                    allowed.insert((h, j));
                }
            }
        }
        Self::with_allowed(k, absorbing, allowed)
    }

    pub fn with_allowed(
        k: usize,
        absorbing: impl IntoIterator<Item = usize>,
        allowed: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, String> {
        if k < 2 {
            return Err(format!("state space needs at least 2 states, got {k}"));
        }
        let absorbing: BTreeSet<usize> = absorbing.into_iter().collect();
        if let Some(&bad) = absorbing.iter().find(|&&s| s == 0 || s > k) {
            return Err(format!("absorbing state {bad} outside 1..={k}"));
        }
        let allowed: BTreeSet<(usize, usize)> = allowed.into_iter().collect();
        for &(h, j) in &allowed {
            if h == 0 || h > k || j == 0 || j > k {
                return Err(format!("transition {h}->{j} outside 1..={k}"));
            }
            if h == j {
                return Err(format!("self-transition {h}->{j} is not a transition"));
            }
            if absorbing.contains(&h) {
                return Err(format!(
                    "absorbing state {h} cannot have outgoing transition {h}->{j}"
                ));
            }
        }
        Ok(Self {
            k,
            absorbing,
            allowed,
        })
    }

    /// Progressive illness-death model: healthy (1), ill (2), dead (3).
    pub fn illness_death() -> Self {
        Self::with_allowed(3, [3], [(1, 2), (1, 3), (2, 3)]).expect("valid")
    }

    /// Two-state alive/dead model.
    pub fn survival() -> Self {
        Self::with_allowed(2, [2], [(1, 2)]).expect("valid")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn absorbing(&self) -> &BTreeSet<usize> {
        &self.absorbing
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing.contains(&s)
    }

    pub fn is_allowed(&self, h: usize, j: usize) -> bool {
        self.allowed.contains(&(h, j))
    }

    pub fn contains(&self, s: usize) -> bool {
        (1..=self.k).contains(&s)
    }

    pub fn transient_states(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.k).filter(|s| !self.absorbing.contains(s))
    }

    /// Allowed transitions in lexicographic order.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        self.allowed.iter().copied().collect()
    }

    fn reachable_from(&self, h: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([h]);
        let mut stack = vec![h];
        while let Some(s) = stack.pop() {
            for &(a, b) in &self.allowed {
                if a == s && seen.insert(b) {
                    stack.push(b);
                }
            }
        }
        seen
    }

    /// Transient states that can be visited on some path from `h` to `j`
    /// (both ends included when transient). Empty when `j` is unreachable.
    pub fn visitable_between(&self, h: usize, j: usize) -> BTreeSet<usize> {
        let from_h = self.reachable_from(h);
        if !from_h.contains(&j) {
            return BTreeSet::new();
        }
        from_h
            .into_iter()
            .filter(|&d| !self.is_absorbing(d) && self.reachable_from(d).contains(&j))
            .collect()
    }
}

/// Treatment arm label in two-sample designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub fn label(self) -> u8 {
        match self {
            Arm::One => 1,
            Arm::Two => 2,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            1 => Some(Arm::One),
            2 => Some(Arm::Two),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition<T> {
    pub time: T,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminusKind {
    Censored,
    Absorbed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terminus<T> {
    pub time: T,
    pub kind: TerminusKind,
}

/// One subject's observed trajectory.
///
/// The subject is under observation on `(entry_time, terminus.time]`, starts in
/// `entry_state`, and an absorption is recorded as a final transition into an
/// absorbing state together with an `Absorbed` terminus at the same time.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectPath<T> {
    pub id: String,
    pub entry_time: T,
    pub entry_state: usize,
    pub records: Vec<Transition<T>>,
    pub terminus: Terminus<T>,
    pub arm: Option<Arm>,
}

impl<T: Scalar> SubjectPath<T> {
    pub fn censored(
        id: impl Into<String>,
        entry_state: usize,
        records: Vec<Transition<T>>,
        at: T,
    ) -> Self {
        Self {
            id: id.into(),
            entry_time: T::zero(),
            entry_state,
            records,
            terminus: Terminus {
                time: at,
                kind: TerminusKind::Censored,
            },
            arm: None,
        }
    }

    /// Path ending with an absorbing transition; the terminus is that transition's time.
    pub fn absorbed(
        id: impl Into<String>,
        entry_state: usize,
        records: Vec<Transition<T>>,
    ) -> Self {
        let time = records.last().map(|r| r.time).unwrap_or_else(T::zero);
        Self {
            id: id.into(),
            entry_time: T::zero(),
            entry_state,
            records,
            terminus: Terminus {
                time,
                kind: TerminusKind::Absorbed,
            },
            arm: None,
        }
    }

    pub fn with_entry(mut self, entry_time: T) -> Self {
        self.entry_time = entry_time;
        self
    }

    pub fn with_arm(mut self, arm: Arm) -> Self {
        self.arm = Some(arm);
        self
    }

    /// State occupied at time `t` (right-continuous), ignoring observation limits.
    pub fn state_at(&self, t: T) -> usize {
        self.records
            .iter()
            .take_while(|r| r.time <= t)
            .last()
            .map_or(self.entry_state, |r| r.to)
    }

    /// Pieces `(start, end, state)` of the observed path: the subject is in
    /// `state` on `(start, end]`.
    pub fn sojourns(&self) -> Vec<(T, T, usize)> {
        let mut out = Vec::with_capacity(self.records.len() + 1);
        let mut start = self.entry_time;
        let mut state = self.entry_state;
        for r in &self.records {
            out.push((start, r.time, state));
            start = r.time;
            state = r.to;
        }
        if self.terminus.time > start {
            out.push((start, self.terminus.time, state));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster<T> {
    pub id: String,
    pub members: Vec<SubjectPath<T>>,
    /// Cluster size used for typical-member weighting when it differs from the
    /// number of retained members (set by landmark restriction).
    pub nominal_size: Option<usize>,
}

impl<T> Cluster<T> {
    pub fn new(id: impl Into<String>, members: Vec<SubjectPath<T>>) -> Self {
        Self {
            id: id.into(),
            members,
            nominal_size: None,
        }
    }

    /// `M_i`: the size entering the 1/M_i weights.
    pub fn size(&self) -> usize {
        self.nominal_size.unwrap_or(self.members.len())
    }

    pub fn arm_count(&self, arm: Arm) -> usize {
        self.members.iter().filter(|m| m.arm == Some(arm)).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteredDataset<T> {
    pub state_space: StateSpace,
    pub clusters: Vec<Cluster<T>>,
    /// Landmark time when the dataset was produced by landmark restriction.
    pub landmark_time: Option<T>,
}

impl<T: Scalar> ClusteredDataset<T> {
    pub fn new(state_space: StateSpace, clusters: Vec<Cluster<T>>) -> Self {
        Self {
            state_space,
            clusters,
            landmark_time: None,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    pub fn subjects(&self) -> impl Iterator<Item = &SubjectPath<T>> {
        self.clusters.iter().flat_map(|c| c.members.iter())
    }

    /// Horizon: largest observed time.
    pub fn horizon(&self) -> T {
        self.subjects()
            .map(|s| s.terminus.time)
            .fold(T::zero(), T::max)
    }

    /// Sorted distinct transition times across all subjects.
    pub fn transition_times(&self) -> Vec<T> {
        let mut times: Vec<T> = self
            .subjects()
            .flat_map(|s| s.records.iter().map(|r| r.time))
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        times.dedup();
        times
    }

    /// Every subject becomes its own cluster (the i.i.d. working model).
    pub fn as_singletons(&self) -> Self {
        let clusters = self
            .clusters
            .iter()
            .flat_map(|c| {
                c.members
                    .iter()
                    .map(move |m| Cluster::new(format!("{}/{}", c.id, m.id), vec![m.clone()]))
            })
            .collect();
        Self {
            state_space: self.state_space.clone(),
            clusters,
            landmark_time: self.landmark_time,
        }
    }

    /// Members of `arm` only; clusters keep their ids and lose other members.
    pub fn arm_subset(&self, arm: Arm) -> Self {
        let clusters = self
            .clusters
            .iter()
            .map(|c| Cluster {
                id: c.id.clone(),
                members: c
                    .members
                    .iter()
                    .filter(|m| m.arm == Some(arm))
                    .cloned()
                    .collect(),
                nominal_size: None,
            })
            .collect();
        Self {
            state_space: self.state_space.clone(),
            clusters,
            landmark_time: self.landmark_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyDataset,
    EmptyCluster,
    DuplicateClusterId,
    DuplicateSubjectId,
    InvalidTime,
    StateOutOfRange(usize),
    EntryInAbsorbingState(usize),
    EntryNotBeforeTerminus,
    NonMonotoneTimes,
    BrokenChain { expected: usize, found: usize },
    TransitionFromAbsorbing { from: usize, to: usize },
    DisallowedTransition { from: usize, to: usize },
    InconsistentTerminus,
    ArmMissing,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::EmptyDataset => write!(f, "dataset has no clusters"),
            ViolationKind::EmptyCluster => write!(f, "cluster has no members"),
            ViolationKind::DuplicateClusterId => write!(f, "duplicate cluster id"),
            ViolationKind::DuplicateSubjectId => write!(f, "duplicate subject id within cluster"),
            ViolationKind::InvalidTime => write!(f, "times must be finite and non-negative"),
            ViolationKind::StateOutOfRange(s) => write!(f, "state {s} outside the state space"),
            ViolationKind::EntryInAbsorbingState(s) => write!(f, "subject enters in absorbing state {s}"),
            ViolationKind::EntryNotBeforeTerminus => write!(f, "entry time must precede the terminus time"),
            ViolationKind::NonMonotoneTimes => {
                write!(f, "transition times must increase strictly, follow entry and not exceed the terminus")
            }
            ViolationKind::BrokenChain { expected, found } => {
                write!(f, "transition leaves state {found} but subject occupies state {expected}")
            }
            ViolationKind::TransitionFromAbsorbing { from, to } => {
                write!(f, "transition {from}->{to} leaves an absorbing state")
            }
            ViolationKind::DisallowedTransition { from, to } => write!(f, "transition {from}->{to} is not allowed"),
            ViolationKind::InconsistentTerminus => {
                write!(f, "absorption must coincide with a final transition into an absorbing state")
            }
            ViolationKind::ArmMissing => write!(f, "two-sample analysis needs an arm label for every member and both arms in every cluster"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub cluster_id: Option<String>,
    pub subject_id: Option<String>,
    pub line: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        match (&self.cluster_id, &self.subject_id) {
            (Some(c), Some(s)) => write!(f, "cluster {c}, subject {s}: ")?,
            (Some(c), None) => write!(f, "cluster {c}: ")?,
            _ => {}
        }
        write!(f, "{}", self.kind)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn kinds(&self) -> impl Iterator<Item = &ViolationKind> {
        self.violations.iter().map(|v| &v.kind)
    }

    fn push(&mut self, cluster: Option<&str>, subject: Option<&str>, kind: ViolationKind) {
        self.violations.push(Violation {
            cluster_id: cluster.map(str::to_owned),
            subject_id: subject.map(str::to_owned),
            line: None,
            kind,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

fn check_subject<T: Scalar>(
    space: &StateSpace,
    cid: &str,
    s: &SubjectPath<T>,
    report: &mut ValidationReport,
) {
    let sid = Some(s.id.as_str());
    let cid = Some(cid);
    let times_ok = std::iter::once(s.entry_time)
        .chain(std::iter::once(s.terminus.time))
        .chain(s.records.iter().map(|r| r.time))
        .all(|t| t.is_finite() && t >= T::zero());
    if !times_ok {
        report.push(cid, sid, ViolationKind::InvalidTime);
        return;
    }
    if !space.contains(s.entry_state) {
        report.push(cid, sid, ViolationKind::StateOutOfRange(s.entry_state));
        return;
    }
    if space.is_absorbing(s.entry_state) {
        report.push(
            cid,
            sid,
            ViolationKind::EntryInAbsorbingState(s.entry_state),
        );
    }
    if s.entry_time >= s.terminus.time {
        report.push(cid, sid, ViolationKind::EntryNotBeforeTerminus);
    }

    let mut prev_time = s.entry_time;
    let mut current = s.entry_state;
    let mut monotone = true;
    for r in &s.records {
        if r.time <= prev_time {
            monotone = false;
        }
        prev_time = r.time;
        for st in [r.from, r.to] {
            if !space.contains(st) {
                report.push(cid, sid, ViolationKind::StateOutOfRange(st));
            }
        }
        if r.from != current {
            report.push(
                cid,
                sid,
                ViolationKind::BrokenChain {
                    expected: current,
                    found: r.from,
                },
            );
        }
        if space.is_absorbing(r.from) {
            report.push(
                cid,
                sid,
                ViolationKind::TransitionFromAbsorbing {
                    from: r.from,
                    to: r.to,
                },
            );
        } else if !space.is_allowed(r.from, r.to) {
            report.push(
                cid,
                sid,
                ViolationKind::DisallowedTransition {
                    from: r.from,
                    to: r.to,
                },
            );
        }
        current = r.to;
    }
    if let Some(last) = s.records.last() {
        if last.time > s.terminus.time {
            monotone = false;
        }
    }
    if !monotone {
        report.push(cid, sid, ViolationKind::NonMonotoneTimes);
    }

    let consistent = match s.terminus.kind {
        TerminusKind::Absorbed => s
            .records
            .last()
            .is_some_and(|last| space.is_absorbing(last.to) && last.time == s.terminus.time),
        TerminusKind::Censored => !space.is_absorbing(current),
    };
    if !consistent {
        report.push(cid, sid, ViolationKind::InconsistentTerminus);
    }
}

/// Checks every path- and cluster-level invariant, reporting all violations.
pub fn validate_dataset<T: Scalar>(
    raw: ClusteredDataset<T>,
) -> Result<ClusteredDataset<T>, ValidationReport> {
    let mut report = ValidationReport::default();
    if raw.clusters.is_empty() {
        report.push(None, None, ViolationKind::EmptyDataset);
        return Err(report);
    }
    let mut cluster_ids = HashSet::new();
    for c in &raw.clusters {
        if !cluster_ids.insert(c.id.as_str()) {
            report.push(Some(&c.id), None, ViolationKind::DuplicateClusterId);
        }
        if c.members.is_empty() {
            report.push(Some(&c.id), None, ViolationKind::EmptyCluster);
        }
        let mut subject_ids = HashSet::new();
        for s in &c.members {
            if !subject_ids.insert(s.id.as_str()) {
                report.push(Some(&c.id), Some(&s.id), ViolationKind::DuplicateSubjectId);
            }
            check_subject(&raw.state_space, &c.id, s, &mut report);
        }
    }
    if report.is_empty() {
        Ok(raw)
    } else {
        Err(report)
    }
}

/// Additional checks for two-sample designs: every member carries an arm and
/// every cluster has members in both arms.
pub fn validate_two_sample<T: Scalar>(data: &ClusteredDataset<T>) -> Result<(), ValidationReport> {
    let mut report = ValidationReport::default();
    for c in &data.clusters {
        for s in c.members.iter().filter(|s| s.arm.is_none()) {
            report.push(Some(&c.id), Some(&s.id), ViolationKind::ArmMissing);
        }
        if c.arm_count(Arm::One) == 0 || c.arm_count(Arm::Two) == 0 {
            report.push(Some(&c.id), None, ViolationKind::ArmMissing);
        }
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}
