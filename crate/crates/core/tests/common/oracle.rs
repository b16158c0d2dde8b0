//! Independent reference computations: product-limit survival, hand-worked
//! Aalen-Johansen values and brute-force influence functions.

use msclust::{
    aalen_johansen, build_panel, estimate_target, nelson_aalen, simulate_trial, target_influence,
    Cluster, ClusteredDataset, SeedSpec, SimConfig, StateSpace, SubjectPath, Target, Transition,
    Weighting,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tr(time: f64, from: usize, to: usize) -> Transition<f64> {
    Transition { time, from, to }
}

/// `(entry, exit, died)` per subject, grouped into clusters.
type SurvivalData = Vec<Vec<(f64, f64, bool)>>;

fn survival_dataset(d: &SurvivalData) -> ClusteredDataset<f64> {
    let clusters = d
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let paths = members
                .iter()
                .enumerate()
                .map(|(m, &(entry, exit, died))| {
                    let id = format!("s{m}");
                    let p = if died {
                        SubjectPath::absorbed(id, 1, vec![tr(exit, 1, 2)])
                    } else {
                        SubjectPath::censored(id, 1, vec![], exit)
                    };
                    p.with_entry(entry)
                })
                .collect();
            Cluster::new(format!("c{c}"), paths)
        })
        .collect();
    ClusteredDataset::new(StateSpace::survival(), clusters)
}

/// Product-limit estimator with delayed entry: at risk at `t` iff `entry < t <= exit`.
fn kaplan_meier(d: &SurvivalData) -> Vec<(f64, f64)> {
    let subjects: Vec<(f64, f64, bool)> = d.iter().flatten().copied().collect();
    let mut times: Vec<f64> = subjects.iter().filter(|s| s.2).map(|s| s.1).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut surv = 1.0;
    times
        .into_iter()
        .map(|t| {
            let at_risk = subjects.iter().filter(|s| s.0 < t && t <= s.1).count() as f64;
            let deaths = subjects.iter().filter(|s| s.2 && s.1 == t).count() as f64;
            surv *= 1.0 - deaths / at_risk;
            (t, surv)
        })
        .collect()
}

fn random_survival(seed: u64) -> SurvivalData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = rng.random_range(2..6);
    (0..clusters)
        .map(|_| {
            (0..rng.random_range(1..5))
                .map(|_| {
                    // Integer times produce ties between deaths and with censoring.
                    let entry = if seed.is_multiple_of(3) {
                        rng.random_range(0..3) as f64
                    } else {
                        0.0
                    };
                    let exit = entry + rng.random_range(1..8) as f64;
                    (entry, exit, rng.random_bool(0.6))
                })
                .collect()
        })
        .collect()
}

pub fn two_state_reduction_matches_product_limit() {
    let mut datasets: Vec<SurvivalData> = vec![
        // S = 3/4 at 1, 3/4 * 1/2 at 3.
        vec![
            vec![(0.0, 1.0, true), (0.0, 2.0, false)],
            vec![(0.0, 3.0, true), (0.0, 4.0, false)],
        ],
        // Tied deaths and a censoring at a death time: S(2) = 1 - 2/4, S(5) = 0.
        vec![
            vec![(0.0, 2.0, true), (0.0, 2.0, true)],
            vec![(0.0, 2.0, false), (0.0, 5.0, true)],
        ],
        // Delayed entry: the late entrant joins the risk set after time 1.
        vec![
            vec![(0.0, 1.0, true), (0.0, 3.0, true)],
            vec![(1.0, 2.0, true), (0.5, 4.0, false)],
        ],
    ];
    datasets.extend((0..21).map(random_survival));
    let expected_first = [(1.0, 0.75), (3.0, 0.375)];

    let mut checked = 0;
    for d in &datasets {
        let km = kaplan_meier(d);
        if km.is_empty() {
            continue;
        }
        let panel = build_panel(&survival_dataset(d), Weighting::AllMembers);
        let aj = aalen_johansen(&nelson_aalen(&panel), 0.0);
        for &(t, s) in &km {
            assert_eq!(aj.prob(1, 1, t), s, "t = {t} in {d:?}");
            assert!((aj.prob(1, 2, t) - (1.0 - s)).abs() < 1e-15);
        }
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} datasets had events");
    assert_eq!(kaplan_meier(&datasets[0]), expected_first);
    let km1 = kaplan_meier(&datasets[1]);
    assert_eq!(km1, vec![(2.0, 0.5), (5.0, 0.0)]);
}

pub fn singleton_clusters_reproduce_hand_computed_aalen_johansen() {
    // A: 1->2 at 1, 2->3 at 3.  B: 1->3 at 2.  C: censored in 1 at 2.5.  D: 1->2 at 4, censored at 5.
    let subjects = vec![
        SubjectPath::absorbed("A", 1, vec![tr(1.0, 1, 2), tr(3.0, 2, 3)]),
        SubjectPath::absorbed("B", 1, vec![tr(2.0, 1, 3)]),
        SubjectPath::censored("C", 1, vec![], 2.5),
        SubjectPath::censored("D", 1, vec![tr(4.0, 1, 2)], 5.0),
    ];
    let clusters = subjects
        .into_iter()
        .enumerate()
        .map(|(i, s)| Cluster::new(format!("c{i}"), vec![s]))
        .collect();
    let data = ClusteredDataset::new(StateSpace::illness_death(), clusters);

    // (t, P1, P2, P3)
    let expected = [
        (1.0, 0.75, 0.25, 0.0),
        (2.0, 0.5, 0.25, 0.25),
        (3.0, 0.5, 0.0, 0.5),
        (4.0, 0.0, 0.5, 0.5),
    ];
    for w in [Weighting::AllMembers, Weighting::TypicalMember] {
        let panel = build_panel(&data, w);
        for state in 1..=3 {
            let curve = estimate_target(&panel, Target::Occupation { state }).unwrap();
            for (g, e) in expected.iter().enumerate() {
                let want = [e.1, e.2, e.3][state - 1];
                assert!(
                    (curve.values[g] - want).abs() < 1e-15,
                    "{w:?} state {state} at {}",
                    e.0
                );
            }
        }
        // From s = 1.5 in state 1: B, C and D at risk, B dies at 2, D falls ill at 4.
        let aj = aalen_johansen(&nelson_aalen(&panel), 1.5);
        assert!((aj.prob(1, 1, 2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((aj.prob(1, 3, 2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((aj.prob(1, 1, 4.0)).abs() < 1e-15);
        assert!((aj.prob(1, 2, 4.0) - 2.0 / 3.0).abs() < 1e-15);
    }
}

/// Brute-force evaluation of the influence displays from raw paths.
struct Raw {
    k: usize,
    transient: Vec<usize>,
    grid: Vec<f64>,
    /// `[i][g][l]` at-risk indicator counts.
    y: Vec<Vec<Vec<f64>>>,
    /// `[i][g][l][q]` transition counts.
    dn: Vec<Vec<Vec<Vec<f64>>>>,
    /// Cluster weights and sizes.
    w: Vec<f64>,
    m: Vec<f64>,
    /// `Y_{i·,h}(0+)`.
    y0: Vec<Vec<f64>>,
    /// `[g][l][q]` intensity increments (diagonal = minus row sum).
    da: Vec<Vec<Vec<f64>>>,
}

fn state_before(p: &SubjectPath<f64>, u: f64) -> usize {
    p.records
        .iter()
        .take_while(|r| r.time < u)
        .last()
        .map_or(p.entry_state, |r| r.to)
}

impl Raw {
    fn new(data: &ClusteredDataset<f64>, weighting: Weighting) -> Self {
        let k = data.state_space.k();
        let transient: Vec<usize> = (1..=k)
            .filter(|&s| !data.state_space.is_absorbing(s))
            .collect();
        let grid = data.transition_times();
        let n = data.clusters.len();
        let mut y = vec![vec![vec![0.0; k + 1]; grid.len()]; n];
        let mut dn = vec![vec![vec![vec![0.0; k + 1]; k + 1]; grid.len()]; n];
        let mut y0 = vec![vec![0.0; k + 1]; n];
        for (i, c) in data.clusters.iter().enumerate() {
            for p in &c.members {
                for (g, &u) in grid.iter().enumerate() {
                    if p.entry_time < u && u <= p.terminus.time {
                        y[i][g][state_before(p, u)] += 1.0;
                    }
                }
                for r in &p.records {
                    let g = grid.iter().position(|&u| u == r.time).unwrap();
                    dn[i][g][r.from][r.to] += 1.0;
                }
                if p.entry_time == 0.0 {
                    y0[i][p.entry_state] += 1.0;
                }
            }
        }
        let m: Vec<f64> = data.clusters.iter().map(|c| c.size() as f64).collect();
        let w: Vec<f64> = match weighting {
            Weighting::AllMembers => vec![1.0; n],
            Weighting::TypicalMember => m.iter().map(|&x| 1.0 / x).collect(),
        };
        let mut da = vec![vec![vec![0.0; k + 1]; k + 1]; grid.len()];
        for g in 0..grid.len() {
            for &l in &transient {
                let denom: f64 = (0..n).map(|i| w[i] * y[i][g][l]).sum();
                if denom == 0.0 {
                    continue;
                }
                for q in 1..=k {
                    if q != l {
                        da[g][l][q] = (0..n).map(|i| w[i] * dn[i][g][l][q]).sum::<f64>() / denom;
                        da[g][l][l] -= da[g][l][q];
                    }
                }
            }
        }
        Raw {
            k,
            transient,
            grid,
            y,
            dn,
            w,
            m,
            y0,
            da,
        }
    }

    /// Product of `I + dA(u)` over grid points with `lo < u < hi` (or `<= hi` when `closed`).
    fn product(&self, lo: f64, hi: f64, closed: bool) -> Vec<Vec<f64>> {
        let k = self.k;
        let mut p: Vec<Vec<f64>> = (0..=k)
            .map(|a| (0..=k).map(|b| f64::from(u8::from(a == b))).collect())
            .collect();
        for (g, &u) in self.grid.iter().enumerate() {
            if u > lo && (u < hi || (closed && u == hi)) {
                let mut next = vec![vec![0.0; k + 1]; k + 1];
                for a in 1..=k {
                    for b in 1..=k {
                        next[a][b] = (1..=k)
                            .map(|c| p[a][c] * (f64::from(u8::from(c == b)) + self.da[g][c][b]))
                            .sum();
                    }
                }
                p = next;
            }
        }
        p
    }

    /// `γ̂_{i,hj}(s, t)` for `h != j`, term by term.
    fn gamma(&self, i: usize, h: usize, j: usize, s: f64, t: f64) -> f64 {
        if h == j {
            return -(1..=self.k)
                .filter(|&q| q != h)
                .map(|q| self.gamma(i, h, q, s, t))
                .sum::<f64>();
        }
        let n = self.w.len() as f64;
        let mut total = 0.0;
        for (g, &u) in self.grid.iter().enumerate() {
            if !(u > s && u <= t) {
                continue;
            }
            let before = self.product(s, u, false);
            let after = self.product(u, t, true);
            for &l in &self.transient {
                let y_bar: f64 = (0..self.w.len())
                    .map(|c| self.w[c] * self.y[c][g][l])
                    .sum::<f64>()
                    / n;
                if y_bar == 0.0 {
                    continue;
                }
                // Martingale increments for l -> q; the l -> l entry is minus their sum.
                let dm: Vec<f64> = (0..=self.k)
                    .map(|q| {
                        if q == 0 || q == l {
                            0.0
                        } else {
                            self.w[i] * (self.dn[i][g][l][q] - self.y[i][g][l] * self.da[g][l][q])
                        }
                    })
                    .collect();
                let dm_ll: f64 = -dm.iter().sum::<f64>();
                for q in 1..=self.k {
                    let inc = if q == l { dm_ll } else { dm[q] };
                    total += before[h][l] * after[q][j] / y_bar * inc;
                }
            }
        }
        total
    }

    fn psi(&self, i: usize, j: usize, t: f64, weighting: Weighting) -> f64 {
        let n = self.w.len() as f64;
        let mean = |f: &dyn Fn(usize) -> f64| (0..self.w.len()).map(f).sum::<f64>() / n;
        let y0_all = |c: usize| self.transient.iter().map(|&h| self.y0[c][h]).sum::<f64>();
        let pi = mean(&|c| y0_all(c) / self.m[c]);
        let m_bar = mean(&|c| self.m[c]);
        let p0 = |h: usize| match weighting {
            Weighting::AllMembers => mean(&|c| self.y0[c][h]) / (pi * m_bar),
            Weighting::TypicalMember => mean(&|c| self.y0[c][h] / self.m[c]) / pi,
        };
        let p = self.product(0.0, t, true);
        self.transient
            .iter()
            .map(|&h| {
                let bracket = match weighting {
                    Weighting::AllMembers => {
                        (self.y0[i][h] - mean(&|c| self.y0[c][h])) / (pi * m_bar)
                            - p0(h)
                                * ((self.m[i] - m_bar) / m_bar + (y0_all(i) / self.m[i] - pi) / pi)
                    }
                    Weighting::TypicalMember => {
                        (self.y0[i][h] / self.m[i]
                            - mean(&|c| self.y0[c][h] / self.m[c])
                            - p0(h) * (y0_all(i) / self.m[i] - pi))
                            / pi
                    }
                };
                p0(h) * self.gamma(i, h, j, 0.0, t) + p[h][j] * bracket
            })
            .sum()
    }
}

fn toy_datasets() -> Vec<ClusteredDataset<f64>> {
    let hand = ClusteredDataset::new(
        StateSpace::illness_death(),
        vec![
            Cluster::new(
                "a",
                vec![
                    SubjectPath::absorbed("1", 1, vec![tr(0.5, 1, 2), tr(2.0, 2, 3)]),
                    SubjectPath::censored("2", 1, vec![], 3.0),
                    SubjectPath::censored("3", 1, vec![tr(1.5, 1, 2)], 2.5),
                ],
            ),
            Cluster::new(
                "b",
                vec![
                    SubjectPath::absorbed("1", 1, vec![tr(1.0, 1, 3)]),
                    SubjectPath::censored("2", 1, vec![tr(0.7, 1, 2)], 2.2).with_entry(0.2),
                ],
            ),
            Cluster::new(
                "c",
                vec![
                    SubjectPath::absorbed("1", 1, vec![tr(0.9, 1, 2), tr(2.4, 2, 3)]),
                    SubjectPath::censored("2", 1, vec![], 1.2),
                ],
            ),
        ],
    );
    let sim = simulate_trial(&SimConfig::one_sample(6, 2, 4), SeedSpec::new(21));
    vec![hand, sim]
}

pub fn transition_influence_matches_brute_force() {
    for data in toy_datasets() {
        for w in [Weighting::AllMembers, Weighting::TypicalMember] {
            let raw = Raw::new(&data, w);
            let panel = build_panel(&data, w);
            for (h, j, s) in [
                (1, 2, 0.0),
                (1, 3, 0.0),
                (1, 1, 0.0),
                (2, 3, 0.6),
                (1, 2, 0.3),
            ] {
                let set = target_influence(
                    &panel,
                    Target::Transition {
                        from: h,
                        to: j,
                        origin: s,
                    },
                )
                .unwrap_or_else(|e| panic!("{h}{j}({s}): {e}"));
                let n = set.n();
                let mut compared = 0;
                for (g, &t) in set.grid().iter().enumerate() {
                    if !set.valid()[g] {
                        continue;
                    }
                    let brute: Vec<f64> = (0..n).map(|i| raw.gamma(i, h, j, s, t)).collect();
                    for i in 0..n {
                        assert!(
                            (set.cluster(i)[g] - brute[i]).abs() < 1e-12,
                            "{w:?} {h}{j}({s}) i={i} t={t}"
                        );
                    }
                    let var = brute.iter().map(|x| x * x).sum::<f64>() / n as f64;
                    assert!((set.covariance_index(g, g) - var).abs() < 1e-12);
                    compared += 1;
                }
                assert!(compared > 0);
            }
        }
    }
}

pub fn occupation_influence_matches_brute_force() {
    for data in toy_datasets() {
        for w in [Weighting::AllMembers, Weighting::TypicalMember] {
            let raw = Raw::new(&data, w);
            let panel = build_panel(&data, w);
            for j in 1..=3 {
                let set = target_influence(&panel, Target::Occupation { state: j }).unwrap();
                for (g, &t) in set
                    .grid()
                    .iter()
                    .enumerate()
                    .filter(|(g, _)| set.valid()[*g])
                {
                    for i in 0..set.n() {
                        let brute = raw.psi(i, j, t, w);
                        assert!(
                            (set.cluster(i)[g] - brute).abs() < 1e-12,
                            "{w:?} state {j} i={i} t={t}"
                        );
                    }
                }
            }
        }
    }
}
