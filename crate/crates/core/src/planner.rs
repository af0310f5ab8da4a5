//! Heterodyne clock allocation in integer hertz.
//!
//! Two nodes A and B each offset their stabilization light from the
//! excitation laser by a local clock, and the midpoint locks each arm to a
//! common reference with a fast clock. The excitation light of both nodes
//! ends up at the same frequency only if
//! `Ω_tot = (fast_A + loc_A) − (fast_B + loc_B)` vanishes, while the global
//! beat `ω_glob = fast_A − fast_B` must stay observable and below the
//! detector bandwidth.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Upper bound on the global beat the single-photon detectors can follow, Hz.
pub const DEFAULT_GLOBAL_BEAT_MAX: i64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub omega_loc_a: i64,
    pub omega_loc_b: i64,
    pub omega_fast_a: i64,
    pub omega_fast_b: i64,
}

impl FrequencyPlan {
    pub fn omega_glob(&self) -> i64 {
        self.omega_fast_a - self.omega_fast_b
    }

    pub fn omega_tot_residual(&self) -> i64 {
        (self.omega_fast_a + self.omega_loc_a) - (self.omega_fast_b + self.omega_loc_b)
    }

    /// The allocation used in the reference two-node setup.
    pub fn reference() -> Self {
        Self {
            omega_loc_a: 399_999_250,
            omega_loc_b: 400_000_750,
            omega_fast_a: 215_001_500,
            omega_fast_b: 215_000_000,
        }
    }
}

/// Residual `Ω_tot` of a plan, Hz. All clocks must be positive.
pub fn check_plan(plan: &FrequencyPlan) -> Result<i64> {
    let all = [
        ("omega_loc_a", plan.omega_loc_a),
        ("omega_loc_b", plan.omega_loc_b),
        ("omega_fast_a", plan.omega_fast_a),
        ("omega_fast_b", plan.omega_fast_b),
    ];
    if let Some((name, v)) = all.iter().find(|(_, v)| *v <= 0) {
        return Err(invalid(name, format!("clock frequencies must be positive, got {v} Hz")));
    }
    Ok(plan.omega_tot_residual())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanConstraints {
    pub omega_glob_target: i64,
    pub omega_glob_max: i64,
    pub fast_center: i64,
    pub loc_center: i64,
}

impl PlanConstraints {
    pub fn new(omega_glob_target: i64, fast_center: i64, loc_center: i64) -> Self {
        Self {
            omega_glob_target,
            omega_glob_max: DEFAULT_GLOBAL_BEAT_MAX,
            fast_center,
            loc_center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub plan: FrequencyPlan,
    pub warnings: Vec<String>,
}

/// Plan with `Ω_tot = 0` and the requested global beat: the local clocks are
/// split around their centre and fast A carries the whole beat offset.
/// An odd beat gives node B the extra hertz on its local clock.
pub fn solve_plan(c: &PlanConstraints) -> Result<Solution> {
    let g = c.omega_glob_target;
    if g < 0 {
        return Err(Error::Infeasible(format!("global beat target {g} Hz is negative")));
    }
    if g > c.omega_glob_max {
        return Err(Error::Infeasible(format!(
            "global beat target {g} Hz exceeds the detector bound omega_glob_max = {} Hz",
            c.omega_glob_max
        )));
    }
    if c.fast_center <= 0 {
        return Err(Error::Infeasible("fast_center must be positive".into()));
    }
    if c.loc_center - g / 2 <= 0 {
        return Err(Error::Infeasible(format!(
            "loc_center {} Hz is too small for a {g} Hz split",
            c.loc_center
        )));
    }
    let plan = FrequencyPlan {
        omega_loc_a: c.loc_center - g / 2,
        omega_loc_b: c.loc_center + (g + 1) / 2,
        omega_fast_a: c.fast_center + g,
        omega_fast_b: c.fast_center,
    };
    let mut warnings = Vec::new();
    if g == 0 {
        let w = "global beat of 0 Hz: homodyne plan, the global phase is not observable".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    debug_assert_eq!(plan.omega_tot_residual(), 0);
    Ok(Solution { plan, warnings })
}

/// One term of a quadrature phase budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetItem {
    pub name: String,
    /// rad.
    pub sigma: f64,
    pub multiplicity: u32,
}

impl BudgetItem {
    pub fn new(name: impl Into<String>, sigma: f64, multiplicity: u32) -> Self {
        Self {
            name: name.into(),
            sigma,
            multiplicity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub name: String,
    /// `∂σ_tot/∂σ_i = m·σ_i/σ_tot`.
    pub derivative: f64,
    /// `m·σ_i²/σ_tot²`.
    pub variance_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    /// rad.
    pub total: f64,
    /// Sorted by decreasing derivative.
    pub ranking: Vec<Sensitivity>,
}

impl Budget {
    pub fn dominant(&self) -> Option<&Sensitivity> {
        self.ranking.first()
    }
}

/// Quadrature total of a budget and the sensitivity of the total to each term.
pub fn budget(items: &[BudgetItem]) -> Result<Budget> {
    let parts: Vec<(f64, u32)> = items.iter().map(|i| (i.sigma, i.multiplicity)).collect();
    let total = crate::dsp::combine_sigmas(&parts)?;
    let mut ranking: Vec<Sensitivity> = items
        .iter()
        .map(|i| {
            let m = f64::from(i.multiplicity);
            let (derivative, variance_share) = if total > 0.0 {
                (m * i.sigma / total, m * i.sigma * i.sigma / (total * total))
            } else {
                (0.0, 0.0)
            };
            Sensitivity {
                name: i.name.clone(),
                derivative,
                variance_share,
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.derivative.total_cmp(&a.derivative));
    Ok(Budget { total, ranking })
}

/// Clock pair of one node in a star.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeClocks {
    pub omega_loc: i64,
    pub omega_fast: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPlan {
    /// Node whose fast clock is higher; plays the role of A.
    pub a: usize,
    pub b: usize,
    pub plan: FrequencyPlan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StarPlan {
    pub nodes: Vec<NodeClocks>,
    pub pairs: Vec<PairPlan>,
}

const OPTIMAL_RULERS: [&[i64]; 10] = [
    &[0, 1],
    &[0, 1, 3],
    &[0, 1, 4, 6],
    &[0, 1, 4, 9, 11],
    &[0, 1, 4, 10, 12, 17],
    &[0, 1, 4, 10, 18, 23, 25],
    &[0, 1, 4, 9, 15, 22, 32, 34],
    &[0, 1, 5, 12, 25, 27, 35, 41, 44],
    &[0, 1, 6, 10, 23, 26, 34, 41, 53, 55],
    &[0, 1, 4, 13, 28, 33, 47, 54, 64, 70, 72],
];

/// Marks with pairwise-distinct differences. Optimal up to 11 marks, greedy beyond.
pub fn golomb_ruler(marks: usize) -> Vec<i64> {
    if marks <= 1 {
        return vec![0; marks];
    }
    if let Some(r) = OPTIMAL_RULERS.get(marks - 2) {
        return r.to_vec();
    }
    let mut ruler = OPTIMAL_RULERS[OPTIMAL_RULERS.len() - 1].to_vec();
    let mut diffs: std::collections::HashSet<i64> = std::collections::HashSet::new();
    for i in 0..ruler.len() {
        for j in 0..i {
            diffs.insert(ruler[i] - ruler[j]);
        }
    }
    let mut next = ruler[ruler.len() - 1] + 1;
    while ruler.len() < marks {
        let new: Vec<i64> = ruler.iter().map(|m| next - m).collect();
        let unique = {
            let mut s = std::collections::HashSet::new();
            new.iter().all(|d| !diffs.contains(d) && s.insert(*d))
        };
        if unique {
            diffs.extend(new);
            ruler.push(next);
        }
        next += 1;
    }
    ruler
}

/// Clocks for `n_nodes` nodes around one midpoint such that every pair has
/// `Ω_tot = 0` and a distinct, non-zero global beat no larger than
/// `omega_glob_max`.
///
/// Node `i` sits at Golomb mark `r_i` in units of the base plan's beat
/// `u`: `fast_i = fast_B + r_i·u`, and every node shares the same
/// `fast + loc` sum, which makes every pair residual vanish. For two nodes
/// this is the base plan.
pub fn extend_star(base: &FrequencyPlan, n_nodes: usize, omega_glob_max: i64) -> Result<StarPlan> {
    if n_nodes < 2 {
        return Err(invalid("n_nodes", "a star needs at least two nodes"));
    }
    check_plan(base)?;
    let u = base.omega_glob();
    if u <= 0 {
        return Err(Error::Infeasible(
            "the base plan needs a positive global beat to derive pairwise beats".into(),
        ));
    }
    let ruler = golomb_ruler(n_nodes);
    let span = ruler[ruler.len() - 1] * u;
    if span > omega_glob_max {
        return Err(Error::Infeasible(format!(
            "{n_nodes} nodes need pairwise beats up to {span} Hz, above omega_glob_max = {omega_glob_max} Hz"
        )));
    }
    let loc_center = base.omega_loc_a + u / 2;
    let top = loc_center + (span + 1) / 2;
    let nodes: Vec<NodeClocks> = ruler
        .iter()
        .map(|r| NodeClocks {
            omega_fast: base.omega_fast_b + r * u,
            omega_loc: top - r * u,
        })
        .collect();
    if let Some(n) = nodes.iter().find(|n| n.omega_loc <= 0) {
        return Err(Error::Infeasible(format!(
            "local clock would be {} Hz, which is not positive",
            n.omega_loc
        )));
    }
    let mut pairs = Vec::new();
    for b in 0..n_nodes {
        for a in b + 1..n_nodes {
            pairs.push(PairPlan {
                a,
                b,
                plan: FrequencyPlan {
                    omega_loc_a: nodes[a].omega_loc,
                    omega_loc_b: nodes[b].omega_loc,
                    omega_fast_a: nodes[a].omega_fast,
                    omega_fast_b: nodes[b].omega_fast,
                },
            });
        }
    }
    Ok(StarPlan { nodes, pairs })
}

/// Checks that neighbouring midpoints in a line keep their reference lasers
/// within `max_detuning` Hz of each other.
pub fn check_line_detuning(reference_frequencies: &[f64], max_detuning: f64) -> Result<()> {
    for (i, w) in reference_frequencies.windows(2).enumerate() {
        let d = (w[1] - w[0]).abs();
        if d > max_detuning {
            return Err(Error::Infeasible(format!(
                "midpoints {i} and {} differ by {d} Hz, above the {max_detuning} Hz bound",
                i + 1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_plan_cancels() {
        let p = FrequencyPlan::reference();
        assert_eq!(check_plan(&p).unwrap(), 0);
        assert_eq!(p.omega_glob(), 1500);
    }

    #[test]
    fn symmetric_and_perturbed() {
        let p = FrequencyPlan {
            omega_loc_a: 400_000_000,
            omega_loc_b: 400_000_000,
            omega_fast_a: 215_000_000,
            omega_fast_b: 215_000_000,
        };
        assert_eq!(check_plan(&p).unwrap(), 0);
        assert_eq!(p.omega_glob(), 0);
        let mut q = FrequencyPlan::reference();
        q.omega_fast_a += 1;
        assert_eq!(check_plan(&q).unwrap(), 1);
        q.omega_loc_b = 0;
        assert!(check_plan(&q).is_err());
    }

    #[test]
    fn solve_reproduces_reference() {
        let s = solve_plan(&PlanConstraints::new(1500, 215_000_000, 400_000_000)).unwrap();
        assert_eq!(s.plan, FrequencyPlan::reference());
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn solve_edge_cases() {
        let s = solve_plan(&PlanConstraints::new(0, 215_000_000, 400_000_000)).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.plan.omega_glob(), 0);
        let e = solve_plan(&PlanConstraints::new(20_000, 215_000_000, 400_000_000)).unwrap_err();
        assert!(e.to_string().contains("omega_glob_max"));
        let odd = solve_plan(&PlanConstraints::new(1501, 215_000_000, 400_000_000)).unwrap();
        assert_eq!(odd.plan.omega_tot_residual(), 0);
        assert_eq!(odd.plan.omega_glob(), 1501);
    }

    #[test]
    fn reference_budget_is_dominated_by_fast_loops() {
        let d = f64::to_radians;
        let b = budget(&[
            BudgetItem::new("local", d(12.0), 2),
            BudgetItem::new("fast", d(21.0), 2),
            BudgetItem::new("global", d(8.0), 1),
        ])
        .unwrap();
        assert_eq!(b.dominant().unwrap().name, "fast");
        assert_eq!(budget(&[]).unwrap().total, 0.0);
        assert_eq!(budget(&[BudgetItem::new("x", 0.2, 1)]).unwrap().total, 0.2);
    }

    #[test]
    fn rulers_have_distinct_differences() {
        for n in 2..=14 {
            let r = golomb_ruler(n);
            assert_eq!(r.len(), n);
            let mut d = Vec::new();
            for i in 0..n {
                for j in 0..i {
                    d.push(r[i] - r[j]);
                }
            }
            let len = d.len();
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), len, "ruler {r:?}");
        }
    }

    #[test]
    fn star_of_two_is_the_base_plan() {
        let base = FrequencyPlan::reference();
        let s = extend_star(&base, 2, DEFAULT_GLOBAL_BEAT_MAX).unwrap();
        assert_eq!(s.pairs.len(), 1);
        assert_eq!(s.pairs[0].plan, base);
    }

    #[test]
    fn star_of_four() {
        let s = extend_star(&FrequencyPlan::reference(), 4, DEFAULT_GLOBAL_BEAT_MAX).unwrap();
        assert_eq!(s.pairs.len(), 6);
        let mut beats: Vec<i64> = s.pairs.iter().map(|p| p.plan.omega_glob()).collect();
        assert!(s.pairs.iter().all(|p| p.plan.omega_tot_residual() == 0));
        assert!(beats.iter().all(|&b| b > 0 && b <= DEFAULT_GLOBAL_BEAT_MAX));
        beats.sort_unstable();
        beats.dedup();
        assert_eq!(beats.len(), 6);
        assert!(extend_star(&FrequencyPlan::reference(), 5, DEFAULT_GLOBAL_BEAT_MAX).is_err());
    }

    #[test]
    fn line_detuning_bound() {
        assert!(check_line_detuning(&[0.0, 5.0, 9.0], 5.0).is_ok());
        assert!(check_line_detuning(&[0.0, 6.0], 5.0).is_err());
    }
}
