//! Measurement cost of a sample allocation, budget feasibility and the
//! cost/error Pareto front.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost of training the model on `n_s + n_t` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum TrainingCost {
    Zero,
    Linear { a: f64 },
    Cubic { a: f64 },
}

impl TrainingCost {
    pub fn eval(&self, n_s: usize, n_t: usize) -> f64 {
        let n = (n_s + n_t) as f64;
        match *self {
            TrainingCost::Zero => 0.0,
            TrainingCost::Linear { a } => a * n,
            TrainingCost::Cubic { a } => a * n * n * n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c_s: f64,
    pub c_t: f64,
    #[serde(default = "zero_training")]
    pub training_cost: TrainingCost,
    /// Budget. `None` means unlimited.
    #[serde(default)]
    pub budget: Option<f64>,
}

fn zero_training() -> TrainingCost {
    TrainingCost::Zero
}

impl CostParams {
    pub fn new(c_s: f64, c_t: f64, training_cost: TrainingCost, budget: Option<f64>) -> Result<Self> {
        let cp = CostParams {
            c_s,
            c_t,
            training_cost,
            budget,
        };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(format!("{what} must be finite and >= 0")));
        if !(self.c_s.is_finite() && self.c_s >= 0.0) {
            return bad("source sample cost");
        }
        if !(self.c_t.is_finite() && self.c_t >= 0.0) {
            return bad("target sample cost");
        }
        if let Some(b) = self.budget {
            if b.is_nan() || b < 0.0 {
                return bad("budget");
            }
        }
        let coeff = match self.training_cost {
            TrainingCost::Zero => 0.0,
            TrainingCost::Linear { a } | TrainingCost::Cubic { a } => a,
        };
        if !(coeff.is_finite() && coeff >= 0.0) {
            return bad("training cost coefficient");
        }
        if self.c_s > self.c_t {
            log::warn!(
                "source samples ({}) cost more than target samples ({})",
                self.c_s,
                self.c_t
            );
        }
        Ok(())
    }

    pub fn is_feasible(&self, cost: f64) -> bool {
        self.budget.is_none_or(|b| cost <= b)
    }
}

pub fn total_cost(cp: &CostParams, n_s: usize, n_t: usize) -> f64 {
    cp.c_s * n_s as f64 + cp.c_t * n_t as f64 + cp.training_cost.eval(n_s, n_t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub n_s: usize,
    pub n_t: usize,
    pub total_cost: f64,
    pub feasible: bool,
    pub achieved_error: Option<f64>,
    pub error_std: Option<f64>,
}

impl Allocation {
    pub fn new(cp: &CostParams, n_s: usize, n_t: usize) -> Self {
        let total_cost = total_cost(cp, n_s, n_t);
        Allocation {
            n_s,
            n_t,
            total_cost,
            feasible: cp.is_feasible(total_cost),
            achieved_error: None,
            error_std: None,
        }
    }
}

fn by_cost_then_target(a: &Allocation, b: &Allocation) -> std::cmp::Ordering {
    a.total_cost
        .total_cmp(&b.total_cost)
        .then(b.n_t.cmp(&a.n_t))
        .then(a.n_s.cmp(&b.n_s))
}

/// Every allocation of the grids' cross product, budget-feasible or not,
/// sorted like [`feasible_allocations`].
pub fn all_allocations(cp: &CostParams, n_s_grid: &[usize], n_t_grid: &[usize]) -> Vec<Allocation> {
    let mut out: Vec<Allocation> = n_s_grid
        .iter()
        .flat_map(|&s| n_t_grid.iter().map(move |&t| (s, t)))
        .map(|(s, t)| Allocation::new(cp, s, t))
        .collect();
    out.sort_by(by_cost_then_target);
    out
}

/// Allocations within budget, cheapest first; equal costs list the one with
/// more target samples first.
pub fn feasible_allocations(cp: &CostParams, n_s_grid: &[usize], n_t_grid: &[usize]) -> Vec<Allocation> {
    all_allocations(cp, n_s_grid, n_t_grid)
        .into_iter()
        .filter(|a| a.feasible)
        .collect()
}

/// Indices of the non-dominated `(cost, error)` points, sorted by cost.
/// Exact duplicates keep only their first occurrence.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[i].1.total_cmp(&points[j].1))
    });
    let mut front = Vec::new();
    let mut best = f64::INFINITY;
    for i in order {
        if points[i].1 < best {
            best = points[i].1;
            front.push(i);
        }
    }
    front
}

pub fn pareto_front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pareto_indices(points).into_iter().map(|i| points[i]).collect()
}

/// The evaluated, feasible allocation with the lowest error; cost breaks ties.
pub fn budget_pick(allocations: &[Allocation]) -> Option<&Allocation> {
    allocations
        .iter()
        .filter(|a| a.feasible)
        .filter_map(|a| a.achieved_error.map(|e| (a, e)))
        .min_by(|(a, ea), (b, eb)| ea.total_cmp(eb).then(a.total_cost.total_cmp(&b.total_cost)))
        .map(|(a, _)| a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_s: usize,
    pub n_t: usize,
    pub mean_ape: f64,
}

/// Groups grid cells by error level: a cell belongs to `level` when its mean
/// APE is within `tol * level` of it. Each group is sorted by total cost.
pub fn indifference_levels(
    grid: &[GridPoint],
    levels: &[f64],
    tol: f64,
    cp: &CostParams,
) -> Result<BTreeMap<String, Vec<(usize, usize)>>> {
    if grid.is_empty() {
        return Err(Error::EmptyData("indifference levels need an evaluated grid"));
    }
    let mut out = BTreeMap::new();
    for &level in levels {
        if !(level.is_finite() && level > 0.0) {
            return Err(Error::InvalidSpec(format!("error level {level} must be positive")));
        }
        let mut cells: Vec<&GridPoint> = grid
            .iter()
            .filter(|g| (g.mean_ape - level).abs() <= tol * level)
            .collect();
        cells.sort_by(|a, b| {
            total_cost(cp, a.n_s, a.n_t)
                .total_cmp(&total_cost(cp, b.n_s, b.n_t))
                .then(b.n_t.cmp(&a.n_t))
        });
        out.insert(level.to_string(), cells.iter().map(|g| (g.n_s, g.n_t)).collect());
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_allocations_csv(path: &Path, allocations: &[Allocation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_s", "n_t", "total_cost", "feasible", "mean_ape", "std_ape"])?;
    for a in allocations {
        w.write_record([
            a.n_s.to_string(),
            a.n_t.to_string(),
            a.total_cost.to_string(),
            a.feasible.to_string(),
            fmt_opt(a.achieved_error),
            fmt_opt(a.error_std),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the Pareto front of the evaluated allocations.
pub fn write_pareto_csv(path: &Path, allocations: &[Allocation]) -> Result<()> {
    let evaluated: Vec<&Allocation> = allocations.iter().filter(|a| a.achieved_error.is_some()).collect();
    let points: Vec<(f64, f64)> = evaluated
        .iter()
        .map(|a| (a.total_cost, a.achieved_error.unwrap_or(f64::NAN)))
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_s", "n_t", "total_cost", "mean_ape", "feasible"])?;
    for i in pareto_indices(&points) {
        let a = evaluated[i];
        w.write_record([
            a.n_s.to_string(),
            a.n_t.to_string(),
            a.total_cost.to_string(),
            fmt_opt(a.achieved_error),
            a.feasible.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cp(budget: Option<f64>) -> CostParams {
        CostParams::new(1.0, 3.0, TrainingCost::Zero, budget).unwrap()
    }

    #[test]
    fn total_cost_examples() {
        assert_eq!(total_cost(&cp(None), 9, 3), 18.0);
        assert_eq!(total_cost(&cp(None), 0, 0), 0.0);
        let cubic = |a| CostParams::new(1.0, 3.0, TrainingCost::Cubic { a }, None).unwrap();
        assert!((total_cost(&cubic(1e-6), 90, 10) - 121.0).abs() < 1e-9);
        assert!((total_cost(&cubic(1e-3), 90, 10) - 1120.0).abs() < 1e-9);
    }

    #[test]
    fn feasible_set_under_budget() {
        let got = feasible_allocations(&cp(Some(18.0)), &[0, 9, 18], &[0, 3, 6]);
        let mut pairs: Vec<(usize, usize)> = got.iter().map(|a| (a.n_s, a.n_t)).collect();
        let costs: Vec<f64> = got.iter().map(|a| a.total_cost).collect();
        assert!(costs.windows(2).all(|w| w[0] <= w[1]));
        // equal cost 9 vs 9: (0,3) ranks before (9,0)
        assert_eq!(&pairs[1..3], &[(0, 3), (9, 0)]);
        pairs.sort();
        assert_eq!(pairs, vec![(0, 0), (0, 3), (0, 6), (9, 0), (9, 3), (18, 0)]);

        let none = feasible_allocations(&cp(Some(0.0)), &[0, 9], &[0, 3]);
        assert_eq!(none.len(), 1);
        assert_eq!((none[0].n_s, none[0].n_t), (0, 0));
        assert_eq!(feasible_allocations(&cp(None), &[0, 9], &[0, 3]).len(), 4);
    }

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_front(&[(2.0, 3.0)]), vec![(2.0, 3.0)]);
        assert_eq!(
            pareto_front(&[(1.0, 10.0), (2.0, 5.0), (3.0, 7.0)]),
            vec![(1.0, 10.0), (2.0, 5.0)]
        );
        assert_eq!(pareto_indices(&[(1.0, 1.0), (1.0, 1.0)]), vec![0]);
    }

    #[test]
    fn budget_pick_prefers_error_then_cost() {
        let c = cp(Some(20.0));
        let mut a = all_allocations(&c, &[0, 3], &[1, 2]);
        for x in &mut a {
            x.achieved_error = Some(if x.n_t == 2 { 5.0 } else { 9.0 });
        }
        let pick = budget_pick(&a).unwrap();
        assert_eq!((pick.n_s, pick.n_t), (0, 2));
    }

    #[test]
    fn indifference_levels_examples() {
        let flat: Vec<GridPoint> = (0..3)
            .flat_map(|s| (1..3).map(move |t| GridPoint { n_s: s, n_t: t, mean_ape: 4.0 }))
            .collect();
        let lv = indifference_levels(&flat, &[4.0, 1.0], 0.05, &cp(None)).unwrap();
        assert_eq!(lv["4"].len(), 6);
        assert!(lv["1"].is_empty());
        assert!(indifference_levels(&[], &[1.0], 0.1, &cp(None)).is_err());
    }

    fn dominance_oracle(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let dominated = points.iter().enumerate().any(|(j, q)| {
                j != i && q.0 <= p.0 && q.1 <= p.1 && (q.0 < p.0 || q.1 < p.1)
            });
            if !dominated && !out.contains(p) {
                out.push(*p);
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    proptest! {
        #[test]
        fn pareto_matches_oracle(
            pts in proptest::collection::vec((0u8..40, 0u8..40), 1..300)
        ) {
            let points: Vec<(f64, f64)> = pts.iter().map(|&(c, e)| (c as f64, e as f64)).collect();
            prop_assert_eq!(pareto_front(&points), dominance_oracle(&points));
        }

        #[test]
        fn total_cost_is_monotone(s in 0usize..500, t in 0usize..500, a in 0.0f64..1e-3) {
            for tc in [TrainingCost::Zero, TrainingCost::Linear { a }, TrainingCost::Cubic { a }] {
                let c = CostParams::new(1.0, 3.0, tc, None).unwrap();
                prop_assert!(total_cost(&c, s + 1, t) >= total_cost(&c, s, t));
                prop_assert!(total_cost(&c, s, t + 1) >= total_cost(&c, s, t));
            }
        }

        #[test]
        fn feasible_means_within_budget(budget in 0.0f64..100.0) {
            let c = cp(Some(budget));
            for a in feasible_allocations(&c, &[0, 1, 5, 10, 30], &[0, 1, 2, 7, 20]) {
                prop_assert!(c.c_s * a.n_s as f64 + c.c_t * a.n_t as f64 <= budget);
            }
        }
    }
}
