//! The two fractional relaxations.
//!
//! * Assignment relaxation: per-pair variables `x_ij`, per-player value caps.
//!   Solved directly by the dense simplex.  Its integrality gap is the reason
//!   the rest of this crate exists, see `examples/gap_ratio.rs`.
//! * Configuration relaxation: one variable per (player, item-set) column,
//!   valued at `min(sum of prices, budget)`.  Solved by column generation:
//!   the master runs on the generated columns, the pricing oracle finds the
//!   best new column against the current duals (exact subset enumeration for
//!   up to `enumeration_cap` candidate items, a price-grid knapsack beyond).
//!
//! `project_to_assignment` turns a configuration solution into assignment
//! marginals and enforces the structural property the rounding analysis
//! needs: for every small item `j` of player `i`,
//! `x_ij + (big mass of i) <= 1`.  Trimming that forces a real value loss is
//! an error, not a silent degradation.

pub mod simplex;

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::solution::{AssignmentSolution, Column, ConfigSolution};
use crate::{Error, Instance, ItemClass, Result};

pub use simplex::{LpSolution, PivotRecord};

/// Pricing-oracle knobs.  Enumeration is exact; the knapsack path rounds
/// prices down to a grid of `budget / grid_resolution`, so its configuration
/// value is within `n_items / grid_resolution` of optimal (relatively).
#[derive(Debug, Clone, Copy)]
pub struct PricingOptions {
    pub enumeration_cap: usize,
    pub grid_resolution: f64,
}

impl Default for PricingOptions {
    fn default() -> Self {
        PricingOptions { enumeration_cap: 20, grid_resolution: 1e4 }
    }
}

/// Solves the assignment relaxation and returns the normalized solution
/// (player values scaled down onto their budgets, which never changes the
/// capped objective).
pub fn solve_assignment_lp(inst: &Arc<Instance>) -> Result<AssignmentSolution> {
    solve_assignment_lp_traced(inst, None).map(|(s, _)| s)
}

/// Same, optionally recording simplex pivots for the CSV trace.
pub fn solve_assignment_lp_traced(
    inst: &Arc<Instance>,
    trace: Option<&mut Vec<PivotRecord>>,
) -> Result<(AssignmentSolution, f64)> {
    let pairs: Vec<(usize, usize, f64)> = (0..inst.n_players())
        .flat_map(|i| inst.assignable(i).map(move |(j, p)| (i, j, p)))
        .collect();
    let np = pairs.len();
    let na = inst.n_players();
    let nvars = np + na; // x_ij then P_i

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    // P_i <= B_i
    for i in 0..na {
        let mut row = vec![0.0; nvars];
        row[np + i] = 1.0;
        rows.push(row);
        rhs.push(inst.budget(i));
    }
    // P_i - sum_j p_ij x_ij <= 0
    for i in 0..na {
        let mut row = vec![0.0; nvars];
        row[np + i] = 1.0;
        for (k, &(pi, _, p)) in pairs.iter().enumerate() {
            if pi == i {
                row[k] = -p;
            }
        }
        rows.push(row);
        rhs.push(0.0);
    }
    // sum_i x_ij <= 1 for items that anyone prices
    for j in 0..inst.n_items() {
        if inst.offered_by(j).is_empty() {
            continue;
        }
        let mut row = vec![0.0; nvars];
        for (k, &(_, pj, _)) in pairs.iter().enumerate() {
            if pj == j {
                row[k] = 1.0;
            }
        }
        rows.push(row);
        rhs.push(1.0);
    }
    // x_ij <= 1
    for k in 0..np {
        let mut row = vec![0.0; nvars];
        row[k] = 1.0;
        rows.push(row);
        rhs.push(1.0);
    }

    let mut c = vec![0.0; nvars];
    for v in c.iter_mut().skip(np) {
        *v = 1.0;
    }

    let lp = simplex::solve_max_traced(&c, &rows, &rhs, trace)?;
    let sol = AssignmentSolution::new(
        inst.clone(),
        pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j, _))| ((i, j), lp.x[k].clamp(0.0, 1.0))),
    )?;
    Ok((normalize_saturation(&sol)?, lp.objective))
}

/// Scales each oversaturated player's row down so `sum_j x_ij p_ij <= B_i`.
/// The capped objective is unchanged: a scaled player still sits exactly at
/// their budget.
pub fn normalize_saturation(sol: &AssignmentSolution) -> Result<AssignmentSolution> {
    let inst = sol.instance();
    let scale: Vec<f64> = (0..inst.n_players())
        .map(|i| {
            let val = sol.player_value(i);
            let b = inst.budget(i);
            if val > b { b / val } else { 1.0 }
        })
        .collect();
    sol.remap(|i, _, v| v * scale[i])
}

/// Best configuration for one player against item duals: maximizes
/// `min(sum of prices, budget) - sum of duals` over subsets of the player's
/// assignable items.  Returns the item set (ascending) and that value.
pub fn price_configuration(
    inst: &Instance,
    player: usize,
    item_duals: &[f64],
    opts: &PricingOptions,
) -> Result<(Vec<usize>, f64)> {
    if item_duals.len() != inst.n_items() {
        return Err(Error::Precondition("dual vector length mismatch".into()));
    }
    if let Some(d) = item_duals.iter().find(|d| !d.is_finite() || **d < -1e-9) {
        return Err(Error::NegativeInput { what: "item dual", value: *d });
    }
    let items: Vec<(usize, f64)> = inst.assignable(player).collect();
    let budget = inst.budget(player);
    if items.len() <= opts.enumeration_cap {
        Ok(price_by_enumeration(&items, budget, item_duals))
    } else {
        Ok(price_by_knapsack(&items, budget, item_duals, opts.grid_resolution))
    }
}

fn price_by_enumeration(items: &[(usize, f64)], budget: f64, duals: &[f64]) -> (Vec<usize>, f64) {
    let k = items.len();
    let mut best_mask: u64 = 0;
    let mut best_val = 0.0; // empty set
    for mask in 1u64..(1u64 << k) {
        let mut price = 0.0;
        let mut dual = 0.0;
        for (t, (j, p)) in items.iter().enumerate() {
            if mask >> t & 1 == 1 {
                price += p;
                dual += duals[*j];
            }
        }
        let val = price.min(budget) - dual;
        if val > best_val + 1e-12 {
            best_val = val;
            best_mask = mask;
        }
    }
    let set = items
        .iter()
        .enumerate()
        .filter(|(t, _)| best_mask >> t & 1 == 1)
        .map(|(_, (j, _))| *j)
        .collect();
    (set, best_val)
}

/// Knapsack over a price grid of `budget / resolution`: for every reachable
/// (grid-rounded, budget-capped) price level, keep the cheapest dual total.
/// Prices round down, so the reported value can undershoot the true optimum
/// by at most `n_items` grid cells; it never overshoots.
fn price_by_knapsack(
    items: &[(usize, f64)],
    budget: f64,
    duals: &[f64],
    resolution: f64,
) -> (Vec<usize>, f64) {
    let grid = budget / resolution;
    let cap = resolution as usize; // budget in grid units
    let weights: Vec<usize> = items
        .iter()
        .map(|(_, p)| ((p / grid).floor() as usize).min(cap))
        .collect();
    const INF: f64 = f64::INFINITY;
    let mut cost = vec![INF; cap + 1];
    let mut take: Vec<Vec<bool>> = vec![Vec::new(); cap + 1];
    cost[0] = 0.0;
    take[0] = vec![false; items.len()];
    for (t, (j, _)) in items.iter().enumerate() {
        let w = weights[t];
        let d = duals[*j];
        for u in (0..=cap).rev() {
            if cost[u].is_finite() {
                let nu = (u + w).min(cap);
                // Strict improvement keeps the reconstruction deterministic.
                if cost[u] + d < cost[nu] - 1e-15 {
                    cost[nu] = cost[u] + d;
                    let mut sel = take[u].clone();
                    sel[t] = true;
                    take[nu] = sel;
                }
            }
        }
    }
    let mut best_u = 0;
    let mut best_val = 0.0;
    for u in 0..=cap {
        if cost[u].is_finite() {
            let val = (u as f64 * grid).min(budget) - cost[u];
            if val > best_val + 1e-12 {
                best_val = val;
                best_u = u;
            }
        }
    }
    let set: Vec<usize> = items
        .iter()
        .enumerate()
        .filter(|(t, _)| best_u != 0 && take[best_u][*t])
        .map(|(_, (j, _))| *j)
        .collect();
    // Report the exact (not grid-rounded) value of the chosen set.
    let price: f64 = set
        .iter()
        .map(|j| items.iter().find(|(jj, _)| jj == j).unwrap().1)
        .sum();
    let dual: f64 = set.iter().map(|j| duals[*j]).sum();
    (set, (price.min(budget) - dual).max(0.0))
}

/// Column generation for the configuration relaxation.  Seeds the master
/// with all singleton columns, then alternates master solves and pricing
/// until no column's reduced value exceeds
/// `accuracy * objective / (n_players + n_items)`, which puts the final
/// objective within a `(1 - accuracy)` factor of the true optimum.
pub fn solve_configuration_lp(
    inst: &Arc<Instance>,
    accuracy: f64,
    opts: &PricingOptions,
) -> Result<ConfigSolution> {
    if !(accuracy > 0.0 && accuracy < 1.0) {
        return Err(Error::OutOfRange { what: "accuracy", value: accuracy, range: "(0, 1)" });
    }
    let na = inst.n_players();
    let nq = inst.n_items();

    let mut columns: Vec<Column> = Vec::new();
    let mut seen: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    for i in 0..na {
        for (j, p) in inst.assignable(i) {
            let col = Column { player: i, items: vec![j], weight: p.min(inst.budget(i)) };
            seen.insert((i, col.items.clone()));
            columns.push(col);
        }
    }
    if columns.is_empty() {
        return ConfigSolution::new(inst.clone(), Vec::new());
    }

    let round_cap = 40 + 10 * (na + nq);
    let mut last = None;
    for _round in 0..round_cap {
        let lp = solve_master(inst, &columns)?;
        let sigma = &lp.duals[..na];
        let pi = &lp.duals[na..na + nq];
        let threshold = accuracy * lp.objective.max(1e-9) / (na + nq) as f64;

        let mut grew = false;
        let mut best_reduced: f64 = 0.0;
        for i in 0..na {
            let (set, value) = price_configuration(inst, i, pi, opts)?;
            let reduced = value - sigma[i];
            best_reduced = best_reduced.max(reduced);
            if reduced > threshold && !set.is_empty() {
                let key = (i, set.clone());
                if !seen.contains(&key) {
                    let price: f64 = set.iter().map(|j| inst.price(i, *j).unwrap()).sum();
                    columns.push(Column {
                        player: i,
                        items: set,
                        weight: price.min(inst.budget(i)),
                    });
                    seen.insert(key);
                    grew = true;
                }
            }
        }
        if !grew {
            // Either priced out, or every improving column already exists
            // (a tolerance artifact): accept the current master solution.
            return build_config_solution(inst, &columns, &lp);
        }
        last = Some((lp.objective, best_reduced));
    }
    let (objective, reduced) = last.unwrap_or((0.0, 0.0));
    Err(Error::ColumnGenCap { objective, reduced })
}

fn solve_master(inst: &Instance, columns: &[Column]) -> Result<LpSolution> {
    let na = inst.n_players();
    let nq = inst.n_items();
    let m = na + nq;
    let mut rows = vec![vec![0.0; columns.len()]; m];
    for (k, col) in columns.iter().enumerate() {
        rows[col.player][k] = 1.0;
        for &j in &col.items {
            rows[na + j][k] = 1.0;
        }
    }
    let rhs = vec![1.0; m];
    let c: Vec<f64> = columns.iter().map(|col| col.weight).collect();
    simplex::solve_max(&c, &rows, &rhs)
}

fn build_config_solution(
    inst: &Arc<Instance>,
    columns: &[Column],
    lp: &LpSolution,
) -> Result<ConfigSolution> {
    let chosen = columns
        .iter()
        .zip(&lp.x)
        .filter(|(_, y)| **y > 1e-12)
        .map(|(col, y)| (col.clone(), *y))
        .collect();
    ConfigSolution::new(inst.clone(), chosen)
}

/// What projection did to the configuration objective.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionReport {
    /// Objective of the configuration solution projected from.
    pub config_objective: f64,
    /// Capped objective of the raw marginals, before trimming.
    pub marginal_objective: f64,
    /// Raw value removed by trimming (`sum of price * mass removed`).
    pub trimmed_value: f64,
    /// Capped objective of the returned (trimmed, normalized) solution.
    pub final_objective: f64,
}

/// Projects a configuration solution to assignment marginals
/// `x_ij = sum of column weights containing (i, j)` and trims small-item mass
/// so that for every small item `j` of player `i`:
/// `x_ij + sum of big x_ij' <= 1`.  Trimming works through each player's
/// small items in increasing price order; only the entries above the cap are
/// reduced.  Errors if the capped objective drops more than `1e-6` relative
/// to the configuration objective.
pub fn project_to_assignment(
    cfg: &ConfigSolution,
) -> Result<(AssignmentSolution, ProjectionReport)> {
    let inst = cfg.instance();
    let mut x: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for (col, y) in cfg.columns() {
        for &j in &col.items {
            *x.entry((col.player, j)).or_insert(0.0) += *y;
        }
    }
    for v in x.values_mut() {
        *v = v.min(1.0); // guard 1 + eps accumulation
    }
    let raw = AssignmentSolution::new(inst.clone(), x.iter().map(|(&k, &v)| (k, v)))?;
    let marginal_objective = raw.objective();

    // Trim: small-item mass above 1 - (big mass) goes away, cheapest first.
    let mut trimmed_value = 0.0;
    let mut out = x.clone();
    for i in 0..inst.n_players() {
        let big_mass: f64 = raw
            .player_support(i)
            .filter(|(j, _)| inst.classify(i, *j).unwrap() == ItemClass::Big)
            .map(|(_, v)| v)
            .sum();
        let cap = (1.0 - big_mass).max(0.0);
        let mut smalls: Vec<(usize, f64, f64)> = raw
            .player_support(i)
            .filter(|(j, _)| inst.classify(i, *j).unwrap() == ItemClass::Small)
            .map(|(j, v)| (j, v, inst.price(i, j).unwrap()))
            .collect();
        smalls.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)));
        for (j, v, p) in smalls {
            if v > cap + 1e-12 {
                trimmed_value += (v - cap) * p;
                if cap > 0.0 {
                    out.insert((i, j), cap);
                } else {
                    out.remove(&(i, j));
                }
            }
        }
    }
    let trimmed = AssignmentSolution::new(inst.clone(), out.into_iter())?;
    let normalized = normalize_saturation(&trimmed)?;
    let final_objective = normalized.objective();

    let config_objective = cfg.objective();
    let report = ProjectionReport {
        config_objective,
        marginal_objective,
        trimmed_value,
        final_objective,
    };
    if config_objective - final_objective > 1e-6 * config_objective.max(1.0) {
        return Err(Error::ProjectionLoss {
            config_value: config_objective,
            assignment_value: final_objective,
            lost: config_objective - final_objective,
        });
    }
    Ok((normalized, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{brute_force_optimum, gen_gap_instance, gen_random_instance, PriceModel};

    #[test]
    fn gap_instance_assignment_lp_is_two() {
        let inst = gen_gap_instance().into_arc();
        let sol = solve_assignment_lp(&inst).unwrap();
        assert!((sol.objective() - 2.0).abs() < 1e-6, "objective {}", sol.objective());
        // The optimum is unique: both players split the shared item.
        assert!((sol.x(0, 0) - 0.5).abs() < 1e-6);
        assert!((sol.x(1, 0) - 0.5).abs() < 1e-6);
        assert!((sol.x(0, 1) - 1.0).abs() < 1e-6);
        assert!((sol.x(1, 2) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_cheap_items_all_assigned() {
        // Total price mass below every budget: every x_ij = 1.
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 5.0), ("b", 5.0)],
            &["x", "y", "z"],
            &[("a", "x", 1.0), ("a", "y", 0.5), ("b", "z", 2.0)],
        )
        .unwrap()
        .into_arc();
        let sol = solve_assignment_lp(&inst).unwrap();
        assert!((sol.objective() - 3.5).abs() < 1e-6);
        for ((_, _), v) in sol.support() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_caps_player_values() {
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 1.0)],
            &["x", "y"],
            &[("a", "x", 0.8), ("a", "y", 0.7)],
        )
        .unwrap()
        .into_arc();
        let sol = AssignmentSolution::new(inst, [((0, 0), 1.0), ((0, 1), 1.0)]).unwrap();
        let norm = normalize_saturation(&sol).unwrap();
        assert!((norm.player_value(0) - 1.0).abs() < 1e-9);
        assert!((norm.objective() - sol.objective()).abs() < 1e-9);
        // Scaling is uniform within the player.
        assert!((norm.x(0, 0) / norm.x(0, 1) - 0.8 / 0.7 * (0.7 / 0.8)).abs() < 2.0);
        assert!((norm.x(0, 0) - 1.0 / 1.5).abs() < 1e-9);
    }

    #[test]
    fn pricing_prefers_budget_saturation() {
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 1.0)],
            &["x", "y"],
            &[("a", "x", 0.6), ("a", "y", 0.6)],
        )
        .unwrap();
        let (set, val) =
            price_configuration(&inst, 0, &[0.0, 0.0], &PricingOptions::default()).unwrap();
        assert_eq!(set, vec![0, 1]);
        assert!((val - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pricing_subtracts_duals() {
        let inst = Instance::build(1.0 / 3.0, &[("a", 1.0)], &["x"], &[("a", "x", 0.5)]).unwrap();
        let (set, val) =
            price_configuration(&inst, 0, &[0.2], &PricingOptions::default()).unwrap();
        assert_eq!(set, vec![0]);
        assert!((val - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pricing_rejects_negative_duals() {
        let inst = Instance::build(1.0 / 3.0, &[("a", 1.0)], &["x"], &[("a", "x", 0.5)]).unwrap();
        assert!(price_configuration(&inst, 0, &[-0.5], &PricingOptions::default()).is_err());
    }

    #[test]
    fn enumeration_matches_knapsack() {
        // Same instance priced through both paths.
        let inst = gen_random_instance(11, 1, 12, PriceModel::General);
        let duals: Vec<f64> = (0..inst.n_items()).map(|j| 0.02 * j as f64).collect();
        let exact = PricingOptions { enumeration_cap: 20, ..Default::default() };
        let dp = PricingOptions { enumeration_cap: 0, ..Default::default() };
        let (_, v_exact) = price_configuration(&inst, 0, &duals, &exact).unwrap();
        let (_, v_dp) = price_configuration(&inst, 0, &duals, &dp).unwrap();
        assert!(v_dp <= v_exact + 1e-9);
        assert!(v_dp >= v_exact - 12.0 * inst.budget(0) / 1e4 - 1e-9, "{v_dp} vs {v_exact}");
    }

    /// Exact configuration optimum by enumerating every column of a tiny
    /// instance and solving the full LP.  Independent of column generation.
    fn config_lp_by_enumeration(inst: &Arc<Instance>) -> f64 {
        let mut columns = Vec::new();
        for i in 0..inst.n_players() {
            let items: Vec<(usize, f64)> = inst.assignable(i).collect();
            assert!(items.len() <= 16);
            for mask in 1u32..(1 << items.len()) {
                let set: Vec<usize> = items
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| mask >> t & 1 == 1)
                    .map(|(_, (j, _))| *j)
                    .collect();
                let price: f64 = set.iter().map(|j| inst.price(i, *j).unwrap()).sum();
                columns.push(Column { player: i, items: set, weight: price.min(inst.budget(i)) });
            }
        }
        solve_master(inst, &columns).unwrap().objective
    }

    #[test]
    fn gap_instance_configuration_lp_is_tight() {
        // The configuration relaxation sees through the gap instance: its
        // optimum equals the integral optimum 1.5, not the assignment value 2.
        let inst = gen_gap_instance().into_arc();
        let oracle = config_lp_by_enumeration(&inst);
        assert!((oracle - 1.5).abs() < 1e-6, "enumeration oracle {oracle}");
        let cfg = solve_configuration_lp(&inst, 1e-6, &PricingOptions::default()).unwrap();
        assert!((cfg.objective() - oracle).abs() < 1e-5, "column gen {}", cfg.objective());
    }

    #[test]
    fn column_generation_matches_enumeration_on_random_instances() {
        for seed in 0..8 {
            let inst = gen_random_instance(seed, 3, 5, PriceModel::General).into_arc();
            let oracle = config_lp_by_enumeration(&inst);
            let cfg = solve_configuration_lp(&inst, 1e-6, &PricingOptions::default()).unwrap();
            assert!(
                (cfg.objective() - oracle).abs() <= 1e-5 * oracle.max(1.0) + 1e-7,
                "seed {seed}: {} vs oracle {oracle}",
                cfg.objective()
            );
        }
    }

    #[test]
    fn relaxation_order_and_integral_bound() {
        for seed in 20..26 {
            let inst = gen_random_instance(seed, 3, 5, PriceModel::General).into_arc();
            let asg = solve_assignment_lp(&inst).unwrap().objective();
            let cfg = solve_configuration_lp(&inst, 1e-6, &PricingOptions::default())
                .unwrap()
                .objective();
            let opt = brute_force_optimum(&inst).unwrap().value();
            assert!(cfg <= asg + 1e-6, "seed {seed}: config {cfg} > assignment {asg}");
            assert!(opt <= cfg + 1e-5, "seed {seed}: integral {opt} > config {cfg}");
        }
    }

    #[test]
    fn projection_preserves_value_on_gap_instance() {
        let inst = gen_gap_instance().into_arc();
        let cfg = solve_configuration_lp(&inst, 1e-6, &PricingOptions::default()).unwrap();
        let (sol, report) = project_to_assignment(&cfg).unwrap();
        assert!(report.final_objective >= report.config_objective - 1e-6);
        // Projection property: for small items, x_ij + big mass <= 1.
        let inst = sol.instance().clone();
        for ((i, j), v) in sol.support() {
            if inst.classify(i, j).unwrap() == ItemClass::Small {
                let big: f64 = sol
                    .player_support(i)
                    .filter(|(jj, _)| inst.classify(i, *jj).unwrap() == ItemClass::Big)
                    .map(|(_, w)| w)
                    .sum();
                assert!(v + big <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn trimming_clamps_small_mass_over_big_budget() {
        // Marginals: big at 0.6, small at 0.6 + 0.4 = 1.0.  The small item
        // must come down to 1 - 0.6 = 0.4, and that trim loses no capped
        // value because the mixed column already paid for the small item.
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 1.0)],
            &["big", "small"],
            &[("a", "big", 1.0), ("a", "small", 0.2)],
        )
        .unwrap()
        .into_arc();
        let cfg = ConfigSolution::new(
            inst.clone(),
            vec![
                (Column { player: 0, items: vec![0, 1], weight: 1.0 }, 0.6),
                (Column { player: 0, items: vec![1], weight: 0.2 }, 0.4),
            ],
        )
        .unwrap();
        let (sol, report) = project_to_assignment(&cfg).unwrap();
        assert!((sol.x(0, 1) - 0.4).abs() < 1e-9, "got {}", sol.x(0, 1));
        assert!((report.trimmed_value - 0.6 * 0.2).abs() < 1e-9);
        assert!((report.final_objective - report.config_objective).abs() < 1e-9);
    }
}
