//! Price-shift pass: detect items whose price spread is large relative to
//! their average price and move a small amount of their mass from low-priced
//! takers to high-priced takers.
//!
//! On a solution with every budget saturated (`α_i = 1`) the per-player
//! rounding guarantee is `B_i·α_i·(1 − α_i/4)`; shifting item mass toward a
//! player that prices it higher raises the sum of these guarantees by an
//! amount bounded below in closed form, record by record.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::solution::AssignmentSolution;
use crate::stats::compute_stats;

use super::{check_mu, PotentialKind, TransformPhase, TransformRecord, TransformTrace, SATURATION_TOL};

/// Which side of the average price fired the spread test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum PriceSide {
    /// A ≥ μ value fraction sits at prices ≥ (1+μ)·w.
    High,
    /// A ≥ μ value fraction sits at prices ≤ (1−μ)·w.
    Low,
}

/// One unequally-priced item: the players above and below the relevant
/// thresholds around its average price.  Mass always flows from
/// `low_players` to `high_players`.
#[derive(Debug, Clone)]
pub struct UnequalItem {
    pub side: PriceSide,
    /// Support-weighted average price `w = Σ x·p / Σ x`.
    pub avg_price: f64,
    /// High side: prices ≥ (1+μ)·w.  Low side: prices ≥ (1−μ/2)·w.
    pub high_players: Vec<usize>,
    /// High side: prices ≤ (1+μ/2)·w.  Low side: prices ≤ (1−μ)·w.
    pub low_players: Vec<usize>,
    /// Total solution mass of `high_players` on this item.
    pub high_mass: f64,
    /// Total solution mass of `low_players` on this item.
    pub low_mass: f64,
}

/// Detection result: every unequally-priced item, keyed by item index.
#[derive(Debug, Clone)]
pub struct UnequalPriceReport {
    pub mu: f64,
    pub items: BTreeMap<usize, UnequalItem>,
}

impl UnequalPriceReport {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.items.contains_key(&item)
    }
}

fn check_saturated(sol: &AssignmentSolution) -> Result<()> {
    let (players, _) = compute_stats(sol);
    for (i, stats) in players.iter().enumerate() {
        if (stats.alpha - 1.0).abs() > SATURATION_TOL {
            return Err(Error::Precondition(format!(
                "budget of player {} is not saturated (alpha = {})",
                sol.instance().player_id(i),
                stats.alpha
            )));
        }
    }
    Ok(())
}

/// Finds every item for which at least a μ-fraction of its contributed value
/// sits at prices ≥ (1+μ) times its average price (high side), or failing
/// that, at prices ≤ (1−μ) times its average price (low side).
///
/// Requires μ ∈ (0, 1/2) and every budget saturated (`α_i = 1` within
/// [`SATURATION_TOL`]); items with zero mass are never reported.
pub fn find_unequally_priced(sol: &AssignmentSolution, mu: f64) -> Result<UnequalPriceReport> {
    check_mu(mu)?;
    check_saturated(sol)?;

    // Group the support by item; players arrive in ascending order.
    let mut per_item: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for ((i, j), v) in sol.support() {
        let p = sol.instance().price(i, j).expect("supported pair is assignable");
        per_item.entry(j).or_default().push((i, v, p));
    }

    let mut items = BTreeMap::new();
    for (j, takers) in per_item {
        let mass: f64 = takers.iter().map(|(_, v, _)| v).sum();
        let value: f64 = takers.iter().map(|(_, v, p)| v * p).sum();
        if mass <= 0.0 || value <= 0.0 {
            continue;
        }
        let w = value / mass;

        let high_value: f64 = takers
            .iter()
            .filter(|(_, _, p)| *p >= (1.0 + mu) * w)
            .map(|(_, v, p)| v * p)
            .sum();
        let low_value: f64 = takers
            .iter()
            .filter(|(_, _, p)| *p <= (1.0 - mu) * w)
            .map(|(_, v, p)| v * p)
            .sum();

        let side = if high_value >= mu * value {
            PriceSide::High
        } else if low_value >= mu * value {
            PriceSide::Low
        } else {
            continue;
        };

        // Receiving and donating thresholds around w for the firing side.
        let (hi_cut, lo_cut) = match side {
            PriceSide::High => ((1.0 + mu) * w, (1.0 + mu / 2.0) * w),
            PriceSide::Low => ((1.0 - mu / 2.0) * w, (1.0 - mu) * w),
        };
        let mut high_players = Vec::new();
        let mut low_players = Vec::new();
        let (mut high_mass, mut low_mass) = (0.0, 0.0);
        for (i, v, p) in &takers {
            if *p >= hi_cut {
                high_players.push(*i);
                high_mass += v;
            } else if *p <= lo_cut {
                low_players.push(*i);
                low_mass += v;
            }
        }
        // Both sides are provably non-empty: the min supported price is ≤ w
        // and the max is ≥ w, while the firing inequality puts positive value
        // past the far threshold.
        debug_assert!(high_mass > 0.0 && low_mass > 0.0);
        items.insert(
            j,
            UnequalItem { side, avg_price: w, high_players, low_players, high_mass, low_mass },
        );
    }
    Ok(UnequalPriceReport { mu, items })
}

/// Saturation potential `Σ_i B_i·α_i·(1 − α_i/4)` of a fractional solution —
/// the sum of the per-player rounding guarantees expressed through the
/// saturation ratios `α_i`.
pub fn saturation_potential(sol: &AssignmentSolution) -> f64 {
    let (players, _) = compute_stats(sol);
    players
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let b = sol.instance().budget(i);
            b * s.alpha * (1.0 - s.alpha / 4.0)
        })
        .sum()
}

/// Applies the price-shift update to every unequally-priced item.
///
/// High side: players at prices ≥ (1+μ)w scale up by `(1+F)` and players at
/// prices ≤ (1+μ/2)w scale down by `(1 − F·h/l)` where `F = μ(1+μ)/((2+μ)·10)`
/// and `h`, `l` are the two sides' masses — so each item's total mass is
/// unchanged.  The low side mirrors this: prices ≤ (1−μ)w scale down by
/// `(1−F)` and prices ≥ (1−μ/2)w scale up by the mass-balancing factor.
///
/// Each record carries the bilateral pair share of the update and the
/// closed-form lower bound `g` on the resulting saturation-potential gain; the
/// sum of `g` over the trace bounds the true potential increase from below.
///
/// Budget drift: every gaining player's α rises by at most `F ≤ μ/10`; a
/// losing player's α falls by at most `F·max_j(h_j/l_j)`, which is ≤ μ/10
/// whenever each updated item has `h_j ≤ l_j·(2+μ)/(1+μ)` and ≤ 1/10 always.
pub fn apply_price_shift(
    sol: &AssignmentSolution,
    mu: f64,
) -> Result<(AssignmentSolution, TransformTrace)> {
    let report = find_unequally_priced(sol, mu)?;
    let factor = mu * (1.0 + mu) / ((2.0 + mu) * 10.0);
    let gamma = mu / 10.0;
    let price = |i: usize, j: usize| sol.instance().price(i, j).expect("supported pair");

    // Closed-form lower bound on the potential gain of moving `z` mass of an
    // item from a player pricing it `p_from` to one pricing it `p_to`, valid
    // while every α stays within [1−γ, 1+γ] and prices within budgets.
    let gain = |p_to: f64, p_from: f64, z: f64| {
        p_to * (z - z * (1.0 + gamma) / 2.0 - z * z / 4.0)
            - p_from * (z + z * z / 4.0 - z * (1.0 - gamma) / 2.0)
    };

    let mut trace = TransformTrace::new(PotentialKind::Saturation);
    trace.initial_potential = saturation_potential(sol);
    let mut deltas: BTreeMap<(usize, usize), f64> = BTreeMap::new();

    for (&j, entry) in &report.items {
        let (phase, balance) = match entry.side {
            // The balancing denominator belongs to whichever side carries the
            // h/l correction factor: the donors on the high side, the
            // receivers on the low side.
            PriceSide::High => (TransformPhase::HighPriceShift, entry.low_mass),
            PriceSide::Low => (TransformPhase::LowPriceShift, entry.high_mass),
        };
        for &from in &entry.low_players {
            let x_from = sol.x(from, j);
            for &to in &entry.high_players {
                let x_to = sol.x(to, j);
                let delta = factor * x_from * x_to / balance;
                if delta <= 0.0 {
                    continue;
                }
                let g = gain(price(to, j), price(from, j), delta);
                *deltas.entry((from, j)).or_insert(0.0) -= delta;
                *deltas.entry((to, j)).or_insert(0.0) += delta;
                trace.records.push(TransformRecord {
                    phase,
                    item: j,
                    from,
                    to,
                    delta,
                    gain: Some(g),
                    drop: None,
                    rise: None,
                });
            }
        }
    }

    let shifted = sol.remap(|i, j, v| v + deltas.get(&(i, j)).copied().unwrap_or(0.0))?;
    trace.final_potential = saturation_potential(&shifted);
    Ok((shifted, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Instance;
    use crate::solution::gen_saturated_solution;
    use std::sync::Arc;

    /// Two players, one shared item at prices 1.0 / 0.5 plus private fillers
    /// that saturate both budgets.
    fn two_price_fixture() -> (Arc<Instance>, AssignmentSolution) {
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 1.0), ("b", 1.0)],
            &["shared", "fa", "fb"],
            &[
                ("a", "shared", 1.0),
                ("b", "shared", 0.5),
                ("a", "fa", 1.0),
                ("b", "fb", 1.0),
            ],
        )
        .unwrap()
        .into_arc();
        let sol = AssignmentSolution::new(
            inst.clone(),
            vec![((0, 0), 0.5), ((1, 0), 0.5), ((0, 1), 0.5), ((1, 2), 0.75)],
        )
        .unwrap();
        (inst, sol)
    }

    #[test]
    fn detects_high_side_spread() {
        let (inst, sol) = two_price_fixture();
        let report = find_unequally_priced(&sol, 0.1).unwrap();
        let shared = inst.item_index("shared").unwrap();
        assert_eq!(report.items.keys().copied().collect::<Vec<_>>(), vec![shared]);
        let entry = &report.items[&shared];
        assert_eq!(entry.side, PriceSide::High);
        assert!((entry.avg_price - 0.75).abs() < 1e-12);
        assert_eq!(entry.high_players, vec![0]);
        assert_eq!(entry.low_players, vec![1]);
        assert!((entry.high_mass - 0.5).abs() < 1e-12);
        assert!((entry.low_mass - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_price_items_never_fire() {
        let (_, sol) = two_price_fixture();
        for mu in [0.01, 0.1, 0.3, 0.49] {
            let report = find_unequally_priced(&sol, mu).unwrap();
            assert!(!report.contains(1), "fa has a single supported price");
            assert!(!report.contains(2), "fb has a single supported price");
        }
    }

    #[test]
    fn tiny_mu_admits_any_two_distinct_prices() {
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 1.0), ("b", 1.0)],
            &["s", "fa", "fb"],
            &[("a", "s", 0.6), ("b", "s", 0.5), ("a", "fa", 1.0), ("b", "fb", 1.0)],
        )
        .unwrap()
        .into_arc();
        let sol = AssignmentSolution::new(
            inst,
            vec![((0, 0), 0.5), ((1, 0), 0.5), ((0, 1), 0.7), ((1, 2), 0.75)],
        )
        .unwrap();
        let report = find_unequally_priced(&sol, 1e-6).unwrap();
        assert!(report.contains(0), "0.6 vs 0.5 is a spread for tiny mu");
    }

    #[test]
    fn rejects_bad_mu_and_unsaturated_players() {
        let (_, sol) = two_price_fixture();
        assert!(matches!(
            find_unequally_priced(&sol, 0.0),
            Err(crate::error::Error::OutOfRange { what: "mu", .. })
        ));
        assert!(matches!(
            find_unequally_priced(&sol, 0.5),
            Err(crate::error::Error::OutOfRange { what: "mu", .. })
        ));

        // Drop b's filler: b is no longer saturated and the error names b.
        let inst = sol.instance().clone();
        let unsat = AssignmentSolution::new(
            inst,
            vec![((0, 0), 0.5), ((1, 0), 0.5), ((0, 1), 0.5)],
        )
        .unwrap();
        let err = find_unequally_priced(&unsat, 0.1).unwrap_err();
        assert!(err.to_string().contains("player b"), "got: {err}");
    }

    #[test]
    fn worked_example_high_side_update() {
        let (_, sol) = two_price_fixture();
        let mu: f64 = 0.1;
        let factor = mu * (1.0 + mu) / ((2.0 + mu) * 10.0);
        assert!((factor - 0.0052381).abs() < 1e-7);

        let (shifted, trace) = apply_price_shift(&sol, mu).unwrap();
        assert!((shifted.x(0, 0) - 0.5026190).abs() < 1e-7);
        assert!((shifted.x(1, 0) - 0.4973810).abs() < 1e-7);
        assert!((shifted.item_mass(0) - 1.0).abs() < 1e-12, "shared mass conserved");
        assert_eq!(shifted.x(0, 1), 0.5, "fillers untouched");
        assert_eq!(shifted.x(1, 2), 0.75);

        assert_eq!(trace.len(), 1);
        let rec = &trace.records[0];
        assert_eq!(rec.phase, TransformPhase::HighPriceShift);
        assert_eq!((rec.from, rec.to, rec.item), (1, 0, 0));
        // Single donor: the pair share equals the receiver's full gain 0.5·F.
        assert!((rec.delta - 0.5 * factor).abs() < 1e-15);
        assert!(rec.gain.unwrap() > 0.0);
        assert!((trace.net_pair_shift(0, 0) - (shifted.x(0, 0) - 0.5)).abs() < 1e-15);

        // Budget drift stays within μ/10 on both sides.
        let (players, _) = compute_stats(&shifted);
        for s in &players {
            assert!((s.alpha - 1.0).abs() <= mu / 10.0 + 1e-12, "alpha = {}", s.alpha);
        }
        // The potential rises by at least the sum of the per-record bounds.
        let lift = trace.final_potential - trace.initial_potential;
        assert!(lift >= trace.gain_sum() - 1e-9, "lift {lift} vs {}", trace.gain_sum());
    }

    #[test]
    fn low_side_mirror_update() {
        let inst = Instance::build(
            1.0 / 3.0,
            &[("hi", 1.0), ("lo", 1.0)],
            &["s", "fh", "fl"],
            &[("hi", "s", 1.0), ("lo", "s", 0.9), ("hi", "fh", 1.0), ("lo", "fl", 1.0)],
        )
        .unwrap()
        .into_arc();
        let sol = AssignmentSolution::new(
            inst,
            vec![((0, 0), 0.7), ((1, 0), 0.3), ((0, 1), 0.3), ((1, 2), 0.73)],
        )
        .unwrap();
        let mu = 0.05;
        let report = find_unequally_priced(&sol, mu).unwrap();
        assert_eq!(report.items[&0].side, PriceSide::Low);
        assert_eq!(report.items[&0].high_players, vec![0]);
        assert_eq!(report.items[&0].low_players, vec![1]);

        let factor = mu * (1.0 + mu) / ((2.0 + mu) * 10.0);
        let (shifted, trace) = apply_price_shift(&sol, mu).unwrap();
        // Donor loses the clean factor, receiver absorbs it mass-balanced.
        assert!((shifted.x(1, 0) - 0.3 * (1.0 - factor)).abs() < 1e-12);
        assert!((shifted.x(0, 0) - (0.7 + 0.3 * factor)).abs() < 1e-12);
        assert!((shifted.item_mass(0) - 1.0).abs() < 1e-12);
        assert_eq!(trace.records[0].phase, TransformPhase::LowPriceShift);
        assert!(trace.gain_sum() > 0.0);
        let (players, _) = compute_stats(&shifted);
        for s in &players {
            assert!((s.alpha - 1.0).abs() <= mu / 10.0 + 1e-12);
        }
    }

    #[test]
    fn random_saturated_instances_gain_at_least_the_bound() {
        for seed in [1, 2, 3] {
            let (_, sol) = gen_saturated_solution(seed, 5, 3);
            let mu = 0.05;
            let report = find_unequally_priced(&sol, mu).unwrap();
            assert!(!report.is_empty(), "seed {seed} should have a spread item");

            let (shifted, trace) = apply_price_shift(&sol, mu).unwrap();
            for j in 0..sol.instance().n_items() {
                assert!(
                    (shifted.item_mass(j) - sol.item_mass(j)).abs() < 1e-12,
                    "item {j} mass drifted"
                );
            }
            for ((i, j), v) in shifted.support() {
                let moved = trace.net_pair_shift(i, j);
                assert!((v - sol.x(i, j) - moved).abs() < 1e-12);
            }
            assert!(trace.gain_sum() > 0.0);
            let lift = trace.final_potential - trace.initial_potential;
            assert!(
                lift >= trace.gain_sum() - 1e-9,
                "seed {seed}: lift {lift} < bound {}",
                trace.gain_sum()
            );
            let (players, _) = compute_stats(&shifted);
            for s in &players {
                assert!((s.alpha - 1.0).abs() <= mu / 10.0 + 1e-12);
            }
        }
    }
}
