//! Derived statistics of fractional solutions and the closed-form lower
//! bounds on the rounding procedure's expected value.
//!
//! Per player: `alpha` (value over budget), `big_mass` (total fraction of
//! big items held), `small_value` (value carried by small items), raw
//! `value`.  Per item: total mass, how much of it comes from players that
//! consider the item big vs. small, and the mass-weighted average price.
//!
//! The three bound functions are exact formulas, not simulations; the
//! rounding tests check the simulated expectation against them.

use crate::solution::AssignmentSolution;
use crate::{Error, ItemClass, Result};

/// Statistics of one player's row of a fractional solution.
///
/// `value` is the raw (uncapped) value `sum_j x_ij p_ij`, so
/// `alpha * budget == value` always; players past their budget have
/// `alpha > 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PlayerStats {
    pub alpha: f64,
    pub big_mass: f64,
    pub small_value: f64,
    pub value: f64,
}

/// Statistics of one item's column of a fractional solution.
///
/// `big_mass` counts the mass from players for whom this item is big,
/// `small_mass` the rest; `avg_price` is `sum_i x_ij p_ij / sum_i x_ij`,
/// defined as `0` for unassigned items.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ItemStats {
    pub mass: f64,
    pub big_mass: f64,
    pub small_mass: f64,
    pub avg_price: f64,
}

/// Computes all player and item statistics in one pass over the support.
pub fn compute_stats(sol: &AssignmentSolution) -> (Vec<PlayerStats>, Vec<ItemStats>) {
    let inst = sol.instance();
    let mut players = vec![
        PlayerStats { alpha: 0.0, big_mass: 0.0, small_value: 0.0, value: 0.0 };
        inst.n_players()
    ];
    let mut items =
        vec![ItemStats { mass: 0.0, big_mass: 0.0, small_mass: 0.0, avg_price: 0.0 }; inst.n_items()];
    let mut item_value = vec![0.0; inst.n_items()];
    for ((i, j), v) in sol.support() {
        let p = inst.price(i, j).expect("supported pair is priced");
        let big = inst.classify(i, j).expect("supported pair is priced") == ItemClass::Big;
        players[i].value += v * p;
        if big {
            players[i].big_mass += v;
            items[j].big_mass += v;
        } else {
            players[i].small_value += v * p;
            items[j].small_mass += v;
        }
        items[j].mass += v;
        item_value[j] += v * p;
    }
    for (i, st) in players.iter_mut().enumerate() {
        st.alpha = st.value / inst.budget(i);
    }
    for (j, st) in items.iter_mut().enumerate() {
        if st.mass > 0.0 {
            st.avg_price = item_value[j] / st.mass;
        }
    }
    (players, items)
}

/// Checks the canonical-solution structure: (a) every supported big pair is
/// priced exactly at the player's budget, and (b) each player's big value and
/// small value both equal half the budget.  Tolerance is relative to the
/// budget.  Returns the full violation list (empty means canonical).
pub fn canonical_violations(sol: &AssignmentSolution, tol: f64) -> Vec<String> {
    let inst = sol.instance();
    let mut out = Vec::new();
    for i in 0..inst.n_players() {
        let b = inst.budget(i);
        let mut big_value = 0.0;
        let mut small_value = 0.0;
        for (j, v) in sol.player_support(i) {
            let p = inst.price(i, j).unwrap();
            if inst.classify(i, j).unwrap() == ItemClass::Big {
                big_value += v * p;
                if (p - b).abs() > tol * b {
                    out.push(format!(
                        "player {} big item {} priced {} instead of budget {}",
                        inst.player_id(i),
                        inst.item_id(j),
                        p,
                        b
                    ));
                }
            } else {
                small_value += v * p;
            }
        }
        if (big_value - b / 2.0).abs() > tol * b {
            out.push(format!(
                "player {} big value {} != half budget {}",
                inst.player_id(i),
                big_value,
                b / 2.0
            ));
        }
        if (small_value - b / 2.0).abs() > tol * b {
            out.push(format!(
                "player {} small value {} != half budget {}",
                inst.player_id(i),
                small_value,
                b / 2.0
            ));
        }
    }
    out
}

/// Default relative tolerance for [`is_canonical`].
pub const CANONICAL_TOL: f64 = 1e-6;

pub fn is_canonical(sol: &AssignmentSolution, tol: f64) -> bool {
    canonical_violations(sol, tol).is_empty()
}

fn check_positive(what: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::OutOfRange { what, value: v, range: "(0, inf)" });
    }
    Ok(())
}

fn check_nonnegative(what: &'static str, v: f64) -> Result<f64> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::NegativeInput { what, value: v });
    }
    Ok(v)
}

/// Lower bound on a player's expected rounded value as a function of `alpha`
/// alone: `B * alpha * (1 - alpha/4)` up to `alpha = 2`, then flat at `B`.
/// At `alpha = 1` this is `0.75 * B`, the headline guarantee.
pub fn bound_alpha(budget: f64, alpha: f64) -> Result<f64> {
    check_positive("budget", budget)?;
    check_nonnegative("alpha", alpha)?;
    if alpha >= 2.0 {
        Ok(budget)
    } else {
        Ok(budget * alpha * (1.0 - alpha / 4.0))
    }
}

/// Refined lower bound using `w`, the largest per-configuration fill fraction
/// of the player's buckets: `B * (alpha - w * (alpha - w))`.  Worst case over
/// `w` recovers [`bound_alpha`]; a known small or large `w` gives more.
pub fn bound_intermediate(budget: f64, alpha: f64, w: f64) -> Result<f64> {
    check_positive("budget", budget)?;
    check_nonnegative("alpha", alpha)?;
    if !(0.0..=1.0).contains(&w) || !w.is_finite() {
        return Err(Error::OutOfRange { what: "w", value: w, range: "[0, 1]" });
    }
    Ok(budget * (alpha - w * (alpha - w)))
}

/// Lower bound for players whose big items are priced at the full budget and
/// whose small items are cheap: `b*B + (1-b)*S`.  Its derivation only holds
/// when `S/B <= (1+b)/2`; outside that region the function returns `None`
/// rather than an unsound number.
pub fn bound_big_small(budget: f64, big_mass: f64, small_value: f64) -> Result<Option<f64>> {
    check_positive("budget", budget)?;
    check_nonnegative("big_mass", big_mass)?;
    check_nonnegative("small_value", small_value)?;
    if small_value / budget <= (1.0 + big_mass) / 2.0 {
        Ok(Some(big_mass * budget + (1.0 - big_mass) * small_value))
    } else {
        Ok(None)
    }
}
