//! The seven-step case analysis over a fractional solution.
//!
//! Each step tests one structural assumption.  When the assumption *fires*
//! (the offending population carries enough value), rounding the current —
//! possibly transformed — solution already beats the 3/4 baseline on that
//! population, so the step returns a ROUND decision.  When it does not fire,
//! the step trims the offenders away (logging the value given up, which the
//! failed trigger caps) and hands a structurally stricter solution to the
//! next step.  The order is load-bearing: every step's precondition is the
//! previous steps' postcondition.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::instance::ItemClass;
use crate::lp::normalize_saturation;
use crate::solution::AssignmentSolution;
use crate::stats::{canonical_violations, compute_stats, CANONICAL_TOL};
use crate::transforms::{
    apply_price_shift, find_big_small, find_unequally_priced, sample_partition, shift_main,
    shift_preprocess,
};

use super::draft::Draft;
use super::slots::{RoundOutcome, TerminalRounder};

/// A statistic exactly at its threshold counts as firing.
const TRIGGER_TOL: f64 = 1e-12;
/// Absolute slack for mass comparisons during trims and rebalancing.
const MASS_EPS: f64 = 1e-12;

/// Which way a step resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The assumption fired: round the decision's solution now.
    Round,
    /// The structure is too far gone for the bundled trims; only an external
    /// algorithm certifies the stronger constant, so the caller should hand
    /// the unchanged solution to its rounding slot.
    Dispatch,
    /// Trimmed: continue with the decision's solution.
    Trim,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Round => "round",
            Branch::Dispatch => "dispatch",
            Branch::Trim => "trim",
        }
    }
}

/// One bookkeeping item inserted during a trim to restore the canonical
/// half-big / half-small shape.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FakeLog {
    pub step: u8,
    pub player: String,
    pub item: String,
    /// "big" or "small".
    pub kind: &'static str,
    pub price: f64,
    pub mass: f64,
}

/// Outcome of one step.
#[derive(Debug)]
pub struct StepDecision {
    pub step: u8,
    pub name: &'static str,
    pub branch: Branch,
    /// Fraction of the current value carried by the triggering population.
    pub statistic: f64,
    /// Trigger constant the statistic was compared against.
    pub threshold: f64,
    /// Solution to round (Round/Dispatch) or to continue with (Trim).
    pub solution: AssignmentSolution,
    pub certificate: Option<String>,
    pub fakes: Vec<FakeLog>,
    pub notes: Vec<String>,
    /// Budget-capped value of real (non-bookkeeping) items before the step.
    pub real_before: f64,
    /// Same after; `real_before - real_after` is the step's logged loss.
    pub real_after: f64,
    pub value_before: f64,
    pub value_after: f64,
    /// Cap on the loss as a fraction of `value_before` implied by the
    /// trigger sitting below its threshold (trim branches; 0 otherwise).
    pub shape_cap: f64,
}

/// Per-player budget-capped value counting only real items.  This is the
/// quantity the value ledger tracks: bookkeeping items participate in
/// rounding but are worthless.
pub fn capped_real_value(sol: &AssignmentSolution) -> f64 {
    let inst = sol.instance();
    (0..inst.n_players())
        .map(|i| {
            let real: f64 = sol
                .player_support(i)
                .filter(|(j, _)| !sol.is_fake(*j))
                .map(|(j, v)| v * inst.price(i, j).unwrap())
                .sum();
            real.min(inst.budget(i))
        })
        .sum()
}

fn check_fraction(what: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::OutOfRange {
            what,
            value: v,
            range: "(0, 1)",
        });
    }
    Ok(())
}

fn check_has_value(total: f64) -> Result<()> {
    if total <= 1e-12 {
        return Err(Error::Precondition(
            "solution carries no value; nothing to analyze".into(),
        ));
    }
    Ok(())
}

fn require_saturated(sol: &AssignmentSolution) -> Result<()> {
    let (players, _) = compute_stats(sol);
    for (i, st) in players.iter().enumerate() {
        if (st.alpha - 1.0).abs() > CANONICAL_TOL {
            return Err(Error::Precondition(format!(
                "player {} is not exactly saturated (alpha = {})",
                sol.instance().player_id(i),
                st.alpha
            )));
        }
    }
    Ok(())
}

fn require_canonical(sol: &AssignmentSolution) -> Result<()> {
    if let Some(first) = canonical_violations(sol, CANONICAL_TOL).first() {
        return Err(Error::Precondition(format!(
            "solution is not canonical: {first}"
        )));
    }
    Ok(())
}

/// Restores `pid` to the canonical half-big / half-small split.  Earlier
/// bookkeeping items of the player are merged away first; a side that
/// overshoots is scaled down uniformly, a side that undershoots is padded
/// with fresh bookkeeping items (price = budget on the big side, derived
/// price on the small side).  With `single_small_fake` the small pad must
/// fit a single item priced ≤ budget/2 — the guarded error — otherwise the
/// pad may split across two items so each price stays ≤ budget/2.
fn rebalance_player(
    d: &mut Draft,
    pid: &str,
    step: u8,
    single_small_fake: bool,
    fakes: &mut Vec<FakeLog>,
    notes: &mut Vec<String>,
) -> Result<()> {
    let b = d.budget(pid);
    let merged = d.remove_fakes_of(pid);
    if !merged.is_empty() {
        notes.push(format!(
            "player {pid}: merged earlier bookkeeping items {merged:?}"
        ));
    }

    let big = d.big_mass(pid);
    if big > 0.5 + MASS_EPS {
        d.scale_player_side(pid, true, 0.5 / big);
    } else if big < 0.5 - MASS_EPS {
        let mass = 0.5 - big;
        let iid = format!("fk:{step}:big:{pid}");
        d.add_fake(&iid, pid, b, mass);
        fakes.push(FakeLog {
            step,
            player: pid.to_string(),
            item: iid,
            kind: "big",
            price: b,
            mass,
        });
    }

    let small = d.small_value(pid);
    let half = b / 2.0;
    if small > half + MASS_EPS * b {
        d.scale_player_side(pid, false, half / small);
    } else {
        let deficit = half - small;
        if deficit > 1e-12 * b {
            let price = 2.0 * deficit;
            if price <= half * (1.0 + 1e-9) {
                let iid = format!("fk:{step}:small:{pid}");
                d.add_fake(&iid, pid, price, 0.5);
                fakes.push(FakeLog {
                    step,
                    player: pid.to_string(),
                    item: iid,
                    kind: "small",
                    price,
                    mass: 0.5,
                });
            } else if single_small_fake {
                return Err(Error::FakePriceTooLarge {
                    player: pid.to_string(),
                    price,
                    half_budget: half,
                });
            } else {
                // Two half-mass items at price = deficit each: together they
                // restore the deficit and each price stays ≤ budget/2.
                for tag in ["a", "b"] {
                    let iid = format!("fk:{step}:small:{pid}:{tag}");
                    d.add_fake(&iid, pid, deficit, 0.5);
                    fakes.push(FakeLog {
                        step,
                        player: pid.to_string(),
                        item: iid,
                        kind: "small",
                        price: deficit,
                        mass: 0.5,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Step 1: every player must sit exactly at budget.  Underfilled players
/// (value ≤ (1−slack)·budget) round to at least (3+slack/5)/4 of their value
/// instead of 3/4, so if they carry an `eps1` value fraction, rounding now
/// wins.  Otherwise they are removed and every surviving budget is lowered
/// to the player's exact value.
pub fn step1_full_budgets(
    sol: &AssignmentSolution,
    slack: f64,
    eps1: f64,
) -> Result<StepDecision> {
    check_fraction("saturation slack", slack)?;
    check_fraction("eps1", eps1)?;
    // Oversaturated rows add nothing to the capped objective; pull them back
    // to exactly budget so the underfilled test and the budget lowering below
    // are unambiguous.
    let sol = normalize_saturation(sol)?;
    let inst = sol.instance().clone();
    let value_before = sol.total_value();
    check_has_value(value_before)?;
    let real_before = capped_real_value(&sol);

    let underfilled: BTreeSet<usize> = (0..inst.n_players())
        .filter(|&i| {
            let b = inst.budget(i);
            sol.player_value(i) <= (1.0 - slack) * b + 1e-12 * b
        })
        .collect();
    let under_value: f64 = underfilled.iter().map(|&i| sol.player_value(i)).sum();
    let statistic = under_value / value_before;

    if statistic >= eps1 - TRIGGER_TOL {
        let improved = (3.0 + slack / 5.0) / 4.0;
        let bound: f64 = (0..inst.n_players())
            .map(|i| {
                let v = sol.player_value(i);
                if underfilled.contains(&i) {
                    improved * v
                } else {
                    0.75 * v
                }
            })
            .sum();
        return Ok(StepDecision {
            step: 1,
            name: "full-budgets",
            branch: Branch::Round,
            statistic,
            threshold: eps1,
            certificate: Some(format!(
                "underfilled players carry a {statistic:.4} value fraction; \
                 per-player guarantee ({improved:.4} on them, 0.75 elsewhere) \
                 certifies expected value ≥ {bound:.6}"
            )),
            fakes: Vec::new(),
            notes: vec![format!("{} underfilled players", underfilled.len())],
            real_before,
            real_after: real_before,
            value_before,
            value_after: value_before,
            solution: sol,
            shape_cap: 0.0,
        });
    }

    let mut d = Draft::from_solution(&sol);
    let drop: BTreeSet<String> = underfilled
        .iter()
        .map(|&i| inst.player_id(i).to_string())
        .collect();
    d.retain_players(|pid| !drop.contains(pid));
    d.drop_orphan_items();
    for pid in d.player_ids() {
        let v = d.player_value(&pid);
        d.set_budget(&pid, v);
    }
    let out = d.build()?;
    let real_after = capped_real_value(&out);
    let value_after = out.total_value();
    Ok(StepDecision {
        step: 1,
        name: "full-budgets",
        branch: Branch::Trim,
        statistic,
        threshold: eps1,
        certificate: None,
        fakes: Vec::new(),
        notes: vec![format!(
            "removed {} underfilled players; lowered every surviving budget to its value",
            drop.len()
        )],
        real_before,
        real_after,
        value_before,
        value_after,
        solution: out,
        shape_cap: eps1,
    })
}

/// Step 2: item prices must be near-uniform.  If the spread-detected items
/// carry an `eps2` value fraction, shift a little of their mass toward the
/// high-priced takers — which provably raises the saturated rounding
/// functional — and round the shifted solution.  Otherwise remove those
/// items, zero surviving assignments priced outside (1±mu) of their item's
/// average, and lower budgets back to exact saturation.
pub fn step2_unique_prices(
    sol: &AssignmentSolution,
    mu: f64,
    eps2: f64,
) -> Result<StepDecision> {
    check_fraction("eps2", eps2)?;
    let report = find_unequally_priced(sol, mu)?;
    let inst = sol.instance().clone();
    let value_before = sol.total_value();
    check_has_value(value_before)?;
    let real_before = capped_real_value(sol);

    let spread_value: f64 = sol
        .support()
        .filter(|((_, j), _)| report.contains(*j))
        .map(|((i, j), v)| v * inst.price(i, j).unwrap())
        .sum();
    let statistic = spread_value / value_before;

    if statistic >= eps2 - TRIGGER_TOL {
        let (shifted, trace) = apply_price_shift(sol, mu)?;
        let lift = trace.final_potential - trace.initial_potential;
        return Ok(StepDecision {
            step: 2,
            name: "unique-prices",
            branch: Branch::Round,
            statistic,
            threshold: eps2,
            certificate: Some(format!(
                "{} spread items carry a {statistic:.4} value fraction; the price \
                 shift lifts the saturated rounding functional by {lift:.6e} \
                 (certified lower bound {:.6e})",
                report.len(),
                trace.gain_sum()
            )),
            fakes: Vec::new(),
            notes: vec![format!("{} shift records", trace.len())],
            real_before,
            real_after: capped_real_value(&shifted),
            value_before,
            value_after: shifted.total_value(),
            solution: shifted,
            shape_cap: 0.0,
        });
    }

    let (_, istats) = compute_stats(sol);
    let spread_ids: BTreeSet<String> = report
        .items
        .keys()
        .map(|&j| inst.item_id(j).to_string())
        .collect();
    let mut d = Draft::from_solution(sol);
    d.retain_items(|iid| !spread_ids.contains(iid));
    let mut banded = 0usize;
    for (pid, iid) in d.x.keys().cloned().collect::<Vec<_>>() {
        let j = inst.item_index(&iid).expect("surviving item came from sol");
        let w = istats[j].avg_price;
        let p = d.prices[&(pid.clone(), iid.clone())];
        if p < (1.0 - mu) * w - 1e-12 * w || p > (1.0 + mu) * w + 1e-12 * w {
            d.zero_x(&pid, &iid);
            banded += 1;
        }
    }
    let mut dropped_players = 0usize;
    for pid in d.player_ids() {
        let v = d.player_value(&pid);
        if v <= 1e-12 {
            d.retain_players(|p| p != pid);
            dropped_players += 1;
        } else {
            d.set_budget(&pid, v);
        }
    }
    d.drop_orphan_items();
    let out = d.build()?;
    let real_after = capped_real_value(&out);
    let value_after = out.total_value();
    Ok(StepDecision {
        step: 2,
        name: "unique-prices",
        branch: Branch::Trim,
        statistic,
        threshold: eps2,
        certificate: None,
        fakes: Vec::new(),
        notes: vec![format!(
            "removed {} spread items, zeroed {banded} off-band assignments, \
             dropped {dropped_players} emptied players; budgets re-saturated",
            spread_ids.len()
        )],
        real_before,
        real_after,
        value_before,
        value_after,
        solution: out,
        shape_cap: eps2 + 2.0 * mu,
    })
}

/// Step 3: force the canonical shape.  A solution is well-structured when at
/// most an `eps3` value fraction sits on players whose big-side mass leaves
/// [(1−delta)/2, (1+delta)/2].  If even that fails, beating 3/4 needs the
/// external rebalancing rounder — dispatch to the slot with the solution
/// unchanged.  Otherwise: drop the offending players, pin every big price to
/// the player's budget (small relative distortion, logged), and rebalance
/// each player to exactly half big / half small value.
pub fn step3_canonicalize(
    sol: &AssignmentSolution,
    eps3: f64,
    delta: f64,
) -> Result<StepDecision> {
    check_fraction("eps3", eps3)?;
    check_fraction("delta", delta)?;
    require_saturated(sol)?;
    let inst = sol.instance().clone();
    let value_before = sol.total_value();
    check_has_value(value_before)?;
    let real_before = capped_real_value(sol);

    let (pstats, _) = compute_stats(sol);
    let lo = (1.0 - delta) / 2.0 - MASS_EPS;
    let hi = (1.0 + delta) / 2.0 + MASS_EPS;
    let ill: BTreeSet<usize> = pstats
        .iter()
        .enumerate()
        .filter(|(_, st)| st.big_mass < lo || st.big_mass > hi)
        .map(|(i, _)| i)
        .collect();
    let ill_value: f64 = ill.iter().map(|&i| pstats[i].value).sum();
    let statistic = ill_value / value_before;

    if statistic >= eps3 - TRIGGER_TOL {
        return Ok(StepDecision {
            step: 3,
            name: "canonical-form",
            branch: Branch::Dispatch,
            statistic,
            threshold: eps3,
            certificate: Some(format!(
                "players with big mass outside [{:.3}, {:.3}] carry a {statistic:.4} \
                 value fraction; the rebalancing rounder for such solutions is not \
                 bundled — the slot rounds the unchanged solution",
                (1.0 - delta) / 2.0,
                (1.0 + delta) / 2.0
            )),
            fakes: Vec::new(),
            notes: vec![format!("{} ill-structured players", ill.len())],
            real_before,
            real_after: real_before,
            value_before,
            value_after: value_before,
            solution: sol.clone(),
            shape_cap: 0.0,
        });
    }

    let mut d = Draft::from_solution(sol);
    let drop: BTreeSet<String> = ill
        .iter()
        .map(|&i| inst.player_id(i).to_string())
        .collect();
    d.retain_players(|pid| !drop.contains(pid));
    d.drop_orphan_items();

    // Pin every big price to the player's budget.
    let mut pinned = 0usize;
    let mut max_rel = 0.0f64;
    for (pid, iid) in d.prices.keys().cloned().collect::<Vec<_>>() {
        if d.is_big(&pid, &iid) {
            let b = d.budget(&pid);
            let p = d.prices[&(pid.clone(), iid.clone())];
            if p != b {
                max_rel = max_rel.max((p - b).abs() / b);
                pinned += 1;
                d.set_price(&pid, &iid, b);
            }
        }
    }

    let mut fakes = Vec::new();
    let mut notes = vec![format!(
        "removed {} ill-structured players; pinned {pinned} big prices to budgets \
         (max relative distortion {max_rel:.4})",
        drop.len()
    )];
    for pid in d.player_ids() {
        rebalance_player(&mut d, &pid, 3, true, &mut fakes, &mut notes)?;
    }
    let out = d.build()?;
    let real_after = capped_real_value(&out);
    let value_after = out.total_value();
    Ok(StepDecision {
        step: 3,
        name: "canonical-form",
        branch: Branch::Trim,
        statistic,
        threshold: eps3,
        certificate: None,
        fakes,
        notes,
        real_before,
        real_after,
        value_before,
        value_after,
        solution: out,
        shape_cap: eps3 + inst.beta() + delta,
    })
}

/// Step 4: small items must be cheap.  A player is *valuable-small* when at
/// least `eps4` of their small-side mass sits at prices ≥ (1/2+lambda)·budget;
/// such players enjoy a strictly better rounding bound, so if they carry an
/// `eps4` value fraction, round now.  Otherwise remove them, cut every
/// surviving small price above budget/2 down to exactly budget/2, and patch
/// the lost small value with a bookkeeping item per player.
pub fn step4_valuable_small(
    sol: &AssignmentSolution,
    lambda: f64,
    eps4: f64,
) -> Result<StepDecision> {
    check_fraction("lambda", lambda)?;
    check_fraction("eps4", eps4)?;
    require_canonical(sol)?;
    let inst = sol.instance().clone();
    let value_before = sol.total_value();
    check_has_value(value_before)?;
    let real_before = capped_real_value(sol);

    let mut heavy_mass = vec![0.0f64; inst.n_players()];
    for ((i, j), v) in sol.support() {
        let p = inst.price(i, j).unwrap();
        let b = inst.budget(i);
        if inst.classify(i, j).unwrap() == ItemClass::Small
            && p >= b * (0.5 + lambda) * (1.0 - 1e-12)
        {
            heavy_mass[i] += v;
        }
    }
    let valuable: BTreeSet<usize> = (0..inst.n_players())
        .filter(|&i| heavy_mass[i] >= eps4 - TRIGGER_TOL)
        .collect();
    let valuable_value: f64 = valuable.iter().map(|&i| sol.player_value(i)).sum();
    let statistic = valuable_value / value_before;

    if statistic >= eps4 - TRIGGER_TOL {
        return Ok(StepDecision {
            step: 4,
            name: "valuable-small",
            branch: Branch::Round,
            statistic,
            threshold: eps4,
            certificate: Some(format!(
                "{} players hold ≥ {eps4} small mass priced ≥ (1/2+{lambda})·budget \
                 and carry a {statistic:.4} value fraction; their rounding bound \
                 strictly beats 3/4 (verified via the exact expectation)",
                valuable.len()
            )),
            fakes: Vec::new(),
            notes: Vec::new(),
            real_before,
            real_after: real_before,
            value_before,
            value_after: value_before,
            solution: sol.clone(),
            shape_cap: 0.0,
        });
    }

    let mut d = Draft::from_solution(sol);
    let drop: BTreeSet<String> = valuable
        .iter()
        .map(|&i| inst.player_id(i).to_string())
        .collect();
    d.retain_players(|pid| !drop.contains(pid));
    d.drop_orphan_items();

    // Cut every surviving small price above half the budget to exactly half,
    // so the cheap-small restriction needed by the mixed-item step holds
    // outright rather than within a lambda margin.
    let mut cut = 0usize;
    for (pid, iid) in d.prices.keys().cloned().collect::<Vec<_>>() {
        if !d.is_big(&pid, &iid) {
            let b = d.budget(&pid);
            let p = d.prices[&(pid.clone(), iid.clone())];
            if p > b / 2.0 * (1.0 + 1e-12) {
                d.set_price(&pid, &iid, b / 2.0);
                cut += 1;
            }
        }
    }

    let mut fakes = Vec::new();
    let mut notes = vec![format!(
        "removed {} valuable-small players; cut {cut} small prices to half budget",
        drop.len()
    )];
    for pid in d.player_ids() {
        rebalance_player(&mut d, &pid, 4, true, &mut fakes, &mut notes)?;
    }
    let out = d.build()?;
    let real_after = capped_real_value(&out);
    let value_after = out.total_value();
    Ok(StepDecision {
        step: 4,
        name: "valuable-small",
        branch: Branch::Trim,
        statistic,
        threshold: eps4,
        certificate: None,
        fakes,
        notes,
        real_before,
        real_after,
        value_before,
        value_after,
        solution: out,
        shape_cap: 1.5 * eps4 + lambda,
    })
}

/// Step 5: real items must be (almost) fully assigned.  If real items with
/// total mass below 9/10 carry an `eps5` value fraction, scale each of them
/// up to mass exactly 1 — budgets may overflow, which the per-player rounding
/// bound tolerates — and round.  Otherwise remove them and refill every
/// player to canonical with bookkeeping items.
pub fn step5_fully_assigned(sol: &AssignmentSolution, eps5: f64) -> Result<StepDecision> {
    check_fraction("eps5", eps5)?;
    require_canonical(sol)?;
    let inst = sol.instance().clone();
    let value_before = sol.total_value();
    check_has_value(value_before)?;
    let real_before = capped_real_value(sol);

    let (_, istats) = compute_stats(sol);
    let deficient: BTreeSet<usize> = (0..inst.n_items())
        .filter(|&j| !sol.is_fake(j) && istats[j].mass < 0.9 - MASS_EPS)
        .collect();
    let deficient_value: f64 = sol
        .support()
        .filter(|((_, j), _)| deficient.contains(j))
        .map(|((i, j), v)| v * inst.price(i, j).unwrap())
        .sum();
    let statistic = deficient_value / value_before;

    if statistic >= eps5 - TRIGGER_TOL {
        let mut d = Draft::from_solution(sol);
        let mut scaled = 0usize;
        for &j in &deficient {
            let mass = istats[j].mass;
            if mass > 0.0 {
                d.scale_item(inst.item_id(j), 1.0 / mass);
                scaled += 1;
            }
        }
        let out = d.build()?;
        let overflow = (0..out.instance().n_players())
            .map(|i| out.player_value(i) / out.instance().budget(i))
            .fold(0.0f64, f64::max);
        return Ok(StepDecision {
            step: 5,
            name: "fully-assigned",
            branch: Branch::Round,
            statistic,
            threshold: eps5,
            certificate: Some(format!(
                "{} underassigned real items carry a {statistic:.4} value fraction; \
                 scaled each to full mass (max budget fill {overflow:.4}) — \
                 overfilled players still round to ≥ 3/4 of budget",
                deficient.len()
            )),
            fakes: Vec::new(),
            notes: vec![format!("{scaled} items scaled up")],
            real_before,
            real_after: capped_real_value(&out),
            value_before,
            value_after: out.total_value(),
            solution: out,
            shape_cap: 0.0,
        });
    }

    let drop: BTreeSet<String> = deficient
        .iter()
        .map(|&j| inst.item_id(j).to_string())
        .collect();
    let mut d = Draft::from_solution(sol);
    d.retain_items(|iid| !drop.contains(iid));
    let mut fakes = Vec::new();
    let mut notes = vec![format!("removed {} underassigned real items", drop.len())];
    for pid in d.player_ids() {
        rebalance_player(&mut d, &pid, 5, false, &mut fakes, &mut notes)?;
    }
    let out = d.build()?;
    let real_after = capped_real_value(&out);
    let value_after = out.total_value();
    Ok(StepDecision {
        step: 5,
        name: "fully-assigned",
        branch: Branch::Trim,
        statistic,
        threshold: eps5,
        certificate: None,
        fakes,
        notes,
        real_before,
        real_after,
        value_before,
        value_after,
        solution: out,
        shape_cap: eps5,
    })
}

/// Step 6: every item must end up assigned on a single side.  If the
/// balanced mixed items carry an `eps6` value fraction, run the two-phase
/// red/green shift (partition drawn from `partition_seed`) and round the
/// result.  Otherwise remove the balanced items, zero each surviving real
/// item's minority side (ties keep big), and refill to canonical.
pub fn step6_big_small(
    sol: &AssignmentSolution,
    nu: f64,
    eps6: f64,
    partition_seed: u64,
) -> Result<StepDecision> {
    check_fraction("eps6", eps6)?;
    require_canonical(sol)?;
    let mset = find_big_small(sol, nu)?;
    let inst = sol.instance().clone();
    let value_before = sol.total_value();
    check_has_value(value_before)?;
    let real_before = capped_real_value(sol);

    let mixed_value: f64 = sol
        .support()
        .filter(|((_, j), _)| mset.contains(*j))
        .map(|((i, j), v)| v * inst.price(i, j).unwrap())
        .sum();
    let statistic = mixed_value / value_before;

    if statistic >= eps6 - TRIGGER_TOL {
        let part = sample_partition(inst.n_players(), partition_seed);
        let (x1, pre_trace) = shift_preprocess(sol, &part)?;
        let (x2, main_trace) = shift_main(&x1, &part, &mset)?;
        let lift = main_trace.final_potential - pre_trace.initial_potential;
        return Ok(StepDecision {
            step: 6,
            name: "big-small",
            branch: Branch::Round,
            statistic,
            threshold: eps6,
            certificate: Some(format!(
                "{} balanced mixed items carry a {statistic:.4} value fraction; the \
                 red/green shift (seed {partition_seed}) lifts the mixed rounding \
                 functional by {lift:.6e}",
                mset.len()
            )),
            fakes: Vec::new(),
            notes: vec![
                format!("{} red players", part.reds().count()),
                format!(
                    "{} preprocessing moves, {} main moves, {} warnings",
                    pre_trace.len(),
                    main_trace.len(),
                    main_trace.warnings.len()
                ),
            ],
            real_before,
            real_after: capped_real_value(&x2),
            value_before,
            value_after: x2.total_value(),
            solution: x2,
            shape_cap: 0.0,
        });
    }

    let drop: BTreeSet<String> = mset
        .items
        .iter()
        .map(|&j| inst.item_id(j).to_string())
        .collect();
    let mut d = Draft::from_solution(sol);
    d.retain_items(|iid| !drop.contains(iid));

    // Restrict every surviving real item to its majority side.
    let mut restricted = 0usize;
    let item_ids: Vec<String> = d.items.iter().map(|(id, _)| id.clone()).collect();
    for iid in item_ids {
        if d.is_fake(&iid) {
            continue;
        }
        let takers: Vec<(String, f64, bool)> = d
            .x
            .iter()
            .filter(|((_, it), _)| *it == iid)
            .map(|((pl, it), v)| (pl.clone(), *v, d.is_big(pl, it)))
            .collect();
        let big_side: f64 = takers.iter().filter(|(_, _, b)| *b).map(|(_, v, _)| v).sum();
        let small_side: f64 = takers.iter().filter(|(_, _, b)| !b).map(|(_, v, _)| v).sum();
        if big_side > MASS_EPS && small_side > MASS_EPS {
            let keep_big = big_side >= small_side;
            for (pl, _, is_big) in &takers {
                if *is_big != keep_big {
                    d.zero_x(pl, &iid);
                }
            }
            restricted += 1;
        }
    }

    let mut fakes = Vec::new();
    let mut notes = vec![format!(
        "removed {} balanced mixed items; restricted {restricted} items to their \
         majority side",
        drop.len()
    )];
    for pid in d.player_ids() {
        rebalance_player(&mut d, &pid, 6, false, &mut fakes, &mut notes)?;
    }
    let out = d.build()?;
    let real_after = capped_real_value(&out);
    let value_after = out.total_value();
    Ok(StepDecision {
        step: 6,
        name: "big-small",
        branch: Branch::Trim,
        statistic,
        threshold: eps6,
        certificate: None,
        fakes,
        notes,
        real_before,
        real_after,
        value_before,
        value_after,
        solution: out,
        shape_cap: eps6 + 2.0 * nu,
    })
}

/// The four structural conditions the negatively-correlated terminal rounder
/// requires: (a) supported big prices equal the budget, (b) exactly half the
/// budget on each side per player, (c) one price per item across its
/// supported takers, (d) no item assigned on both sides.  Returns every
/// violation found (empty means the solution qualifies).
pub fn verify_terminal_conditions(sol: &AssignmentSolution) -> Vec<String> {
    let inst = sol.instance();
    // (a) + (b) are exactly the canonical-shape checks.
    let mut out = canonical_violations(sol, CANONICAL_TOL);
    for j in 0..inst.n_items() {
        let takers: Vec<(usize, f64, f64, bool)> = sol
            .support()
            .filter(|((_, jj), _)| *jj == j)
            .map(|((i, _), v)| {
                let p = inst.price(i, j).unwrap();
                let big = inst.classify(i, j).unwrap() == ItemClass::Big;
                (i, v, p, big)
            })
            .collect();
        if takers.is_empty() {
            continue;
        }
        let pmin = takers.iter().map(|t| t.2).fold(f64::INFINITY, f64::min);
        let pmax = takers.iter().map(|t| t.2).fold(0.0f64, f64::max);
        if pmax - pmin > 1e-9 * pmax {
            out.push(format!(
                "item {} is priced {pmin} to {pmax} across its takers",
                inst.item_id(j)
            ));
        }
        let big_mass: f64 = takers.iter().filter(|t| t.3).map(|t| t.1).sum();
        let small_mass: f64 = takers.iter().filter(|t| !t.3).map(|t| t.1).sum();
        if big_mass > 1e-9 && small_mass > 1e-9 {
            out.push(format!(
                "item {} is assigned both as big (mass {big_mass:.3e}) and as small \
                 (mass {small_mass:.3e})",
                inst.item_id(j)
            ));
        }
    }
    out
}

/// Step 7: verify the terminal conditions and hand the solution to the
/// rounding slot.  Errors with the full violation list when the conditions
/// fail; the bundled slot itself only certifies 3/4 — the strictly better
/// terminal constant needs the external negatively-correlated rounder.
pub fn step7_final(
    sol: &AssignmentSolution,
    rounder: &dyn TerminalRounder,
    seed: u64,
) -> Result<RoundOutcome> {
    let violations = verify_terminal_conditions(sol);
    if !violations.is_empty() {
        return Err(Error::TerminalConditions(violations));
    }
    rounder.round(sol, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Instance;
    use crate::stats::compute_stats;
    use std::sync::Arc;

    fn sol(inst: &Arc<Instance>, entries: &[(&str, &str, f64)]) -> AssignmentSolution {
        let pairs: Vec<_> = entries
            .iter()
            .map(|(p, j, v)| {
                (
                    (
                        inst.player_index(p).unwrap(),
                        inst.item_index(j).unwrap(),
                    ),
                    *v,
                )
            })
            .collect();
        AssignmentSolution::new(inst.clone(), pairs).unwrap()
    }

    /// One saturated player and one at half saturation, equal value.
    fn mixed_saturation() -> AssignmentSolution {
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("sat", 0.5), ("low", 1.0)],
                &["i1", "i2"],
                &[("sat", "i1", 0.5), ("low", "i2", 1.0)],
            )
            .unwrap(),
        );
        sol(&inst, &[("sat", "i1", 1.0), ("low", "i2", 0.5)])
    }

    #[test]
    fn step1_rounds_when_underfilled_players_carry_value() {
        let d = step1_full_budgets(&mixed_saturation(), 0.2, 0.3).unwrap();
        assert_eq!(d.branch, Branch::Round);
        assert!((d.statistic - 0.5).abs() < 1e-12);
        let cert = d.certificate.unwrap();
        assert!(cert.contains("0.7600"), "cert: {cert}");
    }

    #[test]
    fn step1_trim_removes_underfilled_and_saturates_the_rest() {
        let d = step1_full_budgets(&mixed_saturation(), 0.2, 0.6).unwrap();
        assert_eq!(d.branch, Branch::Trim);
        let out = &d.solution;
        let inst = out.instance();
        assert_eq!(inst.n_players(), 1);
        assert_eq!(inst.player_id(0), "sat");
        assert!((out.player_value(0) - inst.budget(0)).abs() < 1e-12);
        assert!((d.real_before - d.real_after - 0.5).abs() < 1e-12);
    }

    /// Shared item priced 1.2 / 0.8 across two saturated unit-budget players.
    fn spread_prices() -> AssignmentSolution {
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("hi", 1.0), ("lo", 1.0)],
                &["j", "fhi", "flo"],
                &[
                    ("hi", "j", 1.2),
                    ("lo", "j", 0.8),
                    ("hi", "fhi", 0.4),
                    ("lo", "flo", 0.6),
                ],
            )
            .unwrap(),
        );
        sol(
            &inst,
            &[
                ("hi", "j", 0.5),
                ("lo", "j", 0.5),
                ("hi", "fhi", 1.0),
                ("lo", "flo", 1.0),
            ],
        )
    }

    #[test]
    fn step2_rounds_via_the_price_shift() {
        let d = step2_unique_prices(&spread_prices(), 0.05, 0.3).unwrap();
        assert_eq!(d.branch, Branch::Round);
        assert!((d.statistic - 0.5).abs() < 1e-9);
        // The shift moves mass toward the high-priced taker: value never drops.
        assert!(d.value_after >= d.value_before - 1e-9);
    }

    #[test]
    fn step2_trim_drops_spread_items_and_resaturates() {
        let d = step2_unique_prices(&spread_prices(), 0.05, 0.6).unwrap();
        assert_eq!(d.branch, Branch::Trim);
        let out = &d.solution;
        let inst = out.instance();
        assert!(inst.item_index("j").is_none());
        for i in 0..inst.n_players() {
            assert!((out.player_value(i) - inst.budget(i)).abs() < 1e-12);
        }
        assert!((d.real_before - d.real_after - 1.0).abs() < 1e-12);
        assert!(d.real_before - d.real_after <= d.shape_cap * d.value_before + 1e-9);
    }

    fn one_canonical_player() -> AssignmentSolution {
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("a", 1.0)],
                &["bg", "sp"],
                &[("a", "bg", 1.0), ("a", "sp", 0.5)],
            )
            .unwrap(),
        );
        sol(&inst, &[("a", "bg", 0.5), ("a", "sp", 1.0)])
    }

    #[test]
    fn step3_is_idempotent_on_a_canonical_player() {
        let d = step3_canonicalize(&one_canonical_player(), 0.04, 0.2).unwrap();
        assert_eq!(d.branch, Branch::Trim);
        assert!(d.fakes.is_empty());
        assert!((d.value_after - d.value_before).abs() < 1e-12);
        assert!(canonical_violations(&d.solution, CANONICAL_TOL).is_empty());
    }

    #[test]
    fn step3_pads_and_rescales_an_off_center_player() {
        // Big mass 0.45 (inside the delta = 0.2 band), small value 0.55.
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("a", 1.0)],
                &["bg", "s1", "s2"],
                &[("a", "bg", 1.0), ("a", "s1", 0.5), ("a", "s2", 0.5)],
            )
            .unwrap(),
        );
        let x = sol(
            &inst,
            &[("a", "bg", 0.45), ("a", "s1", 1.0), ("a", "s2", 0.1)],
        );
        let d = step3_canonicalize(&x, 0.04, 0.2).unwrap();
        assert_eq!(d.branch, Branch::Trim);
        assert_eq!(d.fakes.len(), 1);
        let f = &d.fakes[0];
        assert_eq!(f.kind, "big");
        assert!((f.price - 1.0).abs() < 1e-12);
        assert!((f.mass - 0.05).abs() < 1e-12);
        assert!(canonical_violations(&d.solution, CANONICAL_TOL).is_empty());
        let (ps, _) = compute_stats(&d.solution);
        assert!((ps[0].big_mass - 0.5).abs() < 1e-9);
    }

    #[test]
    fn step3_dispatches_when_structure_is_beyond_repair() {
        let inst = Arc::new(
            Instance::build(1.0 / 3.0, &[("a", 1.0)], &["bg"], &[("a", "bg", 1.0)]).unwrap(),
        );
        let x = sol(&inst, &[("a", "bg", 1.0)]);
        let d = step3_canonicalize(&x, 0.04, 0.2).unwrap();
        assert_eq!(d.branch, Branch::Dispatch);
        assert!((d.statistic - 1.0).abs() < 1e-12);
        assert_eq!(d.solution.support_len(), x.support_len());
    }

    /// Canonical player with 0.3 small mass at price 0.6 > budget/2.
    fn heavy_small_player() -> AssignmentSolution {
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("a", 1.0)],
                &["bg", "s1", "s2"],
                &[("a", "bg", 1.0), ("a", "s1", 0.6), ("a", "s2", 0.4)],
            )
            .unwrap(),
        );
        sol(
            &inst,
            &[("a", "bg", 0.5), ("a", "s1", 0.3), ("a", "s2", 0.8)],
        )
    }

    #[test]
    fn step4_rounds_when_pricey_small_mass_is_common() {
        let d = step4_valuable_small(&heavy_small_player(), 0.05, 0.25).unwrap();
        assert_eq!(d.branch, Branch::Round);
        assert!((d.statistic - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step4_trim_cuts_small_prices_to_half_budget_and_patches() {
        let d = step4_valuable_small(&heavy_small_player(), 0.05, 0.35).unwrap();
        assert_eq!(d.branch, Branch::Trim);
        let out = &d.solution;
        let inst = out.instance();
        let a = inst.player_index("a").unwrap();
        let s1 = inst.item_index("s1").unwrap();
        assert!((inst.price(a, s1).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(d.fakes.len(), 1);
        assert_eq!(d.fakes[0].kind, "small");
        assert!((d.fakes[0].price - 0.06).abs() < 1e-9);
        assert!(canonical_violations(out, CANONICAL_TOL).is_empty());
        assert!((d.real_before - d.real_after - 0.03).abs() < 1e-9);
    }

    #[test]
    fn step5_scales_underassigned_items_to_full_mass() {
        let d = step5_fully_assigned(&one_canonical_player(), 0.4).unwrap();
        assert_eq!(d.branch, Branch::Round);
        assert!((d.statistic - 0.5).abs() < 1e-12);
        let out = &d.solution;
        let inst = out.instance();
        let bg = inst.item_index("bg").unwrap();
        assert!((out.item_mass(bg) - 1.0).abs() < 1e-12);
        assert!((out.total_value() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn step5_trim_removes_underassigned_items_and_refills() {
        let d = step5_fully_assigned(&one_canonical_player(), 0.6).unwrap();
        assert_eq!(d.branch, Branch::Trim);
        let out = &d.solution;
        assert!(out.instance().item_index("bg").is_none());
        assert_eq!(d.fakes.len(), 1);
        assert_eq!(d.fakes[0].kind, "big");
        assert!(canonical_violations(out, CANONICAL_TOL).is_empty());
        assert!((d.real_before - d.real_after - 0.5).abs() < 1e-12);
    }

    /// Item `t` is big for A and small for C with both sides populated;
    /// item `gc` is big on both sides (not mixed); the rest are one-sided.
    fn mixed_item_solution() -> AssignmentSolution {
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("A", 1.0), ("C", 2.0), ("D", 2.0)],
                &["t", "gc", "sa", "sc", "sd"],
                &[
                    ("A", "t", 1.0),
                    ("C", "t", 1.0),
                    ("C", "gc", 2.0),
                    ("D", "gc", 2.0),
                    ("A", "sa", 0.5),
                    ("C", "sc", 2.0 / 3.0),
                    ("D", "sd", 1.0),
                ],
            )
            .unwrap(),
        );
        sol(
            &inst,
            &[
                ("A", "t", 0.5),
                ("C", "t", 0.4),
                ("C", "gc", 0.5),
                ("D", "gc", 0.5),
                ("A", "sa", 1.0),
                ("C", "sc", 0.9),
                ("D", "sd", 1.0),
            ],
        )
    }

    #[test]
    fn step6_rounds_through_the_two_phase_shift() {
        let x = mixed_item_solution();
        assert!(canonical_violations(&x, CANONICAL_TOL).is_empty());
        let d = step6_big_small(&x, 0.05, 0.1, 99).unwrap();
        assert_eq!(d.branch, Branch::Round);
        assert!((d.statistic - 0.18).abs() < 1e-9);
        assert!(d.value_after >= d.value_before - 1e-9);
        assert!(d.certificate.unwrap().contains("seed 99"));
    }

    #[test]
    fn step6_trim_removes_mixed_items_and_singles_sides() {
        let d = step6_big_small(&mixed_item_solution(), 0.05, 0.5, 99).unwrap();
        assert_eq!(d.branch, Branch::Trim);
        let out = &d.solution;
        let inst = out.instance();
        assert!(inst.item_index("t").is_none());
        // A lost its whole big side, C part of its small side.
        assert_eq!(d.fakes.len(), 2);
        assert!(canonical_violations(out, CANONICAL_TOL).is_empty());
        // Every surviving real item sits on one side only.
        for extra in verify_terminal_conditions(out) {
            assert!(
                !extra.contains("assigned both"),
                "two-sided item survived: {extra}"
            );
        }
    }

    #[test]
    fn terminal_conditions_accept_a_shared_big_item_at_equal_budgets() {
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("a", 1.0), ("b", 1.0)],
                &["g", "sa", "sb"],
                &[
                    ("a", "g", 1.0),
                    ("b", "g", 1.0),
                    ("a", "sa", 0.5),
                    ("b", "sb", 0.5),
                ],
            )
            .unwrap(),
        );
        let x = sol(
            &inst,
            &[
                ("a", "g", 0.5),
                ("b", "g", 0.5),
                ("a", "sa", 1.0),
                ("b", "sb", 1.0),
            ],
        );
        assert!(verify_terminal_conditions(&x).is_empty());
    }

    #[test]
    fn terminal_conditions_flag_a_two_sided_item() {
        let report = verify_terminal_conditions(&mixed_item_solution());
        assert!(report.iter().any(|v| v.contains("assigned both")), "{report:?}");
    }

    #[test]
    fn rebalance_guards_oversized_small_patches() {
        // Small value 0.1: the patch needs price 0.8 > budget/2.
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("a", 1.0)],
                &["bg", "sp"],
                &[("a", "bg", 1.0), ("a", "sp", 0.5)],
            )
            .unwrap(),
        );
        let x = sol(&inst, &[("a", "bg", 0.5), ("a", "sp", 0.2)]);
        let mut d = Draft::from_solution(&x);
        let mut fakes = Vec::new();
        let mut notes = Vec::new();
        let err = rebalance_player(&mut d, "a", 9, true, &mut fakes, &mut notes).unwrap_err();
        assert!(matches!(err, Error::FakePriceTooLarge { .. }));

        // The unguarded caller splits the patch across two items instead.
        let mut d = Draft::from_solution(&x);
        let mut fakes = Vec::new();
        rebalance_player(&mut d, "a", 9, false, &mut fakes, &mut notes).unwrap();
        assert_eq!(fakes.len(), 2, "two small patch halves");
        assert!(fakes.iter().all(|f| f.kind == "small" && (f.price - 0.4).abs() < 1e-12));
        assert!((d.small_value("a") - 0.5).abs() < 1e-12);
        assert!((d.big_mass("a") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn capped_real_value_ignores_bookkeeping_items() {
        let x = one_canonical_player();
        let mut d = Draft::from_solution(&x);
        d.add_fake("fk:t:small:a", "a", 0.4, 0.5);
        let with_fake = d.build().unwrap();
        assert!((capped_real_value(&with_fake) - 1.0).abs() < 1e-12);
        assert!((with_fake.total_value() - 1.2).abs() < 1e-12);
    }
}
