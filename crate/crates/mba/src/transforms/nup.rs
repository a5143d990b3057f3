//! Big-small pass: on a canonical solution, color players red/green at
//! random, then shift item mass so red players hold more of their value in
//! big items and less in small ones.
//!
//! A canonical player draws half its budget from big items (each priced at
//! the full budget) and half from small items, so its mixing potential
//! `b_i·B_i + (1 − b_i)·S_i` sits at the 3/4·B_i baseline.  Moving big-item
//! mass toward a red player raises `b_i` and moving small-item mass off it
//! lowers `S_i`; both moves are paid for by green players and by red players'
//! small holdings in a way that never lowers the total potential, while in
//! expectation strictly raising it — the preprocessing phase sets up the
//! imbalance and the main phase exploits items whose mass is split between
//! big-side and small-side takers.
//!
//! The pass requires three structural restrictions on the input: every item
//! carries one price, small prices stay at or below half the taker's budget,
//! and every real item carries at least 9/10 of a unit of mass.  Fake
//! bookkeeping items are exempt from the restrictions and never move.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::instance::ItemClass;
use crate::solution::AssignmentSolution;
use crate::stats::{canonical_violations, compute_stats, CANONICAL_TOL};

use super::{check_mu, Color, Partition, PotentialKind, TransformPhase, TransformRecord, TransformTrace};

/// Items whose mass is split between big-side and small-side takers in a
/// [μ, 1−μ] proportion — the targets of the main phase.
#[derive(Debug, Clone)]
pub struct BigSmallSet {
    pub mu: f64,
    pub items: BTreeSet<usize>,
}

impl BigSmallSet {
    pub fn contains(&self, item: usize) -> bool {
        self.items.contains(&item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().copied()
    }
}

/// Finds every item with `μ·x_j ≤ xB_j ≤ (1−μ)·x_j` and `x_j > 0`, where
/// `xB_j` is the item's mass held by players for which it is big.
/// Requires μ ∈ (0, 1/2).
pub fn find_big_small(sol: &AssignmentSolution, mu: f64) -> Result<BigSmallSet> {
    check_mu(mu)?;
    let (_, item_stats) = compute_stats(sol);
    let items = item_stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mass > 0.0 && mu * s.mass <= s.big_mass && s.big_mass <= (1.0 - mu) * s.mass)
        .map(|(j, _)| j)
        .collect();
    Ok(BigSmallSet { mu, items })
}

/// Mixing potential `Σ_i b_i·B_i + (1 − b_i)·S_i`: the sum of the per-player
/// rounding guarantees expressed through big-item mass `b_i` and small-item
/// value `S_i`.
pub fn big_small_potential(sol: &AssignmentSolution) -> f64 {
    let (players, _) = compute_stats(sol);
    players
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let b = sol.instance().budget(i);
            s.big_mass * b + (1.0 - s.big_mass) * s.small_value
        })
        .sum()
}

/// Running (b_i, S_i) state used to book each move's potential deltas in
/// record order; the potential is bilinear in (b, S) so the per-half-step
/// deltas below are exact and telescope to the full change.
struct MixState {
    budgets: Vec<f64>,
    big: Vec<f64>,
    small: Vec<f64>,
}

impl MixState {
    fn from_solution(sol: &AssignmentSolution) -> Self {
        let (players, _) = compute_stats(sol);
        MixState {
            budgets: (0..players.len()).map(|i| sol.instance().budget(i)).collect(),
            big: players.iter().map(|s| s.big_mass).collect(),
            small: players.iter().map(|s| s.small_value).collect(),
        }
    }

    /// Donor gives up `delta` big mass.
    fn drop_big(&mut self, i: usize, delta: f64) -> f64 {
        self.big[i] -= delta;
        -delta * (self.budgets[i] - self.small[i])
    }

    /// Donor gives up `delta` mass of a small item priced `p`.
    fn drop_small(&mut self, i: usize, delta: f64, p: f64) -> f64 {
        self.small[i] -= delta * p;
        -(1.0 - self.big[i]) * delta * p
    }

    /// Receiver gains `delta` big mass.
    fn rise_big(&mut self, i: usize, delta: f64) -> f64 {
        let gain = delta * (self.budgets[i] - self.small[i]);
        self.big[i] += delta;
        gain
    }
}

/// Per-item view of the support split by the taker's item class.
struct ItemTakers {
    /// (player, mass) pairs for which the item is big, ascending by player.
    big: Vec<(usize, f64)>,
    /// (player, mass, price) pairs for which the item is small.
    small: Vec<(usize, f64, f64)>,
}

fn split_takers(sol: &AssignmentSolution) -> BTreeMap<usize, ItemTakers> {
    let mut map: BTreeMap<usize, ItemTakers> = BTreeMap::new();
    for ((i, j), v) in sol.support() {
        let inst = sol.instance();
        let class = inst.classify(i, j).expect("supported pair is assignable");
        let entry = map
            .entry(j)
            .or_insert_with(|| ItemTakers { big: Vec::new(), small: Vec::new() });
        match class {
            ItemClass::Big => entry.big.push((i, v)),
            ItemClass::Small => {
                let p = inst.price(i, j).expect("supported pair is assignable");
                entry.small.push((i, v, p));
            }
        }
    }
    map
}

/// Checks the three structural restrictions plus canonicity; fake items are
/// exempt from the restrictions.
fn check_restrictions(sol: &AssignmentSolution) -> Result<()> {
    let violations = canonical_violations(sol, CANONICAL_TOL);
    if let Some(first) = violations.first() {
        return Err(Error::Precondition(format!("solution is not canonical: {first}")));
    }
    let inst = sol.instance();
    for j in 0..inst.n_items() {
        if sol.is_fake(j) {
            continue;
        }
        let takers: Vec<(usize, f64)> = inst
            .offered_by(j)
            .iter()
            .map(|&i| (i, sol.x(i, j)))
            .filter(|(_, v)| *v > 0.0)
            .collect();
        if takers.is_empty() {
            continue;
        }
        let p0 = inst.price(takers[0].0, j).expect("supported pair");
        for &(i, _) in &takers[1..] {
            let p = inst.price(i, j).expect("supported pair");
            if (p - p0).abs() > 1e-9 * p0.max(1.0) {
                return Err(Error::Precondition(format!(
                    "item {} is not uniquely priced ({} for {} vs {} for {})",
                    inst.item_id(j),
                    p0,
                    inst.player_id(takers[0].0),
                    p,
                    inst.player_id(i)
                )));
            }
        }
        for &(i, _) in &takers {
            if inst.classify(i, j)? == ItemClass::Small {
                let p = inst.price(i, j).expect("supported pair");
                let budget = inst.budget(i);
                if p > budget / 2.0 + 1e-9 * budget {
                    return Err(Error::Precondition(format!(
                        "small price {} of item {} exceeds half of player {}'s budget {}",
                        p,
                        inst.item_id(j),
                        inst.player_id(i),
                        budget
                    )));
                }
            }
        }
        let mass = sol.item_mass(j);
        if mass < 0.9 - 1e-9 {
            return Err(Error::Precondition(format!(
                "real item {} carries mass {} < 9/10",
                inst.item_id(j),
                mass
            )));
        }
    }
    Ok(())
}

fn check_partition(sol: &AssignmentSolution, part: &Partition) -> Result<()> {
    let n = sol.instance().n_players();
    if part.len() != n {
        return Err(Error::Precondition(format!(
            "partition colors {} players but the instance has {n}",
            part.len()
        )));
    }
    Ok(())
}

/// Applies one batch of small-to-big moves:
/// `delta = min(x_ij·x_i′j/(100·xB_j), x_ij·x_i′j/(100·xS_j))` of item `j`
/// moves from each red small-side taker `i` to each red big-side taker `i′`.
/// Ratios come from the snapshot passed in `takers`/`item_stats`.
fn small_to_big_records(
    sol: &AssignmentSolution,
    part: &Partition,
    takers: &BTreeMap<usize, ItemTakers>,
    phase: TransformPhase,
    items: impl Iterator<Item = usize>,
    records: &mut Vec<TransformRecord>,
) -> Result<()> {
    let inst = sol.instance();
    for j in items {
        let Some(t) = takers.get(&j) else { continue };
        let big_mass: f64 = t.big.iter().map(|(_, v)| v).sum();
        let small_mass: f64 = t.small.iter().map(|(_, v, _)| v).sum();
        for &(from, x_from, _) in &t.small {
            if part.color(from) != Color::Red {
                continue;
            }
            for &(to, x_to) in &t.big {
                if part.color(to) != Color::Red {
                    continue;
                }
                if big_mass <= 0.0 || small_mass <= 0.0 {
                    return Err(Error::Precondition(format!(
                        "degenerate split for item {}: big side {big_mass}, small side {small_mass}",
                        inst.item_id(j)
                    )));
                }
                let delta = (x_from / 100.0) * (x_to / big_mass).min(x_to / small_mass);
                if delta <= 0.0 {
                    continue;
                }
                records.push(TransformRecord {
                    phase,
                    item: j,
                    from,
                    to,
                    delta,
                    gain: None,
                    drop: None,
                    rise: None,
                });
            }
        }
    }
    Ok(())
}

/// Books the potential deltas of every record against a running state and
/// applies the batch to produce the shifted solution.
fn apply_records(
    sol: &AssignmentSolution,
    records: Vec<TransformRecord>,
    mut trace: TransformTrace,
) -> Result<(AssignmentSolution, TransformTrace)> {
    let mut state = MixState::from_solution(sol);
    trace.initial_potential = big_small_potential(sol);
    let inst = sol.instance().clone();
    let mut deltas: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut records = records;
    for rec in &mut records {
        let drop = match rec.phase {
            TransformPhase::BigToBig => state.drop_big(rec.from, rec.delta),
            _ => {
                let p = inst.price(rec.from, rec.item).expect("supported pair");
                state.drop_small(rec.from, rec.delta, p)
            }
        };
        let rise = state.rise_big(rec.to, rec.delta);
        rec.drop = Some(drop);
        rec.rise = Some(rise);
        *deltas.entry((rec.from, rec.item)).or_insert(0.0) -= rec.delta;
        *deltas.entry((rec.to, rec.item)).or_insert(0.0) += rec.delta;
    }
    let shifted = sol.remap(|i, j, v| v + deltas.get(&(i, j)).copied().unwrap_or(0.0))?;
    trace.records = records;
    trace.final_potential = big_small_potential(&shifted);
    Ok((shifted, trace))
}

/// Preprocessing phase of the big-small pass.
///
/// Rule 1: for every real item `j` big on both sides, each green taker `i`
/// sends `x_ij·x_i′j/(100·(x_j − x_ij))` to each red taker `i′`.  Rule 2:
/// for every real item split between sides, each red small-side taker sends
/// the min-ratio amount (see [`find_big_small`] targets) to each red big-side
/// taker.  All ratios read the entry snapshot and the moves apply as one
/// batch.
///
/// Guarantees (each checked by the test suite record by record): item masses
/// are conserved; `b_i` never rises for green players and never falls for red
/// players; `S_i` never rises for red players and stays ≤ B_i/2 for everyone;
/// the mixing potential of the output is at least that of the input.
pub fn shift_preprocess(
    sol: &AssignmentSolution,
    part: &Partition,
) -> Result<(AssignmentSolution, TransformTrace)> {
    check_partition(sol, part)?;
    check_restrictions(sol)?;

    let takers = split_takers(sol);
    let inst = sol.instance();
    let mut records = Vec::new();

    // Rule 1: big-to-big, green donors to red receivers.
    for (&j, t) in &takers {
        if sol.is_fake(j) {
            continue;
        }
        let x_j = sol.item_mass(j);
        for &(from, x_from) in &t.big {
            if part.color(from) != Color::Green {
                continue;
            }
            for &(to, x_to) in &t.big {
                if part.color(to) != Color::Red {
                    continue;
                }
                let denom = x_j - x_from;
                if denom <= 0.0 {
                    return Err(Error::Precondition(format!(
                        "degenerate denominator for item {}: no mass besides player {}'s",
                        inst.item_id(j),
                        inst.player_id(from)
                    )));
                }
                let delta = (x_from / 100.0) * (x_to / denom);
                if delta <= 0.0 {
                    continue;
                }
                records.push(TransformRecord {
                    phase: TransformPhase::BigToBig,
                    item: j,
                    from,
                    to,
                    delta,
                    gain: None,
                    drop: None,
                    rise: None,
                });
            }
        }
    }

    // Rule 2: small-to-big among red players, every real split item.
    let real_items = (0..inst.n_items()).filter(|&j| !sol.is_fake(j));
    small_to_big_records(sol, part, &takers, TransformPhase::SmallToBig, real_items, &mut records)?;

    apply_records(sol, records, TransformTrace::new(PotentialKind::BigSmall))
}

/// Main phase of the big-small pass: the rule-2 small-to-big moves restricted
/// to the balanced items in `mset`, with ratios read from `x1` (the
/// preprocessed solution).
///
/// Membership was certified before preprocessing; items that no longer pass
/// the balanced-big test under `x1` (or that are fake) produce a trace
/// warning rather than an error.  Each record's `rise` is the receiver-side
/// potential gain, which is at least `delta·p_j·(1 − S_i′/B_i′)` with `S_i′`
/// read at the pre-move state.
pub fn shift_main(
    x1: &AssignmentSolution,
    part: &Partition,
    mset: &BigSmallSet,
) -> Result<(AssignmentSolution, TransformTrace)> {
    check_partition(x1, part)?;
    let inst = x1.instance();
    let mut trace = TransformTrace::new(PotentialKind::BigSmall);
    let (_, item_stats) = compute_stats(x1);

    let mut eligible = Vec::new();
    for j in mset.iter() {
        if j >= inst.n_items() {
            return Err(Error::Precondition(format!(
                "balanced set names item index {j} but the instance has {}",
                inst.n_items()
            )));
        }
        if x1.is_fake(j) {
            trace.warnings.push(format!("item {} is fake and was skipped", inst.item_id(j)));
            continue;
        }
        let s = &item_stats[j];
        let still_member =
            s.mass > 0.0 && mset.mu * s.mass <= s.big_mass && s.big_mass <= (1.0 - mset.mu) * s.mass;
        if !still_member {
            trace.warnings.push(format!(
                "item {} no longer passes the balanced-big test after preprocessing \
                 (mass {}, big side {})",
                inst.item_id(j),
                s.mass,
                s.big_mass
            ));
        }
        eligible.push(j);
    }

    let takers = split_takers(x1);
    let mut records = Vec::new();
    small_to_big_records(
        x1,
        part,
        &takers,
        TransformPhase::MainSmallToBig,
        eligible.into_iter(),
        &mut records,
    )?;
    apply_records(x1, records, trace)
}

/// Per-player lower bound `m_i` on the expected increase of big-item mass
/// `b_i` over the preprocessing phase, conditioned on player `i` being red:
///
/// `m_i = Σ_{j big for i} p_ij·(x_ij/200)·[(xB_j − x_ij)/x_j + xS_j] / B_i`
///
/// Each term under-counts the two gain rules: every other big-side taker of
/// `j` donates under rule 1 when green (probability 1/2, ratio ≥ x_ij/x_j),
/// and every small-side taker donates under rule 2 when red (probability 1/2,
/// min-ratio ≥ x_ij since masses are ≤ 1).  Evaluated on the canonical input
/// solution, where big prices equal budgets.
pub fn red_big_gain_bound(sol: &AssignmentSolution) -> Vec<f64> {
    let inst = sol.instance();
    let (_, item_stats) = compute_stats(sol);
    let mut bound = vec![0.0; inst.n_players()];
    for ((i, j), v) in sol.support() {
        if sol.is_fake(j) {
            continue;
        }
        if inst.classify(i, j).expect("supported pair") != ItemClass::Big {
            continue;
        }
        let p = inst.price(i, j).expect("supported pair");
        let s = &item_stats[j];
        if s.mass <= 0.0 {
            continue;
        }
        let term = p * ((v / 200.0) * (s.big_mass - v) / s.mass + (v / 200.0) * s.small_mass);
        bound[i] += term / inst.budget(i);
    }
    bound
}
