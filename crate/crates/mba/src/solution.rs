//! Fractional solution containers shared by the LP engine, the rounding
//! stack, the transforms and the pipeline.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::{Error, Instance, Result};

/// Feasibility slack used when accepting solutions from floating-point
/// arithmetic (per-pair and per-item mass caps).
pub const MASS_TOL: f64 = 1e-9;

/// Items inserted by the pipeline to pad a player's fractional load are
/// marked `Fake`; they take part in rounding but are stripped from reported
/// allocations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemOrigin {
    Real,
    Fake,
}

/// A fractional assignment `x_ij in [0, 1]` with per-item mass at most one.
/// Only the support is stored; iteration order is (player, item) ascending,
/// which keeps every downstream computation deterministic.
#[derive(Debug, Clone)]
pub struct AssignmentSolution {
    instance: Arc<Instance>,
    x: BTreeMap<(usize, usize), f64>,
    origin: Vec<ItemOrigin>,
}

impl AssignmentSolution {
    /// Validates pair bounds, item capacity and price presence.  Entries that
    /// are zero (or negative within `MASS_TOL`) are dropped from the support.
    pub fn new(
        instance: Arc<Instance>,
        entries: impl IntoIterator<Item = ((usize, usize), f64)>,
    ) -> Result<Self> {
        let origin = vec![ItemOrigin::Real; instance.n_items()];
        Self::with_origins(instance, entries, origin)
    }

    pub fn with_origins(
        instance: Arc<Instance>,
        entries: impl IntoIterator<Item = ((usize, usize), f64)>,
        origin: Vec<ItemOrigin>,
    ) -> Result<Self> {
        if origin.len() != instance.n_items() {
            return Err(Error::Precondition("origin vector length mismatch".into()));
        }
        let mut x = BTreeMap::new();
        for ((i, j), v) in entries {
            if !v.is_finite() || v < -MASS_TOL {
                return Err(Error::Precondition(format!(
                    "x[{},{}] = {v} is negative or non-finite",
                    instance.player_id(i),
                    instance.item_id(j)
                )));
            }
            if v <= 0.0 {
                continue;
            }
            if v > 1.0 + MASS_TOL {
                return Err(Error::Precondition(format!(
                    "x[{},{}] = {v} exceeds 1",
                    instance.player_id(i),
                    instance.item_id(j)
                )));
            }
            if instance.price(i, j).is_none() {
                return Err(Error::NotAssignable {
                    player: instance.player_id(i).to_string(),
                    item: instance.item_id(j).to_string(),
                });
            }
            if x.insert((i, j), v.min(1.0)).is_some() {
                return Err(Error::Precondition(format!(
                    "duplicate entry for ({}, {})",
                    instance.player_id(i),
                    instance.item_id(j)
                )));
            }
        }
        let sol = AssignmentSolution { instance, x, origin };
        for j in 0..sol.instance.n_items() {
            let mass = sol.item_mass(j);
            if mass > 1.0 + MASS_TOL {
                return Err(Error::Precondition(format!(
                    "item {} carries mass {mass} > 1",
                    sol.instance.item_id(j)
                )));
            }
        }
        Ok(sol)
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.x.get(&(i, j)).copied().unwrap_or(0.0)
    }

    /// Support iteration, (player, item) ascending.
    pub fn support(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.x.iter().map(|(&k, &v)| (k, v))
    }

    pub fn support_len(&self) -> usize {
        self.x.len()
    }

    /// Support of one player, item ascending.
    pub fn player_support(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.x
            .range((i, 0)..(i + 1, 0))
            .map(|(&(_, j), &v)| (j, v))
    }

    /// `sum_j x_ij p_ij` — the fractional value routed to player `i`
    /// (uncapped; solutions coming out of the LP engine are normalized so
    /// this never exceeds the budget).
    pub fn player_value(&self, i: usize) -> f64 {
        self.player_support(i)
            .map(|(j, v)| v * self.instance.price(i, j).unwrap())
            .sum()
    }

    /// Budget-capped objective `sum_i min(B_i, player_value(i))`.
    pub fn objective(&self) -> f64 {
        (0..self.instance.n_players())
            .map(|i| self.player_value(i).min(self.instance.budget(i)))
            .sum()
    }

    /// Uncapped total `sum_ij x_ij p_ij`.
    pub fn total_value(&self) -> f64 {
        (0..self.instance.n_players()).map(|i| self.player_value(i)).sum()
    }

    /// Total fractional mass on item `j` across players.
    pub fn item_mass(&self, j: usize) -> f64 {
        self.instance
            .offered_by(j)
            .iter()
            .map(|&i| self.x(i, j))
            .sum()
    }

    pub fn origin(&self, j: usize) -> ItemOrigin {
        self.origin[j]
    }

    pub fn origins(&self) -> &[ItemOrigin] {
        &self.origin
    }

    pub fn is_fake(&self, j: usize) -> bool {
        self.origin[j] == ItemOrigin::Fake
    }

    /// Rebuilds with the same instance/origins and a transformed support.
    /// Used by the value-shifting transforms; revalidates all invariants.
    pub fn remap(&self, f: impl Fn(usize, usize, f64) -> f64) -> Result<Self> {
        let entries: Vec<_> = self
            .support()
            .map(|((i, j), v)| ((i, j), f(i, j, v)))
            .collect();
        Self::with_origins(self.instance.clone(), entries, self.origin.clone())
    }
}

/// One generated column of the configuration relaxation: a player and a set
/// of items, valued at `min(sum of prices, budget)`.
#[derive(Debug, Clone)]
pub struct Column {
    pub player: usize,
    /// Ascending item indices.
    pub items: Vec<usize>,
    /// `min(sum p_ij, B_i)` — fixed at generation time.
    pub weight: f64,
}

/// Solution of the configuration relaxation: non-negative weights on columns
/// with per-player mass at most one and per-item mass at most one.
#[derive(Debug, Clone)]
pub struct ConfigSolution {
    instance: Arc<Instance>,
    columns: Vec<(Column, f64)>,
}

impl ConfigSolution {
    pub fn new(instance: Arc<Instance>, columns: Vec<(Column, f64)>) -> Result<Self> {
        let mut player_mass = vec![0.0; instance.n_players()];
        let mut item_mass = vec![0.0; instance.n_items()];
        for (col, y) in &columns {
            if !y.is_finite() || *y < -MASS_TOL {
                return Err(Error::Precondition(format!("column weight {y} negative")));
            }
            let mut sum = 0.0;
            for w in col.items.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Precondition("column items not strictly ascending".into()));
                }
            }
            for &j in &col.items {
                match instance.price(col.player, j) {
                    Some(p) => sum += p,
                    None => {
                        return Err(Error::NotAssignable {
                            player: instance.player_id(col.player).to_string(),
                            item: instance.item_id(j).to_string(),
                        })
                    }
                }
                item_mass[j] += y;
            }
            let expect = sum.min(instance.budget(col.player));
            if (col.weight - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                return Err(Error::Precondition(format!(
                    "column weight {} disagrees with min(price sum, budget) = {expect}",
                    col.weight
                )));
            }
            player_mass[col.player] += y;
        }
        for (i, m) in player_mass.iter().enumerate() {
            if *m > 1.0 + MASS_TOL {
                return Err(Error::Precondition(format!(
                    "player {} column mass {m} > 1",
                    instance.player_id(i)
                )));
            }
        }
        for (j, m) in item_mass.iter().enumerate() {
            if *m > 1.0 + MASS_TOL {
                return Err(Error::Precondition(format!(
                    "item {} column mass {m} > 1",
                    instance.item_id(j)
                )));
            }
        }
        Ok(ConfigSolution { instance, columns })
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn columns(&self) -> &[(Column, f64)] {
        &self.columns
    }

    pub fn objective(&self) -> f64 {
        self.columns.iter().map(|(c, y)| c.weight * y).sum()
    }

    /// Marginal mass `x_ij = sum of weights of player-i columns containing j`.
    pub fn marginal(&self, i: usize, j: usize) -> f64 {
        self.columns
            .iter()
            .filter(|(c, _)| c.player == i && c.items.binary_search(&j).is_ok())
            .map(|(_, y)| *y)
            .sum()
    }
}

/// Random instance plus a fractional solution in which every budget is
/// exactly saturated (`Σ_j x_ij·p_ij = B_i`).
///
/// Shared items carry a deliberate price spread — one taker prices each of
/// them well above two bulk takers — so the price-shift pass always finds
/// work, while the bulk side stays heavy enough that the post-shift budget
/// drift provably stays within μ/10 for any μ ∈ (0, 1/2).  Each player also
/// holds a private filler item (mass 1, price = remaining budget) that tops
/// its value up to exactly `B_i`.  Needs at least three players.
pub fn gen_saturated_solution(
    seed: u64,
    n_players: usize,
    n_shared: usize,
) -> (Arc<Instance>, AssignmentSolution) {
    use crate::instance::{InstanceSpec, PlayerSpec, PriceSpec};
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand::SeedableRng;

    assert!(n_players >= 3, "need at least three players for a spread item");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let budgets: Vec<f64> = (0..n_players).map(|_| rng.gen_range(0.8..1.6)).collect();
    let mut items: Vec<String> = Vec::new();
    let mut prices: Vec<PriceSpec> = Vec::new();
    let mut entries: Vec<((usize, usize), f64)> = Vec::new();
    let mut shared_value = vec![0.0_f64; n_players];
    let mut memberships = vec![0u8; n_players];

    for s in 0..n_shared {
        // Keep each player's shared value below its budget: at most two
        // shared items per player, each worth at most 0.35.
        let eligible: Vec<usize> = (0..n_players).filter(|&i| memberships[i] < 2).collect();
        if eligible.len() < 3 {
            break;
        }
        let trio: Vec<usize> = eligible.choose_multiple(&mut rng, 3).copied().collect();
        let item = items.len();
        items.push(format!("s{s}"));
        let p_hi = rng.gen_range(0.8..1.0);
        let p_lo = p_hi * rng.gen_range(0.45..0.65);
        let masses = [rng.gen_range(0.25..0.35), rng.gen_range(0.2..0.3), rng.gen_range(0.2..0.3)];
        for (slot, &i) in trio.iter().enumerate() {
            let p = if slot == 0 { p_hi } else { p_lo };
            prices.push(PriceSpec {
                player: format!("p{i}"),
                item: format!("s{s}"),
                p,
            });
            entries.push(((i, item), masses[slot]));
            shared_value[i] += masses[slot] * p;
            memberships[i] += 1;
        }
    }

    for i in 0..n_players {
        let deficit = budgets[i] - shared_value[i];
        debug_assert!(deficit > 0.0 && deficit <= budgets[i]);
        let item = items.len();
        items.push(format!("f{i}"));
        prices.push(PriceSpec { player: format!("p{i}"), item: format!("f{i}"), p: deficit });
        entries.push(((i, item), 1.0));
    }

    let spec = InstanceSpec {
        schema_version: crate::SCHEMA_VERSION,
        beta: 1.0 / 3.0,
        players: (0..n_players)
            .map(|i| PlayerSpec { id: format!("p{i}"), budget: budgets[i] })
            .collect(),
        items,
        prices,
    };
    let inst = Instance::from_spec(&spec).expect("generated spec is valid").into_arc();
    let sol = AssignmentSolution::new(inst.clone(), entries).expect("generated solution is valid");
    (inst, sol)
}
