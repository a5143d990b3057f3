//! Instance data model: players with budgets, items, sparse per-player
//! prices, and the big/small item split at threshold `(1 - beta) * budget`.
//!
//! Instances are immutable once built.  The JSON schema is strict (unknown
//! keys are rejected) so experiment files cannot silently drift:
//!
//! ```json
//! {
//!   "beta": 0.3333333333333333,
//!   "players": [{"id": "1", "budget": 1.0}, {"id": "2", "budget": 1.0}],
//!   "items": ["h", "s1", "s2"],
//!   "prices": [
//!     {"player": "1", "item": "h", "p": 1.0},
//!     {"player": "2", "item": "h", "p": 1.0},
//!     {"player": "1", "item": "s1", "p": 0.5},
//!     {"player": "2", "item": "s2", "p": 0.5}
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An item is big for a player when its price reaches `(1 - beta)` of the
/// budget; everything else is small.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemClass {
    Big,
    Small,
}

/// Raw JSON form of an instance.  `deny_unknown_fields` keeps the schema
/// closed; all referential checks happen in [`Instance::from_spec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    /// Stamped on emitted files; optional on input.
    #[serde(default = "schema_version_default")]
    pub schema_version: u32,
    pub beta: f64,
    pub players: Vec<PlayerSpec>,
    pub items: Vec<String>,
    pub prices: Vec<PriceSpec>,
}

fn schema_version_default() -> u32 {
    crate::SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerSpec {
    pub id: String,
    pub budget: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSpec {
    pub player: String,
    pub item: String,
    pub p: f64,
}

impl InstanceSpec {
    /// Every rule the data must satisfy, reported together so a bad file can
    /// be fixed in one pass.  Empty result means [`Instance::from_spec`] will
    /// succeed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.beta > 0.0 && self.beta <= 1.0 / 3.0) {
            out.push(format!("beta must lie in (0, 1/3], got {}", self.beta));
        }
        if self.players.is_empty() {
            out.push("at least one player is required".into());
        }
        if self.items.is_empty() {
            out.push("at least one item is required".into());
        }
        let mut player_ids = BTreeSet::new();
        for p in &self.players {
            if !player_ids.insert(p.id.as_str()) {
                out.push(format!("duplicate player id {:?}", p.id));
            }
            if !(p.budget > 0.0 && p.budget.is_finite()) {
                out.push(format!(
                    "budget of player {:?} must be positive and finite, got {}",
                    p.id, p.budget
                ));
            }
        }
        let mut item_ids = BTreeSet::new();
        for it in &self.items {
            if !item_ids.insert(it.as_str()) {
                out.push(format!("duplicate item id {:?}", it));
            }
        }
        let mut seen_pairs = BTreeSet::new();
        for pr in &self.prices {
            if !player_ids.contains(pr.player.as_str()) {
                out.push(format!("price references undeclared player {:?}", pr.player));
            }
            if !item_ids.contains(pr.item.as_str()) {
                out.push(format!("price references undeclared item {:?}", pr.item));
            }
            if !(pr.p >= 0.0 && pr.p.is_finite()) {
                out.push(format!(
                    "price of ({:?}, {:?}) must be non-negative and finite, got {}",
                    pr.player, pr.item, pr.p
                ));
            }
            if !seen_pairs.insert((pr.player.as_str(), pr.item.as_str())) {
                out.push(format!("duplicate price entry for ({:?}, {:?})", pr.player, pr.item));
            }
        }
        out
    }
}

/// Validated, index-based instance.  Player and item ids are opaque strings;
/// internally everything runs on their declaration-order indices, which is
/// also the deterministic iteration order used throughout the crate.
#[derive(Debug, Clone)]
pub struct Instance {
    beta: f64,
    player_ids: Vec<String>,
    budgets: Vec<f64>,
    item_ids: Vec<String>,
    /// Per player: item index -> price, sparse.
    prices: Vec<BTreeMap<usize, f64>>,
    /// Per item: players that price it, ascending.
    offered_by: Vec<Vec<usize>>,
}

impl Instance {
    pub fn from_spec(spec: &InstanceSpec) -> Result<Self> {
        let violations = spec.violations();
        if !violations.is_empty() {
            return Err(Error::InvalidInstance(violations));
        }
        let player_index: BTreeMap<&str, usize> = spec
            .players
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.as_str(), i))
            .collect();
        let item_index: BTreeMap<&str, usize> = spec
            .items
            .iter()
            .enumerate()
            .map(|(j, id)| (id.as_str(), j))
            .collect();
        let mut prices = vec![BTreeMap::new(); spec.players.len()];
        let mut offered_by = vec![Vec::new(); spec.items.len()];
        for pr in &spec.prices {
            let i = player_index[pr.player.as_str()];
            let j = item_index[pr.item.as_str()];
            prices[i].insert(j, pr.p);
            offered_by[j].push(i);
        }
        for list in &mut offered_by {
            list.sort_unstable();
        }
        Ok(Instance {
            beta: spec.beta,
            player_ids: spec.players.iter().map(|p| p.id.clone()).collect(),
            budgets: spec.players.iter().map(|p| p.budget).collect(),
            item_ids: spec.items.clone(),
            prices,
            offered_by,
        })
    }

    /// Convenience constructor used all over the tests and examples.
    pub fn build(
        beta: f64,
        players: &[(&str, f64)],
        items: &[&str],
        prices: &[(&str, &str, f64)],
    ) -> Result<Self> {
        Self::from_spec(&InstanceSpec {
            schema_version: crate::SCHEMA_VERSION,
            beta,
            players: players
                .iter()
                .map(|(id, b)| PlayerSpec { id: (*id).into(), budget: *b })
                .collect(),
            items: items.iter().map(|s| (*s).into()).collect(),
            prices: prices
                .iter()
                .map(|(p, j, v)| PriceSpec { player: (*p).into(), item: (*j).into(), p: *v })
                .collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: InstanceSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn to_spec(&self) -> InstanceSpec {
        InstanceSpec {
            schema_version: crate::SCHEMA_VERSION,
            beta: self.beta,
            players: self
                .player_ids
                .iter()
                .zip(&self.budgets)
                .map(|(id, b)| PlayerSpec { id: id.clone(), budget: *b })
                .collect(),
            items: self.item_ids.clone(),
            prices: self
                .prices
                .iter()
                .enumerate()
                .flat_map(|(i, row)| {
                    row.iter().map(move |(j, p)| (i, *j, *p))
                })
                .map(|(i, j, p)| PriceSpec {
                    player: self.player_ids[i].clone(),
                    item: self.item_ids[j].clone(),
                    p,
                })
                .collect(),
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_players(&self) -> usize {
        self.player_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn player_id(&self, i: usize) -> &str {
        &self.player_ids[i]
    }

    pub fn item_id(&self, j: usize) -> &str {
        &self.item_ids[j]
    }

    pub fn player_index(&self, id: &str) -> Option<usize> {
        self.player_ids.iter().position(|p| p == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|p| p == id)
    }

    pub fn budget(&self, i: usize) -> f64 {
        self.budgets[i]
    }

    pub fn price(&self, i: usize, j: usize) -> Option<f64> {
        self.prices[i].get(&j).copied()
    }

    /// Items priced by player `i`, in item-index order.
    pub fn assignable(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.prices[i].iter().map(|(j, p)| (*j, *p))
    }

    /// Players that price item `j`, ascending.
    pub fn offered_by(&self, j: usize) -> &[usize] {
        &self.offered_by[j]
    }

    /// Big/small split: big iff `p_ij >= (1 - beta) * B_i` (exact comparison,
    /// no tolerance).
    pub fn classify(&self, i: usize, j: usize) -> Result<ItemClass> {
        let p = self.price(i, j).ok_or_else(|| Error::NotAssignable {
            player: self.player_ids[i].clone(),
            item: self.item_ids[j].clone(),
        })?;
        Ok(if p >= (1.0 - self.beta) * self.budgets[i] {
            ItemClass::Big
        } else {
            ItemClass::Small
        })
    }

    /// Derived instance with new budgets (same ids, items, prices, beta).
    /// Budgets must stay positive; callers drop zero-value players first.
    pub fn with_budgets(&self, budgets: Vec<f64>) -> Result<Self> {
        if budgets.len() != self.n_players() {
            return Err(Error::Precondition("budget vector length mismatch".into()));
        }
        if let Some(i) = budgets.iter().position(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidInstance(vec![format!(
                "budget of player {:?} must be positive and finite, got {}",
                self.player_ids[i], budgets[i]
            )]));
        }
        Ok(Instance { budgets, ..self.clone() })
    }

    /// Derived instance with one price overwritten (pair must exist).
    pub fn with_price(&self, i: usize, j: usize, p: f64) -> Result<Self> {
        if self.price(i, j).is_none() {
            return Err(Error::NotAssignable {
                player: self.player_ids[i].clone(),
                item: self.item_ids[j].clone(),
            });
        }
        let mut next = self.clone();
        next.prices[i].insert(j, p);
        Ok(next)
    }

    /// Derived instance with an extra item priced for a single player.
    /// Returns the new item's index alongside the instance.
    pub fn with_extra_item(&self, id: String, player: usize, price: f64) -> Result<(Self, usize)> {
        if self.item_ids.contains(&id) {
            return Err(Error::InvalidInstance(vec![format!("duplicate item id {:?}", id)]));
        }
        let mut next = self.clone();
        let j = next.item_ids.len();
        next.item_ids.push(id);
        next.offered_by.push(vec![player]);
        next.prices[player].insert(j, price);
        Ok((next, j))
    }

    pub fn into_arc(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// Integral outcome: each item goes to at most one player; a player pays the
/// sum of received prices capped at their budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// item index -> player index, only for assigned items.
    assignment: BTreeMap<usize, usize>,
    value: f64,
}

impl Allocation {
    /// Builds from explicit pairs; every pair must carry a declared price.
    pub fn new(inst: &Instance, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (j, i) in pairs {
            if inst.price(i, j).is_none() {
                return Err(Error::NotAssignable {
                    player: inst.player_id(i).to_string(),
                    item: inst.item_id(j).to_string(),
                });
            }
            if assignment.insert(j, i).is_some() {
                return Err(Error::Precondition(format!(
                    "item {} assigned twice",
                    inst.item_id(j)
                )));
            }
        }
        let value = Self::value_of(inst, &assignment);
        Ok(Allocation { assignment, value })
    }

    fn value_of(inst: &Instance, assignment: &BTreeMap<usize, usize>) -> f64 {
        let mut received = vec![0.0; inst.n_players()];
        for (&j, &i) in assignment {
            received[i] += inst.price(i, j).expect("checked at construction");
        }
        received
            .iter()
            .zip(0..)
            .map(|(r, i)| r.min(inst.budget(i)))
            .sum()
    }

    pub fn assignment(&self) -> &BTreeMap<usize, usize> {
        &self.assignment
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// The canonical integrality-gap witness for the assignment relaxation: two
/// players with unit budgets, one shared unit-priced item and one private
/// half-priced item each.  Fractionally both budgets fill (LP value 2);
/// integrally the shared item helps only one player (optimum 3/2).
pub fn gen_gap_instance() -> Instance {
    Instance::build(
        1.0 / 3.0,
        &[("1", 1.0), ("2", 1.0)],
        &["h", "s1", "s2"],
        &[
            ("1", "h", 1.0),
            ("2", "h", 1.0),
            ("1", "s1", 0.5),
            ("2", "s2", 0.5),
        ],
    )
    .expect("gap instance is valid")
}

/// Price structure for the random generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceModel {
    /// Every item has one price shared by all players that can take it.
    UniformPrices,
    /// Prices drawn independently per (player, item) pair.
    General,
}

/// Seed-deterministic random instance.  Budgets in [0.5, 2.0), prices scaled
/// so saturated and unsaturated players both occur.
pub fn gen_random_instance(
    seed: u64,
    n_players: usize,
    n_items: usize,
    model: PriceModel,
) -> Instance {
    assert!(n_players > 0 && n_items > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let players: Vec<(String, f64)> = (0..n_players)
        .map(|i| (format!("p{i}"), 0.5 + 1.5 * rng.gen::<f64>()))
        .collect();
    let items: Vec<String> = (0..n_items).map(|j| format!("j{j}")).collect();
    let mut prices = Vec::new();
    for j in 0..n_items {
        // Ensure every item is offered to at least one player.
        let forced = rng.gen_range(0..n_players);
        let shared_price = 0.1 + 0.9 * rng.gen::<f64>();
        for i in 0..n_players {
            if i != forced && rng.gen::<f64>() > 0.6 {
                continue;
            }
            let p = match model {
                PriceModel::UniformPrices => shared_price,
                PriceModel::General => (0.1 + 0.9 * rng.gen::<f64>()) * players[i].1.min(1.3),
            };
            prices.push((players[i].0.clone(), items[j].clone(), p));
        }
    }
    let spec = InstanceSpec {
        schema_version: crate::SCHEMA_VERSION,
        beta: 1.0 / 3.0,
        players: players
            .into_iter()
            .map(|(id, budget)| PlayerSpec { id, budget })
            .collect(),
        items,
        prices: prices
            .into_iter()
            .map(|(player, item, p)| PriceSpec { player, item, p })
            .collect(),
    };
    Instance::from_spec(&spec).expect("generated instance is valid")
}

/// Exhaustive integral optimum.  Enumerates every assignment of items to
/// (an offering player | unassigned); errors out instead of grinding when the
/// search space exceeds ~20M combinations.
pub fn brute_force_optimum(inst: &Instance) -> Result<Allocation> {
    let mut combos: f64 = 1.0;
    for j in 0..inst.n_items() {
        combos *= (inst.offered_by(j).len() + 1) as f64;
        if combos > 2e7 {
            return Err(Error::TooLarge(format!(
                "assignment space beyond 2e7 combinations at item {}",
                inst.item_id(j)
            )));
        }
    }
    let n = inst.n_items();
    let mut choice = vec![0usize; n]; // 0 = unassigned, k>0 = offered_by[j][k-1]
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut received = vec![0.0; inst.n_players()];
        for (j, &c) in choice.iter().enumerate() {
            if c > 0 {
                let i = inst.offered_by(j)[c - 1];
                received[i] += inst.price(i, j).unwrap();
            }
        }
        let value: f64 = received
            .iter()
            .zip(0..)
            .map(|(r, i)| r.min(inst.budget(i)))
            .sum();
        let better = match &best {
            None => true,
            Some((v, _)) => value > *v + 1e-12,
        };
        if better {
            best = Some((value, choice.clone()));
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == n {
                let (_, ch) = best.unwrap();
                let pairs = ch
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(j, &c)| (j, inst.offered_by(j)[c - 1]));
                return Allocation::new(inst, pairs);
            }
            choice[pos] += 1;
            if choice[pos] <= inst.offered_by(pos).len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}
