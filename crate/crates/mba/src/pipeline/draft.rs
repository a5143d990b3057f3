//! Mutable working copy of a fractional solution for the case-analysis steps.
//!
//! The validated [`Instance`]/[`AssignmentSolution`] pair is immutable and
//! index-based, which is the wrong shape for a pass that removes players,
//! rewrites prices and splices in bookkeeping items.  A [`Draft`] is a
//! string-keyed snapshot of the same data: ids stay stable across removals,
//! and [`Draft::build`] routes everything back through the ordinary
//! constructors so every mutation is re-validated.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::instance::{Instance, InstanceSpec, PlayerSpec, PriceSpec};
use crate::solution::{AssignmentSolution, ItemOrigin};

#[derive(Debug, Clone)]
pub(crate) struct Draft {
    pub beta: f64,
    /// (id, budget), declaration order preserved.
    pub players: Vec<(String, f64)>,
    /// (id, origin), declaration order preserved.
    pub items: Vec<(String, ItemOrigin)>,
    /// (player id, item id) -> price, for every assignable pair.
    pub prices: BTreeMap<(String, String), f64>,
    /// (player id, item id) -> fractional assignment, support only.
    pub x: BTreeMap<(String, String), f64>,
}

impl Draft {
    pub fn from_solution(sol: &AssignmentSolution) -> Self {
        let inst = sol.instance();
        let players = (0..inst.n_players())
            .map(|i| (inst.player_id(i).to_string(), inst.budget(i)))
            .collect();
        let items = (0..inst.n_items())
            .map(|j| (inst.item_id(j).to_string(), sol.origin(j)))
            .collect();
        let mut prices = BTreeMap::new();
        for i in 0..inst.n_players() {
            for (j, p) in inst.assignable(i) {
                prices.insert(
                    (inst.player_id(i).to_string(), inst.item_id(j).to_string()),
                    p,
                );
            }
        }
        let mut x = BTreeMap::new();
        for ((i, j), v) in sol.support() {
            x.insert(
                (inst.player_id(i).to_string(), inst.item_id(j).to_string()),
                v,
            );
        }
        Draft {
            beta: inst.beta(),
            players,
            items,
            prices,
            x,
        }
    }

    /// Re-validates the draft into a solution.  Errors bubble up from the
    /// instance and solution constructors with their usual messages.
    pub fn build(&self) -> Result<AssignmentSolution> {
        let spec = InstanceSpec {
            schema_version: crate::SCHEMA_VERSION,
            beta: self.beta,
            players: self
                .players
                .iter()
                .map(|(id, budget)| PlayerSpec {
                    id: id.clone(),
                    budget: *budget,
                })
                .collect(),
            items: self.items.iter().map(|(id, _)| id.clone()).collect(),
            prices: self
                .prices
                .iter()
                .map(|((player, item), p)| PriceSpec {
                    player: player.clone(),
                    item: item.clone(),
                    p: *p,
                })
                .collect(),
        };
        let inst = Instance::from_spec(&spec)?.into_arc();
        let origins = self.items.iter().map(|(_, o)| *o).collect();
        let entries: Vec<((usize, usize), f64)> = self
            .x
            .iter()
            .map(|((player, item), v)| {
                (
                    (
                        inst.player_index(player).expect("draft player exists"),
                        inst.item_index(item).expect("draft item exists"),
                    ),
                    *v,
                )
            })
            .collect();
        AssignmentSolution::with_origins(inst, entries, origins)
    }

    pub fn budget(&self, pid: &str) -> f64 {
        self.players
            .iter()
            .find(|(id, _)| id == pid)
            .map(|(_, b)| *b)
            .expect("draft player exists")
    }

    pub fn set_budget(&mut self, pid: &str, budget: f64) {
        let slot = self
            .players
            .iter_mut()
            .find(|(id, _)| id == pid)
            .expect("draft player exists");
        slot.1 = budget;
    }

    pub fn player_ids(&self) -> Vec<String> {
        self.players.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn is_fake(&self, iid: &str) -> bool {
        self.items
            .iter()
            .any(|(id, o)| id == iid && *o == ItemOrigin::Fake)
    }

    /// Same comparison as the instance's classifier.
    pub fn is_big(&self, pid: &str, iid: &str) -> bool {
        let p = self.prices[&(pid.to_string(), iid.to_string())];
        p >= (1.0 - self.beta) * self.budget(pid)
    }

    pub fn player_value(&self, pid: &str) -> f64 {
        self.x
            .iter()
            .filter(|((pl, _), _)| pl == pid)
            .map(|(key, v)| v * self.prices[key])
            .sum()
    }

    pub fn big_mass(&self, pid: &str) -> f64 {
        self.x
            .iter()
            .filter(|((pl, it), _)| pl == pid && self.is_big(pl, it))
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn small_value(&self, pid: &str) -> f64 {
        self.x
            .iter()
            .filter(|((pl, it), _)| pl == pid && !self.is_big(pl, it))
            .map(|(key, v)| v * self.prices[key])
            .sum()
    }

    /// Drops players failing the predicate along with their prices and
    /// assignments.
    pub fn retain_players(&mut self, keep: impl Fn(&str) -> bool) {
        self.players.retain(|(id, _)| keep(id));
        self.prices.retain(|(pl, _), _| keep(pl));
        self.x.retain(|(pl, _), _| keep(pl));
    }

    /// Drops items failing the predicate along with their prices and
    /// assignments.
    pub fn retain_items(&mut self, keep: impl Fn(&str) -> bool) {
        self.items.retain(|(id, _)| keep(id));
        self.prices.retain(|(_, it), _| keep(it));
        self.x.retain(|(_, it), _| keep(it));
    }

    /// Drops items no player prices any more (after player removals).
    pub fn drop_orphan_items(&mut self) {
        let priced: BTreeSet<String> =
            self.prices.keys().map(|(_, it)| it.clone()).collect();
        self.items.retain(|(id, _)| priced.contains(id));
        self.x.retain(|(_, it), _| priced.contains(it));
    }

    pub fn set_price(&mut self, pid: &str, iid: &str, p: f64) {
        self.prices.insert((pid.to_string(), iid.to_string()), p);
    }

    pub fn zero_x(&mut self, pid: &str, iid: &str) {
        self.x.remove(&(pid.to_string(), iid.to_string()));
    }

    /// Multiplies every assignment of `iid` by `factor`.
    pub fn scale_item(&mut self, iid: &str, factor: f64) {
        for ((_, it), v) in self.x.iter_mut() {
            if it == iid {
                *v *= factor;
            }
        }
    }

    /// Multiplies `pid`'s big-side (or small-side) assignments by `factor`.
    pub fn scale_player_side(&mut self, pid: &str, big: bool, factor: f64) {
        let keys: Vec<(String, String)> = self
            .x
            .keys()
            .filter(|(pl, it)| pl == pid && self.is_big(pl, it) == big)
            .cloned()
            .collect();
        for key in keys {
            *self.x.get_mut(&key).unwrap() *= factor;
        }
    }

    /// Appends a bookkeeping item priced for a single player, with the given
    /// fractional assignment.
    pub fn add_fake(&mut self, iid: &str, pid: &str, price: f64, mass: f64) {
        debug_assert!(!self.items.iter().any(|(id, _)| id == iid));
        self.items.push((iid.to_string(), ItemOrigin::Fake));
        self.prices
            .insert((pid.to_string(), iid.to_string()), price);
        self.x.insert((pid.to_string(), iid.to_string()), mass);
    }

    /// Removes the bookkeeping items priced exclusively for `pid`.  Returns
    /// the ids removed (their assignments and prices go with them).
    pub fn remove_fakes_of(&mut self, pid: &str) -> Vec<String> {
        let mut drop = Vec::new();
        for (iid, origin) in &self.items {
            if *origin != ItemOrigin::Fake {
                continue;
            }
            let mut takers = self.prices.keys().filter(|(_, it)| it == iid);
            if takers.all(|(pl, _)| pl == pid) {
                drop.push(iid.clone());
            }
        }
        if !drop.is_empty() {
            self.retain_items(|iid| !drop.iter().any(|d| d == iid));
        }
        drop
    }
}
