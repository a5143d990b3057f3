//! Solution-modification passes that raise the rounding guarantee on
//! structured fractional solutions.
//!
//! Two independent families live here:
//!
//! * the **price-shift pass** ([`apply_price_shift`]): on a solution where
//!   every budget is saturated, move a little mass of each unequally-priced
//!   item from its low-priced takers toward its high-priced takers, which
//!   provably raises the saturation potential `Σ_i B_i·α_i(1 − α_i/4)`;
//! * the **big-small pass** ([`shift_preprocess`] / [`shift_main`]): on a
//!   canonical solution, split players into red and green at random, then move
//!   big-item mass toward red players and small-item mass away from them,
//!   which raises the mixing potential `Σ_i b_i·B_i + (1 − b_i)·S_i` in
//!   expectation.
//!
//! Every elementary move is logged in a [`TransformTrace`] so the claimed
//! potential gains can be audited record by record.

mod nubp;
mod nup;

pub use nubp::{
    apply_price_shift, find_unequally_priced, saturation_potential, PriceSide, UnequalItem,
    UnequalPriceReport,
};
pub use nup::{
    big_small_potential, find_big_small, red_big_gain_bound, shift_main, shift_preprocess,
    BigSmallSet,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Absolute tolerance on `α_i = 1` for the saturation precondition.
pub const SATURATION_TOL: f64 = 1e-6;

pub(crate) fn check_mu(mu: f64) -> crate::Result<()> {
    if !(mu > 0.0 && mu < 0.5) {
        return Err(crate::Error::OutOfRange { what: "mu", value: mu, range: "(0, 0.5)" });
    }
    Ok(())
}

/// Which potential function a trace's gain columns refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PotentialKind {
    /// `Σ_i B_i·α_i·(1 − α_i/4)` — the per-player rounding guarantee as a
    /// function of the saturation ratio `α_i`.
    Saturation,
    /// `Σ_i b_i·B_i + (1 − b_i)·S_i` — the guarantee as a function of big-item
    /// mass `b_i` and small-item value `S_i`.
    BigSmall,
}

impl PotentialKind {
    pub fn label(self) -> &'static str {
        match self {
            PotentialKind::Saturation => "saturation-potential",
            PotentialKind::BigSmall => "big-small-potential",
        }
    }
}

/// Which rule produced a trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransformPhase {
    /// Price shift on an item whose high-priced side fired.
    HighPriceShift,
    /// Price shift on an item whose low-priced side fired (mirrored rule).
    LowPriceShift,
    /// Preprocessing: big item moved from a green player to a red player.
    BigToBig,
    /// Preprocessing: item moved from a red player holding it small to a red
    /// player holding it big.
    SmallToBig,
    /// Main phase: same small-to-big move, restricted to balanced items.
    MainSmallToBig,
}

impl TransformPhase {
    pub fn label(self) -> &'static str {
        match self {
            TransformPhase::HighPriceShift => "high-price-shift",
            TransformPhase::LowPriceShift => "low-price-shift",
            TransformPhase::BigToBig => "big-to-big",
            TransformPhase::SmallToBig => "small-to-big",
            TransformPhase::MainSmallToBig => "main-small-to-big",
        }
    }
}

/// One elementary mass move: `delta` of item `item` flows from player `from`
/// to player `to`.
///
/// For price-shift records `delta` is the bilateral share of the batch update
/// attributed to this donor/receiver pair (pair shares sum back to each
/// player's exact mass change) and `gain` is the closed-form lower bound on
/// the saturation-potential increase evaluated at that share.  For big-small
/// records `drop`/`rise` are the exact mixing-potential changes of the donor
/// and receiver half-steps, evaluated against a running state in record order.
#[derive(Debug, Clone, Serialize)]
pub struct TransformRecord {
    pub phase: TransformPhase,
    pub item: usize,
    pub from: usize,
    pub to: usize,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rise: Option<f64>,
}

/// Audit log of one transform pass.
#[derive(Debug, Clone, Serialize)]
pub struct TransformTrace {
    /// Potential functional the gain columns are measured in.
    pub functional: PotentialKind,
    /// Potential of the input solution.
    pub initial_potential: f64,
    /// Potential of the output solution.
    pub final_potential: f64,
    pub records: Vec<TransformRecord>,
    /// Non-fatal anomalies (e.g. stale balanced-set membership).
    pub warnings: Vec<String>,
}

impl TransformTrace {
    pub(crate) fn new(functional: PotentialKind) -> Self {
        TransformTrace {
            functional,
            initial_potential: 0.0,
            final_potential: 0.0,
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sum of the closed-form price-shift gain bounds.
    pub fn gain_sum(&self) -> f64 {
        self.records.iter().filter_map(|r| r.gain).sum()
    }

    /// Sum of the bookkept potential deltas (`drop + rise` over all records).
    pub fn shift_sum(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.drop.unwrap_or(0.0) + r.rise.unwrap_or(0.0))
            .sum()
    }

    /// Net mass change of the pair `(player, item)` implied by the records.
    /// Summed over all players this is zero per item (records are bilateral),
    /// and per player it must reproduce `x′_ij − x_ij` exactly.
    pub fn net_pair_shift(&self, player: usize, item: usize) -> f64 {
        self.records
            .iter()
            .filter(|r| r.item == item)
            .map(|r| {
                let inflow = if r.to == player { r.delta } else { 0.0 };
                let outflow = if r.from == player { r.delta } else { 0.0 };
                inflow - outflow
            })
            .sum()
    }
}

/// Player color for the big-small pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Color {
    Red,
    Green,
}

/// A red/green coloring of the players.
#[derive(Debug, Clone)]
pub struct Partition {
    colors: Vec<Color>,
    seed: Option<u64>,
}

impl Partition {
    pub fn from_colors(colors: Vec<Color>) -> Self {
        Partition { colors, seed: None }
    }

    pub fn color(&self, i: usize) -> Color {
        self.colors[i]
    }

    pub fn is_red(&self, i: usize) -> bool {
        self.colors[i] == Color::Red
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn reds(&self) -> impl Iterator<Item = usize> + '_ {
        self.colors
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Color::Red)
            .map(|(i, _)| i)
    }

    pub fn greens(&self) -> impl Iterator<Item = usize> + '_ {
        self.colors
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Color::Green)
            .map(|(i, _)| i)
    }
}

/// Colors each of `n_players` players red or green independently with
/// probability 1/2, deterministically per seed.
pub fn sample_partition(n_players: usize, seed: u64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors = (0..n_players)
        .map(|_| if rng.gen::<bool>() { Color::Red } else { Color::Green })
        .collect();
    Partition { colors, seed: Some(seed) }
}
