//! Pluggable terminal rounding.
//!
//! The case analysis itself owns only the mid-pipeline rounding decisions;
//! the final conversion from a fractional solution to an allocation is a
//! slot.  The bundled implementation decomposes the bucket graph into a
//! distribution over matchings and returns the best support matching — a
//! deterministic derandomization of the saturated rounding scheme, so its
//! value is at least the exact expectation and the certified factor is 3/4.
//! A stronger terminal constant needs a negatively-correlated rounder, which
//! this crate does not bundle; implement the trait to plug one in.

use crate::error::Result;
use crate::instance::Allocation;
use crate::rounding::{
    build_bucket_graph, decompose_matchings, exact_expected_value, ExpectedValue,
};
use crate::solution::AssignmentSolution;

/// What a terminal rounder hands back.
#[derive(Debug)]
pub struct RoundOutcome {
    /// Integral allocation over the solution's *real* items only.
    pub allocation: Allocation,
    /// Exact expectation of the underlying randomized scheme.
    pub expected: ExpectedValue,
    /// Number of matchings in the support of the scheme.
    pub support: usize,
    /// Index of the matching the allocation came from.
    pub chosen: usize,
    /// Bookkeeping-item assignments dropped from the chosen matching.
    pub stripped: usize,
}

/// Converts a fractional solution into an integral allocation with a stated
/// multiplicative guarantee.
pub trait TerminalRounder {
    fn name(&self) -> &'static str;
    /// Certified fraction of the fractional value the outcome attains.
    fn guarantee(&self) -> f64;
    fn round(&self, sol: &AssignmentSolution, seed: u64) -> Result<RoundOutcome>;
}

/// Decomposes the solution and picks the best matching in the support by
/// budget-capped real value.  Deterministic: the seed is ignored.
pub fn round_best_of_support(sol: &AssignmentSolution) -> Result<RoundOutcome> {
    let inst = sol.instance();
    let graph = build_bucket_graph(sol);
    let dist = decompose_matchings(&graph)?;
    let expected = exact_expected_value(&dist);

    let mut best: Option<(usize, f64)> = None;
    for (idx, (matching, _)) in dist.entries().enumerate() {
        let mut received = vec![0.0f64; inst.n_players()];
        for &(b, j) in matching {
            if !sol.is_fake(j) {
                let i = dist.player_of_bucket(b);
                received[i] += inst.price(i, j).expect("matched pair is priced");
            }
        }
        let value: f64 = received
            .iter()
            .enumerate()
            .map(|(i, r)| r.min(inst.budget(i)))
            .sum();
        let better = match best {
            None => true,
            Some((_, v)) => value > v,
        };
        if better {
            best = Some((idx, value));
        }
    }

    let (chosen, _) = best.unwrap_or((0, 0.0));
    let mut pairs = Vec::new();
    let mut stripped = 0usize;
    if let Some((matching, _)) = dist.entries().nth(chosen) {
        for &(b, j) in matching {
            if sol.is_fake(j) {
                stripped += 1;
            } else {
                pairs.push((j, dist.player_of_bucket(b)));
            }
        }
    }
    let allocation = Allocation::new(inst, pairs)?;
    Ok(RoundOutcome {
        allocation,
        expected,
        support: dist.support_len(),
        chosen,
        stripped,
    })
}

/// The bundled slot: best support matching, certifying the 3/4 factor.
#[derive(Debug, Default, Clone, Copy)]
pub struct BestOfSupport;

impl TerminalRounder for BestOfSupport {
    fn name(&self) -> &'static str {
        "best-of-support"
    }

    fn guarantee(&self) -> f64 {
        0.75
    }

    fn round(&self, sol: &AssignmentSolution, _seed: u64) -> Result<RoundOutcome> {
        round_best_of_support(sol)
    }
}
