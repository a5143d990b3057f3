//! Decomposes a fractional solution into a distribution over bucket-item
//! matchings and demonstrates its two headline properties:
//!
//!  * marginal preservation — for every pair, the probability mass on
//!    (player, item) equals the fractional x exactly;
//!  * exact expectation — the expected capped value is computed by support
//!    enumeration, and empirical sampling converges to it.
//!
//! Run with `cargo run --example round_marginals`.

use mba::instance::{gen_random_instance, PriceModel};
use mba::lp::solve_assignment_lp;
use mba::rounding::{
    build_bucket_graph, decompose_matchings, exact_expected_value, sample_allocation,
};

fn main() {
    let inst = gen_random_instance(7, 4, 8, PriceModel::UniformPrices).into_arc();
    let sol = solve_assignment_lp(&inst).expect("relaxation solves");
    println!("relaxation objective {:.6}, {} supported pairs", sol.objective(), sol.support_len());

    let graph = build_bucket_graph(&sol);
    let dist = decompose_matchings(&graph).expect("decomposes");
    println!("distribution support: {} matchings", dist.support_len());

    // Marginals are preserved pair by pair.
    let mut worst = 0.0_f64;
    for ((i, j), v) in sol.support() {
        let m = dist.pair_marginal(i, j);
        worst = worst.max((m - v).abs());
    }
    println!("largest marginal error: {worst:.3e}");
    assert!(worst < 1e-9);

    let ev = exact_expected_value(&dist);
    println!("exact expected value: {:.6}", ev.total);
    for i in 0..inst.n_players() {
        println!("  player {} expects {:.6}", inst.player_id(i), ev.per_player[i]);
    }

    // Sampling agrees with the exact expectation.
    let trials = 20_000u64;
    let mut mean = 0.0;
    for seed in 0..trials {
        let sampled = sample_allocation(&dist, seed).expect("samples");
        mean += sampled.allocation.value();
    }
    mean /= trials as f64;
    println!("empirical mean over {trials} samples: {mean:.6}");
    assert!((mean - ev.total).abs() < 0.05 * ev.total.max(1.0));
}
