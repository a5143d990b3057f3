//! The built-in worst-case instance: the assignment relaxation overshoots
//! the best integral allocation by exactly 4/3, and exact expected-value
//! rounding recovers the integral optimum.
//!
//! Run with `cargo run --example gap_ratio`.

use mba::instance::{brute_force_optimum, gen_gap_instance};
use mba::lp::solve_assignment_lp;
use mba::rounding::{build_bucket_graph, decompose_matchings, exact_expected_value};

fn main() {
    let inst = gen_gap_instance().into_arc();
    println!(
        "instance: {} players, {} items, beta = {:.4}",
        inst.n_players(),
        inst.n_items(),
        inst.beta()
    );

    let sol = solve_assignment_lp(&inst).expect("relaxation solves");
    println!("assignment relaxation objective: {:.6}", sol.objective());
    for ((i, j), v) in sol.support() {
        println!("  x[{}, {}] = {v:.4}", inst.player_id(i), inst.item_id(j));
    }

    let opt = brute_force_optimum(&inst).expect("small enough to enumerate");
    println!("integral optimum (brute force): {:.6}", opt.value());

    // Round the fractional solution: decompose into a distribution over
    // matchings, then evaluate the expectation exactly.
    let graph = build_bucket_graph(&sol);
    let dist = decompose_matchings(&graph).expect("decomposes");
    let ev = exact_expected_value(&dist);
    println!(
        "rounded expectation: {:.6} over {} support matchings",
        ev.total,
        dist.support_len()
    );

    let gap = sol.objective() / opt.value();
    println!("relaxation / integral gap: {gap:.6}  (4/3 = {:.6})", 4.0 / 3.0);
    println!("rounding recovers {:.4} of the relaxation", ev.total / sol.objective());

    assert!((sol.objective() - 2.0).abs() < 1e-6);
    assert!((opt.value() - 1.5).abs() < 1e-12);
    assert!(ev.total >= 1.5 - 1e-6);
}
