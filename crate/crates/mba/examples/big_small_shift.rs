//! Runs the two-phase random-partition shift on an item that is big for one
//! player and small for another, and measures what red players gain.
//!
//! Players are colored red or green uniformly at random.  Phase one moves
//! big mass toward red players and drains red players' small mass; phase
//! two empties the balanced big/small items one side at a time.  Green big
//! mass never rises, red big mass never falls, and a short Monte Carlo run
//! shows the conditional red gain beating its closed-form floor.
//!
//! Run with `cargo run --example big_small_shift`.

use mba::instance::Instance;
use mba::solution::AssignmentSolution;
use mba::stats::compute_stats;
use mba::transforms::{
    big_small_potential, find_big_small, red_big_gain_bound, sample_partition, shift_main,
    shift_preprocess, Color,
};
use std::sync::Arc;

fn fixture() -> (Arc<Instance>, AssignmentSolution) {
    // r (budget 1) holds item t big; d (budget 2) holds the same item small.
    // d and e close a big pair at price 2; private smalls fill every budget
    // to exactly half big + half small.
    let inst = Instance::build(
        1.0 / 3.0,
        &[("r", 1.0), ("d", 2.0), ("e", 2.0)],
        &["t", "g", "sr", "sd", "se"],
        &[
            ("r", "t", 1.0),
            ("d", "t", 1.0),
            ("d", "g", 2.0),
            ("e", "g", 2.0),
            ("r", "sr", 0.5),
            ("d", "sd", 0.55 / 0.95),
            ("e", "se", 1.0),
        ],
    )
    .expect("valid instance")
    .into_arc();
    let sol = AssignmentSolution::new(
        inst.clone(),
        [
            ((0, 0), 0.5),
            ((1, 0), 0.45),
            ((1, 1), 0.5),
            ((2, 1), 0.5),
            ((0, 2), 1.0),
            ((1, 3), 0.95),
            ((2, 4), 1.0),
        ],
    )
    .expect("valid solution");
    (inst, sol)
}

fn main() {
    let (inst, sol) = fixture();
    let n = inst.n_players();

    let mset = find_big_small(&sol, 0.05).expect("valid mu");
    println!("balanced big/small items: {:?}", mset.items);
    assert!(mset.contains(0), "item t splits 0.5 big / 0.45 small");

    // One partition in detail.
    let part = sample_partition(n, 42);
    for i in 0..n {
        println!("  {} is {:?}", inst.player_id(i), part.color(i));
    }
    let (before, _) = compute_stats(&sol);
    let pot0 = big_small_potential(&sol);

    let (x1, trace1) = shift_preprocess(&sol, &part).expect("preprocess runs");
    let (x2, trace2) = shift_main(&x1, &part, &mset).expect("main phase runs");
    println!(
        "phase moves: {} + {}, potential {:.6} -> {:.6}",
        trace1.len(),
        trace2.len(),
        pot0,
        trace2.final_potential
    );
    assert!(trace2.final_potential >= pot0 - 1e-9);

    let (after, _) = compute_stats(&x2);
    for i in 0..n {
        let arrow = match part.color(i) {
            Color::Red => ">=",
            Color::Green => "<=",
        };
        println!(
            "  {} big mass {:.4} {arrow} {:.4}",
            inst.player_id(i),
            after[i].big_mass,
            before[i].big_mass
        );
        match part.color(i) {
            Color::Red => assert!(after[i].big_mass >= before[i].big_mass - 1e-12),
            Color::Green => assert!(after[i].big_mass <= before[i].big_mass + 1e-12),
        }
        assert!(after[i].small_value <= inst.budget(i) / 2.0 + 1e-9);
    }
    for j in 0..inst.n_items() {
        assert!((x2.item_mass(j) - sol.item_mass(j)).abs() < 1e-12);
    }
    println!("mass conserved, small value capped at half budget");

    // Monte Carlo: big mass gained by red players beats the per-player floor.
    let floors = red_big_gain_bound(&sol);
    let trials = 2000u64;
    let mut sum = vec![0.0; n];
    let mut hits = vec![0u32; n];
    for seed in 0..trials {
        let p = sample_partition(n, seed);
        let (x1, _) = shift_preprocess(&sol, &p).expect("preprocess runs");
        let (stats, _) = compute_stats(&x1);
        for i in 0..n {
            if p.is_red(i) {
                sum[i] += stats[i].big_mass;
                hits[i] += 1;
            }
        }
    }
    for i in 0..n {
        let mean = sum[i] / hits[i] as f64;
        println!(
            "  {}: conditional red big mass {:.6} (floor 1/2 + {:.6})",
            inst.player_id(i),
            mean,
            floors[i]
        );
        assert!(mean >= 0.5 + floors[i] - 0.01, "floor should hold well within noise");
    }
}
