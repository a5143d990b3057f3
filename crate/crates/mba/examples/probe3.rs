use std::sync::Arc;

use mba::instance::{gen_random_instance, PriceModel};
use mba::lp::solve_assignment_lp;
use mba::rounding::{build_bucket_graph, decompose_matchings, exact_expected_value};
use mba::stats::{bound_alpha, compute_stats};

fn main() {
    for seed in 0..100u64 {
        let n_players = 1 + (seed as usize % 5);
        let n_items = 1 + ((seed as usize * 7) % 10);
        let model = if seed % 2 == 0 { PriceModel::UniformPrices } else { PriceModel::General };
        let inst = Arc::new(gen_random_instance(seed, n_players, n_items, model));
        let sol = solve_assignment_lp(&inst).expect("solves");
        let g = build_bucket_graph(&sol);
        let dist = decompose_matchings(&g).expect("decomposes");
        let ev = exact_expected_value(&dist);
        let (players, _) = compute_stats(&sol);
        for (i, p) in players.iter().enumerate() {
            let b = inst.budget(i);
            let floor = bound_alpha(b, p.alpha).unwrap();
            let got = ev.per_player[i];
            if got < floor - 1e-6 {
                println!(
                    "seed {seed} ({model:?}) player {i}: B={b:.6} alpha={:.6} floor={floor:.6} got={got:.6}",
                    p.alpha
                );
                println!("  support:");
                for (j, v) in sol.player_support(i) {
                    let price = inst.price(i, j).unwrap();
                    println!(
                        "    item {j} p={price:.6} x={v:.6} big={}",
                        price >= (1.0 - inst.beta()) * b
                    );
                }
                println!("  buckets:");
                for &bk in g.player_buckets(i) {
                    println!("    bucket {bk} (player-slot {:?})", g.bucket(bk));
                    for e in g.edges() {
                        if e.bucket == bk {
                            println!("      edge item {} fraction {:.6}", e.item, e.fraction);
                        }
                    }
                }
                println!("  matchings:");
                for (m, q) in dist.entries() {
                    let mine: Vec<_> = m
                        .iter()
                        .filter(|&&(bk, _)| g.bucket(bk).0 == i)
                        .map(|&(bk, j)| format!("b{bk}<-{j}"))
                        .collect();
                    println!("    q={q:.6} [{}]", mine.join(" "));
                }
            }
        }
    }
}
