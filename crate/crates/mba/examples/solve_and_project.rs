//! Solves both relaxations of a random instance and projects the stronger
//! one back to per-pair marginals.
//!
//! The configuration relaxation (one variable per player/item-set pair,
//! solved by column generation) is never larger than the assignment
//! relaxation, and its projection loses at most the reported trimming value.
//!
//! Run with `cargo run --example solve_and_project`.

use mba::instance::{gen_random_instance, PriceModel};
use mba::lp::{project_to_assignment, solve_assignment_lp, solve_configuration_lp, PricingOptions};

fn main() {
    for seed in 0..4u64 {
        let inst = gen_random_instance(seed, 4, 7, PriceModel::General).into_arc();
        let assign = solve_assignment_lp(&inst).expect("assignment relaxation solves");
        let config = solve_configuration_lp(&inst, 1e-6, &PricingOptions::default())
            .expect("column generation converges");

        println!("seed {seed}:");
        println!("  assignment objective    {:.6}", assign.objective());
        println!(
            "  configuration objective {:.6}  ({} columns)",
            config.objective(),
            config.columns().len()
        );
        assert!(
            config.objective() <= assign.objective() + 1e-6,
            "configuration relaxation must not exceed the assignment relaxation"
        );

        // Projection can refuse: if imposing the per-player small/big
        // inequality on the marginals must cost real value, it reports the
        // loss instead of silently returning a weaker solution.
        match project_to_assignment(&config) {
            Ok((projected, report)) => {
                println!(
                    "  projected objective     {:.6}  (trimmed value {:.2e})",
                    projected.objective(),
                    report.trimmed_value
                );
                assert!(
                    projected.objective() >= report.config_objective - report.trimmed_value - 1e-6
                );
            }
            Err(e) => println!("  projection declined: {e}"),
        }

        let tightening = assign.objective() - config.objective();
        if tightening > 1e-9 {
            println!("  configuration bound is tighter by {tightening:.6}");
        } else {
            println!("  both relaxations agree on this instance");
        }
    }
}
