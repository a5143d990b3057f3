//! Command-line front end: solve, round, analyze, pipeline, gap, sweep.
//!
//! Every verb writes JSON/CSV artifacts into `--out` and prints one line per
//! file written.  Module errors exit 1 with a machine-readable error JSON on
//! stdout; flag errors exit 2 (clap's default).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};

use mba::export;
use mba::instance::{brute_force_optimum, gen_gap_instance, Instance, InstanceSpec};
use mba::lp::{
    solve_assignment_lp, solve_configuration_lp, project_to_assignment, PricingOptions,
};
use mba::arrangements::{initial_arrangement, worsen_arrangement};
use mba::pipeline::{run_pipeline, ConstantsConfig};
use mba::rounding::{
    build_bucket_graph, decompose_matchings, exact_expected_value, sample_allocation,
};
use mba::{Error, Result};

#[derive(Parser)]
#[command(name = "mba", about = "Budgeted-allocation solver and rounding toolkit")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// Instance JSON file (repeatable for `sweep`).
    #[arg(long, global = true)]
    instance: Vec<PathBuf>,
    /// Constants JSON file layered over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Constant overrides layered over the config file, e.g. `--set eps1=0.01`.
    #[arg(long = "set", value_name = "K=V", global = true)]
    set: Vec<String>,
    /// Random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Verb {
    /// Solve both relaxations of an instance and write the solutions.
    Solve(Common),
    /// Round the relaxation optimum: exact expectation plus one sample.
    Round(Common),
    /// Per-player/per-item statistics and worst-case arrangement tables.
    Analyze(Common),
    /// Run the seven-step case analysis and write its report.
    Pipeline(Common),
    /// Emit the canonical integrality-gap witness and its numbers.
    Gap(Common),
    /// Run the pipeline over a seed range (and several instances) in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 8)]
        runs: u64,
        /// Worker thread cap.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            println!("{}", serde_json::to_string_pretty(&export::error_json(&e)).unwrap());
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Solve(c) => solve_verb(&c),
        Verb::Round(c) => round_verb(&c),
        Verb::Analyze(c) => analyze_verb(&c),
        Verb::Pipeline(c) => pipeline_verb(&c),
        Verb::Gap(c) => gap_verb(&c),
        Verb::Sweep { common, runs, jobs } => sweep_verb(&common, runs, jobs),
    }
}

fn load_instance(path: &Path) -> Result<Arc<Instance>> {
    let text = fs::read_to_string(path)?;
    let spec: InstanceSpec = serde_json::from_str(&text)?;
    Ok(Arc::new(Instance::from_spec(&spec)?))
}

fn one_instance(c: &Common) -> Result<Arc<Instance>> {
    match c.instance.as_slice() {
        [p] => load_instance(p),
        [] => Err(Error::Precondition("--instance is required".into())),
        _ => Err(Error::Precondition(
            "multiple --instance flags are only valid for sweep".into(),
        )),
    }
}

/// defaults < --config file < --set K=V
fn layered_config(c: &Common) -> Result<ConstantsConfig> {
    let mut cfg = match &c.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => ConstantsConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            Error::Precondition(format!("--set expects K=V, got {kv:?}"))
        })?;
        let value: f64 = v.trim().parse().map_err(|_| Error::Precondition(format!(
            "--set {k}: {v:?} is not a number"
        )))?;
        cfg.set(k.trim(), value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    write(path, &format!("{}\n", serde_json::to_string_pretty(v)?))
}

fn solve_verb(c: &Common) -> Result<()> {
    let inst = one_instance(c)?;
    let lp = solve_assignment_lp(&inst)?;
    write_json(&c.out.join("assignment_lp.json"), &export::solution_json(&lp))?;
    let conf = solve_configuration_lp(&inst, 1e-6, &PricingOptions::default())?;
    let mut doc = export::config_solution_json(&conf);
    let (projected, proj) = project_to_assignment(&conf)?;
    doc["projection"] = serde_json::json!({
        "config_objective": proj.config_objective,
        "marginal_objective": proj.marginal_objective,
        "trimmed_value": proj.trimmed_value,
        "final_objective": proj.final_objective,
    });
    write_json(&c.out.join("config_lp.json"), &doc)?;
    write_json(
        &c.out.join("config_lp_projected.json"),
        &export::solution_json(&projected),
    )?;
    println!(
        "assignment objective {:.6}, configuration objective {:.6}",
        lp.objective(),
        conf.objective()
    );
    Ok(())
}

fn round_verb(c: &Common) -> Result<()> {
    let inst = one_instance(c)?;
    let sol = solve_assignment_lp(&inst)?;
    let dist = decompose_matchings(&build_bucket_graph(&sol))?;
    let expected = exact_expected_value(&dist);
    let sampled = sample_allocation(&dist, c.seed)?;
    write_json(
        &c.out.join("allocation.json"),
        &export::allocation_json(&inst, &sampled.allocation, Some(&expected)),
    )?;
    write(&c.out.join("distribution.csv"), &export::distribution_csv(&dist))?;
    println!(
        "expected value {:.6} over {} matchings; sampled matching {} has value {:.6}",
        expected.total,
        dist.support_len(),
        sampled.matching_index,
        sampled.allocation.value()
    );
    Ok(())
}

fn analyze_verb(c: &Common) -> Result<()> {
    let inst = one_instance(c)?;
    let sol = solve_assignment_lp(&inst)?;
    write(&c.out.join("player_stats.csv"), &export::player_stats_csv(&sol))?;
    write(&c.out.join("item_stats.csv"), &export::item_stats_csv(&sol))?;
    let graph = build_bucket_graph(&sol);
    for i in 0..inst.n_players() {
        if sol.player_support(i).next().is_none() {
            continue;
        }
        let arr = initial_arrangement(&graph, i, 1000)?;
        let worsened = worsen_arrangement(&arr)?;
        write(
            &c.out.join(format!("arrangement_{}.csv", inst.player_id(i))),
            &export::arrangement_csv(&worsened.arrangement),
        )?;
    }
    Ok(())
}

fn pipeline_verb(c: &Common) -> Result<()> {
    let inst = one_instance(c)?;
    let cfg = layered_config(c)?;
    let (_, report) = run_pipeline(&inst, &cfg, c.seed)?;
    write(
        &c.out.join("pipeline_report.json"),
        &format!("{}\n", report.to_json()),
    )?;
    let label = c.instance[0]
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".into());
    append_summary(
        &c.out.join("summary.csv"),
        &export::pipeline_summary_row(&label, &report),
    )?;
    println!(
        "branch path {}; value {:.6} of opt {:.6} (ratio {:.4})",
        report.branch_path(),
        report.outcome.allocation_value,
        report.opt,
        report.outcome.ratio_vs_initial
    );
    Ok(())
}

fn append_summary(path: &Path, row: &str) -> Result<()> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(_) => export::PIPELINE_SUMMARY_HEADER.to_string(),
    };
    text.push_str(row);
    write(path, &text)
}

fn gap_verb(c: &Common) -> Result<()> {
    let inst = Arc::new(gen_gap_instance());
    write_json(&c.out.join("gap_instance.json"), &export::instance_json(&inst))?;
    let lp = solve_assignment_lp(&inst)?;
    let opt = brute_force_optimum(&inst)?;
    let dist = decompose_matchings(&build_bucket_graph(&lp))?;
    let expected = exact_expected_value(&dist);
    let report = serde_json::json!({
        "schema_version": mba::SCHEMA_VERSION,
        "lp_value": lp.objective(),
        "integral_opt": opt.value(),
        "ratio": opt.value() / lp.objective(),
        "rounded_expected_value": expected.total,
    });
    write_json(&c.out.join("gap_report.json"), &report)?;
    println!(
        "LP {:.6}, OPT {:.6}, ratio {:.4}, exact rounding expectation {:.6}",
        lp.objective(),
        opt.value(),
        opt.value() / lp.objective(),
        expected.total
    );
    Ok(())
}

fn sweep_verb(c: &Common, runs: u64, jobs: usize) -> Result<()> {
    if c.instance.is_empty() {
        return Err(Error::Precondition("--instance is required".into()));
    }
    if runs == 0 || jobs == 0 {
        return Err(Error::Precondition("--runs and --jobs must be positive".into()));
    }
    let cfg = layered_config(c)?;
    let mut tasks = Vec::new();
    for path in &c.instance {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "instance".into());
        let inst = load_instance(path)?;
        for seed in c.seed..c.seed + runs {
            tasks.push((label.clone(), inst.clone(), seed));
        }
    }

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<(usize, String)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= tasks.len() {
                    break;
                }
                let (label, inst, seed) = &tasks[t];
                let row = match run_pipeline(inst, &cfg, *seed) {
                    Ok((_, report)) => export::pipeline_summary_row(label, &report),
                    Err(e) => format!("{label},{seed},error,,,,{}\n", e.code()),
                };
                rows.lock().unwrap().push((t, row));
            });
        }
    });

    let mut rows = rows.into_inner().unwrap();
    rows.sort_by_key(|(t, _)| *t);
    let mut text = export::PIPELINE_SUMMARY_HEADER.to_string();
    for (_, row) in rows {
        text.push_str(&row);
    }
    write(&c.out.join("sweep_summary.csv"), &text)?;
    println!("{} runs across {} instances", tasks.len(), c.instance.len());
    Ok(())
}
