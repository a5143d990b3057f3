//! Case-analysis driver: turns a fractional assignment into an integral
//! allocation while certifying, step by step, why the result beats the plain
//! 3/4 rounding baseline or where exactly the remaining slack lives.
//!
//! The driver solves the assignment relaxation once, fixes its value as the
//! comparison baseline (`opt`), and walks the seven structural steps in
//! [`steps`].  The first step whose assumption fires rounds immediately; a
//! step that doesn't fire trims the solution and passes it on; step 7 hands
//! the now heavily structured solution to a pluggable terminal rounder
//! ([`slots`]).  Every removal, price edit and bookkeeping item is logged so
//! the report's value ledger reconciles to within floating-point noise.

mod draft;
pub mod slots;
pub mod steps;

pub use slots::{round_best_of_support, BestOfSupport, RoundOutcome, TerminalRounder};
pub use steps::{capped_real_value, verify_terminal_conditions, Branch, FakeLog, StepDecision};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance};
use crate::lp::solve_assignment_lp;
use crate::solution::AssignmentSolution;
use crate::SCHEMA_VERSION;

/// All tunable constants of the case analysis.
///
/// The defaults keep the step triggers in the strictly increasing order the
/// analysis expects (`eps1 < eps2 < … < eps6`): earlier steps must fire on
/// smaller value fractions because later trims lean on their postconditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    /// Price-spread tolerance for the unique-prices step.
    pub mu: f64,
    /// Balance tolerance for the big-small (mixed item) step.
    pub nu: f64,
    /// Half-width of the admissible big-mass band around 1/2.
    pub delta: f64,
    /// Margin above half budget that makes a small item "valuable".
    pub lambda: f64,
    /// Big-item threshold; must match the instance's.
    pub beta: f64,
    /// Slack in the full-budgets test (players below `(1-slack)·budget`).
    pub saturation_slack: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub eps5: f64,
    pub eps6: f64,
    /// Enforce `eps1 < … < eps6` in [`ConstantsConfig::validate`].
    pub enforce_ordering: bool,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            mu: 0.05,
            nu: 0.05,
            delta: 0.1,
            lambda: 0.05,
            beta: 1.0 / 3.0,
            saturation_slack: 0.1,
            eps1: 0.02,
            eps2: 0.03,
            eps3: 0.04,
            eps4: 0.05,
            eps5: 0.06,
            eps6: 0.08,
            enforce_ordering: true,
        }
    }
}

impl ConstantsConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("mu", self.mu),
            ("nu", self.nu),
            ("delta", self.delta),
            ("lambda", self.lambda),
            ("saturation_slack", self.saturation_slack),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("eps4", self.eps4),
            ("eps5", self.eps5),
            ("eps6", self.eps6),
        ];
        for (what, v) in fractions {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::OutOfRange {
                    what,
                    value: v,
                    range: "(0, 1)",
                });
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0 / 3.0) {
            return Err(Error::OutOfRange {
                what: "beta",
                value: self.beta,
                range: "(0, 1/3]",
            });
        }
        if self.beta < self.delta / 4.0 {
            return Err(Error::Precondition(format!(
                "beta = {} must be at least delta/4 = {} for the canonical-form step",
                self.beta,
                self.delta / 4.0
            )));
        }
        if self.enforce_ordering {
            let e = [self.eps1, self.eps2, self.eps3, self.eps4, self.eps5, self.eps6];
            if e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Precondition(format!(
                    "step triggers must increase strictly: eps1..eps6 = {e:?}"
                )));
            }
        }
        Ok(())
    }

    /// Applies one `key=value` override (the CLI's `--set`).  Boolean fields
    /// take 0/1.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        match key {
            "mu" => self.mu = value,
            "nu" => self.nu = value,
            "delta" => self.delta = value,
            "lambda" => self.lambda = value,
            "beta" => self.beta = value,
            "saturation_slack" => self.saturation_slack = value,
            "eps1" => self.eps1 = value,
            "eps2" => self.eps2 = value,
            "eps3" => self.eps3 = value,
            "eps4" => self.eps4 = value,
            "eps5" => self.eps5 = value,
            "eps6" => self.eps6 = value,
            "enforce_ordering" => self.enforce_ordering = value != 0.0,
            _ => {
                return Err(Error::Precondition(format!(
                    "unknown constant {key:?}; known keys: mu nu delta lambda beta \
                     saturation_slack eps1..eps6 enforce_ordering"
                )))
            }
        }
        Ok(())
    }
}

/// One executed step, as serialized in the report.
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub step: u8,
    pub name: &'static str,
    pub branch: &'static str,
    pub statistic: f64,
    pub threshold: f64,
    pub value_before: f64,
    pub value_after: f64,
    pub real_value_before: f64,
    pub real_value_after: f64,
    /// `(real_value_before - real_value_after) / opt`; negative when a
    /// value-shifting round branch raised the real value.
    pub loss_fraction_of_opt: f64,
    /// The loss cap implied by the trigger not firing (fraction of
    /// `value_before`; 0 on round/dispatch branches).
    pub shape_cap: f64,
    pub within_shape: bool,
    pub certificate: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    pub step: u8,
    pub loss: f64,
}

/// Value accounting across the whole run, in budget-capped real value.
#[derive(Debug, Clone, Serialize)]
pub struct ValueLedger {
    /// Capped real value of the initial relaxation optimum (= `opt`).
    pub initial: f64,
    pub losses: Vec<LedgerEntry>,
    pub total_loss: f64,
    pub total_loss_fraction: f64,
    /// Capped real value of the solution handed to the rounder.
    pub final_value: f64,
    /// `initial - total_loss ≤ final_value + 1e-6`.
    pub reconciles: bool,
}

/// The rounding that ended the run.
#[derive(Debug, Clone, Serialize)]
pub struct FinalOutcome {
    /// Step that produced the rounding (0 for a valueless instance).
    pub step: u8,
    /// "round" (a step's assumption fired), "dispatch" (structure beyond the
    /// bundled trims), "terminal" (step 7), or "degenerate".
    pub path: &'static str,
    pub rounder: String,
    /// True when only an external rounder would certify more than 3/4 here.
    pub needs_external_upgrade: bool,
    pub guarantee_fraction: f64,
    /// Budget-capped objective (bookkeeping items included) of the solution
    /// that was rounded; the guarantee multiplies this.
    pub rounded_objective: f64,
    pub rounded_real_value: f64,
    pub certified_bound: f64,
    pub expected_value: f64,
    pub expected_real_value: f64,
    pub support_matchings: usize,
    pub chosen_matching: usize,
    pub stripped_fakes: usize,
    /// Value of the returned allocation on the *original* instance.
    pub allocation_value: f64,
    pub ratio_vs_initial: f64,
    pub certificate: String,
    /// (item id, player id) pairs of the returned allocation.
    pub allocation: Vec<(String, String)>,
}

/// Full machine-readable account of one run.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub seed: u64,
    /// Sub-seed consumed by the big-small step's partition draw.
    pub partition_seed: u64,
    /// Initial relaxation value — the fixed comparison baseline.
    pub opt: f64,
    pub n_players: usize,
    pub n_items: usize,
    pub constants: ConstantsConfig,
    pub steps: Vec<StepReport>,
    pub fake_items: Vec<FakeLog>,
    pub ledger: ValueLedger,
    pub outcome: FinalOutcome,
}

impl PipelineReport {
    /// Compact trace like `1:trim>2:trim>3:dispatch`.
    pub fn branch_path(&self) -> String {
        let mut parts: Vec<String> = self
            .steps
            .iter()
            .map(|s| format!("{}:{}", s.step, s.branch))
            .collect();
        if self.outcome.path == "terminal" || self.outcome.path == "degenerate" {
            parts.push(format!("{}:{}", self.outcome.step, self.outcome.path));
        }
        parts.join(">")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the full case analysis with the bundled best-of-support rounder.
pub fn run_pipeline(
    inst: &Arc<Instance>,
    cfg: &ConstantsConfig,
    seed: u64,
) -> Result<(Allocation, PipelineReport)> {
    run_pipeline_with(inst, cfg, seed, &BestOfSupport)
}

/// Same, with a caller-provided terminal rounder for the dispatch and
/// terminal slots (mid-pipeline round branches always use best-of-support,
/// whose certificate comes from the exact expectation).
pub fn run_pipeline_with(
    inst: &Arc<Instance>,
    cfg: &ConstantsConfig,
    seed: u64,
    rounder: &dyn TerminalRounder,
) -> Result<(Allocation, PipelineReport)> {
    cfg.validate()?;
    if (cfg.beta - inst.beta()).abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "config beta {} does not match instance beta {}; the big/small split \
             must agree between the analysis and the instance",
            cfg.beta,
            inst.beta()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partition_seed: u64 = rng.gen();

    let initial = solve_assignment_lp(inst)?;
    let opt = capped_real_value(&initial);

    let mut run = Run {
        orig: inst.clone(),
        cfg: cfg.clone(),
        seed,
        partition_seed,
        opt,
        steps: Vec::new(),
        fakes: Vec::new(),
        losses: Vec::new(),
    };

    if opt <= 1e-12 {
        let allocation = Allocation::new(inst, Vec::new())?;
        let report = run.degenerate_report();
        return Ok((allocation, report));
    }

    let mut current = initial;
    // Steps 1–6: first fired assumption rounds and returns.
    for step in 1u8..=6 {
        let d = match step {
            1 => steps::step1_full_budgets(&current, cfg.saturation_slack, cfg.eps1)?,
            2 => steps::step2_unique_prices(&current, cfg.mu, cfg.eps2)?,
            3 => steps::step3_canonicalize(&current, cfg.eps3, cfg.delta)?,
            4 => steps::step4_valuable_small(&current, cfg.lambda, cfg.eps4)?,
            5 => steps::step5_fully_assigned(&current, cfg.eps5)?,
            6 => steps::step6_big_small(&current, cfg.nu, cfg.eps6, partition_seed)?,
            _ => unreachable!(),
        };
        let branch = d.branch;
        let solution = run.record(d);
        match branch {
            Branch::Round => {
                let out = round_best_of_support(&solution)?;
                return run.finish(
                    step,
                    "round",
                    "best-of-support".into(),
                    0.75,
                    false,
                    &solution,
                    out,
                );
            }
            Branch::Dispatch => {
                let out = rounder.round(&solution, seed)?;
                let needs = rounder.guarantee() <= 0.75 + 1e-12;
                return run.finish(
                    step,
                    "dispatch",
                    rounder.name().to_string(),
                    rounder.guarantee(),
                    needs,
                    &solution,
                    out,
                );
            }
            Branch::Trim => current = solution,
        }
    }

    // Step 7: verify the terminal structure and use the slot.
    let out = steps::step7_final(&current, rounder, seed)?;
    let needs = rounder.guarantee() <= 0.75 + 1e-12;
    run.finish(
        7,
        "terminal",
        rounder.name().to_string(),
        rounder.guarantee(),
        needs,
        &current,
        out,
    )
}

/// Mutable state threaded through one run.
struct Run {
    orig: Arc<Instance>,
    cfg: ConstantsConfig,
    seed: u64,
    partition_seed: u64,
    opt: f64,
    steps: Vec<StepReport>,
    fakes: Vec<FakeLog>,
    losses: Vec<LedgerEntry>,
}

impl Run {
    /// Logs a step decision and hands back its solution.
    fn record(&mut self, d: StepDecision) -> AssignmentSolution {
        let loss = d.real_before - d.real_after;
        self.losses.push(LedgerEntry { step: d.step, loss });
        let within = loss <= d.shape_cap * d.value_before + 1e-9;
        self.steps.push(StepReport {
            step: d.step,
            name: d.name,
            branch: d.branch.label(),
            statistic: d.statistic,
            threshold: d.threshold,
            value_before: d.value_before,
            value_after: d.value_after,
            real_value_before: d.real_before,
            real_value_after: d.real_after,
            loss_fraction_of_opt: loss / self.opt,
            shape_cap: d.shape_cap,
            within_shape: within,
            certificate: d.certificate,
            notes: d.notes,
        });
        self.fakes.extend(d.fakes);
        d.solution
    }

    fn ledger(&self, final_value: f64) -> ValueLedger {
        let total_loss: f64 = self.losses.iter().map(|l| l.loss).sum();
        ValueLedger {
            initial: self.opt,
            losses: self.losses.clone(),
            total_loss,
            total_loss_fraction: total_loss / self.opt.max(1e-300),
            final_value,
            reconciles: self.opt - total_loss <= final_value + 1e-6,
        }
    }

    /// Builds the outcome: maps the rounded matching back onto the original
    /// instance (bookkeeping items are already stripped) and closes the
    /// ledger.
    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        step: u8,
        path: &'static str,
        rounder: String,
        guarantee: f64,
        needs_external_upgrade: bool,
        rounded: &AssignmentSolution,
        out: RoundOutcome,
    ) -> Result<(Allocation, PipelineReport)> {
        let work = rounded.instance();
        let mut pairs = Vec::new();
        for (&j, &i) in out.allocation.assignment() {
            let iid = work.item_id(j);
            let pid = work.player_id(i);
            let oj = self.orig.item_index(iid).ok_or_else(|| {
                Error::Precondition(format!("item {iid} is not in the original instance"))
            })?;
            let oi = self.orig.player_index(pid).ok_or_else(|| {
                Error::Precondition(format!("player {pid} is not in the original instance"))
            })?;
            pairs.push((oj, oi));
        }
        let allocation = Allocation::new(&self.orig, pairs)?;

        let rounded_objective = rounded.objective();
        let rounded_real_value = capped_real_value(rounded);
        let certificate = self
            .steps
            .iter()
            .rev()
            .find_map(|s| s.certificate.clone())
            .unwrap_or_else(|| {
                format!(
                    "terminal structure verified; {rounder} certifies {guarantee} of \
                     the rounded objective"
                )
            });
        let listing = allocation
            .assignment()
            .iter()
            .map(|(&j, &i)| {
                (
                    self.orig.item_id(j).to_string(),
                    self.orig.player_id(i).to_string(),
                )
            })
            .collect();
        let outcome = FinalOutcome {
            step,
            path,
            rounder,
            needs_external_upgrade,
            guarantee_fraction: guarantee,
            rounded_objective,
            rounded_real_value,
            certified_bound: guarantee * rounded_objective,
            expected_value: out.expected.total,
            expected_real_value: out.expected.total_real,
            support_matchings: out.support,
            chosen_matching: out.chosen,
            stripped_fakes: out.stripped,
            allocation_value: allocation.value(),
            ratio_vs_initial: allocation.value() / self.opt,
            certificate,
            allocation: listing,
        };
        let ledger = self.ledger(rounded_real_value);
        let report = PipelineReport {
            schema_version: SCHEMA_VERSION,
            seed: self.seed,
            partition_seed: self.partition_seed,
            opt: self.opt,
            n_players: self.orig.n_players(),
            n_items: self.orig.n_items(),
            constants: self.cfg,
            steps: self.steps,
            fake_items: self.fakes,
            ledger,
            outcome,
        };
        Ok((allocation, report))
    }

    fn degenerate_report(self) -> PipelineReport {
        let outcome = FinalOutcome {
            step: 0,
            path: "degenerate",
            rounder: "none".into(),
            needs_external_upgrade: false,
            guarantee_fraction: 1.0,
            rounded_objective: 0.0,
            rounded_real_value: 0.0,
            certified_bound: 0.0,
            expected_value: 0.0,
            expected_real_value: 0.0,
            support_matchings: 0,
            chosen_matching: 0,
            stripped_fakes: 0,
            allocation_value: 0.0,
            ratio_vs_initial: 1.0,
            certificate: "relaxation value is zero; the empty allocation is optimal".into(),
            allocation: Vec::new(),
        };
        PipelineReport {
            schema_version: SCHEMA_VERSION,
            seed: self.seed,
            partition_seed: self.partition_seed,
            opt: self.opt,
            n_players: self.orig.n_players(),
            n_items: self.orig.n_items(),
            constants: self.cfg,
            steps: self.steps,
            fake_items: self.fakes,
            ledger: ValueLedger {
                initial: 0.0,
                losses: Vec::new(),
                total_loss: 0.0,
                total_loss_fraction: 0.0,
                final_value: 0.0,
                reconciles: true,
            },
            outcome,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_gap_instance;

    fn cfg() -> ConstantsConfig {
        ConstantsConfig::default()
    }

    #[test]
    fn default_constants_validate() {
        cfg().validate().unwrap();
    }

    #[test]
    fn beta_delta_coupling_is_enforced() {
        let mut c = cfg();
        c.beta = 0.02;
        c.delta = 0.1;
        assert!(c.validate().is_err());
        c.delta = 0.08;
        c.validate().unwrap();
    }

    #[test]
    fn trigger_ordering_is_enforced_only_when_asked() {
        let mut c = cfg();
        c.eps3 = c.eps2;
        assert!(c.validate().is_err());
        c.enforce_ordering = false;
        c.validate().unwrap();
    }

    #[test]
    fn set_overrides_and_rejects_unknown_keys() {
        let mut c = cfg();
        c.set("eps1", 0.01).unwrap();
        assert_eq!(c.eps1, 0.01);
        c.set("enforce_ordering", 0.0).unwrap();
        assert!(!c.enforce_ordering);
        assert!(c.set("epsilon9", 0.5).is_err());
    }

    #[test]
    fn config_round_trips_through_partial_json() {
        let c: ConstantsConfig = serde_json::from_str(r#"{"mu": 0.01}"#).unwrap();
        assert_eq!(c.mu, 0.01);
        assert_eq!(c.eps6, cfg().eps6);
        assert!(serde_json::from_str::<ConstantsConfig>(r#"{"nope": 1}"#).is_err());
    }

    #[test]
    fn mismatched_beta_is_rejected() {
        let inst = Arc::new(gen_gap_instance());
        let mut c = cfg();
        c.beta = 0.25;
        assert!(run_pipeline(&inst, &c, 7).is_err());
    }

    #[test]
    fn gap_witness_runs_to_terminal_rounding() {
        let inst = Arc::new(gen_gap_instance());
        let (alloc, report) = run_pipeline(&inst, &cfg(), 7).unwrap();
        assert_eq!(report.outcome.step, 7);
        assert_eq!(report.outcome.path, "terminal");
        assert!(report.outcome.needs_external_upgrade);
        assert!((report.opt - 2.0).abs() < 1e-6);
        assert!(alloc.value() >= 1.5 - 1e-6);
        assert!(report.ledger.reconciles);
        assert_eq!(
            report.branch_path(),
            "1:trim>2:trim>3:trim>4:trim>5:trim>6:trim>7:terminal"
        );
        // All six trims are no-ops on the gap witness.
        for s in &report.steps {
            assert!(s.loss_fraction_of_opt.abs() < 1e-9, "step {} lost value", s.step);
            assert!(s.within_shape);
        }
        assert!(report.fake_items.is_empty());
    }

    #[test]
    fn underfilled_players_trigger_step_one() {
        // One of two players sits at 20% of the value with alpha = 0.8: the
        // full-budgets assumption fires for eps1 = 0.1.
        let inst = Arc::new(
            Instance::build(
                1.0 / 3.0,
                &[("p1", 4.0), ("p2", 1.25)],
                &["i1", "i2"],
                &[("p1", "i1", 4.0), ("p2", "i2", 1.0)],
            )
            .unwrap(),
        );
        let mut c = cfg();
        c.eps1 = 0.1;
        c.enforce_ordering = false;
        let (alloc, report) = run_pipeline(&inst, &c, 3).unwrap();
        assert_eq!(report.outcome.step, 1);
        assert_eq!(report.outcome.path, "round");
        assert!(!report.outcome.needs_external_upgrade);
        assert_eq!(report.branch_path(), "1:round");
        let s = &report.steps[0];
        assert!((s.statistic - 0.2).abs() < 1e-9);
        // Integral optimum here is the LP value itself.
        assert!((alloc.value() - 5.0).abs() < 1e-9);
        assert!(report.outcome.expected_value >= report.outcome.certified_bound - 1e-6);
    }

    #[test]
    fn same_seed_same_report() {
        let inst = Arc::new(crate::instance::gen_random_instance(
            11,
            4,
            7,
            crate::instance::PriceModel::General,
        ));
        let (_, r1) = run_pipeline(&inst, &cfg(), 42).unwrap();
        let (_, r2) = run_pipeline(&inst, &cfg(), 42).unwrap();
        assert_eq!(r1.to_json(), r2.to_json());
    }

    #[test]
    fn zero_value_instance_reports_degenerate_outcome() {
        let inst = Arc::new(
            Instance::build(1.0 / 3.0, &[("p", 1.0)], &["j"], &[("p", "j", 0.0)]).unwrap(),
        );
        let (alloc, report) = run_pipeline(&inst, &cfg(), 0).unwrap();
        assert_eq!(report.outcome.path, "degenerate");
        assert_eq!(alloc.value(), 0.0);
        assert!(report.ledger.reconciles);
        assert_eq!(report.branch_path(), "0:degenerate");
    }
}
