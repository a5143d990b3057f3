//! Worst-case rearrangement analysis of a single player's rounding
//! distribution.
//!
//! The player's bucket subgraph is discretized into `D` equal-weight
//! *configurations* (one optional item per bucket).  A *worsening swap*
//! exchanges the bucket-`l` items of two configurations when the poorer
//! configuration holds the pricier item; such swaps never increase the
//! expected capped value, and the swap fixed point ("worst-case
//! arrangement") is the pessimistic distribution all the closed-form lower
//! bounds in [`crate::stats`] are actually proved against.
//!
//! Construction: configuration `r` takes, in every bucket, the item whose
//! fill segment contains the quantile `(r + 0.5) / D`.  Since buckets are
//! filled in price-descending order, this aligns expensive items with
//! expensive items, so the initial arrangement is already a swap fixed
//! point and its per-edge marginals are within `1/D` of the fractions.
//! [`worsen_arrangement`] still fully implements the swap procedure for
//! arbitrary (e.g. hand-built) arrangements.

use std::collections::BTreeMap;

use crate::rounding::BucketGraph;
use crate::{Error, ItemClass, Result};

/// `D` equal-weight configurations of one player, each holding at most one
/// item per bucket.
#[derive(Debug, Clone)]
pub struct Arrangement {
    player: usize,
    budget: f64,
    d: usize,
    k: usize,
    prices: BTreeMap<usize, f64>,
    big: BTreeMap<usize, bool>,
    /// `d` rows of `k` slots.
    configs: Vec<Vec<Option<usize>>>,
}

/// Aggregate statistics of an arrangement.  Averages over an empty class
/// are `None`.  Conventions: `w` is the probability of drawing an overfull
/// configuration (total price at least the budget), `v` the overfull ones
/// without any big item, `big_mass` the configurations containing a big
/// item.  `unused_*` are average unutilized values (total price minus
/// capped value): `unused` over overfull configurations, `unused_big`
/// normalized by `big_mass`, `unused_small` over overfull big-free
/// configurations.  `gain` is the average value of underfull
/// configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrangementStats {
    pub w: f64,
    pub v: f64,
    pub big_mass: f64,
    pub alpha: f64,
    pub expected_value: f64,
    pub unused: Option<f64>,
    pub unused_big: Option<f64>,
    pub unused_small: Option<f64>,
    pub gain: Option<f64>,
}

impl Arrangement {
    /// Builds an arrangement from explicit configurations.  `prices` must
    /// cover every referenced item; `big` flags which items are big for
    /// this player.
    pub fn new(
        player: usize,
        budget: f64,
        prices: BTreeMap<usize, f64>,
        big: BTreeMap<usize, bool>,
        configs: Vec<Vec<Option<usize>>>,
    ) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::Precondition("arrangement needs configurations".into()));
        }
        let k = configs.iter().map(Vec::len).max().unwrap();
        let mut padded = configs;
        for c in &mut padded {
            c.resize(k, None);
            for j in c.iter().flatten() {
                if !prices.contains_key(j) {
                    return Err(Error::Precondition(format!("item {j} has no price")));
                }
                if !big.contains_key(j) {
                    return Err(Error::Precondition(format!("item {j} has no class")));
                }
            }
        }
        let d = padded.len();
        Ok(Arrangement { player, budget, d, k, prices, big, configs: padded })
    }

    pub fn player(&self) -> usize {
        self.player
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn copies(&self) -> usize {
        self.d
    }

    pub fn n_buckets(&self) -> usize {
        self.k
    }

    pub fn config(&self, r: usize) -> &[Option<usize>] {
        &self.configs[r]
    }

    pub fn price(&self, j: usize) -> f64 {
        self.prices[&j]
    }

    pub fn is_big(&self, j: usize) -> bool {
        self.big[&j]
    }

    fn slot_price(&self, slot: Option<usize>) -> f64 {
        slot.map_or(0.0, |j| self.prices[&j])
    }

    /// Total price of configuration `r`.
    pub fn total(&self, r: usize) -> f64 {
        self.configs[r].iter().map(|s| self.slot_price(*s)).sum()
    }

    /// Capped value of configuration `r`.
    pub fn value(&self, r: usize) -> f64 {
        self.total(r).min(self.budget)
    }

    /// Unutilized value of configuration `r` (total minus capped value).
    pub fn unutilized(&self, r: usize) -> f64 {
        (self.total(r) - self.budget).max(0.0)
    }

    /// Average capped value over all configurations.
    pub fn expected_value(&self) -> f64 {
        (0..self.d).map(|r| self.value(r)).sum::<f64>() / self.d as f64
    }

    /// Fraction of configurations using edge (local bucket `t`, item `j`).
    pub fn edge_marginal(&self, t: usize, j: usize) -> f64 {
        let hits = self.configs.iter().filter(|c| c.get(t) == Some(&Some(j))).count();
        hits as f64 / self.d as f64
    }

    /// True when no worsening swap applies: for every pair with
    /// `total(C) <= total(C')`, `C` never holds a strictly pricier item in
    /// any bucket.
    pub fn is_worst_case(&self) -> bool {
        let totals: Vec<f64> = (0..self.d).map(|r| self.total(r)).collect();
        for a in 0..self.d {
            for b in 0..self.d {
                if a == b || totals[a] > totals[b] {
                    continue;
                }
                for l in 0..self.k {
                    if self.slot_price(self.configs[a][l])
                        > self.slot_price(self.configs[b][l]) + 1e-12
                    {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Discretizes `player`'s bucket subgraph into `d >= 100` equal-weight
/// configurations by the quantile sweep described in the module docs.
/// Every edge marginal is reproduced within `1/d`.
pub fn initial_arrangement(g: &BucketGraph, player: usize, d: usize) -> Result<Arrangement> {
    if d < 100 {
        return Err(Error::OutOfRange { what: "copies", value: d as f64, range: "[100, inf)" });
    }
    let buckets = g.player_buckets(player);
    if buckets.is_empty() {
        return Err(Error::Precondition(format!("player {player} has no buckets")));
    }
    let inst = g.instance();
    let mut prices = BTreeMap::new();
    let mut big = BTreeMap::new();
    // Fill segments per bucket: item `j` occupies [start, start + fraction).
    let mut segments: Vec<Vec<(f64, f64, usize)>> = Vec::new();
    for &b in buckets {
        let mut segs = Vec::new();
        let mut at = 0.0;
        for e in g.bucket_fill(b) {
            segs.push((at, at + e.fraction, e.item));
            at += e.fraction;
            prices.insert(e.item, inst.price(player, e.item).unwrap());
            big.insert(e.item, inst.classify(player, e.item)? == ItemClass::Big);
        }
        segments.push(segs);
    }
    let configs = (0..d)
        .map(|r| {
            let q = (r as f64 + 0.5) / d as f64;
            segments
                .iter()
                .map(|segs| {
                    segs.iter()
                        .find(|&&(s, e, _)| s <= q && q < e)
                        .map(|&(_, _, j)| j)
                })
                .collect()
        })
        .collect();
    Arrangement::new(player, inst.budget(player), prices, big, configs)
}

/// A worsened arrangement plus the audit trail of the run.
#[derive(Debug, Clone)]
pub struct Worsened {
    pub arrangement: Arrangement,
    /// Expected value before the first swap and after every swap;
    /// non-increasing throughout.
    pub value_history: Vec<f64>,
    pub swaps: usize,
}

/// Applies worsening swaps until none applies, returning the fixed point
/// with configurations sorted by descending total.
///
/// Schedule: repeatedly take the configuration with the largest total and,
/// bucket by bucket, swap in the priciest item held by any other
/// unprocessed configuration (always admissible, since the target has the
/// maximal total); then freeze it and recurse on the rest.  This reaches a
/// fixed point in at most `d * k` swaps instead of scanning all pairs, and
/// each individual swap is a legal worsening swap, so the expected value
/// never increases along the way.
pub fn worsen_arrangement(arr: &Arrangement) -> Result<Worsened> {
    let mut configs = arr.configs.clone();
    let d = arr.d;
    let k = arr.k;
    let z = 1.0 / d as f64;
    let mut totals: Vec<f64> = (0..d).map(|r| arr.total(r)).collect();
    let value = |t: f64| t.min(arr.budget);
    let mut expected: f64 = totals.iter().map(|&t| value(t) * z).sum();
    let mut history = vec![expected];
    let mut swaps = 0usize;
    let cap = d * d * k * k + 1;

    let mut remaining: Vec<usize> = (0..d).collect();
    let mut order = Vec::with_capacity(d);
    while !remaining.is_empty() {
        // Config with the largest total, lowest index on ties.
        let (pos, &target) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                totals[a].partial_cmp(&totals[b]).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        for l in 0..k {
            let here = arr.slot_price(configs[target][l]);
            let donor = remaining
                .iter()
                .copied()
                .filter(|&c| c != target)
                .max_by(|&a, &b| {
                    let pa = arr.slot_price(configs[a][l]);
                    let pb = arr.slot_price(configs[b][l]);
                    pa.partial_cmp(&pb).unwrap().then(b.cmp(&a))
                });
            let Some(donor) = donor else { continue };
            let best = arr.slot_price(configs[donor][l]);
            if best <= here + 1e-12 {
                continue;
            }
            debug_assert!(totals[donor] <= totals[target] + 1e-9, "inadmissible swap");
            let delta = best - here;
            let before = value(totals[donor]) + value(totals[target]);
            let (a, b) = (configs[donor][l], configs[target][l]);
            configs[donor][l] = b;
            configs[target][l] = a;
            totals[donor] -= delta;
            totals[target] += delta;
            expected += (value(totals[donor]) + value(totals[target]) - before) * z;
            history.push(expected);
            swaps += 1;
            if swaps >= cap {
                return Err(Error::WorsenCap(swaps));
            }
        }
        order.push(target);
        remaining.swap_remove(pos);
    }

    let arrangement = Arrangement {
        player: arr.player,
        budget: arr.budget,
        d,
        k,
        prices: arr.prices.clone(),
        big: arr.big.clone(),
        configs: order.into_iter().map(|r| std::mem::take(&mut configs[r])).collect(),
    };
    Ok(Worsened { arrangement, value_history: history, swaps })
}

/// Computes the class masses and conditional averages of an arrangement.
pub fn arrangement_stats(arr: &Arrangement) -> ArrangementStats {
    let d = arr.d;
    let z = 1.0 / d as f64;
    let mut w = 0.0;
    let mut v = 0.0;
    let mut big_mass = 0.0;
    let mut total_price = 0.0;
    let mut expected_value = 0.0;
    let mut unused_sum = 0.0; // over overfull configs
    let mut unused_big_sum = 0.0; // over overfull configs with a big item
    let mut unused_small_sum = 0.0; // over overfull configs without one
    let mut gain_sum = 0.0; // value over underfull configs
    for r in 0..d {
        let total = arr.total(r);
        let overfull = total >= arr.budget;
        let has_big = arr.configs[r].iter().flatten().any(|&j| arr.big[&j]);
        let unutilized = (total - arr.budget).max(0.0);
        total_price += total * z;
        expected_value += total.min(arr.budget) * z;
        if has_big {
            big_mass += z;
        }
        if overfull {
            w += z;
            unused_sum += unutilized * z;
            if has_big {
                unused_big_sum += unutilized * z;
            } else {
                v += z;
                unused_small_sum += unutilized * z;
            }
        } else {
            gain_sum += total * z;
        }
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(num / den) } else { None };
    ArrangementStats {
        w,
        v,
        big_mass,
        alpha: total_price / arr.budget,
        expected_value,
        unused: ratio(unused_sum, w),
        unused_big: ratio(unused_big_sum, big_mass),
        unused_small: ratio(unused_small_sum, v),
        gain: ratio(gain_sum, 1.0 - w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_random_instance, Instance, PriceModel};
    use crate::lp::solve_assignment_lp;
    use crate::rounding::{build_bucket_graph, decompose_matchings, exact_expected_value};
    use crate::solution::AssignmentSolution;
    use crate::stats::{bound_intermediate, compute_stats};

    fn graph_for(prices_masses: &[(f64, f64)]) -> (AssignmentSolution, BucketGraph) {
        let items: Vec<String> = (0..prices_masses.len()).map(|k| format!("j{k}")).collect();
        let refs: Vec<&str> = items.iter().map(|s| s.as_str()).collect();
        let specs: Vec<(&str, &str, f64)> =
            prices_masses.iter().enumerate().map(|(k, &(p, _))| ("a", refs[k], p)).collect();
        let inst = Instance::build(1.0 / 3.0, &[("a", 1.0)], &refs, &specs).unwrap().into_arc();
        let sol = AssignmentSolution::new(
            inst,
            prices_masses.iter().enumerate().map(|(k, &(_, x))| ((0, k), x)),
        )
        .unwrap();
        let g = build_bucket_graph(&sol);
        (sol, g)
    }

    #[test]
    fn full_item_yields_identical_copies() {
        let (_, g) = graph_for(&[(0.7, 1.0)]);
        let arr = initial_arrangement(&g, 0, 100).unwrap();
        assert_eq!(arr.copies(), 100);
        for r in 0..100 {
            assert_eq!(arr.config(r), &[Some(0)]);
        }
    }

    #[test]
    fn half_half_split_is_even() {
        let (_, g) = graph_for(&[(0.8, 0.5), (0.5, 0.5)]);
        let arr = initial_arrangement(&g, 0, 100).unwrap();
        assert_eq!((0..100).filter(|&r| arr.config(r) == [Some(0)]).count(), 50);
        assert_eq!((0..100).filter(|&r| arr.config(r) == [Some(1)]).count(), 50);
    }

    #[test]
    fn thirds_split_two_to_one() {
        let (_, g) = graph_for(&[(0.8, 2.0 / 3.0), (0.5, 1.0 / 3.0)]);
        let arr = initial_arrangement(&g, 0, 198).unwrap();
        assert_eq!((0..198).filter(|&r| arr.config(r) == [Some(0)]).count(), 132);
        assert_eq!((0..198).filter(|&r| arr.config(r) == [Some(1)]).count(), 66);
    }

    #[test]
    fn copies_below_hundred_rejected() {
        let (_, g) = graph_for(&[(0.7, 1.0)]);
        assert!(initial_arrangement(&g, 0, 50).is_err());
    }

    #[test]
    fn marginals_within_one_over_d() {
        for seed in 0..4 {
            let inst = gen_random_instance(seed, 3, 6, PriceModel::General).into_arc();
            let sol = solve_assignment_lp(&inst).unwrap();
            let g = build_bucket_graph(&sol);
            for i in 0..inst.n_players() {
                if g.player_buckets(i).is_empty() {
                    continue;
                }
                let d = 250;
                let arr = initial_arrangement(&g, i, d).unwrap();
                for (t, &b) in g.player_buckets(i).iter().enumerate() {
                    for e in g.bucket_fill(b) {
                        let got = arr.edge_marginal(t, e.item);
                        assert!(
                            (got - e.fraction).abs() <= 1.0 / d as f64 + 1e-9,
                            "seed {seed} player {i} bucket {t} item {}: {got} vs {}",
                            e.item,
                            e.fraction
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sweep_initial_is_already_worst_case() {
        let (_, g) = graph_for(&[(1.0, 0.5), (0.3, 0.9), (0.25, 0.8), (0.2, 0.3)]);
        let arr = initial_arrangement(&g, 0, 200).unwrap();
        assert!(arr.is_worst_case());
        let worsened = worsen_arrangement(&arr).unwrap();
        assert_eq!(worsened.swaps, 0);
        assert!((worsened.arrangement.expected_value() - arr.expected_value()).abs() < 1e-12);
    }

    fn crossing_arrangement() -> Arrangement {
        // Two buckets, two configs placed against the price order: the
        // poorer config holds the pricier bucket-0 item.
        let prices = BTreeMap::from([(0, 0.9), (1, 0.2), (2, 0.6), (3, 0.55)]);
        let big = BTreeMap::from([(0, true), (1, false), (2, false), (3, false)]);
        Arrangement::new(
            0,
            1.0,
            prices,
            big,
            vec![vec![Some(0), Some(1)], vec![Some(3), Some(2)]],
        )
        .unwrap()
    }

    #[test]
    fn crossing_pair_sorts_in_one_swap() {
        let arr = crossing_arrangement();
        // totals: 1.1 and 1.15 -> config 0 is poorer but holds item 0
        // (0.9 > 0.55) in bucket 0: one admissible swap.
        assert!(!arr.is_worst_case());
        let out = worsen_arrangement(&arr).unwrap();
        assert_eq!(out.swaps, 1);
        assert!(out.arrangement.is_worst_case());
        // Swap moved 0.35 from the poor config past the cap of the rich one:
        // totals become 0.75 and 1.5, values 0.75 + 1.0 vs 1.0 + 1.0 before.
        assert!((out.arrangement.expected_value() - 0.875).abs() < 1e-12);
        assert!(out.value_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        // Output sorted by descending total.
        assert!(out.arrangement.total(0) >= out.arrangement.total(1));
    }

    #[test]
    fn worsening_never_raises_expected_value_and_fixes_fact_one() {
        // A scrambled hand-built arrangement over three buckets.
        let prices = BTreeMap::from([(0, 1.0), (1, 0.8), (2, 0.5), (3, 0.4), (4, 0.3), (5, 0.1)]);
        let big: BTreeMap<usize, bool> = prices.keys().map(|&j| (j, j == 0)).collect();
        let configs = vec![
            vec![Some(2), Some(4), None],
            vec![Some(0), Some(5), None],
            vec![Some(1), Some(3), Some(4)],
            vec![Some(2), None, Some(3)],
        ];
        let arr = Arrangement::new(0, 1.0, prices, big, configs).unwrap();
        let before = arr.expected_value();
        let out = worsen_arrangement(&arr).unwrap();
        assert!(out.arrangement.expected_value() <= before + 1e-12);
        assert!(out.value_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(out.arrangement.is_worst_case());
        // Fact check: totals non-increasing, per-bucket prices non-increasing
        // down the sorted configs, and within configs across buckets.
        let a = &out.arrangement;
        for r in 0..a.copies() - 1 {
            assert!(a.total(r) >= a.total(r + 1) - 1e-12);
            for l in 0..a.n_buckets() {
                assert!(
                    a.slot_price(a.config(r)[l]) >= a.slot_price(a.config(r + 1)[l]) - 1e-12
                );
            }
        }
        for r in 0..a.copies() {
            for l in 0..a.n_buckets() - 1 {
                assert!(a.slot_price(a.config(r)[l]) >= a.slot_price(a.config(r)[l + 1]) - 1e-12);
            }
        }
    }

    #[test]
    fn canonical_player_stats_and_bound() {
        // Canonical: big at full budget with mass 1/2, smalls worth 1/2.
        let (sol, g) = graph_for(&[(1.0, 0.5), (0.25, 1.0), (0.25, 1.0)]);
        let arr = initial_arrangement(&g, 0, 1000).unwrap();
        let worsened = worsen_arrangement(&arr).unwrap().arrangement;
        let st = arrangement_stats(&worsened);
        assert!((st.alpha - 1.0).abs() < 1e-9);
        assert!(st.w >= 0.5 - 1e-9, "w = {}", st.w);
        assert!((st.expected_value - 0.75).abs() < 1e-9);
        // Identity: expected value = w * B + (1 - w) * gain.
        let gain = st.gain.unwrap();
        assert!((st.expected_value - (st.w * 1.0 + (1.0 - st.w) * gain)).abs() < 1e-9);
        // Chain where defined, plus the refined lower bound.
        let l = st.unused.unwrap();
        let lb = st.unused_big.unwrap();
        assert!(lb >= l - 1e-9);
        assert!(gain >= lb - 1e-9);
        let bound = bound_intermediate(1.0, st.alpha, st.w).unwrap();
        assert!(st.expected_value >= bound - 1e-9);
        // Discretization-slack comparison against the exact expectation.
        let dist = decompose_matchings(&g).unwrap();
        let ev = exact_expected_value(&dist);
        let slack = g.edges().len() as f64 * 1.0 / 1000.0;
        assert!(ev.per_player[0] >= st.expected_value - slack - 1e-9);
        let (players, _) = compute_stats(&sol);
        assert!((players[0].alpha - st.alpha).abs() < 0.02);
    }

    #[test]
    fn underfull_arrangement_has_no_losses() {
        let (_, g) = graph_for(&[(0.4, 0.5), (0.3, 0.5)]);
        let arr = initial_arrangement(&g, 0, 100).unwrap();
        let st = arrangement_stats(&arr);
        assert_eq!(st.w, 0.0);
        assert!(st.unused.is_none());
        assert!(st.unused_small.is_none());
        let gain = st.gain.unwrap();
        assert!((gain - st.expected_value).abs() < 1e-12);
    }

    #[test]
    fn intermediate_bound_holds_on_random_players() {
        for seed in 50..56 {
            let inst = gen_random_instance(seed, 3, 6, PriceModel::General).into_arc();
            let sol = solve_assignment_lp(&inst).unwrap();
            let g = build_bucket_graph(&sol);
            let dist = decompose_matchings(&g).unwrap();
            let ev = exact_expected_value(&dist);
            for i in 0..inst.n_players() {
                if g.player_buckets(i).is_empty() {
                    continue;
                }
                let d = 400;
                let arr = initial_arrangement(&g, i, d).unwrap();
                let out = worsen_arrangement(&arr).unwrap();
                let st = arrangement_stats(&out.arrangement);
                let bound = bound_intermediate(inst.budget(i), st.alpha, st.w).unwrap();
                assert!(
                    st.expected_value >= bound - 1e-9,
                    "seed {seed} player {i}: {} < {bound}",
                    st.expected_value
                );
                let maxp = inst.assignable(i).map(|(_, p)| p).fold(0.0, f64::max);
                let n_edges = g
                    .player_buckets(i)
                    .iter()
                    .map(|&b| g.bucket_fill(b).count())
                    .sum::<usize>();
                let slack = n_edges as f64 * maxp / d as f64;
                assert!(
                    ev.per_player[i] >= st.expected_value - slack - 1e-9,
                    "seed {seed} player {i}: exact {} < worsened {} - {slack}",
                    ev.per_player[i],
                    st.expected_value
                );
            }
        }
    }
}
