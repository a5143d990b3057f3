//! Randomized rounding of a fractional assignment with exact marginals.
//!
//! The pipeline is: build the *bucket graph* (each player gets
//! `ceil(total mass)` unit-capacity buckets, filled with their items in
//! non-increasing price order, the one overflowing item split across the
//! boundary), decompose that fractional bipartite matching into a convex
//! combination of integral matchings, then either evaluate the expected
//! capped value exactly over the combination or sample one matching.
//!
//! The decomposition guarantees `Pr[item j goes to player i] = x_ij`
//! exactly (up to 1e-9), which is what every lower-bound lemma in
//! [`crate::stats`] is stated against.
//!
//! Decomposition route: pad the bucket/item matrix to a doubly stochastic
//! square matrix with slack rows and columns, peel perfect matchings
//! Birkhoff-style, restrict each to real edges, then shrink the support with
//! a Caratheodory-style nullspace reduction.  The result has at most `|E|`
//! distinct nonempty matchings (plus possibly the empty matching, which is
//! unavoidable whenever some player's last bucket is underfull).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::instance::Allocation;
use crate::solution::AssignmentSolution;
use crate::{Error, Instance, ItemOrigin, Result};

/// Fractions below this are treated as zero throughout the module.
pub const EDGE_EPS: f64 = 1e-12;

/// One (bucket, item) edge of the bucket graph carrying `fraction` of the
/// item's mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub bucket: usize,
    pub item: usize,
    pub fraction: f64,
}

/// The bipartite bucket/item graph of one fractional solution.
#[derive(Debug, Clone)]
pub struct BucketGraph {
    instance: Arc<Instance>,
    origins: Vec<ItemOrigin>,
    /// bucket id -> (player, local bucket index).
    buckets: Vec<(usize, usize)>,
    /// player -> bucket ids, in local order.
    player_buckets: Vec<Vec<usize>>,
    edges: Vec<Edge>,
    /// bucket id -> edge indices in fill order (price desc, item asc).
    bucket_edges: Vec<Vec<usize>>,
}

/// Builds the bucket graph: per player, `k = ceil(total mass)` buckets,
/// items poured in (price desc, item index asc) order, the boundary item
/// split between consecutive buckets.
pub fn build_bucket_graph(sol: &AssignmentSolution) -> BucketGraph {
    let inst = sol.instance().clone();
    let mut g = BucketGraph {
        origins: sol.origins().to_vec(),
        buckets: Vec::new(),
        player_buckets: vec![Vec::new(); inst.n_players()],
        edges: Vec::new(),
        bucket_edges: Vec::new(),
        instance: inst,
    };
    let inst = sol.instance();
    for i in 0..inst.n_players() {
        let total: f64 = sol.player_support(i).map(|(_, v)| v).sum();
        if total <= EDGE_EPS {
            continue;
        }
        let k = ((total - 1e-9).ceil().max(1.0)) as usize;
        let mut items: Vec<(usize, f64, f64)> = sol
            .player_support(i)
            .map(|(j, v)| (j, inst.price(i, j).unwrap(), v))
            .collect();
        items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let first = g.buckets.len();
        for t in 0..k {
            g.player_buckets[i].push(g.buckets.len());
            g.buckets.push((i, t));
            g.bucket_edges.push(Vec::new());
        }
        let mut t = 0;
        let mut room = 1.0;
        for (j, _, x) in items {
            let mut v = x;
            while v > EDGE_EPS {
                if room <= EDGE_EPS {
                    if t + 1 >= k {
                        break; // float drift past the last bucket: <= 1e-9 dropped
                    }
                    t += 1;
                    room = 1.0;
                }
                let take = v.min(room);
                let b = first + t;
                g.bucket_edges[b].push(g.edges.len());
                g.edges.push(Edge { bucket: b, item: j, fraction: take });
                v -= take;
                room -= take;
            }
        }
    }
    g
}

impl BucketGraph {
    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn origins(&self) -> &[ItemOrigin] {
        &self.origins
    }

    pub fn n_buckets(&self) -> usize {
        self.buckets.len()
    }

    /// (player, local index) of a bucket.
    pub fn bucket(&self, b: usize) -> (usize, usize) {
        self.buckets[b]
    }

    pub fn player_buckets(&self, i: usize) -> &[usize] {
        &self.player_buckets[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges of one bucket in fill order.
    pub fn bucket_fill(&self, b: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.bucket_edges[b].iter().map(move |&e| &self.edges[e])
    }

    /// Checks the fractional-matching invariants; the decomposition refuses
    /// graphs that break them rather than producing garbage marginals.
    pub fn validate(&self) -> Result<()> {
        let mut item_mass: BTreeMap<usize, f64> = BTreeMap::new();
        for (b, ids) in self.bucket_edges.iter().enumerate() {
            let sum: f64 = ids.iter().map(|&e| self.edges[e].fraction).sum();
            if sum > 1.0 + 1e-9 {
                return Err(Error::Decomposition(format!("bucket {b} overfull: {sum}")));
            }
            let (i, t) = self.buckets[b];
            if t + 1 < self.player_buckets[i].len() && (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Decomposition(format!(
                    "non-final bucket {b} not full: {sum}"
                )));
            }
        }
        for e in &self.edges {
            if !(e.fraction > 0.0 && e.fraction.is_finite()) {
                return Err(Error::Decomposition(format!(
                    "edge ({}, {}) has fraction {}",
                    e.bucket, e.item, e.fraction
                )));
            }
            *item_mass.entry(e.item).or_insert(0.0) += e.fraction;
        }
        for (j, m) in item_mass {
            if m > 1.0 + 1e-9 {
                return Err(Error::Decomposition(format!("item {j} mass {m} > 1")));
            }
        }
        Ok(())
    }

    /// DOT rendering for debugging: bucket nodes on the left, item nodes on
    /// the right, edge labels are fractions.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph buckets {\n  rankdir=LR;\n");
        for (b, &(i, t)) in self.buckets.iter().enumerate() {
            let _ = writeln!(
                s,
                "  b{b} [label=\"{}#{t}\" shape=box];",
                self.instance.player_id(i)
            );
        }
        let mut seen = BTreeMap::new();
        for e in &self.edges {
            seen.entry(e.item).or_insert_with(|| {
                let fake = if self.origins[e.item] == ItemOrigin::Fake { " (fake)" } else { "" };
                format!("  j{} [label=\"{}{}\"];", e.item, self.instance.item_id(e.item), fake)
            });
        }
        for line in seen.values() {
            let _ = writeln!(s, "{line}");
        }
        for e in &self.edges {
            let _ = writeln!(s, "  b{} -- j{} [label=\"{:.4}\"];", e.bucket, e.item, e.fraction);
        }
        s.push_str("}\n");
        s
    }

    #[cfg(test)]
    fn raw(
        instance: Arc<Instance>,
        buckets: Vec<(usize, usize)>,
        edges: Vec<Edge>,
    ) -> BucketGraph {
        let mut player_buckets = vec![Vec::new(); instance.n_players()];
        for (b, &(i, _)) in buckets.iter().enumerate() {
            player_buckets[i].push(b);
        }
        let mut bucket_edges = vec![Vec::new(); buckets.len()];
        for (k, e) in edges.iter().enumerate() {
            bucket_edges[e.bucket].push(k);
        }
        let origins = vec![ItemOrigin::Real; instance.n_items()];
        BucketGraph { instance, origins, buckets, player_buckets, edges, bucket_edges }
    }
}

/// A convex combination of bucket-graph matchings whose per-edge marginals
/// reproduce the edge fractions exactly.
#[derive(Debug, Clone)]
pub struct MatchingDistribution {
    instance: Arc<Instance>,
    origins: Vec<ItemOrigin>,
    buckets: Vec<(usize, usize)>,
    /// (sorted (bucket, item) list, probability); the empty list is the
    /// empty matching.
    entries: Vec<(Vec<(usize, usize)>, f64)>,
}

impl MatchingDistribution {
    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[(usize, usize)], f64)> + '_ {
        self.entries.iter().map(|(m, l)| (m.as_slice(), *l))
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn nonempty_support_len(&self) -> usize {
        self.entries.iter().filter(|(m, _)| !m.is_empty()).count()
    }

    pub fn player_of_bucket(&self, b: usize) -> usize {
        self.buckets[b].0
    }

    /// Exact probability that item `j` lands on player `i`.
    pub fn pair_marginal(&self, i: usize, j: usize) -> f64 {
        self.entries
            .iter()
            .filter(|(m, _)| m.iter().any(|&(b, jj)| jj == j && self.buckets[b].0 == i))
            .map(|(_, l)| l)
            .sum()
    }

    /// Items a matching gives to each player, real and fake alike.
    fn player_items<'a>(&self, m: &'a [(usize, usize)]) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(b, j) in m {
            out.entry(self.buckets[b].0).or_default().push(j);
        }
        out
    }
}

/// Decomposes the graph's fractional matching into a distribution over
/// matchings.  Errors (naming the constraint) if the graph violates the
/// matching-polytope invariants, and on internal failure of the peeling.
pub fn decompose_matchings(g: &BucketGraph) -> Result<MatchingDistribution> {
    g.validate()?;
    let r = g.n_buckets();
    let mut items: Vec<usize> = g.edges().iter().map(|e| e.item).collect();
    items.sort_unstable();
    items.dedup();
    let col_of: BTreeMap<usize, usize> =
        items.iter().enumerate().map(|(t, &j)| (j, t)).collect();
    let c = items.len();
    if r == 0 || c == 0 {
        return Ok(MatchingDistribution {
            instance: g.instance().clone(),
            origins: g.origins().to_vec(),
            buckets: Vec::new(),
            entries: vec![(Vec::new(), 1.0)],
        });
    }

    // Pad to a doubly stochastic (r + c) x (c + r) matrix: items first,
    // then one slack column per bucket row; buckets first, then one slack
    // row per item column.  The bottom-right block is filled by the
    // northwest-corner rule.
    let n = r + c;
    let mut a = vec![vec![0.0f64; n]; n];
    for e in g.edges() {
        a[e.bucket][col_of[&e.item]] += e.fraction;
    }
    for b in 0..r {
        let sum: f64 = a[b][..c].iter().sum();
        a[b][c + b] = (1.0 - sum).max(0.0);
    }
    for t in 0..c {
        let sum: f64 = (0..r).map(|row| a[row][t]).sum();
        a[r + t][t] = (1.0 - sum).max(0.0);
    }
    let mut row_need: Vec<f64> = (0..c).map(|t| 1.0 - a[r + t][t]).collect();
    let mut col_need: Vec<f64> = (0..r).map(|b| 1.0 - a[b][c + b]).collect();
    let (mut u, mut w) = (0, 0);
    while u < c && w < r {
        let t = row_need[u].min(col_need[w]).max(0.0);
        if t > EDGE_EPS {
            a[r + u][c + w] += t;
        }
        row_need[u] -= t;
        col_need[w] -= t;
        if row_need[u] <= EDGE_EPS {
            u += 1;
        } else {
            w += 1;
        }
    }

    // Birkhoff peeling: repeatedly extract a perfect matching on the
    // positive support and subtract its minimum entry.  Every peel zeroes
    // at least one entry, so the support count bounds the iterations.
    let mut entries: BTreeMap<Vec<(usize, usize)>, f64> = BTreeMap::new();
    let support0 = a.iter().flatten().filter(|v| **v > 0.0).count();
    let mut peeled = 0.0;
    for _ in 0..support0 + n + 16 {
        let remaining: f64 = a.iter().flatten().sum();
        if remaining < 1e-10 * n as f64 {
            break;
        }
        let m = perfect_matching(&a).ok_or_else(|| {
            Error::Decomposition("no perfect matching on positive support".into())
        })?;
        let lam = m
            .iter()
            .enumerate()
            .map(|(row, &col)| a[row][col])
            .fold(f64::INFINITY, f64::min);
        if !(lam > 0.0) {
            return Err(Error::Decomposition("degenerate peel".into()));
        }
        let mut real: Vec<(usize, usize)> = (0..r)
            .filter(|&b| m[b] < c)
            .map(|b| (b, items[m[b]]))
            .collect();
        real.sort_unstable();
        *entries.entry(real).or_insert(0.0) += lam;
        peeled += lam;
        for (row, &col) in m.iter().enumerate() {
            a[row][col] -= lam;
            if a[row][col] < EDGE_EPS {
                a[row][col] = 0.0;
            }
        }
        if peeled >= 1.0 - 1e-12 {
            break;
        }
    }
    let total: f64 = entries.values().sum();
    if (total - 1.0).abs() > 1e-7 {
        return Err(Error::Decomposition(format!("peeled mass {total} != 1")));
    }
    let mut list: Vec<(Vec<(usize, usize)>, f64)> =
        entries.into_iter().map(|(m, l)| (m, l / total)).collect();

    reduce_support(g, &mut list)?;

    let dist = MatchingDistribution {
        instance: g.instance().clone(),
        origins: g.origins().to_vec(),
        buckets: (0..r).map(|b| g.bucket(b)).collect(),
        entries: list,
    };
    verify_marginals(g, &dist)?;
    Ok(dist)
}

/// Kuhn's augmenting-path perfect matching on the positive support of a
/// square matrix.  Returns row -> column.
fn perfect_matching(a: &[Vec<f64>]) -> Option<Vec<usize>> {
    let n = a.len();
    let adj: Vec<Vec<usize>> = a
        .iter()
        .map(|row| (0..n).filter(|&col| row[col] > 0.0).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; n]; // col -> row

    fn augment(
        row: usize,
        adj: &[Vec<usize>],
        owner: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        for &col in &adj[row] {
            if !visited[col] {
                visited[col] = true;
                if owner[col].is_none()
                    || augment(owner[col].unwrap(), adj, owner, visited)
                {
                    owner[col] = Some(row);
                    return true;
                }
            }
        }
        false
    }

    for row in 0..n {
        let mut visited = vec![false; n];
        if !augment(row, &adj, &mut owner, &mut visited) {
            return None;
        }
    }
    let mut m = vec![0; n];
    for (col, row) in owner.into_iter().enumerate() {
        m[row?] = col;
    }
    Some(m)
}

/// Caratheodory reduction: while more than `|E|` nonempty matchings carry
/// weight, find a linear dependence among their edge-indicator vectors and
/// move along it (choosing the direction whose total weight change is
/// non-positive, so the empty matching absorbs the difference) until one
/// nonempty weight hits zero.  Marginals are preserved exactly by
/// construction.
fn reduce_support(
    g: &BucketGraph,
    list: &mut Vec<(Vec<(usize, usize)>, f64)>,
) -> Result<()> {
    let edge_index: BTreeMap<(usize, usize), usize> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| ((e.bucket, e.item), k))
        .collect();
    let ne = edge_index.len();
    let guard = list.len() + 4;
    for _ in 0..guard {
        let nonempty: Vec<usize> = (0..list.len())
            .filter(|&k| !list[k].0.is_empty() && list[k].1 > 0.0)
            .collect();
        if nonempty.len() <= ne {
            break;
        }
        // Columns of `mat` are the edge-indicator vectors.
        let kk = nonempty.len();
        let mut mat = vec![vec![0.0f64; kk]; ne];
        for (col, &k) in nonempty.iter().enumerate() {
            for edge in &list[k].0 {
                let row = *edge_index.get(edge).ok_or_else(|| {
                    Error::Decomposition("matching uses an unknown edge".into())
                })?;
                mat[row][col] = 1.0;
            }
        }
        let mut dir = nullspace_vector(&mut mat, kk)
            .ok_or_else(|| Error::Decomposition("dependence not found".into()))?;
        if dir.iter().sum::<f64>() > 0.0 {
            for v in &mut dir {
                *v = -*v;
            }
        }
        // Largest step keeping all nonempty weights nonnegative.
        let mut step = f64::INFINITY;
        let mut argmin = None;
        for (col, &k) in nonempty.iter().enumerate() {
            if dir[col] < -1e-12 {
                let t = list[k].1 / -dir[col];
                if t < step {
                    step = t;
                    argmin = Some(k);
                }
            }
        }
        let argmin = argmin.ok_or_else(|| {
            Error::Decomposition("reduction direction is nonnegative".into())
        })?;
        let slack = -dir.iter().sum::<f64>() * step; // goes to the empty matching
        for (col, &k) in nonempty.iter().enumerate() {
            list[k].1 += step * dir[col];
        }
        list[argmin].1 = 0.0;
        if slack > 0.0 {
            if let Some(e) = list.iter_mut().find(|(m, _)| m.is_empty()) {
                e.1 += slack;
            } else {
                list.push((Vec::new(), slack));
            }
        }
        list.retain(|(_, l)| *l > 1e-15);
        list.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(())
}

/// One nonzero vector in the nullspace of an `rows x cols` matrix with
/// `cols > rank`, by Gaussian elimination with partial pivoting.  Consumes
/// the matrix.
fn nullspace_vector(mat: &mut [Vec<f64>], cols: usize) -> Option<Vec<f64>> {
    let rows = mat.len();
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; cols];
    let mut rank = 0;
    for col in 0..cols {
        if rank >= rows {
            break;
        }
        let (best, mag) = (rank..rows)
            .map(|r| (r, mat[r][col].abs()))
            .fold((rank, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if mag < 1e-9 {
            continue; // free column
        }
        mat.swap(rank, best);
        let p = mat[rank][col];
        for v in &mut mat[rank] {
            *v /= p;
        }
        for r in 0..rows {
            if r != rank && mat[r][col].abs() > 0.0 {
                let f = mat[r][col];
                for cc in 0..cols {
                    mat[r][cc] -= f * mat[rank][cc];
                }
            }
        }
        pivot_of_col[col] = Some(rank);
        rank += 1;
    }
    let free = (0..cols).find(|&c| pivot_of_col[c].is_none())?;
    let mut v = vec![0.0; cols];
    v[free] = 1.0;
    for col in 0..cols {
        if let Some(r) = pivot_of_col[col] {
            v[col] = -mat[r][free];
        }
    }
    Some(v)
}

fn verify_marginals(g: &BucketGraph, dist: &MatchingDistribution) -> Result<()> {
    let mut got: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut total = 0.0;
    for (m, l) in dist.entries() {
        total += l;
        for &e in m {
            *got.entry(e).or_insert(0.0) += l;
        }
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Decomposition(format!("probabilities sum to {total}")));
    }
    for e in g.edges() {
        let have = got.remove(&(e.bucket, e.item)).unwrap_or(0.0);
        if (have - e.fraction).abs() > 1e-9 {
            return Err(Error::Decomposition(format!(
                "edge ({}, {}) marginal {} != {}",
                e.bucket, e.item, have, e.fraction
            )));
        }
    }
    if let Some(((b, j), l)) = got.into_iter().next() {
        return Err(Error::Decomposition(format!(
            "matchings use non-edge ({b}, {j}) with mass {l}"
        )));
    }
    Ok(())
}

/// Expected capped value of the distribution, total and per player, in two
/// flavors: `*_real` counts only real items (fake bookkeeping items
/// stripped), the plain fields count everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedValue {
    pub total: f64,
    pub total_real: f64,
    pub per_player: Vec<f64>,
    pub per_player_real: Vec<f64>,
}

/// Evaluates the expectation exactly by enumerating the (small) support.
pub fn exact_expected_value(dist: &MatchingDistribution) -> ExpectedValue {
    let inst = dist.instance();
    let na = inst.n_players();
    let mut per = vec![0.0; na];
    let mut per_real = vec![0.0; na];
    for (m, l) in dist.entries() {
        for (i, js) in dist.player_items(m) {
            let b = inst.budget(i);
            let all: f64 = js.iter().map(|&j| inst.price(i, j).unwrap()).sum();
            let real: f64 = js
                .iter()
                .filter(|&&j| dist.origins[j] == ItemOrigin::Real)
                .map(|&j| inst.price(i, j).unwrap())
                .sum();
            per[i] += l * all.min(b);
            per_real[i] += l * real.min(b);
        }
    }
    ExpectedValue {
        total: per.iter().sum(),
        total_real: per_real.iter().sum(),
        per_player: per,
        per_player_real: per_real,
    }
}

/// One sampled matching: the real-item allocation plus a sidecar with the
/// fake items that were matched alongside it.
#[derive(Debug, Clone)]
pub struct SampledAllocation {
    pub allocation: Allocation,
    /// fake item -> player it landed on.
    pub fake_items: BTreeMap<usize, usize>,
    pub matching_index: usize,
    pub seed: u64,
}

/// Draws one matching (deterministically in `seed`) and splits it into the
/// real allocation and the fake sidecar.
pub fn sample_allocation(dist: &MatchingDistribution, seed: u64) -> Result<SampledAllocation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = dist.entries.len() - 1;
    for (k, (_, l)) in dist.entries.iter().enumerate() {
        acc += l;
        if u < acc {
            chosen = k;
            break;
        }
    }
    let (m, _) = &dist.entries[chosen];
    let mut fake_items = BTreeMap::new();
    let mut pairs = Vec::new();
    for &(b, j) in m {
        let i = dist.buckets[b].0;
        if dist.origins[j] == ItemOrigin::Fake {
            fake_items.insert(j, i);
        } else {
            pairs.push((j, i));
        }
    }
    Ok(SampledAllocation {
        allocation: Allocation::new(dist.instance(), pairs)?,
        fake_items,
        matching_index: chosen,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_gap_instance, gen_random_instance, Instance, PriceModel};
    use crate::lp::solve_assignment_lp;
    use crate::stats::{bound_alpha, compute_stats};

    fn one_player(prices_masses: &[(f64, f64)]) -> AssignmentSolution {
        let items: Vec<String> = (0..prices_masses.len()).map(|k| format!("j{k}")).collect();
        let item_refs: Vec<&str> = items.iter().map(|s| s.as_str()).collect();
        let prices: Vec<(&str, &str, f64)> = prices_masses
            .iter()
            .enumerate()
            .map(|(k, &(p, _))| ("a", item_refs[k], p))
            .collect();
        let inst = Instance::build(1.0 / 3.0, &[("a", 1.0)], &item_refs, &prices)
            .unwrap()
            .into_arc();
        AssignmentSolution::new(
            inst,
            prices_masses.iter().enumerate().map(|(k, &(_, x))| ((0, k), x)),
        )
        .unwrap()
    }

    #[test]
    fn fill_rule_splits_boundary_item() {
        // (price, mass) = (0.9, 0.6), (0.5, 0.6), (0.2, 0.3): two buckets,
        // the middle item split 0.4 / 0.2.
        let sol = one_player(&[(0.9, 0.6), (0.5, 0.6), (0.2, 0.3)]);
        let g = build_bucket_graph(&sol);
        assert_eq!(g.n_buckets(), 2);
        let b0: Vec<(usize, f64)> = g.bucket_fill(0).map(|e| (e.item, e.fraction)).collect();
        let b1: Vec<(usize, f64)> = g.bucket_fill(1).map(|e| (e.item, e.fraction)).collect();
        assert_eq!(b0.len(), 2);
        assert_eq!(b0[0].0, 0);
        assert!((b0[0].1 - 0.6).abs() < 1e-12);
        assert_eq!(b0[1].0, 1);
        assert!((b0[1].1 - 0.4).abs() < 1e-12);
        assert_eq!(b1[0].0, 1);
        assert!((b1[0].1 - 0.2).abs() < 1e-12);
        assert_eq!(b1[1].0, 2);
        assert!((b1[1].1 - 0.3).abs() < 1e-12);
        g.validate().unwrap();
    }

    #[test]
    fn single_full_item_is_one_edge() {
        let sol = one_player(&[(0.7, 1.0)]);
        let g = build_bucket_graph(&sol);
        assert_eq!(g.n_buckets(), 1);
        assert_eq!(g.edges().len(), 1);
        assert!((g.edges()[0].fraction - 1.0).abs() < 1e-12);
        let dist = decompose_matchings(&g).unwrap();
        assert_eq!(dist.support_len(), 1);
        let (m, l) = dist.entries().next().unwrap();
        assert_eq!(m, &[(0, 0)]);
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_price_tie_breaks_by_item_index() {
        let sol = one_player(&[(0.5, 0.5), (0.5, 0.5)]);
        let g = build_bucket_graph(&sol);
        assert_eq!(g.n_buckets(), 1);
        let order: Vec<usize> = g.bucket_fill(0).map(|e| e.item).collect();
        assert_eq!(order, vec![0, 1]);
    }

    #[test]
    fn bucket_prices_non_increasing() {
        let sol = one_player(&[(0.9, 0.8), (0.8, 0.5), (0.3, 0.9), (0.1, 0.4)]);
        let g = build_bucket_graph(&sol);
        let inst = sol.instance();
        for b in 0..g.n_buckets() {
            let lo = g.bucket_fill(b).map(|e| inst.price(0, e.item).unwrap()).fold(f64::INFINITY, f64::min);
            if b + 1 < g.n_buckets() {
                let hi_next = g
                    .bucket_fill(b + 1)
                    .map(|e| inst.price(0, e.item).unwrap())
                    .fold(0.0, f64::max);
                assert!(lo >= hi_next - 1e-12);
            }
        }
    }

    #[test]
    fn two_half_items_decompose_evenly() {
        let sol = one_player(&[(0.8, 0.5), (0.5, 0.5)]);
        let dist = decompose_matchings(&build_bucket_graph(&sol)).unwrap();
        assert_eq!(dist.nonempty_support_len(), 2);
        for (m, l) in dist.entries() {
            assert_eq!(m.len(), 1);
            assert!((l - 0.5).abs() < 1e-9);
        }
        // Expected value: half of min(1, 0.8) + half of min(1, 0.5).
        let ev = exact_expected_value(&dist);
        assert!((ev.total - 0.65).abs() < 1e-9);
    }

    #[test]
    fn averaging_example() {
        // One config worth 1.0 with prob 1/2, one worth 0.5: expectation 0.75.
        let sol = one_player(&[(1.0, 0.5), (0.5, 0.5)]);
        let ev = exact_expected_value(&decompose_matchings(&build_bucket_graph(&sol)).unwrap());
        assert!((ev.total - 0.75).abs() < 1e-9);
        assert_eq!(ev.total, ev.total_real);
    }

    #[test]
    fn gap_instance_marginals_and_expectation() {
        let inst = gen_gap_instance().into_arc();
        let sol = solve_assignment_lp(&inst).unwrap();
        let g = build_bucket_graph(&sol);
        let dist = decompose_matchings(&g).unwrap();
        for ((i, j), x) in sol.support() {
            assert!(
                (dist.pair_marginal(i, j) - x).abs() < 1e-9,
                "pair ({i}, {j}): {} vs {x}",
                dist.pair_marginal(i, j)
            );
        }
        assert!(dist.nonempty_support_len() <= g.edges().len());
        let ev = exact_expected_value(&dist);
        assert!((ev.total - 1.5).abs() < 1e-6, "expected 1.5, got {}", ev.total);
    }

    #[test]
    fn marginals_exact_on_random_lp_solutions() {
        for seed in 0..6 {
            let inst = gen_random_instance(seed, 4, 7, PriceModel::General).into_arc();
            let sol = solve_assignment_lp(&inst).unwrap();
            let g = build_bucket_graph(&sol);
            let dist = decompose_matchings(&g).unwrap();
            for ((i, j), x) in sol.support() {
                assert!(
                    (dist.pair_marginal(i, j) - x).abs() < 1e-9,
                    "seed {seed} pair ({i}, {j})"
                );
            }
            assert!(
                dist.nonempty_support_len() <= g.edges().len(),
                "seed {seed}: support {} > edges {}",
                dist.nonempty_support_len(),
                g.edges().len()
            );
        }
    }

    #[test]
    fn expectation_dominates_alpha_bound() {
        for seed in 30..36 {
            let inst = gen_random_instance(seed, 3, 6, PriceModel::General).into_arc();
            let sol = solve_assignment_lp(&inst).unwrap();
            let dist = decompose_matchings(&build_bucket_graph(&sol)).unwrap();
            let ev = exact_expected_value(&dist);
            let (players, _) = compute_stats(&sol);
            for (i, st) in players.iter().enumerate() {
                if st.value <= 0.0 {
                    continue;
                }
                let bound = bound_alpha(inst.budget(i), st.alpha).unwrap();
                assert!(
                    ev.per_player[i] >= bound - 1e-6,
                    "seed {seed} player {i}: {} < {}",
                    ev.per_player[i],
                    bound
                );
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_marginal_consistent() {
        let sol = one_player(&[(1.0, 0.5), (0.5, 0.5)]);
        let dist = decompose_matchings(&build_bucket_graph(&sol)).unwrap();
        let a = sample_allocation(&dist, 7).unwrap();
        let b = sample_allocation(&dist, 7).unwrap();
        assert_eq!(a.allocation.assignment(), b.allocation.assignment());
        let n = 4000;
        let hits = (0..n)
            .filter(|&s| {
                sample_allocation(&dist, s).unwrap().allocation.assignment().get(&0) == Some(&0)
            })
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() < 4.0 * (0.25f64 / n as f64).sqrt(), "freq {freq}");
    }

    #[test]
    fn fake_items_are_stripped_but_counted() {
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 1.0)],
            &["real", "pad"],
            &[("a", "real", 1.0), ("a", "pad", 1.0)],
        )
        .unwrap()
        .into_arc();
        let sol = AssignmentSolution::with_origins(
            inst,
            [((0, 0), 0.5), ((0, 1), 0.5)],
            vec![ItemOrigin::Real, ItemOrigin::Fake],
        )
        .unwrap();
        let dist = decompose_matchings(&build_bucket_graph(&sol)).unwrap();
        let ev = exact_expected_value(&dist);
        assert!((ev.total - 1.0).abs() < 1e-9);
        assert!((ev.total_real - 0.5).abs() < 1e-9);
        // Whatever is sampled, the fake item never reaches the allocation.
        for seed in 0..20 {
            let s = sample_allocation(&dist, seed).unwrap();
            assert!(!s.allocation.assignment().contains_key(&1));
            if !s.fake_items.is_empty() {
                assert_eq!(s.fake_items.get(&1), Some(&0));
            }
        }
    }

    #[test]
    fn invalid_graph_is_named() {
        let inst = Instance::build(
            1.0 / 3.0,
            &[("a", 1.0)],
            &["x", "y"],
            &[("a", "x", 0.5), ("a", "y", 0.5)],
        )
        .unwrap()
        .into_arc();
        let g = BucketGraph::raw(
            inst,
            vec![(0, 0)],
            vec![
                Edge { bucket: 0, item: 0, fraction: 0.8 },
                Edge { bucket: 0, item: 1, fraction: 0.8 },
            ],
        );
        let err = decompose_matchings(&g).unwrap_err();
        assert!(err.to_string().contains("overfull"), "{err}");
    }

    #[test]
    fn dot_dump_mentions_players_and_items() {
        let sol = one_player(&[(0.9, 0.6), (0.5, 0.6)]);
        let dot = build_bucket_graph(&sol).to_dot();
        assert!(dot.contains("a#0"));
        assert!(dot.contains("j0"));
        assert!(dot.starts_with("graph buckets {"));
    }
}
