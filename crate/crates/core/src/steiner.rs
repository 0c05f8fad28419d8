//! Directed Steiner trees: validation, an enumeration oracle, an exact
//! subset dynamic program, a bounded-level greedy approximation and a
//! cost-biased random sampler.
//!
//! Link costs are the virtual queue lengths. Internally every link also carries
//! a tie-break weight `2^id`, compared only when real costs are equal, so all
//! shortest paths and optimal trees are unique and runs are reproducible.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::Rng;
use smallvec::SmallVec;
use thiserror::Error;

use crate::topology::{LinkId, Network, NodeId};

pub const DEFAULT_MAX_ENUMERATION_NODES: usize = 8;
pub const DEFAULT_MAX_EXACT_RECEIVERS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteinerError {
    #[error("receivers not reachable from source: {0:?}")]
    Unreachable(Vec<NodeId>),
    #[error("instance too large: {what} is {size}, limit {limit}")]
    TooLarge { what: &'static str, size: usize, limit: usize },
    #[error("approximation level must be at least 1")]
    InvalidLevel,
    #[error("link {0}: cost must be finite and nonnegative")]
    BadCost(LinkId),
    #[error("cost vector has {got} entries, network has {expected} links")]
    CostLength { got: usize, expected: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("link {0} does not exist")]
    UnknownLink(LinkId),
    #[error("link {0} enters the root")]
    EntersRoot(LinkId),
    #[error("node {0} has more than one incoming tree link")]
    TwoParents(NodeId),
    #[error("link {0} is not connected to the root")]
    Detached(LinkId),
    #[error("receiver {0} is not covered")]
    Uncovered(NodeId),
    #[error("branch ending at node {0} serves no receiver")]
    Dangling(NodeId),
}

/// An out-arborescence given by its sorted link ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tree {
    root: NodeId,
    edges: Vec<LinkId>,
}

impl Tree {
    pub fn new(root: NodeId, mut edges: Vec<LinkId>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        Self { root, edges }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn edges(&self) -> &[LinkId] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, link: LinkId) -> bool {
        self.edges.binary_search(&link).is_ok()
    }

    pub fn cost(&self, q: &[f64]) -> f64 {
        tree_cost(self, q)
    }

    /// Checks the arborescence invariants: a single parent per node, every
    /// link connected to the root, every receiver covered, every leaf a
    /// receiver.
    pub fn check(&self, net: &Network, receivers: &[NodeId]) -> Result<(), TreeError> {
        let n = net.node_count();
        let mut parent: Vec<Option<LinkId>> = vec![None; n];
        let mut out_degree = vec![0usize; n];
        for &e in &self.edges {
            if e >= net.link_count() {
                return Err(TreeError::UnknownLink(e));
            }
            let link = net.link(e);
            if link.head == self.root {
                return Err(TreeError::EntersRoot(e));
            }
            if parent[link.head].replace(e).is_some() {
                return Err(TreeError::TwoParents(link.head));
            }
            out_degree[link.tail] += 1;
        }
        for &e in &self.edges {
            let mut node = net.link(e).tail;
            let mut steps = 0;
            while node != self.root {
                match parent[node] {
                    Some(p) if steps <= self.edges.len() => {
                        node = net.link(p).tail;
                        steps += 1;
                    }
                    _ => return Err(TreeError::Detached(e)),
                }
            }
        }
        for &r in receivers {
            if r != self.root && parent[r].is_none() {
                return Err(TreeError::Uncovered(r));
            }
        }
        for &e in &self.edges {
            let head = net.link(e).head;
            if out_degree[head] == 0 && !receivers.contains(&head) {
                return Err(TreeError::Dangling(head));
            }
        }
        Ok(())
    }

    /// Sorted edge ids separated by `;`.
    pub fn to_text(&self) -> String {
        self.edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(";")
    }
}

pub fn tree_cost(tree: &Tree, q: &[f64]) -> f64 {
    tree.edges.iter().map(|&e| q[e]).sum()
}

/// Root, receivers and the network they live in.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub net: &'a Network,
    pub source: NodeId,
    pub receivers: &'a [NodeId],
}

impl<'a> Instance<'a> {
    pub fn new(net: &'a Network, source: NodeId, receivers: &'a [NodeId]) -> Self {
        Self { net, source, receivers }
    }

    fn check_reachable(&self) -> Result<(), SteinerError> {
        let seen = self.net.reachable_from(self.source);
        let missing: Vec<NodeId> =
            self.receivers.iter().copied().filter(|&r| !seen[r]).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SteinerError::Unreachable(missing))
        }
    }

    fn check_costs(&self, q: &[f64]) -> Result<(), SteinerError> {
        if q.len() != self.net.link_count() {
            return Err(SteinerError::CostLength { got: q.len(), expected: self.net.link_count() });
        }
        match q.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            Some(e) => Err(SteinerError::BadCost(e)),
            None => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Composite costs

/// Real cost plus the sum of `2^id` over the links used (as a multi-word
/// integer). Ordered lexicographically.
#[derive(Debug, Clone, PartialEq)]
struct Cost {
    value: f64,
    key: SmallVec<[u64; 3]>,
}

impl Cost {
    fn zero(words: usize) -> Self {
        Self { value: 0.0, key: SmallVec::from_elem(0, words) }
    }

    fn of_link(link: LinkId, value: f64, words: usize) -> Self {
        let mut c = Self::zero(words);
        c.value = value;
        c.key[link / 64] = 1u64 << (link % 64);
        c
    }

    fn add(&self, other: &Cost) -> Cost {
        let mut key = SmallVec::with_capacity(self.key.len());
        let mut carry = false;
        for (a, b) in self.key.iter().zip(&other.key) {
            let (s1, c1) = a.overflowing_add(*b);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            key.push(s2);
            carry = c1 || c2;
        }
        Cost { value: self.value + other.value, key }
    }

    fn cmp(&self, other: &Cost) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| self.key.iter().rev().cmp(other.key.iter().rev()))
    }

    fn lt(&self, other: &Cost) -> bool {
        self.cmp(other) == Ordering::Less
    }
}

fn better(candidate: &Cost, incumbent: &Option<Cost>) -> bool {
    incumbent.as_ref().is_none_or(|c| candidate.lt(c))
}

/// All-pairs shortest paths under composite link costs.
struct Closure {
    n: usize,
    dist: Vec<Option<Cost>>,
    pred: Vec<Option<LinkId>>,
}

impl Closure {
    fn build(net: &Network, q: &[f64], allowed: Option<&[bool]>) -> Self {
        let n = net.node_count();
        let words = net.link_count() / 64 + 2;
        let link_cost: Vec<Cost> =
            (0..net.link_count()).map(|e| Cost::of_link(e, q[e], words)).collect();
        let mut dist = vec![None; n * n];
        let mut pred = vec![None; n * n];
        for src in 0..n {
            let row = src * n;
            let mut done = vec![false; n];
            dist[row + src] = Some(Cost::zero(words));
            loop {
                let mut pick: Option<NodeId> = None;
                for v in 0..n {
                    if done[v] {
                        continue;
                    }
                    if let Some(dv) = &dist[row + v] {
                        if pick.is_none_or(|p| dv.lt(dist[row + p].as_ref().unwrap())) {
                            pick = Some(v);
                        }
                    }
                }
                let Some(u) = pick else { break };
                done[u] = true;
                let du = dist[row + u].clone().unwrap();
                for &e in net.out_links(u) {
                    if allowed.is_some_and(|a| !a[e]) {
                        continue;
                    }
                    let v = net.link(e).head;
                    if done[v] {
                        continue;
                    }
                    let cand = du.add(&link_cost[e]);
                    if better(&cand, &dist[row + v]) {
                        dist[row + v] = Some(cand);
                        pred[row + v] = Some(e);
                    }
                }
            }
        }
        Self { n, dist, pred }
    }

    fn dist(&self, from: NodeId, to: NodeId) -> Option<&Cost> {
        self.dist[from * self.n + to].as_ref()
    }

    fn path(&self, net: &Network, from: NodeId, to: NodeId, out: &mut Vec<LinkId>) {
        let mut node = to;
        while node != from {
            let e = self.pred[from * self.n + node].expect("path exists");
            out.push(e);
            node = net.link(e).tail;
        }
    }
}

/// Shortest-path arborescence from the source inside the subgraph `edges`,
/// pruned to the receivers. Turns any covering link set into a valid tree
/// whose cost is no larger.
fn extract_tree(inst: &Instance, q: &[f64], edges: &[LinkId]) -> Tree {
    let mut allowed = vec![false; inst.net.link_count()];
    for &e in edges {
        allowed[e] = true;
    }
    let closure = Closure::build_from(inst.net, q, &allowed, inst.source);
    let mut out = Vec::new();
    for &r in inst.receivers {
        closure.path(inst.net, inst.source, r, &mut out);
    }
    Tree::new(inst.source, out)
}

impl Closure {
    /// Single-source variant of [`Closure::build`] restricted to `allowed`.
    fn build_from(net: &Network, q: &[f64], allowed: &[bool], src: NodeId) -> Self {
        // Shares the all-pairs layout; rows other than `src` stay empty.
        let n = net.node_count();
        let words = net.link_count() / 64 + 2;
        let mut dist = vec![None; n * n];
        let mut pred = vec![None; n * n];
        let row = src * n;
        let mut done = vec![false; n];
        dist[row + src] = Some(Cost::zero(words));
        loop {
            let mut pick: Option<NodeId> = None;
            for v in 0..n {
                if !done[v] {
                    if let Some(dv) = &dist[row + v] {
                        if pick.is_none_or(|p| dv.lt(dist[row + p].as_ref().unwrap())) {
                            pick = Some(v);
                        }
                    }
                }
            }
            let Some(u) = pick else { break };
            done[u] = true;
            let du = dist[row + u].clone().unwrap();
            for &e in net.out_links(u) {
                let v = net.link(e).head;
                if !allowed[e] || done[v] {
                    continue;
                }
                let cand = du.add(&Cost::of_link(e, q[e], words));
                if better(&cand, &dist[row + v]) {
                    dist[row + v] = Some(cand);
                    pred[row + v] = Some(e);
                }
            }
        }
        Self { n, dist, pred }
    }
}

// ---------------------------------------------------------------------------
// Enumeration oracle

/// Every minimal out-arborescence rooted at the source that covers all
/// receivers. Each tree is generated once: it is determined by its set of
/// Steiner nodes together with the parent link of every non-root node.
pub fn enumerate_trees(inst: &Instance, max_nodes: usize) -> Result<Vec<Tree>, SteinerError> {
    let net = inst.net;
    if net.node_count() > max_nodes {
        return Err(SteinerError::TooLarge {
            what: "node count",
            size: net.node_count(),
            limit: max_nodes,
        });
    }
    inst.check_reachable()?;
    let n = net.node_count();
    let helpers: Vec<NodeId> = (0..n)
        .filter(|&v| v != inst.source && !inst.receivers.contains(&v))
        .collect();

    let mut trees = Vec::new();
    for mask in 0u32..(1 << helpers.len()) {
        let mut members: Vec<NodeId> = inst.receivers.to_vec();
        members.extend(
            helpers.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &v)| v),
        );
        let mut in_tree = vec![false; n];
        in_tree[inst.source] = true;
        for &v in &members {
            in_tree[v] = true;
        }
        let options: Vec<Vec<LinkId>> = members
            .iter()
            .map(|&v| {
                net.in_links(v).iter().copied().filter(|&e| in_tree[net.link(e).tail]).collect()
            })
            .collect();
        if options.iter().any(|o| o.is_empty()) {
            continue;
        }
        let mut choice = vec![0usize; members.len()];
        'assignments: loop {
            let edges: Vec<LinkId> =
                choice.iter().zip(&options).map(|(&c, opts)| opts[c]).collect();
            let tree = Tree::new(inst.source, edges);
            if tree.check(net, inst.receivers).is_ok() {
                trees.push(tree);
            }
            // odometer increment
            for i in 0..choice.len() {
                choice[i] += 1;
                if choice[i] < options[i].len() {
                    continue 'assignments;
                }
                choice[i] = 0;
            }
            break;
        }
    }
    trees.sort();
    Ok(trees)
}

// ---------------------------------------------------------------------------
// Exact solver

/// Minimum-cost Steiner arborescence by dynamic programming over receiver
/// subsets on the shortest-path closure. Among trees of equal cost the one
/// whose edge ids, read from the largest down, are lexicographically
/// smallest is returned.
pub fn exact_min_tree(
    inst: &Instance,
    q: &[f64],
    max_receivers: usize,
) -> Result<Tree, SteinerError> {
    inst.check_costs(q)?;
    let r = inst.receivers.len();
    if r > max_receivers || r > 20 {
        return Err(SteinerError::TooLarge {
            what: "receiver count",
            size: r,
            limit: max_receivers.min(20),
        });
    }
    inst.check_reachable()?;
    let net = inst.net;
    let n = net.node_count();
    let closure = Closure::build(net, q, None);
    let words = net.link_count() / 64 + 2;

    let subsets = 1usize << r;
    let mut dp: Vec<Option<Cost>> = vec![None; subsets * n];
    let mut via = vec![0usize; subsets * n];
    let mut split = vec![0usize; subsets * n];
    let mut merged: Vec<Option<Cost>> = vec![None; n];
    let mut merged_split = vec![0usize; n];

    for mask in 1..subsets {
        merged.iter_mut().for_each(|m| *m = None);
        if mask.is_power_of_two() {
            let t = inst.receivers[mask.trailing_zeros() as usize];
            merged[t] = Some(Cost::zero(words));
        } else {
            let low = mask & mask.wrapping_neg();
            let mut sub = (mask - 1) & mask;
            while sub > 0 {
                if sub & low != 0 {
                    let rest = mask ^ sub;
                    for v in 0..n {
                        if let (Some(a), Some(b)) = (&dp[sub * n + v], &dp[rest * n + v]) {
                            let cand = a.add(b);
                            if better(&cand, &merged[v]) {
                                merged[v] = Some(cand);
                                merged_split[v] = sub;
                            }
                        }
                    }
                }
                sub = (sub - 1) & mask;
            }
        }
        for v in 0..n {
            let mut best: Option<Cost> = None;
            let mut best_u = v;
            for u in 0..n {
                if let (Some(d), Some(m)) = (closure.dist(v, u), &merged[u]) {
                    let cand = d.add(m);
                    if better(&cand, &best) {
                        best = Some(cand);
                        best_u = u;
                    }
                }
            }
            dp[mask * n + v] = best;
            via[mask * n + v] = best_u;
        }
        for u in 0..n {
            split[mask * n + u] = merged_split[u];
        }
    }

    let mut edges = Vec::new();
    let mut stack = vec![(subsets - 1, inst.source)];
    while let Some((mask, v)) = stack.pop() {
        let u = via[mask * n + v];
        closure.path(net, v, u, &mut edges);
        if !mask.is_power_of_two() {
            let sub = split[mask * n + u];
            stack.push((sub, u));
            stack.push((mask ^ sub, u));
        }
    }
    Ok(extract_tree(inst, q, &edges))
}

// ---------------------------------------------------------------------------
// Bounded-level greedy approximation

struct Bunch {
    cost: f64,
    covered: Vec<usize>,
    pairs: Vec<(NodeId, NodeId)>,
}

/// Level-`level` tree rooted at `root` covering (up to) `k` receivers from
/// `pool`, working on closure distances. Level 1 is a star of shortest paths;
/// higher levels greedily add the lowest-density sub-bunch.
fn bunch(
    closure: &Closure,
    receivers: &[NodeId],
    level: usize,
    k: usize,
    root: NodeId,
    pool: &[usize],
) -> Bunch {
    if level == 1 {
        let mut reach: Vec<(&Cost, usize)> = pool
            .iter()
            .filter_map(|&i| closure.dist(root, receivers[i]).map(|d| (d, i)))
            .collect();
        reach.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
        reach.truncate(k);
        return Bunch {
            cost: reach.iter().map(|(d, _)| d.value).sum(),
            covered: reach.iter().map(|&(_, i)| i).collect(),
            pairs: reach.iter().map(|&(_, i)| (root, receivers[i])).collect(),
        };
    }

    let mut out = Bunch { cost: 0.0, covered: Vec::new(), pairs: Vec::new() };
    let mut remaining = pool.to_vec();
    let mut need = k;
    while need > 0 && !remaining.is_empty() {
        // (density, covered, candidate)
        let mut best: Option<(f64, usize, Bunch, NodeId)> = None;
        for v in 0..closure.n {
            let Some(to_v) = closure.dist(root, v) else { continue };
            for kk in 1..=need {
                let sub = bunch(closure, receivers, level - 1, kk, v, &remaining);
                let covered = sub.covered.len();
                if covered == 0 {
                    continue;
                }
                let density = (to_v.value + sub.cost) / covered as f64;
                let wins = match &best {
                    None => true,
                    Some((d, c, _, _)) => density < *d || (density == *d && covered > *c),
                };
                if wins {
                    best = Some((density, covered, sub, v));
                }
                if covered < kk {
                    break;
                }
            }
        }
        let Some((_, covered, sub, v)) = best else { break };
        out.cost += closure.dist(root, v).unwrap().value + sub.cost;
        if v != root {
            out.pairs.push((root, v));
        }
        out.pairs.extend(sub.pairs);
        remaining.retain(|i| !sub.covered.contains(i));
        out.covered.extend(sub.covered);
        need -= covered;
    }
    out
}

/// Greedy level-`level` directed Steiner approximation (level 1 is the
/// shortest-path star). Always returns a valid tree; no optimality claim.
pub fn approx_min_tree(inst: &Instance, q: &[f64], level: usize) -> Result<Tree, SteinerError> {
    if level == 0 {
        return Err(SteinerError::InvalidLevel);
    }
    inst.check_costs(q)?;
    inst.check_reachable()?;
    let closure = Closure::build(inst.net, q, None);
    let pool: Vec<usize> = (0..inst.receivers.len()).collect();
    let b = bunch(&closure, inst.receivers, level, pool.len(), inst.source, &pool);
    debug_assert_eq!(b.covered.len(), pool.len());
    let mut edges = Vec::new();
    for (from, to) in b.pairs {
        closure.path(inst.net, from, to, &mut edges);
    }
    Ok(extract_tree(inst, q, &edges))
}

/// Ratio of two tree costs, with `0/0 = 1`.
pub fn cost_ratio(cost: f64, optimum: f64) -> f64 {
    if optimum > 0.0 {
        cost / optimum
    } else if cost <= 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

// ---------------------------------------------------------------------------
// Randomized sampling

/// Result of [`sample_random_tree`].
#[derive(Debug, Clone)]
pub struct Sample {
    pub tree: Tree,
    /// The min-cost injection branch was taken.
    pub injected: bool,
    /// The injected tree came from the exact solver rather than the
    /// approximation fallback.
    pub exact: bool,
}

/// With probability `delta` returns the exact minimum tree (or the level-2
/// approximation when the instance exceeds `max_exact_receivers`). Otherwise
/// grows a tree from the source by repeated breadth-first scans, admitting
/// each frontier link with probability proportional to `1/(1+q_e)`.
pub fn sample_random_tree<R: Rng + ?Sized>(
    inst: &Instance,
    q: &[f64],
    rng: &mut R,
    delta: f64,
    max_exact_receivers: usize,
) -> Result<Sample, SteinerError> {
    inst.check_costs(q)?;
    inst.check_reachable()?;
    if delta > 0.0 && rng.random::<f64>() < delta {
        return match exact_min_tree(inst, q, max_exact_receivers) {
            Ok(tree) => Ok(Sample { tree, injected: true, exact: true }),
            Err(SteinerError::TooLarge { .. }) => Ok(Sample {
                tree: approx_min_tree(inst, q, 2)?,
                injected: true,
                exact: false,
            }),
            Err(e) => Err(e),
        };
    }

    let net = inst.net;
    let n = net.node_count();
    let mut parent: Vec<Option<LinkId>> = vec![None; n];
    let mut reached = vec![false; n];
    reached[inst.source] = true;
    let mut order = vec![inst.source];
    let all_reached = |reached: &[bool]| inst.receivers.iter().all(|&r| reached[r]);

    while !all_reached(&reached) {
        // Normalize so the cheapest frontier link of this pass is always
        // admitted; relative admission odds stay 1/(1+q_e).
        let floor = order
            .iter()
            .flat_map(|&u| net.out_links(u))
            .filter(|&&e| !reached[net.link(e).head])
            .map(|&e| q[e])
            .fold(f64::INFINITY, f64::min);
        let mut i = 0;
        while i < order.len() {
            let u = order[i];
            for &e in net.out_links(u) {
                let v = net.link(e).head;
                // a link into an already reached node would close a loop
                // or give it a second parent
                if reached[v] {
                    continue;
                }
                let p = (1.0 + floor) / (1.0 + q[e]);
                if p >= 1.0 || rng.random::<f64>() < p {
                    reached[v] = true;
                    parent[v] = Some(e);
                    order.push(v);
                }
            }
            i += 1;
        }
    }

    let mut edges = Vec::new();
    let mut kept = vec![false; n];
    for &r in inst.receivers {
        let mut v = r;
        while let Some(e) = parent[v] {
            if kept[v] {
                break;
            }
            kept[v] = true;
            edges.push(e);
            v = net.link(e).tail;
        }
    }
    Ok(Sample { tree: Tree::new(inst.source, edges), injected: false, exact: false })
}

/// Breadth-first tree from the source (link order), pruned to the receivers.
pub fn bfs_tree(inst: &Instance) -> Result<Tree, SteinerError> {
    inst.check_reachable()?;
    let net = inst.net;
    let mut parent: Vec<Option<LinkId>> = vec![None; net.node_count()];
    let mut seen = vec![false; net.node_count()];
    seen[inst.source] = true;
    let mut queue = VecDeque::from([inst.source]);
    while let Some(u) = queue.pop_front() {
        for &e in net.out_links(u) {
            let v = net.link(e).head;
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(e);
                queue.push_back(v);
            }
        }
    }
    let mut edges = Vec::new();
    let mut kept = vec![false; net.node_count()];
    for &r in inst.receivers {
        let mut v = r;
        while let Some(e) = parent[v] {
            if kept[v] {
                break;
            }
            kept[v] = true;
            edges.push(e);
            v = net.link(e).tail;
        }
    }
    Ok(Tree::new(inst.source, edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::load_topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k4() -> Network {
        let mut s = String::new();
        for a in 1..=4 {
            for b in 1..=4 {
                if a != b {
                    s.push_str(&format!("{a} {b} 1\n"));
                }
            }
        }
        load_topology(&s).unwrap()
    }

    fn path3() -> Network {
        Network::with_node_count(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn cost_sums_tree_links() {
        let net = path3();
        let t = Tree::new(0, vec![0, 1]);
        assert_eq!(tree_cost(&t, &[0.0, 0.0]), 0.0);
        assert_eq!(tree_cost(&t, &[3.0, 4.0]), 7.0);
        assert!(t.check(&net, &[2]).is_ok());
    }

    #[test]
    fn check_rejects_malformed_trees() {
        let net = Network::with_node_count(4, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (2, 3, 1.0), (3, 2, 1.0)])
            .unwrap();
        assert_eq!(Tree::new(0, vec![0, 1, 2]).check(&net, &[2]), Err(TreeError::TwoParents(2)));
        assert_eq!(Tree::new(0, vec![2, 3]).check(&net, &[2]), Err(TreeError::Dangling(3)));
        assert_eq!(Tree::new(0, vec![0]).check(&net, &[2]), Err(TreeError::Uncovered(2)));
        assert_eq!(Tree::new(0, vec![3, 4]).check(&net, &[2, 3]), Err(TreeError::Detached(3)));
    }

    #[test]
    fn path_has_single_tree() {
        let net = path3();
        let trees = enumerate_trees(&Instance::new(&net, 0, &[2]), 8).unwrap();
        assert_eq!(trees, vec![Tree::new(0, vec![0, 1])]);
    }

    #[test]
    fn enumeration_refuses_large_graphs() {
        let links: Vec<_> = (0..9).map(|i| (i, i + 1, 1.0)).collect();
        let net = Network::with_node_count(10, links).unwrap();
        assert!(matches!(
            enumerate_trees(&Instance::new(&net, 0, &[9]), 8),
            Err(SteinerError::TooLarge { .. })
        ));
    }

    #[test]
    fn helper_node_optional_in_enumeration() {
        let net = k4();
        let (s, helper) = (net.resolve("1").unwrap(), net.resolve("4").unwrap());
        let recv = [net.resolve("2").unwrap(), net.resolve("3").unwrap()];
        let trees = enumerate_trees(&Instance::new(&net, s, &recv), 8).unwrap();
        let touches = |t: &Tree| t.edges().iter().any(|&e| net.link(e).head == helper);
        assert!(trees.iter().any(touches));
        assert!(trees.iter().any(|t| !touches(t)));
    }

    #[test]
    fn zero_costs_give_zero_cost_trees() {
        let net = k4();
        let recv = [1, 2];
        let inst = Instance::new(&net, 0, &recv);
        let q = vec![0.0; net.link_count()];
        let exact = exact_min_tree(&inst, &q, 12).unwrap();
        assert_eq!(exact.cost(&q), 0.0);
        exact.check(&net, &recv).unwrap();
        let approx = approx_min_tree(&inst, &q, 2).unwrap();
        assert_eq!(approx.cost(&q), 0.0);
        approx.check(&net, &recv).unwrap();
    }

    #[test]
    fn single_receiver_is_shortest_path() {
        // 0->1->3 costs 2, 0->2->3 costs 3, 0->3 costs 5
        let net = Network::with_node_count(
            4,
            [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)],
        )
        .unwrap();
        let q = [1.0, 1.0, 1.5, 1.5, 5.0];
        let inst = Instance::new(&net, 0, &[3]);
        assert_eq!(exact_min_tree(&inst, &q, 12).unwrap().edges(), &[0, 1]);
        assert_eq!(approx_min_tree(&inst, &q, 1).unwrap().edges(), &[0, 1]);
    }

    #[test]
    fn exact_uses_steiner_node_when_cheaper() {
        // source 0, receivers 2,3; via helper 1 costs 1+0+0, direct costs 2+2
        let net = Network::with_node_count(
            4,
            [(0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0), (0, 2, 1.0), (0, 3, 1.0)],
        )
        .unwrap();
        let q = [1.0, 0.0, 0.0, 2.0, 2.0];
        let t = exact_min_tree(&Instance::new(&net, 0, &[2, 3]), &q, 12).unwrap();
        assert_eq!(t.edges(), &[0, 1, 2]);
        assert_eq!(t.cost(&q), 1.0);
    }

    #[test]
    fn exact_ties_prefer_low_ids() {
        // two parallel two-hop routes with equal cost
        let net = Network::with_node_count(4, [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 1.0)])
            .unwrap();
        let q = [1.0; 4];
        let t = exact_min_tree(&Instance::new(&net, 0, &[3]), &q, 12).unwrap();
        assert_eq!(t.edges(), &[0, 1]);
    }

    #[test]
    fn unreachable_receivers_error() {
        let net = Network::with_node_count(3, [(0, 1, 1.0)]).unwrap();
        let inst = Instance::new(&net, 0, &[2]);
        let q = [0.0];
        assert_eq!(exact_min_tree(&inst, &q, 12), Err(SteinerError::Unreachable(vec![2])));
        assert_eq!(approx_min_tree(&inst, &q, 2), Err(SteinerError::Unreachable(vec![2])));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_random_tree(&inst, &q, &mut rng, 0.5, 12).is_err());
    }

    #[test]
    fn bad_costs_rejected() {
        let net = path3();
        let inst = Instance::new(&net, 0, &[2]);
        assert_eq!(exact_min_tree(&inst, &[0.0, -1.0], 12), Err(SteinerError::BadCost(1)));
        assert!(matches!(
            exact_min_tree(&inst, &[0.0], 12),
            Err(SteinerError::CostLength { .. })
        ));
        assert_eq!(approx_min_tree(&inst, &[0.0, 0.0], 0), Err(SteinerError::InvalidLevel));
    }

    #[test]
    fn full_injection_always_returns_exact() {
        let net = k4();
        let recv = [1, 2];
        let inst = Instance::new(&net, 0, &recv);
        let q: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64).collect();
        let exact = exact_min_tree(&inst, &q, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = sample_random_tree(&inst, &q, &mut rng, 1.0, 12).unwrap();
            assert!(s.injected && s.exact);
            assert_eq!(s.tree, exact);
        }
    }

    #[test]
    fn random_trees_are_valid_with_uniform_bias() {
        let net = k4();
        let recv = [1, 2];
        let inst = Instance::new(&net, 0, &recv);
        let q = vec![0.0; 12];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let s = sample_random_tree(&inst, &q, &mut rng, 0.0, 12).unwrap();
            assert!(!s.injected);
            s.tree.check(&net, &recv).unwrap();
        }
    }

    #[test]
    fn bfs_tree_is_valid() {
        let net = k4();
        let recv = [1, 2];
        let t = bfs_tree(&Instance::new(&net, 0, &recv)).unwrap();
        t.check(&net, &recv).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(cost_ratio(0.0, 0.0), 1.0);
        assert_eq!(cost_ratio(3.0, 2.0), 1.5);
        assert!(cost_ratio(1.0, 0.0).is_infinite());
    }
}
