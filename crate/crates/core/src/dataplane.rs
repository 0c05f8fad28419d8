//! Fluid data plane with strict hop-count priority.
//!
//! Real traffic is tracked as fluid parcels tagged with the tree they travel
//! on and the slot they were injected. At each link, parcels that are `h`
//! hops from their source form hop class `h`; lower classes are always
//! served first. Inside a class service is FIFO by injection slot, with
//! parcels injected in the same slot served proportionally. Served fluid
//! reaches the next links of its tree at the start of the following slot,
//! duplicated onto every child link, and counts as delivered when the link
//! ends at a receiver.

use std::collections::{BTreeMap, HashMap};

use twofloat::TwoFloat;

use crate::steiner::Tree;
use crate::topology::{LinkId, Network, NodeId};

pub type TreeId = usize;

/// Precomputed forwarding data for one (session, tree) pair.
#[derive(Debug, Clone)]
pub struct TreeInfo {
    pub session: usize,
    pub tree: Tree,
    /// Aligned with `tree.edges()`.
    depth: Vec<usize>,
    children: Vec<Vec<LinkId>>,
    /// Receiver index within the session, when the link ends at a receiver.
    delivers: Vec<Option<usize>>,
    /// Receivers at or below the head of each link.
    downstream: Vec<usize>,
    source_links: Vec<LinkId>,
    pub max_depth: usize,
}

impl TreeInfo {
    fn new(net: &Network, session: usize, receivers: &[NodeId], tree: Tree) -> Self {
        let edges = tree.edges();
        let pos = |e: LinkId| edges.binary_search(&e).expect("tree link");
        let mut children = vec![Vec::new(); edges.len()];
        let mut incoming: HashMap<NodeId, LinkId> = HashMap::new();
        for &e in edges {
            incoming.insert(net.link(e).head, e);
        }
        let mut source_links = Vec::new();
        for &e in edges {
            match incoming.get(&net.link(e).tail) {
                Some(&p) => children[pos(p)].push(e),
                None => source_links.push(e),
            }
        }
        let mut depth = vec![0; edges.len()];
        let mut stack: Vec<(LinkId, usize)> = source_links.iter().map(|&e| (e, 1)).collect();
        while let Some((e, d)) = stack.pop() {
            depth[pos(e)] = d;
            stack.extend(children[pos(e)].iter().map(|&c| (c, d + 1)));
        }
        let delivers: Vec<Option<usize>> = edges
            .iter()
            .map(|&e| receivers.iter().position(|&r| r == net.link(e).head))
            .collect();
        // deepest links first so children are counted before parents
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(depth[i]));
        let mut downstream = vec![0; edges.len()];
        for i in order {
            downstream[i] = delivers[i].is_some() as usize
                + children[i].iter().map(|&c| downstream[pos(c)]).sum::<usize>();
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        Self { session, tree, depth, children, delivers, downstream, source_links, max_depth }
    }

    fn index(&self, link: LinkId) -> usize {
        self.tree.edges().binary_search(&link).expect("tree link")
    }

    pub fn depth_of(&self, link: LinkId) -> usize {
        self.depth[self.index(link)]
    }

    pub fn downstream_receivers(&self, link: LinkId) -> usize {
        self.downstream[self.index(link)]
    }
}

/// Interns trees so parcels can carry a small id.
#[derive(Debug, Clone, Default)]
pub struct TreeRegistry {
    infos: Vec<TreeInfo>,
    index: HashMap<(usize, Tree), TreeId>,
}

impl TreeRegistry {
    pub fn intern(&mut self, net: &Network, session: usize, receivers: &[NodeId], tree: &Tree) -> TreeId {
        if let Some(&id) = self.index.get(&(session, tree.clone())) {
            return id;
        }
        let id = self.infos.len();
        self.infos.push(TreeInfo::new(net, session, receivers, tree.clone()));
        self.index.insert((session, tree.clone()), id);
        id
    }

    pub fn get(&self, id: TreeId) -> &TreeInfo {
        &self.infos[id]
    }

    pub fn len(&self) -> usize {
        self.infos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infos.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TreeInfo> {
        self.infos.iter()
    }
}

#[derive(Debug, Clone, Copy)]
struct Parcel {
    class: usize,
    injected: u64,
    tree: TreeId,
    amount: f64,
}

/// One hop class at one link. `total` is the authoritative backlog, kept in
/// double-double so long runs do not accumulate rounding drift; the cohorts
/// (injection slot -> parcels) say which trees the backlog belongs to.
#[derive(Debug, Clone)]
struct ClassQueue {
    total: TwoFloat,
    cohorts: BTreeMap<u64, Vec<(TreeId, f64)>>,
}

impl Default for ClassQueue {
    fn default() -> Self {
        Self { total: TwoFloat::from(0.0), cohorts: BTreeMap::new() }
    }
}

impl ClassQueue {
    fn parcels(&self) -> impl Iterator<Item = &(TreeId, f64)> {
        self.cohorts.values().flatten()
    }
}

#[derive(Debug, Clone)]
pub struct RealQueueState {
    /// `classes[e][h-1]`
    classes: Vec<Vec<ClassQueue>>,
    /// Fluid that will enter each link at the start of the next service.
    incoming: Vec<Vec<Parcel>>,
    /// Cumulative delivered chunks, `[session][receiver index]`.
    pub delivered: Vec<Vec<f64>>,
    pub delivered_by_tree: Vec<f64>,
    pub injected_by_tree: Vec<f64>,
}

/// Measurements of one forwarding step.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    /// `arrivals[e][h-1]`: fluid entering link `e` in hop class `h`.
    pub arrivals: Vec<Vec<f64>>,
    /// `backlog[e][h-1]`: class-`h` fluid left after service.
    pub backlog: Vec<Vec<f64>>,
    pub served: Vec<f64>,
}

impl RealQueueState {
    pub fn new(link_count: usize, receivers_per_session: &[usize]) -> Self {
        Self {
            classes: vec![Vec::new(); link_count],
            incoming: vec![Vec::new(); link_count],
            delivered: receivers_per_session.iter().map(|&r| vec![0.0; r]).collect(),
            delivered_by_tree: Vec::new(),
            injected_by_tree: Vec::new(),
        }
    }

    fn grow(&mut self, tree: TreeId) {
        if self.injected_by_tree.len() <= tree {
            self.injected_by_tree.resize(tree + 1, 0.0);
            self.delivered_by_tree.resize(tree + 1, 0.0);
        }
    }

    /// Total backlog per link (all classes), excluding fluid in transit.
    pub fn link_backlogs(&self) -> Vec<f64> {
        self.classes
            .iter()
            .map(|cls| cls.iter().map(|q| q.total.hi()).sum())
            .collect()
    }

    /// Duplication-aware accounting per tree: injected × receivers must equal
    /// delivered plus every in-flight parcel weighted by the receivers it
    /// still has to reach. Returns the largest absolute mismatch.
    pub fn conservation_error(&self, registry: &TreeRegistry, receivers_per_session: &[usize]) -> f64 {
        let mut pending = vec![0.0; self.injected_by_tree.len()];
        for (e, cls) in self.classes.iter().enumerate() {
            for q in cls {
                for (t, a) in q.parcels() {
                    pending[*t] += a * registry.get(*t).downstream_receivers(e) as f64;
                }
            }
        }
        for (e, parcels) in self.incoming.iter().enumerate() {
            for p in parcels {
                pending[p.tree] += p.amount * registry.get(p.tree).downstream_receivers(e) as f64;
            }
        }
        (0..pending.len())
            .map(|t| {
                let r = receivers_per_session[registry.get(t).session] as f64;
                (self.injected_by_tree[t] * r - self.delivered_by_tree[t] - pending[t]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Queues `amount` on every tree link leaving the source, hop class 1.
pub fn inject_real(rq: &mut RealQueueState, registry: &TreeRegistry, tree: TreeId, amount: f64, slot: u64) {
    if amount <= 0.0 {
        return;
    }
    rq.grow(tree);
    rq.injected_by_tree[tree] += amount;
    for &e in &registry.get(tree).source_links {
        rq.incoming[e].push(Parcel { class: 1, injected: slot, tree, amount });
    }
}

/// One slot of service: admit incoming fluid, serve up to `c_e` per link in
/// strict hop-class order, and forward or deliver what was served.
pub fn forward_step(
    rq: &mut RealQueueState,
    registry: &TreeRegistry,
    capacities: &[f64],
) -> StepReport {
    let links = capacities.len();
    let mut report = StepReport {
        arrivals: vec![Vec::new(); links],
        backlog: vec![Vec::new(); links],
        served: vec![0.0; links],
    };

    for e in 0..links {
        let arrivals = &mut report.arrivals[e];
        for p in std::mem::take(&mut rq.incoming[e]) {
            if rq.classes[e].len() < p.class {
                rq.classes[e].resize_with(p.class, ClassQueue::default);
            }
            if arrivals.len() < p.class {
                arrivals.resize(p.class, 0.0);
            }
            arrivals[p.class - 1] += p.amount;
            let cohort = rq.classes[e][p.class - 1].cohorts.entry(p.injected).or_default();
            match cohort.iter_mut().find(|(t, _)| *t == p.tree) {
                Some((_, a)) => *a += p.amount,
                None => cohort.push((p.tree, p.amount)),
            }
        }
        for (queue, &x) in rq.classes[e].iter_mut().zip(arrivals.iter()) {
            queue.total += x;
        }
    }

    let zero = TwoFloat::from(0.0);
    let mut forwarded: Vec<Parcel> = Vec::new();
    for e in 0..links {
        let mut budget = TwoFloat::from(capacities[e]);
        for (h, queue) in rq.classes[e].iter_mut().enumerate() {
            if budget <= zero {
                break;
            }
            if queue.total <= budget {
                budget -= queue.total;
                queue.total = zero;
                for (injected, parcels) in std::mem::take(&mut queue.cohorts) {
                    for (t, a) in parcels {
                        forwarded.push(Parcel { class: h + 1, injected, tree: t, amount: a });
                    }
                }
                continue;
            }
            queue.total -= budget;
            let mut left = budget.hi();
            budget = zero;
            while left > 0.0 {
                let Some(mut entry) = queue.cohorts.first_entry() else { break };
                let injected = *entry.key();
                let total: f64 = entry.get().iter().map(|(_, a)| a).sum();
                if total <= left {
                    left -= total;
                    for (t, a) in entry.remove() {
                        forwarded.push(Parcel { class: h + 1, injected, tree: t, amount: a });
                    }
                } else {
                    let frac = left / total;
                    for (t, a) in entry.get_mut() {
                        let take = *a * frac;
                        *a -= take;
                        forwarded.push(Parcel { class: h + 1, injected, tree: *t, amount: take });
                    }
                    left = 0.0;
                }
            }
        }
        report.served[e] = capacities[e] - budget.hi();
        report.backlog[e] = rq.classes[e].iter().map(|q| q.total.hi()).collect();

        for p in forwarded.drain(..) {
            let info = registry.get(p.tree);
            let i = info.index(e);
            if let Some(r) = info.delivers[i] {
                rq.delivered[info.session][r] += p.amount;
                rq.delivered_by_tree[p.tree] += p.amount;
            }
            for &c in &info.children[i] {
                rq.incoming[c].push(Parcel { class: p.class + 1, ..p });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_duplicates_chain_does_not() {
        let net = Network::with_node_count(3, [(0, 1, 10.0), (0, 2, 10.0), (1, 2, 10.0)]).unwrap();
        let mut reg = TreeRegistry::default();
        let star = reg.intern(&net, 0, &[1, 2], &Tree::new(0, vec![0, 1]));
        let chain = reg.intern(&net, 1, &[1, 2], &Tree::new(0, vec![0, 2]));
        assert_eq!(reg.get(chain).depth_of(2), 2);
        assert_eq!(reg.get(chain).downstream_receivers(0), 2);

        let mut rq = RealQueueState::new(3, &[2, 2]);
        inject_real(&mut rq, &reg, star, 0.0, 0);
        let r = forward_step(&mut rq, &reg, &net.capacities());
        assert!(r.arrivals.iter().all(|a| a.is_empty()));

        let mut rq = RealQueueState::new(3, &[2, 2]);
        inject_real(&mut rq, &reg, star, 5.0, 0);
        let r = forward_step(&mut rq, &reg, &net.capacities());
        assert_eq!(r.arrivals[0], vec![5.0]);
        assert_eq!(r.arrivals[1], vec![5.0]);
        assert!(r.arrivals[2].is_empty());

        let mut rq = RealQueueState::new(3, &[2, 2]);
        inject_real(&mut rq, &reg, chain, 5.0, 0);
        let r = forward_step(&mut rq, &reg, &net.capacities());
        assert_eq!(r.arrivals[0], vec![5.0]);
        assert!(r.arrivals[1].is_empty() && r.arrivals[2].is_empty());
        // next slot the fluid reaches the second hop
        let r = forward_step(&mut rq, &reg, &net.capacities());
        assert_eq!(r.arrivals[2], vec![0.0, 5.0]);
        assert_eq!(rq.delivered[1], vec![5.0, 5.0]);
    }

    #[test]
    fn strict_priority_arithmetic() {
        // link 1 (1->2) carries first-hop traffic of tree A and second-hop of tree B
        let net = Network::with_node_count(3, [(0, 1, 10.0), (1, 2, 3.0)]).unwrap();
        let mut reg = TreeRegistry::default();
        let a = reg.intern(&net, 0, &[2], &Tree::new(1, vec![1]));
        let b = reg.intern(&net, 1, &[2], &Tree::new(0, vec![0, 1]));
        let caps = net.capacities();
        let mut rq = RealQueueState::new(2, &[1, 1]);
        inject_real(&mut rq, &reg, b, 4.0, 0);
        forward_step(&mut rq, &reg, &caps);
        inject_real(&mut rq, &reg, a, 2.0, 1);
        let r = forward_step(&mut rq, &reg, &caps);
        assert_eq!(r.arrivals[1], vec![2.0, 4.0]);
        assert_eq!(r.backlog[1], vec![0.0, 3.0]);
        assert_eq!(r.served[1], 3.0);
        assert_eq!(rq.conservation_error(&reg, &[1, 1]), 0.0);
    }

    #[test]
    fn fifo_by_injection_slot_within_class() {
        let net = Network::with_node_count(2, [(0, 1, 1.0)]).unwrap();
        let mut reg = TreeRegistry::default();
        let t = reg.intern(&net, 0, &[1], &Tree::new(0, vec![0]));
        let u = reg.intern(&net, 1, &[1], &Tree::new(0, vec![0]));
        let mut rq = RealQueueState::new(1, &[1, 1]);
        inject_real(&mut rq, &reg, t, 2.0, 0);
        forward_step(&mut rq, &reg, &[1.0]);
        inject_real(&mut rq, &reg, u, 2.0, 1);
        forward_step(&mut rq, &reg, &[1.0]);
        // slot-0 fluid drains before any slot-1 fluid
        assert_eq!(rq.delivered, vec![vec![2.0], vec![0.0]]);
    }

    #[test]
    fn same_slot_parcels_split_proportionally() {
        let net = Network::with_node_count(2, [(0, 1, 1.0)]).unwrap();
        let mut reg = TreeRegistry::default();
        let t = reg.intern(&net, 0, &[1], &Tree::new(0, vec![0]));
        let u = reg.intern(&net, 1, &[1], &Tree::new(0, vec![0]));
        let mut rq = RealQueueState::new(1, &[1, 1]);
        inject_real(&mut rq, &reg, t, 3.0, 0);
        inject_real(&mut rq, &reg, u, 1.0, 0);
        forward_step(&mut rq, &reg, &[1.0]);
        assert_eq!(rq.delivered, vec![vec![0.75], vec![0.25]]);
    }
}
