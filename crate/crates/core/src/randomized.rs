//! Pick-and-compare randomized tree scheduling without regulators.
//!
//! Sources release every arrival immediately and signal the actual count.
//! Virtual queues are served at `c_e − ε₂`. Each slot a random candidate
//! tree is drawn and replaces the incumbent only if it is no more expensive.

use rand::Rng;

use crate::scenario::Params;
use crate::schedule::{DelayLine, Emission, ScheduleError, SelectionRecord, SlotOutput};
use crate::steiner::{bfs_tree, exact_min_tree, sample_random_tree, Instance, Sample, SteinerError, Tree};
use crate::topology::{Network, Session};

/// `q_e ← [q_e + Σ_{s: e∈t_s} A_s − (c_e − ε₂)]₊`. Returns the signaled
/// arrivals per link.
pub fn virtual_queue_step(
    q: &mut [f64],
    trees: &[Tree],
    arrivals: &[u64],
    capacities: &[f64],
    eps2: f64,
) -> Vec<f64> {
    let mut signaled = vec![0.0; q.len()];
    for (tree, &a) in trees.iter().zip(arrivals) {
        for &e in tree.edges() {
            signaled[e] += a as f64;
        }
    }
    for ((qe, a), c) in q.iter_mut().zip(&signaled).zip(capacities) {
        *qe = (*qe + a - (c - eps2)).max(0.0);
    }
    signaled
}

/// Pick stage: a random candidate that is the min-cost tree with
/// probability at least `delta` whenever the exact solver applies.
pub fn pick<R: Rng + ?Sized>(
    inst: &Instance,
    q: &[f64],
    rng: &mut R,
    delta: f64,
    max_exact_receivers: usize,
) -> Result<Sample, SteinerError> {
    sample_random_tree(inst, q, rng, delta, max_exact_receivers)
}

/// Compare stage: the candidate wins ties.
pub fn compare(candidate: Tree, previous: Tree, q: &[f64]) -> Tree {
    if candidate.cost(q) <= previous.cost(q) {
        candidate
    } else {
        previous
    }
}

#[derive(Debug, Clone)]
pub struct RandomizedState {
    pub q: Vec<f64>,
    pub trees: Vec<Tree>,
    pub slot: u64,
    delayed: DelayLine,
}

impl RandomizedState {
    /// Starts every session on its breadth-first tree.
    pub fn new(net: &Network, sessions: &[Session], params: &Params) -> Result<Self, ScheduleError> {
        let trees = sessions
            .iter()
            .map(|s| bfs_tree(&Instance::new(net, s.source, &s.receivers)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            q: vec![0.0; net.link_count()],
            trees,
            slot: 0,
            delayed: DelayLine::new(params.control_delay),
        })
    }
}

/// One slot: pick and compare, update virtual queues with the actual
/// arrivals, emit all arrivals on the selected trees.
pub fn randomized_slot<R: Rng + ?Sized>(
    state: &mut RandomizedState,
    arrivals: &[u64],
    net: &Network,
    sessions: &[Session],
    params: &Params,
    rng: &mut R,
) -> Result<SlotOutput, ScheduleError> {
    let view = state.delayed.observe(&state.q).to_vec();
    let mut records = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let inst = Instance::new(net, s.source, &s.receivers);
        let sample = pick(&inst, &view, rng, params.delta, params.max_exact_receivers)?;
        let candidate_cost = sample.tree.cost(&view);
        let previous = std::mem::replace(&mut state.trees[i], Tree::new(s.source, Vec::new()));
        let previous_cost = previous.cost(&view);
        let selected = compare(sample.tree, previous, &view);
        let cost = selected.cost(&view);
        let optimum = if params.measure_optimum {
            match exact_min_tree(&inst, &view, params.max_exact_receivers) {
                Ok(t) => Some(t.cost(&view)),
                Err(SteinerError::TooLarge { .. }) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        state.trees[i] = selected.clone();
        records.push(SelectionRecord {
            tree: selected,
            cost,
            optimum,
            ratio: optimum.map(|o| crate::steiner::cost_ratio(cost, o)),
            previous_cost: Some(previous_cost),
            candidate_cost: Some(candidate_cost),
            injected: sample.injected,
        });
    }

    let virtual_arrivals =
        virtual_queue_step(&mut state.q, &state.trees, arrivals, &net.capacities(), params.eps2);
    let emissions = sessions
        .iter()
        .enumerate()
        .map(|(i, s)| Emission { session: s.id, tree: state.trees[i].clone(), amount: arrivals[i] as f64 })
        .collect();
    state.slot += 1;
    Ok(SlotOutput { emissions, records, virtual_arrivals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Algorithm, Selector};
    use crate::topology::ArrivalKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reduced_service_arithmetic() {
        let mut q = vec![2.0, 0.0];
        let t = Tree::new(0, vec![0]);
        virtual_queue_step(&mut q, std::slice::from_ref(&t), &[4], &[3.0, 3.0], 0.5);
        assert_eq!(q, vec![3.5, 0.0]);
        let mut z = vec![0.0, 0.0];
        virtual_queue_step(&mut z, &[t], &[0], &[3.0, 3.0], 0.5);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn compare_accepts_ties_and_keeps_cheaper_incumbent() {
        let a = Tree::new(0, vec![0]);
        let b = Tree::new(0, vec![1]);
        assert_eq!(compare(a.clone(), b.clone(), &[2.0, 2.0]), a);
        assert_eq!(compare(a.clone(), b.clone(), &[3.0, 2.0]), b);
        assert_eq!(compare(a.clone(), b, &[1.0, 2.0]), a);
    }

    #[test]
    fn idle_network_keeps_queues_empty() {
        let net = Network::with_node_count(4, [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 1.0)])
            .unwrap();
        let sessions = vec![Session::new(0, 0, vec![3], ArrivalKind::Poisson, 0.0).unwrap()];
        let params = Params { algorithm: Algorithm::Randomized, selector: Selector::Random, ..Params::default() };
        let mut st = RandomizedState::new(&net, &sessions, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let out = randomized_slot(&mut st, &[0], &net, &sessions, &params, &mut rng).unwrap();
            assert!(st.q.iter().all(|&x| x == 0.0));
            assert_eq!(out.emissions[0].amount, 0.0);
            assert!(out.records[0].cost <= out.records[0].previous_cost.unwrap());
        }
    }
}
