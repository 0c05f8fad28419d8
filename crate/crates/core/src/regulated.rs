//! Regulated sources with γ-approximate min-cost tree scheduling.
//!
//! Each source owns a regulator queue that releases at most `λ_s + ε₁`
//! chunks per slot. Every link keeps a virtual queue fed by the constant
//! signaled rate `λ_s + ε₁` of each tree crossing it, and each source picks
//! a tree whose virtual-queue cost is within `γ` of the cheapest.

use crate::scenario::{Params, Selector};
use crate::schedule::{DelayLine, Emission, ScheduleError, SelectionRecord, SlotOutput};
use crate::steiner::{
    approx_min_tree, bfs_tree, cost_ratio, exact_min_tree, Instance, SteinerError, Tree,
};
use crate::topology::{Network, Session};

/// Chunks released from a regulator holding `backlog` when the release cap
/// is `cap` (= `λ_s + ε₁`).
pub fn regulator_release(backlog: f64, cap: f64) -> f64 {
    if backlog >= cap {
        cap
    } else {
        backlog
    }
}

/// `q_e ← [q_e + Σ_{s: e∈t_s} (λ_s + ε₁) − c_e]₊`. Returns the signaled
/// arrivals per link.
pub fn virtual_queue_step(
    q: &mut [f64],
    trees: &[Tree],
    virtual_rates: &[f64],
    capacities: &[f64],
) -> Vec<f64> {
    let mut arrivals = vec![0.0; q.len()];
    for (tree, &rate) in trees.iter().zip(virtual_rates) {
        for &e in tree.edges() {
            arrivals[e] += rate;
        }
    }
    for ((qe, a), c) in q.iter_mut().zip(&arrivals).zip(capacities) {
        *qe = (*qe + a - c).max(0.0);
    }
    arrivals
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub tree: Tree,
    pub cost: f64,
    pub optimum: Option<f64>,
    pub ratio: Option<f64>,
}

/// Picks a tree for one session under link costs `q`.
///
/// With `Selector::Exact` the ratio is 1 by construction. With an
/// approximation the exact optimum is also solved (when `measure` is set and
/// the instance is small enough) so the achieved ratio can be logged; in
/// strict mode a ratio above `gamma` is an error.
pub fn select_tree_gamma(
    inst: &Instance,
    q: &[f64],
    selector: Selector,
    gamma: f64,
    strict: bool,
    measure: bool,
    max_exact_receivers: usize,
) -> Result<Selection, ScheduleError> {
    match selector {
        Selector::Exact => {
            let tree = exact_min_tree(inst, q, max_exact_receivers)?;
            let cost = tree.cost(q);
            Ok(Selection { tree, cost, optimum: Some(cost), ratio: Some(1.0) })
        }
        Selector::Approx { level } => {
            let tree = approx_min_tree(inst, q, level)?;
            let cost = tree.cost(q);
            let optimum = if measure {
                match exact_min_tree(inst, q, max_exact_receivers) {
                    Ok(t) => Some(t.cost(q)),
                    Err(SteinerError::TooLarge { .. }) => None,
                    Err(e) => return Err(e.into()),
                }
            } else {
                None
            };
            let ratio = optimum.map(|opt| cost_ratio(cost, opt));
            if let Some(r) = ratio {
                if strict && r > gamma * (1.0 + 1e-12) {
                    return Err(ScheduleError::RatioViolation { session: usize::MAX, ratio: r, gamma });
                }
            }
            Ok(Selection { tree, cost, optimum, ratio })
        }
        Selector::Random => Err(ScheduleError::Config(
            "the regulated scheduler needs an exact or approximate selector".into(),
        )),
    }
}

/// Virtual queues, regulator backlogs and current trees.
#[derive(Debug, Clone)]
pub struct RegulatedState {
    pub q: Vec<f64>,
    pub backlog: Vec<f64>,
    pub trees: Vec<Tree>,
    pub slot: u64,
    /// Release of the last slot, per session.
    pub released: Vec<f64>,
    /// Backlog left right after the last release, before that slot's arrivals.
    pub residual: Vec<f64>,
    delayed: DelayLine,
}

impl RegulatedState {
    pub fn new(net: &Network, sessions: &[Session], params: &Params) -> Result<Self, ScheduleError> {
        let trees = sessions
            .iter()
            .map(|s| bfs_tree(&Instance::new(net, s.source, &s.receivers)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            q: vec![0.0; net.link_count()],
            backlog: vec![0.0; sessions.len()],
            trees,
            slot: 0,
            released: vec![0.0; sessions.len()],
            residual: vec![0.0; sessions.len()],
            delayed: DelayLine::new(params.control_delay),
        })
    }
}

/// One slot: select trees, release from the regulators, update the virtual
/// queues, emit the released traffic.
pub fn regulated_slot(
    state: &mut RegulatedState,
    arrivals: &[u64],
    net: &Network,
    sessions: &[Session],
    params: &Params,
) -> Result<SlotOutput, ScheduleError> {
    let view = state.delayed.observe(&state.q).to_vec();
    let mut records = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let inst = Instance::new(net, s.source, &s.receivers);
        let sel = select_tree_gamma(
            &inst,
            &view,
            params.selector,
            params.gamma,
            params.strict,
            params.measure_optimum,
            params.max_exact_receivers,
        )
        .map_err(|e| match e {
            ScheduleError::RatioViolation { ratio, gamma, .. } => {
                ScheduleError::RatioViolation { session: s.id, ratio, gamma }
            }
            other => other,
        })?;
        state.trees[i] = sel.tree.clone();
        records.push(SelectionRecord {
            tree: sel.tree,
            cost: sel.cost,
            optimum: sel.optimum,
            ratio: sel.ratio,
            previous_cost: None,
            candidate_cost: None,
            injected: false,
        });
    }

    let mut emissions = Vec::with_capacity(sessions.len());
    let mut virtual_rates = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let cap = s.rate + params.eps1;
        let release = regulator_release(state.backlog[i], cap);
        state.residual[i] = state.backlog[i] - release;
        state.backlog[i] = state.residual[i] + arrivals[i] as f64;
        state.released[i] = release;
        virtual_rates.push(cap);
        emissions.push(Emission { session: s.id, tree: state.trees[i].clone(), amount: release });
    }

    let virtual_arrivals =
        virtual_queue_step(&mut state.q, &state.trees, &virtual_rates, &net.capacities());
    state.slot += 1;
    Ok(SlotOutput { emissions, records, virtual_arrivals })
}
