//! The slotted simulation loop.
//!
//! Each slot: draw arrivals, let the scheduler pick trees and release
//! traffic, inject the released fluid, forward one slot of service, record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::dataplane::{forward_step, inject_real, RealQueueState, TreeRegistry};
use crate::metrics::{LinkMeta, MetricsLog, RunMeta, SelectionEntry, SessionMeta};
use crate::randomized::{randomized_slot, RandomizedState};
use crate::regulated::{regulated_slot, RegulatedState};
use crate::scenario::{Algorithm, Scenario};
use crate::schedule::{ScheduleError, SlotOutput};
use crate::topology::ArrivalKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("slot {slot}: flow conservation broken by {error}")]
    Conservation { slot: usize, error: f64 },
}

/// Per-session arrival generator.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    pub kind: ArrivalKind,
    pub mean: f64,
    /// Rng stream the engine dedicates to this session.
    pub stream: u64,
    slot: u64,
    poisson: Option<Poisson<f64>>,
}

impl ArrivalProcess {
    pub fn new(kind: ArrivalKind, mean: f64, stream: u64) -> Self {
        let poisson = match kind {
            ArrivalKind::Poisson if mean > 0.0 => Poisson::new(mean).ok(),
            _ => None,
        };
        Self { kind, mean, stream, slot: 0, poisson }
    }
}

/// Arrivals for the next slot. The deterministic kind spreads the fractional
/// part so that the first `k` slots bring exactly `⌊kλ⌋` chunks.
pub fn draw_arrivals<R: Rng + ?Sized>(proc: &mut ArrivalProcess, rng: &mut R) -> u64 {
    let k = proc.slot;
    proc.slot += 1;
    match proc.kind {
        ArrivalKind::Deterministic => {
            ((k + 1) as f64 * proc.mean).floor() as u64 - (k as f64 * proc.mean).floor() as u64
        }
        ArrivalKind::Poisson => proc.poisson.as_ref().map_or(0, |p| p.sample(rng) as u64),
    }
}

/// Rng for stream `stream` of a run seeded with `seed`. Stream 0 belongs to
/// the scheduler, stream `1 + s` to session `s`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

enum Scheduler {
    Regulated(RegulatedState),
    Randomized(RandomizedState),
}

const CONSERVATION_TOLERANCE: f64 = 1e-9;
const CONSERVATION_EVERY: usize = 1024;

pub fn run_meta(sc: &Scenario) -> RunMeta {
    let net = &sc.net;
    let p = &sc.params;
    RunMeta {
        scenario_hash: sc.hash(),
        seed: p.seed,
        algorithm: p.algorithm.to_string(),
        selector: p.selector.to_string(),
        slots: p.slots,
        slot_seconds: p.slot_seconds,
        node_count: net.node_count(),
        links: net
            .links()
            .iter()
            .map(|l| LinkMeta {
                tail: net.label(l.tail).to_string(),
                head: net.label(l.head).to_string(),
                capacity: l.capacity,
            })
            .collect(),
        sessions: sc
            .sessions
            .iter()
            .map(|s| SessionMeta {
                id: s.id,
                source: net.label(s.source).to_string(),
                receivers: s.receivers.iter().map(|&r| net.label(r).to_string()).collect(),
                rate: s.rate,
            })
            .collect(),
        deviations: vec![
            "signaling traffic does not consume data-plane capacity".into(),
            "data plane is fluid: parcels split across slots".into(),
        ],
    }
}

/// Runs the scenario for `params.slots` slots. Deterministic in the seed.
pub fn run(sc: &Scenario) -> Result<MetricsLog, EngineError> {
    let net = &sc.net;
    let p = &sc.params;
    let sessions = &sc.sessions;
    let caps = net.capacities();
    let links = net.link_count();
    let classes = net.node_count().saturating_sub(1).max(1);
    let receivers: Vec<usize> = sessions.iter().map(|s| s.receivers.len()).collect();

    let mut log = MetricsLog::empty(run_meta(sc), p.hop_classes.then_some(classes));
    let mut rng = stream_rng(p.seed, 0);
    let mut arrival_rngs: Vec<ChaCha8Rng> = (0..sessions.len()).map(|s| stream_rng(p.seed, 1 + s as u64)).collect();
    let mut procs: Vec<ArrivalProcess> = sessions
        .iter()
        .enumerate()
        .map(|(i, s)| ArrivalProcess::new(s.arrival, s.rate, 1 + i as u64))
        .collect();
    let mut sched = match p.algorithm {
        Algorithm::Regulated => Scheduler::Regulated(RegulatedState::new(net, sessions, p)?),
        Algorithm::Randomized => Scheduler::Randomized(RandomizedState::new(net, sessions, p)?),
    };
    let mut registry = TreeRegistry::default();
    let mut rq = RealQueueState::new(links, &receivers);
    let mut arrivals = vec![0u64; sessions.len()];
    let mut row = vec![0.0; classes];

    for k in 0..p.slots {
        for (i, (proc, r)) in procs.iter_mut().zip(&mut arrival_rngs).enumerate() {
            arrivals[i] = draw_arrivals(proc, r);
        }
        let out: SlotOutput = match &mut sched {
            Scheduler::Regulated(st) => regulated_slot(st, &arrivals, net, sessions, p)?,
            Scheduler::Randomized(st) => randomized_slot(st, &arrivals, net, sessions, p, &mut rng)?,
        };
        let mut entries = Vec::with_capacity(sessions.len());
        for (i, (em, rec)) in out.emissions.iter().zip(&out.records).enumerate() {
            let s = &sessions[i];
            let id = registry.intern(net, i, &s.receivers, &em.tree);
            inject_real(&mut rq, &registry, id, em.amount, k as u64);
            entries.push(SelectionEntry {
                tree: id,
                cost: rec.cost,
                optimum: rec.optimum,
                ratio: rec.ratio,
                previous_cost: rec.previous_cost,
                candidate_cost: rec.candidate_cost,
                injected: rec.injected,
                candidate_min: rec.candidate_was_min(),
            });
        }
        let step = forward_step(&mut rq, &registry, &caps);

        let (q, backlog, released, residual) = match &sched {
            Scheduler::Regulated(st) => (&st.q, st.backlog.clone(), st.released.clone(), st.residual.clone()),
            Scheduler::Randomized(st) => {
                let a: Vec<f64> = arrivals.iter().map(|&a| a as f64).collect();
                (&st.q, vec![0.0; sessions.len()], a, vec![0.0; sessions.len()])
            }
        };
        log.virtual_queues.push(q);
        log.real_queues.push(&step.backlog.iter().map(|b| b.iter().sum()).collect::<Vec<f64>>());
        log.virtual_arrivals.push(&out.virtual_arrivals);
        log.link_arrivals.push(&step.arrivals.iter().map(|a| a.iter().sum()).collect::<Vec<f64>>());
        log.link_service.push(&step.served);
        log.regulators.push(&backlog);
        log.residuals.push(&residual);
        log.releases.push(&released);
        log.arrivals.push(&arrivals.iter().map(|&a| a as f64).collect::<Vec<_>>());
        log.delivered.push(&rq.delivered.concat());
        log.selections.push(entries);

        if let Some(hops) = &mut log.hops {
            for e in 0..links {
                row.fill(0.0);
                row[..step.arrivals[e].len()].copy_from_slice(&step.arrivals[e]);
                hops.arrivals[e].push(&row);
                let mut acc = 0.0;
                for h in 0..classes {
                    acc += step.backlog[e].get(h).copied().unwrap_or(0.0);
                    row[h] = acc;
                }
                hops.backlogs[e].push(&row);
            }
        }

        if (k + 1) % CONSERVATION_EVERY == 0 || k + 1 == p.slots {
            let err = rq.conservation_error(&registry, &receivers);
            log.max_conservation_error = log.max_conservation_error.max(err);
            let scale = 1.0 + rq.injected_by_tree.iter().sum::<f64>();
            if err > CONSERVATION_TOLERANCE * scale {
                return Err(EngineError::Conservation { slot: k, error: err });
            }
        }
    }
    log.trees = registry.iter().map(|t| (t.session, t.tree.clone())).collect();
    Ok(log)
}
