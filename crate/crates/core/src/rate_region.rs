//! Throughput-region oracle over enumerated trees.
//!
//! One LP column per tree (dense, desk scale). Every allocation returned by
//! the solver is re-verified by direct summation before it is handed out.

use std::fmt::Write as _;

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use thiserror::Error;

use crate::steiner::{enumerate_trees, Instance, SteinerError, Tree};
use crate::topology::{Network, Session};

/// Feasibility slack allowed on capacity constraints.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error(transparent)]
    Steiner(#[from] SteinerError),
    #[error("rate vector has {got} entries for {expected} sessions")]
    RateLength { got: usize, expected: usize },
    #[error("rates must be finite and nonnegative")]
    BadRate,
    #[error("LP solver failed: {0}")]
    Solver(String),
    #[error("allocation failed verification: {0}")]
    Verification(String),
}

/// Tree weights per session: `alloc.sessions[s]` lists `(tree, α_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRateAllocation {
    pub sessions: Vec<Vec<(Tree, f64)>>,
    /// Uniform slack left on every link.
    pub margin: f64,
}

impl TreeRateAllocation {
    /// Per-link load `Σ_s Σ_{t∋e} α_t λ_s`.
    pub fn link_loads(&self, net: &Network, rates: &[f64]) -> Vec<f64> {
        let mut load = vec![0.0; net.link_count()];
        for (weights, &rate) in self.sessions.iter().zip(rates) {
            for (tree, alpha) in weights {
                for &e in tree.edges() {
                    load[e] += alpha * rate;
                }
            }
        }
        load
    }

    /// Checks `α ≥ 0`, `Σα = 1` per session and the capacity constraints with
    /// the stated margin, all by direct summation.
    pub fn verify(&self, net: &Network, rates: &[f64], tol: f64) -> Result<(), String> {
        for (s, weights) in self.sessions.iter().enumerate() {
            if let Some((_, a)) = weights.iter().find(|(_, a)| *a < -tol) {
                return Err(format!("session {s}: negative weight {a}"));
            }
            let total: f64 = weights.iter().map(|(_, a)| a).sum();
            if (total - 1.0).abs() > tol.max(1e-7) {
                return Err(format!("session {s}: weights sum to {total}"));
            }
        }
        for (e, load) in self.link_loads(net, rates).into_iter().enumerate() {
            let cap = net.link(e).capacity;
            if load + self.margin > cap + tol.max(1e-7 * cap) {
                return Err(format!("link {e}: load {load} + margin {} exceeds {cap}", self.margin));
            }
        }
        Ok(())
    }

    /// One line per tree: `session<TAB>weight<TAB>edge;ids`.
    pub fn to_text(&self) -> String {
        let mut out = format!("# margin {}\n", self.margin);
        for (s, weights) in self.sessions.iter().enumerate() {
            for (tree, alpha) in weights {
                let _ = writeln!(out, "{s}\t{alpha}\t{}", tree.to_text());
            }
        }
        out
    }
}

/// Link prices under which the demand exceeds the priced capacity:
/// `Σ_s λ_s · min_{t∈T_s} price(t) > Σ_e price_e c_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub prices: Vec<f64>,
    pub priced_capacity: f64,
    pub priced_demand: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    Inside { margin: f64, allocation: TreeRateAllocation },
    Outside(Certificate),
}

impl Membership {
    pub fn is_inside(&self) -> bool {
        matches!(self, Membership::Inside { .. })
    }
}

fn session_trees(
    net: &Network,
    sessions: &[Session],
    max_nodes: usize,
) -> Result<Vec<Vec<Tree>>, RegionError> {
    sessions
        .iter()
        .map(|s| {
            enumerate_trees(&Instance::new(net, s.source, &s.receivers), max_nodes)
                .map_err(RegionError::from)
        })
        .collect()
}

fn check_rates(sessions: &[Session], rates: &[f64]) -> Result<(), RegionError> {
    if rates.len() != sessions.len() {
        return Err(RegionError::RateLength { got: rates.len(), expected: sessions.len() });
    }
    if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(RegionError::BadRate);
    }
    Ok(())
}

fn solve(problem: &Problem) -> Result<microlp::Solution, RegionError> {
    problem
        .solve()
        .map_err(|e| RegionError::Solver(format!("{e:?}")))?
        .into_solution()
        .map_err(|e| RegionError::Solver(format!("{e:?}")))
}

/// Decides whether `rates` lies in the throughput region. Inside: the
/// allocation maximizing the uniform link slack. Outside: a price
/// certificate.
pub fn membership(
    net: &Network,
    sessions: &[Session],
    rates: &[f64],
    max_nodes: usize,
) -> Result<Membership, RegionError> {
    check_rates(sessions, rates)?;
    let trees = session_trees(net, sessions, max_nodes)?;

    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let min_cap = net.links().iter().map(|l| l.capacity).fold(f64::INFINITY, f64::min);
    let margin = lp.add_var(1.0, (f64::NEG_INFINITY, min_cap));
    let alphas: Vec<Vec<Variable>> = trees
        .iter()
        .map(|ts| ts.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect())
        .collect();
    for vars in &alphas {
        let terms: Vec<(Variable, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, 1.0);
    }
    for link in net.links() {
        let mut terms = vec![(margin, 1.0)];
        for (s, ts) in trees.iter().enumerate() {
            for (t, tree) in ts.iter().enumerate() {
                if tree.contains(link.id) && rates[s] > 0.0 {
                    terms.push((alphas[s][t], rates[s]));
                }
            }
        }
        lp.add_constraint(terms.as_slice(), ComparisonOp::Le, link.capacity);
    }
    let sol = solve(&lp)?;
    let slack = sol.var_value(margin);

    if slack >= -CAPACITY_TOLERANCE {
        let allocation = TreeRateAllocation {
            sessions: trees
                .iter()
                .zip(&alphas)
                .map(|(ts, vars)| {
                    ts.iter()
                        .zip(vars)
                        .map(|(t, &v)| (t.clone(), sol.var_value(v).max(0.0)))
                        .filter(|(_, a)| *a > 0.0)
                        .collect()
                })
                .collect(),
            margin: slack.max(0.0),
        };
        allocation
            .verify(net, rates, 1e-7)
            .map_err(RegionError::Verification)?;
        return Ok(Membership::Inside { margin: slack.max(0.0), allocation });
    }

    // Outside: maximize Σ λ_s z_s − Σ c_e y_e, z_s ≤ price(t) ∀t ∈ T_s, 0 ≤ y ≤ 1.
    let mut dual = Problem::new(OptimizationDirection::Maximize);
    let prices: Vec<Variable> =
        net.links().iter().map(|l| dual.add_var(-l.capacity, (0.0, 1.0))).collect();
    let mins: Vec<Variable> =
        rates.iter().map(|&r| dual.add_var(r, (0.0, f64::INFINITY))).collect();
    for (s, ts) in trees.iter().enumerate() {
        for tree in ts {
            let mut terms = vec![(mins[s], 1.0)];
            terms.extend(tree.edges().iter().map(|&e| (prices[e], -1.0)));
            dual.add_constraint(terms.as_slice(), ComparisonOp::Le, 0.0);
        }
    }
    let sol = solve(&dual)?;
    let prices: Vec<f64> = prices.iter().map(|&v| sol.var_value(v).max(0.0)).collect();
    let certificate = certify(net, &trees, rates, prices);
    if certificate.priced_demand <= certificate.priced_capacity {
        return Err(RegionError::Verification(format!(
            "price certificate does not separate: demand {} vs capacity {}",
            certificate.priced_demand, certificate.priced_capacity
        )));
    }
    Ok(Membership::Outside(certificate))
}

fn certify(net: &Network, trees: &[Vec<Tree>], rates: &[f64], prices: Vec<f64>) -> Certificate {
    let priced_capacity = net.links().iter().map(|l| prices[l.id] * l.capacity).sum();
    let priced_demand = trees
        .iter()
        .zip(rates)
        .map(|(ts, &r)| {
            let cheapest = ts
                .iter()
                .map(|t| t.edges().iter().map(|&e| prices[e]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            r * cheapest
        })
        .sum();
    Certificate { prices, priced_capacity, priced_demand }
}

/// Largest multiplier `λ*` such that `λ*·profile` is in the region, with the
/// tree rates achieving it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxRate {
    pub lambda_star: f64,
    pub allocation: TreeRateAllocation,
}

pub fn max_uniform_rate(
    net: &Network,
    sessions: &[Session],
    profile: &[f64],
    max_nodes: usize,
) -> Result<MaxRate, RegionError> {
    check_rates(sessions, profile)?;
    if profile.iter().all(|&p| p == 0.0) {
        return Err(RegionError::BadRate);
    }
    let trees = session_trees(net, sessions, max_nodes)?;

    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let scale = lp.add_var(1.0, (0.0, f64::INFINITY));
    let flows: Vec<Vec<Variable>> = trees
        .iter()
        .map(|ts| ts.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect())
        .collect();
    for (s, vars) in flows.iter().enumerate() {
        let mut terms: Vec<(Variable, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
        terms.push((scale, -profile[s]));
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, 0.0);
    }
    for link in net.links() {
        let terms: Vec<(Variable, f64)> = trees
            .iter()
            .enumerate()
            .flat_map(|(s, ts)| {
                ts.iter()
                    .enumerate()
                    .filter(|(_, t)| t.contains(link.id))
                    .map(move |(t, _)| (s, t))
            })
            .map(|(s, t)| (flows[s][t], 1.0))
            .collect();
        if !terms.is_empty() {
            lp.add_constraint(terms.as_slice(), ComparisonOp::Le, link.capacity);
        }
    }
    let sol = solve(&lp)?;
    let lambda_star = sol.var_value(scale);
    let rates: Vec<f64> = profile.iter().map(|p| p * lambda_star).collect();
    let allocation = TreeRateAllocation {
        sessions: trees
            .iter()
            .zip(&flows)
            .zip(&rates)
            .map(|((ts, vars), &rate)| {
                ts.iter()
                    .zip(vars)
                    .map(|(t, &v)| {
                        let w = if rate > 0.0 { sol.var_value(v).max(0.0) / rate } else { 0.0 };
                        (t.clone(), w)
                    })
                    .filter(|(_, a)| *a > 0.0)
                    .collect()
            })
            .collect(),
        margin: 0.0,
    };
    allocation
        .verify(net, &rates, 1e-7)
        .map_err(RegionError::Verification)?;
    Ok(MaxRate { lambda_star, allocation })
}
