use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use treecast_core::engine::{run as run_engine, EngineError};
use treecast_core::metrics::{classify, export_csv, loynes_discrepancy, read_hop_trace, MetricsLog, Thresholds};
use treecast_core::rate_region::{max_uniform_rate, RegionError};
use treecast_core::scenario::{Algorithm, ConfigError, Scenario, ScenarioConfig, ScenarioError, Selector};
use treecast_core::schedule::ScheduleError;
use treecast_core::steiner::{approx_min_tree, cost_ratio, exact_min_tree, Instance, SteinerError, DEFAULT_MAX_ENUMERATION_NODES};

use crate::ScenarioArgs;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure { code, message: message.to_string() }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        fail(2, e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(_) => fail(2, e),
            _ => fail(3, e),
        }
    }
}

impl From<SteinerError> for Failure {
    fn from(e: SteinerError) -> Self {
        match e {
            SteinerError::TooLarge { .. } => fail(4, e),
            SteinerError::Unreachable(_) => fail(3, e),
            _ => fail(1, e),
        }
    }
}

impl From<RegionError> for Failure {
    fn from(e: RegionError) -> Self {
        match e {
            RegionError::Steiner(s) => s.into(),
            other => fail(1, other),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Schedule(ScheduleError::Steiner(s)) => s.into(),
            EngineError::Schedule(ScheduleError::Config(m)) => fail(2, m),
            other => fail(1, other),
        }
    }
}

/// Loads the config, applies command-line overrides, validates.
pub fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    let mut cfg = ScenarioConfig::from_file(&args.config)?;
    let p = &mut cfg.params;
    if let Some(a) = &args.algorithm {
        p.algorithm = a.parse()?;
        if args.selector.is_none() {
            p.selector = match p.algorithm {
                Algorithm::Randomized => Selector::Random,
                Algorithm::Regulated if p.selector == Selector::Random => Selector::Exact,
                Algorithm::Regulated => p.selector,
            };
        }
    }
    if let Some(s) = &args.selector {
        p.selector = s.parse()?;
    }
    p.seed = args.seed.unwrap_or(p.seed);
    p.slots = args.slots.unwrap_or(p.slots);
    p.gamma = args.gamma.unwrap_or(p.gamma);
    p.eps1 = args.eps1.unwrap_or(p.eps1);
    p.eps2 = args.eps2.unwrap_or(p.eps2);
    p.delta = args.delta.unwrap_or(p.delta);
    p.control_delay = args.control_delay.unwrap_or(p.control_delay);
    Ok(cfg.load()?)
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| fail(1, format!("{}: {e}", path.display()))
}

struct Outcome {
    verdict: String,
    final_virtual: f64,
    final_real: f64,
    max_regulator: f64,
}

fn outcome(log: &MetricsLog) -> Outcome {
    let verdict = match classify(log, &Thresholds::default()) {
        Ok(v) => v.verdict.to_string(),
        Err(_) => "too-short".to_string(),
    };
    let sum_last = |s: &treecast_core::metrics::Series| s.last().map_or(0.0, |r| r.iter().sum());
    Outcome {
        verdict,
        final_virtual: sum_last(&log.virtual_queues),
        final_real: sum_last(&log.real_queues),
        max_regulator: log.regulators.row_max().into_iter().fold(0.0, f64::max),
    }
}

pub fn run(args: &ScenarioArgs, out: &Path) -> Result<(), Failure> {
    let sc = load_scenario(args)?;
    let log = run_engine(&sc)?;
    let files = export_csv(&log, out).map_err(|e| fail(1, e))?;
    let o = outcome(&log);
    let m = &log.meta;

    let mut s = String::new();
    let _ = writeln!(s, "scenario = \"{}\"", m.scenario_hash);
    let _ = writeln!(s, "seed = {}", m.seed);
    let _ = writeln!(s, "algorithm = \"{}\"", m.algorithm);
    let _ = writeln!(s, "selector = \"{}\"", m.selector);
    let _ = writeln!(s, "slots = {}", log.slots());
    let _ = writeln!(s, "verdict = \"{}\"", o.verdict);
    if let Ok(v) = classify(&log, &Thresholds::default()) {
        let _ = writeln!(s, "virtual_slope = {}", v.virtual_slope);
        let _ = writeln!(s, "real_slope = {}", v.real_slope);
        let _ = writeln!(s, "slope_threshold = {}", v.threshold);
    }
    let _ = writeln!(s, "final_virtual_total = {}", o.final_virtual);
    let _ = writeln!(s, "final_real_total = {}", o.final_real);
    let _ = writeln!(s, "max_regulator = {}", o.max_regulator);
    let _ = writeln!(s, "trees_used = {}", log.trees.len());
    let _ = writeln!(s, "max_conservation_error = {}", log.max_conservation_error);
    let _ = writeln!(
        s,
        "deviations = [{}]",
        m.deviations.iter().map(|d| format!("\"{d}\"")).collect::<Vec<_>>().join(", ")
    );
    let summary = out.join(format!("{}.summary.toml", m.scenario_hash));
    fs::write(&summary, &s).map_err(io(&summary))?;
    print!("{s}");
    println!("# wrote {} files to {}", files.len() + 1, out.display());
    Ok(())
}

pub fn sweep(
    args: &ScenarioArgs,
    multipliers: &[f64],
    seeds: &[u64],
    parallel: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    if seeds.is_empty() || multipliers.is_empty() {
        return Err(fail(2, "sweep needs at least one multiplier and one seed"));
    }
    if let Some(m) = multipliers.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
        return Err(fail(2, format!("multiplier {m} must be positive")));
    }
    let base = load_scenario(args)?;
    let uniform = vec![1.0; base.sessions.len()];
    let star = max_uniform_rate(&base.net, &base.sessions, &uniform, DEFAULT_MAX_ENUMERATION_NODES)?.lambda_star;

    let jobs: Vec<(f64, u64)> = multipliers.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| fail(1, e))?;
    let results: Vec<Result<Outcome, Failure>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, seed)| {
                let mut sc = base.clone();
                for s in &mut sc.sessions {
                    s.rate = m * star;
                }
                sc.params.seed = seed;
                sc.params.hop_classes = false;
                Ok(outcome(&run_engine(&sc)?))
            })
            .collect()
    });

    let mut table = String::from("multiplier,seed,verdict,final_virtual_total,final_real_total,max_regulator\n");
    for ((m, seed), r) in jobs.iter().zip(results) {
        let o = r?;
        let _ = writeln!(
            table,
            "{m},{seed},{},{},{},{}",
            o.verdict, o.final_virtual, o.final_real, o.max_regulator
        );
    }
    println!("# lambda* = {star}; every session runs at multiplier x lambda*");
    print!("{table}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join(format!("{}.sweep.csv", base.hash()));
        fs::write(&path, &table).map_err(io(&path))?;
    }
    Ok(())
}

pub fn region(args: &ScenarioArgs) -> Result<(), Failure> {
    let sc = load_scenario(args)?;
    let uniform = vec![1.0; sc.sessions.len()];
    let r = max_uniform_rate(&sc.net, &sc.sessions, &uniform, DEFAULT_MAX_ENUMERATION_NODES)?;
    println!("lambda* = {}", r.lambda_star);
    print!("{}", r.allocation.to_text());
    Ok(())
}

pub fn steiner(args: &ScenarioArgs, costs: &[f64], level: usize) -> Result<(), Failure> {
    let sc = load_scenario(args)?;
    let q = if costs.is_empty() { vec![0.0; sc.net.link_count()] } else { costs.to_vec() };
    for s in &sc.sessions {
        let inst = Instance::new(&sc.net, s.source, &s.receivers);
        let exact = exact_min_tree(&inst, &q, sc.params.max_exact_receivers)?;
        let approx = approx_min_tree(&inst, &q, level)?;
        let (ce, ca) = (exact.cost(&q), approx.cost(&q));
        println!("session {}: exact cost {ce} [{}]", s.id, exact.to_text());
        println!("session {}: approx-level-{level} cost {ca} [{}]", s.id, approx.to_text());
        println!("session {}: ratio {}", s.id, cost_ratio(ca, ce));
    }
    Ok(())
}

pub fn loynes(dir: &Path, hash: Option<&str>) -> Result<(), Failure> {
    let hash = match hash {
        Some(h) => h.to_string(),
        None => {
            let found: Vec<String> = fs::read_dir(dir)
                .map_err(io(dir))?
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str()?.strip_suffix(".hop_classes.csv").map(String::from))
                .collect();
            match found.as_slice() {
                [h] => h.clone(),
                [] => return Err(fail(1, format!("{}: no hop-class trace (run with run.hop_classes = true)", dir.display()))),
                _ => return Err(fail(1, format!("{}: several runs, pass --hash", dir.display()))),
            }
        }
    };
    let (trace, capacities) = read_hop_trace(dir, &hash).map_err(|e| fail(1, e))?;
    let worst = loynes_discrepancy(&trace, &capacities);
    let slots = trace.arrivals.first().map_or(0, |s| s.len());
    println!("links = {}", capacities.len());
    println!("hop_classes = {}", trace.classes);
    println!("slots = {slots}");
    println!("max_discrepancy = {worst:e}");
    Ok(())
}
