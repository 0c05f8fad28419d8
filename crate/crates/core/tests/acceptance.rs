//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_INFEASIBLE` are reported like any other but do
//! not fail the process; everything else does.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use treecast_core::engine::{draw_arrivals, run, stream_rng, ArrivalProcess};
use treecast_core::metrics::{
    cesaro_change, classify, control_overhead, cumulative_receiving_rate, link_intensity,
    loynes_discrepancy, export_csv, MetricsLog, StabilityVerdict, Thresholds, Verdict,
};
use treecast_core::rate_region::max_uniform_rate;
use treecast_core::regulated::regulator_release;
use treecast_core::scenario::{Scenario, ScenarioConfig, Selector};
use treecast_core::steiner::{enumerate_trees, exact_min_tree, Instance, DEFAULT_MAX_ENUMERATION_NODES};
use treecast_core::topology::{ArrivalKind, Network, Session};

/// Criterion 6 asks for ε₂ = 0.05λ* at λ = 0.9λ*, which leaves a margin
/// ε₀ = 0.1 < ε₂ on the unit-capacity toy; the virtual queues cannot settle.
const KNOWN_INFEASIBLE: &[usize] = &[6];

const LOYNES_TOL: f64 = 1e-9;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    ScenarioConfig::from_file(&scenarios_dir().join(name)).unwrap().load().unwrap()
}

fn at_rate(base: &Scenario, rate: f64, slots: usize) -> Scenario {
    let mut sc = base.clone();
    for s in &mut sc.sessions {
        s.rate = rate;
    }
    sc.params.slots = slots;
    sc
}

/// Digest of the exported CSV files, so determinism covers the artifacts.
fn artifact_digest(log: &MetricsLog) -> String {
    let dir = tempfile::tempdir().unwrap();
    let mut h = Sha256::new();
    for p in export_csv(log, dir.path()).unwrap() {
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&p).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Run {
    log: MetricsLog,
    verdict: StabilityVerdict,
    loynes: f64,
    seconds: f64,
}

fn simulate(sc: &Scenario) -> Run {
    let t = Instant::now();
    let log = run(sc).unwrap();
    let seconds = t.elapsed().as_secs_f64();
    let verdict = classify(&log, &Thresholds::default()).unwrap();
    let loynes = loynes_discrepancy(log.hops.as_ref().unwrap(), &log.meta.capacities());
    Run { log, verdict, loynes, seconds }
}

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id:>2}: {detail}");
        self.lines.push((id, pass, detail));
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Network, Vec<usize>, Vec<f64>) {
    loop {
        let n = rng.random_range(3..=7);
        let mut links = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.random_bool(0.45) {
                    links.push((a, b, 1.0));
                }
            }
        }
        let Ok(net) = Network::with_node_count(n, links) else { continue };
        let reach = net.reachable_from(0);
        let mut candidates: Vec<usize> = (1..n).filter(|&v| reach[v]).collect();
        if candidates.is_empty() {
            continue;
        }
        let want = rng.random_range(1..=3).min(candidates.len());
        let mut receivers = Vec::new();
        for _ in 0..want {
            receivers.push(candidates.swap_remove(rng.random_range(0..candidates.len())));
        }
        receivers.sort();
        let q = (0..net.link_count()).map(|_| rng.random_range(0..=9) as f64).collect();
        return (net, receivers, q);
    }
}

fn k4_lambda_star(sc: &Scenario) -> f64 {
    max_uniform_rate(&sc.net, &sc.sessions, &[1.0], DEFAULT_MAX_ENUMERATION_NODES).unwrap().lambda_star
}

fn main() -> ExitCode {
    let mut report = Report { lines: Vec::new() };
    let mut loynes_worst: Vec<(String, f64)> = Vec::new();
    let mut digests: Vec<(String, String, String)> = Vec::new();

    // 1. exact solver against exhaustive enumeration
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut mismatches = 0;
    let mut trees_seen = 0;
    for _ in 0..20 {
        let (net, receivers, q) = random_instance(&mut rng);
        let inst = Instance::new(&net, 0, &receivers);
        let all = enumerate_trees(&inst, DEFAULT_MAX_ENUMERATION_NODES).unwrap();
        trees_seen += all.len();
        let brute = all.iter().map(|t| t.cost(&q)).fold(f64::INFINITY, f64::min);
        let exact = exact_min_tree(&inst, &q, 12).unwrap().cost(&q);
        mismatches += (brute != exact) as usize;
    }
    let secs = t.elapsed().as_secs_f64();
    report.record(
        1,
        mismatches == 0 && secs < 10.0,
        format!("20 instances, {trees_seen} trees enumerated, {mismatches} mismatches, {secs:.2}s"),
    );

    // 2. throughput oracle
    let k4 = load("k4_alg1.toml");
    let lambda_star = k4_lambda_star(&k4);
    let path = Network::new(
        ["a", "b", "c", "d"].map(String::from).to_vec(),
        [(0, 1, 5.0), (1, 2, 3.0), (2, 3, 4.0)],
    )
    .unwrap();
    let ps = Session::new(0, 0, vec![3], ArrivalKind::Poisson, 1.0).unwrap();
    let path_star = max_uniform_rate(&path, &[ps], &[1.0], DEFAULT_MAX_ENUMERATION_NODES).unwrap().lambda_star;
    report.record(
        2,
        (lambda_star - 3.0).abs() <= 1e-6 && path_star == 3.0,
        format!("K4 lambda* = {lambda_star}, path (5,3,4) lambda* = {path_star}"),
    );

    // 3. regulated scheduler, exact trees
    let mut base1 = k4.clone();
    base1.params.eps1 = 0.01 * lambda_star;
    let below = simulate(&at_rate(&base1, 0.9 * lambda_star, 100_000));
    let above = simulate(&at_rate(&base1, 1.1 * lambda_star, 100_000));
    {
        let k = below.log.slots();
        let qmax = below.log.virtual_queues.row_max();
        let (h1, h2) = (max(&qmax[..k / 2]), max(&qmax[k / 2..]));
        let p = below.log.regulators.column(0);
        let (p1, p2) = (max(&p[..k / 2]), max(&p[k / 2..]));
        let regulator_bounded = p2 <= 2.0 * p1 + lambda_star;
        let secs = below.seconds + above.seconds;
        let pass = h2 <= h1 + 5.0
            && regulator_bounded
            && below.verdict.verdict == Verdict::Stable
            && above.verdict.verdict == Verdict::Unstable
            && above.verdict.virtual_slope >= 0.05 * lambda_star
            && secs < 60.0;
        report.record(
            3,
            pass,
            format!(
                "0.9: max q {h1:.3} -> {h2:.3}, max p {p1:.1} -> {p2:.1}, {}; 1.1: {} (slope {:.4}); {secs:.1}s",
                below.verdict.verdict, above.verdict.verdict, above.verdict.virtual_slope
            ),
        );
        loynes_worst.push(("alg1 exact 0.9".into(), below.loynes));
        loynes_worst.push(("alg1 exact 1.1".into(), above.loynes));
        digests.push(("alg1 exact 0.9".into(), artifact_digest(&below.log), String::new()));
    }
    drop(below);
    drop(above);

    // 4. approximate trees: calibrate the ratio, then run in the reduced region
    {
        let mut approx = base1.clone();
        approx.params.selector = Selector::Approx { level: 2 };
        let calib = simulate(&at_rate(&approx, 0.9 * lambda_star, 20_000));
        let ratio_of = |log: &MetricsLog| {
            log.selections.iter().flatten().filter_map(|e| e.ratio).fold(1.0, f64::max)
        };
        let gamma_hat = ratio_of(&calib.log);
        approx.params.gamma = gamma_hat;
        let reduced = simulate(&at_rate(&approx, 0.9 * lambda_star / gamma_hat, 100_000));
        let seen = ratio_of(&reduced.log);
        report.record(
            4,
            reduced.verdict.verdict == Verdict::Stable,
            format!(
                "calibrated gamma {gamma_hat:.4}; run at {:.4}: {} (max ratio in run {seen:.4})",
                0.9 * lambda_star / gamma_hat,
                reduced.verdict.verdict
            ),
        );
        loynes_worst.push(("alg1 approx calibration".into(), calib.loynes));
        loynes_worst.push(("alg1 approx reduced".into(), reduced.loynes));
    }

    // 6. randomized scheduler
    let k4r = load("k4_alg2.toml");
    {
        let mut base2 = k4r.clone();
        base2.params.eps2 = 0.05 * lambda_star;
        base2.params.delta = 0.1;
        let below = simulate(&at_rate(&base2, 0.9 * lambda_star, 100_000));
        let above = simulate(&at_rate(&base2, 1.1 * lambda_star, 100_000));
        let (checks, detail) = randomized_checks(&below.log, base2.params.eps2);
        report.record(
            6,
            checks && above.verdict.verdict == Verdict::Unstable,
            format!("eps2 {:.3}: {detail}; 1.1: {}", base2.params.eps2, above.verdict.verdict),
        );
        loynes_worst.push(("alg2 0.9".into(), below.loynes));
        loynes_worst.push(("alg2 1.1".into(), above.loynes));
        digests.push(("alg2 0.9".into(), artifact_digest(&below.log), String::new()));
        drop(below);
        drop(above);

        // same properties with a reduction that fits inside the margin
        let mut inside = base2.clone();
        inside.params.eps2 = 0.05;
        let small = simulate(&at_rate(&inside, 0.9 * lambda_star, 100_000));
        let (ok, detail) = randomized_checks(&small.log, inside.params.eps2);
        println!("     supplementary: eps2 0.050 at 0.9: {} ({detail})", if ok { "all hold" } else { "some fail" });
        loynes_worst.push(("alg2 0.9 eps2 0.05".into(), small.loynes));
    }

    // 7. pick-stage min-cost frequency
    {
        let mut sc = at_rate(&k4r, 0.9 * lambda_star, 10_000);
        sc.params.delta = 0.1;
        let r = simulate(&sc);
        let flags: Vec<bool> = r.log.selections.iter().flatten().filter_map(|e| e.candidate_min).collect();
        let n = flags.len() as f64;
        let freq = flags.iter().filter(|&&b| b).count() as f64 / n;
        let injected = r.log.selections.iter().flatten().filter(|e| e.injected).count() as f64 / n;
        let sigma = (0.1 * 0.9 / n).sqrt();
        report.record(
            7,
            n == 10_000.0 && freq >= 0.1 - 3.0 * sigma,
            format!("min-cost candidate in {freq:.4} of {n} slots (injected {injected:.4}), bound {:.4}", 0.1 - 3.0 * sigma),
        );
        loynes_worst.push(("alg2 pick frequency".into(), r.loynes));
    }

    // 5. Loynes equivalence over every engine run above
    {
        let worst = loynes_worst.iter().map(|(_, d)| *d).fold(0.0, f64::max);
        let detail = loynes_worst.iter().map(|(n, d)| format!("{n} {d:.1e}")).collect::<Vec<_>>().join(", ");
        report.record(5, worst <= LOYNES_TOL, format!("max |engine - oracle| = {worst:.2e} ({detail})"));
    }

    // 8. control overhead
    {
        let o = control_overhead(300, 3000, 20, 32, 0.5);
        report.record(
            8,
            o.forward_bits == 163_200 && o.feedback_bits == 249_600 && o.forward_bps == 326_400.0,
            format!("forward {} bits, feedback {} bits, forward rate {} Kbps", o.forward_bits, o.feedback_bits, o.forward_bps / 1000.0),
        );
    }

    // 9. Poisson calibration
    let poisson_stats = || {
        let mut proc = ArrivalProcess::new(ArrivalKind::Poisson, 972.0, 1);
        let mut rng = stream_rng(1, 1);
        let xs: Vec<f64> = (0..100_000).map(|_| draw_arrivals(&mut proc, &mut rng) as f64).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (mean, var.sqrt())
    };
    let (mean, sd) = poisson_stats();
    report.record(
        9,
        (mean - 972.0).abs() <= 9.72 && (sd - 31.2).abs() <= 0.05 * 31.2,
        format!("mean {mean:.3}, std {sd:.3}"),
    );

    // 10. regulator under heavy load
    let regulator_trace = || {
        let mut proc = ArrivalProcess::new(ArrivalKind::Poisson, 100.0, 1);
        let mut rng = stream_rng(10, 1);
        let (mut p, mut residuals, mut backlog) = (0.0, Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let d = regulator_release(p, 100.1);
            let residual: f64 = p - d;
            p = residual + draw_arrivals(&mut proc, &mut rng) as f64;
            residuals.push(residual);
            backlog.push(p);
        }
        (residuals, backlog)
    };
    let (residuals, backlog) = regulator_trace();
    {
        let tail = &residuals[90_000..];
        let low = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let (first, second) = (max(&residuals[..50_000]), max(&residuals[50_000..]));
        report.record(
            10,
            low < 10.0 && second <= 2.0 * first + 100.0,
            format!(
                "post-release backlog: min {low:.2} in final 10^4 slots, max {first:.1} / {second:.1} by half; backlog with arrivals min {:.1}",
                backlog[90_000..].iter().copied().fold(f64::INFINITY, f64::min)
            ),
        );
    }

    // 11. determinism: repeat from the configs and compare artifacts
    {
        let mut base1 = k4.clone();
        base1.params.eps1 = 0.01 * lambda_star;
        let again1 = run(&at_rate(&base1, 0.9 * lambda_star, 100_000)).unwrap();
        digests[0].2 = artifact_digest(&again1);
        drop(again1);
        let mut base2 = k4r.clone();
        base2.params.eps2 = 0.05 * lambda_star;
        base2.params.delta = 0.1;
        let again2 = run(&at_rate(&base2, 0.9 * lambda_star, 100_000)).unwrap();
        digests[1].2 = artifact_digest(&again2);
        let same_poisson = poisson_stats() == (mean, sd);
        let same_regulator = regulator_trace() == (residuals, backlog);
        let same = digests.iter().all(|(_, a, b)| a == b);
        report.record(
            11,
            same && same_poisson && same_regulator,
            format!(
                "{} run artifacts identical on repeat; arrival and regulator traces identical: {}",
                digests.iter().filter(|(_, a, b)| a == b).count(),
                same_poisson && same_regulator
            ),
        );
    }

    let failing: Vec<usize> = report.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    let unexpected: Vec<usize> = failing.iter().copied().filter(|c| !KNOWN_INFEASIBLE.contains(c)).collect();
    println!(
        "{} of {} criteria pass; failing {:?}; known infeasible {:?}",
        report.lines.len() - failing.len(),
        report.lines.len(),
        failing,
        KNOWN_INFEASIBLE
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// The five randomized-scheduler properties on one run.
fn randomized_checks(log: &MetricsLog, eps2: f64) -> (bool, String) {
    let k = log.slots();
    let caps = log.meta.capacities();
    let cesaro = (0..caps.len())
        .map(|e| cesaro_change(&log.virtual_queues.column(e), 3 * k / 4))
        .fold(0.0, f64::max);
    let over = (0..caps.len())
        .map(|e| log.virtual_arrivals.column(e).iter().sum::<f64>() / k as f64 - (caps[e] - eps2))
        .fold(f64::NEG_INFINITY, f64::max);
    let rho = link_intensity(log).into_iter().fold(0.0, f64::max);
    let growth = log.real_queues.last().unwrap().iter().fold(0.0f64, |m, &q| m.max(q)) / k as f64;
    let monotone = log.selections.iter().flatten().all(|e| {
        e.previous_cost.is_none_or(|p| e.cost <= p) && e.candidate_cost.is_none_or(|c| e.cost <= c)
    });
    let rate = cumulative_receiving_rate(log, 0, 0).unwrap().last().copied().unwrap_or(0.0);
    let pass = [cesaro < 0.01, over <= 1e-6, rho < 1.0, growth < 1e-3, monotone];
    let detail = format!(
        "(a) cesaro change {cesaro:.4} (b) virtual arrivals - (c - eps2) {over:.4} (c) rho {rho:.4} \
         (d) Q/K {growth:.2e} (e) monotone {monotone}; receiving rate {rate:.3}"
    );
    (pass.iter().all(|&b| b), detail)
}
