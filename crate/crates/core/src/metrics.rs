//! Run logs, stability measurement, the Loynes backlog oracle and CSV export.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;
use twofloat::TwoFloat;

use crate::steiner::Tree;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty window")]
    EmptyWindow,
    #[error("window {start}..{end} outside a run of {len} slots")]
    BadWindow { start: usize, end: usize, len: usize },
    #[error("run of {slots} slots is shorter than the minimum {min}")]
    TooShort { slots: usize, min: usize },
    #[error("unknown receiver {receiver} of session {session}")]
    UnknownReceiver { session: usize, receiver: usize },
    #[error("the log has no per-hop-class trace")]
    NoHopTrace,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Row-major table with a fixed number of columns per slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    width: usize,
    rows: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(width: usize) -> Self {
        Self { width, rows: 0, data: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.width, "row width");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|k| self.data[k * self.width + j]).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|k| self.row(k).iter().sum()).collect()
    }

    pub fn row_max(&self) -> Vec<f64> {
        (0..self.rows).map(|k| self.row(k).iter().copied().fold(0.0, f64::max)).collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        (self.rows > 0).then(|| self.row(self.rows - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub id: usize,
    pub source: String,
    pub receivers: Vec<String>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkMeta {
    pub tail: String,
    pub head: String,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub scenario_hash: String,
    pub seed: u64,
    pub algorithm: String,
    pub selector: String,
    pub slots: usize,
    pub slot_seconds: f64,
    pub node_count: usize,
    pub links: Vec<LinkMeta>,
    pub sessions: Vec<SessionMeta>,
    /// Known modeling departures that affect how the numbers should be read.
    pub deviations: Vec<String>,
}

impl RunMeta {
    pub fn total_rate(&self) -> f64 {
        self.sessions.iter().map(|s| s.rate).sum()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }
}

/// One session's tree decision in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub tree: usize,
    pub cost: f64,
    pub optimum: Option<f64>,
    pub ratio: Option<f64>,
    pub previous_cost: Option<f64>,
    pub candidate_cost: Option<f64>,
    pub injected: bool,
    pub candidate_min: Option<bool>,
}

/// Per-link, per-hop-class trace. Column `h-1` of `arrivals[e]` is the fluid
/// entering link `e` in hop class exactly `h`; column `h-1` of `backlogs[e]`
/// is the backlog of classes `1..=h` after service.
#[derive(Debug, Clone, PartialEq)]
pub struct HopTrace {
    pub classes: usize,
    pub arrivals: Vec<Series>,
    pub backlogs: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub meta: RunMeta,
    /// `q_e` after each slot.
    pub virtual_queues: Series,
    /// Real backlog `Q_e` after each slot's service.
    pub real_queues: Series,
    /// Signaled traffic into each virtual queue.
    pub virtual_arrivals: Series,
    /// Real fluid entering each link.
    pub link_arrivals: Series,
    pub link_service: Series,
    /// Regulator backlog `p_s` after each slot.
    pub regulators: Series,
    /// Regulator backlog left right after the release, before new arrivals.
    pub residuals: Series,
    pub releases: Series,
    pub arrivals: Series,
    /// Cumulative delivered chunks per (session, receiver), sessions in order.
    pub delivered: Series,
    pub selections: Vec<Vec<SelectionEntry>>,
    /// Interned trees: `(session, tree)` by tree id.
    pub trees: Vec<(usize, Tree)>,
    pub hops: Option<HopTrace>,
    pub max_conservation_error: f64,
}

impl MetricsLog {
    pub fn empty(meta: RunMeta, hop_classes: Option<usize>) -> Self {
        let e = meta.links.len();
        let s = meta.sessions.len();
        let r = meta.sessions.iter().map(|s| s.receivers.len()).sum();
        Self {
            virtual_queues: Series::new(e),
            real_queues: Series::new(e),
            virtual_arrivals: Series::new(e),
            link_arrivals: Series::new(e),
            link_service: Series::new(e),
            regulators: Series::new(s),
            residuals: Series::new(s),
            releases: Series::new(s),
            arrivals: Series::new(s),
            delivered: Series::new(r),
            selections: Vec::new(),
            trees: Vec::new(),
            hops: hop_classes.map(|classes| HopTrace {
                classes,
                arrivals: vec![Series::new(classes); e],
                backlogs: vec![Series::new(classes); e],
            }),
            max_conservation_error: 0.0,
            meta,
        }
    }

    pub fn slots(&self) -> usize {
        self.virtual_queues.len()
    }

    /// Column of `delivered` for a session's receiver.
    pub fn receiver_column(&self, session: usize, receiver: usize) -> Result<usize, MetricsError> {
        let s = self.meta.sessions.get(session);
        if s.is_none_or(|s| receiver >= s.receivers.len()) {
            return Err(MetricsError::UnknownReceiver { session, receiver });
        }
        Ok(self.meta.sessions[..session].iter().map(|s| s.receivers.len()).sum::<usize>() + receiver)
    }
}

// ---------------------------------------------------------------------------
// Stability

fn check_window(window: &Range<usize>, len: usize) -> Result<(), MetricsError> {
    if window.start >= window.end {
        return Err(MetricsError::EmptyWindow);
    }
    if window.end > len {
        return Err(MetricsError::BadWindow { start: window.start, end: window.end, len });
    }
    Ok(())
}

/// Fraction of slots in `window` whose value exceeds `m`.
pub fn overflow_estimate(trace: &[f64], m: f64, window: Range<usize>) -> Result<f64, MetricsError> {
    check_window(&window, trace.len())?;
    let n = window.len();
    Ok(trace[window].iter().filter(|&&v| v > m).count() as f64 / n as f64)
}

/// Least-squares slope of `trace` against slot index over `window`.
pub fn tail_slope(trace: &[f64], window: Range<usize>) -> Result<f64, MetricsError> {
    check_window(&window, trace.len())?;
    let n = window.len() as f64;
    if window.len() < 2 {
        return Ok(0.0);
    }
    let xm = (window.start + window.end - 1) as f64 / 2.0;
    let ym = trace[window.clone()].iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for k in window {
        let dx = k as f64 - xm;
        sxy += dx * (trace[k] - ym);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}

/// Relative change of the running time average `(1/k) Σ_{u<k} trace[u]`
/// between slot `from` and the end of the trace. Zero averages count as no
/// change.
pub fn cesaro_change(trace: &[f64], from: usize) -> f64 {
    let k = trace.len();
    if from == 0 || from >= k {
        return 0.0;
    }
    let at = |n: usize| trace[..n].iter().sum::<f64>() / n as f64;
    let (a, b) = (at(from), at(k));
    if b == 0.0 {
        return if a == 0.0 { 0.0 } else { 1.0 };
    }
    ((b - a) / b).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    /// Slope tolerance as a fraction of the total arrival rate per slot.
    pub slope_fraction: f64,
    pub min_slots: usize,
    /// Overflow level for the tail check: `factor ×` first-half maximum plus
    /// one slot of total arrivals.
    pub overflow_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { slope_fraction: 0.01, min_slots: 10_000, overflow_factor: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    /// Slope of `Σ_e q_e` over the final half, chunks per slot.
    pub virtual_slope: f64,
    /// Slope of `Σ_e Q_e` over the final half.
    pub real_slope: f64,
    pub threshold: f64,
    /// `(M, g(M))` for the aggregate virtual queue over the final half.
    pub virtual_overflow: Vec<(f64, f64)>,
    /// `(M, g(M))` for the aggregate real queue over the final half.
    pub real_overflow: Vec<(f64, f64)>,
}

fn overflow_grid(trace: &[f64], half: usize, th: &Thresholds, total_rate: f64) -> Vec<(f64, f64)> {
    let head_max = trace[..half].iter().copied().fold(0.0, f64::max);
    let m_max = th.overflow_factor * head_max + total_rate;
    [0.25, 0.5, 1.0]
        .iter()
        .map(|f| f * m_max)
        .map(|m| (m, overflow_estimate(trace, m, half..trace.len()).unwrap_or(0.0)))
        .collect()
}

/// Classifies a run from the final-half trend of the aggregate virtual and
/// real queues.
pub fn classify(log: &MetricsLog, th: &Thresholds) -> Result<StabilityVerdict, MetricsError> {
    let k = log.slots();
    if k < th.min_slots.max(2) {
        return Err(MetricsError::TooShort { slots: k, min: th.min_slots.max(2) });
    }
    let total_rate = log.meta.total_rate();
    let threshold = th.slope_fraction * total_rate;
    let half = k / 2;
    let vq = log.virtual_queues.row_sums();
    let rq = log.real_queues.row_sums();
    let virtual_slope = tail_slope(&vq, half..k)?;
    let real_slope = tail_slope(&rq, half..k)?;
    let virtual_overflow = overflow_grid(&vq, half, th, total_rate);
    let real_overflow = overflow_grid(&rq, half, th, total_rate);
    let tail_clear = virtual_overflow.last().is_some_and(|g| g.1 == 0.0)
        && real_overflow.last().is_some_and(|g| g.1 == 0.0);
    let verdict = if virtual_slope > threshold || real_slope > threshold {
        Verdict::Unstable
    } else if virtual_slope.abs() <= threshold && real_slope.abs() <= threshold && tail_clear {
        Verdict::Stable
    } else {
        Verdict::Inconclusive
    };
    Ok(StabilityVerdict { verdict, virtual_slope, real_slope, threshold, virtual_overflow, real_overflow })
}

// ---------------------------------------------------------------------------
// Loynes oracle

fn class_arrivals(x: &Series, u: usize, h: usize) -> TwoFloat {
    x.row(u)[..h].iter().fold(TwoFloat::from(0.0), |acc, &v| acc + v)
}

/// Backlog of hop classes `1..=h` at the end of slot `k`, from the arrival
/// trace alone: the largest excess of arrivals over capacity on any window
/// `[k₀, k]`, clamped at zero. Queues are taken to be empty before slot 0.
pub fn loynes_oracle(x: &Series, capacity: f64, k: usize, h: usize) -> f64 {
    let mut window = TwoFloat::from(0.0);
    let mut best = TwoFloat::from(0.0);
    for k0 in (0..=k).rev() {
        window += class_arrivals(x, k0, h) - capacity;
        best = best.max(window);
    }
    best.hi()
}

/// [`loynes_oracle`] for every slot and class at once, via prefix sums and a
/// running minimum.
pub fn loynes_backlogs(x: &Series, capacity: f64) -> Series {
    let classes = x.width();
    let mut out = Series::new(classes);
    let zero = TwoFloat::from(0.0);
    let mut prefix = vec![zero; classes];
    let mut low = vec![zero; classes];
    let mut row = vec![0.0; classes];
    for u in 0..x.len() {
        for h in 0..classes {
            prefix[h] += class_arrivals(x, u, h + 1) - capacity;
            row[h] = (prefix[h] - low[h]).max(zero).hi();
        }
        for h in 0..classes {
            low[h] = low[h].min(prefix[h]);
        }
        out.push(&row);
    }
    out
}

/// Largest `|engine − oracle|` over every link, slot and hop class.
pub fn loynes_discrepancy(hops: &HopTrace, capacities: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (e, (x, q)) in hops.arrivals.iter().zip(&hops.backlogs).enumerate() {
        let oracle = loynes_backlogs(x, capacities[e]);
        for k in 0..x.len() {
            for (a, b) in oracle.row(k).iter().zip(q.row(k)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Throughput

/// Chunks delivered to one receiver per slot over `window`.
pub fn receiving_rate(
    log: &MetricsLog,
    session: usize,
    receiver: usize,
    window: Range<usize>,
) -> Result<f64, MetricsError> {
    let col = log.receiver_column(session, receiver)?;
    check_window(&window, log.slots())?;
    let at = |k: usize| if k == 0 { 0.0 } else { log.delivered.row(k - 1)[col] };
    Ok((at(window.end) - at(window.start)) / window.len() as f64)
}

/// Running time average of one receiver's deliveries.
pub fn cumulative_receiving_rate(log: &MetricsLog, session: usize, receiver: usize) -> Result<Vec<f64>, MetricsError> {
    let col = log.receiver_column(session, receiver)?;
    Ok((0..log.slots()).map(|k| log.delivered.row(k)[col] / (k + 1) as f64).collect())
}

/// Long-run real arrival rate at each link divided by its capacity.
pub fn link_intensity(log: &MetricsLog) -> Vec<f64> {
    let k = log.slots().max(1) as f64;
    log.meta
        .links
        .iter()
        .enumerate()
        .map(|(e, l)| log.link_arrivals.column(e).iter().sum::<f64>() / (k * l.capacity))
        .collect()
}

// ---------------------------------------------------------------------------
// Control overhead

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOverhead {
    pub forward_bits: u64,
    pub feedback_bits: u64,
    pub forward_bps: f64,
    pub feedback_bps: f64,
}

/// Signaling volume per slot for a network of `n` nodes and `m` links.
///
/// A forward packet per node carries a header plus the session and rate
/// fields, plus one link id per link. The feedback packet per node carries a
/// header plus one id, plus a (link id, queue value) pair per link.
pub fn control_overhead(n: u64, m: u64, header_bytes: u64, id_bits: u64, slot_seconds: f64) -> ControlOverhead {
    let forward_bits = (header_bytes * 8 + 2 * id_bits) * n + id_bits * m;
    let feedback_bits = (header_bytes * 8 + id_bits) * n + 2 * id_bits * m;
    ControlOverhead {
        forward_bits,
        feedback_bits,
        forward_bps: forward_bits as f64 / slot_seconds,
        feedback_bps: feedback_bits as f64 / slot_seconds,
    }
}

// ---------------------------------------------------------------------------
// CSV

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    fn create(dir: &Path, hash: &str, series: &str) -> Result<Self, MetricsError> {
        let path = dir.join(format!("{hash}.{series}.csv"));
        let writer = csv::Writer::from_path(&path).map_err(|source| MetricsError::Csv { path: path.clone(), source })?;
        Ok(Self { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<(), MetricsError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|source| MetricsError::Csv { path: self.path.clone(), source })
    }

    fn finish(mut self) -> Result<PathBuf, MetricsError> {
        self.writer.flush().map_err(|source| MetricsError::Io { path: self.path.clone(), source })?;
        Ok(self.path)
    }
}

/// Writes `<hash>.<series>.csv` files into `dir` and returns their paths.
pub fn export_csv(log: &MetricsLog, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io { path: dir.to_path_buf(), source })?;
    let hash = &log.meta.scenario_hash;
    let links = log.meta.links.len();
    let sessions = &log.meta.sessions;
    let k_total = log.slots();
    let mut paths = Vec::new();

    for (name, series) in [("virtual_queues", &log.virtual_queues), ("real_queues", &log.real_queues)] {
        let mut t = Table::create(dir, hash, name)?;
        t.row(std::iter::once("slot".to_string()).chain((0..links).map(|e| format!("link{e}"))))?;
        for k in 0..k_total {
            t.row(std::iter::once(k.to_string()).chain(series.row(k).iter().map(f64::to_string)))?;
        }
        paths.push(t.finish()?);
    }

    let mut t = Table::create(dir, hash, "regulators")?;
    let mut header = vec!["slot".to_string()];
    for s in sessions {
        for f in ["arrivals", "backlog", "release", "residual"] {
            header.push(format!("s{}_{f}", s.id));
        }
    }
    t.row(&header)?;
    for k in 0..k_total {
        let mut row = vec![k.to_string()];
        for i in 0..sessions.len() {
            for series in [&log.arrivals, &log.regulators, &log.releases, &log.residuals] {
                row.push(series.row(k)[i].to_string());
            }
        }
        t.row(&row)?;
    }
    paths.push(t.finish()?);

    let mut t = Table::create(dir, hash, "receiving_rates")?;
    let mut header = vec!["slot".to_string()];
    for s in sessions {
        for r in &s.receivers {
            header.push(format!("s{}_{r}_delivered", s.id));
            header.push(format!("s{}_{r}_rate", s.id));
        }
    }
    t.row(&header)?;
    for k in 0..k_total {
        let mut row = vec![k.to_string()];
        for &d in log.delivered.row(k) {
            row.push(d.to_string());
            row.push((d / (k + 1) as f64).to_string());
        }
        t.row(&row)?;
    }
    paths.push(t.finish()?);

    let mut t = Table::create(dir, hash, "tree_selections")?;
    let mut header = vec!["slot".to_string()];
    for s in sessions {
        for f in ["tree", "cost", "optimum", "ratio", "previous_cost", "candidate_cost", "injected"] {
            header.push(format!("s{}_{f}", s.id));
        }
    }
    t.row(&header)?;
    for (k, entries) in log.selections.iter().enumerate() {
        let mut row = vec![k.to_string()];
        for e in entries {
            row.extend([
                e.tree.to_string(),
                e.cost.to_string(),
                opt(e.optimum),
                opt(e.ratio),
                opt(e.previous_cost),
                opt(e.candidate_cost),
                (e.injected as u8).to_string(),
            ]);
        }
        t.row(&row)?;
    }
    paths.push(t.finish()?);

    let mut t = Table::create(dir, hash, "link_traffic")?;
    let mut header = vec!["slot".to_string()];
    for e in 0..links {
        header.extend([format!("link{e}_virtual_in"), format!("link{e}_real_in"), format!("link{e}_served")]);
    }
    t.row(&header)?;
    for k in 0..k_total {
        let mut row = vec![k.to_string()];
        for e in 0..links {
            for series in [&log.virtual_arrivals, &log.link_arrivals, &log.link_service] {
                row.push(series.row(k)[e].to_string());
            }
        }
        t.row(&row)?;
    }
    paths.push(t.finish()?);

    let mut t = Table::create(dir, hash, "trees")?;
    t.row(["tree", "session", "root", "links"])?;
    for (id, (s, tree)) in log.trees.iter().enumerate() {
        t.row([id.to_string(), s.to_string(), tree.root().to_string(), tree.to_text()])?;
    }
    paths.push(t.finish()?);

    let mut t = Table::create(dir, hash, "links")?;
    t.row(["link", "tail", "head", "capacity"])?;
    for (e, l) in log.meta.links.iter().enumerate() {
        t.row([e.to_string(), l.tail.clone(), l.head.clone(), l.capacity.to_string()])?;
    }
    paths.push(t.finish()?);

    if let Some(hops) = &log.hops {
        let mut t = Table::create(dir, hash, "hop_classes")?;
        let mut header = vec!["slot".to_string(), "link".to_string()];
        header.extend((1..=hops.classes).map(|h| format!("x_h{h}")));
        header.extend((1..=hops.classes).map(|h| format!("backlog_h{h}")));
        t.row(&header)?;
        for k in 0..k_total {
            for e in 0..links {
                let mut row = vec![k.to_string(), e.to_string()];
                row.extend(hops.arrivals[e].row(k).iter().map(f64::to_string));
                row.extend(hops.backlogs[e].row(k).iter().map(f64::to_string));
                t.row(&row)?;
            }
        }
        paths.push(t.finish()?);
    }
    Ok(paths)
}

fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), MetricsError> {
    let csv_err = |source| MetricsError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)?;
    Ok((header, rows))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, MetricsError> {
    s.parse()
        .map_err(|_| MetricsError::Format { path: path.to_path_buf(), message: format!("not a number: `{s}`") })
}

/// Reads back the per-hop-class trace and link capacities of an exported run.
pub fn read_hop_trace(dir: &Path, hash: &str) -> Result<(HopTrace, Vec<f64>), MetricsError> {
    let links_path = dir.join(format!("{hash}.links.csv"));
    let (_, rows) = read_rows(&links_path)?;
    let capacities = rows
        .iter()
        .map(|r| parse_f64(&links_path, r.get(3).unwrap_or("")))
        .collect::<Result<Vec<_>, _>>()?;

    let path = dir.join(format!("{hash}.hop_classes.csv"));
    if !path.exists() {
        return Err(MetricsError::NoHopTrace);
    }
    let (header, rows) = read_rows(&path)?;
    let classes = (header.len().saturating_sub(2)) / 2;
    let mut trace = HopTrace {
        classes,
        arrivals: vec![Series::new(classes); capacities.len()],
        backlogs: vec![Series::new(classes); capacities.len()],
    };
    for r in &rows {
        let bad = || MetricsError::Format { path: path.clone(), message: "malformed row".into() };
        let e: usize = r.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if e >= capacities.len() || r.len() != 2 + 2 * classes {
            return Err(bad());
        }
        let vals = r.iter().skip(2).map(|v| parse_f64(&path, v)).collect::<Result<Vec<_>, _>>()?;
        trace.arrivals[e].push(&vals[..classes]);
        trace.backlogs[e].push(&vals[classes..]);
    }
    Ok((trace, capacities))
}
