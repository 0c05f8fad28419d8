//! Scenario parameters and the sectioned key-value config document.
//!
//! ```toml
//! [network]
//! file = "k4.edges"          # relative to the config file
//! capacity_unit = "chunks"   # or "mbps"
//!
//! [[session]]
//! source = "1"
//! receivers = ["2", "3"]
//! rate = 2.7
//! arrival = "poisson"        # or "deterministic"
//!
//! [algorithm]
//! algorithm = "alg1"         # or "alg2"
//! selector = "exact"         # exact | approx-level-<n> | random
//! gamma = 1.0
//! eps1 = 1.0
//! eps2 = 0.05
//! delta = 0.1
//! control_delay = 0
//! strict = false
//!
//! [run]
//! slots = 10000
//! seed = 1
//! chunk_bytes = 256000
//! slot_seconds = 1.0
//! hop_classes = false
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::steiner::DEFAULT_MAX_EXACT_RECEIVERS;
use crate::topology::{
    load_topology, mbps_to_chunks_per_slot, validate_session, ArrivalKind, Network, Session,
    SessionError, TopologyError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Failure to obtain the network a config refers to.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("topology {path}: {source}")]
    Topology { path: PathBuf, source: TopologyError },
    #[error("topology {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("session {session}: receivers unreachable from source: {labels:?}")]
    Unreachable { session: usize, labels: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Regulated sources, constant-rate signaling, γ-approximate min-cost trees.
    Regulated,
    /// Unregulated sources, reduced virtual service, pick-and-compare trees.
    Randomized,
}

impl FromStr for Algorithm {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alg1" | "regulated" => Ok(Algorithm::Regulated),
            "alg2" | "randomized" => Ok(Algorithm::Randomized),
            _ => Err(ConfigError::Invalid(format!("unknown algorithm `{s}`"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Regulated => "alg1",
            Algorithm::Randomized => "alg2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Exact,
    Approx { level: usize },
    Random,
}

impl FromStr for Selector {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Selector::Exact),
            "random" => Ok(Selector::Random),
            "approx" => Ok(Selector::Approx { level: 2 }),
            _ => s
                .strip_prefix("approx-level-")
                .and_then(|l| l.parse().ok())
                .filter(|&level: &usize| level >= 1)
                .map(|level| Selector::Approx { level })
                .ok_or_else(|| ConfigError::Invalid(format!("unknown selector `{s}`"))),
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Exact => f.write_str("exact"),
            Selector::Random => f.write_str("random"),
            Selector::Approx { level } => write!(f, "approx-level-{level}"),
        }
    }
}

/// Everything besides the network and sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub algorithm: Algorithm,
    pub selector: Selector,
    /// Regulator margin: virtual source rate is `λ_s + eps1`.
    pub eps1: f64,
    /// Virtual service reduction for the randomized scheduler.
    pub eps2: f64,
    pub gamma: f64,
    /// Probability of injecting the min-cost tree at the pick stage.
    pub delta: f64,
    /// Abort when a measured approximation ratio exceeds `gamma`.
    pub strict: bool,
    /// Tree selection sees virtual queues from this many slots ago.
    pub control_delay: usize,
    pub slots: usize,
    pub seed: u64,
    pub chunk_bytes: f64,
    pub slot_seconds: f64,
    pub max_exact_receivers: usize,
    /// Record per-hop-class arrivals and backlogs (needed by the Loynes check).
    pub hop_classes: bool,
    /// Solve the exact problem every slot to log ratios and pick statistics.
    pub measure_optimum: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Regulated,
            selector: Selector::Exact,
            eps1: 1.0,
            eps2: 0.05,
            gamma: 1.0,
            delta: 0.1,
            strict: false,
            control_delay: 0,
            slots: 10_000,
            seed: 1,
            chunk_bytes: 256_000.0,
            slot_seconds: 1.0,
            max_exact_receivers: DEFAULT_MAX_EXACT_RECEIVERS,
            hop_classes: false,
            measure_optimum: true,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.eps1 > 0.0 && self.eps1.is_finite()) {
            return bad("eps1 must be positive");
        }
        if !(self.eps2 > 0.0 && self.eps2.is_finite()) {
            return bad("eps2 must be positive");
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return bad("gamma must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta must lie in (0, 1]");
        }
        if !(self.chunk_bytes > 0.0 && self.slot_seconds > 0.0) {
            return bad("chunk_bytes and slot_seconds must be positive");
        }
        if self.algorithm == Algorithm::Regulated && self.selector == Selector::Random {
            return bad("alg1 needs selector exact or approx-level-<n>");
        }
        if self.algorithm == Algorithm::Randomized && self.selector != Selector::Random {
            return bad("alg2 always samples its candidate: selector must be random");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: Network,
    pub sessions: Vec<Session>,
    pub params: Params,
}

impl Scenario {
    /// Validates parameters, sessions and reachability.
    pub fn new(net: Network, sessions: Vec<Session>, params: Params) -> Result<Self, ScenarioError> {
        params.validate()?;
        if sessions.is_empty() {
            return Err(ConfigError::Invalid("at least one session is required".into()).into());
        }
        if params.algorithm == Algorithm::Randomized {
            let min_cap = net.links().iter().map(|l| l.capacity).fold(f64::INFINITY, f64::min);
            if params.eps2 >= min_cap {
                return Err(ConfigError::Invalid(format!(
                    "eps2 = {} must be below the smallest capacity {min_cap}",
                    params.eps2
                ))
                .into());
            }
        }
        for s in &sessions {
            if let Err(missing) = validate_session(&net, s) {
                return Err(ScenarioError::Unreachable {
                    session: s.id,
                    labels: missing.iter().map(|&v| net.label(v).to_string()).collect(),
                });
            }
        }
        Ok(Self { net, sessions, params })
    }

    pub fn rates(&self) -> Vec<f64> {
        self.sessions.iter().map(|s| s.rate).collect()
    }

    /// Copy with every session rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.sessions {
            s.rate *= factor;
        }
        out
    }

    /// Short stable digest of everything that determines a run.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.net.to_edge_list().as_bytes());
        for s in &self.sessions {
            h.update(format!("{:?}", s).as_bytes());
        }
        h.update(format!("{:?}", self.params).as_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Document

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    network: NetworkSection,
    #[serde(rename = "session")]
    sessions: Vec<SessionSection>,
    #[serde(default)]
    algorithm: AlgorithmSection,
    #[serde(default)]
    run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    file: PathBuf,
    #[serde(default)]
    capacity_unit: CapacityUnit,
}

#[derive(Debug, Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum CapacityUnit {
    #[default]
    Chunks,
    Mbps,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionSection {
    source: String,
    receivers: Vec<String>,
    rate: f64,
    #[serde(default = "default_arrival")]
    arrival: ArrivalKind,
    /// `rate` given in Mbps rather than chunks per slot.
    #[serde(default)]
    rate_unit: CapacityUnit,
}

fn default_arrival() -> ArrivalKind {
    ArrivalKind::Poisson
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AlgorithmSection {
    algorithm: Option<String>,
    selector: Option<String>,
    gamma: Option<f64>,
    eps1: Option<f64>,
    eps2: Option<f64>,
    delta: Option<f64>,
    control_delay: Option<usize>,
    strict: Option<bool>,
    max_exact_receivers: Option<usize>,
    measure_optimum: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunSection {
    slots: Option<usize>,
    seed: Option<u64>,
    chunk_bytes: Option<f64>,
    slot_seconds: Option<f64>,
    hop_classes: Option<bool>,
}

/// A parsed config whose network has not been loaded yet.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub network_file: PathBuf,
    capacity_unit: CapacityUnit,
    sessions: Vec<(String, Vec<String>, f64, ArrivalKind, CapacityUnit)>,
    pub params: Params,
}

/// Every recognised key, `section.key`, for help output.
pub const CONFIG_KEYS: &[&str] = &[
    "network.file",
    "network.capacity_unit",
    "session.source",
    "session.receivers",
    "session.rate",
    "session.arrival",
    "session.rate_unit",
    "algorithm.algorithm",
    "algorithm.selector",
    "algorithm.gamma",
    "algorithm.eps1",
    "algorithm.eps2",
    "algorithm.delta",
    "algorithm.control_delay",
    "algorithm.strict",
    "algorithm.max_exact_receivers",
    "algorithm.measure_optimum",
    "run.slots",
    "run.seed",
    "run.chunk_bytes",
    "run.slot_seconds",
    "run.hop_classes",
];

impl ScenarioConfig {
    /// Parses a config document. Relative network paths resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let doc: Document = toml::from_str(text)?;
        let mut p = Params::default();
        let a = doc.algorithm;
        if let Some(s) = a.algorithm {
            p.algorithm = s.parse()?;
        }
        if let Some(s) = a.selector {
            p.selector = s.parse()?;
        } else if p.algorithm == Algorithm::Randomized {
            p.selector = Selector::Random;
        }
        p.gamma = a.gamma.unwrap_or(p.gamma);
        p.eps1 = a.eps1.unwrap_or(p.eps1);
        p.eps2 = a.eps2.unwrap_or(p.eps2);
        p.delta = a.delta.unwrap_or(p.delta);
        p.control_delay = a.control_delay.unwrap_or(p.control_delay);
        p.strict = a.strict.unwrap_or(p.strict);
        p.max_exact_receivers = a.max_exact_receivers.unwrap_or(p.max_exact_receivers);
        p.measure_optimum = a.measure_optimum.unwrap_or(p.measure_optimum);
        let r = doc.run;
        p.slots = r.slots.unwrap_or(p.slots);
        p.seed = r.seed.unwrap_or(p.seed);
        p.chunk_bytes = r.chunk_bytes.unwrap_or(p.chunk_bytes);
        p.slot_seconds = r.slot_seconds.unwrap_or(p.slot_seconds);
        p.hop_classes = r.hop_classes.unwrap_or(p.hop_classes);

        if doc.sessions.is_empty() {
            return Err(ConfigError::Invalid("at least one [[session]] is required".into()));
        }
        let network_file = if doc.network.file.is_absolute() {
            doc.network.file
        } else {
            base_dir.join(doc.network.file)
        };
        Ok(Self {
            network_file,
            capacity_unit: doc.network.capacity_unit,
            sessions: doc
                .sessions
                .into_iter()
                .map(|s| (s.source, s.receivers, s.rate, s.arrival, s.rate_unit))
                .collect(),
            params: p,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads the network and builds a validated scenario.
    pub fn load(&self) -> Result<Scenario, ScenarioError> {
        let path = self.network_file.clone();
        let text = std::fs::read_to_string(&path)
            .map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
        let mut net =
            load_topology(&text).map_err(|source| ScenarioError::Topology { path: path.clone(), source })?;
        let p = &self.params;
        if let CapacityUnit::Mbps = self.capacity_unit {
            let links: Vec<_> = net
                .links()
                .iter()
                .map(|l| (l.tail, l.head, mbps_to_chunks_per_slot(l.capacity, p.chunk_bytes, p.slot_seconds)))
                .collect();
            net = Network::new(net.labels().to_vec(), links)
                .map_err(|source| ScenarioError::Topology { path: path.clone(), source })?;
        }
        let mut sessions = Vec::new();
        for (id, (src, recv, rate, arrival, unit)) in self.sessions.iter().enumerate() {
            let resolve = |label: &str| {
                net.resolve(label).map_err(|source| ScenarioError::Topology { path: path.clone(), source })
            };
            let source = resolve(src)?;
            let receivers = recv.iter().map(|r| resolve(r)).collect::<Result<Vec<_>, _>>()?;
            let rate = match unit {
                CapacityUnit::Chunks => *rate,
                CapacityUnit::Mbps => mbps_to_chunks_per_slot(*rate, p.chunk_bytes, p.slot_seconds),
            };
            sessions.push(Session::new(id, source, receivers, *arrival, rate).map_err(ConfigError::from)?);
        }
        Scenario::new(net, sessions, p.clone())
    }
}
