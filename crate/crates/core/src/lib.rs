//! Multicast distribution over Steiner trees in a slotted network: exact and
//! approximate min-cost tree solvers, a tree-packing throughput oracle, the
//! regulated and randomized tree schedulers, a fluid data plane with hop-count
//! priority, and stability metrics.

pub mod dataplane;
pub mod engine;
pub mod metrics;
pub mod randomized;
pub mod rate_region;
pub mod regulated;
pub mod scenario;
pub mod schedule;
pub mod steiner;
pub mod topology;
