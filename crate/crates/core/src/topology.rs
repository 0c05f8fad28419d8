//! Directed capacitated networks, sessions and the edge-list text format.
//!
//! An edge-list document has one link per line, `tail head capacity`,
//! whitespace separated. Everything after a `#` is a comment. Node labels are
//! arbitrary tokens; dense node ids are assigned in order of first appearance.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type LinkId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("link {link}: capacity must be positive and finite, got {capacity}")]
    Capacity { link: LinkId, capacity: f64 },
    #[error("link {link}: self-loop at node {node}")]
    SelfLoop { link: LinkId, node: NodeId },
    #[error("link {link}: endpoint {node} out of range")]
    UnknownNode { link: LinkId, node: NodeId },
    #[error("source set is empty")]
    EmptySources,
    #[error("unknown node label `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub tail: NodeId,
    pub head: NodeId,
    /// Chunks per slot.
    pub capacity: f64,
}

/// Immutable directed graph with per-link capacities.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    labels: Vec<String>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
}

impl Network {
    /// Builds a network from node labels and `(tail, head, capacity)` triples.
    /// Link ids follow the order of `links`.
    pub fn new(
        labels: Vec<String>,
        links: impl IntoIterator<Item = (NodeId, NodeId, f64)>,
    ) -> Result<Self, TopologyError> {
        let n = labels.len();
        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        let mut stored = Vec::new();
        for (id, (tail, head, capacity)) in links.into_iter().enumerate() {
            for node in [tail, head] {
                if node >= n {
                    return Err(TopologyError::UnknownNode { link: id, node });
                }
            }
            if tail == head {
                return Err(TopologyError::SelfLoop { link: id, node: tail });
            }
            if !(capacity > 0.0 && capacity.is_finite()) {
                return Err(TopologyError::Capacity { link: id, capacity });
            }
            out_links[tail].push(id);
            in_links[head].push(id);
            stored.push(Link { id, tail, head, capacity });
        }
        Ok(Self { labels, links: stored, out_links, in_links })
    }

    /// Network whose nodes are labelled `0..n`.
    pub fn with_node_count(
        n: usize,
        links: impl IntoIterator<Item = (NodeId, NodeId, f64)>,
    ) -> Result<Self, TopologyError> {
        Self::new((0..n).map(|i| i.to_string()).collect(), links)
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: NodeId) -> &[LinkId] {
        &self.in_links[node]
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    pub fn total_capacity(&self) -> f64 {
        self.links.iter().map(|l| l.capacity).sum()
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn resolve(&self, label: &str) -> Result<NodeId, TopologyError> {
        self.node_by_label(label)
            .ok_or_else(|| TopologyError::UnknownLabel(label.to_string()))
    }

    /// Nodes reachable from `from` along directed links, as a membership mask.
    pub fn reachable_from(&self, from: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            for &e in &self.out_links[u] {
                let v = self.links[e].head;
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Serializes in the edge-list format accepted by [`load_topology`].
    /// Isolated nodes cannot be represented and are dropped.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for link in &self.links {
            let _ = writeln!(
                out,
                "{} {} {}",
                self.labels[link.tail], self.labels[link.head], link.capacity
            );
        }
        out
    }
}

/// Parses an edge-list document.
pub fn load_topology(text: &str) -> Result<Network, TopologyError> {
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, NodeId> = HashMap::new();
    let mut links = Vec::new();
    let mut intern = |label: &str, labels: &mut Vec<String>| -> NodeId {
        *index.entry(label.to_string()).or_insert_with(|| {
            labels.push(label.to_string());
            labels.len() - 1
        })
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| TopologyError::Parse { line: lineno + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected `tail head capacity`, found {} fields",
                fields.len()
            )));
        }
        let capacity: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("invalid capacity `{}`", fields[2])))?;
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(TopologyError::Capacity { link: links.len(), capacity });
        }
        let tail = intern(fields[0], &mut labels);
        let head = intern(fields[1], &mut labels);
        links.push((tail, head, capacity));
    }
    Network::new(labels, links)
}

/// Converts a link rate in Mbps into chunks per slot.
pub fn mbps_to_chunks_per_slot(mbps: f64, chunk_bytes: f64, slot_seconds: f64) -> f64 {
    mbps * 1e6 * slot_seconds / (chunk_bytes * 8.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    Deterministic,
    Poisson,
}

/// One multicast source and its receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: usize,
    pub source: NodeId,
    pub receivers: Vec<NodeId>,
    pub arrival: ArrivalKind,
    /// Mean arrivals, chunks per slot.
    pub rate: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("session {0}: receiver set is empty")]
    NoReceivers(usize),
    #[error("session {0}: source is listed as a receiver")]
    SourceIsReceiver(usize),
    #[error("session {0}: duplicate receiver {1}")]
    DuplicateReceiver(usize, NodeId),
    #[error("session {0}: rate must be finite and nonnegative, got {1}")]
    Rate(usize, f64),
    #[error("session {0}: node {1} is not in the network")]
    UnknownNode(usize, NodeId),
}

impl Session {
    pub fn new(
        id: usize,
        source: NodeId,
        receivers: Vec<NodeId>,
        arrival: ArrivalKind,
        rate: f64,
    ) -> Result<Self, SessionError> {
        if receivers.is_empty() {
            return Err(SessionError::NoReceivers(id));
        }
        if receivers.contains(&source) {
            return Err(SessionError::SourceIsReceiver(id));
        }
        for (i, r) in receivers.iter().enumerate() {
            if receivers[..i].contains(r) {
                return Err(SessionError::DuplicateReceiver(id, *r));
            }
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(SessionError::Rate(id, rate));
        }
        Ok(Self { id, source, receivers, arrival, rate })
    }

    pub fn with_rate(&self, rate: f64) -> Self {
        Self { rate, ..self.clone() }
    }
}

/// Checks that every receiver is reachable from the source. On failure the
/// unreachable receivers are returned in receiver order.
pub fn validate_session(net: &Network, sess: &Session) -> Result<(), Vec<NodeId>> {
    let n = net.node_count();
    if sess.source >= n {
        return Err(sess.receivers.clone());
    }
    let seen = net.reachable_from(sess.source);
    let missing: Vec<NodeId> = sess
        .receivers
        .iter()
        .copied()
        .filter(|&r| r >= n || !seen[r])
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(missing)
    }
}

/// Adds one virtual node feeding every node in `sources` through a link of
/// capacity `Σc_e + 1`. Returns the new network and the virtual node id.
pub fn multi_source_transform(
    net: &Network,
    sources: &[NodeId],
) -> Result<(Network, NodeId), TopologyError> {
    if sources.is_empty() {
        return Err(TopologyError::EmptySources);
    }
    let virtual_node = net.node_count();
    let mut label = String::from("virtual");
    while net.node_by_label(&label).is_some() {
        label.push('_');
    }
    let mut labels = net.labels.clone();
    labels.push(label);
    let sentinel = net.total_capacity() + 1.0;
    let links = net
        .links
        .iter()
        .map(|l| (l.tail, l.head, l.capacity))
        .chain(sources.iter().map(|&s| (virtual_node, s, sentinel)));
    Ok((Network::new(labels, links)?, virtual_node))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k4_text() -> String {
        let mut s = String::from("# complete digraph on 4 nodes\n");
        for a in 1..=4 {
            for b in 1..=4 {
                if a != b {
                    s.push_str(&format!("{a} {b} 1\n"));
                }
            }
        }
        s
    }

    #[test]
    fn loads_small_edge_list() {
        let net = load_topology("0 1 1.0\n0 2 1.0").unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.link_count(), 2);
        assert_eq!(net.link(1).head, 2);
    }

    #[test]
    fn rejects_nonpositive_capacity() {
        let err = load_topology("0 1 -1").unwrap_err();
        assert!(matches!(err, TopologyError::Capacity { .. }));
        assert!(load_topology("0 1 0").is_err());
    }

    #[test]
    fn reports_line_of_malformed_entry() {
        let err = load_topology("# header\n0 1 1\n0 1\n").unwrap_err();
        assert_eq!(err, TopologyError::Parse { line: 3, message: "expected `tail head capacity`, found 2 fields".into() });
        let err = load_topology("a b fast").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 1, .. }));
    }

    #[test]
    fn rejects_self_loop() {
        assert!(matches!(
            load_topology("3 3 1").unwrap_err(),
            TopologyError::SelfLoop { .. }
        ));
    }

    #[test]
    fn complete_digraph_counts() {
        let net = load_topology(&k4_text()).unwrap();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.link_count(), 12);
        // ids by first appearance
        assert_eq!(net.node_by_label("1"), Some(0));
        assert_eq!(net.node_by_label("4"), Some(3));
    }

    #[test]
    fn comments_and_blank_lines() {
        let net = load_topology("\n  # only a comment\nx y 2.5 # trailing\n\n").unwrap();
        assert_eq!(net.link_count(), 1);
        assert_eq!(net.link(0).capacity, 2.5);
    }

    #[test]
    fn session_reachability() {
        let path = Network::with_node_count(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let s = Session::new(0, 0, vec![2], ArrivalKind::Poisson, 1.0).unwrap();
        assert_eq!(validate_session(&path, &s), Ok(()));

        let cut = Network::with_node_count(3, [(0, 1, 1.0)]).unwrap();
        assert_eq!(validate_session(&cut, &s), Err(vec![2]));

        let k4 = load_topology(&k4_text()).unwrap();
        let s = Session::new(0, k4.resolve("1").unwrap(), vec![1, 2], ArrivalKind::Poisson, 1.0)
            .unwrap();
        assert!(validate_session(&k4, &s).is_ok());
    }

    #[test]
    fn session_invariants() {
        assert_eq!(
            Session::new(0, 0, vec![], ArrivalKind::Poisson, 1.0),
            Err(SessionError::NoReceivers(0))
        );
        assert_eq!(
            Session::new(0, 0, vec![0, 1], ArrivalKind::Poisson, 1.0),
            Err(SessionError::SourceIsReceiver(0))
        );
        assert!(Session::new(0, 0, vec![1], ArrivalKind::Poisson, -0.5).is_err());
    }

    #[test]
    fn multi_source_adds_virtual_feeders() {
        let net = Network::with_node_count(3, [(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let (t, v) = multi_source_transform(&net, &[0, 1]).unwrap();
        assert_eq!(v, 3);
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.link_count(), net.link_count() + 2);

        let (t, _) = multi_source_transform(&net, &[0]).unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.link_count(), 3);

        assert_eq!(multi_source_transform(&net, &[]), Err(TopologyError::EmptySources));
    }

    #[test]
    fn multi_source_sentinel_on_k4() {
        let net = load_topology(&k4_text()).unwrap();
        let sources = [net.resolve("1").unwrap(), net.resolve("2").unwrap()];
        let (t, v) = multi_source_transform(&net, &sources).unwrap();
        for &e in t.out_links(v) {
            assert_eq!(t.link(e).capacity, 13.0);
        }
        assert_eq!(&t.links()[..12], net.links());
    }

    #[test]
    fn mbps_conversion_matches_chunk_arithmetic() {
        // 256 KB chunks (1000-byte KB), one-second slots.
        let mean = mbps_to_chunks_per_slot(1990.0, 256_000.0, 1.0);
        assert!((mean - 971.68).abs() < 0.01);
    }
}
