//! Heterogeneous candidate/job behavior graph, meta-path sampling, and
//! token-overlap deduplication of sampled paths.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Candidate,
    Job,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Message,
    Interview,
    Match,
    Browse,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [EdgeKind::Message, EdgeKind::Interview, EdgeKind::Match, EdgeKind::Browse];

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Message => "message",
            EdgeKind::Interview => "interview",
            EdgeKind::Match => "match",
            EdgeKind::Browse => "browse",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub kind: EdgeKind,
    pub target: NodeId,
}

/// Whether a walk step followed an edge from its source or against it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Typed directed graph over candidates and jobs. Edges always join a
/// candidate and a job, so with two node kinds and at least one edge kind
/// the type system is heterogeneous by construction.
#[derive(Debug, Clone, Default)]
pub struct HeteroGraph {
    kinds: Vec<NodeKind>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
    frozen: bool,
}

impl HeteroGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, kind: NodeKind) -> Result<NodeId> {
        if self.frozen {
            return Err(Error::GraphFrozen);
        }
        let id = NodeId(self.kinds.len() as u32);
        self.kinds.push(kind);
        self.outgoing.push(Vec::new());
        self.incoming.push(Vec::new());
        Ok(id)
    }

    pub fn add_edge(&mut self, src: NodeId, kind: EdgeKind, dst: NodeId) -> Result<()> {
        if self.frozen {
            return Err(Error::GraphFrozen);
        }
        let src_kind = self.kind(src)?;
        let dst_kind = self.kind(dst)?;
        if src_kind == dst_kind {
            return Err(Error::SameKindEndpoints(src, dst));
        }
        let idx = self.edges.len();
        self.edges.push(Edge { source: src, kind, target: dst });
        self.outgoing[src.index()].push(idx);
        self.incoming[dst.index()].push(idx);
        Ok(())
    }

    /// Ends construction. Afterwards the graph only serves reads.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn kind(&self, id: NodeId) -> Result<NodeKind> {
        self.kinds.get(id.index()).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_degree(&self, id: NodeId) -> Result<usize> {
        self.kind(id)?;
        Ok(self.outgoing[id.index()].len())
    }

    pub fn in_degree(&self, id: NodeId) -> Result<usize> {
        self.kind(id)?;
        Ok(self.incoming[id.index()].len())
    }

    /// Edge indices touching `id`: outgoing first, then incoming, each in
    /// insertion order.
    fn incident(&self, id: NodeId) -> impl Iterator<Item = usize> + '_ {
        self.outgoing[id.index()].iter().chain(&self.incoming[id.index()]).copied()
    }

    /// True when an edge of `kind` joins `a` and `b` in the given direction.
    pub fn has_edge(&self, a: NodeId, kind: EdgeKind, b: NodeId) -> bool {
        self.outgoing
            .get(a.index())
            .is_some_and(|out| out.iter().any(|&e| self.edges[e].kind == kind && self.edges[e].target == b))
    }

    /// Random walks from a candidate. Each step picks uniformly among the
    /// incident edges (either direction) except the one just traversed; the
    /// walk length is uniform in `1..=max_edges` and a walk ends early when
    /// it runs out of edges.
    pub fn sample_meta_paths(
        &self,
        start: NodeId,
        max_edges: usize,
        num_walks: usize,
        seed: u64,
    ) -> Result<Vec<MetaPathInstance>> {
        if self.kind(start)? != NodeKind::Candidate {
            return Err(Error::NotACandidate(start));
        }
        if max_edges == 0 {
            return Err(Error::InvalidConfig("max_edges must be at least 1".into()));
        }
        if self.incident(start).next().is_none() {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(start.0) << 32));
        let mut walks = Vec::with_capacity(num_walks);
        for _ in 0..num_walks {
            let len = rng.random_range(1..=max_edges);
            let mut nodes = vec![start];
            let mut kinds = Vec::with_capacity(len);
            let mut dirs = Vec::with_capacity(len);
            let mut prev: Option<usize> = None;
            let mut here = start;
            for _ in 0..len {
                let options: Vec<usize> = self.incident(here).filter(|&e| Some(e) != prev).collect();
                if options.is_empty() {
                    break;
                }
                let e = options[rng.random_range(0..options.len())];
                let edge = self.edges[e];
                let (next, dir) = if edge.source == here {
                    (edge.target, Direction::Forward)
                } else {
                    (edge.source, Direction::Backward)
                };
                nodes.push(next);
                kinds.push(edge.kind);
                dirs.push(dir);
                prev = Some(e);
                here = next;
            }
            walks.push(MetaPathInstance { nodes, edge_kinds: kinds, directions: dirs, tokens: BTreeSet::new() });
        }
        Ok(walks)
    }
}

/// One sampled walk `v1 -e1-> v2 ... -el-> v(l+1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPathInstance {
    pub nodes: Vec<NodeId>,
    pub edge_kinds: Vec<EdgeKind>,
    pub directions: Vec<Direction>,
    /// Distinct token ids of the rendered prompt; empty until rendered.
    #[serde(default)]
    pub tokens: BTreeSet<usize>,
}

impl MetaPathInstance {
    pub fn len(&self) -> usize {
        self.edge_kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_kinds.is_empty()
    }
}

/// Token-set overlap `|a ∩ b| / |a ∪ b|`.
pub fn path_similarity(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTokenSet);
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Greedy pass in input order: keeps an instance when its similarity to
/// every instance kept so far is at most `gamma`, stopping at `max_paths`.
/// Instances without rendered tokens are skipped.
pub fn select_diverse_paths(instances: &[MetaPathInstance], gamma: f64, max_paths: usize) -> Vec<MetaPathInstance> {
    let mut kept: Vec<MetaPathInstance> = Vec::new();
    for inst in instances {
        if kept.len() >= max_paths {
            break;
        }
        if inst.tokens.is_empty() {
            continue;
        }
        let diverse = kept
            .iter()
            .all(|k| path_similarity(&k.tokens, &inst.tokens).is_ok_and(|s| s <= gamma));
        if diverse {
            kept.push(inst.clone());
        }
    }
    kept
}
