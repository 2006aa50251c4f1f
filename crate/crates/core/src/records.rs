//! Line-delimited JSON records for world files, and their loaders.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, HeteroGraph, NodeId, NodeKind};
use crate::prompt::{CandidateProfile, JobDescription};
use crate::synth::{PairLabel, World};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const JDS_FILE: &str = "jds.jsonl";
pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub schema_version: u32,
    pub id: NodeId,
    pub attributes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionRecord {
    pub schema_version: u32,
    pub source_id: NodeId,
    pub source_kind: NodeKind,
    pub edge_kind: EdgeKind,
    pub target_id: NodeId,
    pub target_kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub schema_version: u32,
    pub candidate: NodeId,
    pub job: NodeId,
    pub positive: bool,
}

/// One JSON document per line, each followed by `\n`.
pub fn to_jsonl<R: Serialize>(records: &[R]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<R: Serialize>(path: &Path, records: &[R]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_jsonl(records)?.as_bytes())?;
    Ok(())
}

/// Reads every non-blank line; parse errors carry the file and line number.
pub fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let f = fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn check_version(v: u32, what: &str) -> Result<()> {
    if v == RECORD_SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Parse(format!("unsupported {what} schema version {v}")))
    }
}

pub fn world_records(world: &World) -> (Vec<NodeRecord>, Vec<NodeRecord>, Vec<InteractionRecord>, Vec<LabelRecord>) {
    let node = |id: NodeId, attributes: &[(String, String)]| NodeRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        id,
        attributes: attributes.to_vec(),
    };
    let profiles = world.profiles.values().map(|p| node(p.node, &p.attributes)).collect();
    let jds = world.jds.values().map(|j| node(j.node, &j.attributes)).collect();
    let kind = |id: NodeId| if world.profiles.contains_key(&id) { NodeKind::Candidate } else { NodeKind::Job };
    let interactions = world
        .graph
        .edges()
        .iter()
        .map(|e| InteractionRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            source_id: e.source,
            source_kind: kind(e.source),
            edge_kind: e.kind,
            target_id: e.target,
            target_kind: kind(e.target),
        })
        .collect();
    let labels = world
        .labels
        .iter()
        .map(|l| LabelRecord { schema_version: RECORD_SCHEMA_VERSION, candidate: l.candidate, job: l.job, positive: l.positive })
        .collect();
    (profiles, jds, interactions, labels)
}

pub fn save_world(world: &World, dir: &Path) -> Result<()> {
    let (profiles, jds, interactions, labels) = world_records(world);
    write_jsonl(&dir.join(PROFILES_FILE), &profiles)?;
    write_jsonl(&dir.join(JDS_FILE), &jds)?;
    write_jsonl(&dir.join(INTERACTIONS_FILE), &interactions)?;
    write_jsonl(&dir.join(LABELS_FILE), &labels)
}

/// Rebuilds a world from its four files. Node ids must be dense, starting
/// at zero; latent skills are not part of the files.
pub fn load_world(dir: &Path) -> Result<World> {
    let profiles: Vec<NodeRecord> = read_jsonl(&dir.join(PROFILES_FILE))?;
    let jds: Vec<NodeRecord> = read_jsonl(&dir.join(JDS_FILE))?;
    let interactions: Vec<InteractionRecord> = read_jsonl(&dir.join(INTERACTIONS_FILE))?;
    let labels: Vec<LabelRecord> = read_jsonl(&dir.join(LABELS_FILE))?;

    let mut kinds: BTreeMap<NodeId, (NodeKind, &NodeRecord)> = BTreeMap::new();
    for (kind, recs) in [(NodeKind::Candidate, &profiles), (NodeKind::Job, &jds)] {
        for r in recs {
            check_version(r.schema_version, "node")?;
            if kinds.insert(r.id, (kind, r)).is_some() {
                return Err(Error::Parse(format!("node id {} appears twice", r.id)));
            }
        }
    }
    let mut graph = HeteroGraph::new();
    let mut world_profiles = BTreeMap::new();
    let mut world_jds = BTreeMap::new();
    for (expected, (&id, &(kind, rec))) in kinds.iter().enumerate() {
        if id.index() != expected {
            return Err(Error::Parse(format!("node ids must be dense from 0; missing id {expected}")));
        }
        graph.add_node(kind)?;
        match kind {
            NodeKind::Candidate => {
                world_profiles.insert(id, CandidateProfile::new(id, rec.attributes.clone())?);
            }
            NodeKind::Job => {
                world_jds.insert(id, JobDescription::new(id, rec.attributes.clone())?);
            }
        }
    }
    for r in &interactions {
        check_version(r.schema_version, "interaction")?;
        if graph.kind(r.source_id)? != r.source_kind || graph.kind(r.target_id)? != r.target_kind {
            return Err(Error::Parse(format!("interaction {} -> {} has wrong endpoint kinds", r.source_id, r.target_id)));
        }
        graph.add_edge(r.source_id, r.edge_kind, r.target_id)?;
    }
    graph.freeze();
    let mut pool = Vec::with_capacity(labels.len());
    for r in &labels {
        check_version(r.schema_version, "label")?;
        if !world_profiles.contains_key(&r.candidate) || !world_jds.contains_key(&r.job) {
            return Err(Error::Parse(format!("label ({}, {}) is not a candidate/job pair", r.candidate, r.job)));
        }
        pool.push(PairLabel { candidate: r.candidate, job: r.job, positive: r.positive });
    }
    Ok(World { profiles: world_profiles, jds: world_jds, graph, labels: pool, latent_skills: None })
}
