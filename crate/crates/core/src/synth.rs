//! Synthetic recruitment world with planted preference structure.
//!
//! Skills are grouped into domains. Every candidate and job draws a latent
//! skill set mostly from one domain; candidate profiles list only part of
//! the latent set, while jobs list all requirements. Affinity is the share
//! of a job's required skills the candidate holds. Interactions favour
//! high-affinity jobs, so a candidate's graph neighbourhood reveals latent
//! skills the profile leaves out.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, HeteroGraph, NodeId, NodeKind};
use crate::prompt::{Answer, CandidateProfile, JobDescription, Task};

const SKILL_NAMES: [&str; 24] = [
    "java", "sql", "python", "spark", "hadoop", "scala", "html", "css", "javascript", "react", "typescript", "vue",
    "excel", "accounting", "finance", "audit", "tax", "budgeting", "photoshop", "illustrator", "sketch", "figma",
    "typography", "branding",
];

const TITLE_NAMES: [&str; 12] = [
    "data engineer",
    "frontend developer",
    "accountant",
    "graphic designer",
    "backend developer",
    "web developer",
    "financial analyst",
    "visual designer",
    "java engineer",
    "ui engineer",
    "auditor",
    "brand designer",
];

const MAJORS: [&str; 6] = ["computer science", "mathematics", "economics", "art", "physics", "management"];
const EDUCATION: [&str; 3] = ["bachelor", "master", "doctorate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_candidates: usize,
    pub n_jobs: usize,
    pub n_skills: usize,
    /// Skill clusters; skills and titles are split evenly between them.
    pub n_domains: usize,
    pub n_position_titles: usize,
    pub skills_per_node: usize,
    /// How many latent skills a candidate profile lists.
    pub visible_skills: usize,
    /// Chance that each latent skill is drawn outside the node's domain.
    pub cross_domain_rate: f64,
    pub interactions_per_candidate: usize,
    pub match_threshold: f64,
    pub label_noise: f64,
    /// Untouched jobs labeled per candidate. Labels are drawn without
    /// looking at the class, so the pool keeps the configured noise rate.
    pub labeled_per_candidate: usize,
    /// Cap on each class per candidate in the task datasets.
    pub labeled_per_class: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_candidates: 200,
            n_jobs: 300,
            n_skills: 24,
            n_domains: 4,
            n_position_titles: 12,
            skills_per_node: 3,
            visible_skills: 1,
            cross_domain_rate: 0.15,
            interactions_per_candidate: 6,
            match_threshold: 0.34,
            label_noise: 0.05,
            labeled_per_candidate: 48,
            labeled_per_class: 6,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_candidates < 10 || self.n_jobs < 10 {
            return bad("world needs at least 10 candidates and 10 jobs".into());
        }
        if self.n_skills < 4 {
            return bad("world.n_skills must be at least 4".into());
        }
        if self.n_domains == 0 || self.n_domains > self.n_skills || self.n_domains > self.n_position_titles {
            return bad("world.n_domains must be between 1 and min(n_skills, n_position_titles)".into());
        }
        if self.skills_per_node == 0 || self.skills_per_node > self.n_skills {
            return bad("world.skills_per_node must be between 1 and n_skills".into());
        }
        if self.visible_skills > self.skills_per_node {
            return bad("world.visible_skills cannot exceed skills_per_node".into());
        }
        if !(0.0..=1.0).contains(&self.cross_domain_rate) {
            return bad(format!("world.cross_domain_rate must lie in [0, 1], got {}", self.cross_domain_rate));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("world.label_noise must lie in [0, 0.5), got {}", self.label_noise));
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return bad(format!("world.match_threshold must lie in [0, 1], got {}", self.match_threshold));
        }
        if self.interactions_per_candidate == 0 || self.interactions_per_candidate > 10 {
            return bad("world.interactions_per_candidate must be in 1..=10".into());
        }
        if self.labeled_per_class == 0 || self.labeled_per_candidate == 0 {
            return bad("world.labeled_per_class and world.labeled_per_candidate must be positive".into());
        }
        Ok(())
    }

    fn skill_name(&self, i: usize) -> String {
        SKILL_NAMES.get(i).map_or_else(|| format!("skill{i}"), |s| s.to_string())
    }

    fn title_name(&self, i: usize) -> String {
        TITLE_NAMES.get(i).map_or_else(|| format!("position{i}"), |s| s.to_string())
    }

    fn skill_domain(&self, skill: usize) -> usize {
        skill * self.n_domains / self.n_skills
    }

    fn title_domain(&self, title: usize) -> usize {
        title % self.n_domains
    }
}

/// One labeled example: a candidate with one (point-wise) or two (pair-wise)
/// jobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub candidate: NodeId,
    pub jobs: Vec<NodeId>,
    pub task: Task,
    pub label: Answer,
}

/// Ground-truth judgement of one candidate/job pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabel {
    pub candidate: NodeId,
    pub job: NodeId,
    pub positive: bool,
}

/// Observable world: texts, behavior graph and the labeled pool. Worlds
/// built by [`generate_world`] also carry their latent skills; worlds read
/// back from files do not.
#[derive(Debug, Clone)]
pub struct World {
    pub profiles: BTreeMap<NodeId, CandidateProfile>,
    pub jds: BTreeMap<NodeId, JobDescription>,
    pub graph: HeteroGraph,
    /// Evaluation pool: pairs with no direct graph interaction.
    pub labels: Vec<PairLabel>,
    /// Latent skill ids per node, indexed by `NodeId`.
    pub latent_skills: Option<Vec<BTreeSet<usize>>>,
}

/// Share of the job's required skills held by the candidate.
pub fn affinity(candidate_skills: &BTreeSet<usize>, job_skills: &BTreeSet<usize>) -> f64 {
    if job_skills.is_empty() {
        return 0.0;
    }
    candidate_skills.intersection(job_skills).count() as f64 / job_skills.len() as f64
}

impl World {
    /// Planted affinity; `None` when the latent skills are unknown.
    pub fn affinity(&self, candidate: NodeId, job: NodeId) -> Option<f64> {
        let skills = self.latent_skills.as_ref()?;
        Some(affinity(skills.get(candidate.index())?, skills.get(job.index())?))
    }

    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.profiles.keys().copied()
    }

    pub fn jobs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.jds.keys().copied()
    }
}

/// Thresholded affinity, flipped with probability `noise`.
pub fn label_pair<R: Rng>(
    candidate_skills: &BTreeSet<usize>,
    job_skills: &BTreeSet<usize>,
    threshold: f64,
    noise: f64,
    rng: &mut R,
) -> bool {
    let clean = affinity(candidate_skills, job_skills) >= threshold;
    clean ^ rng.random_bool(noise)
}

fn draw_skills<R: Rng>(cfg: &WorldConfig, domain: usize, rng: &mut R) -> BTreeSet<usize> {
    let own: Vec<usize> = (0..cfg.n_skills).filter(|&s| cfg.skill_domain(s) == domain).collect();
    let other: Vec<usize> = (0..cfg.n_skills).filter(|&s| cfg.skill_domain(s) != domain).collect();
    let mut set = BTreeSet::new();
    while set.len() < cfg.skills_per_node {
        let pool = if other.is_empty() || rng.random_bool(1.0 - cfg.cross_domain_rate) { &own } else { &other };
        let fallback = if pool.is_empty() { &other } else { pool };
        set.insert(*fallback.choose(rng).expect("nonempty skill pool"));
    }
    set
}

fn skill_list(cfg: &WorldConfig, skills: impl IntoIterator<Item = usize>) -> String {
    skills.into_iter().map(|s| cfg.skill_name(s)).collect::<Vec<_>>().join("/")
}

/// Builds the world deterministically from `config.seed`.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let cfg = config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut graph = HeteroGraph::new();
    let mut profiles = BTreeMap::new();
    let mut jds = BTreeMap::new();
    let mut skills = Vec::with_capacity(cfg.n_candidates + cfg.n_jobs);

    for _ in 0..cfg.n_candidates {
        let id = graph.add_node(NodeKind::Candidate)?;
        let domain = rng.random_range(0..cfg.n_domains);
        let latent = draw_skills(cfg, domain, &mut rng);
        let mut shown: Vec<usize> = latent.iter().copied().collect();
        shown.shuffle(&mut rng);
        shown.truncate(cfg.visible_skills);
        shown.sort_unstable();
        let attrs = vec![
            ("age".to_string(), rng.random_range(22..41).to_string()),
            ("education".to_string(), EDUCATION.choose(&mut rng).expect("nonempty").to_string()),
            ("major".to_string(), MAJORS.choose(&mut rng).expect("nonempty").to_string()),
            ("work_experience".to_string(), format!("{} years", rng.random_range(1..11))),
            ("skills".to_string(), skill_list(cfg, shown)),
        ];
        profiles.insert(id, CandidateProfile::new(id, attrs)?);
        skills.push(latent);
    }

    for _ in 0..cfg.n_jobs {
        let id = graph.add_node(NodeKind::Job)?;
        let domain = rng.random_range(0..cfg.n_domains);
        let titles: Vec<usize> = (0..cfg.n_position_titles).filter(|&t| cfg.title_domain(t) == domain).collect();
        let title = *titles.choose(&mut rng).expect("every domain owns a title");
        let latent = draw_skills(cfg, domain, &mut rng);
        let low = rng.random_range(1..6);
        let attrs = vec![
            ("position_title".to_string(), cfg.title_name(title)),
            ("education_requirement".to_string(), EDUCATION.choose(&mut rng).expect("nonempty").to_string()),
            ("work_experience".to_string(), format!("{}-{} years", low, low + 2)),
            ("skill_requirements".to_string(), skill_list(cfg, latent.iter().copied())),
        ];
        jds.insert(id, JobDescription::new(id, attrs)?);
        skills.push(latent);
    }

    let job_ids: Vec<NodeId> = jds.keys().copied().collect();
    let noisy_label = |c: usize, j: usize, rng: &mut ChaCha8Rng| {
        label_pair(&skills[c], &skills[j], cfg.match_threshold, cfg.label_noise, rng)
    };

    let mut labels = Vec::new();
    for c in 0..cfg.n_candidates {
        let cid = NodeId(c as u32);
        // Interactions: affinity-weighted draws without replacement.
        let k = rng.random_range(cfg.interactions_per_candidate.div_ceil(2)..=cfg.interactions_per_candidate * 3 / 2);
        let k = k.min(10).min(job_ids.len());
        let mut touched = BTreeSet::new();
        while touched.len() < k {
            let weighted = job_ids
                .choose_weighted(&mut rng, |j| 0.02 + affinity(&skills[c], &skills[j.index()]).powi(2))
                .map_err(|e| Error::DegenerateWorld(e.to_string()))?;
            touched.insert(*weighted);
        }
        for &j in &touched {
            let positive = noisy_label(c, j.index(), &mut rng);
            let kind = if positive && rng.random_bool(0.4) {
                EdgeKind::Match
            } else {
                *[EdgeKind::Interview, EdgeKind::Message, EdgeKind::Browse].choose(&mut rng).expect("nonempty")
            };
            if kind == EdgeKind::Message && rng.random_bool(0.5) {
                graph.add_edge(j, kind, cid)?;
            } else {
                graph.add_edge(cid, kind, j)?;
            }
        }

        // Evaluation pool: a random sample of untouched jobs, all labeled.
        let mut order: Vec<NodeId> = job_ids.iter().copied().filter(|j| !touched.contains(j)).collect();
        order.shuffle(&mut rng);
        order.truncate(cfg.labeled_per_candidate);
        order.sort();
        for j in order {
            let positive = noisy_label(c, j.index(), &mut rng);
            labels.push(PairLabel { candidate: cid, job: j, positive });
        }
    }
    graph.freeze();

    let n_pos = labels.iter().filter(|l| l.positive).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateWorld(format!(
            "all {} labeled pairs share one class; adjust match_threshold or skills_per_node",
            labels.len()
        )));
    }
    Ok(World { profiles, jds, graph, labels, latent_skills: Some(skills) })
}

/// Task-specific labeled examples from the evaluation pool.
///
/// Point-wise: per candidate, equally many positive and negative pairs, at
/// most `per_class` of each.
/// Pair-wise: per candidate, positives zipped with negatives; a fair coin on
/// the seeded stream decides whether the preferred job is shown as A or B.
pub fn make_task_datasets(world: &World, task: Task, per_class: usize, seed: u64) -> Vec<LabeledPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_candidate: BTreeMap<NodeId, (Vec<NodeId>, Vec<NodeId>)> = BTreeMap::new();
    for l in &world.labels {
        let e = by_candidate.entry(l.candidate).or_default();
        if l.positive {
            e.0.push(l.job);
        } else {
            e.1.push(l.job);
        }
    }
    let mut out = Vec::new();
    for (c, (pos, neg)) in by_candidate {
        let n = pos.len().min(neg.len()).min(per_class);
        match task {
            Task::PointWise => {
                for i in 0..n {
                    out.push(LabeledPair { candidate: c, jobs: vec![pos[i]], task, label: Answer::Yes });
                    out.push(LabeledPair { candidate: c, jobs: vec![neg[i]], task, label: Answer::No });
                }
            }
            Task::PairWise => {
                for i in 0..n {
                    let (jobs, label) = if rng.random_bool(0.5) {
                        (vec![pos[i], neg[i]], Answer::A)
                    } else {
                        (vec![neg[i], pos[i]], Answer::B)
                    };
                    out.push(LabeledPair { candidate: c, jobs, task, label });
                }
            }
        }
    }
    out
}
