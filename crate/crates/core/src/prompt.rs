//! Profile, job-description and meta-path prompt rendering, and assembly of
//! tokenized training samples with loss masks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKind, MetaPathInstance, NodeId, NodeKind};
use crate::tokenizer::{self, Tokenizer};

pub const PROFILE_FIELDS: [(&str, &str); 6] = [
    ("age", "Age"),
    ("education", "Education"),
    ("school", "Graduation School"),
    ("major", "Major"),
    ("work_experience", "Work Experience"),
    ("skills", "Skills"),
];

pub const JD_FIELDS: [(&str, &str); 4] = [
    ("position_title", "Position Title"),
    ("education_requirement", "Educational Requirement"),
    ("work_experience", "Work Experience"),
    ("skill_requirements", "Skill Requirements"),
];

pub const POINTWISE_INSTRUCTION: &str = "You are a recommender, determining whether a candidate would be \
satisfied with the recommended job position. Please answer with \"Yes.\" or \"No.\"";

pub const PAIRWISE_INSTRUCTION: &str = "You are a recommender, determining which position will match the \
candidate. Please answer with \"[A].\" or \"[B].\"";

fn order_attributes(
    registry: &[(&str, &str)],
    attributes: Vec<(String, String)>,
) -> Result<Vec<(String, String)>> {
    let mut slots: Vec<Option<String>> = vec![None; registry.len()];
    for (k, v) in attributes {
        let pos = registry
            .iter()
            .position(|(key, _)| *key == k)
            .ok_or_else(|| Error::Parse(format!("unknown attribute {k:?}")))?;
        slots[pos] = Some(v);
    }
    Ok(registry
        .iter()
        .zip(slots)
        .filter_map(|((k, _), v)| v.map(|v| (k.to_string(), v)))
        .collect())
}

fn render_attributes(registry: &[(&str, &str)], attributes: &[(String, String)]) -> String {
    let parts: Vec<String> = attributes
        .iter()
        .map(|(k, v)| {
            let label = registry.iter().find(|(key, _)| key == k).map_or(k.as_str(), |(_, l)| l);
            format!("{label}: {v}")
        })
        .collect();
    format!("{}.", parts.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateProfile {
    pub node: NodeId,
    pub attributes: Vec<(String, String)>,
    /// Short description substituted for this candidate in path prompts.
    pub summary: String,
}

impl CandidateProfile {
    /// Attributes are reordered into registry order; unknown keys are rejected.
    pub fn new(node: NodeId, attributes: Vec<(String, String)>) -> Result<Self> {
        let attributes = order_attributes(&PROFILE_FIELDS, attributes)?;
        let skills = attributes.iter().find(|(k, _)| k == "skills").map_or("", |(_, v)| v.as_str());
        let summary = format!("candidate ({skills})");
        Ok(Self { node, attributes, summary })
    }

    pub fn with_summary(mut self, summary: impl Into<String>) -> Self {
        self.summary = summary.into();
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.attributes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        format!("Candidate Profile: {}", render_attributes(&PROFILE_FIELDS, &self.attributes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobDescription {
    pub node: NodeId,
    pub attributes: Vec<(String, String)>,
    pub summary: String,
}

impl JobDescription {
    pub fn new(node: NodeId, attributes: Vec<(String, String)>) -> Result<Self> {
        let attributes = order_attributes(&JD_FIELDS, attributes)?;
        let title = attributes
            .iter()
            .find(|(k, _)| k == "position_title")
            .map(|(_, v)| v.clone())
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| Error::Parse(format!("job {node} has no position title")))?;
        let summary = match attributes.iter().find(|(k, _)| k == "skill_requirements") {
            Some((_, skills)) => format!("{title} ({skills})"),
            None => title.clone(),
        };
        Ok(Self { node, attributes, summary })
    }

    pub fn with_summary(mut self, summary: impl Into<String>) -> Self {
        self.summary = summary.into();
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.attributes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn position_title(&self) -> &str {
        self.get("position_title").expect("validated at construction")
    }

    pub fn render(&self) -> String {
        render_attributes(&JD_FIELDS, &self.attributes)
    }
}

/// Edge phrases keyed by edge kind and the kind of the sentence subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseRegistry {
    entries: BTreeMap<EdgeKind, (String, String)>,
}

impl Default for PhraseRegistry {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        let mut put = |k, c: &str, j: &str| {
            entries.insert(k, (c.to_string(), j.to_string()));
        };
        put(EdgeKind::Interview, "interviewed for position", "interviewed a job seeker");
        put(EdgeKind::Message, "discussed with position", "discussed with a job seeker");
        put(EdgeKind::Match, "matched with position", "matched with a job seeker");
        put(EdgeKind::Browse, "browsed position", "was browsed by a job seeker");
        Self { entries }
    }
}

impl PhraseRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// `from_candidate` is used when the sentence subject is a candidate,
    /// `from_job` when it is a job.
    pub fn register(&mut self, kind: EdgeKind, from_candidate: &str, from_job: &str) {
        self.entries.insert(kind, (from_candidate.to_string(), from_job.to_string()));
    }

    pub fn phrase(&self, kind: EdgeKind, subject: NodeKind) -> Result<&str> {
        let (c, j) = self.entries.get(&kind).ok_or_else(|| Error::UnregisteredEdgeKind(kind.to_string()))?;
        Ok(match subject {
            NodeKind::Candidate => c,
            NodeKind::Job => j,
        })
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.entries.values().flat_map(|(c, j)| [c.as_str(), j.as_str()])
    }
}

/// One sentence per edge. The first sentence names the start node; later
/// sentences refer back to the previous object ("This position", "This job
/// seeker").
pub fn render_meta_path_prompt(
    instance: &MetaPathInstance,
    profiles: &BTreeMap<NodeId, CandidateProfile>,
    jds: &BTreeMap<NodeId, JobDescription>,
    phrases: &PhraseRegistry,
) -> Result<String> {
    let describe = |id: NodeId| -> Result<(NodeKind, &str)> {
        if let Some(p) = profiles.get(&id) {
            Ok((NodeKind::Candidate, p.summary.as_str()))
        } else if let Some(j) = jds.get(&id) {
            Ok((NodeKind::Job, j.summary.as_str()))
        } else {
            Err(Error::MissingNodeText(id))
        }
    };
    let mut sentences = Vec::with_capacity(instance.len());
    for (i, kind) in instance.edge_kinds.iter().enumerate() {
        let (subject_kind, subject_text) = describe(instance.nodes[i])?;
        let (_, object_text) = describe(instance.nodes[i + 1])?;
        let phrase = phrases.phrase(*kind, subject_kind)?;
        let subject = if i == 0 {
            subject_text.to_string()
        } else {
            match subject_kind {
                NodeKind::Candidate => "This job seeker".to_string(),
                NodeKind::Job => "This position".to_string(),
            }
        };
        sentences.push(format!("{subject} {phrase} {object_text}."));
    }
    Ok(sentences.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    #[serde(rename = "pointwise")]
    PointWise,
    #[serde(rename = "pairwise")]
    PairWise,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PointWise => "pointwise",
            Task::PairWise => "pairwise",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Task::PointWise, Task::PairWise]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task {s:?} (pointwise|pairwise)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
    A,
    B,
}

impl Answer {
    pub fn token_id(self) -> usize {
        match self {
            Answer::Yes => tokenizer::YES,
            Answer::No => tokenizer::NO,
            Answer::A => tokenizer::OPTION_A,
            Answer::B => tokenizer::OPTION_B,
        }
    }

    pub fn task(self) -> Task {
        match self {
            Answer::Yes | Answer::No => Task::PointWise,
            Answer::A | Answer::B => Task::PairWise,
        }
    }

    /// Positive class for AUC: `Yes` point-wise, `A` pair-wise.
    pub fn is_positive(self) -> bool {
        matches!(self, Answer::Yes | Answer::A)
    }
}

/// A rendered, tokenized training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSample {
    pub id: String,
    pub task: Task,
    pub instruction: String,
    pub profile: String,
    pub paths: Vec<String>,
    pub jds: Vec<String>,
    pub label: Answer,
    /// Apply the path soft selector when embedding this sample.
    pub use_selector: bool,
    pub token_ids: Vec<usize>,
    pub loss_mask: Vec<bool>,
    /// Half-open `[start, end)` ranges of each path prompt in `token_ids`.
    pub path_spans: Vec<(usize, usize)>,
}

/// Text content of a sample; the serialized form of [`PromptSample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub schema_version: u32,
    pub id: String,
    pub task: Task,
    pub instruction: String,
    pub profile: String,
    pub paths: Vec<String>,
    pub jd: Vec<String>,
    pub label: Answer,
    #[serde(default)]
    pub selector: bool,
}

pub const SAMPLE_SCHEMA_VERSION: u32 = 1;

impl PromptSample {
    /// Tokenizes `[BOS] instruction profile paths… jd-block(s) label jd`.
    /// The loss mask covers exactly the trailing label and appended JD text.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        tok: &Tokenizer,
        id: impl Into<String>,
        task: Task,
        instruction: &str,
        profile: &str,
        paths: Vec<String>,
        jds: Vec<String>,
        label: Answer,
        context_len: usize,
    ) -> Result<Self> {
        let expected_jds = match task {
            Task::PointWise => 1,
            Task::PairWise => 2,
        };
        if jds.len() != expected_jds || label.task() != task {
            return Err(Error::Parse(format!(
                "{} sample needs {expected_jds} job description(s) and a matching label",
                task.name()
            )));
        }
        let mut ids = vec![tokenizer::BOS];
        ids.extend(tok.encode(instruction));
        ids.extend(tok.encode(profile));
        let mut path_spans = Vec::with_capacity(paths.len());
        for p in &paths {
            let start = ids.len();
            ids.extend(tok.encode(p));
            path_spans.push((start, ids.len()));
        }
        let chosen = match task {
            Task::PointWise => {
                ids.extend(tok.encode(&jds[0]));
                &jds[0]
            }
            Task::PairWise => {
                ids.extend(tok.encode(&format!("JD A: {}", jds[0])));
                ids.extend(tok.encode(&format!("JD B: {}", jds[1])));
                if label == Answer::A {
                    &jds[0]
                } else {
                    &jds[1]
                }
            }
        };
        let prompt_len = ids.len();
        ids.push(label.token_id());
        ids.extend(tok.encode(chosen));
        if ids.len() > context_len {
            return Err(Error::TokenBudgetExceeded { len: ids.len(), limit: context_len });
        }
        let loss_mask = (0..ids.len()).map(|i| i >= prompt_len).collect();
        Ok(Self {
            id: id.into(),
            task,
            instruction: instruction.to_string(),
            profile: profile.to_string(),
            paths,
            jds,
            label,
            use_selector: false,
            token_ids: ids,
            loss_mask,
            path_spans,
        })
    }

    pub fn from_record(rec: &SampleRecord, tok: &Tokenizer, context_len: usize) -> Result<Self> {
        if rec.schema_version != SAMPLE_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported sample schema version {}", rec.schema_version)));
        }
        let mut s = Self::assemble(
            tok,
            rec.id.clone(),
            rec.task,
            &rec.instruction,
            &rec.profile,
            rec.paths.clone(),
            rec.jd.clone(),
            rec.label,
            context_len,
        )?;
        s.use_selector = rec.selector;
        Ok(s)
    }

    pub fn to_record(&self) -> SampleRecord {
        SampleRecord {
            schema_version: SAMPLE_SCHEMA_VERSION,
            id: self.id.clone(),
            task: self.task,
            instruction: self.instruction.clone(),
            profile: self.profile.clone(),
            paths: self.paths.clone(),
            jd: self.jds.clone(),
            label: self.label,
            selector: self.use_selector,
        }
    }

    /// Re-assembles the sample with its path prompts in a new order.
    pub fn with_paths(&self, paths: Vec<String>, tok: &Tokenizer, context_len: usize) -> Result<Self> {
        let mut s = Self::assemble(
            tok,
            self.id.clone(),
            self.task,
            &self.instruction,
            &self.profile,
            paths,
            self.jds.clone(),
            self.label,
            context_len,
        )?;
        s.use_selector = self.use_selector;
        Ok(s)
    }

    /// Index of the label token (the first supervised position).
    pub fn answer_index(&self) -> usize {
        self.loss_mask.iter().position(|m| *m).expect("sample has a supervised suffix")
    }

    /// Prompt tokens only, i.e. everything before the label.
    pub fn prompt_ids(&self) -> &[usize] {
        &self.token_ids[..self.answer_index()]
    }

    /// Next-token view: `(inputs, targets, mask)` each of length `n - 1`.
    pub fn shifted(&self) -> (&[usize], &[usize], &[bool]) {
        let n = self.token_ids.len();
        (&self.token_ids[..n - 1], &self.token_ids[1..], &self.loss_mask[1..])
    }
}

/// Renders samples from typed profiles and job descriptions.
#[derive(Debug, Clone)]
pub struct PromptBuilder<'a> {
    pub tokenizer: &'a Tokenizer,
    pub context_len: usize,
    pub pointwise_instruction: String,
    pub pairwise_instruction: String,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(tokenizer: &'a Tokenizer, context_len: usize) -> Self {
        Self {
            tokenizer,
            context_len,
            pointwise_instruction: POINTWISE_INSTRUCTION.to_string(),
            pairwise_instruction: PAIRWISE_INSTRUCTION.to_string(),
        }
    }

    pub fn build_pointwise(
        &self,
        id: impl Into<String>,
        profile: &CandidateProfile,
        jd: &JobDescription,
        paths: Vec<String>,
        label: Answer,
    ) -> Result<PromptSample> {
        PromptSample::assemble(
            self.tokenizer,
            id,
            Task::PointWise,
            &self.pointwise_instruction,
            &profile.render(),
            paths,
            vec![jd.render()],
            label,
            self.context_len,
        )
    }

    pub fn build_pairwise(
        &self,
        id: impl Into<String>,
        profile: &CandidateProfile,
        jd_a: &JobDescription,
        jd_b: &JobDescription,
        paths: Vec<String>,
        label: Answer,
    ) -> Result<PromptSample> {
        PromptSample::assemble(
            self.tokenizer,
            id,
            Task::PairWise,
            &self.pairwise_instruction,
            &profile.render(),
            paths,
            vec![jd_a.render(), jd_b.render()],
            label,
            self.context_len,
        )
    }
}

/// Fixed text used to seed a vocabulary alongside node texts.
pub fn template_corpus(phrases: &PhraseRegistry) -> Vec<String> {
    let mut out = vec![
        POINTWISE_INSTRUCTION.to_string(),
        PAIRWISE_INSTRUCTION.to_string(),
        "Candidate Profile: JD A: JD B: This position This job seeker".to_string(),
    ];
    out.push(PROFILE_FIELDS.iter().map(|(_, l)| *l).collect::<Vec<_>>().join(": "));
    out.push(JD_FIELDS.iter().map(|(_, l)| *l).collect::<Vec<_>>().join(": "));
    out.extend(phrases.phrases().map(str::to_string));
    out
}
