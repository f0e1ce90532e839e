//! Unified single-turn task records: the system-prompt grammar, per-kind
//! record builders, loss-masked sequence packing, and mixed-dataset assembly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiers::{make_id_token, parse_id_positions, IdAssignment};
use crate::scene::Scene;

/// Fixed preamble of every system prompt.
pub const SYSTEM_PREAMBLE: &str = "A chat between a curious user and an artificial intelligence \
assistant. The assistant gives helpful, detailed, and polite answers to the user's questions. ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GroundingSingle,
    GroundingMulti,
    DenseCaption,
    Qa,
    SituatedQa,
    ObjAlign,
    ObjCaption,
    SceneCaption,
    CotQa,
    CotGrounding,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::GroundingSingle => "grounding_single",
            TaskKind::GroundingMulti => "grounding_multi",
            TaskKind::DenseCaption => "dense_caption",
            TaskKind::Qa => "qa",
            TaskKind::SituatedQa => "situated_qa",
            TaskKind::ObjAlign => "obj_align",
            TaskKind::ObjCaption => "obj_caption",
            TaskKind::SceneCaption => "scene_caption",
            TaskKind::CotQa => "cot_qa",
            TaskKind::CotGrounding => "cot_grounding",
        }
    }
}

/// One unified single-turn instruction sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub record_id: String,
    pub scene_id: String,
    pub task_kind: TaskKind,
    pub system_prompt: String,
    pub user_text: String,
    pub assistant_text: String,
    /// 1-based object positions this record grounds to (may be empty).
    pub target_ids: Vec<u32>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// Renders the system prompt: preamble, then one `<OBJkkk> <object>` pair per
/// proposal in storage order, each labeled with its assigned position.
pub fn render_system_prompt(assignment: &IdAssignment, n: usize, width: usize) -> Result<String> {
    if n == 0 {
        return Err(Error::input("system prompt needs at least one object"));
    }
    if assignment.len() != n {
        return Err(Error::DimMismatch {
            context: "system prompt assignment".into(),
            expected: n,
            actual: assignment.len(),
        });
    }
    let mut pairs = Vec::with_capacity(n);
    for proposal in 0..n as u32 {
        let token = assignment.token_for(proposal, width)?;
        pairs.push(format!("{token} <object>"));
    }
    Ok(format!(
        "{SYSTEM_PREAMBLE}The conversation centers around an indoor scene: [{}]. ",
        pairs.join(" ")
    ))
}

/// Editable per-kind phrasings; defaults ship embedded.
#[derive(Debug, Clone, Deserialize)]
pub struct Templates {
    grounding_single: UserOnly,
    grounding_multi: GroundingMultiTemplate,
    dense_caption: UserAssistant,
    qa: UserAssistant,
    situated_qa: UserAssistant,
    obj_align: UserAssistant,
    obj_caption: UserAssistant,
    scene_caption: UserAssistant,
}

#[derive(Debug, Clone, Deserialize)]
struct UserOnly {
    user: String,
}

#[derive(Debug, Clone, Deserialize)]
struct GroundingMultiTemplate {
    user: String,
    empty_answer: String,
}

#[derive(Debug, Clone, Deserialize)]
struct UserAssistant {
    user: String,
    assistant: String,
}

pub const DEFAULT_TEMPLATES: &str = include_str!("default_templates.toml");

impl Default for Templates {
    fn default() -> Self {
        toml::from_str(DEFAULT_TEMPLATES).expect("embedded templates parse")
    }
}

impl Templates {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::input(format!("template file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in slots {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Per-kind inputs for [`RecordBuilder::make`]. Target references are 1-based
/// positions under the builder's assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskFields {
    GroundingSingle { description: String, target: u32 },
    GroundingMulti { description: String, targets: Vec<u32> },
    DenseCaption { target: u32, caption: String },
    Qa { question: String, answers: Vec<String> },
    SituatedQa { situation: String, question: String, answers: Vec<String> },
    ObjAlign { target: u32, category: String },
    ObjCaption { target: u32, caption: String },
    SceneCaption { caption: String },
}

impl TaskFields {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskFields::GroundingSingle { .. } => TaskKind::GroundingSingle,
            TaskFields::GroundingMulti { .. } => TaskKind::GroundingMulti,
            TaskFields::DenseCaption { .. } => TaskKind::DenseCaption,
            TaskFields::Qa { .. } => TaskKind::Qa,
            TaskFields::SituatedQa { .. } => TaskKind::SituatedQa,
            TaskFields::ObjAlign { .. } => TaskKind::ObjAlign,
            TaskFields::ObjCaption { .. } => TaskKind::ObjCaption,
            TaskFields::SceneCaption { .. } => TaskKind::SceneCaption,
        }
    }
}

/// Builds task records against one scene + assignment.
pub struct RecordBuilder<'a> {
    pub scene: &'a Scene,
    pub assignment: &'a IdAssignment,
    pub templates: &'a Templates,
    pub width: usize,
}

impl<'a> RecordBuilder<'a> {
    pub fn new(scene: &'a Scene, assignment: &'a IdAssignment, templates: &'a Templates) -> Self {
        Self {
            scene,
            assignment,
            templates,
            width: crate::identifiers::DEFAULT_ID_WIDTH,
        }
    }

    pub fn n_objects(&self) -> usize {
        self.scene.proposals.len()
    }

    fn check_position(&self, position: u32) -> Result<()> {
        if position == 0 || position as usize > self.n_objects() {
            return Err(Error::input(format!(
                "target position {position} out of range 1..={}",
                self.n_objects()
            )));
        }
        Ok(())
    }

    pub fn token(&self, position: u32) -> Result<String> {
        self.check_position(position)?;
        make_id_token(position as usize, self.width)
    }

    pub fn system_prompt(&self) -> Result<String> {
        render_system_prompt(self.assignment, self.n_objects(), self.width)
    }

    /// Assembles the record for `fields`, rendering user/assistant text from
    /// the templates and validating every position reference.
    pub fn make(&self, record_id: impl Into<String>, fields: &TaskFields) -> Result<TaskRecord> {
        let t = self.templates;
        let (user_text, assistant_text, target_ids) = match fields {
            TaskFields::GroundingSingle { description, target } => {
                require_text("description", description)?;
                let token = self.token(*target)?;
                (
                    fill(&t.grounding_single.user, &[("description", description)]),
                    token,
                    vec![*target],
                )
            }
            TaskFields::GroundingMulti { description, targets } => {
                require_text("description", description)?;
                let assistant = if targets.is_empty() {
                    t.grounding_multi.empty_answer.clone()
                } else {
                    let tokens: Vec<String> = targets
                        .iter()
                        .map(|&p| self.token(p))
                        .collect::<Result<_>>()?;
                    tokens.join(", ")
                };
                (
                    fill(&t.grounding_multi.user, &[("description", description)]),
                    assistant,
                    targets.clone(),
                )
            }
            TaskFields::DenseCaption { target, caption } => {
                require_text("caption", caption)?;
                let token = self.token(*target)?;
                (
                    fill(&t.dense_caption.user, &[("target", &token)]),
                    fill(&t.dense_caption.assistant, &[("caption", caption)]),
                    vec![*target],
                )
            }
            TaskFields::Qa { question, answers } => {
                require_text("question", question)?;
                let answer = answers
                    .first()
                    .ok_or_else(|| Error::input("qa record needs at least one answer"))?;
                (
                    fill(&t.qa.user, &[("question", question)]),
                    fill(&t.qa.assistant, &[("answer", answer)]),
                    vec![],
                )
            }
            TaskFields::SituatedQa { situation, question, answers } => {
                require_text("question", question)?;
                require_text("situation", situation)?;
                let answer = answers
                    .first()
                    .ok_or_else(|| Error::input("situated_qa record needs at least one answer"))?;
                (
                    fill(
                        &t.situated_qa.user,
                        &[("situation", situation), ("question", question)],
                    ),
                    fill(&t.situated_qa.assistant, &[("answer", answer)]),
                    vec![],
                )
            }
            TaskFields::ObjAlign { target, category } => {
                require_text("category", category)?;
                let token = self.token(*target)?;
                (
                    fill(&t.obj_align.user, &[("target", &token)]),
                    fill(&t.obj_align.assistant, &[("category", category)]),
                    vec![*target],
                )
            }
            TaskFields::ObjCaption { target, caption } => {
                require_text("caption", caption)?;
                let token = self.token(*target)?;
                (
                    fill(&t.obj_caption.user, &[("target", &token)]),
                    fill(&t.obj_caption.assistant, &[("caption", caption)]),
                    vec![*target],
                )
            }
            TaskFields::SceneCaption { caption } => {
                require_text("caption", caption)?;
                (
                    t.scene_caption.user.clone(),
                    fill(&t.scene_caption.assistant, &[("caption", caption)]),
                    vec![],
                )
            }
        };
        let mut meta = BTreeMap::new();
        meta.insert("n_objects".to_string(), self.n_objects().to_string());
        Ok(TaskRecord {
            record_id: record_id.into(),
            scene_id: self.scene.scene_id.clone(),
            task_kind: fields.kind(),
            system_prompt: self.system_prompt()?,
            user_text,
            assistant_text,
            target_ids,
            meta,
        })
    }
}

fn require_text(field: &str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::input(format!("field `{field}` must be non-empty")))
    } else {
        Ok(())
    }
}

/// Checks a record's own invariants: token grammar and position ranges.
pub fn validate_record(record: &TaskRecord, n_objects: usize, width: usize) -> Vec<String> {
    let mut problems = Vec::new();
    for (name, text) in [("user_text", &record.user_text), ("assistant_text", &record.assistant_text)] {
        for pos in parse_id_positions(text, width) {
            if pos == 0 || pos > n_objects {
                problems.push(format!(
                    "{}: {name} references position {pos}, scene has {n_objects} objects",
                    record.record_id
                ));
            }
        }
    }
    for &t in &record.target_ids {
        if t == 0 || t as usize > n_objects {
            problems.push(format!(
                "{}: target_ids references position {t}, scene has {n_objects} objects",
                record.record_id
            ));
        }
    }
    problems
}

/// Corpus-wide validation; `n_for_scene` resolves each record's object count.
pub fn validate_corpus(
    records: &[TaskRecord],
    width: usize,
    mut n_for_scene: impl FnMut(&TaskRecord) -> Option<usize>,
) -> Vec<String> {
    let mut problems = Vec::new();
    for record in records {
        match n_for_scene(record) {
            Some(n) => problems.extend(validate_record(record, n, width)),
            None => problems.push(format!(
                "{}: unknown scene `{}`",
                record.record_id, record.scene_id
            )),
        }
    }
    problems
}

/// Token stream split into prefix and response with a response-only loss mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub prefix_tokens: Vec<u32>,
    pub response_tokens: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl PackedSequence {
    /// Number of positions the loss applies to (the response length).
    pub fn loss_token_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

/// Concatenates prefix and response; the loss mask is false over the prefix
/// and true over the response.
pub fn pack_sequence(prefix_tokens: &[u32], response_tokens: &[u32]) -> Result<PackedSequence> {
    if response_tokens.is_empty() {
        return Err(Error::input("response must be non-empty"));
    }
    let mut loss_mask = vec![false; prefix_tokens.len()];
    loss_mask.extend(std::iter::repeat(true).take(response_tokens.len()));
    Ok(PackedSequence {
        prefix_tokens: prefix_tokens.to_vec(),
        response_tokens: response_tokens.to_vec(),
        loss_mask,
    })
}

/// One source of task records in a training mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub path: String,
    pub expected_count: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        manifest.check()?;
        Ok(manifest)
    }

    pub fn check(&self) -> Result<()> {
        for entry in &self.entries {
            if !(entry.weight > 0.0 && entry.weight.is_finite()) {
                return Err(Error::input(format!(
                    "source `{}`: weight must be > 0, got {}",
                    entry.name, entry.weight
                )));
            }
        }
        Ok(())
    }

    pub fn total_expected(&self) -> u64 {
        self.entries.iter().map(|e| e.expected_count).sum()
    }
}

/// Loaded records of one manifest source.
#[derive(Debug, Clone)]
pub struct SourceRecords {
    pub name: String,
    pub records: Vec<TaskRecord>,
    pub expected_count: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub name: String,
    pub expected: u64,
    pub actual: u64,
    pub weight: f64,
    pub count_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembleStats {
    pub per_source: Vec<SourceStats>,
    pub total: u64,
    pub total_expected: u64,
}

impl AssembleStats {
    pub fn has_mismatch(&self) -> bool {
        self.per_source.iter().any(|s| s.count_mismatch)
    }
}

/// Deterministic seeded interleave of sources, honoring weights.
///
/// Each source is first shuffled with the shared generator (in manifest
/// order), then records are drawn one at a time: a uniform draw over the
/// still-active weight total picks the source, walked in manifest order.
pub fn interleave_sources(sources: Vec<SourceRecords>, seed: u64) -> Result<(Vec<TaskRecord>, AssembleStats)> {
    for s in &sources {
        if !(s.weight > 0.0 && s.weight.is_finite()) {
            return Err(Error::input(format!("source `{}`: weight must be > 0", s.name)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<std::collections::VecDeque<TaskRecord>> = Vec::new();
    let mut stats = Vec::new();
    for mut source in sources {
        source.records.shuffle(&mut rng);
        stats.push(SourceStats {
            name: source.name.clone(),
            expected: source.expected_count,
            actual: source.records.len() as u64,
            weight: source.weight,
            count_mismatch: source.records.len() as u64 != source.expected_count,
        });
        queues.push(source.records.into());
    }

    let total: usize = queues.iter().map(|q| q.len()).sum();
    let mut out = Vec::with_capacity(total);
    loop {
        let active_weight: f64 = queues
            .iter()
            .zip(&stats)
            .filter(|(q, _)| !q.is_empty())
            .map(|(_, s)| s.weight)
            .sum();
        if active_weight <= 0.0 {
            break;
        }
        let mut x = rng.gen::<f64>() * active_weight;
        let mut chosen = None;
        for (i, q) in queues.iter().enumerate() {
            if q.is_empty() {
                continue;
            }
            chosen = Some(i);
            x -= stats[i].weight;
            if x < 0.0 {
                break;
            }
        }
        let Some(i) = chosen else { break };
        out.push(queues[i].pop_front().unwrap());
    }

    let total_expected = stats.iter().map(|s| s.expected).sum();
    Ok((
        out,
        AssembleStats {
            per_source: stats,
            total: total as u64,
            total_expected,
        },
    ))
}

/// Loads every manifest source (paths relative to `base_dir`) and interleaves.
pub fn assemble_dataset(
    manifest: &DatasetManifest,
    base_dir: &Path,
    seed: u64,
) -> Result<(Vec<TaskRecord>, AssembleStats)> {
    manifest.check()?;
    let mut sources = Vec::new();
    for entry in &manifest.entries {
        let path = base_dir.join(&entry.path);
        let records: Vec<TaskRecord> = crate::jsonl::read_jsonl(&path)?;
        sources.push(SourceRecords {
            name: entry.name.clone(),
            records,
            expected_count: entry.expected_count,
            weight: entry.weight,
        });
    }
    interleave_sources(sources, seed)
}
