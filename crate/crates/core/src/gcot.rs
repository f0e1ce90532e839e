//! Grounded chain-of-thought records: template-driven generation from
//! annotations and a lenient parser for multi-step responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiers::parse_id_positions;
use crate::scene::object_centroid;
use crate::tasking::{RecordBuilder, TaskKind, TaskRecord};

/// Zero-shot suffix appended to every CoT user turn.
pub const COT_SUFFIX: &str = "Please think through the answer step by step.";

pub const DEFAULT_SPACE_K: usize = 5;

/// QA annotation with its semantically related objects (1-based positions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaAnnotation {
    pub question: String,
    pub related_positions: Vec<u32>,
    pub answer: String,
}

/// Grounding annotation expanded with the target's category members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAnnotation {
    pub description: String,
    pub category_name: String,
    pub same_category_positions: Vec<u32>,
    pub target_position: u32,
}

/// Grounding annotation for spatial reasoning; related objects are computed
/// from scene geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceAnnotation {
    pub description: String,
    pub target_position: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CotAnnotation {
    Qa(QaAnnotation),
    Category(CategoryAnnotation),
    Space(SpaceAnnotation),
}

/// Comma-joined id list with ", and " before the last element.
pub fn join_ids(tokens: &[String]) -> String {
    match tokens.len() {
        0 => String::new(),
        1 => tokens[0].clone(),
        n => format!("{}, and {}", tokens[..n - 1].join(", "), tokens[n - 1]),
    }
}

fn tokens_for(builder: &RecordBuilder, positions: &[u32]) -> Result<Vec<String>> {
    positions.iter().map(|&p| builder.token(p)).collect()
}

fn grounding_user(description: &str) -> String {
    format!(
        "What's the ID of the object that corresponds to the description \"{description}\"? {COT_SUFFIX}"
    )
}

/// Two-step QA reasoning: related objects, then the answer.
pub fn gen_qa_cot(
    a: &QaAnnotation,
    builder: &RecordBuilder,
    record_id: impl Into<String>,
) -> Result<TaskRecord> {
    if a.related_positions.is_empty() {
        return Err(Error::input("qa cot annotation needs at least one related object"));
    }
    if a.answer.trim().is_empty() {
        return Err(Error::input("qa cot annotation needs a non-empty answer"));
    }
    let tokens = tokens_for(builder, &a.related_positions)?;
    let verb = if tokens.len() == 1 { "is" } else { "are" };
    let user_text = format!("{} {COT_SUFFIX}", a.question);
    let assistant_text = format!(
        "[Step 1] The objects related to the question {verb} {}.\n[Step 2] The answer is: {}.",
        join_ids(&tokens),
        a.answer
    );
    finish(builder, record_id, TaskKind::CotQa, user_text, assistant_text, a.related_positions.clone())
}

/// Three-step category reasoning: category name, members, target.
pub fn gen_category_cot(
    a: &CategoryAnnotation,
    builder: &RecordBuilder,
    record_id: impl Into<String>,
) -> Result<TaskRecord> {
    if !a.same_category_positions.contains(&a.target_position) {
        return Err(Error::input(format!(
            "target position {} missing from its category list",
            a.target_position
        )));
    }
    let tokens = tokens_for(builder, &a.same_category_positions)?;
    let target = builder.token(a.target_position)?;
    let user_text = grounding_user(&a.description);
    let assistant_text = format!(
        "[Step 1] The category name of the target object is \"{}\".\n\
[Step 2] There are {} objects in this category: {}.\n\
[Step 3] The target object is {}.",
        a.category_name,
        tokens.len(),
        join_ids(&tokens),
        target
    );
    finish(builder, record_id, TaskKind::CotGrounding, user_text, assistant_text, vec![a.target_position])
}

/// Nearest non-target proposals by centroid distance, ties broken by the
/// smaller proposal index; at most `k` are returned.
pub fn nearest_positions(builder: &RecordBuilder, target_position: u32, k: usize) -> Result<Vec<u32>> {
    let scene = builder.scene;
    let target_proposal = builder
        .assignment
        .proposal_at(target_position as usize)
        .ok_or_else(|| Error::input(format!("target position {target_position} out of range")))?;
    if scene.proposals.len() < 2 {
        return Err(Error::input("space cot needs at least one non-target object"));
    }
    let target_centroid = object_centroid(scene, target_proposal as usize)?;
    let mut by_distance: Vec<(f64, u32)> = Vec::new();
    for proposal in 0..scene.proposals.len() as u32 {
        if proposal == target_proposal {
            continue;
        }
        let c = object_centroid(scene, proposal as usize)?;
        let d2: f64 = (0..3).map(|i| (c[i] - target_centroid[i]).powi(2)).sum();
        by_distance.push((d2, proposal));
    }
    by_distance.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    by_distance
        .into_iter()
        .take(k)
        .map(|(_, proposal)| {
            builder
                .assignment
                .position_of(proposal)
                .map(|p| p as u32)
                .ok_or_else(|| Error::input(format!("proposal {proposal} not in assignment")))
        })
        .collect()
}

/// Two-step spatial reasoning over the k nearest objects to the target.
pub fn gen_space_cot(
    a: &SpaceAnnotation,
    builder: &RecordBuilder,
    k: usize,
    record_id: impl Into<String>,
) -> Result<TaskRecord> {
    let related = nearest_positions(builder, a.target_position, k)?;
    let tokens = tokens_for(builder, &related)?;
    let target = builder.token(a.target_position)?;
    let user_text = grounding_user(&a.description);
    let assistant_text = format!(
        "[Step 1] The spatially related objects could include: {}.\n\
[Step 2] The target object is {}.",
        join_ids(&tokens),
        target
    );
    finish(builder, record_id, TaskKind::CotGrounding, user_text, assistant_text, vec![a.target_position])
}

fn finish(
    builder: &RecordBuilder,
    record_id: impl Into<String>,
    task_kind: TaskKind,
    user_text: String,
    assistant_text: String,
    target_ids: Vec<u32>,
) -> Result<TaskRecord> {
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("n_objects".to_string(), builder.n_objects().to_string());
    Ok(TaskRecord {
        record_id: record_id.into(),
        scene_id: builder.scene.scene_id.clone(),
        task_kind,
        system_prompt: builder.system_prompt()?,
        user_text,
        assistant_text,
        target_ids,
        meta,
    })
}

/// One parsed reasoning step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotStep {
    pub number: u32,
    pub text: String,
    pub cited: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FinalAnswer {
    Text(String),
    Positions(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotParse {
    pub steps: Vec<CotStep>,
    pub final_answer: FinalAnswer,
    pub diagnostics: Vec<String>,
}

impl CotParse {
    /// Step numbers strictly increasing from 1 and no parse complaints.
    pub fn is_well_formed(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

const ANSWER_MARKER: &str = "The answer is:";

fn step_markers(text: &str) -> Vec<(usize, usize, u32)> {
    // (start, end, number) for every "[Step N]" occurrence, textual order
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let Some(off) = text[i..].find("[Step ") else { break };
        let start = i + off;
        let digits_start = start + 6;
        let mut j = digits_start;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > digits_start && j < bytes.len() && bytes[j] == b']' {
            let number: u32 = text[digits_start..j].parse().unwrap_or(0);
            out.push((start, j + 1, number));
            i = j + 1;
        } else {
            i = digits_start;
        }
    }
    out
}

/// Splits a response on `[Step N]` markers; lenient by design.
///
/// The final answer is the text after the last `The answer is:` marker (one
/// trailing period stripped), or the last step's cited ids for grounding
/// answers, or the whole text when no structure is present.
pub fn parse_cot_response(text: &str, width: usize) -> CotParse {
    let markers = step_markers(text);
    let mut diagnostics = Vec::new();
    let mut steps = Vec::new();
    for (k, &(start, body_start, number)) in markers.iter().enumerate() {
        let body_end = markers.get(k + 1).map(|m| m.0).unwrap_or(text.len());
        let _ = start;
        let body = text[body_start..body_end].trim().to_string();
        let cited = parse_id_positions(&body, width).into_iter().map(|p| p as u32).collect();
        steps.push(CotStep {
            number,
            text: body,
            cited,
        });
    }
    for (k, step) in steps.iter().enumerate() {
        if step.number != (k + 1) as u32 {
            diagnostics.push(format!(
                "step marker {} at textual index {} (expected {})",
                step.number,
                k,
                k + 1
            ));
        }
    }

    let final_answer = if let Some(pos) = text.rfind(ANSWER_MARKER) {
        let after = &text[pos + ANSWER_MARKER.len()..];
        // stop at the next step marker if any
        let end = step_markers(after).first().map(|m| m.0).unwrap_or(after.len());
        let mut answer = after[..end].trim().to_string();
        if answer.ends_with('.') {
            answer.pop();
        }
        FinalAnswer::Text(answer)
    } else if let Some(last) = steps.last() {
        FinalAnswer::Positions(last.cited.clone())
    } else {
        FinalAnswer::Text(text.trim().to_string())
    };

    CotParse {
        steps,
        final_answer,
        diagnostics,
    }
}
