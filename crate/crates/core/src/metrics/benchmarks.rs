//! Benchmark runners: resolve model text to boxes through the active ID
//! assignment and aggregate per-sample scores into reports.
//!
//! Rows are keyed and ordered by record id, so reports are byte-stable for
//! a given input regardless of scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::BoxJson;
use crate::error::{Error, Result};
use crate::identifiers::{parse_id_positions, scene_assignment, IdAssignment, OrderPolicy};
use crate::metrics::report::{EvalReport, SampleRow};
use crate::metrics::text::{bleu4, cider, exact_match, CiderConfig};
use crate::metrics::volume::{st_iou, RleMasks};
use crate::metrics::{aabb_iou, match_record_f1, F1Counts, GroundingPrediction};
use crate::scene::{object_aabb, Aabb, SceneStore};

/// Model output for text benchmarks: one line of text per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPred {
    pub record_id: String,
    pub text: String,
}

/// Grounding ground truth in assignment-independent form (proposal indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingGt {
    pub record_id: String,
    pub scene_id: String,
    pub target_proposals: Vec<u32>,
}

/// Dense-captioning ground truth; the record's prompt names
/// `target_proposal`, and `gt_box` (when given) is the annotated box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionGt {
    pub record_id: String,
    pub scene_id: String,
    pub target_proposal: u32,
    pub refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_box: Option<BoxJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaGt {
    pub record_id: String,
    pub refs: Vec<String>,
}

/// Mask-volume reference for ST-IoU scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRef {
    pub record_id: String,
    pub masks_path: String,
}

/// Scenes plus the per-scene ID assignment predictions were produced under.
pub struct EvalContext<'a> {
    pub scenes: &'a SceneStore,
    pub assignments: BTreeMap<String, IdAssignment>,
    pub width: usize,
}

impl<'a> EvalContext<'a> {
    /// Derives each scene's assignment from an order policy and base seed,
    /// matching the generation-side derivation.
    pub fn derive(scenes: &'a SceneStore, policy: OrderPolicy, seed: u64, width: usize) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (scene_id, scene) in scenes.iter() {
            if scene.proposals.is_empty() {
                continue;
            }
            assignments.insert(
                scene_id.clone(),
                scene_assignment(scene_id, scene.proposals.len(), policy, seed)?,
            );
        }
        Ok(Self {
            scenes,
            assignments,
            width,
        })
    }

    pub fn with_assignments(
        scenes: &'a SceneStore,
        assignments: BTreeMap<String, IdAssignment>,
        width: usize,
    ) -> Self {
        Self {
            scenes,
            assignments,
            width,
        }
    }

    fn assignment(&self, scene_id: &str) -> Result<&IdAssignment> {
        self.assignments
            .get(scene_id)
            .ok_or_else(|| Error::input(format!("no assignment for scene `{scene_id}`")))
    }

    fn proposal_box(&self, scene_id: &str, proposal: u32) -> Result<Aabb> {
        let scene = self
            .scenes
            .get(scene_id)
            .ok_or_else(|| Error::input(format!("unknown scene `{scene_id}`")))?;
        object_aabb(scene, proposal as usize)
    }

    /// Resolves a model response to boxes: parse ID tokens, map positions to
    /// proposals, then to boxes. Positions outside the assignment are
    /// dropped; a response with no valid token is unparseable.
    pub fn resolve_prediction(&self, record_id: &str, scene_id: &str, text: &str) -> Result<GroundingPrediction> {
        let assignment = self.assignment(scene_id)?;
        let mut positions = Vec::new();
        let mut boxes = Vec::new();
        for pos in parse_id_positions(text, self.width) {
            let Some(proposal) = assignment.proposal_at(pos) else {
                continue;
            };
            // dedupe repeated mentions, keeping first-mention order
            if positions.contains(&(pos as u32)) {
                continue;
            }
            positions.push(pos as u32);
            boxes.push(self.proposal_box(scene_id, proposal)?);
        }
        Ok(GroundingPrediction {
            record_id: record_id.to_string(),
            positions,
            boxes: if boxes.is_empty() { None } else { Some(boxes) },
        })
    }
}

fn index_by_id<'a, T>(
    items: &'a [T],
    id: impl Fn(&T) -> &str,
    what: &str,
) -> Result<BTreeMap<String, &'a T>> {
    let mut map = BTreeMap::new();
    for item in items {
        if map.insert(id(item).to_string(), item).is_some() {
            return Err(Error::input(format!("{what}: duplicate record id `{}`", id(item))));
        }
    }
    Ok(map)
}

fn check_same_keys<A, B>(preds: &BTreeMap<String, A>, gts: &BTreeMap<String, B>) -> Result<()> {
    if !preds.keys().eq(gts.keys()) {
        let missing: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).take(3).collect();
        let extra: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).take(3).collect();
        return Err(Error::input(format!(
            "prediction/ground-truth record ids differ (missing: {missing:?}, extra: {extra:?})"
        )));
    }
    Ok(())
}

fn row(record_id: &str, values: Vec<(String, f64)>, note: Option<String>) -> SampleRow {
    SampleRow {
        record_id: record_id.to_string(),
        values: values.into_iter().collect(),
        note,
    }
}

fn key(name: &str) -> String {
    name.to_string()
}

/// Single-object grounding: Acc@threshold over first-token predictions.
pub fn eval_grounding_single(
    preds: &[TextPred],
    gts: &[GroundingGt],
    ctx: &EvalContext,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let preds = index_by_id(preds, |p| &p.record_id, "predictions")?;
    let gts = index_by_id(gts, |g| &g.record_id, "ground truth")?;
    check_same_keys(&preds, &gts)?;

    let mut report = EvalReport::new("scanrefer");
    let mut hits = vec![0usize; thresholds.len()];
    for (record_id, gt) in &gts {
        let target = *gt.target_proposals.first().ok_or_else(|| {
            Error::input(format!("{record_id}: single grounding needs one target proposal"))
        })?;
        let gt_box = ctx.proposal_box(&gt.scene_id, target)?;
        let resolved = ctx.resolve_prediction(record_id, &gt.scene_id, &preds[record_id].text)?;
        let (iou, note) = match &resolved.boxes {
            Some(boxes) => (aabb_iou(&boxes[0], &gt_box)?, None),
            None => (0.0, Some("unparseable".to_string())),
        };
        let mut values = vec![(key("iou"), iou)];
        for (k, &t) in thresholds.iter().enumerate() {
            let hit = iou >= t;
            if hit {
                hits[k] += 1;
            }
            values.push((format!("hit@{t}"), hit as u64 as f64));
        }
        report.samples.push(row(record_id, values, note));
    }
    let n = gts.len().max(1) as f64;
    for (k, &t) in thresholds.iter().enumerate() {
        report
            .aggregates
            .insert(format!("Acc@{t}"), hits[k] as f64 / n);
    }
    Ok(report)
}

/// Multi-object grounding: F1@threshold with optimal matching per record.
pub fn eval_grounding_multi(
    preds: &[TextPred],
    gts: &[GroundingGt],
    ctx: &EvalContext,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let preds = index_by_id(preds, |p| &p.record_id, "predictions")?;
    let gts = index_by_id(gts, |g| &g.record_id, "ground truth")?;
    check_same_keys(&preds, &gts)?;

    let mut report = EvalReport::new("multi3dref");
    let mut totals = vec![F1Counts::default(); thresholds.len()];
    for (record_id, gt) in &gts {
        let gt_boxes: Vec<Aabb> = gt
            .target_proposals
            .iter()
            .map(|&p| ctx.proposal_box(&gt.scene_id, p))
            .collect::<Result<_>>()?;
        let resolved = ctx.resolve_prediction(record_id, &gt.scene_id, &preds[record_id].text)?;
        let pred_boxes = resolved.boxes.unwrap_or_default();
        let mut values = Vec::new();
        for (k, &t) in thresholds.iter().enumerate() {
            let counts = match_record_f1(&pred_boxes, &gt_boxes, t)?;
            totals[k].tp += counts.tp;
            totals[k].fp += counts.fp;
            totals[k].fn_ += counts.fn_;
            values.push((format!("tp@{t}"), counts.tp as f64));
            values.push((format!("fp@{t}"), counts.fp as f64));
            values.push((format!("fn@{t}"), counts.fn_ as f64));
        }
        values.push((key("n_pred"), pred_boxes.len() as f64));
        values.push((key("n_gt"), gt_boxes.len() as f64));
        report.samples.push(row(record_id, values, None));
    }
    for (k, &t) in thresholds.iter().enumerate() {
        report.aggregates.insert(format!("F1@{t}"), totals[k].f1());
        report
            .aggregates
            .insert(format!("P@{t}"), totals[k].precision());
        report
            .aggregates
            .insert(format!("R@{t}"), totals[k].recall());
    }
    Ok(report)
}

/// Dense captioning: CIDEr and BLEU-4 gated at an IoU threshold.
pub fn eval_caption_at_iou(
    preds: &[TextPred],
    gts: &[CaptionGt],
    ctx: &EvalContext,
    threshold: f64,
    cider_config: &CiderConfig,
) -> Result<EvalReport> {
    let preds = index_by_id(preds, |p| &p.record_id, "predictions")?;
    let gts = index_by_id(gts, |g| &g.record_id, "ground truth")?;
    check_same_keys(&preds, &gts)?;

    let mut corpus: Vec<(String, Vec<String>)> = Vec::new();
    let mut ious = Vec::new();
    let mut ids = Vec::new();
    for (record_id, gt) in &gts {
        if gt.refs.is_empty() {
            return Err(Error::input(format!("{record_id}: caption gt needs references")));
        }
        let proposal_box = ctx.proposal_box(&gt.scene_id, gt.target_proposal)?;
        let gt_box = gt.gt_box.clone().map(Aabb::from).unwrap_or(proposal_box);
        let iou = aabb_iou(&proposal_box, &gt_box)?;
        corpus.push((preds[record_id].text.clone(), gt.refs.clone()));
        ious.push(iou);
        ids.push(record_id.clone());
    }

    let (cider_scores, _) = cider(&corpus, cider_config)?;
    let mut report = EvalReport::new("scan2cap");
    let mut bleu_scores = Vec::with_capacity(corpus.len());
    for (((record_id, (pred, refs)), &iou), &c) in
        ids.iter().zip(&corpus).zip(&ious).zip(&cider_scores)
    {
        let b = bleu4(pred, refs)?;
        bleu_scores.push(b);
        report.samples.push(row(
            record_id,
            vec![(key("iou"), iou), (key("cider"), c), (key("bleu4"), b)],
            None,
        ));
    }
    let gated = |scores: &[f64]| -> f64 {
        scores
            .iter()
            .zip(&ious)
            .map(|(&s, &iou)| if iou >= threshold { s } else { 0.0 })
            .sum::<f64>()
            / scores.len().max(1) as f64
    };
    report
        .aggregates
        .insert(format!("C@{threshold}"), gated(&cider_scores));
    report
        .aggregates
        .insert(format!("B-4@{threshold}"), gated(&bleu_scores));
    Ok(report)
}

/// QA scoring: CIDEr, BLEU-4, EM, and EM-R against multi-reference answers.
pub fn eval_qa(preds: &[TextPred], gts: &[QaGt], cider_config: &CiderConfig) -> Result<EvalReport> {
    let preds = index_by_id(preds, |p| &p.record_id, "predictions")?;
    let gts = index_by_id(gts, |g| &g.record_id, "ground truth")?;
    check_same_keys(&preds, &gts)?;

    let mut corpus = Vec::new();
    let mut ids = Vec::new();
    for (record_id, gt) in &gts {
        if gt.refs.is_empty() {
            return Err(Error::input(format!("{record_id}: qa gt needs references")));
        }
        corpus.push((preds[record_id].text.clone(), gt.refs.clone()));
        ids.push(record_id.clone());
    }
    let (cider_scores, cider_mean) = cider(&corpus, cider_config)?;

    let mut report = EvalReport::new("scanqa");
    let mut bleu_sum = 0.0;
    let mut em_sum = 0.0;
    let mut emr_sum = 0.0;
    for ((record_id, (pred, refs)), &c) in ids.iter().zip(&corpus).zip(&cider_scores) {
        let b = bleu4(pred, refs)?;
        let em = exact_match(pred, refs, false) as u64 as f64;
        let emr = exact_match(pred, refs, true) as u64 as f64;
        bleu_sum += b;
        em_sum += em;
        emr_sum += emr;
        report.samples.push(row(
            record_id,
            vec![(key("cider"), c), (key("bleu4"), b), (key("em"), em), (key("em_r"), emr)],
            None,
        ));
    }
    let n = ids.len().max(1) as f64;
    report.aggregates.insert("C".into(), cider_mean);
    report.aggregates.insert("B-4".into(), bleu_sum / n);
    report.aggregates.insert("EM".into(), em_sum / n);
    report.aggregates.insert("EM-R".into(), emr_sum / n);
    Ok(report)
}

/// Situated QA scoring: exact match and its refined form.
pub fn eval_exact_match(preds: &[TextPred], gts: &[QaGt]) -> Result<EvalReport> {
    let preds = index_by_id(preds, |p| &p.record_id, "predictions")?;
    let gts = index_by_id(gts, |g| &g.record_id, "ground truth")?;
    check_same_keys(&preds, &gts)?;

    let mut report = EvalReport::new("sqa3d");
    let mut em_sum = 0.0;
    let mut emr_sum = 0.0;
    for (record_id, gt) in &gts {
        if gt.refs.is_empty() {
            return Err(Error::input(format!("{record_id}: gt needs references")));
        }
        let pred = &preds[record_id].text;
        let em = exact_match(pred, &gt.refs, false) as u64 as f64;
        let emr = exact_match(pred, &gt.refs, true) as u64 as f64;
        em_sum += em;
        emr_sum += emr;
        report
            .samples
            .push(row(record_id, vec![(key("em"), em), (key("em_r"), emr)], None));
    }
    let n = gts.len().max(1) as f64;
    report.aggregates.insert("EM".into(), em_sum / n);
    report.aggregates.insert("EM-R".into(), emr_sum / n);
    Ok(report)
}

/// 2D-only grounding: ST-IoU between predicted and ground-truth mask
/// volumes, with accuracy at the given thresholds.
pub fn eval_st_iou(
    preds: &[MaskRef],
    gts: &[MaskRef],
    pred_base: &Path,
    gt_base: &Path,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let preds = index_by_id(preds, |p| &p.record_id, "predictions")?;
    let gts = index_by_id(gts, |g| &g.record_id, "ground truth")?;
    check_same_keys(&preds, &gts)?;

    let mut report = EvalReport::new("stiou");
    let mut hits = vec![0usize; thresholds.len()];
    let mut sum = 0.0;
    for (record_id, gt) in &gts {
        let pred_volume = RleMasks::load(&pred_base.join(&preds[record_id].masks_path))?.decode()?;
        let gt_volume = RleMasks::load(&gt_base.join(&gt.masks_path))?.decode()?;
        let iou = st_iou(&pred_volume, &gt_volume)?;
        sum += iou;
        let mut values = vec![(key("st_iou"), iou)];
        for (k, &t) in thresholds.iter().enumerate() {
            let hit = iou >= t;
            if hit {
                hits[k] += 1;
            }
            values.push((format!("hit@{t}"), hit as u64 as f64));
        }
        report.samples.push(row(record_id, values, None));
    }
    let n = gts.len().max(1) as f64;
    report.aggregates.insert("mean_st_iou".into(), sum / n);
    for (k, &t) in thresholds.iter().enumerate() {
        report
            .aggregates
            .insert(format!("Acc@{t}"), hits[k] as f64 / n);
    }
    Ok(report)
}
