//! Evaluation protocol: 3D box IoU, thresholded grounding accuracy,
//! multi-object F1 with optimal matching, caption composites, exact match,
//! BLEU-4, CIDEr-D, and spatiotemporal mask IoU.

pub mod benchmarks;
pub mod matching;
pub mod report;
pub mod text;
pub mod volume;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scene::Aabb;

pub use matching::{max_score_matching, ScoreMatrix};
pub use report::{EvalReport, SampleRow};
pub use text::{bleu4, caption_at_iou, cider, exact_match, normalize_answer, CiderConfig};
pub use volume::{st_iou, Mask2D, MaskVolume, RleMasks};

/// A grounding response resolved to boxes; `None` boxes mean the response
/// was unparseable and scores 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingPrediction {
    pub record_id: String,
    pub positions: Vec<u32>,
    pub boxes: Option<Vec<Aabb>>,
}

/// Intersection volume over union volume; degenerate boxes yield 0.
pub fn aabb_iou(a: &Aabb, b: &Aabb) -> Result<f64> {
    if !a.is_valid() || !b.is_valid() {
        return Err(Error::input("aabb_iou requires min <= max on every axis"));
    }
    let mut intersection = 1.0f64;
    for i in 0..3 {
        let lo = a.min[i].max(b.min[i]);
        let hi = a.max[i].min(b.max[i]);
        if hi <= lo {
            return Ok(0.0);
        }
        intersection *= hi - lo;
    }
    let union = a.volume() + b.volume() - intersection;
    if union <= 0.0 {
        Ok(0.0)
    } else {
        Ok(intersection / union)
    }
}

/// Fraction of records whose predicted box reaches each IoU threshold;
/// missing (unparseable) predictions count as misses.
pub fn grounding_accuracy(
    preds: &BTreeMap<String, Option<Aabb>>,
    gts: &BTreeMap<String, Aabb>,
    thresholds: &[f64],
) -> Result<BTreeMap<String, f64>> {
    if preds.len() != gts.len() || !preds.keys().eq(gts.keys()) {
        return Err(Error::input(
            "grounding_accuracy: predictions and ground truth must share the same record ids",
        ));
    }
    if gts.is_empty() {
        return Err(Error::input("grounding_accuracy: empty record set"));
    }
    let mut hits = vec![0usize; thresholds.len()];
    for (record_id, gt) in gts {
        let iou = match &preds[record_id] {
            Some(pred) => aabb_iou(pred, gt)?,
            None => 0.0,
        };
        for (k, &t) in thresholds.iter().enumerate() {
            if iou >= t {
                hits[k] += 1;
            }
        }
    }
    Ok(thresholds
        .iter()
        .zip(hits)
        .map(|(&t, h)| (format!("Acc@{t}"), h as f64 / gts.len() as f64))
        .collect())
}

/// Counts accumulated over records for multi-object grounding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct F1Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl F1Counts {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Scores one record: optimal one-to-one matching on the IoU matrix, pairs
/// at or above the threshold are true positives. An empty-pred/empty-gt
/// record contributes one true positive (the zero-target convention).
pub fn match_record_f1(preds: &[Aabb], gts: &[Aabb], threshold: f64) -> Result<F1Counts> {
    if preds.is_empty() && gts.is_empty() {
        return Ok(F1Counts {
            tp: 1,
            fp: 0,
            fn_: 0,
        });
    }
    let mut tp = 0u64;
    if !preds.is_empty() && !gts.is_empty() {
        let mut matrix = ScoreMatrix::zeros(preds.len(), gts.len());
        for (r, p) in preds.iter().enumerate() {
            for (c, g) in gts.iter().enumerate() {
                matrix.set(r, c, aabb_iou(p, g)?);
            }
        }
        for (r, c) in max_score_matching(&matrix) {
            if matrix.at(r, c) >= threshold {
                tp += 1;
            }
        }
    }
    Ok(F1Counts {
        tp,
        fp: preds.len() as u64 - tp,
        fn_: gts.len() as u64 - tp,
    })
}

/// F1 over all records at one IoU threshold.
pub fn multi_object_f1(records: &[(Vec<Aabb>, Vec<Aabb>)], threshold: f64) -> Result<f64> {
    let mut counts = F1Counts::default();
    for (preds, gts) in records {
        let c = match_record_f1(preds, gts, threshold)?;
        counts.tp += c.tp;
        counts.fp += c.fp;
        counts.fn_ += c.fn_;
    }
    Ok(counts.f1())
}
