//! Detection precision/recall under IoU matching, PCK and PCK-AUC.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FilterConfig;
use crate::error::{Error, Result};
use crate::pose::{iou, BBox, FrameCandidates, HandPose};
use crate::spatial::gate_confidence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatch {
    /// Index of the matched ground-truth box.
    pub gt: Option<usize>,
    pub iou: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// One entry per prediction, in input order.
    pub predictions: Vec<PredictionMatch>,
    pub gt_covered: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.predictions.iter().filter(|p| p.gt.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.predictions.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_covered.iter().filter(|c| !**c).count()
    }
}

/// Prediction indices by descending confidence; ties keep input order.
pub fn confidence_order(preds: &[BBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Greedy one-to-one matching. Predictions are visited by descending
/// confidence and each takes the unmatched ground truth of highest IoU
/// (lowest index on ties) when that IoU reaches `iou_threshold`.
pub fn match_detections(preds: &[BBox], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut result = MatchResult {
        predictions: preds
            .iter()
            .map(|p| PredictionMatch {
                gt: None,
                iou: 0.0,
                confidence: p.score,
            })
            .collect(),
        gt_covered: vec![false; gts.len()],
    };
    for pi in confidence_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if result.gt_covered[gi] {
                continue;
            }
            let v = iou(&preds[pi], gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, v)) = best {
            result.gt_covered[gi] = true;
            result.predictions[pi].gt = Some(gi);
            result.predictions[pi].iou = v;
        }
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// 1 when there are no predictions.
    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// 1 when there is no ground truth.
    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Per-frame `(predictions, ground truth)` box lists.
pub type BoxFrame = (Vec<BBox>, Vec<BBox>);

pub fn count_matches(frames: &[BoxFrame], iou_threshold: f64, min_confidence: f64) -> Counts {
    frames
        .par_iter()
        .map(|(preds, gts)| {
            let kept: Vec<BBox> = preds.iter().copied().filter(|p| p.score >= min_confidence).collect();
            let m = match_detections(&kept, gts, iou_threshold);
            Counts {
                tp: m.true_positives(),
                fp: m.false_positives(),
                fn_: m.false_negatives(),
            }
        })
        .reduce(Counts::default, Counts::add)
}

fn check_grid(grid: &[f64], name: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Validation(format!("{name} is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// Precision and recall at each confidence threshold; predictions below the
/// threshold are discarded before matching.
pub fn precision_recall(frames: &[BoxFrame], iou_threshold: f64, conf_grid: &[f64]) -> Result<PrCurve> {
    check_grid(conf_grid, "confidence grid")?;
    if conf_grid[0] < 0.0 || conf_grid[conf_grid.len() - 1] > 1.0 {
        return Err(Error::Validation("confidence grid must lie in [0, 1]".into()));
    }
    Ok(PrCurve {
        points: conf_grid
            .iter()
            .map(|&t| {
                let c = count_matches(frames, iou_threshold, t);
                PrPoint {
                    threshold: t,
                    precision: c.precision(),
                    recall: c.recall(),
                }
            })
            .collect(),
    })
}

/// Fraction of ground-truth-valid keypoints whose prediction lies within
/// `norm_distance` times the ground-truth box diagonal. Missing predictions
/// count as misses.
pub fn pck(pred: &HandPose, gt: &HandPose, gt_bbox: &BBox, norm_distance: f64) -> Result<f64> {
    let radius = norm_distance * gt_bbox.diagonal();
    let mut total = 0usize;
    let mut hit = 0usize;
    for (p, g) in pred.keypoints.iter().zip(&gt.keypoints) {
        if !g.valid {
            continue;
        }
        total += 1;
        if p.valid && (p.x - g.x).hypot(p.y - g.y) <= radius {
            hit += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedPck);
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosePair {
    pub pred: HandPose,
    pub gt: HandPose,
    pub gt_bbox: BBox,
}

/// 50 uniform thresholds over (0, 0.5].
pub fn default_auc_grid() -> Vec<f64> {
    (1..=50).map(|i| i as f64 / 100.0).collect()
}

pub fn mean_pck(pairs: &[PosePair], norm_distance: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("no pose pairs to score".into()));
    }
    let mut sum = 0.0;
    for p in pairs {
        sum += pck(&p.pred, &p.gt, &p.gt_bbox, norm_distance)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Trapezoidal area under mean PCK over `grid`, divided by the grid span.
/// A single-point grid yields the mean PCK at that point.
pub fn auc(pairs: &[PosePair], grid: &[f64]) -> Result<f64> {
    check_grid(grid, "PCK grid")?;
    if grid[0] <= 0.0 {
        return Err(Error::Validation("PCK grid must be positive".into()));
    }
    let curve = grid.iter().map(|&t| mean_pck(pairs, t)).collect::<Result<Vec<f64>>>()?;
    if grid.len() == 1 {
        return Ok(curve[0]);
    }
    let area: f64 = grid
        .windows(2)
        .zip(curve.windows(2))
        .map(|(g, c)| (g[1] - g[0]) * (c[0] + c[1]) / 2.0)
        .sum();
    Ok((area / (grid[grid.len() - 1] - grid[0])).clamp(0.0, 1.0))
}

/// Default confidence thresholds for reported curves: 0, 0.05, ..., 0.95.
pub fn default_conf_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(rename = "precision@0.5")]
    pub precision_50: f64,
    #[serde(rename = "recall@0.5")]
    pub recall_50: f64,
    #[serde(rename = "precision@0.75")]
    pub precision_75: f64,
    #[serde(rename = "recall@0.75")]
    pub recall_75: f64,
    /// PCK-AUC over ground-truth poses matched at IoU 0.5; absent when none matched.
    pub auc: Option<f64>,
    pub matched_poses: usize,
    pub unmatched_poses: usize,
    pub pr_curves: BTreeMap<String, PrCurve>,
}

/// Aligns predictions and ground truth by frame id. Frames missing on one
/// side count as empty.
pub fn align_frames(preds: &[FrameCandidates], gts: &[FrameCandidates]) -> Vec<(Vec<crate::Detection>, Vec<crate::Detection>)> {
    let mut by_id: BTreeMap<u64, (Vec<crate::Detection>, Vec<crate::Detection>)> = BTreeMap::new();
    for f in preds {
        by_id.entry(f.frame_id).or_default().0.extend(f.detections.iter().cloned());
    }
    for f in gts {
        by_id.entry(f.frame_id).or_default().1.extend(f.detections.iter().cloned());
    }
    by_id.into_values().collect()
}

fn boxes(frames: &[(Vec<crate::Detection>, Vec<crate::Detection>)]) -> Vec<BoxFrame> {
    frames
        .iter()
        .map(|(p, g)| (p.iter().map(|d| d.bbox).collect(), g.iter().map(|d| d.bbox).collect()))
        .collect()
}

/// Pose pairs from IoU-0.5 matches, plus the count of ground-truth poses left
/// unmatched.
pub fn pose_pairs(frames: &[(Vec<crate::Detection>, Vec<crate::Detection>)]) -> (Vec<PosePair>, usize) {
    let mut pairs = Vec::new();
    let mut unmatched = 0;
    for (p, g) in frames {
        let pb: Vec<BBox> = p.iter().map(|d| d.bbox).collect();
        let gb: Vec<BBox> = g.iter().map(|d| d.bbox).collect();
        let m = match_detections(&pb, &gb, 0.5);
        let mut gt_to_pred = vec![None; g.len()];
        for (pi, pm) in m.predictions.iter().enumerate() {
            if let Some(gi) = pm.gt {
                gt_to_pred[gi] = Some(pi);
            }
        }
        for (gi, gd) in g.iter().enumerate() {
            let Some(gpose) = gd.pose.clone().filter(|gp| gp.valid_count() > 0) else { continue };
            match gt_to_pred[gi] {
                Some(pi) => pairs.push(PosePair {
                    pred: p[pi].pose.clone().unwrap_or_else(HandPose::empty),
                    gt: gpose,
                    gt_bbox: gd.bbox,
                }),
                None => unmatched += 1,
            }
        }
    }
    (pairs, unmatched)
}

pub fn evaluate(preds: &[FrameCandidates], gts: &[FrameCandidates]) -> Result<EvaluationReport> {
    let aligned = align_frames(preds, gts);
    let bf = boxes(&aligned);
    let c50 = count_matches(&bf, 0.5, 0.0);
    let c75 = count_matches(&bf, 0.75, 0.0);
    let grid = default_conf_grid();
    let mut pr_curves = BTreeMap::new();
    pr_curves.insert("iou@0.5".to_string(), precision_recall(&bf, 0.5, &grid)?);
    pr_curves.insert("iou@0.75".to_string(), precision_recall(&bf, 0.75, &grid)?);
    let (pairs, unmatched) = pose_pairs(&aligned);
    let auc_value = if pairs.is_empty() {
        None
    } else {
        Some(auc(&pairs, &default_auc_grid())?)
    };
    Ok(EvaluationReport {
        precision_50: c50.precision(),
        recall_50: c50.recall(),
        precision_75: c75.precision(),
        recall_75: c75.recall(),
        auc: auc_value,
        matched_poses: pairs.len(),
        unmatched_poses: unmatched,
        pr_curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub c_hd: f64,
    pub c_pe: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
}

/// Applies the confidence gate at every `(c_hd, c_pe)` combination and
/// scores the result at IoU 0.5.
pub fn confidence_sweep(
    candidates: &[FrameCandidates],
    gts: &[FrameCandidates],
    base: &FilterConfig,
    c_hd_grid: &[f64],
    c_pe_grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(c_hd_grid.len() * c_pe_grid.len());
    for &c_hd in c_hd_grid {
        for &c_pe in c_pe_grid {
            let cfg = FilterConfig { c_hd, c_pe, ..base.clone() };
            cfg.validate()?;
            let gated: Vec<FrameCandidates> = candidates.par_iter().map(|f| gate_confidence(f, &cfg).0).collect();
            let aligned = align_frames(&gated, gts);
            let c = count_matches(&boxes(&aligned), 0.5, 0.0);
            let (pairs, _) = pose_pairs(&aligned);
            out.push(SweepPoint {
                c_hd,
                c_pe,
                precision: c.precision(),
                recall: c.recall(),
                auc: if pairs.is_empty() { None } else { Some(auc(&pairs, &default_auc_grid())?) },
            });
        }
    }
    Ok(out)
}
