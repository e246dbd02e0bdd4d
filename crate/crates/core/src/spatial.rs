//! Frame-local rejection: confidence gates, bone-length upper bounds, hand
//! area bounds and expected hand count, applied in that order.

use serde::{Deserialize, Serialize};

use crate::config::FilterConfig;
use crate::pose::{bone_length, Detection, FrameCandidates, HandPose, BONES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectionReason {
    LowDetectionConfidence,
    LowPoseScore,
    BoneTooLong { bone: (usize, usize) },
    AreaTooLarge,
    AreaTooSmall,
    ExcessHand,
    FrameUndercount,
    /// A joint moved faster than `t_vmax`; only that joint was invalidated.
    KeypointVelocity { keypoint: usize },
    /// A box corner moved faster than `t_vmax`; the detection was removed.
    CornerVelocity,
}

impl RejectionReason {
    /// Stable short name, used for histograms.
    pub fn name(&self) -> &'static str {
        match self {
            RejectionReason::LowDetectionConfidence => "low-detection-confidence",
            RejectionReason::LowPoseScore => "low-pose-score",
            RejectionReason::BoneTooLong { .. } => "bone-too-long",
            RejectionReason::AreaTooLarge => "area-too-large",
            RejectionReason::AreaTooSmall => "area-too-small",
            RejectionReason::ExcessHand => "excess-hand",
            RejectionReason::FrameUndercount => "frame-undercount",
            RejectionReason::KeypointVelocity { .. } => "keypoint-velocity",
            RejectionReason::CornerVelocity => "corner-velocity",
        }
    }
}

/// One audited removal. `detection_index` is `None` when the whole frame was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub frame_id: u64,
    pub detection_index: Option<usize>,
    #[serde(flatten)]
    pub reason: RejectionReason,
    pub measured_value: f64,
    pub threshold: f64,
}

impl RejectionRecord {
    /// Re-checks that `measured_value` violates `threshold` in the direction
    /// implied by the reason.
    pub fn is_violation(&self) -> bool {
        let (m, t) = (self.measured_value, self.threshold);
        match self.reason {
            RejectionReason::LowDetectionConfidence | RejectionReason::LowPoseScore => m < t,
            RejectionReason::FrameUndercount => m < t,
            RejectionReason::BoneTooLong { .. }
            | RejectionReason::AreaTooLarge
            | RejectionReason::ExcessHand
            | RejectionReason::KeypointVelocity { .. }
            | RejectionReason::CornerVelocity => m > t,
            RejectionReason::AreaTooSmall => m < t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoneCheck {
    Pass,
    Fail {
        bone: (usize, usize),
        measured: f64,
        bound: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AreaCheck {
    Pass,
    Fail {
        reason: RejectionReason,
        fraction: f64,
        bound: f64,
    },
}

/// Result of a frame-level filter: `frame` is `None` when the frame was dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialResult {
    pub frame: Option<FrameCandidates>,
    pub rejections: Vec<RejectionRecord>,
}

/// Working set: detections tagged with their index in the original frame.
pub(crate) type Tagged = Vec<(usize, Detection)>;

fn record(
    frame_id: u64,
    idx: Option<usize>,
    reason: RejectionReason,
    measured: f64,
    threshold: f64,
) -> RejectionRecord {
    RejectionRecord {
        frame_id,
        detection_index: idx,
        reason,
        measured_value: measured,
        threshold,
    }
}

fn gate_tagged(frame_id: u64, dets: Tagged, cfg: &FilterConfig, out: &mut Vec<RejectionRecord>) -> Tagged {
    let mut kept = Vec::with_capacity(dets.len());
    for (idx, mut det) in dets {
        if det.bbox.score < cfg.c_hd {
            out.push(record(
                frame_id,
                Some(idx),
                RejectionReason::LowDetectionConfidence,
                det.bbox.score,
                cfg.c_hd,
            ));
            continue;
        }
        let Some(pose) = det.pose.as_mut() else {
            out.push(record(frame_id, Some(idx), RejectionReason::LowPoseScore, 0.0, cfg.c_pe));
            continue;
        };
        // pose-level gate uses the score as estimated, before per-joint gating
        let score = pose.score();
        if score < cfg.c_pe {
            out.push(record(frame_id, Some(idx), RejectionReason::LowPoseScore, score, cfg.c_pe));
            continue;
        }
        for kp in pose.keypoints.iter_mut() {
            if kp.valid && kp.confidence < cfg.c_pe {
                kp.invalidate();
            }
        }
        kept.push((idx, det));
    }
    kept
}

/// Removes detections below `c_hd`, poses below `c_pe` (with their box), and
/// invalidates individual keypoints below `c_pe`.
pub fn gate_confidence(frame: &FrameCandidates, cfg: &FilterConfig) -> (FrameCandidates, Vec<RejectionRecord>) {
    let mut rejections = Vec::new();
    let kept = gate_tagged(frame.frame_id, tag(frame), cfg, &mut rejections);
    (with_detections(frame, kept), rejections)
}

/// Checks every bone with two valid endpoints against `s_bone * ratio * slack`.
pub fn check_bones(pose: &HandPose, cfg: &FilterConfig) -> BoneCheck {
    for (i, &bone) in BONES.iter().enumerate() {
        let Some(len) = bone_length(pose, bone) else {
            continue;
        };
        let bound = cfg.bone_bound(i);
        if len > bound {
            return BoneCheck::Fail {
                bone,
                measured: len,
                bound,
            };
        }
    }
    BoneCheck::Pass
}

/// Checks the detector box against the admissible image-area fraction (bounds inclusive).
pub fn check_area(det: &Detection, frame: &FrameCandidates, cfg: &FilterConfig) -> AreaCheck {
    // zero-area images cannot hold a hand; report them as too small
    let f = frame.area_fraction(&det.bbox).unwrap_or(0.0);
    if f > cfg.s_area_max {
        AreaCheck::Fail {
            reason: RejectionReason::AreaTooLarge,
            fraction: f,
            bound: cfg.s_area_max,
        }
    } else if f < cfg.s_area_min {
        AreaCheck::Fail {
            reason: RejectionReason::AreaTooSmall,
            fraction: f,
            bound: cfg.s_area_min,
        }
    } else {
        AreaCheck::Pass
    }
}

pub(crate) fn count_tagged(
    frame_id: u64,
    dets: Tagged,
    cfg: &FilterConfig,
    out: &mut Vec<RejectionRecord>,
) -> Option<Tagged> {
    let n = dets.len();
    if n < cfg.s_count {
        out.push(record(
            frame_id,
            None,
            RejectionReason::FrameUndercount,
            n as f64,
            cfg.s_count as f64,
        ));
        return None;
    }
    if n == cfg.s_count {
        return Some(dets);
    }
    // rank by score descending, ties to the lower original index
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .1
            .bbox
            .score
            .total_cmp(&dets[a].1.bbox.score)
            .then(dets[a].0.cmp(&dets[b].0))
    });
    let mut rank = vec![0usize; n];
    for (r, &pos) in order.iter().enumerate() {
        rank[pos] = r + 1;
    }
    let mut kept = Vec::with_capacity(cfg.s_count);
    for (pos, (idx, det)) in dets.into_iter().enumerate() {
        if rank[pos] <= cfg.s_count {
            kept.push((idx, det));
        } else {
            out.push(record(
                frame_id,
                Some(idx),
                RejectionReason::ExcessHand,
                rank[pos] as f64,
                cfg.s_count as f64,
            ));
        }
    }
    Some(kept)
}

/// Keeps the `s_count` most confident detections, or drops the frame when
/// fewer than `s_count` are present.
pub fn enforce_count(frame: &FrameCandidates, cfg: &FilterConfig) -> SpatialResult {
    let mut rejections = Vec::new();
    let kept = count_tagged(frame.frame_id, tag(frame), cfg, &mut rejections);
    SpatialResult {
        frame: kept.map(|k| with_detections(frame, k)),
        rejections,
    }
}

/// Full spatial pass: confidence gate, bone check, area check, count enforcement.
/// Rejection records refer to detection indices of the input frame.
pub fn spatial_filter(frame: &FrameCandidates, cfg: &FilterConfig) -> SpatialResult {
    let id = frame.frame_id;
    let mut rejections = Vec::new();
    let gated = gate_tagged(id, tag(frame), cfg, &mut rejections);

    let mut boned = Vec::with_capacity(gated.len());
    for (idx, det) in gated {
        // gate_tagged guarantees a pose
        let check = det.pose.as_ref().map_or(BoneCheck::Pass, |p| check_bones(p, cfg));
        match check {
            BoneCheck::Pass => boned.push((idx, det)),
            BoneCheck::Fail { bone, measured, bound } => rejections.push(record(
                id,
                Some(idx),
                RejectionReason::BoneTooLong { bone },
                measured,
                bound,
            )),
        }
    }

    let mut sized = Vec::with_capacity(boned.len());
    for (idx, det) in boned {
        match check_area(&det, frame, cfg) {
            AreaCheck::Pass => sized.push((idx, det)),
            AreaCheck::Fail { reason, fraction, bound } => {
                rejections.push(record(id, Some(idx), reason, fraction, bound))
            }
        }
    }

    let kept = count_tagged(id, sized, cfg, &mut rejections);
    SpatialResult {
        frame: kept.map(|k| with_detections(frame, k)),
        rejections,
    }
}

fn tag(frame: &FrameCandidates) -> Tagged {
    frame.detections.iter().cloned().enumerate().collect()
}

fn with_detections(frame: &FrameCandidates, dets: Tagged) -> FrameCandidates {
    FrameCandidates {
        detections: dets.into_iter().map(|(_, d)| d).collect(),
        ..frame.shell()
    }
}
