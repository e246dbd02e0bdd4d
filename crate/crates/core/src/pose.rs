//! Core domain types: keypoints, the 21-point hand skeleton, boxes and frames.
//!
//! Keypoint layout: 0 = wrist, then four joints per finger from the palm
//! outward (thumb 1-4, index 5-8, middle 9-12, ring 13-16, pinky 17-20).

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_BONES: usize = 20;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "wrist",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_ip",
    "thumb_tip",
    "index_mcp",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_mcp",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_mcp",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "pinky_mcp",
    "pinky_pip",
    "pinky_dip",
    "pinky_tip",
];

/// Skeleton edges as (parent, child), ordered finger by finger.
pub const BONES: [(usize, usize); NUM_BONES] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (0, 5),
    (5, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (10, 11),
    (11, 12),
    (0, 13),
    (13, 14),
    (14, 15),
    (15, 16),
    (0, 17),
    (17, 18),
    (18, 19),
    (19, 20),
];

/// Position of the index-finger proximal phalanx (5 -> 6) in [`BONES`].
pub const REFERENCE_BONE: usize = 5;

/// Index of `bone` in [`BONES`], if it is a skeleton edge.
pub fn bone_index(bone: (usize, usize)) -> Option<usize> {
    BONES.iter().position(|&b| b == bone)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    /// Present (true) vs removed or never estimated (false).
    pub valid: bool,
    /// Filled by temporal interpolation rather than observed.
    pub interpolated: bool,
}

impl Keypoint {
    /// Canonical representation of an absent keypoint.
    pub const MISSING: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        confidence: 0.0,
        valid: false,
        interpolated: false,
    };

    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint {
            x,
            y,
            confidence,
            valid: true,
            interpolated: false,
        }
    }

    pub fn position(&self) -> Option<(f64, f64)> {
        self.valid.then_some((self.x, self.y))
    }

    pub fn invalidate(&mut self) {
        *self = Keypoint::MISSING;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
}

impl HandPose {
    pub fn new(keypoints: [Keypoint; NUM_KEYPOINTS]) -> Self {
        HandPose { keypoints }
    }

    pub fn empty() -> Self {
        HandPose {
            keypoints: [Keypoint::MISSING; NUM_KEYPOINTS],
        }
    }

    /// Mean confidence over valid keypoints; 0 when none are valid.
    pub fn score(&self) -> f64 {
        let (sum, n) = self
            .keypoints
            .iter()
            .filter(|k| k.valid)
            .fold((0.0, 0usize), |(s, n), k| (s + k.confidence, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn valid_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.valid).count()
    }
}

/// Euclidean length of `bone`, or `None` when either endpoint is invalid.
pub fn bone_length(pose: &HandPose, bone: (usize, usize)) -> Option<f64> {
    let (ax, ay) = pose.keypoints[bone.0].position()?;
    let (bx, by) = pose.keypoints[bone.1].position()?;
    Some((bx - ax).hypot(by - ay))
}

/// Axis-aligned box in corner form with detector confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Result<Self> {
        let b = BBox {
            x1,
            y1,
            x2,
            y2,
            score,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2, self.score]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation(format!("non-finite box {self:?}")));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::Validation(format!(
                "box must have x1 < x2 and y1 < y2, got [{}, {}, {}, {}]",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!(
                "box score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    /// Top-left, top-right, bottom-left, bottom-right.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x1, self.y1),
            (self.x2, self.y1),
            (self.x1, self.y2),
            (self.x2, self.y2),
        ]
    }

    /// Intersection with the image rectangle; `None` when nothing is left.
    pub fn clipped(&self, width: u32, height: u32) -> Option<BBox> {
        let b = BBox {
            x1: self.x1.clamp(0.0, width as f64),
            y1: self.y1.clamp(0.0, height as f64),
            x2: self.x2.clamp(0.0, width as f64),
            y2: self.y2.clamp(0.0, height as f64),
            score: self.score,
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// IoU after clipping both boxes to the image; boxes entirely outside score 0.
pub fn iou_in_image(a: &BBox, b: &BBox, width: u32, height: u32) -> f64 {
    match (a.clipped(width, height), b.clipped(width, height)) {
        (Some(a), Some(b)) => iou(&a, &b),
        _ => 0.0,
    }
}

/// Fraction of the image covered by the clipped box.
pub fn area_fraction(bbox: &BBox, image_width: u32, image_height: u32) -> Result<f64> {
    let image_area = image_width as f64 * image_height as f64;
    if image_area <= 0.0 {
        return Err(Error::Validation(format!(
            "image area is zero ({image_width}x{image_height})"
        )));
    }
    Ok(bbox
        .clipped(image_width, image_height)
        .map_or(0.0, |b| (b.area() / image_area).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub pose: Option<HandPose>,
    /// The box was synthesized by temporal interpolation.
    pub interpolated: bool,
}

impl Detection {
    pub fn new(bbox: BBox, pose: Option<HandPose>) -> Self {
        Detection {
            bbox,
            pose,
            interpolated: false,
        }
    }

    pub fn pose_score(&self) -> f64 {
        self.pose.as_ref().map_or(0.0, HandPose::score)
    }
}

/// All candidates of one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCandidates {
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub image_width: u32,
    pub image_height: u32,
    pub image_path: String,
    pub detections: Vec<Detection>,
}

impl FrameCandidates {
    /// Same frame metadata, no detections.
    pub fn shell(&self) -> FrameCandidates {
        FrameCandidates {
            frame_id: self.frame_id,
            timestamp_ms: self.timestamp_ms,
            image_width: self.image_width,
            image_height: self.image_height,
            image_path: self.image_path.clone(),
            detections: Vec::new(),
        }
    }

    pub fn area_fraction(&self, bbox: &BBox) -> Result<f64> {
        area_fraction(bbox, self.image_width, self.image_height)
    }

    /// Checks the frame-local invariants: positive image size, valid boxes,
    /// confidences in range and every valid keypoint inside the image.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("frame {}: {msg}", self.frame_id)));
        if self.image_width == 0 || self.image_height == 0 {
            return fail(format!(
                "image size {}x{} must be positive",
                self.image_width, self.image_height
            ));
        }
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        for (i, det) in self.detections.iter().enumerate() {
            if let Err(e) = det.bbox.validate() {
                return fail(format!("detection {i}: {e}"));
            }
            let Some(pose) = &det.pose else { continue };
            for (j, kp) in pose.keypoints.iter().enumerate() {
                if !kp.valid {
                    continue;
                }
                if !(kp.x.is_finite() && kp.y.is_finite()) {
                    return fail(format!("detection {i} keypoint {j} is not finite"));
                }
                if !(0.0..=1.0).contains(&kp.confidence) {
                    return fail(format!(
                        "detection {i} keypoint {j} confidence {} outside [0, 1]",
                        kp.confidence
                    ));
                }
                if !(0.0..=w).contains(&kp.x) || !(0.0..=h).contains(&kp.y) {
                    return fail(format!(
                        "detection {i} keypoint {j} at ({}, {}) lies outside the {}x{} image",
                        kp.x, kp.y, self.image_width, self.image_height
                    ));
                }
            }
        }
        Ok(())
    }
}
