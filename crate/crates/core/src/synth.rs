//! Seeded synthetic hand sequences and controlled corruption with an exact
//! ledger of every injected defect.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::BoneRatios;
use crate::error::{Error, Result};
use crate::pose::{BBox, Detection, FrameCandidates, HandPose, Keypoint, BONES, NUM_KEYPOINTS};

pub const FRAME_RATE: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    Static,
    /// Pixels per frame.
    Linear { vx: f64, vy: f64 },
    Sinusoidal {
        amplitude_x: f64,
        amplitude_y: f64,
        period_frames: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_hands: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub motion: Motion,
    pub n_frames: usize,
    /// Index proximal phalanx length in pixels.
    pub base_hand_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub bone_ratios: BoneRatios,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_hands == 0 {
            return Err(Error::InfeasibleScene("n_hands must be at least 1".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InfeasibleScene("image size must be positive".into()));
        }
        if !(self.base_hand_scale.is_finite() && self.base_hand_scale > 0.0) {
            return Err(Error::InfeasibleScene("base_hand_scale must be positive".into()));
        }
        if let Motion::Sinusoidal { period_frames, .. } = self.motion {
            if period_frames.is_nan() || period_frames <= 0.0 {
                return Err(Error::InfeasibleScene("period_frames must be positive".into()));
            }
        }
        Ok(())
    }

    fn displacement(&self, t: usize, phase: f64) -> (f64, f64) {
        let t = t as f64;
        match self.motion {
            Motion::Static => (0.0, 0.0),
            Motion::Linear { vx, vy } => (vx * t, vy * t),
            Motion::Sinusoidal {
                amplitude_x,
                amplitude_y,
                period_frames,
            } => {
                let s = (TAU * t / period_frames + phase).sin();
                (amplitude_x * s, amplitude_y * s)
            }
        }
    }

    /// Bounds of the displacement over the whole sequence, per axis.
    fn displacement_range(&self) -> ((f64, f64), (f64, f64)) {
        let last = self.n_frames.saturating_sub(1) as f64;
        match self.motion {
            Motion::Static => ((0.0, 0.0), (0.0, 0.0)),
            Motion::Linear { vx, vy } => (
                ((vx * last).min(0.0), (vx * last).max(0.0)),
                ((vy * last).min(0.0), (vy * last).max(0.0)),
            ),
            Motion::Sinusoidal {
                amplitude_x,
                amplitude_y,
                ..
            } => (
                (-amplitude_x.abs(), amplitude_x.abs()),
                (-amplitude_y.abs(), amplitude_y.abs()),
            ),
        }
    }
}

fn finger_offsets() -> [f64; 5] {
    [-0.9, -0.3, -0.1, 0.1, 0.3]
}

/// Keypoints relative to the wrist.
fn hand_template(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> [(f64, f64); NUM_KEYPOINTS] {
    let theta = -PI / 2.0 + rng.random_range(-0.25..0.25);
    let mut pts = [(0.0, 0.0); NUM_KEYPOINTS];
    for (f, base) in finger_offsets().into_iter().enumerate() {
        let mut angle = theta + base + rng.random_range(-0.05..0.05);
        let curl = rng.random_range(0.02..0.12) * if f == 0 { -1.0 } else { 1.0 };
        for k in 0..4 {
            let bone = 4 * f + k;
            let (parent, child) = BONES[bone];
            let len = spec.base_hand_scale * spec.bone_ratios.get(bone);
            let (px, py) = pts[parent];
            pts[child] = (px + len * angle.cos(), py + len * angle.sin());
            angle += curl;
        }
    }
    pts
}

fn extent(pts: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    pts.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
    )
}

struct HandLayout {
    template: [(f64, f64); NUM_KEYPOINTS],
    /// Box corners relative to the wrist.
    box_rel: (f64, f64, f64, f64),
    wrist: (f64, f64),
    phase: f64,
}

fn feasible_range(lo: f64, hi: f64, what: &str) -> Result<(f64, f64)> {
    if lo > hi {
        Err(Error::InfeasibleScene(format!(
            "{what}: hand and its motion range do not fit ({lo:.1} > {hi:.1})"
        )))
    } else {
        Ok((lo, hi))
    }
}

/// Ground-truth frames. Every pose obeys the bone-ratio table exactly and
/// every box and keypoint stays inside the image for the whole sequence.
/// Hands keep to their own horizontal slot of the image.
pub fn generate(spec: &SceneSpec) -> Result<Vec<FrameCandidates>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.image_width as f64, spec.image_height as f64);
    let ((dx0, dx1), (dy0, dy1)) = spec.displacement_range();
    let slot = w / spec.n_hands as f64;
    let mut hands = Vec::with_capacity(spec.n_hands);
    for i in 0..spec.n_hands {
        let template = hand_template(spec, &mut rng);
        let (ex0, ey0, ex1, ey1) = extent(&template);
        let pad = 0.08 * (ex1 - ex0).max(ey1 - ey0) + 2.0;
        let box_rel = (ex0 - pad, ey0 - pad, ex1 + pad, ey1 + pad);
        let (s0, s1) = (slot * i as f64, slot * (i + 1) as f64);
        let (xl, xh) = feasible_range(s0 - box_rel.0 - dx0, s1 - box_rel.2 - dx1, &format!("hand {i} horizontally"))?;
        let (yl, yh) = feasible_range(-box_rel.1 - dy0, h - box_rel.3 - dy1, &format!("hand {i} vertically"))?;
        let wrist = (
            xl + (xh - xl) * rng.random::<f64>(),
            yl + (yh - yl) * rng.random::<f64>(),
        );
        let phase = rng.random_range(0.0..TAU);
        hands.push(HandLayout {
            template,
            box_rel,
            wrist,
            phase,
        });
    }

    let mut frames = Vec::with_capacity(spec.n_frames);
    for t in 0..spec.n_frames {
        let mut detections = Vec::with_capacity(hands.len());
        for hand in &hands {
            let (dx, dy) = spec.displacement(t, hand.phase);
            let (ox, oy) = (hand.wrist.0 + dx, hand.wrist.1 + dy);
            let mut pose = HandPose::empty();
            for (k, &(x, y)) in pose.keypoints.iter_mut().zip(&hand.template) {
                *k = Keypoint::new(ox + x, oy + y, 1.0);
            }
            let (bx0, by0, bx1, by1) = hand.box_rel;
            let bbox = BBox::new(ox + bx0, oy + by0, ox + bx1, oy + by1, 1.0)?;
            detections.push(Detection::new(bbox, Some(pose)));
        }
        frames.push(FrameCandidates {
            frame_id: t as u64,
            timestamp_ms: t as u64 * 1000 / FRAME_RATE,
            image_width: spec.image_width,
            image_height: spec.image_height,
            image_path: format!("synthetic/{t:06}.png"),
            detections,
        });
    }
    Ok(frames)
}

/// Emitted confidence is `clean_base - k * magnitude / image_diagonal`,
/// clipped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub clean_base: f64,
    pub k: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel { clean_base: 1.0, k: 0.0 }
    }
}

impl ConfidenceModel {
    pub fn confidence(&self, magnitude: f64, diagonal: f64) -> f64 {
        (self.clean_base - self.k * magnitude / diagonal).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub keypoint_jitter_sigma: f64,
    pub bbox_jitter_sigma: f64,
    /// Probability that a keypoint teleports by `outlier_magnitude` pixels.
    pub outlier_rate: f64,
    pub outlier_magnitude: f64,
    /// Probability that a hand is missing from a frame.
    pub dropout_rate: f64,
    /// Probability of one spurious detection per frame.
    pub false_detection_rate: f64,
    /// Forbid outliers on a hand's first observation and on a keypoint that
    /// was an outlier in the hand's previous observation.
    pub isolated_outliers: bool,
    pub confidence_model: ConfidenceModel,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("outlier_rate", self.outlier_rate),
            ("dropout_rate", self.dropout_rate),
            ("false_detection_rate", self.false_detection_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("keypoint_jitter_sigma", self.keypoint_jitter_sigma),
            ("bbox_jitter_sigma", self.bbox_jitter_sigma),
            ("outlier_magnitude", self.outlier_magnitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} {v} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Rates and jitter scaled by `factor`; magnitudes and the confidence
    /// model are unchanged.
    pub fn scaled(&self, factor: f64) -> CorruptionSpec {
        CorruptionSpec {
            keypoint_jitter_sigma: self.keypoint_jitter_sigma * factor,
            bbox_jitter_sigma: self.bbox_jitter_sigma * factor,
            outlier_rate: (self.outlier_rate * factor).clamp(0.0, 1.0),
            dropout_rate: (self.dropout_rate * factor).clamp(0.0, 1.0),
            false_detection_rate: (self.false_detection_rate * factor).clamp(0.0, 1.0),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorruptionEvent {
    Dropout {
        frame_id: u64,
        hand: usize,
    },
    BboxJitter {
        frame_id: u64,
        hand: usize,
        detection_index: usize,
        magnitude: f64,
    },
    Jitter {
        frame_id: u64,
        hand: usize,
        detection_index: usize,
        keypoint: usize,
        magnitude: f64,
    },
    Outlier {
        frame_id: u64,
        hand: usize,
        detection_index: usize,
        keypoint: usize,
        magnitude: f64,
    },
    FalseDetection {
        frame_id: u64,
        detection_index: usize,
    },
}

impl CorruptionEvent {
    pub fn frame_id(&self) -> u64 {
        match *self {
            CorruptionEvent::Dropout { frame_id, .. }
            | CorruptionEvent::BboxJitter { frame_id, .. }
            | CorruptionEvent::Jitter { frame_id, .. }
            | CorruptionEvent::Outlier { frame_id, .. }
            | CorruptionEvent::FalseDetection { frame_id, .. } => frame_id,
        }
    }
}

/// A scene plus the corruption applied to it, as stored in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scene: SceneSpec,
    #[serde(default)]
    pub corruption: CorruptionSpec,
}

impl Scenario {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }
}

const OUTLIER_ANGLE_TRIES: usize = 8;

struct SlotDraws {
    jitter: (f64, f64),
    outlier: f64,
    angles: [f64; OUTLIER_ANGLE_TRIES],
}

struct HandDraws {
    dropout: f64,
    bbox: [f64; 4],
    slots: Vec<SlotDraws>,
}

struct FalseDraws {
    present: f64,
    center: (f64, f64),
    size: f64,
    aspect: f64,
    score: f64,
    keypoints: Vec<(f64, f64, f64)>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_hand(rng: &mut ChaCha8Rng) -> HandDraws {
    HandDraws {
        dropout: rng.random(),
        bbox: [normal(rng), normal(rng), normal(rng), normal(rng)],
        slots: (0..NUM_KEYPOINTS)
            .map(|_| SlotDraws {
                jitter: (normal(rng), normal(rng)),
                outlier: rng.random(),
                angles: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
            })
            .collect(),
    }
}

fn draw_false(rng: &mut ChaCha8Rng) -> FalseDraws {
    FalseDraws {
        present: rng.random(),
        center: (rng.random(), rng.random()),
        size: rng.random_range(0.6..1.4),
        aspect: rng.random_range(0.75..1.33),
        score: rng.random_range(0.25..1.0),
        keypoints: (0..NUM_KEYPOINTS)
            .map(|_| (rng.random(), rng.random(), rng.random_range(0.25..1.0)))
            .collect(),
    }
}

/// Corrupts ground truth from [`generate`]. Truth detections must list the
/// hands in a fixed order in every frame.
///
/// Every random quantity is drawn whether or not it is used, so for a fixed
/// seed the events produced at lower rates are a subset of those produced
/// at higher ones, apart from keypoint events on hands that the higher
/// dropout rate removed.
pub fn corrupt(
    truth: &[FrameCandidates],
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<(Vec<FrameCandidates>, Vec<CorruptionEvent>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de_0bad_f00d);
    let conf = spec.confidence_model;
    let mut ledger = Vec::new();
    let mut out = Vec::with_capacity(truth.len());
    // Outlier flags of each hand's previous emitted observation.
    let mut prev_outliers: Vec<Option<[bool; NUM_KEYPOINTS]>> = Vec::new();

    for frame in truth {
        let (w, h) = (frame.image_width as f64, frame.image_height as f64);
        let diag = w.hypot(h);
        let fid = frame.frame_id;
        if prev_outliers.len() < frame.detections.len() {
            prev_outliers.resize(frame.detections.len(), None);
        }
        let draws: Vec<HandDraws> = frame.detections.iter().map(|_| draw_hand(&mut rng)).collect();
        let fdraw = draw_false(&mut rng);

        let mut detections = Vec::with_capacity(frame.detections.len() + 1);
        for (hand, (det, d)) in frame.detections.iter().zip(&draws).enumerate() {
            if d.dropout < spec.dropout_rate {
                ledger.push(CorruptionEvent::Dropout { frame_id: fid, hand });
                continue;
            }
            let detection_index = detections.len();

            let b = det.bbox;
            let s = spec.bbox_jitter_sigma;
            let mut bbox = BBox {
                x1: b.x1 + s * d.bbox[0],
                y1: b.y1 + s * d.bbox[1],
                x2: b.x2 + s * d.bbox[2],
                y2: b.y2 + s * d.bbox[3],
                score: b.score,
            };
            if !(bbox.x1 < bbox.x2 && bbox.y1 < bbox.y2) {
                bbox = BBox { score: b.score, ..b };
            }
            let bbox_mag = [(bbox.x1 - b.x1, bbox.y1 - b.y1), (bbox.x2 - b.x2, bbox.y2 - b.y2)]
                .iter()
                .map(|(dx, dy)| dx.hypot(*dy))
                .fold(0.0, f64::max);
            if bbox_mag > 0.0 {
                ledger.push(CorruptionEvent::BboxJitter {
                    frame_id: fid,
                    hand,
                    detection_index,
                    magnitude: bbox_mag,
                });
            }
            bbox.score = conf.confidence(bbox_mag, diag);

            let mut outliers = [false; NUM_KEYPOINTS];
            let pose = det.pose.as_ref().map(|p| {
                let mut q = p.clone();
                for (j, (k, sd)) in q.keypoints.iter_mut().zip(&d.slots).enumerate() {
                    if !k.valid {
                        continue;
                    }
                    let allowed = !spec.isolated_outliers || prev_outliers[hand].is_some_and(|prev| !prev[j]);
                    let teleport = if allowed && sd.outlier < spec.outlier_rate {
                        sd.angles.iter().find_map(|a| {
                            let (x, y) = (k.x + spec.outlier_magnitude * a.cos(), k.y + spec.outlier_magnitude * a.sin());
                            ((0.0..=w).contains(&x) && (0.0..=h).contains(&y)).then_some((x, y))
                        })
                    } else {
                        None
                    };
                    if let Some((x, y)) = teleport {
                        outliers[j] = true;
                        *k = Keypoint::new(x, y, conf.confidence(spec.outlier_magnitude, diag));
                        ledger.push(CorruptionEvent::Outlier {
                            frame_id: fid,
                            hand,
                            detection_index,
                            keypoint: j,
                            magnitude: spec.outlier_magnitude,
                        });
                        continue;
                    }
                    let sigma = spec.keypoint_jitter_sigma;
                    let (x, y) = (
                        (k.x + sigma * sd.jitter.0).clamp(0.0, w),
                        (k.y + sigma * sd.jitter.1).clamp(0.0, h),
                    );
                    let mag = (x - k.x).hypot(y - k.y);
                    if mag > 0.0 {
                        ledger.push(CorruptionEvent::Jitter {
                            frame_id: fid,
                            hand,
                            detection_index,
                            keypoint: j,
                            magnitude: mag,
                        });
                    }
                    *k = Keypoint::new(x, y, conf.confidence(mag, diag));
                }
                q
            });
            prev_outliers[hand] = Some(outliers);
            detections.push(Detection::new(bbox, pose));
        }

        if fdraw.present < spec.false_detection_rate {
            if let Some(fd) = false_detection(frame, &fdraw, conf) {
                ledger.push(CorruptionEvent::FalseDetection {
                    frame_id: fid,
                    detection_index: detections.len(),
                });
                detections.push(fd);
            }
        }
        out.push(FrameCandidates {
            detections,
            ..frame.shell()
        });
    }
    Ok((out, ledger))
}

/// A box sized like the frame's first true hand (or a fifth of the image)
/// placed uniformly inside the image, with keypoints scattered in it.
fn false_detection(frame: &FrameCandidates, d: &FalseDraws, conf: ConfidenceModel) -> Option<Detection> {
    let (w, h) = (frame.image_width as f64, frame.image_height as f64);
    let base = frame
        .detections
        .first()
        .map(|det| det.bbox.width().max(det.bbox.height()))
        .unwrap_or(w.min(h) / 5.0);
    let bw = (base * d.size).min(w);
    let bh = (base * d.size * d.aspect).min(h);
    let x1 = (w - bw) * d.center.0;
    let y1 = (h - bh) * d.center.1;
    let bbox = BBox::new(x1, y1, x1 + bw, y1 + bh, conf.confidence(d.score, 1.0)).ok()?;
    let mut pose = HandPose::empty();
    for (k, &(u, v, c)) in pose.keypoints.iter_mut().zip(&d.keypoints) {
        *k = Keypoint::new(x1 + bw * u, y1 + bh * v, conf.confidence(c, 1.0));
    }
    Some(Detection::new(bbox, Some(pose)))
}
