//! Cross-frame consistency: detections are chained into tracks, jumps faster
//! than `t_vmax` are removed, and short gaps are filled by linear
//! interpolation in frame index.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::FilterConfig;
use crate::pose::{iou_in_image, BBox, Detection, FrameCandidates, HandPose, Keypoint, NUM_KEYPOINTS};
use crate::spatial::{count_tagged, RejectionReason, RejectionRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub detection: Detection,
    /// Index in the input frame; `None` for interpolated observations.
    pub source_index: Option<usize>,
}

/// One hand followed across frames, keyed by frame id.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: usize,
    pub observations: BTreeMap<u64, Observation>,
}

impl Track {
    fn last(&self) -> (u64, &Observation) {
        let (f, o) = self
            .observations
            .last_key_value()
            .expect("tracks are created with one observation");
        (*f, o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalResult {
    /// Surviving frames in input order.
    pub frames: Vec<FrameCandidates>,
    pub rejections: Vec<RejectionRecord>,
}

/// Greedy frame-to-frame association.
///
/// A track can absorb a detection while its last observation is at most
/// `interp_max_gap + 1` frames back. Pairs are taken in order of decreasing
/// IoU (boxes clipped to the image), then increasing center distance. Pairs
/// below `assoc_iou_min` are rejected, except when a single hand is expected,
/// in which case detections chain into one track per contiguous run.
pub fn associate(frames: &[FrameCandidates], cfg: &FilterConfig) -> Vec<Track> {
    let window = cfg.interp_max_gap as u64 + 1;
    let floor = (cfg.s_count > 1).then_some(cfg.assoc_iou_min);
    let mut tracks: Vec<Track> = Vec::new();

    for frame in frames {
        let fid = frame.frame_id;
        let active: Vec<usize> = tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let (last, _) = t.last();
                last < fid && fid - last <= window
            })
            .map(|(i, _)| i)
            .collect();

        let mut pairs = Vec::new();
        for &ti in &active {
            let prev = &tracks[ti].last().1.detection.bbox;
            let (pcx, pcy) = prev.center();
            for (di, det) in frame.detections.iter().enumerate() {
                let overlap = iou_in_image(prev, &det.bbox, frame.image_width, frame.image_height);
                if floor.is_some_and(|f| overlap < f) {
                    continue;
                }
                let (cx, cy) = det.bbox.center();
                pairs.push((ti, di, overlap, (cx - pcx).hypot(cy - pcy)));
            }
        }
        pairs.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then(a.3.total_cmp(&b.3))
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });

        let mut track_taken = vec![false; tracks.len()];
        let mut det_taken = vec![false; frame.detections.len()];
        for (ti, di, _, _) in pairs {
            if track_taken[ti] || det_taken[di] {
                continue;
            }
            track_taken[ti] = true;
            det_taken[di] = true;
            tracks[ti].observations.insert(
                fid,
                Observation {
                    detection: frame.detections[di].clone(),
                    source_index: Some(di),
                },
            );
        }
        for (di, det) in frame.detections.iter().enumerate() {
            if det_taken[di] {
                continue;
            }
            let mut observations = BTreeMap::new();
            observations.insert(
                fid,
                Observation {
                    detection: det.clone(),
                    source_index: Some(di),
                },
            );
            tracks.push(Track {
                track_id: tracks.len(),
                observations,
            });
        }
    }
    tracks
}

/// Removes detections whose box corners jump faster than `t_vmax` and
/// invalidates individual joints that do. Velocities across gaps are
/// displacement divided by the frame gap.
pub fn velocity_check(track: &Track, cfg: &FilterConfig) -> (Track, Vec<RejectionRecord>) {
    let mut rejections = Vec::new();
    let mut kept: BTreeMap<u64, Observation> = BTreeMap::new();
    let mut prev: Option<(u64, Detection)> = None;

    for (&fid, obs) in &track.observations {
        let mut obs = obs.clone();
        if let Some((pf, pd)) = &prev {
            let gap = (fid - pf) as f64;
            let corner_speed = pd
                .bbox
                .corners()
                .iter()
                .zip(obs.detection.bbox.corners())
                .map(|(a, b)| (b.0 - a.0).hypot(b.1 - a.1) / gap)
                .fold(0.0, f64::max);
            if corner_speed > cfg.t_vmax {
                rejections.push(RejectionRecord {
                    frame_id: fid,
                    detection_index: obs.source_index,
                    reason: RejectionReason::CornerVelocity,
                    measured_value: corner_speed,
                    threshold: cfg.t_vmax,
                });
                continue;
            }
            if let (Some(pp), Some(cp)) = (pd.pose.as_ref(), obs.detection.pose.as_mut()) {
                for (j, (a, b)) in pp.keypoints.iter().zip(cp.keypoints.iter_mut()).enumerate() {
                    let (Some(pa), Some(pb)) = (a.position(), b.position()) else {
                        continue;
                    };
                    let speed = (pb.0 - pa.0).hypot(pb.1 - pa.1) / gap;
                    if speed > cfg.t_vmax {
                        b.invalidate();
                        rejections.push(RejectionRecord {
                            frame_id: fid,
                            detection_index: obs.source_index,
                            reason: RejectionReason::KeypointVelocity { keypoint: j },
                            measured_value: speed,
                            threshold: cfg.t_vmax,
                        });
                    }
                }
            }
        }
        prev = Some((fid, obs.detection.clone()));
        kept.insert(fid, obs);
    }

    (
        Track {
            track_id: track.track_id,
            observations: kept,
        },
        rejections,
    )
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Fills every box corner and keypoint that is missing on at most `max_gap`
/// consecutive frames between two valid anchors. Never extrapolates.
pub fn interpolate(track: &Track, max_gap: usize) -> Track {
    let max_gap = max_gap as u64;
    let mut obs = track.observations.clone();

    // whole missing detections: corners interpolated independently
    let ids: Vec<u64> = obs.keys().copied().collect();
    for w in ids.windows(2) {
        let (fa, fb) = (w[0], w[1]);
        let missing = fb - fa - 1;
        if missing == 0 || missing > max_gap {
            continue;
        }
        let (a, b) = (&obs[&fa].detection, &obs[&fb].detection);
        let (ba, bb) = (a.bbox, b.bbox);
        let with_pose = a.pose.is_some() || b.pose.is_some();
        let span = (fb - fa) as f64;
        let fills: Vec<(u64, Observation)> = (fa + 1..fb)
            .map(|f| {
                let t = (f - fa) as f64 / span;
                let bbox = BBox {
                    x1: lerp(ba.x1, bb.x1, t),
                    y1: lerp(ba.y1, bb.y1, t),
                    x2: lerp(ba.x2, bb.x2, t),
                    y2: lerp(ba.y2, bb.y2, t),
                    score: ba.score.min(bb.score),
                };
                let detection = Detection {
                    bbox,
                    pose: with_pose.then(HandPose::empty),
                    interpolated: true,
                };
                (
                    f,
                    Observation {
                        detection,
                        source_index: None,
                    },
                )
            })
            .collect();
        obs.extend(fills);
    }

    // keypoints, per slot, across observed and newly created detections
    let ids: Vec<u64> = obs.keys().copied().collect();
    for j in 0..NUM_KEYPOINTS {
        let anchors: Vec<(u64, Keypoint)> = ids
            .iter()
            .filter_map(|f| {
                let kp = obs[f].detection.pose.as_ref()?.keypoints[j];
                kp.valid.then_some((*f, kp))
            })
            .collect();
        for w in anchors.windows(2) {
            let ((fa, ka), (fb, kb)) = (w[0], w[1]);
            let missing = fb - fa - 1;
            if missing == 0 || missing > max_gap {
                continue;
            }
            let span = (fb - fa) as f64;
            for f in fa + 1..fb {
                // a keypoint gap can never be shorter than the detection gap it spans
                let Some(o) = obs.get_mut(&f) else { continue };
                let t = (f - fa) as f64 / span;
                let pose = o.detection.pose.get_or_insert_with(HandPose::empty);
                pose.keypoints[j] = Keypoint {
                    x: lerp(ka.x, kb.x, t),
                    y: lerp(ka.y, kb.y, t),
                    confidence: ka.confidence.min(kb.confidence),
                    valid: true,
                    interpolated: true,
                };
            }
        }
    }

    for o in obs.values_mut() {
        if o.detection.interpolated && o.detection.pose.as_ref().is_some_and(|p| p.valid_count() == 0) {
            o.detection.pose = None;
        }
    }

    Track {
        track_id: track.track_id,
        observations: obs,
    }
}

/// Associates, velocity-checks and interpolates a spatially filtered sequence,
/// then re-emits frames. Input frames with no detections act as placeholders
/// whose slots interpolation may fill. Frames left with fewer than `s_count`
/// detections are dropped; a frame-undercount record is written only for
/// frames that arrived non-empty.
/// Output ordering key within a frame.
type SlotKey = (u8, usize);

pub fn temporal_filter(frames: &[FrameCandidates], cfg: &FilterConfig) -> TemporalResult {
    let tracks = associate(frames, cfg);
    let processed: Vec<(Track, Vec<RejectionRecord>)> = tracks
        .par_iter()
        .map(|t| {
            let (checked, recs) = velocity_check(t, cfg);
            (interpolate(&checked, cfg.interp_max_gap), recs)
        })
        .collect();

    // (observed first by source index, then interpolated by track id)
    let mut per_frame: BTreeMap<u64, Vec<(SlotKey, Detection)>> = BTreeMap::new();
    let mut rejections = Vec::new();
    for (track, recs) in processed {
        rejections.extend(recs);
        for (fid, o) in track.observations {
            let key = match o.source_index {
                Some(i) => (0, i),
                None => (1, track.track_id),
            };
            per_frame.entry(fid).or_default().push((key, o.detection));
        }
    }

    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut dets = per_frame.remove(&frame.frame_id).unwrap_or_default();
        dets.sort_by_key(|(k, _)| *k);
        let tagged: Vec<(usize, Detection)> = dets.into_iter().map(|(_, d)| d).enumerate().collect();
        let n = tagged.len();
        if n < cfg.s_count {
            if !frame.detections.is_empty() {
                rejections.push(RejectionRecord {
                    frame_id: frame.frame_id,
                    detection_index: None,
                    reason: RejectionReason::FrameUndercount,
                    measured_value: n as f64,
                    threshold: cfg.s_count as f64,
                });
            }
            continue;
        }
        if let Some(kept) = count_tagged(frame.frame_id, tagged, cfg, &mut rejections) {
            out.push(FrameCandidates {
                detections: kept.into_iter().map(|(_, d)| d).collect(),
                ..frame.shell()
            });
        }
    }
    rejections.sort_by_key(|r| r.frame_id);

    TemporalResult {
        frames: out,
        rejections,
    }
}
