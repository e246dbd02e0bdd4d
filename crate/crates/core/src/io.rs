//! Line-delimited JSON candidate streams and rejection logs.
//!
//! One frame per line:
//!
//! ```json
//! {"frame_id":0,"timestamp_ms":0,"image":{"width":224,"height":224,"path":"f0.png"},
//!  "detections":[{"bbox":[x1,y1,x2,y2],"score":0.97,"keypoints":[[x,y,c], ...21 entries]}]}
//! ```
//!
//! A missing keypoint is `null`. Detections without a pose omit `keypoints`.
//! Filter output adds `"interpolated": true` on synthesized boxes and an
//! `"interpolated_keypoints"` index list; both are omitted when empty.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{BBox, Detection, FrameCandidates, HandPose, Keypoint, NUM_KEYPOINTS};
use crate::spatial::RejectionRecord;

#[derive(Debug, Serialize, Deserialize)]
struct ImageRecord {
    width: u32,
    height: u32,
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    bbox: [f64; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keypoints: Option<Vec<Option<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    interpolated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    interpolated_keypoints: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    frame_id: u64,
    timestamp_ms: u64,
    image: ImageRecord,
    detections: Vec<DetectionRecord>,
}

impl From<&FrameCandidates> for FrameRecord {
    fn from(f: &FrameCandidates) -> Self {
        FrameRecord {
            frame_id: f.frame_id,
            timestamp_ms: f.timestamp_ms,
            image: ImageRecord {
                width: f.image_width,
                height: f.image_height,
                path: f.image_path.clone(),
            },
            detections: f.detections.iter().map(DetectionRecord::from).collect(),
        }
    }
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        let b = d.bbox;
        let (keypoints, interpolated_keypoints) = match &d.pose {
            None => (None, Vec::new()),
            Some(p) => (
                Some(
                    p.keypoints
                        .iter()
                        .map(|k| k.valid.then(|| vec![k.x, k.y, k.confidence]))
                        .collect(),
                ),
                p.keypoints
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| k.valid && k.interpolated)
                    .map(|(j, _)| j)
                    .collect(),
            ),
        };
        DetectionRecord {
            bbox: [b.x1, b.y1, b.x2, b.y2],
            score: b.score,
            keypoints,
            interpolated: d.interpolated,
            interpolated_keypoints,
        }
    }
}

impl FrameRecord {
    fn into_frame(self) -> Result<FrameCandidates> {
        let frame_id = self.frame_id;
        let fail = |msg: String| Error::Validation(format!("frame {frame_id}: {msg}"));
        let mut detections = Vec::with_capacity(self.detections.len());
        for (i, rec) in self.detections.into_iter().enumerate() {
            let [x1, y1, x2, y2] = rec.bbox;
            let bbox = BBox {
                x1,
                y1,
                x2,
                y2,
                score: rec.score,
            };
            let pose = match rec.keypoints {
                None => None,
                Some(kps) => {
                    if kps.len() != NUM_KEYPOINTS {
                        return Err(fail(format!(
                            "detection {i} has {} keypoints, expected {NUM_KEYPOINTS}",
                            kps.len()
                        )));
                    }
                    let mut pose = HandPose::empty();
                    for (j, entry) in kps.into_iter().enumerate() {
                        let Some(v) = entry else { continue };
                        let [x, y, c] = v[..] else {
                            return Err(fail(format!(
                                "detection {i} keypoint {j} has {} values, expected [x, y, confidence]",
                                v.len()
                            )));
                        };
                        pose.keypoints[j] = Keypoint::new(x, y, c);
                    }
                    for &j in &rec.interpolated_keypoints {
                        match pose.keypoints.get_mut(j) {
                            Some(k) if k.valid => k.interpolated = true,
                            _ => {
                                return Err(fail(format!(
                                    "detection {i} lists interpolated keypoint {j} that is not present"
                                )))
                            }
                        }
                    }
                    Some(pose)
                }
            };
            detections.push(Detection {
                bbox,
                pose,
                interpolated: rec.interpolated,
            });
        }
        let frame = FrameCandidates {
            frame_id,
            timestamp_ms: self.timestamp_ms,
            image_width: self.image.width,
            image_height: self.image.height,
            image_path: self.image.path,
            detections,
        };
        frame.validate()?;
        Ok(frame)
    }
}

/// Validated frames plus the number of lines skipped as unparseable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateStream {
    pub frames: Vec<FrameCandidates>,
    pub malformed_lines: usize,
}

/// Parses a candidate stream. Unparseable lines are skipped and counted;
/// duplicate or decreasing frame ids and contract violations are hard errors.
pub fn parse_candidates(reader: impl BufRead) -> Result<CandidateStream> {
    let mut out = CandidateStream::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Validation(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping unparseable candidate line {}: {e}", lineno + 1);
                out.malformed_lines += 1;
                continue;
            }
        };
        let frame = record.into_frame()?;
        if let Some(prev) = out.frames.last() {
            if frame.frame_id == prev.frame_id {
                return Err(Error::Validation(format!("duplicate frame_id {}", frame.frame_id)));
            }
            if frame.frame_id < prev.frame_id {
                return Err(Error::Validation(format!(
                    "frame_id {} follows {}; frames must be in increasing order",
                    frame.frame_id, prev.frame_id
                )));
            }
        }
        out.frames.push(frame);
    }
    Ok(out)
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<CandidateStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_candidates(BufReader::new(file)).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_candidates_to(mut writer: impl Write, frames: &[FrameCandidates]) -> std::io::Result<()> {
    for f in frames {
        serde_json::to_writer(&mut writer, &FrameRecord::from(f))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_candidates(path: impl AsRef<Path>, frames: &[FrameCandidates]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_candidates_to(BufWriter::new(file), frames).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Validation(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(out)
}

pub fn write_rejections(path: impl AsRef<Path>, records: &[RejectionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_rejections(path: impl AsRef<Path>) -> Result<Vec<RejectionRecord>> {
    read_jsonl(path)
}
