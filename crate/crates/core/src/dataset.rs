//! Emission of the two curated retraining datasets and their manifest.
//!
//! Both datasets use the images / annotations / categories layout common to
//! detection and keypoint trainers. Keypoint visibility flags: 0 missing,
//! 1 interpolated, 2 observed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::FilterConfig;
use crate::error::{Error, Result};
use crate::pose::{FrameCandidates, NUM_KEYPOINTS};
use crate::spatial::RejectionRecord;

pub const DETECTION_DATASET_FILE: &str = "det-dataset.json";
pub const POSE_DATASET_FILE: &str = "pose-dataset.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORCE_ENV: &str = "HANDFORGE_FORCE";

pub const HAND_CATEGORY_ID: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAnnotation {
    pub id: u64,
    pub image_id: u64,
    /// `[x, y, width, height]`
    pub bbox: [f64; 4],
    pub category_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub category_id: u64,
    pub score: f64,
    /// 21 x `[x, y, v]`, flattened.
    pub keypoints: Vec<f64>,
    pub num_keypoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDataset {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<DetectionAnnotation>,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDataset {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<PoseAnnotation>,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub frames_in: usize,
    pub frames_kept: usize,
    pub detections_kept: usize,
    pub keypoints_observed: usize,
    pub keypoints_interpolated: usize,
}

impl ManifestCounts {
    pub fn from_frames(frames_in: usize, kept: &[FrameCandidates]) -> Self {
        let mut c = ManifestCounts {
            frames_in,
            frames_kept: kept.len(),
            ..Default::default()
        };
        for det in kept.iter().flat_map(|f| &f.detections) {
            c.detections_kept += 1;
            if let Some(p) = &det.pose {
                for k in p.keypoints.iter().filter(|k| k.valid) {
                    if k.interpolated {
                        c.keypoints_interpolated += 1;
                    } else {
                        c.keypoints_observed += 1;
                    }
                }
            }
        }
        c
    }

    pub fn add(&mut self, other: &ManifestCounts) {
        self.frames_in += other.frames_in;
        self.frames_kept += other.frames_kept;
        self.detections_kept += other.detections_kept;
        self.keypoints_observed += other.keypoints_observed;
        self.keypoints_interpolated += other.keypoints_interpolated;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub counts: ManifestCounts,
    /// Count of rejection records per reason name.
    pub rejections: BTreeMap<String, usize>,
    /// Dropped frames are not shipped as negative images.
    pub dropped_frames_as_negatives: bool,
    pub detection_dataset: String,
    pub pose_dataset: String,
    pub config: FilterConfig,
}

pub fn rejection_histogram(records: &[RejectionRecord]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.reason.name().to_string()).or_insert(0) += 1;
    }
    h
}

fn categories() -> Vec<Category> {
    vec![Category {
        id: HAND_CATEGORY_ID,
        name: "hand".into(),
    }]
}

/// Builds both datasets in memory. Image ids follow input order (starting at
/// 1); annotation ids follow (frame, detection index).
pub fn build_datasets(frames: &[FrameCandidates]) -> (DetectionDataset, PoseDataset) {
    let mut images = Vec::with_capacity(frames.len());
    let mut det_anns = Vec::new();
    let mut pose_anns = Vec::new();
    let mut next_ann = 1u64;
    for (i, f) in frames.iter().enumerate() {
        let image_id = i as u64 + 1;
        images.push(ImageEntry {
            id: image_id,
            file_name: f.image_path.clone(),
            width: f.image_width,
            height: f.image_height,
        });
        for det in &f.detections {
            let b = det.bbox;
            let bbox = [b.x1, b.y1, b.width(), b.height()];
            let mut keypoints = Vec::with_capacity(NUM_KEYPOINTS * 3);
            let mut num_keypoints = 0;
            for j in 0..NUM_KEYPOINTS {
                match det.pose.as_ref().map(|p| p.keypoints[j]) {
                    Some(k) if k.valid => {
                        num_keypoints += 1;
                        keypoints.extend([k.x, k.y, if k.interpolated { 1.0 } else { 2.0 }]);
                    }
                    _ => keypoints.extend([0.0, 0.0, 0.0]),
                }
            }
            det_anns.push(DetectionAnnotation {
                id: next_ann,
                image_id,
                bbox,
                category_id: HAND_CATEGORY_ID,
                score: b.score,
            });
            pose_anns.push(PoseAnnotation {
                id: next_ann,
                image_id,
                bbox,
                category_id: HAND_CATEGORY_ID,
                score: b.score,
                keypoints,
                num_keypoints,
            });
            next_ann += 1;
        }
    }
    (
        DetectionDataset {
            images: images.clone(),
            annotations: det_anns,
            categories: categories(),
        },
        PoseDataset {
            images,
            annotations: pose_anns,
            categories: categories(),
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedDatasets {
    pub detection_path: PathBuf,
    pub pose_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

pub fn force_from_env() -> bool {
    std::env::var(FORCE_ENV).is_ok_and(|v| v == "1")
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let bytes = if pretty {
        serde_json::to_vec_pretty(value)
    } else {
        serde_json::to_vec(value)
    }
    .map_err(|e| Error::io(path, e.into()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Writes `det-dataset.json`, `pose-dataset.json` and `manifest.json` into
/// `out_dir`. An existing manifest is only replaced when `force` is set or
/// `HANDFORGE_FORCE=1`.
pub fn emit_datasets(
    frames: &[FrameCandidates],
    frames_in: usize,
    rejections: &[RejectionRecord],
    cfg: &FilterConfig,
    out_dir: impl AsRef<Path>,
    force: bool,
) -> Result<EmittedDatasets> {
    let out_dir = out_dir.as_ref();
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !(force || force_from_env()) {
        return Err(Error::WouldOverwrite(manifest_path));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (det, pose) = build_datasets(frames);
    let detection_path = out_dir.join(DETECTION_DATASET_FILE);
    let pose_path = out_dir.join(POSE_DATASET_FILE);
    write_json(&detection_path, &det, false)?;
    write_json(&pose_path, &pose, false)?;

    let manifest = Manifest {
        counts: ManifestCounts::from_frames(frames_in, frames),
        rejections: rejection_histogram(rejections),
        dropped_frames_as_negatives: false,
        detection_dataset: DETECTION_DATASET_FILE.into(),
        pose_dataset: POSE_DATASET_FILE.into(),
        config: cfg.clone(),
    };
    write_json(&manifest_path, &manifest, true)?;
    Ok(EmittedDatasets {
        detection_path,
        pose_path,
        manifest_path,
        manifest,
    })
}
