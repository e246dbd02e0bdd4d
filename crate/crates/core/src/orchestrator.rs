//! The self-training loop: external inference, curation, dataset emission and
//! external retraining, repeated for a fixed number of iterations.
//!
//! Layout under the work directory:
//!
//! ```text
//! iter-<k>/detections-<video>.jsonl   detector output (when a pose stage follows)
//! iter-<k>/candidates-<video>.jsonl   candidate stream fed to the filters
//! iter-<k>/rejections-<video>.jsonl
//! iter-<k>/det-dataset.json, pose-dataset.json, manifest.json
//! iter-<k>/timings.json
//! iter-<k>/report.json                written last; marks the iteration complete
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FilterConfig, LoopConfig, ModelAdapter};
use crate::dataset::{emit_datasets, read_json, rejection_histogram, ManifestCounts};
use crate::error::{Error, Result};
use crate::io::{read_candidates, write_rejections, CandidateStream};
use crate::pipeline::{curate, FilterMode};
use crate::pose::FrameCandidates;
use crate::spatial::RejectionRecord;

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// Substitutes `{key}` placeholders in every whitespace-separated token.
pub fn render_command(template: &str, vars: &[(&str, &str)]) -> Vec<String> {
    template
        .split_whitespace()
        .map(|tok| {
            vars.iter()
                .fold(tok.to_string(), |t, (k, v)| t.replace(&format!("{{{k}}}"), v))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub stdout: String,
    pub stderr: String,
}

fn run_command(argv: &[String]) -> Result<CommandOutput> {
    let display = argv.join(" ");
    let Some((program, args)) = argv.split_first() else {
        return Err(Error::Adapter {
            command: display,
            exit_code: None,
            diagnostics: "empty command".into(),
        });
    };
    log::debug!("running {display}");
    let out = Command::new(program).args(args).output().map_err(|e| Error::Adapter {
        command: display.clone(),
        exit_code: None,
        diagnostics: format!("could not start: {e}"),
    })?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    if !out.status.success() {
        return Err(Error::Adapter {
            command: display,
            exit_code: out.status.code(),
            diagnostics: stderr.trim().to_string(),
        });
    }
    Ok(CommandOutput { stdout, stderr })
}

/// Video name used in artifact file names: the file stem of its source path.
pub fn video_name(video: &Path) -> Result<String> {
    video
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| Error::Validation(format!("cannot derive a video name from {}", video.display())))
}

/// Runs detector and pose inference for one video into `out_dir` and parses
/// the resulting candidate stream.
///
/// With both infer commands set, the detector writes
/// `detections-<video>.jsonl` and the pose estimator receives it as
/// `{boxes}`. With only one set, that command writes the candidates directly.
pub fn run_inference(
    detector: &ModelAdapter,
    pose: &ModelAdapter,
    video: &Path,
    out_dir: &Path,
) -> Result<(PathBuf, CandidateStream)> {
    let name = video_name(video)?;
    let video_s = video.to_string_lossy();
    let candidates = out_dir.join(format!("candidates-{name}.jsonl"));
    let cand_s = candidates.to_string_lossy().into_owned();
    match (&detector.infer_command, &pose.infer_command) {
        (Some(det), Some(pe)) => {
            let boxes = out_dir.join(format!("detections-{name}.jsonl"));
            let boxes_s = boxes.to_string_lossy().into_owned();
            run_command(&render_command(
                det,
                &[("model", &detector.model_ref), ("video", &video_s), ("out", &boxes_s)],
            ))?;
            run_command(&render_command(
                pe,
                &[
                    ("model", &pose.model_ref),
                    ("video", &video_s),
                    ("boxes", &boxes_s),
                    ("out", &cand_s),
                ],
            ))?;
        }
        (Some(cmd), None) => {
            run_command(&render_command(
                cmd,
                &[("model", &detector.model_ref), ("video", &video_s), ("out", &cand_s)],
            ))?;
        }
        (None, Some(cmd)) => {
            run_command(&render_command(
                cmd,
                &[("model", &pose.model_ref), ("video", &video_s), ("out", &cand_s)],
            ))?;
        }
        (None, None) => return Err(Error::config("detector.infer", "no inference command configured")),
    }
    let stream = read_candidates(&candidates).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("video {name}: {msg}")),
        Error::Io { path, source } => Error::Validation(format!(
            "video {name}: adapter produced no readable output at {}: {source}",
            path.display()
        )),
        other => other,
    })?;
    Ok((candidates, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub previous_ref: String,
    pub model_ref: String,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Invokes a trainer on `dataset`. The last non-empty stdout line becomes the
/// new model reference; on failure the previous reference is kept and the
/// outcome is marked degraded.
pub fn run_training(adapter: &ModelAdapter, dataset: &Path) -> Result<TrainingOutcome> {
    if !dataset.is_file() {
        return Err(Error::Validation(format!("training dataset {} does not exist", dataset.display())));
    }
    let argv = render_command(
        &adapter.train_command,
        &[("model", &adapter.model_ref), ("dataset", &dataset.to_string_lossy())],
    );
    let keep = |failure: String| {
        log::warn!("training failed, keeping {}: {failure}", adapter.model_ref);
        TrainingOutcome {
            previous_ref: adapter.model_ref.clone(),
            model_ref: adapter.model_ref.clone(),
            degraded: true,
            failure: Some(failure),
        }
    };
    match run_command(&argv) {
        Ok(out) => match out.stdout.lines().rev().map(str::trim).find(|l| !l.is_empty()) {
            Some(line) => Ok(TrainingOutcome {
                previous_ref: adapter.model_ref.clone(),
                model_ref: line.to_string(),
                degraded: false,
                failure: None,
            }),
            None => Ok(keep("trainer printed no model reference".into())),
        },
        Err(Error::Adapter { exit_code, .. }) => Ok(keep(match exit_code {
            Some(c) => format!("trainer exited with code {c}"),
            None => "trainer could not be started".into(),
        })),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video: String,
    /// Relative to the iteration directory.
    pub candidates: String,
    pub malformed_lines: usize,
    pub counts: ManifestCounts,
    pub rejections: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub videos: Vec<VideoReport>,
    pub aggregate: ManifestCounts,
    pub rejections: BTreeMap<String, usize>,
    pub detector: TrainingOutcome,
    pub pose: TrainingOutcome,
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTimings {
    pub inference_and_filter_ms: u128,
    pub training_ms: u128,
    pub total_ms: u128,
}

pub fn iteration_dir(work_dir: &Path, k: usize) -> PathBuf {
    work_dir.join(format!("iter-{k}"))
}

/// Loads the report of a completed iteration, if there is one.
pub fn load_report(work_dir: &Path, k: usize) -> Option<IterationReport> {
    let path = iteration_dir(work_dir, k).join(REPORT_FILE);
    if !path.is_file() {
        return None;
    }
    match read_json(&path) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("ignoring unreadable {}: {e}", path.display());
            None
        }
    }
}

struct VideoOutcome {
    report: VideoReport,
    frames: Vec<FrameCandidates>,
    rejections: Vec<RejectionRecord>,
}

fn process_video(
    filter: &FilterConfig,
    detector: &ModelAdapter,
    pose: &ModelAdapter,
    video: &Path,
    dir: &Path,
) -> Result<VideoOutcome> {
    let name = video_name(video)?;
    let (cand_path, stream) = run_inference(detector, pose, video, dir)?;
    let curated = curate(&stream.frames, filter, FilterMode::SpatialTemporal);
    write_rejections(dir.join(format!("rejections-{name}.jsonl")), &curated.rejections)?;
    Ok(VideoOutcome {
        report: VideoReport {
            video: name,
            candidates: cand_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            malformed_lines: stream.malformed_lines,
            counts: ManifestCounts::from_frames(stream.frames.len(), &curated.frames),
            rejections: rejection_histogram(&curated.rejections),
        },
        frames: curated.frames,
        rejections: curated.rejections,
    })
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn run_iteration(
    cfg: &LoopConfig,
    filter: &FilterConfig,
    pool: &rayon::ThreadPool,
    k: usize,
    detector: &ModelAdapter,
    pose: &ModelAdapter,
) -> Result<IterationReport> {
    let start = Instant::now();
    let dir = iteration_dir(&cfg.work_dir, k);
    if dir.exists() {
        log::info!("discarding incomplete {}", dir.display());
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let outcomes: Vec<VideoOutcome> = pool.install(|| {
        cfg.videos
            .par_iter()
            .map(|v| process_video(filter, detector, pose, Path::new(v), &dir))
            .collect::<Result<_>>()
    })?;
    let infer_done = Instant::now();

    let mut frames = Vec::new();
    let mut rejections = Vec::new();
    let mut frames_in = 0;
    let mut aggregate = ManifestCounts::default();
    let mut videos = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        frames_in += o.report.counts.frames_in;
        aggregate.add(&o.report.counts);
        frames.extend(o.frames);
        rejections.extend(o.rejections);
        videos.push(o.report);
    }
    let emitted = emit_datasets(&frames, frames_in, &rejections, filter, &dir, true)?;

    let det_outcome = run_training(detector, &emitted.detection_path)?;
    let pose_outcome = run_training(pose, &emitted.pose_path)?;
    let end = Instant::now();

    write_pretty(
        &dir.join(TIMINGS_FILE),
        &IterationTimings {
            inference_and_filter_ms: (infer_done - start).as_millis(),
            training_ms: (end - infer_done).as_millis(),
            total_ms: (end - start).as_millis(),
        },
    )?;
    let report = IterationReport {
        iteration: k,
        videos,
        aggregate,
        rejections: emitted.manifest.rejections.clone(),
        degraded: det_outcome.degraded || pose_outcome.degraded,
        detector: det_outcome,
        pose: pose_outcome,
    };
    write_pretty(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Runs (or resumes) the loop. Iterations whose report already exists are
/// loaded rather than recomputed; their resulting model references seed the
/// next iteration.
pub fn run_loop(cfg: &LoopConfig, filter: &FilterConfig) -> Result<Vec<IterationReport>> {
    cfg.validate()?;
    filter.validate()?;
    let mut names = HashSet::new();
    for v in &cfg.videos {
        let name = video_name(Path::new(v))?;
        if !names.insert(name.clone()) {
            return Err(Error::Validation(format!("two videos share the name {name}")));
        }
    }
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Validation(format!("cannot build worker pool: {e}")))?;

    let mut detector = cfg.detector.clone();
    let mut pose = cfg.pose.clone();
    let mut reports = Vec::with_capacity(cfg.iterations);
    for k in 1..=cfg.iterations {
        let report = match load_report(&cfg.work_dir, k) {
            Some(r) => {
                log::info!("iteration {k} already complete, resuming after it");
                r
            }
            None => {
                log::info!(
                    "iteration {k}: detector {}, pose {}",
                    detector.model_ref,
                    pose.model_ref
                );
                run_iteration(cfg, filter, &pool, k, &detector, &pose)?
            }
        };
        detector.model_ref = report.detector.model_ref.clone();
        pose.model_ref = report.pose.model_ref.clone();
        reports.push(report);
    }
    Ok(reports)
}
