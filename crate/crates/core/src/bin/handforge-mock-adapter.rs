//! Deterministic stand-in for external detector, pose estimator and trainer
//! commands, driven by synthetic scene files.
//!
//! ```text
//! handforge-mock-adapter detect <model> <scene.json> <out>
//! handforge-mock-adapter pose   <model> <scene.json> <boxes> <out>
//! handforge-mock-adapter train  <model> <dataset>
//! handforge-mock-adapter echo   <fixture> <out>
//! handforge-mock-adapter exit   <code>
//! ```
//!
//! A scene file holds `{"scene": SceneSpec, "corruption": CorruptionSpec}`.
//! A model reference ending in a number N corrupts at 1 / (N + 1) of the
//! configured rates, so every retraining round yields a less noisy model.

use std::path::Path;
use std::process::ExitCode;

use handforge::io::{read_candidates, write_candidates};
use handforge::orchestrator::video_name;
use handforge::pose::{iou, Detection, FrameCandidates, HandPose, Keypoint};
use handforge::synth::{corrupt, generate, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type BoxError = Box<dyn std::error::Error>;

/// Splits `ckpt-2` into `("ckpt-", 2)`; no trailing number means generation 0.
fn generation(model: &str) -> (&str, u64) {
    let digits = model.len() - model.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (prefix, num) = model.split_at(model.len() - digits);
    (prefix, num.parse().unwrap_or(0))
}

fn noisy_frames(model: &str, scene_path: &str) -> Result<Vec<FrameCandidates>, BoxError> {
    let file = Scenario::load(scene_path)?;
    let (_, n) = generation(model);
    let spec = file.corruption.scaled(1.0 / (n as f64 + 1.0));
    let truth = generate(&file.scene)?;
    let (mut frames, _) = corrupt(&truth, &spec, file.scene.seed)?;
    let name = video_name(Path::new(scene_path))?;
    for f in &mut frames {
        f.image_path = format!("{name}/{:06}.png", f.frame_id);
    }
    Ok(frames)
}

fn detect(model: &str, scene: &str, out: &str) -> Result<(), BoxError> {
    let mut frames = noisy_frames(model, scene)?;
    for d in frames.iter_mut().flat_map(|f| f.detections.iter_mut()) {
        d.pose = None;
    }
    write_candidates(out, &frames)?;
    Ok(())
}

fn pose(model: &str, scene: &str, boxes: &str, out: &str) -> Result<(), BoxError> {
    let noisy = noisy_frames(model, scene)?;
    let mut frames = read_candidates(boxes)?.frames;
    for f in &mut frames {
        let reference = noisy.iter().find(|n| n.frame_id == f.frame_id);
        let mut rng = ChaCha8Rng::seed_from_u64(f.frame_id);
        for d in &mut f.detections {
            let matched = reference.and_then(|r| {
                r.detections
                    .iter()
                    .map(|c| (iou(&c.bbox, &d.bbox), c))
                    .filter(|(v, _)| *v >= 0.3)
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, c)| c.pose.clone())
            });
            d.pose = match matched {
                Some(p) => p,
                None => Some(scatter(d, f.image_width, f.image_height, &mut rng)),
            };
        }
    }
    write_candidates(out, &frames)?;
    Ok(())
}

fn scatter(d: &Detection, w: u32, h: u32, rng: &mut ChaCha8Rng) -> HandPose {
    let b = d.bbox.clipped(w, h).unwrap_or(d.bbox);
    let mut p = HandPose::empty();
    for k in p.keypoints.iter_mut() {
        *k = Keypoint::new(
            rng.random_range(b.x1..=b.x2).clamp(0.0, w as f64),
            rng.random_range(b.y1..=b.y2).clamp(0.0, h as f64),
            rng.random_range(0.2..0.6),
        );
    }
    p
}

fn train(model: &str, dataset: &str) -> Result<(), BoxError> {
    let _: serde_json::Value = serde_json::from_slice(&std::fs::read(dataset)?)?;
    let (prefix, n) = generation(model);
    let prefix = if prefix.is_empty() || prefix == model { format!("{model}-") } else { prefix.to_string() };
    println!("trained on {dataset}");
    println!("{prefix}{}", n + 1);
    Ok(())
}

fn run(args: &[String]) -> Result<u8, BoxError> {
    let a: Vec<&str> = args.iter().map(String::as_str).collect();
    match a.as_slice() {
        ["detect", model, scene, out] => detect(model, scene, out)?,
        ["pose", model, scene, boxes, out] => pose(model, scene, boxes, out)?,
        ["train", model, dataset] => train(model, dataset)?,
        ["echo", fixture, out] => {
            std::fs::copy(fixture, out)?;
        }
        ["exit", code] => {
            eprintln!("mock adapter exiting with {code}");
            return Ok(code.parse()?);
        }
        _ => return Err(format!("unrecognized arguments: {}", args.join(" ")).into()),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("handforge-mock-adapter: {e}");
            ExitCode::from(2)
        }
    }
}
