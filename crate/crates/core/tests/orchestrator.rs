use std::fs;
use std::path::{Path, PathBuf};

use handforge::config::{FilterConfig, LoopConfig, ModelAdapter};
use handforge::io::write_candidates;
use handforge::orchestrator::{run_inference, run_loop, run_training, iteration_dir, REPORT_FILE, TIMINGS_FILE};
use handforge::synth::{generate, Motion, SceneSpec};
use handforge::Error;

const MOCK: &str = env!("CARGO_BIN_EXE_handforge-mock-adapter");

fn fixture(dir: &Path) -> PathBuf {
    let frames = generate(&SceneSpec {
        n_hands: 1,
        image_width: 300,
        image_height: 300,
        motion: Motion::Static,
        n_frames: 20,
        base_hand_scale: 25.0,
        seed: 3,
        bone_ratios: Default::default(),
    })
    .unwrap();
    let path = dir.join("fixture.jsonl");
    write_candidates(&path, &frames).unwrap();
    path
}

fn echo_adapter(fixture: &Path, train: &str) -> ModelAdapter {
    ModelAdapter {
        infer_command: Some(format!("{MOCK} echo {} {{out}}", fixture.display())),
        train_command: train.to_string(),
        model_ref: "ckpt-1".into(),
    }
}

fn no_infer(train: &str) -> ModelAdapter {
    ModelAdapter {
        infer_command: None,
        train_command: train.to_string(),
        model_ref: "pose-1".into(),
    }
}

#[test]
fn echo_adapter_passes_candidates_through() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let det = echo_adapter(&fx, "unused");
    let (path, stream) = run_inference(&det, &no_infer("unused"), Path::new("clips/cam0.mp4"), tmp.path()).unwrap();
    assert_eq!(path, tmp.path().join("candidates-cam0.jsonl"));
    assert_eq!(stream.frames.len(), 20);
    assert_eq!(fs::read(&path).unwrap(), fs::read(&fx).unwrap());
}

#[test]
fn failing_inference_reports_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let det = ModelAdapter {
        infer_command: Some(format!("{MOCK} exit 1")),
        train_command: "unused".into(),
        model_ref: "m".into(),
    };
    match run_inference(&det, &no_infer("unused"), Path::new("v.mp4"), tmp.path()) {
        Err(Error::Adapter { exit_code, diagnostics, .. }) => {
            assert_eq!(exit_code, Some(1));
            assert!(diagnostics.contains("exiting with 1"), "{diagnostics}");
        }
        other => panic!("expected adapter error, got {other:?}"),
    }
}

#[test]
fn wrong_keypoint_count_is_a_hard_error_naming_video_and_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let text = fs::read_to_string(&fx).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[4]["detections"][0]["keypoints"].as_array_mut().unwrap().truncate(19);
    let bad = tmp.path().join("bad.jsonl");
    let body: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(&bad, body.join("\n") + "\n").unwrap();

    let det = echo_adapter(&bad, "unused");
    let err = run_inference(&det, &no_infer("unused"), Path::new("cam7.mp4"), tmp.path()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Validation(_)), "{msg}");
    assert!(msg.contains("cam7") && msg.contains("frame 4") && msg.contains("19"), "{msg}");
}

#[test]
fn trainer_failure_keeps_previous_model() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("d.json");
    fs::write(&dataset, "{}").unwrap();
    let out = run_training(&no_infer(&format!("{MOCK} exit 4")), &dataset).unwrap();
    assert!(out.degraded);
    assert_eq!(out.model_ref, "pose-1");
    assert!(out.failure.unwrap().contains('4'));

    let out = run_training(&no_infer(&format!("{MOCK} train {{model}} {{dataset}}")), &dataset).unwrap();
    assert!(!out.degraded);
    assert_eq!((out.previous_ref.as_str(), out.model_ref.as_str()), ("pose-1", "pose-2"));
}

#[test]
fn loop_records_lineage_and_degraded_iterations() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let cfg = LoopConfig {
        iterations: 2,
        work_dir: tmp.path().join("work"),
        videos: vec![fx.to_string_lossy().into_owned()],
        detector: echo_adapter(&fx, &format!("{MOCK} train {{model}} {{dataset}}")),
        pose: no_infer(&format!("{MOCK} exit 9")),
        workers: 1,
    };
    let filter = FilterConfig {
        s_bone: 25.0,
        ..FilterConfig::hanco()
    };
    let reports = run_loop(&cfg, &filter).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].detector.model_ref, "ckpt-2");
    assert_eq!(reports[1].detector.previous_ref, "ckpt-2");
    assert_eq!(reports[1].detector.model_ref, "ckpt-3");
    assert!(reports.iter().all(|r| r.degraded && r.pose.model_ref == "pose-1"));
    assert_eq!(reports[0].aggregate.frames_kept, 20);
    for k in 1..=2 {
        let dir = iteration_dir(&cfg.work_dir, k);
        assert!(dir.join(REPORT_FILE).is_file());
        assert!(dir.join(TIMINGS_FILE).is_file());
    }
}

#[test]
fn duplicate_video_names_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture(tmp.path());
    let cfg = LoopConfig {
        iterations: 1,
        work_dir: tmp.path().join("work"),
        videos: vec!["a/cam.mp4".into(), "b/cam.mp4".into()],
        detector: echo_adapter(&fx, "unused"),
        pose: no_infer("unused"),
        workers: 1,
    };
    let err = run_loop(&cfg, &FilterConfig::hanco()).unwrap_err();
    assert!(err.to_string().contains("cam"), "{err}");
}
