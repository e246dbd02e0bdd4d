//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use handforge::config::{parse_config, parse_config_str, FilterConfig, LoopConfig, ModelAdapter};
use handforge::dataset::{build_datasets, read_json, DetectionDataset, PoseDataset};
use handforge::io::{parse_candidates, write_candidates_to};
use handforge::metrics::{
    auc, default_auc_grid, match_detections, pck, precision_recall, BoxFrame, PosePair,
};
use handforge::orchestrator::{run_loop, IterationReport};
use handforge::pipeline::{curate, FilterMode};
use handforge::pose::{iou, BBox, Detection, FrameCandidates, HandPose, Keypoint, BONES, NUM_KEYPOINTS};
use handforge::spatial::{spatial_filter, RejectionReason};
use handforge::synth::{corrupt, generate, ConfidenceModel, CorruptionEvent, CorruptionSpec, Motion, SceneSpec};
use handforge::temporal::temporal_filter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// ---------------------------------------------------------------- config

fn config_fidelity() -> Outcome {
    let hanco = parse_config(configs_dir().join("hanco.cfg")).map_err(|e| e.to_string())?.filter;
    let assembly = parse_config(configs_dir().join("assembly.cfg")).map_err(|e| e.to_string())?.filter;
    let row = |c: &FilterConfig| (c.s_bone, c.s_area_max, c.s_area_min, c.s_count, c.t_vmax);
    ensure(row(&hanco) == (50.0, 0.75, 0.15, 1, 25.0), || format!("hanco row {:?}", row(&hanco)))?;
    ensure(row(&assembly) == (80.0, 0.80, 0.05, 2, 45.0), || format!("assembly row {:?}", row(&assembly)))?;
    ensure(hanco == FilterConfig::hanco() && assembly == FilterConfig::assembly(), || {
        "parsed files differ from built-in presets".into()
    })?;
    Ok(format!("hanco {:?}, assembly {:?}", row(&hanco), row(&assembly)))
}

// ---------------------------------------------------------------- spatial oracle

/// Definitional re-statement of every spatial rule.
fn reference_spatial(
    frame: &FrameCandidates,
    cfg: &FilterConfig,
) -> (Option<FrameCandidates>, BTreeSet<(Option<usize>, &'static str)>) {
    let mut rejected = BTreeSet::new();
    let mut kept: Vec<(usize, Detection)> = Vec::new();
    let (w, h) = (frame.image_width as f64, frame.image_height as f64);
    'det: for (i, det) in frame.detections.iter().enumerate() {
        if det.bbox.score < cfg.c_hd {
            rejected.insert((Some(i), "low-detection-confidence"));
            continue;
        }
        let Some(pose) = &det.pose else {
            rejected.insert((Some(i), "low-pose-score"));
            continue;
        };
        let confs: Vec<f64> = pose.keypoints.iter().filter(|k| k.valid).map(|k| k.confidence).collect();
        let score = if confs.is_empty() { 0.0 } else { confs.iter().sum::<f64>() / confs.len() as f64 };
        if score < cfg.c_pe {
            rejected.insert((Some(i), "low-pose-score"));
            continue;
        }
        let mut pose = pose.clone();
        for k in pose.keypoints.iter_mut() {
            if k.valid && k.confidence < cfg.c_pe {
                *k = Keypoint::MISSING;
            }
        }
        for (b, &(p, c)) in BONES.iter().enumerate() {
            let (kp, kc) = (pose.keypoints[p], pose.keypoints[c]);
            if kp.valid && kc.valid {
                let len = ((kp.x - kc.x).powi(2) + (kp.y - kc.y).powi(2)).sqrt();
                if len > cfg.s_bone * cfg.bone_ratios.0[b] * cfg.slack {
                    rejected.insert((Some(i), "bone-too-long"));
                    continue 'det;
                }
            }
        }
        let ix = (det.bbox.x2.min(w) - det.bbox.x1.max(0.0)).max(0.0);
        let iy = (det.bbox.y2.min(h) - det.bbox.y1.max(0.0)).max(0.0);
        let frac = ix * iy / (w * h);
        if frac > cfg.s_area_max {
            rejected.insert((Some(i), "area-too-large"));
            continue;
        }
        if frac < cfg.s_area_min {
            rejected.insert((Some(i), "area-too-small"));
            continue;
        }
        kept.push((i, Detection { pose: Some(pose), ..det.clone() }));
    }
    if kept.len() < cfg.s_count {
        rejected.insert((None, "frame-undercount"));
        return (None, rejected);
    }
    let mut by_score: Vec<usize> = (0..kept.len()).collect();
    by_score.sort_by(|&a, &b| {
        kept[b].1.bbox.score.partial_cmp(&kept[a].1.bbox.score).unwrap().then(kept[a].0.cmp(&kept[b].0))
    });
    let winners: HashSet<usize> = by_score.iter().take(cfg.s_count).map(|&p| kept[p].0).collect();
    let mut dets = Vec::new();
    for (i, d) in kept {
        if winners.contains(&i) {
            dets.push(d);
        } else {
            rejected.insert((Some(i), "excess-hand"));
        }
    }
    (Some(FrameCandidates { detections: dets, ..frame.shell() }), rejected)
}

fn random_hand(rng: &mut ChaCha8Rng, cfg: &FilterConfig, w: f64, h: f64) -> Detection {
    let mut pts = [(0.0, 0.0); NUM_KEYPOINTS];
    pts[0] = (rng.random_range(0.2 * w..0.8 * w), rng.random_range(0.4 * h..0.95 * h));
    let theta: f64 = rng.random_range(-2.0..-1.1);
    for (b, &(p, c)) in BONES.iter().enumerate() {
        let finger = b / 4;
        let angle = theta + (finger as f64 - 2.0) * 0.25 + rng.random_range(-0.1..0.1);
        let len = cfg.s_bone * cfg.bone_ratios.0[b] * rng.random_range(0.6..1.17);
        let (px, py) = pts[p];
        pts[c] = ((px + len * angle.cos()).clamp(0.0, w), (py + len * angle.sin()).clamp(0.0, h));
    }
    let mut pose = HandPose::empty();
    for (k, &(x, y)) in pose.keypoints.iter_mut().zip(&pts) {
        if rng.random_bool(0.05) {
            continue;
        }
        *k = Keypoint::new(x, y, rng.random_range(0.0..1.0f64).max(rng.random_range(0.0..1.0)));
    }
    let xs = pts.iter().map(|p| p.0);
    let ys = pts.iter().map(|p| p.1);
    let pad = rng.random_range(0.0..40.0);
    let (x1, x2) = (xs.clone().fold(f64::MAX, f64::min) - pad, xs.fold(f64::MIN, f64::max) + pad);
    let (y1, y2) = (ys.clone().fold(f64::MAX, f64::min) - pad, ys.fold(f64::MIN, f64::max) + pad);
    let bbox = if rng.random_bool(0.15) {
        let bw = rng.random_range(5.0..w * 1.1);
        let bh = rng.random_range(5.0..h * 1.1);
        let bx = rng.random_range(-0.2 * w..w);
        let by = rng.random_range(-0.2 * h..h);
        BBox::new(bx, by, bx + bw, by + bh, rng.random()).unwrap()
    } else {
        BBox::new(x1, y1, x2 + 1.0, y2 + 1.0, rng.random()).unwrap()
    };
    Detection::new(bbox, if rng.random_bool(0.05) { None } else { Some(pose) })
}

fn filter_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let sizes = [(224u32, 224u32), (640, 480), (1280, 720)];
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    let mut kept_frames = 0;
    for fid in 0..1000u64 {
        let (iw, ih) = sizes[rng.random_range(0..sizes.len())];
        let scale = iw.min(ih) as f64 / 224.0;
        let cfg = FilterConfig {
            s_bone: rng.random_range(12.0..30.0) * scale,
            s_area_max: rng.random_range(0.3..0.9),
            s_area_min: rng.random_range(0.0..0.15),
            s_count: rng.random_range(1..=3),
            c_hd: rng.random_range(0.0..0.5),
            c_pe: rng.random_range(0.0..0.5),
            ..FilterConfig::hanco()
        };
        let n = rng.random_range(0..=5);
        let frame = FrameCandidates {
            frame_id: fid,
            timestamp_ms: fid * 33,
            image_width: iw,
            image_height: ih,
            image_path: format!("{fid}.png"),
            detections: (0..n).map(|_| random_hand(&mut rng, &cfg, iw as f64, ih as f64)).collect(),
        };
        let got = spatial_filter(&frame, &cfg);
        let (want_frame, want_rej) = reference_spatial(&frame, &cfg);
        let got_rej: BTreeSet<(Option<usize>, &str)> =
            got.rejections.iter().map(|r| (r.detection_index, r.reason.name())).collect();
        ensure(got.frame == want_frame, || format!("frame {fid}: kept detections differ"))?;
        ensure(got_rej == want_rej, || format!("frame {fid}: rejections {got_rej:?} vs {want_rej:?}"))?;
        ensure(got.rejections.len() == want_rej.len(), || format!("frame {fid}: duplicate records"))?;
        for (_, r) in &want_rej {
            *reasons.entry(r).or_default() += 1;
        }
        kept_frames += want_frame.is_some() as usize;
    }
    ensure(reasons.len() == 7, || format!("not every rule exercised: {reasons:?}"))?;
    Ok(format!("0 mismatches over 1000 frames ({kept_frames} kept; {reasons:?})"))
}

// ---------------------------------------------------------------- interpolation

fn interp_cfg() -> FilterConfig {
    FilterConfig {
        s_count: 1,
        t_vmax: 25.0,
        ..FilterConfig::hanco()
    }
}

fn linear_truth(seed: u64, n_frames: usize) -> Vec<FrameCandidates> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate(&SceneSpec {
        n_hands: 1,
        image_width: 640,
        image_height: 480,
        motion: Motion::Linear {
            vx: rng.random_range(-2.0..2.0),
            vy: rng.random_range(-1.5..1.5),
        },
        n_frames,
        base_hand_scale: 20.0,
        seed,
        bone_ratios: Default::default(),
    })
    .unwrap()
}

fn same_position(a: &Detection, b: &Detection) -> f64 {
    let mut err: f64 = 0.0;
    for (p, q) in a.bbox.corners().iter().zip(b.bbox.corners()) {
        err = err.max((p.0 - q.0).abs()).max((p.1 - q.1).abs());
    }
    if let (Some(pa), Some(pb)) = (&a.pose, &b.pose) {
        for (k, l) in pa.keypoints.iter().zip(&pb.keypoints) {
            if !(k.valid && l.valid) {
                return f64::INFINITY;
            }
            err = err.max((k.x - l.x).abs()).max((k.y - l.y).abs());
        }
    }
    err
}

fn interpolation_exactness() -> Outcome {
    let cfg = interp_cfg();
    let mut max_err: f64 = 0.0;
    let mut filled_frames = 0;
    let mut filled_keypoints = 0;
    for seed in 0..40u64 {
        let truth = linear_truth(seed, 120);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut input = truth.clone();
        // whole-detection dropouts of length 1..=5, separated by observed frames
        let mut t = 2;
        while t < 110 {
            let len = rng.random_range(1..=5);
            for f in &mut input[t..t + len] {
                f.detections.clear();
            }
            filled_frames += len;
            t += len + rng.random_range(2..8);
        }
        // keypoint-level dropouts on observed frames
        for _ in 0..10 {
            let j = rng.random_range(0..NUM_KEYPOINTS);
            let start = rng.random_range(1..110);
            let len = rng.random_range(1..=5);
            if (start - 1..start + len + 1).all(|f| !input[f].detections.is_empty()) {
                for f in &mut input[start..start + len] {
                    f.detections[0].pose.as_mut().unwrap().keypoints[j].invalidate();
                }
                filled_keypoints += len;
            }
        }
        let out = temporal_filter(&input, &cfg);
        ensure(out.rejections.is_empty(), || format!("seed {seed}: unexpected rejections"))?;
        ensure(out.frames.len() == truth.len(), || format!("seed {seed}: {} frames out", out.frames.len()))?;
        for (o, t) in out.frames.iter().zip(&truth) {
            let e = same_position(&o.detections[0], &t.detections[0]);
            ensure(e < 1e-9, || format!("seed {seed} frame {}: error {e}", t.frame_id))?;
            max_err = max_err.max(e);
        }
    }

    // gaps of 6 stay unfilled
    let truth = linear_truth(77, 40);
    let mut input = truth.clone();
    for f in &mut input[10..16] {
        f.detections.clear();
    }
    for f in &mut input[20..26] {
        f.detections[0].pose.as_mut().unwrap().keypoints[8].invalidate();
    }
    let out = temporal_filter(&input, &cfg);
    let ids: HashSet<u64> = out.frames.iter().map(|f| f.frame_id).collect();
    ensure((10..16).all(|f| !ids.contains(&f)), || "6-frame detection gap was filled".into())?;
    for f in out.frames.iter().filter(|f| (20..26).contains(&f.frame_id)) {
        ensure(!f.detections[0].pose.as_ref().unwrap().keypoints[8].valid, || {
            "6-frame keypoint gap was filled".into()
        })?;
    }
    Ok(format!(
        "max error {max_err:.2e} px over {filled_frames} filled frames and {filled_keypoints} filled keypoints; 6-frame gaps untouched"
    ))
}

// ---------------------------------------------------------------- outliers

fn outlier_removal() -> Outcome {
    let cfg = FilterConfig::hanco();
    let scene = SceneSpec {
        n_hands: 1,
        image_width: 640,
        image_height: 480,
        motion: Motion::Sinusoidal {
            amplitude_x: 60.0,
            amplitude_y: 30.0,
            period_frames: 150.0,
        },
        n_frames: 10_000,
        base_hand_scale: 20.0,
        seed: 4242,
        bone_ratios: Default::default(),
    };
    let truth = generate(&scene).map_err(|e| e.to_string())?;
    let spec = CorruptionSpec {
        keypoint_jitter_sigma: 1.0,
        outlier_rate: 0.01,
        outlier_magnitude: 3.0 * cfg.t_vmax,
        isolated_outliers: true,
        confidence_model: ConfidenceModel { clean_base: 0.95, k: 0.5 },
        ..Default::default()
    };
    let (noisy, ledger) = corrupt(&truth, &spec, scene.seed).map_err(|e| e.to_string())?;
    let outliers: HashSet<(u64, usize)> = ledger
        .iter()
        .filter_map(|e| match *e {
            CorruptionEvent::Outlier { frame_id, keypoint, .. } => Some((frame_id, keypoint)),
            _ => None,
        })
        .collect();
    let out = temporal_filter(&noisy, &cfg);
    let by_id: BTreeMap<u64, &FrameCandidates> = out.frames.iter().map(|f| (f.frame_id, f)).collect();
    let noisy_by_id: BTreeMap<u64, &FrameCandidates> = noisy.iter().map(|f| (f.frame_id, f)).collect();

    let mut removed = 0;
    for &(fid, j) in &outliers {
        let planted = noisy_by_id[&fid].detections[0].pose.as_ref().unwrap().keypoints[j];
        let gone = match by_id.get(&fid).and_then(|f| f.detections.first()) {
            None => true,
            Some(d) => match d.pose.as_ref().map(|p| p.keypoints[j]) {
                None => true,
                Some(k) => !k.valid || k.interpolated || k.position() != planted.position(),
            },
        };
        removed += gone as usize;
    }
    let mut clean_hits = 0usize;
    for r in &out.rejections {
        match r.reason {
            RejectionReason::KeypointVelocity { keypoint } => {
                clean_hits += !outliers.contains(&(r.frame_id, keypoint)) as usize;
            }
            RejectionReason::CornerVelocity | RejectionReason::FrameUndercount | RejectionReason::ExcessHand => {
                clean_hits += (0..NUM_KEYPOINTS).filter(|&j| !outliers.contains(&(r.frame_id, j))).count();
            }
            _ => {}
        }
    }
    let clean_slots = noisy.len() * NUM_KEYPOINTS - outliers.len();
    let removed_rate = removed as f64 / outliers.len() as f64;
    let clean_rate = clean_hits as f64 / clean_slots as f64;
    ensure(outliers.len() > 1000, || format!("only {} outliers planted", outliers.len()))?;
    ensure(removed_rate >= 0.99, || format!("removed {removed}/{} = {removed_rate:.4}", outliers.len()))?;
    ensure(clean_rate < 0.001, || format!("clean invalidation rate {clean_rate:.5}"))?;
    Ok(format!(
        "removed {removed}/{} outliers ({:.2}%), clean points invalidated {clean_hits}/{clean_slots} ({:.4}%)",
        outliers.len(),
        100.0 * removed_rate,
        100.0 * clean_rate
    ))
}

// ---------------------------------------------------------------- directional pattern

fn table_pattern() -> Outcome {
    let scene = SceneSpec {
        n_hands: 1,
        image_width: 300,
        image_height: 300,
        motion: Motion::Sinusoidal {
            amplitude_x: 20.0,
            amplitude_y: 10.0,
            period_frames: 90.0,
        },
        n_frames: 3000,
        base_hand_scale: 25.0,
        seed: 11,
        bone_ratios: Default::default(),
    };
    // single-hand preset, bone scale matched to the scene
    let cfg = FilterConfig {
        s_bone: scene.base_hand_scale,
        ..FilterConfig::hanco()
    };
    let spec = CorruptionSpec {
        keypoint_jitter_sigma: 1.0,
        bbox_jitter_sigma: 1.5,
        outlier_rate: 0.01,
        outlier_magnitude: 3.0 * cfg.t_vmax,
        dropout_rate: 0.10,
        false_detection_rate: 0.20,
        isolated_outliers: true,
        confidence_model: ConfidenceModel { clean_base: 0.97, k: 0.5 },
    };
    let truth = generate(&scene).map_err(|e| e.to_string())?;
    let (noisy, _) = corrupt(&truth, &spec, scene.seed).map_err(|e| e.to_string())?;

    let score = |frames: &[FrameCandidates]| {
        let preds: BTreeMap<u64, Vec<BBox>> =
            frames.iter().map(|f| (f.frame_id, f.detections.iter().map(|d| d.bbox).collect())).collect();
        let pairs: Vec<BoxFrame> = truth
            .iter()
            .map(|t| {
                (
                    preds.get(&t.frame_id).cloned().unwrap_or_default(),
                    t.detections.iter().map(|d| d.bbox).collect(),
                )
            })
            .collect();
        let p = precision_recall(&pairs, 0.5, &[0.0]).unwrap().points[0];
        (p.precision, p.recall)
    };
    let (p0, r0) = score(&noisy);
    let (p1, r1) = score(&curate(&noisy, &cfg, FilterMode::Spatial).frames);
    let (p2, r2) = score(&curate(&noisy, &cfg, FilterMode::SpatialTemporal).frames);
    let detail = format!(
        "unfiltered P={p0:.4} R={r0:.4}; spatial P={p1:.4} R={r1:.4}; spatial+temporal P={p2:.4} R={r2:.4}"
    );
    ensure(p1 >= p0 + 0.02, || format!("precision gain too small: {detail}"))?;
    ensure(r1 < r0, || format!("spatial recall not below unfiltered: {detail}"))?;
    ensure(r2 >= r1 + 0.05, || format!("temporal recall gain too small: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- metric oracles

/// Lexicographically best assignment over predictions in confidence order:
/// each matched prediction scores (iou, -gt index), unmatched (-1, 0).
type Best = (Vec<(f64, i64)>, Vec<Option<usize>>);

fn oracle_match(preds: &[BBox], gts: &[BBox], thr: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap().then(a.cmp(&b)));
    let mut best: Option<Best> = None;
    let mut current = vec![None; preds.len()];
    #[allow(clippy::too_many_arguments)]
    fn rec(
        k: usize,
        order: &[usize],
        preds: &[BBox],
        gts: &[BBox],
        thr: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Option<Best>,
    ) {
        if k == order.len() {
            let key: Vec<(f64, i64)> = order
                .iter()
                .map(|&p| match current[p] {
                    Some(g) => (iou(&preds[p], &gts[g]), -(g as i64)),
                    None => (-1.0, 0),
                })
                .collect();
            let better = match best {
                None => true,
                Some((bk, _)) => key.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((key, current.clone()));
            }
            return;
        }
        let p = order[k];
        current[p] = None;
        rec(k + 1, order, preds, gts, thr, used, current, best);
        for g in 0..gts.len() {
            if !used[g] && iou(&preds[p], &gts[g]) >= thr {
                used[g] = true;
                current[p] = Some(g);
                rec(k + 1, order, preds, gts, thr, used, current, best);
                current[p] = None;
                used[g] = false;
            }
        }
    }
    rec(0, &order, preds, gts, thr, &mut vec![false; gts.len()], &mut current, &mut best);
    best.map(|b| b.1).unwrap_or_default()
}

fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
    (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..30.0);
            let y = rng.random_range(0.0..30.0);
            let w = rng.random_range(5.0..25.0);
            let h = rng.random_range(5.0..25.0);
            // coarse scores so confidence ties occur
            let s = (rng.random_range(0..=10) as f64) / 10.0;
            BBox::new(x, y, x + w, y + h, s).unwrap()
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut matched_total = 0;
    for inst in 0..500 {
        let n_frames = rng.random_range(1..=3);
        let thr = [0.1, 0.3, 0.5, 0.75][rng.random_range(0..4)];
        let frames: Vec<BoxFrame> = (0..n_frames)
            .map(|_| {
                let np = rng.random_range(0..=5);
                let ng = rng.random_range(0..=5);
                (random_boxes(&mut rng, np), random_boxes(&mut rng, ng))
            })
            .collect();
        for (preds, gts) in &frames {
            let got: Vec<Option<usize>> = match_detections(preds, gts, thr).predictions.iter().map(|p| p.gt).collect();
            let want = oracle_match(preds, gts, thr);
            ensure(got == want, || format!("instance {inst}: match {got:?} vs oracle {want:?}"))?;
            matched_total += got.iter().flatten().count();
        }
        let curve = precision_recall(&frames, thr, &grid).map_err(|e| e.to_string())?;
        for (pt, &t) in curve.points.iter().zip(&grid) {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (preds, gts) in &frames {
                let kept: Vec<BBox> = preds.iter().copied().filter(|p| p.score >= t).collect();
                let m = oracle_match(&kept, gts, thr);
                let hits = m.iter().flatten().count();
                tp += hits;
                fp += kept.len() - hits;
                fneg += gts.len() - hits;
            }
            let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
            ensure(pt.precision == precision && pt.recall == recall, || {
                format!("instance {inst} t={t}: ({}, {}) vs ({precision}, {recall})", pt.precision, pt.recall)
            })?;
        }
    }

    let auc_grid = default_auc_grid();
    let mut max_auc_diff: f64 = 0.0;
    for inst in 0..500 {
        let cx = rng.random_range(50.0..150.0);
        let cy = rng.random_range(50.0..150.0);
        let bw = rng.random_range(20.0..80.0);
        let bh = rng.random_range(20.0..80.0);
        let gt_bbox = BBox::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0, 1.0).unwrap();
        let mut gt = HandPose::empty();
        let mut pred = HandPose::empty();
        for j in 0..NUM_KEYPOINTS {
            let (x, y) = (rng.random_range(gt_bbox.x1..gt_bbox.x2), rng.random_range(gt_bbox.y1..gt_bbox.y2));
            if j == 0 || rng.random_bool(0.9) {
                gt.keypoints[j] = Keypoint::new(x, y, 1.0);
            }
            if rng.random_bool(0.9) {
                let r = rng.random_range(0.0..0.6) * gt_bbox.diagonal();
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                pred.keypoints[j] = Keypoint::new(x + r * a.cos(), y + r * a.sin(), 0.5);
            }
        }
        let direct = |t: f64| {
            let radius = t * ((bw * bw + bh * bh).sqrt());
            let mut total = 0;
            let mut hit = 0;
            for j in 0..NUM_KEYPOINTS {
                let (g, p) = (gt.keypoints[j], pred.keypoints[j]);
                if g.valid {
                    total += 1;
                    if p.valid && ((p.x - g.x).powi(2) + (p.y - g.y).powi(2)).sqrt() <= radius {
                        hit += 1;
                    }
                }
            }
            hit as f64 / total as f64
        };
        let t = rng.random_range(0.01..0.6);
        let got = pck(&pred, &gt, &gt_bbox, t).map_err(|e| e.to_string())?;
        ensure(got == direct(t), || format!("pose {inst}: pck {got} vs {}", direct(t)))?;

        let mut area = 0.0;
        for w in auc_grid.windows(2) {
            area += (w[1] - w[0]) * (direct(w[0]) + direct(w[1])) / 2.0;
        }
        let want = area / (auc_grid[auc_grid.len() - 1] - auc_grid[0]);
        let pair = [PosePair { pred: pred.clone(), gt: gt.clone(), gt_bbox }];
        let got = auc(&pair, &auc_grid).map_err(|e| e.to_string())?;
        max_auc_diff = max_auc_diff.max((got - want).abs());
        ensure((got - want).abs() < 1e-12, || format!("pose {inst}: auc {got} vs {want}"))?;
    }
    Ok(format!(
        "500 box instances exact ({matched_total} matches), 500 pose pairs exact (max AUC diff {max_auc_diff:.1e})"
    ))
}

// ---------------------------------------------------------------- loop rehearsal

const MOCK: &str = env!("CARGO_BIN_EXE_handforge-mock-adapter");

fn write_scenarios(dir: &Path) -> Vec<String> {
    let mut videos = Vec::new();
    for (name, seed, motion) in [
        ("video-a", 1u64, Motion::Sinusoidal { amplitude_x: 15.0, amplitude_y: 8.0, period_frames: 60.0 }),
        ("video-b", 2u64, Motion::Linear { vx: 0.4, vy: -0.2 }),
    ] {
        let scenario = serde_json::json!({
            "scene": SceneSpec {
                n_hands: 1,
                image_width: 300,
                image_height: 300,
                motion,
                n_frames: 150,
                base_hand_scale: 25.0,
                seed,
                bone_ratios: Default::default(),
            },
            "corruption": CorruptionSpec {
                keypoint_jitter_sigma: 1.0,
                bbox_jitter_sigma: 1.0,
                outlier_rate: 0.03,
                outlier_magnitude: 80.0,
                dropout_rate: 0.3,
                false_detection_rate: 0.3,
                isolated_outliers: true,
                confidence_model: ConfidenceModel { clean_base: 0.97, k: 0.5 },
            },
        });
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, serde_json::to_vec_pretty(&scenario).unwrap()).unwrap();
        videos.push(path.to_string_lossy().into_owned());
    }
    videos
}

fn loop_config(work_dir: &Path, videos: &[String], iterations: usize) -> LoopConfig {
    LoopConfig {
        iterations,
        work_dir: work_dir.to_path_buf(),
        videos: videos.to_vec(),
        detector: ModelAdapter {
            infer_command: Some(format!("{MOCK} detect {{model}} {{video}} {{out}}")),
            train_command: format!("{MOCK} train {{model}} {{dataset}}"),
            model_ref: "det-0".into(),
        },
        pose: ModelAdapter {
            infer_command: Some(format!("{MOCK} pose {{model}} {{video}} {{boxes}} {{out}}")),
            train_command: format!("{MOCK} train {{model}} {{dataset}}"),
            model_ref: "pose-0".into(),
        },
        workers: 2,
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timings.json" {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn loop_rehearsal() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let videos = write_scenarios(tmp.path());
    let filter = FilterConfig {
        s_bone: 25.0,
        ..FilterConfig::hanco()
    };

    let full_dir = tmp.path().join("full");
    let reports = run_loop(&loop_config(&full_dir, &videos, 3), &filter).map_err(|e| e.to_string())?;
    ensure(reports.len() == 3, || format!("{} reports", reports.len()))?;
    for k in 1..=3 {
        let d = full_dir.join(format!("iter-{k}"));
        for f in ["det-dataset.json", "pose-dataset.json", "report.json", "manifest.json"] {
            ensure(d.join(f).is_file(), || format!("missing iter-{k}/{f}"))?;
        }
        let _: DetectionDataset = read_json(d.join("det-dataset.json")).map_err(|e| e.to_string())?;
        let _: PoseDataset = read_json(d.join("pose-dataset.json")).map_err(|e| e.to_string())?;
    }
    let kept: Vec<usize> = reports.iter().map(|r| r.aggregate.detections_kept).collect();
    ensure(kept.windows(2).all(|w| w[0] <= w[1]), || format!("detections_kept {kept:?}"))?;
    let lineage: Vec<&str> = reports.iter().map(|r| r.detector.model_ref.as_str()).collect();
    ensure(lineage == ["det-1", "det-2", "det-3"], || format!("lineage {lineage:?}"))?;

    // crash after iteration 2, leaving a partial third iteration behind
    let resumed_dir = tmp.path().join("resumed");
    run_loop(&loop_config(&resumed_dir, &videos, 2), &filter).map_err(|e| e.to_string())?;
    fs::create_dir_all(resumed_dir.join("iter-3")).unwrap();
    fs::write(resumed_dir.join("iter-3/candidates-video-a.jsonl"), b"{\"truncated").unwrap();
    let resumed: Vec<IterationReport> =
        run_loop(&loop_config(&resumed_dir, &videos, 3), &filter).map_err(|e| e.to_string())?;
    ensure(resumed == reports, || "resumed reports differ".into())?;
    let (a, b) = (tree(&full_dir), tree(&resumed_dir));
    ensure(a.keys().eq(b.keys()), || "artifact sets differ".into())?;
    for (path, bytes) in &a {
        ensure(b[path] == *bytes, || format!("{} differs after resume", path.display()))?;
    }
    Ok(format!(
        "3 iterations, detections_kept {kept:?}, lineage {lineage:?}; resume byte-identical over {} files",
        a.len()
    ))
}

// ---------------------------------------------------------------- round trip

fn round_trip() -> Outcome {
    let scene = SceneSpec {
        n_hands: 2,
        image_width: 640,
        image_height: 480,
        motion: Motion::Sinusoidal {
            amplitude_x: 10.0,
            amplitude_y: 10.0,
            period_frames: 37.0,
        },
        n_frames: 300,
        base_hand_scale: 17.3,
        seed: 5,
        bone_ratios: Default::default(),
    };
    let truth = generate(&scene).map_err(|e| e.to_string())?;
    let spec = CorruptionSpec {
        keypoint_jitter_sigma: 0.7,
        outlier_rate: 0.02,
        outlier_magnitude: 60.0,
        dropout_rate: 0.1,
        isolated_outliers: true,
        confidence_model: ConfidenceModel { clean_base: 0.9, k: 0.3 },
        ..Default::default()
    };
    let (noisy, _) = corrupt(&truth, &spec, 5).map_err(|e| e.to_string())?;
    let cfg = FilterConfig {
        s_bone: 17.3,
        s_area_min: 0.01,
        ..FilterConfig::assembly()
    };
    let curated = curate(&noisy, &cfg, FilterMode::SpatialTemporal).frames;

    let mut max_drift: f64 = 0.0;
    for frames in [&noisy, &curated] {
        let mut buf = Vec::new();
        write_candidates_to(&mut buf, frames).map_err(|e| e.to_string())?;
        let back = parse_candidates(buf.as_slice()).map_err(|e| e.to_string())?;
        ensure(back.frames.len() == frames.len(), || "frame count changed".into())?;
        for (a, b) in frames.iter().zip(&back.frames) {
            ensure(a.detections.len() == b.detections.len(), || "detection count changed".into())?;
            for (da, db) in a.detections.iter().zip(&b.detections) {
                max_drift = max_drift.max(same_position(da, db));
                ensure(da.interpolated == db.interpolated, || "interpolated flag lost".into())?;
            }
        }
    }

    let interpolated_kps: usize = curated
        .iter()
        .flat_map(|f| &f.detections)
        .filter_map(|d| d.pose.as_ref())
        .map(|p| p.keypoints.iter().filter(|k| k.valid && k.interpolated).count())
        .sum();
    let (det, pose) = build_datasets(&curated);
    let det_back: DetectionDataset = serde_json::from_slice(&serde_json::to_vec(&det).unwrap()).unwrap();
    let pose_back: PoseDataset = serde_json::from_slice(&serde_json::to_vec(&pose).unwrap()).unwrap();
    ensure(det_back == det && pose_back == pose, || "datasets changed through JSON".into())?;
    let dets: Vec<&Detection> = curated.iter().flat_map(|f| &f.detections).collect();
    ensure(dets.len() == pose_back.annotations.len(), || "annotation count".into())?;
    for (d, (da, pa)) in dets.iter().zip(det_back.annotations.iter().zip(&pose_back.annotations)) {
        let [x, y, w, h] = da.bbox;
        for (u, v) in [(x, d.bbox.x1), (y, d.bbox.y1), (x + w, d.bbox.x2), (y + h, d.bbox.y2)] {
            max_drift = max_drift.max((u - v).abs());
        }
        let p = d.pose.as_ref().unwrap();
        for (k, c) in p.keypoints.iter().zip(pa.keypoints.chunks(3)) {
            let flag = if !k.valid { 0.0 } else if k.interpolated { 1.0 } else { 2.0 };
            ensure(c[2] == flag, || "visibility flag changed".into())?;
            if k.valid {
                max_drift = max_drift.max((c[0] - k.x).abs()).max((c[1] - k.y).abs());
            }
        }
    }

    for c in [FilterConfig::hanco(), FilterConfig::assembly(), cfg] {
        let back = parse_config_str(&c.to_config_string()).map_err(|e| e.to_string())?.filter;
        ensure(back == c, || "config changed through text".into())?;
    }
    ensure(max_drift < 1e-6, || format!("drift {max_drift}"))?;
    ensure(interpolated_kps > 0, || "no interpolated keypoints exercised".into())?;
    Ok(format!(
        "max drift {max_drift:.1e} px over candidates, datasets ({} annotations, {interpolated_kps} interpolated keypoints) and 3 configs",
        dets.len()
    ))
}

// ---------------------------------------------------------------- runner

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("config fidelity", Duration::from_secs(1), config_fidelity),
        ("filter oracle equivalence", Duration::from_secs(10), filter_oracle),
        ("interpolation exactness", Duration::from_secs(5), interpolation_exactness),
        ("outlier removal", Duration::from_secs(30), outlier_removal),
        ("directional precision/recall pattern", Duration::from_secs(30), table_pattern),
        ("metric oracle equivalence", Duration::from_secs(10), metric_oracles),
        ("loop rehearsal", Duration::from_secs(20), loop_rehearsal),
        ("round trip", Duration::from_secs(5), round_trip),
    ];
    panic::set_hook(Box::new(|_| {}));
    let suite = Instant::now();
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())));
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            if elapsed <= budget {
                Ok(d)
            } else {
                Err(format!("{d}; took {elapsed:.2?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(detail) => println!("PASS  {name} ({elapsed:.2?}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({elapsed:.2?}): {detail}");
            }
        }
    }
    let total = suite.elapsed();
    println!("acceptance: {} passed, {failed} failed in {total:.2?}", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
