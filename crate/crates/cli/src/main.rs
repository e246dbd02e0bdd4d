use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use handforge::dataset::{emit_datasets, force_from_env, read_json, rejection_histogram, Manifest, ManifestCounts};
use handforge::io::{read_candidates, read_jsonl, read_rejections, write_candidates, write_jsonl, write_rejections};
use handforge::metrics::{confidence_sweep, evaluate};
use handforge::orchestrator::run_loop;
use handforge::synth::{corrupt, generate, Scenario};
use handforge::{curate, parse_config, Error, FilterConfig, FilterMode, PipelineConfig};

#[derive(Parser)]
#[command(name = "handforge", version, about = "Curate hand-pose pseudo-labels for self-training")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Overwrite existing outputs (also HANDFORGE_FORCE=1).
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file with `key = value` lines.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set c_hd=0.5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Spatial,
    SpatialTemporal,
}

impl From<Mode> for FilterMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Spatial => FilterMode::Spatial,
            Mode::SpatialTemporal => FilterMode::SpatialTemporal,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Filter a candidate stream; writes OUTPUT and OUTPUT.rejections.jsonl.
    Filter {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "spatial-temporal")]
        mode: Mode,
        input: PathBuf,
        output: PathBuf,
    },
    /// Filter a candidate stream and emit detection and pose datasets.
    BuildDataset {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "spatial-temporal")]
        mode: Mode,
        input: PathBuf,
        out_dir: PathBuf,
    },
    /// Score predictions against ground truth; writes a JSON report.
    Evaluate {
        predictions: PathBuf,
        ground_truth: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Comma-separated detector confidence thresholds to sweep.
        #[arg(long, value_delimiter = ',', requires = "c_pe_grid")]
        c_hd_grid: Vec<f64>,
        /// Comma-separated pose confidence thresholds to sweep.
        #[arg(long, value_delimiter = ',', requires = "c_hd_grid")]
        c_pe_grid: Vec<f64>,
        /// Base configuration for the sweep (defaults to the single-hand preset).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the self-training loop described by the configuration's loop keys.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Generate a synthetic scene: truth.jsonl, candidates.jsonl, ledger.jsonl.
    Synth {
        /// JSON file with `scene` and optional `corruption` objects.
        scene: PathBuf,
        out_dir: PathBuf,
    },
    /// Summarize a filter output or a dataset directory.
    Stats { path: PathBuf },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = parse_config(&args.config)?;
    let pairs = args
        .overrides
        .iter()
        .map(|o| {
            o.split_once('=')
                .ok_or_else(|| Error::Config {
                    key: o.clone(),
                    message: "override must be KEY=VALUE".into(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    cfg.filter.apply_overrides(pairs)?;
    Ok(cfg)
}

fn rejections_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".rejections.jsonl");
    PathBuf::from(s)
}

fn check_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.to_path_buf()).into());
    }
    Ok(())
}

fn counts_json(c: &ManifestCounts) -> Value {
    serde_json::to_value(c).unwrap_or(Value::Null)
}

fn dispatch(cli: Cli) -> Result<Value> {
    let force = cli.force || force_from_env();
    match cli.command {
        Cmd::Filter {
            config,
            mode,
            input,
            output,
        } => {
            let cfg = load_config(&config)?;
            check_overwrite(&output, force)?;
            let stream = read_candidates(&input)?;
            let curated = curate(&stream.frames, &cfg.filter, mode.into());
            write_candidates(&output, &curated.frames)?;
            write_rejections(rejections_path(&output), &curated.rejections)?;
            let counts = ManifestCounts::from_frames(stream.frames.len(), &curated.frames);
            Ok(json!({
                "counts": counts_json(&counts),
                "malformed_lines": stream.malformed_lines,
                "rejections": rejection_histogram(&curated.rejections),
            }))
        }
        Cmd::BuildDataset {
            config,
            mode,
            input,
            out_dir,
        } => {
            let cfg = load_config(&config)?;
            let stream = read_candidates(&input)?;
            let curated = curate(&stream.frames, &cfg.filter, mode.into());
            let emitted = emit_datasets(
                &curated.frames,
                stream.frames.len(),
                &curated.rejections,
                &cfg.filter,
                &out_dir,
                force,
            )?;
            write_rejections(out_dir.join("rejections.jsonl"), &curated.rejections)?;
            Ok(json!({
                "counts": counts_json(&emitted.manifest.counts),
                "malformed_lines": stream.malformed_lines,
                "rejections": emitted.manifest.rejections,
                "detection_dataset": emitted.detection_path,
                "pose_dataset": emitted.pose_path,
            }))
        }
        Cmd::Evaluate {
            predictions,
            ground_truth,
            out,
            c_hd_grid,
            c_pe_grid,
            config,
        } => {
            check_overwrite(&out, force)?;
            let preds = read_candidates(&predictions)?.frames;
            let gts = read_candidates(&ground_truth)?.frames;
            let report = evaluate(&preds, &gts)?;
            let mut doc = serde_json::to_value(&report)?;
            if !c_hd_grid.is_empty() {
                let base = match config {
                    Some(p) => parse_config(p)?.filter,
                    None => FilterConfig::hanco(),
                };
                let sweep = confidence_sweep(&preds, &gts, &base, &c_hd_grid, &c_pe_grid)?;
                doc["confidence_sweep"] = serde_json::to_value(sweep)?;
            }
            let bytes = serde_json::to_vec_pretty(&doc)?;
            fs::write(&out, bytes).with_context(|| format!("writing {}", out.display()))?;
            Ok(json!({
                "precision@0.5": report.precision_50,
                "recall@0.5": report.recall_50,
                "precision@0.75": report.precision_75,
                "recall@0.75": report.recall_75,
                "auc": report.auc,
                "matched_poses": report.matched_poses,
                "unmatched_poses": report.unmatched_poses,
                "report": out,
            }))
        }
        Cmd::Run { config, iterations } => {
            let cfg = load_config(&config)?;
            let Some(mut run) = cfg.run else {
                return Err(Error::Config {
                    key: "work_dir".into(),
                    message: "configuration declares no loop keys (work_dir, videos, detector.*, pose.*)".into(),
                }
                .into());
            };
            if let Some(n) = iterations {
                run.iterations = n;
            }
            if let Some(w) = cli.workers {
                run.workers = w;
            }
            let reports = run_loop(&run, &cfg.filter)?;
            Ok(json!({
                "work_dir": run.work_dir,
                "iterations": reports.iter().map(|r| json!({
                    "iteration": r.iteration,
                    "counts": counts_json(&r.aggregate),
                    "rejections": r.rejections,
                    "detector_model": r.detector.model_ref,
                    "pose_model": r.pose.model_ref,
                    "degraded": r.degraded,
                })).collect::<Vec<_>>(),
            }))
        }
        Cmd::Synth { scene, out_dir } => {
            let file = Scenario::load(&scene)?;
            let truth = generate(&file.scene)?;
            let (candidates, ledger) = corrupt(&truth, &file.corruption, file.scene.seed)?;
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            check_overwrite(&out_dir.join("truth.jsonl"), force)?;
            write_candidates(out_dir.join("truth.jsonl"), &truth)?;
            write_candidates(out_dir.join("candidates.jsonl"), &candidates)?;
            write_jsonl(out_dir.join("ledger.jsonl"), &ledger)?;
            Ok(json!({
                "frames": truth.len(),
                "truth_detections": truth.iter().map(|f| f.detections.len()).sum::<usize>(),
                "candidate_detections": candidates.iter().map(|f| f.detections.len()).sum::<usize>(),
                "ledger_entries": ledger.len(),
            }))
        }
        Cmd::Stats { path } => stats(&path),
    }
}

fn stats(path: &Path) -> Result<Value> {
    if path.is_dir() {
        let manifest: Manifest = read_json(path.join("manifest.json"))?;
        let recs = read_rejections(path.join("rejections.jsonl"))?;
        return Ok(json!({
            "counts": counts_json(&manifest.counts),
            "rejections": rejection_histogram(&recs),
            "manifest_rejections": manifest.rejections,
        }));
    }
    let stream = read_candidates(path)?;
    let counts = ManifestCounts::from_frames(stream.frames.len(), &stream.frames);
    let rej_path = rejections_path(path);
    let rejections = if rej_path.is_file() {
        let recs: Vec<handforge::RejectionRecord> = read_jsonl(&rej_path)?;
        json!(rejection_histogram(&recs))
    } else {
        Value::Null
    };
    Ok(json!({
        "frames": counts.frames_kept,
        "detections": counts.detections_kept,
        "keypoints_observed": counts.keypoints_observed,
        "keypoints_interpolated": counts.keypoints_interpolated,
        "malformed_lines": stream.malformed_lines,
        "rejections": rejections,
    }))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => 2,
                Error::Adapter { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size worker pool: {e}");
        }
    }
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
