//! Filter and loop configuration, read from flat `key = value` files.
//!
//! ```text
//! # HanCo-style desk setup
//! s_bone = 50
//! s_area_max = 0.75
//! s_area_min = 0.15
//! s_count = 1
//! t_vmax = 25
//! c_hd = 0.9
//! c_pe = 0.2
//! bone_ratios.0-9 = 2.0
//! ```
//!
//! Numeric values accept a trailing `px`, and fractions a trailing `%`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{bone_index, BONES, NUM_BONES, REFERENCE_BONE};

/// Maximum bone length per skeleton edge, as a multiple of the reference
/// (index proximal phalanx) length. Indexed like [`BONES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoneRatios(pub [f64; NUM_BONES]);

impl Default for BoneRatios {
    fn default() -> Self {
        BoneRatios([
            // thumb: wrist-cmc, metacarpal, proximal, distal
            1.00, 1.20, 0.85, 0.70, //
            // index: palm, proximal (reference), middle, distal
            2.00, 1.00, 0.65, 0.60, //
            // middle
            2.10, 1.10, 0.75, 0.60, //
            // ring
            2.00, 1.05, 0.70, 0.60, //
            // pinky
            1.90, 0.85, 0.55, 0.55,
        ])
    }
}

impl BoneRatios {
    pub fn get(&self, bone: usize) -> f64 {
        self.0[bone]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Maximum index proximal phalanx length in pixels.
    pub s_bone: f64,
    pub s_area_max: f64,
    pub s_area_min: f64,
    /// Expected number of simultaneously visible hands.
    pub s_count: usize,
    /// Maximum per-frame displacement of a keypoint or box corner, in pixels.
    pub t_vmax: f64,
    pub c_hd: f64,
    pub c_pe: f64,
    pub bone_ratios: BoneRatios,
    pub slack: f64,
    /// Longest run of missing frames the temporal filter will bridge.
    pub interp_max_gap: usize,
    /// IoU floor for frame-to-frame association when more than one hand is expected.
    pub assoc_iou_min: f64,
}

pub const DEFAULT_SLACK: f64 = 1.15;
pub const DEFAULT_INTERP_MAX_GAP: usize = 5;
pub const DEFAULT_ASSOC_IOU_MIN: f64 = 0.1;

impl FilterConfig {
    /// Desk-scale single-hand setup (HanCo row).
    pub fn hanco() -> Self {
        FilterConfig {
            s_bone: 50.0,
            s_area_max: 0.75,
            s_area_min: 0.15,
            s_count: 1,
            t_vmax: 25.0,
            c_hd: 0.9,
            c_pe: 0.2,
            bone_ratios: BoneRatios::default(),
            slack: DEFAULT_SLACK,
            interp_max_gap: DEFAULT_INTERP_MAX_GAP,
            assoc_iou_min: DEFAULT_ASSOC_IOU_MIN,
        }
    }

    /// Two-handed assembly workstation setup.
    pub fn assembly() -> Self {
        FilterConfig {
            s_bone: 80.0,
            s_area_max: 0.80,
            s_area_min: 0.05,
            s_count: 2,
            t_vmax: 45.0,
            c_hd: 0.1,
            c_pe: 0.1,
            ..FilterConfig::hanco()
        }
    }

    /// Upper length bound for `bone` (an index into [`BONES`]).
    pub fn bone_bound(&self, bone: usize) -> f64 {
        self.s_bone * self.bone_ratios.get(bone) * self.slack
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} must lie in [0, 1]")))
            }
        };
        unit("s_area_max", self.s_area_max)?;
        unit("s_area_min", self.s_area_min)?;
        unit("c_hd", self.c_hd)?;
        unit("c_pe", self.c_pe)?;
        if self.s_area_min >= self.s_area_max {
            return Err(Error::config(
                "s_area_min",
                format!(
                    "{} must be smaller than s_area_max ({})",
                    self.s_area_min, self.s_area_max
                ),
            ));
        }
        if !(self.s_bone > 0.0 && self.s_bone.is_finite()) {
            return Err(Error::config("s_bone", format!("{} must be positive", self.s_bone)));
        }
        if !(self.t_vmax > 0.0 && self.t_vmax.is_finite()) {
            return Err(Error::config("t_vmax", format!("{} must be positive", self.t_vmax)));
        }
        if self.s_count < 1 {
            return Err(Error::config("s_count", "must be at least 1"));
        }
        if !(self.slack >= 1.0 && self.slack.is_finite()) {
            return Err(Error::config("slack", format!("{} must be >= 1", self.slack)));
        }
        unit("assoc_iou_min", self.assoc_iou_min)?;
        for (i, &(a, b)) in BONES.iter().enumerate() {
            let r = self.bone_ratios.get(i);
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config(
                    format!("bone_ratios.{a}-{b}"),
                    format!("{r} must be positive"),
                ));
            }
        }
        let reference = self.bone_ratios.get(REFERENCE_BONE);
        if reference != 1.0 {
            return Err(Error::config(
                "bone_ratios.5-6",
                format!("reference bone ratio must be 1.0, got {reference}"),
            ));
        }
        Ok(())
    }

    /// Sets one key from its textual value. Does not re-validate the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "s_bone" => self.s_bone = parse_f64(key, value)?,
            "s_area_max" => self.s_area_max = parse_f64(key, value)?,
            "s_area_min" => self.s_area_min = parse_f64(key, value)?,
            "s_count" => self.s_count = parse_usize(key, value)?,
            "t_vmax" => self.t_vmax = parse_f64(key, value)?,
            "c_hd" => self.c_hd = parse_f64(key, value)?,
            "c_pe" => self.c_pe = parse_f64(key, value)?,
            "slack" => self.slack = parse_f64(key, value)?,
            "interp_max_gap" => self.interp_max_gap = parse_usize(key, value)?,
            "assoc_iou_min" => self.assoc_iou_min = parse_f64(key, value)?,
            _ => {
                let Some(pair) = key.strip_prefix("bone_ratios.") else {
                    return Err(Error::config(key, "unknown key"));
                };
                let bone = parse_bone(pair).ok_or_else(|| {
                    Error::config(key, "not a skeleton bone (expected <parent>-<child>)")
                })?;
                self.bone_ratios.0[bone] = parse_f64(key, value)?;
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides, then re-validates.
    pub fn apply_overrides<'a>(
        &mut self,
        overrides: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<()> {
        for (k, v) in overrides {
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Serializes to the flat key-value format; round-trips through [`parse_config_str`].
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "s_bone = {}", self.s_bone);
        let _ = writeln!(out, "s_area_max = {}", self.s_area_max);
        let _ = writeln!(out, "s_area_min = {}", self.s_area_min);
        let _ = writeln!(out, "s_count = {}", self.s_count);
        let _ = writeln!(out, "t_vmax = {}", self.t_vmax);
        let _ = writeln!(out, "c_hd = {}", self.c_hd);
        let _ = writeln!(out, "c_pe = {}", self.c_pe);
        let _ = writeln!(out, "slack = {}", self.slack);
        let _ = writeln!(out, "interp_max_gap = {}", self.interp_max_gap);
        let _ = writeln!(out, "assoc_iou_min = {}", self.assoc_iou_min);
        for (i, (a, b)) in BONES.iter().enumerate() {
            let _ = writeln!(out, "bone_ratios.{a}-{b} = {}", self.bone_ratios.get(i));
        }
        out
    }

    /// Flat key/value view used in manifests.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("s_bone".into(), self.s_bone);
        m.insert("s_area_max".into(), self.s_area_max);
        m.insert("s_area_min".into(), self.s_area_min);
        m.insert("s_count".into(), self.s_count as f64);
        m.insert("t_vmax".into(), self.t_vmax);
        m.insert("c_hd".into(), self.c_hd);
        m.insert("c_pe".into(), self.c_pe);
        m.insert("slack".into(), self.slack);
        m.insert("interp_max_gap".into(), self.interp_max_gap as f64);
        m.insert("assoc_iou_min".into(), self.assoc_iou_min);
        for (i, (a, b)) in BONES.iter().enumerate() {
            m.insert(format!("bone_ratios.{a}-{b}"), self.bone_ratios.get(i));
        }
        m
    }
}

fn parse_bone(pair: &str) -> Option<usize> {
    let (a, b) = pair.split_once('-')?;
    bone_index((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v = value.trim();
    let (num, percent) = if let Some(p) = v.strip_suffix('%') {
        (p.trim(), true)
    } else if let Some(p) = v.strip_suffix("px") {
        (p.trim(), false)
    } else {
        (v, false)
    };
    let parsed: f64 = num
        .parse()
        .map_err(|_| Error::config(key, format!("`{value}` is not a number")))?;
    if !parsed.is_finite() {
        return Err(Error::config(key, format!("`{value}` is not finite")));
    }
    Ok(if percent { parsed / 100.0 } else { parsed })
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("`{value}` is not a non-negative integer")))
}

/// How one external model is driven: command templates plus the current checkpoint.
///
/// Templates are split on whitespace and each token has the placeholders
/// `{model}`, `{video}`, `{out}`, `{dataset}` and `{boxes}` substituted; no shell
/// is involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAdapter {
    pub infer_command: Option<String>,
    pub train_command: String,
    pub model_ref: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub iterations: usize,
    pub work_dir: PathBuf,
    pub videos: Vec<String>,
    pub detector: ModelAdapter,
    pub pose: ModelAdapter,
    /// Concurrent per-video inference/filter jobs; 0 means available parallelism.
    pub workers: usize,
}

pub const DEFAULT_ITERATIONS: usize = 3;

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if self.videos.is_empty() {
            return Err(Error::config("videos", "at least one video source is required"));
        }
        if self.detector.infer_command.is_none() && self.pose.infer_command.is_none() {
            return Err(Error::config(
                "detector.infer",
                "at least one of detector.infer / pose.infer must be set",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    /// Present only when the file declares loop keys.
    pub run: Option<LoopConfig>,
}

const REQUIRED_FILTER_KEYS: [&str; 7] = [
    "s_bone",
    "s_area_max",
    "s_area_min",
    "s_count",
    "t_vmax",
    "c_hd",
    "c_pe",
];

const LOOP_KEYS: [&str; 10] = [
    "iterations",
    "work_dir",
    "videos",
    "workers",
    "detector.infer",
    "detector.train",
    "detector.model",
    "pose.infer",
    "pose.train",
    "pose.model",
];

/// Parses a flat `key = value` configuration.
pub fn parse_config_str(text: &str) -> Result<PipelineConfig> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = k.trim().to_string();
        if entries.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::config(key, "duplicate key"));
        }
    }

    for key in REQUIRED_FILTER_KEYS {
        if !entries.contains_key(key) {
            return Err(Error::config(key, "missing required key"));
        }
    }

    let mut filter = FilterConfig::hanco();
    let mut loop_entries = BTreeMap::new();
    for (k, v) in &entries {
        if LOOP_KEYS.contains(&k.as_str()) {
            loop_entries.insert(k.as_str(), v.as_str());
        } else {
            filter.set(k, v)?;
        }
    }
    filter.validate()?;

    let run = if loop_entries.is_empty() {
        None
    } else {
        Some(parse_loop(&loop_entries)?)
    };
    Ok(PipelineConfig { filter, run })
}

fn parse_loop(entries: &BTreeMap<&str, &str>) -> Result<LoopConfig> {
    let required = |key: &str| {
        entries
            .get(key)
            .map(|s| s.to_string())
            .ok_or_else(|| Error::config(key, "missing required key"))
    };
    let optional = |key: &str| entries.get(key).map(|s| s.to_string()).filter(|s| !s.is_empty());
    let iterations = match entries.get("iterations") {
        Some(v) => parse_usize("iterations", v)?,
        None => DEFAULT_ITERATIONS,
    };
    let workers = match entries.get("workers") {
        Some(v) => parse_usize("workers", v)?,
        None => 0,
    };
    let videos = required("videos")?
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let cfg = LoopConfig {
        iterations,
        work_dir: PathBuf::from(required("work_dir")?),
        videos,
        detector: ModelAdapter {
            infer_command: optional("detector.infer"),
            train_command: required("detector.train")?,
            model_ref: required("detector.model")?,
        },
        pose: ModelAdapter {
            infer_command: optional("pose.infer"),
            train_command: required("pose.train")?,
            model_ref: required("pose.model")?,
        },
        workers,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HANCO: &str = "s_bone = 50px\ns_area_max = 75%\ns_area_min = 15%\ns_count = 1\nt_vmax = 25px\nc_hd = 0.9\nc_pe = 0.2\n";

    #[test]
    fn parses_hanco_row_with_units() {
        let cfg = parse_config_str(HANCO).unwrap();
        assert_eq!(cfg.filter, FilterConfig::hanco());
        assert!(cfg.run.is_none());
    }

    #[test]
    fn missing_key_is_named() {
        let text = HANCO.replace("t_vmax = 25px\n", "");
        match parse_config_str(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "t_vmax"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_area_bounds_rejected() {
        let text = HANCO
            .replace("s_area_max = 75%", "s_area_max = 0.5")
            .replace("s_area_min = 15%", "s_area_min = 0.9");
        assert!(matches!(parse_config_str(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn unknown_and_bad_bone_keys_rejected() {
        let text = format!("{HANCO}s_boen = 3\n");
        assert!(parse_config_str(&text).is_err());
        let text = format!("{HANCO}bone_ratios.5-9 = 3\n");
        assert!(parse_config_str(&text).is_err());
        let text = format!("{HANCO}bone_ratios.5-6 = 1.2\n");
        assert!(parse_config_str(&text).is_err());
    }

    #[test]
    fn bone_ratio_override() {
        let text = format!("{HANCO}bone_ratios.0-9 = 1.4\nslack = 1\n");
        let cfg = parse_config_str(&text).unwrap().filter;
        assert_eq!(cfg.bone_bound(8), 70.0);
    }

    #[test]
    fn overrides_revalidate() {
        let mut cfg = FilterConfig::hanco();
        assert!(cfg.apply_overrides([("c_hd", "0.5")]).is_ok());
        assert_eq!(cfg.c_hd, 0.5);
        assert!(cfg.apply_overrides([("s_area_min", "0.99")]).is_err());
    }

    #[test]
    fn loop_keys_parse() {
        let text = format!(
            "{HANCO}iterations = 2\nwork_dir = /tmp/w\nvideos = a.json, b.json\n\
             detector.infer = det {{model}} {{video}} {{out}}\ndetector.train = tr {{dataset}}\n\
             detector.model = det-0\npose.train = tr {{dataset}}\npose.model = pose-0\n"
        );
        let run = parse_config_str(&text).unwrap().run.unwrap();
        assert_eq!(run.iterations, 2);
        assert_eq!(run.videos, vec!["a.json", "b.json"]);
        assert_eq!(run.pose.infer_command, None);
        assert_eq!(run.detector.model_ref, "det-0");
    }

    #[test]
    fn loop_missing_trainer_is_named() {
        let text = format!("{HANCO}work_dir = w\nvideos = a\ndetector.infer = x\ndetector.model = m\n");
        match parse_config_str(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "detector.train"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_string_round_trips() {
        let mut cfg = FilterConfig::assembly();
        cfg.slack = 1.0 / 3.0 + 1.0;
        cfg.bone_ratios.0[8] = 2.0 / 3.0 + 1.5;
        let back = parse_config_str(&cfg.to_config_string()).unwrap().filter;
        assert_eq!(back, cfg);
    }
}
