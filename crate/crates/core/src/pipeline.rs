//! Stage chaining: spatial filtering per frame, then optional temporal
//! filtering over the sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FilterConfig;
use crate::pose::FrameCandidates;
use crate::spatial::{spatial_filter, RejectionRecord};
use crate::temporal::temporal_filter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Spatial,
    #[default]
    SpatialTemporal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curated {
    pub frames: Vec<FrameCandidates>,
    /// Spatial records first, then temporal ones, each sorted by frame id.
    pub rejections: Vec<RejectionRecord>,
}

pub fn curate(frames: &[FrameCandidates], cfg: &FilterConfig, mode: FilterMode) -> Curated {
    let results: Vec<_> = frames.par_iter().map(|f| spatial_filter(f, cfg)).collect();
    let mut rejections = Vec::new();
    let mut kept = Vec::with_capacity(frames.len());
    for (input, r) in frames.iter().zip(results) {
        rejections.extend(r.rejections);
        match r.frame {
            Some(f) => kept.push(f),
            None if mode == FilterMode::SpatialTemporal => kept.push(input.shell()),
            None => {}
        }
    }
    if mode == FilterMode::Spatial {
        return Curated { frames: kept, rejections };
    }
    let t = temporal_filter(&kept, cfg);
    rejections.extend(t.rejections);
    Curated {
        frames: t.frames,
        rejections,
    }
}
