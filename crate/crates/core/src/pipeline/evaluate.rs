use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{config_hash, Checkpoint};
use crate::dataio::{Dataset, Split, Video};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{fscore_multi, rank_protocol, Aggregation, AnnotationSet};
use crate::summarize::{make_summary, segment_changepoint, ShotSegmentation};

/// Typical shot length (frames) assumed when boundaries must be detected.
pub const FALLBACK_SHOT_FRAMES: usize = 10;

/// Annotated shots, or change-point shots of about
/// [`FALLBACK_SHOT_FRAMES`] frames when the annotation has none.
pub fn video_segmentation(v: &Video) -> Result<ShotSegmentation> {
    match &v.segmentation {
        Some(s) => Ok(s.clone()),
        None => detect_shots(&v.features),
    }
}

pub fn detect_shots(x: &Tensor) -> Result<ShotSegmentation> {
    if x.rows() < 2 {
        return Ok(ShotSegmentation::single(x.rows()));
    }
    segment_changepoint(x, x.rows().div_ceil(FALLBACK_SHOT_FRAMES))
}

/// Source of frame scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    #[default]
    Model,
    /// Independent uniform draws in `[0, 1)` per frame.
    Random,
    /// The same score on every frame.
    Uniform,
}

impl FromStr for Scorer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Scorer::Model),
            "random" => Ok(Scorer::Random),
            "uniform" => Ok(Scorer::Uniform),
            _ => Err(Error::Usage(format!(
                "unknown scorer {s:?} (expected model, random or uniform)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub aggregation: Aggregation,
    pub budget_fraction: f64,
    pub scorer: Scorer,
    /// Seed of the random scorer.
    pub seed: u64,
    pub split: Split,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            aggregation: Aggregation::Mean,
            budget_fraction: crate::summarize::DEFAULT_BUDGET,
            scorer: Scorer::Model,
            seed: 0,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub f1: f64,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub videos: usize,
    pub mean_f1: f64,
    pub mean_tau: Option<f64>,
    pub mean_rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: EvalOptions,
    pub config_hash: String,
    pub per_video: BTreeMap<String, VideoEval>,
    pub aggregate: Aggregate,
}

/// Annotator keyshot masks; derived from importance or frame labels when the
/// annotation carries none.
fn reference_annotations(v: &Video, seg: &ShotSegmentation, budget: f64) -> Result<AnnotationSet> {
    let mut ann = v.annotations.clone();
    if ann.keyshots.is_some() {
        return Ok(ann);
    }
    if let Some(imp) = &ann.importance {
        let masks = (0..imp.rows())
            .map(|a| make_summary(imp.row_slice(a), seg, budget).map(|m| m.selected))
            .collect::<Result<Vec<_>>>()?;
        ann.keyshots = Some(masks);
    } else if let Some(y) = v.labels.values() {
        ann.keyshots = Some(vec![y.iter().map(|&l| l > 0.5).collect()]);
    } else {
        return Err(Error::Data(format!(
            "{}: no keyshots, importance or labels to evaluate against",
            v.id
        )));
    }
    Ok(ann)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn frame_scores(ck: &Checkpoint, v: &Video, index: usize, opts: &EvalOptions) -> Result<Vec<f64>> {
    let t = v.frames();
    Ok(match opts.scorer {
        Scorer::Model => ck.params.score(&v.features, ck.config.model.scaled)?.0,
        Scorer::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(index as u64 + 1);
            (0..t).map(|_| rng.random::<f64>()).collect()
        }
        Scorer::Uniform => vec![0.5; t],
    })
}

fn evaluate_video(ck: &Checkpoint, v: &Video, index: usize, opts: &EvalOptions) -> Result<VideoEval> {
    let scores = frame_scores(ck, v, index, opts)?;
    let seg = video_segmentation(v)?;
    let mask = make_summary(&scores, &seg, opts.budget_fraction)?;
    let ann = reference_annotations(v, &seg, opts.budget_fraction)?;
    let f1 = fscore_multi(&mask.selected, &ann, opts.aggregation)?;
    let (tau, rho) = if ann.importance.is_some() {
        let (t, r) = rank_protocol(&scores, &ann)?;
        (Some(t), Some(r))
    } else {
        (None, None)
    };
    Ok(VideoEval { f1, tau, rho })
}

/// Score every video of `opts.split` in parallel.
pub fn evaluate(ck: &Checkpoint, ds: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if let Some(d) = ds.feature_dim() {
        if d != ck.config.model.d {
            return Err(Error::Data(format!(
                "checkpoint expects {}-wide features, dataset has {d}",
                ck.config.model.d
            )));
        }
    }
    let videos: Vec<(usize, &Video)> = ds
        .videos
        .iter()
        .enumerate()
        .filter(|(_, v)| v.split == opts.split)
        .collect();
    if videos.is_empty() {
        return Err(Error::Data(format!("no {:?} videos to evaluate", opts.split)));
    }
    let results = videos
        .par_iter()
        .map(|&(i, v)| evaluate_video(ck, v, i, opts).map(|e| (v.id.clone(), e)))
        .collect::<Result<Vec<_>>>()?;
    let per_video: BTreeMap<String, VideoEval> = results.into_iter().collect();
    let aggregate = Aggregate {
        videos: per_video.len(),
        mean_f1: mean(per_video.values().map(|e| e.f1)).unwrap_or(0.0),
        mean_tau: mean(per_video.values().filter_map(|e| e.tau)),
        mean_rho: mean(per_video.values().filter_map(|e| e.rho)),
    };
    Ok(EvalReport {
        protocol: opts.clone(),
        config_hash: config_hash(&ck.config)?,
        per_video,
        aggregate,
    })
}
