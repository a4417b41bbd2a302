//! Planted-highlight synthetic datasets.
//!
//! `K ≤ d` orthonormal prototypes are drawn once per dataset. The first
//! `max(1, K/4)` form the highlight pool; highlight shots take a prototype
//! from that pool, the other shots cycle through the rest. Frames are the
//! shot's prototype plus isotropic Gaussian noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{AnnotationFile, Manifest, ManifestEntry, Split};
use super::features::write_features;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::summarize::{make_summary, ShotSegmentation, DEFAULT_BUDGET};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_videos: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub d: usize,
    pub concepts: usize,
    pub shots_min: usize,
    pub shots_max: usize,
    pub highlight_fraction: f64,
    pub noise_sigma: f64,
    pub annotators: usize,
    pub test_fraction: f64,
    pub budget_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_videos: 40,
            t_min: 60,
            t_max: 120,
            d: 32,
            concepts: 4,
            shots_min: 8,
            shots_max: 12,
            highlight_fraction: 0.15,
            noise_sigma: 0.05,
            annotators: 3,
            test_fraction: 0.2,
            budget_fraction: DEFAULT_BUDGET,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.concepts > self.d {
            return bad(format!("concepts ({}) exceed d ({})", self.concepts, self.d));
        }
        if self.concepts < 2 {
            return bad("need at least 2 concepts (highlight and background)".into());
        }
        if !(self.highlight_fraction > 0.0 && self.highlight_fraction < 1.0) {
            return bad(format!(
                "highlight fraction {} outside (0, 1)",
                self.highlight_fraction
            ));
        }
        if self.n_videos == 0 || self.annotators == 0 || self.d == 0 {
            return bad("n_videos, annotators and d must be positive".into());
        }
        if self.t_min > self.t_max || self.shots_min == 0 || self.shots_min > self.shots_max {
            return bad("frame and shot ranges must be non-empty".into());
        }
        if 2 * self.shots_max > self.t_min {
            return bad(format!(
                "t_min {} too short for {} shots of at least 2 frames",
                self.t_min, self.shots_max
            ));
        }
        // With at least 1/h shots the shortest one fits the highlight
        // capacity, so every video gets a positive shot.
        if (self.shots_min as f64) * self.highlight_fraction < 1.0 {
            return bad(format!(
                "shots_min {} must be at least 1/highlight_fraction",
                self.shots_min
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test fraction {} outside [0, 1)", self.test_fraction));
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return bad(format!("budget fraction {} outside [0, 1]", self.budget_fraction));
        }
        Ok(())
    }

    pub fn highlight_concepts(&self) -> usize {
        (self.concepts / 4).max(1)
    }
}

/// One generated video, before it is written to disk.
#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub id: String,
    pub features: Tensor,
    pub labels: Vec<u8>,
    pub segmentation: ShotSegmentation,
    pub concepts: Vec<usize>,
    pub importance: Vec<Vec<f64>>,
    pub keyshots: Vec<Vec<bool>>,
    pub split: Split,
}

/// `k ≤ d` random orthonormal vectors (Gram–Schmidt on Gaussian draws).
fn orthonormal_prototypes<R: Rng>(k: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for u in &out {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Split `t` frames into `s` shots of at least two frames each.
fn random_starts<R: Rng>(t: usize, s: usize, rng: &mut R) -> Vec<usize> {
    let spare = t - 2 * s;
    let mut cuts: Vec<usize> = (0..s - 1).map(|_| rng.random_range(0..=spare)).collect();
    cuts.sort_unstable();
    let mut starts = Vec::with_capacity(s);
    starts.push(0);
    for (i, c) in cuts.into_iter().enumerate() {
        starts.push(c + 2 * (i + 1));
    }
    starts
}

fn generate_video<R: Rng>(
    spec: &SyntheticSpec,
    id: String,
    prototypes: &[Vec<f64>],
    rng: &mut R,
) -> Result<SyntheticVideo> {
    let t = rng.random_range(spec.t_min..=spec.t_max);
    let s = rng.random_range(spec.shots_min..=spec.shots_max);
    let seg = ShotSegmentation::from_starts(random_starts(t, s, rng), t)?;
    let lengths = seg.lengths();

    let cap = (spec.highlight_fraction * t as f64).floor() as usize;
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(rng);
    let mut highlight = vec![false; s];
    let mut used = 0;
    for &i in &order {
        if used + lengths[i] <= cap {
            highlight[i] = true;
            used += lengths[i];
        }
    }

    // Background concepts are dealt round-robin from a random starting
    // point, so each recurs across the video while highlights stay rare.
    let h = spec.highlight_concepts();
    let background = spec.concepts - h;
    let mut next_bg = rng.random_range(0..background);
    let concepts: Vec<usize> = highlight
        .iter()
        .map(|&hl| {
            if hl {
                rng.random_range(0..h)
            } else {
                next_bg = (next_bg + 1) % background;
                h + next_bg
            }
        })
        .collect();

    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::Usage(format!("noise: {e}")))?;
    let mut x = Tensor::zeros(t, spec.d);
    let mut labels = vec![0u8; t];
    for (k, range) in seg.shots().enumerate() {
        let proto = &prototypes[concepts[k]];
        for f in range {
            labels[f] = highlight[k] as u8;
            for (j, p) in proto.iter().enumerate() {
                let e = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                // Stored at 32-bit precision, so generate at that precision.
                x.set(f, j, f64::from((p + e) as f32));
            }
        }
    }

    let importance: Vec<Vec<f64>> = (0..spec.annotators)
        .map(|_| {
            labels
                .iter()
                .map(|&y| f64::from(y) + rng.random_range(0.0..=0.2))
                .collect()
        })
        .collect();
    let keyshots = importance
        .iter()
        .map(|imp| make_summary(imp, &seg, spec.budget_fraction).map(|m| m.selected))
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticVideo {
        id,
        features: x,
        labels,
        segmentation: seg,
        concepts,
        importance,
        keyshots,
        split: Split::Train,
    })
}

/// Generate the videos in memory. Deterministic in `spec.seed`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes = orthonormal_prototypes(spec.concepts, spec.d, &mut rng);
    let mut videos = (0..spec.n_videos)
        .map(|i| generate_video(spec, format!("video_{i:03}"), &prototypes, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let n_test = (spec.test_fraction * spec.n_videos as f64).round() as usize;
    let mut idx: Vec<usize> = (0..spec.n_videos).collect();
    idx.shuffle(&mut rng);
    for &i in &idx[..n_test] {
        videos[i].split = Split::Test;
    }
    Ok(videos)
}

/// Generate a dataset under `out_dir`: `features/<id>.mcvf`,
/// `annotations/<id>.json` and `manifest.json`. Returns the manifest path.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<PathBuf> {
    let videos = synthesize(spec)?;
    fs::create_dir_all(out_dir.join("features"))?;
    fs::create_dir_all(out_dir.join("annotations"))?;
    let mut entries = Vec::with_capacity(videos.len());
    for v in &videos {
        let feature_path = PathBuf::from("features").join(format!("{}.mcvf", v.id));
        let annotation_path = PathBuf::from("annotations").join(format!("{}.json", v.id));
        write_features(&out_dir.join(&feature_path), &v.features)?;
        let ann = AnnotationFile {
            video_id: v.id.clone(),
            fps: 2.0,
            frame_labels: Some(v.labels.clone()),
            importance: Some(v.importance.clone()),
            keyshots: Some(v.keyshots.clone()),
            boundaries: Some(v.segmentation.starts().to_vec()),
        };
        fs::write(out_dir.join(&annotation_path), serde_json::to_string(&ann)?)?;
        entries.push(ManifestEntry {
            video_id: v.id.clone(),
            feature_path,
            annotation_path,
            split: v.split,
            labeled: true,
        });
    }
    let manifest = out_dir.join("manifest.json");
    Manifest(entries).write(&manifest)?;
    Ok(manifest)
}
