use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::read_features;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::metrics::AnnotationSet;
use crate::objectives::LabelSet;
use crate::summarize::ShotSegmentation;

fn default_fps() -> f64 {
    2.0
}

/// Per-video annotation JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub video_id: String,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Binary highlight label per frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_labels: Option<Vec<u8>>,
    /// `A × T` annotator importance scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<Vec<f64>>>,
    /// `A × T` annotator keyshot masks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyshots: Option<Vec<Vec<bool>>>,
    /// Shot start frames, ascending, first entry 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<usize>>,
}

impl AnnotationFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_path: PathBuf,
    pub annotation_path: PathBuf,
    pub split: Split,
    pub labeled: bool,
}

/// Manifest JSON: a list of entries; relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest(pub Vec<ManifestEntry>);

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        m.check_unique()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.0 {
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::Data(format!("duplicate video_id {:?}", e.video_id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Video {
    pub id: String,
    pub split: Split,
    pub fps: f64,
    pub features: Tensor,
    pub labels: LabelSet,
    pub annotations: AnnotationSet,
    pub segmentation: Option<ShotSegmentation>,
}

impl Video {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub videos: Vec<Video>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_len(id: &str, what: &str, got: usize, frames: usize) -> Result<()> {
    if got != frames {
        return Err(Error::Data(format!(
            "{id}: {what} has length {got} but the feature file has {frames} frames"
        )));
    }
    Ok(())
}

fn load_video(base: &Path, e: &ManifestEntry) -> Result<Video> {
    let features = read_features(&resolve(base, &e.feature_path))?;
    let ann = AnnotationFile::read(&resolve(base, &e.annotation_path))?;
    let t = features.rows();
    let id = e.video_id.as_str();
    if ann.video_id != e.video_id {
        return Err(Error::Data(format!(
            "{id}: annotation file is for {:?}",
            ann.video_id
        )));
    }

    let labels = match (&ann.frame_labels, e.labeled) {
        (Some(y), true) => {
            check_len(id, "frame_labels", y.len(), t)?;
            LabelSet::labeled(y.iter().map(|&v| f64::from(v)).collect())?
        }
        (None, true) => {
            return Err(Error::Data(format!(
                "{id}: marked labeled but has no frame_labels"
            )))
        }
        (_, false) => LabelSet::unlabeled(t),
    };

    let importance = match &ann.importance {
        Some(rows) => {
            for r in rows {
                check_len(id, "importance", r.len(), t)?;
            }
            if rows.is_empty() {
                None
            } else {
                Some(Tensor::from_rows(rows)?)
            }
        }
        None => None,
    };
    if let Some(k) = &ann.keyshots {
        for m in k {
            check_len(id, "keyshots", m.len(), t)?;
        }
    }
    let segmentation = ann
        .boundaries
        .clone()
        .map(|b| ShotSegmentation::from_starts(b, t))
        .transpose()
        .map_err(|err| Error::Data(format!("{id}: {err}")))?;

    Ok(Video {
        id: e.video_id.clone(),
        split: e.split,
        fps: ann.fps,
        features,
        labels,
        annotations: AnnotationSet {
            importance,
            keyshots: ann.keyshots.clone().filter(|k| !k.is_empty()),
        },
        segmentation,
    })
}

impl Dataset {
    /// Load every video listed in a manifest file.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::read(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let videos = manifest
            .0
            .iter()
            .map(|e| load_video(base, e))
            .collect::<Result<Vec<_>>>()?;
        let d = videos.first().map(|v| v.features.cols());
        if let Some(bad) = videos.iter().find(|v| Some(v.features.cols()) != d) {
            return Err(Error::Data(format!(
                "{}: feature width {} differs from {}",
                bad.id,
                bad.features.cols(),
                d.unwrap()
            )));
        }
        Ok(Dataset { videos })
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.cols())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Video> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn labeled_train_count(&self) -> usize {
        self.split(Split::Train).filter(|v| v.labels.present()).count()
    }

    /// Keep labels on `round(fraction · n_train)` training videos chosen by a
    /// seeded shuffle (never more than are labeled already) and mask the rest.
    /// Returns the ids that remain labeled.
    pub fn apply_label_fraction(&mut self, fraction: f64, seed: u64) -> Result<Vec<String>> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Usage(format!(
                "label fraction {fraction} outside [0, 1]"
            )));
        }
        let n_train = self.split(Split::Train).count();
        let mut candidates: Vec<usize> = self
            .videos
            .iter()
            .enumerate()
            .filter(|(_, v)| v.split == Split::Train && v.labels.present())
            .map(|(i, _)| i)
            .collect();
        let keep = ((fraction * n_train as f64).round() as usize).min(candidates.len());
        candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let kept: HashSet<usize> = candidates[..keep].iter().copied().collect();
        for &i in &candidates[keep..] {
            let v = &mut self.videos[i];
            v.labels = v.labels.masked();
        }
        let mut ids: Vec<String> = kept.iter().map(|&i| self.videos[i].id.clone()).collect();
        ids.sort();
        Ok(ids)
    }

    /// Remove every label value; used by unsupervised training.
    pub fn strip_labels(&mut self) {
        for v in &mut self.videos {
            v.labels = v.labels.masked();
        }
    }
}
