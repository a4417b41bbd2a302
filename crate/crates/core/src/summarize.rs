//! Keyshot summaries: shot segmentation, shot scoring and budgeted 0/1
//! knapsack selection.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Default summary length as a fraction of the video.
pub const DEFAULT_BUDGET: f64 = 0.15;

/// Partition of frames `0..T` into contiguous non-empty shots, stored as
/// ascending shot start indices beginning at 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSegmentation {
    starts: Vec<usize>,
    frames: usize,
}

impl ShotSegmentation {
    pub fn from_starts(starts: Vec<usize>, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Data("segmentation of an empty video".into()));
        }
        if starts.first() != Some(&0) {
            return Err(Error::Data("shot boundaries must start at frame 0".into()));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("shot boundaries must be strictly ascending".into()));
        }
        if *starts.last().unwrap() >= frames {
            return Err(Error::Data(format!(
                "shot boundary {} outside video of {frames} frames",
                starts.last().unwrap()
            )));
        }
        Ok(ShotSegmentation { starts, frames })
    }

    /// One shot spanning the whole video.
    pub fn single(frames: usize) -> Self {
        assert!(frames > 0);
        ShotSegmentation {
            starts: vec![0],
            frames,
        }
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_shots(&self) -> usize {
        self.starts.len()
    }

    pub fn shot(&self, s: usize) -> Range<usize> {
        let end = self.starts.get(s + 1).copied().unwrap_or(self.frames);
        self.starts[s]..end
    }

    pub fn shots(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_shots()).map(|s| self.shot(s))
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.shots().map(|r| r.len()).collect()
    }

    pub fn shot_index_per_frame(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.frames);
        for (s, r) in self.shots().enumerate() {
            out.extend(std::iter::repeat_n(s, r.len()));
        }
        out
    }
}

/// Fixed-length shots; the last one may be shorter.
pub fn segment_uniform(frames: usize, target_len: usize) -> Result<ShotSegmentation> {
    if target_len == 0 {
        return Err(Error::Usage("target shot length must be at least 1".into()));
    }
    if frames == 0 {
        return Err(Error::Data("segmentation of an empty video".into()));
    }
    ShotSegmentation::from_starts((0..frames).step_by(target_len).collect(), frames)
}

/// Prefix sums for O(d) segment costs.
struct SegmentCost {
    d: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl SegmentCost {
    fn new(x: &Tensor) -> Self {
        let (t, d) = (x.rows(), x.cols());
        let mut sum = vec![0.0; (t + 1) * d];
        let mut sq = vec![0.0; t + 1];
        for i in 0..t {
            let row = x.row_slice(i);
            for j in 0..d {
                sum[(i + 1) * d + j] = sum[i * d + j] + row[j];
            }
            sq[i + 1] = sq[i] + row.iter().map(|v| v * v).sum::<f64>();
        }
        SegmentCost { d, sum, sq }
    }

    /// Sum of squared deviations from the mean over frames `a..b`.
    fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        let mut mean_sq = 0.0;
        for j in 0..self.d {
            let s = self.sum[b * self.d + j] - self.sum[a * self.d + j];
            mean_sq += s * s;
        }
        (self.sq[b] - self.sq[a] - mean_sq / n).max(0.0)
    }

    /// Best split point inside `a..b` and the cost reduction it achieves.
    fn best_split(&self, a: usize, b: usize) -> Option<(usize, f64)> {
        let whole = self.cost(a, b);
        (a + 1..b)
            .map(|m| (m, whole - self.cost(a, m) - self.cost(m, b)))
            .fold(None, |best: Option<(usize, f64)>, cand| match best {
                Some(bst) if bst.1 >= cand.1 => Some(bst),
                _ => Some(cand),
            })
    }
}

/// Minimum cost reduction for a split to be accepted.
const MIN_SPLIT_GAIN: f64 = 1e-9;

/// Greedy binary segmentation: repeatedly split the segment whose best split
/// most reduces the within-segment squared deviation, until `max_shots`
/// shots exist or no split gains at least `1e-9`.
pub fn segment_changepoint(x: &Tensor, max_shots: usize) -> Result<ShotSegmentation> {
    if max_shots == 0 {
        return Err(Error::Usage("max_shots must be at least 1".into()));
    }
    let t = x.rows();
    if t < 2 {
        return Err(Error::Data("change-point segmentation needs at least 2 frames".into()));
    }
    let cost = SegmentCost::new(x);
    let mut bounds = vec![0, t];
    while bounds.len() - 1 < max_shots {
        let best = bounds
            .windows(2)
            .filter_map(|w| cost.best_split(w[0], w[1]))
            .fold(None, |best: Option<(usize, f64)>, cand| match best {
                Some(bst) if bst.1 >= cand.1 => Some(bst),
                _ => Some(cand),
            });
        match best {
            Some((m, gain)) if gain >= MIN_SPLIT_GAIN => {
                let pos = bounds.partition_point(|&b| b < m);
                bounds.insert(pos, m);
            }
            _ => break,
        }
    }
    bounds.pop();
    ShotSegmentation::from_starts(bounds, t)
}

/// Mean frame score and frame count of every shot.
pub fn shot_values(scores: &[f64], seg: &ShotSegmentation) -> Result<Vec<(f64, usize)>> {
    if scores.len() != seg.frames() {
        return Err(Error::Data(format!(
            "{} scores for a segmentation of {} frames",
            scores.len(),
            seg.frames()
        )));
    }
    Ok(seg
        .shots()
        .map(|r| {
            let n = r.len();
            (scores[r].iter().sum::<f64>() / n as f64, n)
        })
        .collect())
}

/// Exact 0/1 knapsack maximizing total value with total length at most
/// `capacity`. Among optimal sets, the one whose ascending index list is
/// lexicographically smallest is returned.
pub fn knapsack_select(values: &[f64], lengths: &[usize], capacity: usize) -> Vec<usize> {
    assert_eq!(values.len(), lengths.len());
    let n = values.len();
    let w = capacity + 1;
    // best[i][c]: optimum over items i.. with capacity c; filled from the back so
    // that reconstruction can prefer taking the earliest item on ties.
    let mut best = vec![0.0f64; (n + 1) * w];
    let mut take = vec![false; n * w];
    for i in (0..n).rev() {
        for c in 0..w {
            let skip = best[(i + 1) * w + c];
            let mut v = skip;
            if lengths[i] <= c {
                let with = values[i] + best[(i + 1) * w + c - lengths[i]];
                if with >= skip {
                    v = with;
                    take[i * w + c] = true;
                }
            }
            best[i * w + c] = v;
        }
    }
    let mut chosen = Vec::new();
    let mut c = capacity;
    for i in 0..n {
        if take[i * w + c] {
            chosen.push(i);
            c -= lengths[i];
        }
    }
    chosen
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryMask {
    pub selected: Vec<bool>,
    pub budget_fraction: f64,
    pub selected_shots: Vec<usize>,
}

impl SummaryMask {
    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn selected_frames(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

/// Frame capacity for a budget fraction.
pub fn capacity(frames: usize, budget_fraction: f64) -> usize {
    (budget_fraction * frames as f64 + 1e-9).floor() as usize
}

/// Knapsack keyshot selection under `floor(budget_fraction·T)` frames.
pub fn make_summary(
    scores: &[f64],
    seg: &ShotSegmentation,
    budget_fraction: f64,
) -> Result<SummaryMask> {
    if !(0.0..=1.0).contains(&budget_fraction) {
        return Err(Error::Usage(format!(
            "budget fraction {budget_fraction} outside [0, 1]"
        )));
    }
    let shots = shot_values(scores, seg)?;
    let (values, lengths): (Vec<f64>, Vec<usize>) = shots.into_iter().unzip();
    let cap = capacity(seg.frames(), budget_fraction);
    let chosen = knapsack_select(&values, &lengths, cap);
    let mut selected = vec![false; seg.frames()];
    for &s in &chosen {
        selected[seg.shot(s)].iter_mut().for_each(|v| *v = true);
    }
    Ok(SummaryMask {
        selected,
        budget_fraction,
        selected_shots: chosen,
    })
}

/// JSON export of a summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryExport {
    pub video_id: String,
    pub budget_fraction: f64,
    pub boundaries: Vec<usize>,
    pub selected_shots: Vec<usize>,
    pub selected_frames: Vec<usize>,
}

impl SummaryExport {
    pub fn new(video_id: &str, seg: &ShotSegmentation, mask: &SummaryMask) -> Self {
        SummaryExport {
            video_id: video_id.to_string(),
            budget_fraction: mask.budget_fraction,
            boundaries: seg.starts().to_vec(),
            selected_shots: mask.selected_shots.clone(),
            selected_frames: mask.selected_frames(),
        }
    }
}
