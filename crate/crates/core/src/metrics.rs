//! Evaluation protocols: keyshot F-score against annotator summaries and
//! rank correlation of raw scores against annotator importance.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Best-matching annotator (SumMe convention).
    Max,
    /// Average over annotators (TvSum convention).
    #[default]
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" | "avg" => Ok(Aggregation::Mean),
            other => Err(Error::Usage(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// Per-annotator ground truth for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    /// `A × T` frame importance.
    pub importance: Option<Tensor>,
    /// `A` keyshot masks of length `T`.
    pub keyshots: Option<Vec<Vec<bool>>>,
}

impl AnnotationSet {
    pub fn annotators(&self) -> usize {
        match (&self.importance, &self.keyshots) {
            (Some(m), _) => m.rows(),
            (None, Some(k)) => k.len(),
            (None, None) => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1: f64,
    pub kendall_tau: f64,
    pub spearman_rho: f64,
    pub aggregation: Aggregation,
}

/// Overlap F-score between a predicted and a ground-truth frame mask.
pub fn fscore(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!(
            "mask lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let overlap = pred.iter().zip(gt).filter(|(&p, &g)| p && g).count() as f64;
    let np = pred.iter().filter(|&&p| p).count() as f64;
    let ng = gt.iter().filter(|&&g| g).count() as f64;
    if np == 0.0 || ng == 0.0 || overlap == 0.0 {
        return Ok(0.0);
    }
    let (p, r) = (overlap / np, overlap / ng);
    Ok(2.0 * p * r / (p + r))
}

pub fn fscore_multi(pred: &[bool], ann: &AnnotationSet, agg: Aggregation) -> Result<f64> {
    let masks = ann
        .keyshots
        .as_ref()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Data("annotation has no keyshot masks".into()))?;
    let scores = masks
        .iter()
        .map(|m| fscore(pred, m))
        .collect::<Result<Vec<f64>>>()?;
    Ok(match agg {
        Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Data("correlation needs at least 2 observations".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in correlation input".into()));
    }
    Ok(())
}

/// Number of tied pairs summed over runs of equal values in a sorted slice.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort counting inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Tie-corrected Kendall τ-b in O(n log n); 0 when either input is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let ties_a = tied_pairs(&pairs, |x, y| x.0 == y.0);
    let ties_joint = tied_pairs(&pairs, |x, y| x.0 == y.0 && x.1 == y.1);

    let mut bs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; bs.len()];
    let swaps = sort_count_swaps(&mut bs, &mut buf);
    let ties_b = tied_pairs(&bs, |x, y| x == y);

    let total = n * (n - 1) / 2;
    if ties_a == total || ties_b == total {
        return Ok(0.0);
    }
    let concordant_minus_discordant =
        total as f64 - ties_a as f64 - ties_b as f64 + ties_joint as f64 - 2.0 * swaps as f64;
    let denom = ((total - ties_a) as f64 * (total - ties_b) as f64).sqrt();
    Ok(concordant_minus_discordant / denom)
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's ρ as the Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Mean τ and ρ of `pred` against every annotator's importance vector.
pub fn rank_protocol(pred: &[f64], ann: &AnnotationSet) -> Result<(f64, f64)> {
    let imp = ann
        .importance
        .as_ref()
        .ok_or_else(|| Error::Data("annotation has no importance scores".into()))?;
    let a = imp.rows();
    let (mut tau, mut rho) = (0.0, 0.0);
    for k in 0..a {
        tau += kendall_tau(pred, imp.row_slice(k))?;
        rho += spearman_rho(pred, imp.row_slice(k))?;
    }
    Ok((tau / a as f64, rho / a as f64))
}
