//! Classifier head and the training losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::summarize::ShotSegmentation;

/// Probability clamp inside binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `d × 1`.
    pub w: Tensor,
    /// `1 × 1`.
    pub b: Tensor,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        ClassifierParams {
            w: Tensor::uniform(d, 1, bound, rng),
            b: Tensor::uniform(1, 1, bound, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        ClassifierParams {
            w: Tensor::zeros(d, 1),
            b: Tensor::zeros(1, 1),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ClassifierVars {
        ClassifierVars {
            w: g.leaf(self.w.clone(), trainable),
            b: g.leaf(self.b.clone(), trainable),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierVars {
    pub w: Var,
    pub b: Var,
}

/// Per-frame binary highlight labels of one video, or their absence.
///
/// Unlabeled videos carry no label values at all, so nothing downstream can
/// read them by accident.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    y: Option<Vec<f64>>,
    len: usize,
}

impl LabelSet {
    pub fn labeled(y: Vec<f64>) -> Result<Self> {
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("labels must be 0 or 1, found {v}")));
        }
        Ok(LabelSet {
            len: y.len(),
            y: Some(y),
        })
    }

    pub fn unlabeled(len: usize) -> Self {
        LabelSet { y: None, len }
    }

    pub fn present(&self) -> bool {
        self.y.is_some()
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Drop the label values, keeping only the length.
    pub fn masked(&self) -> Self {
        Self::unlabeled(self.len)
    }
}

/// `sigmoid(z·w + b)` per frame, as a `T×1` column.
pub fn classify(g: &mut Graph, z: Var, p: &ClassifierVars) -> Result<Var> {
    let logits = g.matmul(z, p.w)?;
    let biased = g.add_row(logits, p.b)?;
    Ok(g.sigmoid(biased))
}

/// Mean binary cross-entropy against the labels of a labeled video.
pub fn cls_loss(g: &mut Graph, scores: Var, y: &LabelSet) -> Result<Var> {
    let labels = y
        .values()
        .ok_or_else(|| Error::Usage("classification loss on an unlabeled video".into()))?;
    g.bce_mean(scores, labels, BCE_EPS)
}

/// How pair weights are chosen inside each diversity segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DiversityWeighting {
    /// Every ordered pair weighted by the product of the two frame scores.
    #[default]
    Soft,
    /// Only pairs among the top `fraction` of frames by score in each
    /// segment, still weighted by their score product.
    HardTopK { fraction: f64 },
}

/// Cosine similarity matrix with zero-norm rows treated as dissimilar.
pub fn cosine_matrix(x: &Tensor) -> Tensor {
    let t = x.rows();
    let norms: Vec<f64> = (0..t)
        .map(|i| x.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut c = Tensor::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = x.row_slice(i).iter().zip(x.row_slice(j)).map(|(a, b)| a * b).sum();
            c.set(i, j, dot / (norms[i] * norms[j]));
        }
    }
    c
}

/// Score-weighted pairwise cosine similarity within each segment:
/// `Σ_s Σ_{t≠t' in s} w_t w_t' cos(x_t, x_t')`.
///
/// `x` is treated as fixed; gradients flow through `scores` only.
pub fn div_loss(
    g: &mut Graph,
    x: &Tensor,
    scores: Var,
    seg: &ShotSegmentation,
    weighting: DiversityWeighting,
) -> Result<Var> {
    let t = x.rows();
    if seg.frames() != t || g.value(scores).len() != t {
        return Err(Error::Data(format!(
            "diversity segmentation covers {} frames, features have {t}, scores have {}",
            seg.frames(),
            g.value(scores).len()
        )));
    }
    let mut kernel = cosine_matrix(x);
    let active: Vec<bool> = match weighting {
        DiversityWeighting::Soft => vec![true; t],
        DiversityWeighting::HardTopK { fraction } => {
            let s = g.value(scores).data().to_vec();
            let mut keep = vec![false; t];
            for shot in seg.shots() {
                let k = ((fraction * shot.len() as f64).ceil() as usize).clamp(1, shot.len());
                let mut idx: Vec<usize> = shot.collect();
                idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
                for &i in &idx[..k] {
                    keep[i] = true;
                }
            }
            keep
        }
    };
    let shot_of = seg.shot_index_per_frame();
    for i in 0..t {
        for j in 0..t {
            if i == j || shot_of[i] != shot_of[j] || !active[i] || !active[j] {
                kernel.set(i, j, 0.0);
            }
        }
    }
    let k = g.constant(kernel);
    let ks = g.matmul(k, scores)?;
    let weighted = g.mul(scores, ks)?;
    Ok(g.sum(weighted))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Supervised,
    Semi,
    Unsupervised,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "semi" | "semi-supervised" => Ok(Mode::Semi),
            "unsupervised" => Ok(Mode::Unsupervised),
            other => Err(Error::Usage(format!("unknown mode {other:?}"))),
        }
    }
}

/// Per-term multipliers; all ones reproduces the plain sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cls: f64,
    pub rec: f64,
    pub con: f64,
    pub div: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            rec: 1.0,
            con: 1.0,
            div: 1.0,
        }
    }
}

/// Loss values of one step. Absent terms are `None` (serialized as `null`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mode: Mode,
    pub cls: Option<f64>,
    pub rec: Option<f64>,
    pub con: Option<f64>,
    pub div: Option<f64>,
    pub total: f64,
}

/// Which terms a mode combines: `cls + rec + con` for supervised and
/// semi-supervised training (cls only where labels exist), and
/// `rec + con + div` without labels.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<T> {
    pub cls: Option<T>,
    pub rec: Option<T>,
    pub con: Option<T>,
    pub div: Option<T>,
}

impl<T> Default for LossTerms<T> {
    fn default() -> Self {
        LossTerms {
            cls: None,
            rec: None,
            con: None,
            div: None,
        }
    }
}

fn check_terms<T>(mode: Mode, t: &LossTerms<T>) -> Result<()> {
    match mode {
        Mode::Supervised if t.cls.is_none() => Err(Error::Usage(
            "supervised mode requires a classification term".into(),
        )),
        Mode::Supervised | Mode::Semi if t.div.is_some() => Err(Error::Usage(
            "the diversity term is only used in unsupervised mode".into(),
        )),
        Mode::Unsupervised if t.cls.is_some() => Err(Error::Usage(
            "unsupervised mode cannot use a classification term".into(),
        )),
        _ => Ok(()),
    }
}

/// Combine scalar loss values into a report.
pub fn total_loss(mode: Mode, parts: LossTerms<f64>, w: &LossWeights) -> Result<LossReport> {
    check_terms(mode, &parts)?;
    let total = parts.cls.map_or(0.0, |v| w.cls * v)
        + parts.rec.map_or(0.0, |v| w.rec * v)
        + parts.con.map_or(0.0, |v| w.con * v)
        + parts.div.map_or(0.0, |v| w.div * v);
    Ok(LossReport {
        mode,
        cls: parts.cls,
        rec: parts.rec,
        con: parts.con,
        div: parts.div,
        total,
    })
}

/// Graph version of [`total_loss`]; returns the total node.
pub fn total_loss_graph(
    g: &mut Graph,
    mode: Mode,
    parts: LossTerms<Var>,
    w: &LossWeights,
) -> Result<Var> {
    check_terms(mode, &parts)?;
    let mut acc: Option<Var> = None;
    for (term, weight) in [
        (parts.cls, w.cls),
        (parts.rec, w.rec),
        (parts.con, w.con),
        (parts.div, w.div),
    ] {
        let Some(v) = term else { continue };
        let v = if weight == 1.0 { v } else { g.scale(v, weight) };
        acc = Some(match acc {
            None => v,
            Some(a) => g.add(a, v)?,
        });
    }
    acc.ok_or_else(|| Error::Usage("no loss terms to combine".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, sigmoid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn scores_of(z: &Tensor, p: &ClassifierParams) -> Vec<f64> {
        let mut g = Graph::new();
        let pv = p.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let s = classify(&mut g, zv, &pv).unwrap();
        g.value(s).data().to_vec()
    }

    #[test]
    fn zero_classifier_gives_half() {
        let z = Tensor::uniform(4, 3, 1.0, &mut rng(1));
        assert!(scores_of(&z, &ClassifierParams::zeros(3)).iter().all(|&s| s == 0.5));
    }

    #[test]
    fn classify_monotone_and_matches_oracle() {
        let mut r = rng(2);
        let p = ClassifierParams::init(3, &mut r);
        let z = Tensor::uniform(5, 3, 1.0, &mut r);
        let s = scores_of(&z, &p);
        for (t, &v) in s.iter().enumerate() {
            let logit: f64 =
                (0..3).map(|k| z.get(t, k) * p.w.get(k, 0)).sum::<f64>() + p.b.item();
            assert!((v - 1.0 / (1.0 + (-logit).exp())).abs() < 1e-12);
        }
        // Raising z·w raises the score.
        let logits: Vec<f64> = (0..5)
            .map(|t| (0..3).map(|k| z.get(t, k) * p.w.get(k, 0)).sum())
            .collect();
        for a in 0..5 {
            for b in 0..5 {
                if logits[a] < logits[b] {
                    assert!(s[a] < s[b]);
                }
            }
        }
        assert!(sigmoid(1.0) > sigmoid(0.5));
    }

    fn bce(pred: &[f64], y: &[f64]) -> f64 {
        let mut g = Graph::new();
        let p = g.constant(Tensor::column(pred.to_vec()).unwrap());
        let l = cls_loss(&mut g, p, &LabelSet::labeled(y.to_vec()).unwrap()).unwrap();
        g.value(l).item()
    }

    #[test]
    fn bce_examples() {
        assert!((bce(&[0.5; 4], &[1.0, 0.0, 1.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce(&[1.0 - BCE_EPS, BCE_EPS], &[1.0, 0.0]) <= 1.2e-7);
        assert!(bce(&[1.0, 0.0], &[1.0, 0.0]) <= 1.2e-7);
        let want = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((bce(&[0.8, 0.3], &[1.0, 0.0]) - want).abs() < 1e-15);
        assert!((want - 0.28990).abs() < 1e-5);
    }

    #[test]
    fn bce_refuses_unlabeled() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::column(vec![0.5]).unwrap());
        let err = cls_loss(&mut g, p, &LabelSet::unlabeled(1)).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert!(LabelSet::labeled(vec![0.0, 0.5]).is_err());
        assert!(LabelSet::labeled(vec![1.0]).unwrap().masked().values().is_none());
    }

    fn div(x: &Tensor, s: &[f64], seg: &ShotSegmentation, w: DiversityWeighting) -> f64 {
        let mut g = Graph::new();
        let sv = g.constant(Tensor::column(s.to_vec()).unwrap());
        let l = div_loss(&mut g, x, sv, seg, w).unwrap();
        g.value(l).item()
    }

    /// Direct double loop over ordered pairs.
    fn div_oracle(x: &Tensor, s: &[f64], seg: &ShotSegmentation) -> f64 {
        let mut total = 0.0;
        for shot in seg.shots() {
            for i in shot.clone() {
                for j in shot.clone() {
                    if i == j {
                        continue;
                    }
                    let (a, b) = (x.row_slice(i), x.row_slice(j));
                    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if na > 0.0 && nb > 0.0 {
                        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                        total += s[i] * s[j] * dot / (na * nb);
                    }
                }
            }
        }
        total
    }

    #[test]
    fn diversity_examples() {
        let mut r = rng(3);
        let x = Tensor::uniform(4, 3, 1.0, &mut r);
        let singles = ShotSegmentation::from_starts(vec![0, 1, 2, 3], 4).unwrap();
        assert_eq!(div(&x, &[1.0; 4], &singles, DiversityWeighting::Soft), 0.0);

        let same = Tensor::matrix(2, 2, vec![0.6, 0.8, 0.6, 0.8]).unwrap();
        let one = ShotSegmentation::single(2);
        assert!((div(&same, &[1.0, 1.0], &one, DiversityWeighting::Soft) - 2.0).abs() < 1e-15);

        let ortho = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(div(&ortho, &[0.3, 0.9], &one, DiversityWeighting::Soft), 0.0);

        let zero_row = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(div(&zero_row, &[1.0, 1.0], &one, DiversityWeighting::Soft), 0.0);

        let seg = ShotSegmentation::from_starts(vec![0, 2], 4).unwrap();
        let s = [0.2, 0.9, 0.4, 0.7];
        let got = div(&x, &s, &seg, DiversityWeighting::Soft);
        assert!((got - div_oracle(&x, &s, &seg)).abs() < 1e-12);

        let bad = ShotSegmentation::single(3);
        let mut g = Graph::new();
        let sv = g.constant(Tensor::column(s.to_vec()).unwrap());
        assert!(div_loss(&mut g, &x, sv, &bad, DiversityWeighting::Soft).is_err());
    }

    #[test]
    fn diversity_scale_free() {
        let mut r = rng(4);
        let x = Tensor::uniform(6, 4, 1.0, &mut r);
        let mut y = x.clone();
        for i in 0..6 {
            let c = 0.1 + i as f64;
            for j in 0..4 {
                y.set(i, j, x.get(i, j) * c);
            }
        }
        let seg = ShotSegmentation::from_starts(vec![0, 3], 6).unwrap();
        let s = [0.1, 0.5, 0.9, 0.3, 0.2, 0.8];
        let a = div(&x, &s, &seg, DiversityWeighting::Soft);
        let b = div(&y, &s, &seg, DiversityWeighting::Soft);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn hard_topk_restricts_pairs() {
        let x = Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let seg = ShotSegmentation::single(3);
        let s = [0.9, 0.1, 0.8];
        // Top 2 of 3 frames: only the pair (0, 2) in both orders.
        let v = div(&x, &s, &seg, DiversityWeighting::HardTopK { fraction: 0.6 });
        assert!((v - 2.0 * 0.9 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn total_loss_modes() {
        let w = LossWeights::default();
        let r = total_loss(
            Mode::Supervised,
            LossTerms {
                cls: Some(1.0),
                rec: Some(2.0),
                con: Some(3.0),
                div: None,
            },
            &w,
        )
        .unwrap();
        assert_eq!(r.total, 6.0);

        let r = total_loss(
            Mode::Semi,
            LossTerms {
                cls: None,
                rec: Some(2.5),
                con: Some(0.25),
                div: None,
            },
            &w,
        )
        .unwrap();
        assert_eq!(r.total, 2.5 + 0.25);
        assert_eq!(r.cls, None);

        let r = total_loss(
            Mode::Unsupervised,
            LossTerms {
                cls: None,
                rec: Some(2.0),
                con: Some(3.0),
                div: Some(0.5),
            },
            &w,
        )
        .unwrap();
        assert_eq!(r.total, 5.5);

        assert!(total_loss(Mode::Supervised, LossTerms::default(), &w).is_err());
        let with_cls = LossTerms {
            cls: Some(1.0),
            ..Default::default()
        };
        assert!(total_loss(Mode::Unsupervised, with_cls, &w).is_err());
    }

    #[test]
    fn total_loss_is_linear_in_each_term() {
        let base = LossTerms {
            cls: Some(0.7),
            rec: Some(1.3),
            con: Some(0.2),
            div: None,
        };
        let w = LossWeights::default();
        let t0 = total_loss(Mode::Semi, base, &w).unwrap().total;
        let scaled = LossTerms {
            rec: Some(1.3 * 3.0),
            ..base
        };
        let t1 = total_loss(Mode::Semi, scaled, &w).unwrap().total;
        assert!((t1 - t0 - 2.0 * 1.3).abs() < 1e-12);
    }

    #[test]
    fn losses_pass_grad_check() {
        let mut r = rng(5);
        let z = Tensor::uniform(6, 4, 1.0, &mut r);
        let x = Tensor::uniform(6, 4, 1.0, &mut r);
        let p = ClassifierParams::init(4, &mut r);
        let labels = LabelSet::labeled(vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let seg = ShotSegmentation::from_starts(vec![0, 2, 5], 6).unwrap();
        let report = grad_check(
            |g, v| {
                let s = classify(g, v[0], &ClassifierVars { w: v[1], b: v[2] })?;
                let c = cls_loss(g, s, &labels)?;
                let d = div_loss(g, &x, s, &seg, DiversityWeighting::Soft)?;
                g.add(c, d)
            },
            &[z, p.w, p.b],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
