//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use mcvsa::diffcore::Tensor;
use mcvsa::objectives::LabelSet;
use mcvsa::pipeline::{video_loss, ModelParams, TrainConfig};
use mcvsa::summarize::ShotSegmentation;

/// Kendall τ-b by direct enumeration of all pairs.
pub fn tau_b_quadratic(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut conc, mut disc, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]).unwrap();
            let db = b[i].partial_cmp(&b[j]).unwrap();
            if da.is_eq() && db.is_eq() {
                continue;
            } else if da.is_eq() {
                ta += 1;
            } else if db.is_eq() {
                tb += 1;
            } else if da == db {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    // τ-b = (C − D) / sqrt((C + D + T_b-only) (C + D + T_a-only))
    let denom = (((conc + disc + ta) as f64) * ((conc + disc + tb) as f64)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (conc - disc) as f64 / denom
    }
}

/// Mid-ranks by counting, O(n²).
pub fn ranks_quadratic(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Spearman ρ from the explicit pairwise covariance of mid-ranks:
/// `Σ_{i<j} (r_i − r_j)(s_i − s_j)` over the same for each variable.
pub fn rho_quadratic(a: &[f64], b: &[f64]) -> f64 {
    let r = ranks_quadratic(a);
    let s = ranks_quadratic(b);
    let (mut rs, mut rr, mut ss) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let (dr, ds) = (r[i] - r[j], s[i] - s[j]);
            rs += dr * ds;
            rr += dr * dr;
            ss += ds * ds;
        }
    }
    if rr == 0.0 || ss == 0.0 {
        0.0
    } else {
        rs / (rr * ss).sqrt()
    }
}

/// Best total value over all subsets within capacity.
pub fn knapsack_exhaustive(values: &[f64], lengths: &[usize], capacity: usize) -> f64 {
    let n = values.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        let (mut v, mut w) = (0.0, 0usize);
        for i in 0..n {
            if mask >> i & 1 == 1 {
                v += values[i];
                w += lengths[i];
            }
        }
        if w <= capacity && v > best {
            best = v;
        }
    }
    best
}

/// Scalar-loop single-head attention: softmax(Q Kᵀ / s) V with
/// Q = X P Wq etc. Returns (output, weights) as nested vectors.
pub fn head_oracle(
    x: &Tensor,
    p: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    scaled: bool,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mm = |a: &Vec<Vec<f64>>, b: &Tensor| -> Vec<Vec<f64>> {
        a.iter()
            .map(|row| {
                (0..b.cols())
                    .map(|j| (0..b.rows()).map(|k| row[k] * b.get(k, j)).sum())
                    .collect()
            })
            .collect()
    };
    let xs: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row_slice(i).to_vec()).collect();
    let s = mm(&xs, p);
    let (q, k, v) = (mm(&s, wq), mm(&s, wk), mm(&s, wv));
    let dn = p.cols() as f64;
    let scale = if scaled { dn.sqrt() } else { 1.0 };
    let t = x.rows();
    let mut a = vec![vec![0.0; t]; t];
    for i in 0..t {
        let logits: Vec<f64> = (0..t)
            .map(|j| q[i].iter().zip(&k[j]).map(|(x, y)| x * y).sum::<f64>() / scale)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..t {
            a[i][j] = e[j] / z;
        }
    }
    let out = (0..t)
        .map(|i| {
            (0..v[0].len())
                .map(|c| (0..t).map(|j| a[i][j] * v[j][c]).sum())
                .collect()
        })
        .collect();
    (out, a)
}

#[derive(Debug)]
pub struct ModelCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// (tensor index, flat coordinate, analytic, numeric) of the worst entry.
    pub worst: (usize, usize, f64, f64),
}

/// Five-point central differences (error O(eps⁴)) of the training objective
/// against the analytic gradient produced by the training path
/// (`video_loss` + backward).
/// Relative error uses a floor of `floor` on the denominator.
pub fn model_grad_check(
    params: &ModelParams,
    cfg: &TrainConfig,
    x: &Tensor,
    labels: &LabelSet,
    seg: &ShotSegmentation,
    eps: f64,
    floor: f64,
) -> ModelCheck {
    let value = |p: &ModelParams| -> f64 {
        let l = video_loss(p, cfg, x, labels, seg).unwrap().unwrap();
        l.graph.value(l.total).item()
    };
    let mut l = video_loss(params, cfg, x, labels, seg).unwrap().unwrap();
    l.graph.backward(l.total).unwrap();
    let analytic: Vec<Option<Tensor>> = l
        .vars
        .vars()
        .iter()
        .map(|v| v.and_then(|v| l.graph.grad(v).cloned()))
        .collect();

    let mut work = params.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut report = ModelCheck {
        max_rel_error: 0.0,
        coordinates: 0,
        worst: (0, 0, 0.0, 0.0),
    };
    for (ti, &len) in shapes.iter().enumerate() {
        for k in 0..len {
            let orig = work.tensors()[ti].data()[k];
            let mut f = |h: f64| {
                work.tensors_mut()[ti].data_mut()[k] = orig + h;
                value(&work)
            };
            let (f2p, f1p, f1m, f2m) = (f(2.0 * eps), f(eps), f(-eps), f(-2.0 * eps));
            work.tensors_mut()[ti].data_mut()[k] = orig;
            let numeric = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * eps);
            let a = analytic[ti].as_ref().map_or(0.0, |t| t.data()[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.coordinates += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (ti, k, a, numeric);
            }
        }
    }
    report
}

/// Apply a row permutation: row `i` of the result is row `perm[i]` of `x`.
pub fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    x.select_rows(perm)
}
