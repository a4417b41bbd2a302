use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied before the update.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(5.0),
        }
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.rows(), t.cols());
        AdamState {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

pub fn global_norm(grads: &[Option<&Tensor>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// One Adam update with bias correction. Missing gradients count as zero.
/// Returns the gradient norm before clipping.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&Tensor>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at step {}: tensor {i}, element {k} = {}",
                    state.step + 1,
                    g.data()[k]
                )));
            }
        }
    }
    let norm = global_norm(grads);
    let factor = match cfg.clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = grads[i].map(Tensor::data);
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g.map_or(0.0, |g| g[k] * factor);
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut Tensor, g: &Tensor, s: &mut AdamState, cfg: &AdamConfig) -> f64 {
        adam_step(&mut [p], &[Some(g)], s, cfg).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::row(vec![0.3, -2.0, 5.0]).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&[&p]);
        for _ in 0..3 {
            run(&mut p, &Tensor::zeros(1, 3), &mut s, &AdamConfig::default());
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        for g in [0.5, -3.0, 1e-3] {
            let mut p = Tensor::row(vec![1.0]).unwrap();
            let mut s = AdamState::new(&[&p]);
            run(&mut p, &Tensor::row(vec![g]).unwrap(), &mut s, &cfg);
            let step = 1.0 - p.data()[0];
            assert!((step.abs() - cfg.lr).abs() < 1e-9 * cfg.lr.max(1.0) + 1e-11);
            assert_eq!(step.signum(), g.signum());
        }
    }

    /// f(w) = ‖w‖², gradient 2w, from w0 = [1, 1], against a scalar
    /// restatement of the bias-corrected update. lr = 0.015 is small enough
    /// that momentum does not overshoot within 100 steps.
    #[test]
    fn quadratic_matches_scalar_oracle() {
        let cfg = AdamConfig {
            lr: 0.015,
            ..Default::default()
        };
        let mut w = Tensor::row(vec![1.0, 1.0]).unwrap();
        let mut s = AdamState::new(&[&w]);
        let mut o = [(1.0f64, 0.0f64, 0.0f64); 2];
        let mut norms = Vec::new();
        for k in 1..=100 {
            let g = Tensor::row(w.data().iter().map(|v| 2.0 * v).collect()).unwrap();
            run(&mut w, &g, &mut s, &cfg);
            for (x, m, v) in o.iter_mut() {
                let g = 2.0 * *x;
                *m = 0.9 * *m + 0.1 * g;
                *v = 0.999 * *v + 0.001 * g * g;
                let mh = *m / (1.0 - 0.9f64.powi(k));
                let vh = *v / (1.0 - 0.999f64.powi(k));
                *x -= 0.015 * mh / (vh.sqrt() + 1e-8);
            }
            for (a, (b, _, _)) in w.data().iter().zip(&o) {
                assert!((a - b).abs() < 1e-12, "step {k}: {a} vs {b}");
            }
            norms.push(w.data().iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        for k in 5..norms.len() {
            assert!(norms[k] < norms[k - 1], "step {}: {norms:?}", k + 1);
        }
        assert!(*norms.last().unwrap() < 0.1, "{norms:?}");
    }

    #[test]
    fn clipping_scales_to_norm() {
        let g = Tensor::row(vec![30.0, 40.0]).unwrap();
        let cfg = AdamConfig {
            lr: 1.0,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            clip: Some(5.0),
        };
        let mut p = Tensor::row(vec![0.0, 0.0]).unwrap();
        let mut s = AdamState::new(&[&p]);
        assert_eq!(run(&mut p, &g, &mut s, &cfg), 50.0);
        // With β = 0 the update is sign(g); clipping does not change it but
        // does bound the stored moment.
        assert!((s.m[0].data()[0] - 3.0).abs() < 1e-12);
        assert!((s.m[0].data()[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Tensor::row(vec![1.0, 2.0]).unwrap();
        let mut s = AdamState::new(&[&p]);
        let err = adam_step(
            &mut [&mut p],
            &[Some(&Tensor::row(vec![0.0, f64::NAN]).unwrap())],
            &mut s,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("step 1"), "{err}");
        assert_eq!(p.data(), &[1.0, 2.0]);
    }
}
