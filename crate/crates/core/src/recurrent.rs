//! Shared-weight LSTM autoencoder.
//!
//! Gate columns of `W` and `b` are laid out as four blocks of width `u` in the
//! order input, forget, cell candidate, output (`i, f, g, o`).
//! The same encoder parameters embed both the original features `X` and the
//! attended features `Z`; the decoder starts from the embedding of `X` and
//! unrolls on zero inputs.

use rand::Rng;

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `(d_in + u) × 4u`, rows for the input first, then the hidden state.
    pub weights: Tensor,
    /// `1 × 4u`.
    pub bias: Tensor,
    pub input_dim: usize,
    pub units: usize,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, units: usize, rng: &mut R) -> Result<Self> {
        if units == 0 || input_dim == 0 {
            return Err(Error::Usage("LSTM needs positive input and unit counts".into()));
        }
        let fan_in = input_dim + units;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(LstmParams {
            weights: Tensor::uniform(fan_in, 4 * units, bound, rng),
            bias: Tensor::uniform(1, 4 * units, bound, rng),
            input_dim,
            units,
        })
    }

    pub fn zeros(input_dim: usize, units: usize) -> Self {
        LstmParams {
            weights: Tensor::zeros(input_dim + units, 4 * units),
            bias: Tensor::zeros(1, 4 * units),
            input_dim,
            units,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<LstmVars> {
        let weights = g.leaf(self.weights.clone(), trainable);
        let bias = g.leaf(self.bias.clone(), trainable);
        let w_input = g.slice_rows(weights, 0, self.input_dim)?;
        let w_hidden = g.slice_rows(weights, self.input_dim, self.units)?;
        Ok(LstmVars {
            weights,
            bias,
            w_input,
            w_hidden,
            units: self.units,
        })
    }
}

/// Graph handles for one LSTM; `w_input`/`w_hidden` are row slices of `weights`.
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub weights: Var,
    pub bias: Var,
    pub w_input: Var,
    pub w_hidden: Var,
    pub units: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderParams {
    /// Shared by the `X` and `Z` branches.
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// `u × d` readout.
    pub out_proj: Tensor,
}

impl AutoencoderParams {
    pub fn init<R: Rng + ?Sized>(d: usize, units: usize, rng: &mut R) -> Result<Self> {
        Ok(AutoencoderParams {
            encoder: LstmParams::init(d, units, rng)?,
            decoder: LstmParams::init(d, units, rng)?,
            out_proj: Tensor::uniform(units, d, 1.0 / (units as f64).sqrt(), rng),
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<AutoencoderVars> {
        Ok(AutoencoderVars {
            encoder: self.encoder.bind(g, trainable)?,
            decoder: self.decoder.bind(g, trainable)?,
            out_proj: g.leaf(self.out_proj.clone(), trainable),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.encoder.weights,
            &self.encoder.bias,
            &self.decoder.weights,
            &self.decoder.bias,
            &self.out_proj,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.encoder.weights,
            &mut self.encoder.bias,
            &mut self.decoder.weights,
            &mut self.decoder.bias,
            &mut self.out_proj,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct AutoencoderVars {
    pub encoder: LstmVars,
    pub decoder: LstmVars,
    pub out_proj: Var,
}

impl AutoencoderVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.encoder.weights,
            self.encoder.bias,
            self.decoder.weights,
            self.decoder.bias,
            self.out_proj,
        ]
    }
}

/// Final hidden state of the encoder, `1 × u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embedding(pub Var);

fn gates_to_state(g: &mut Graph, gates: Var, c: Var, u: usize) -> Result<(Var, Var)> {
    let i = g.slice_cols(gates, 0, u)?;
    let f = g.slice_cols(gates, u, u)?;
    let gc = g.slice_cols(gates, 2 * u, u)?;
    let o = g.slice_cols(gates, 3 * u, u)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let gc = g.tanh(gc);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, gc)?;
    let c_next = g.add(keep, write)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// One cell update from the concatenated `[x_t; h]` row.
pub fn lstm_step(g: &mut Graph, x_t: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let xh = g.concat_cols(&[x_t, h])?;
    let pre = g.matmul(xh, p.weights)?;
    let gates = g.add_row(pre, p.bias)?;
    gates_to_state(g, gates, c, p.units)
}

/// Run the encoder left to right from a zero state and return `h_T`.
pub fn encode_sequence(g: &mut Graph, seq: Var, p: &LstmVars) -> Result<Embedding> {
    let t_len = g.value(seq).rows();
    if t_len == 0 {
        return Err(Error::Usage("cannot encode an empty sequence".into()));
    }
    let u = p.units;
    // Input contributions for every step in one product.
    let xw = g.matmul(seq, p.w_input)?;
    let mut h = g.constant(Tensor::zeros(1, u));
    let mut c = g.constant(Tensor::zeros(1, u));
    for t in 0..t_len {
        let xt = g.slice_rows(xw, t, 1)?;
        let hw = g.matmul(h, p.w_hidden)?;
        let pre = g.add(xt, hw)?;
        let gates = g.add_row(pre, p.bias)?;
        (h, c) = gates_to_state(g, gates, c, u)?;
    }
    Ok(Embedding(h))
}

/// Unroll the decoder for `t_len` steps from `h = e`, `c = 0` on zero inputs
/// and read out each hidden state through `out_proj`.
pub fn decode_sequence(
    g: &mut Graph,
    e: Embedding,
    t_len: usize,
    dec: &LstmVars,
    out_proj: Var,
) -> Result<Var> {
    if t_len == 0 {
        return Err(Error::Usage("cannot decode zero frames".into()));
    }
    let u = dec.units;
    let mut h = e.0;
    let mut c = g.constant(Tensor::zeros(1, u));
    let mut hs = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        // Zero input rows contribute nothing, so only the recurrent product remains.
        let hw = g.matmul(h, dec.w_hidden)?;
        let gates = g.add_row(hw, dec.bias)?;
        (h, c) = gates_to_state(g, gates, c, u)?;
        hs.push(h);
    }
    let stacked = g.concat_rows(&hs)?;
    g.matmul(stacked, out_proj)
}

/// `Σ_t ‖x̂_t − x_t‖²`, optionally divided by the frame count.
pub fn rec_loss(g: &mut Graph, xhat: Var, x: Var, mean_over_frames: bool) -> Result<Var> {
    let diff = g.sub(xhat, x)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    if mean_over_frames {
        let t = g.value(x).rows() as f64;
        Ok(g.scale(s, 1.0 / t))
    } else {
        Ok(s)
    }
}

/// `‖e_x − e_z‖²`.
pub fn con_loss(g: &mut Graph, ex: Embedding, ez: Embedding) -> Result<Var> {
    let diff = g.sub(ex.0, ez.0)?;
    let sq = g.square(diff);
    Ok(g.sum(sq))
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

    /// Scalar implementation of the cell equations.
    fn step_oracle(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let u = p.units;
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let pre: Vec<f64> = (0..4 * u)
            .map(|j| {
                p.bias.get(0, j) + (0..xh.len()).map(|k| xh[k] * p.weights.get(k, j)).sum::<f64>()
            })
            .collect();
        let mut h2 = vec![0.0; u];
        let mut c2 = vec![0.0; u];
        for k in 0..u {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[u + k]);
            let gg = pre[2 * u + k].tanh();
            let o = sigmoid(pre[3 * u + k]);
            c2[k] = f * c[k] + i * gg;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    fn run_step(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let pv = p.bind(&mut g, false).unwrap();
        let xv = g.constant(Tensor::row(x.to_vec()).unwrap());
        let hv = g.constant(Tensor::row(h.to_vec()).unwrap());
        let cv = g.constant(Tensor::row(c.to_vec()).unwrap());
        let (h2, c2) = lstm_step(&mut g, xv, hv, cv, &pv).unwrap();
        (g.value(h2).data().to_vec(), g.value(c2).data().to_vec())
    }

    #[test]
    fn zero_everything_stays_zero() {
        let p = LstmParams::zeros(3, 2);
        let (h, c) = run_step(&[0.0; 3], &[0.0; 2], &[0.0; 2], &p);
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_carries_memory() {
        let u = 2;
        let mut p = LstmParams::zeros(3, u);
        for k in 0..u {
            p.bias.set(0, k, -20.0); // input gate closed
            p.bias.set(0, u + k, 20.0); // forget gate open
        }
        let c = [0.7, -0.4];
        let (_, c2) = run_step(&[0.3, -1.0, 2.0], &[0.1, 0.2], &c, &p);
        for k in 0..u {
            assert!((c2[k] - c[k]).abs() < 1e-3);
        }
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let mut r = rng(1);
        let p = LstmParams::init(3, 2, &mut r).unwrap();
        let x = [0.5, -0.2, 0.9];
        let h = [0.1, -0.3];
        let c = [0.2, 0.4];
        let (h1, c1) = run_step(&x, &h, &c, &p);
        let (h2, c2) = step_oracle(&x, &h, &c, &p);
        for k in 0..2 {
            assert!((h1[k] - h2[k]).abs() < 1e-12);
            assert!((c1[k] - c2[k]).abs() < 1e-12);
        }
    }

    fn encode(x: &Tensor, p: &LstmParams) -> Vec<f64> {
        let mut g = Graph::new();
        let pv = p.bind(&mut g, false).unwrap();
        let xv = g.constant(x.clone());
        let e = encode_sequence(&mut g, xv, &pv).unwrap();
        g.value(e.0).data().to_vec()
    }

    #[test]
    fn single_frame_encode_is_one_step() {
        let mut r = rng(2);
        let p = LstmParams::init(3, 4, &mut r).unwrap();
        let x = Tensor::uniform(1, 3, 1.0, &mut r);
        let (h, _) = step_oracle(x.data(), &[0.0; 4], &[0.0; 4], &p);
        let e = encode(&x, &p);
        for k in 0..4 {
            assert!((e[k] - h[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_matches_unrolled_oracle() {
        let mut r = rng(3);
        let p = LstmParams::init(3, 4, &mut r).unwrap();
        let x = Tensor::uniform(4, 3, 1.0, &mut r);
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        for t in 0..4 {
            (h, c) = step_oracle(x.row_slice(t), &h, &c, &p);
        }
        let e = encode(&x, &p);
        for k in 0..4 {
            assert!((e[k] - h[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_encoder_identical_inputs() {
        let mut r = rng(4);
        let ae = AutoencoderParams::init(3, 4, &mut r).unwrap();
        let x = Tensor::uniform(5, 3, 1.0, &mut r);
        let mut g = Graph::new();
        let av = ae.bind(&mut g, true).unwrap();
        let xv = g.constant(x.clone());
        let zv = g.constant(x);
        let ex = encode_sequence(&mut g, xv, &av.encoder).unwrap();
        let ez = encode_sequence(&mut g, zv, &av.encoder).unwrap();
        assert_eq!(g.value(ex.0), g.value(ez.0));
        let con = con_loss(&mut g, ex, ez).unwrap();
        assert_eq!(g.value(con).item(), 0.0);
    }

    #[test]
    fn both_branches_read_one_parameter_leaf() {
        let mut r = rng(5);
        let ae = AutoencoderParams::init(3, 4, &mut r).unwrap();
        let mut g = Graph::new();
        let av = ae.bind(&mut g, true).unwrap();
        let params_before = g.trainable_leaves();
        let a = g.constant(Tensor::uniform(3, 3, 1.0, &mut r));
        let b = g.constant(Tensor::uniform(4, 3, 1.0, &mut r));
        let ea = encode_sequence(&mut g, a, &av.encoder).unwrap();
        let eb = encode_sequence(&mut g, b, &av.encoder).unwrap();
        assert_eq!(g.trainable_leaves(), params_before);
        let e = &av.encoder;
        assert_eq!(g.inputs(e.w_input), vec![e.weights]);
        assert_eq!(g.inputs(e.w_hidden), vec![e.weights]);

        // Both embeddings receive gradient through the single weight leaf.
        let sa = g.sum(ea.0);
        g.backward(sa).unwrap();
        let ga = g.grad(e.weights).unwrap().clone();
        let sb = g.sum(eb.0);
        g.backward(sb).unwrap();
        let gb = g.grad(e.weights).unwrap().clone();
        assert!(ga.data().iter().any(|&v| v != 0.0));
        assert!(gb.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn decoder_zero_and_shapes() {
        let mut g = Graph::new();
        let dec = LstmParams::zeros(6, 4).bind(&mut g, false).unwrap();
        let out = g.constant(Tensor::zeros(4, 6));
        let e = Embedding(g.constant(Tensor::zeros(1, 4)));
        let xhat = decode_sequence(&mut g, e, 7, &dec, out).unwrap();
        assert_eq!(g.value(xhat).shape(), &[7, 6]);
        assert!(g.value(xhat).data().iter().all(|&v| v == 0.0));

        let mut r = rng(6);
        for u in [1, 3, 9] {
            let ae = AutoencoderParams::init(5, u, &mut r).unwrap();
            let mut g = Graph::new();
            let av = ae.bind(&mut g, false).unwrap();
            let e = Embedding(g.constant(Tensor::uniform(1, u, 1.0, &mut r)));
            let xhat = decode_sequence(&mut g, e, 3, &av.decoder, av.out_proj).unwrap();
            assert_eq!(g.value(xhat).shape(), &[3, 5]);
            let again = decode_sequence(&mut g, e, 3, &av.decoder, av.out_proj).unwrap();
            assert_eq!(g.value(xhat), g.value(again));
        }
    }

    #[test]
    fn rec_and_con_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 2));
        let same = rec_loss(&mut g, x, x, false).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let unit = g.constant(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        let one = rec_loss(&mut g, unit, x, false).unwrap();
        assert_eq!(g.value(one).item(), 1.0);
        let d = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 0.0]).unwrap());
        let l = rec_loss(&mut g, d, x, false).unwrap();
        assert_eq!(g.value(l).item(), 14.0);
        let l = rec_loss(&mut g, d, x, true).unwrap();
        assert_eq!(g.value(l).item(), 7.0);

        let a = Embedding(g.constant(Tensor::row(vec![3.0, 4.0]).unwrap()));
        let b = Embedding(g.constant(Tensor::row(vec![0.0, 0.0]).unwrap()));
        let c = con_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(c).item(), 25.0);
        let bad = Embedding(g.constant(Tensor::row(vec![0.0]).unwrap()));
        assert!(con_loss(&mut g, a, bad).is_err());
    }

    #[test]
    fn rec_and_con_gradients() {
        let mut r = rng(7);
        let (d, u, t) = (3, 4, 6);
        let ae = AutoencoderParams::init(d, u, &mut r).unwrap();
        let x = Tensor::uniform(t, d, 1.0, &mut r);
        let z = Tensor::uniform(t, d, 1.0, &mut r);
        let leaves: Vec<Tensor> = ae.tensors().into_iter().cloned().collect();
        let report = grad_check(
            |g, v| {
                let ev = LstmVars {
                    weights: v[0],
                    bias: v[1],
                    w_input: g.slice_rows(v[0], 0, d)?,
                    w_hidden: g.slice_rows(v[0], d, u)?,
                    units: u,
                };
                let dv = LstmVars {
                    weights: v[2],
                    bias: v[3],
                    w_input: g.slice_rows(v[2], 0, d)?,
                    w_hidden: g.slice_rows(v[2], d, u)?,
                    units: u,
                };
                let xv = g.constant(x.clone());
                let zv = g.constant(z.clone());
                let ex = encode_sequence(g, xv, &ev)?;
                let ez = encode_sequence(g, zv, &ev)?;
                let xhat = decode_sequence(g, ex, t, &dv, v[4])?;
                let rec = rec_loss(g, xhat, xv, false)?;
                let con = con_loss(g, ex, ez)?;
                g.add(rec, con)
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
