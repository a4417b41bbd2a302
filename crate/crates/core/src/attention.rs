//! Subspace multi-head self-attention and the stacked attention encoder.
//!
//! Each head projects the `T×d` input into its own `d_n`-wide subspace,
//! runs dot-product self-attention there, and the concatenated head outputs
//! are mixed back to width `d`. Layers are stacked without residuals or
//! normalization, and there is no positional encoding, so the encoder is
//! equivariant to frame permutations.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Projection and query/key/value transforms of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `d × d_n` subspace projection.
    pub proj: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    /// `(Σ d_n) × d` mixing matrix.
    pub mix: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
    pub d: usize,
}

/// Post-softmax attention weights of one head in one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub weights: Tensor,
    pub layer: usize,
    pub head: usize,
}

impl AttentionMap {
    /// Column means: how much attention each frame receives on average.
    pub fn frame_track(&self) -> Vec<f64> {
        let t = self.weights.rows();
        (0..self.weights.cols())
            .map(|j| (0..t).map(|i| self.weights.get(i, j)).sum::<f64>() / t as f64)
            .collect()
    }
}

fn init_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(rows, cols, 1.0 / (rows as f64).sqrt(), rng)
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(d: usize, dn: usize, rng: &mut R) -> Self {
        HeadParams {
            proj: init_matrix(d, dn, rng),
            wq: init_matrix(dn, dn, rng),
            wk: init_matrix(dn, dn, rng),
            wv: init_matrix(dn, dn, rng),
        }
    }

    pub fn subspace_dim(&self) -> usize {
        self.proj.cols()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> HeadVars {
        HeadVars {
            proj: g.leaf(self.proj.clone(), trainable),
            wq: g.leaf(self.wq.clone(), trainable),
            wk: g.leaf(self.wk.clone(), trainable),
            wv: g.leaf(self.wv.clone(), trainable),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.proj, &self.wq, &self.wk, &self.wv]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.proj, &mut self.wq, &mut self.wk, &mut self.wv]
    }
}

impl LayerParams {
    pub fn init<R: Rng + ?Sized>(d: usize, head_dims: &[usize], rng: &mut R) -> Result<Self> {
        if head_dims.is_empty() || head_dims.contains(&0) {
            return Err(Error::Usage(format!(
                "head dimensions must be non-empty and positive, got {head_dims:?}"
            )));
        }
        let heads: Vec<HeadParams> = head_dims
            .iter()
            .map(|&dn| HeadParams::init(d, dn, rng))
            .collect();
        let width: usize = head_dims.iter().sum();
        Ok(LayerParams {
            heads,
            mix: init_matrix(width, d, rng),
        })
    }

    pub fn concat_width(&self) -> usize {
        self.heads.iter().map(HeadParams::subspace_dim).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LayerVars {
        LayerVars {
            heads: self.heads.iter().map(|h| h.bind(g, trainable)).collect(),
            mix: g.leaf(self.mix.clone(), trainable),
        }
    }
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        head_dims: &[usize],
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 || d == 0 {
            return Err(Error::Usage("encoder needs L >= 1 and d >= 1".into()));
        }
        let layers = (0..layers)
            .map(|_| LayerParams::init(d, head_dims, rng))
            .collect::<Result<_>>()?;
        Ok(EncoderParams { layers, d })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> EncoderVars {
        EncoderVars {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }

    /// All tensors in a fixed order: per layer, per head (P, Wq, Wk, Wv), then M.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            for h in &l.heads {
                out.extend(h.tensors());
            }
            out.push(&l.mix);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.extend(h.tensors_mut());
            }
            out.push(&mut l.mix);
        }
        out
    }

    /// Forward pass without gradient tracking.
    pub fn forward(&self, x: &Tensor, scaled: bool) -> Result<(Tensor, Vec<AttentionMap>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (z, maps) = encoder_forward(&mut g, xv, &vars, scaled)?;
        let maps = collect_maps(&g, &maps);
        Ok((g.value(z).clone(), maps))
    }
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub proj: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub heads: Vec<HeadVars>,
    pub mix: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<LayerVars>,
}

impl EncoderVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            for h in &l.heads {
                out.extend([h.proj, h.wq, h.wk, h.wv]);
            }
            out.push(l.mix);
        }
        out
    }
}

/// One attention head: returns the `T×d_n` output and the `T×T` weights.
pub fn single_head(g: &mut Graph, x: Var, h: &HeadVars, scaled: bool) -> Result<(Var, Var)> {
    if g.value(x).rows() == 0 || !g.value(x).is_finite() {
        return Err(Error::Numeric("attention input must be finite".into()));
    }
    let xn = g.matmul(x, h.proj)?;
    let q = g.matmul(xn, h.wq)?;
    let k = g.matmul(xn, h.wk)?;
    let v = g.matmul(xn, h.wv)?;
    let kt = g.transpose(k);
    let mut logits = g.matmul(q, kt)?;
    if scaled {
        let dn = g.value(h.proj).cols() as f64;
        logits = g.scale(logits, 1.0 / dn.sqrt());
    }
    let a = g.softmax_rows(logits)?;
    let o = g.matmul(a, v)?;
    Ok((o, a))
}

/// Concatenate all head outputs and mix them back to width `d`.
pub fn multi_head_layer(
    g: &mut Graph,
    x: Var,
    p: &LayerVars,
    scaled: bool,
) -> Result<(Var, Vec<Var>)> {
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut maps = Vec::with_capacity(p.heads.len());
    for h in &p.heads {
        let (o, a) = single_head(g, x, h, scaled)?;
        outs.push(o);
        maps.push(a);
    }
    let cat = g.concat_cols(&outs)?;
    let r = g.matmul(cat, p.mix)?;
    Ok((r, maps))
}

/// Stack of layers; returns `Z` and the weights of every head per layer.
pub fn encoder_forward(
    g: &mut Graph,
    x: Var,
    e: &EncoderVars,
    scaled: bool,
) -> Result<(Var, Vec<Vec<Var>>)> {
    if e.layers.is_empty() {
        return Err(Error::Usage("encoder has no layers".into()));
    }
    let mut h = x;
    let mut all = Vec::with_capacity(e.layers.len());
    for layer in &e.layers {
        let (r, maps) = multi_head_layer(g, h, layer, scaled)?;
        h = r;
        all.push(maps);
    }
    Ok((h, all))
}

pub fn collect_maps(g: &Graph, maps: &[Vec<Var>]) -> Vec<AttentionMap> {
    maps.iter()
        .enumerate()
        .flat_map(|(l, heads)| {
            heads.iter().enumerate().map(move |(h, &v)| AttentionMap {
                weights: g.value(v).clone(),
                layer: l,
                head: h,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapIndexEntry {
    pub layer: usize,
    pub head: usize,
    pub file: String,
    /// Column means of the map, one per frame.
    pub frame_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapIndex {
    pub video_id: String,
    pub frames: usize,
    pub maps: Vec<MapIndexEntry>,
}

/// Write one CSV per (layer, head) plus `index.json`.
pub fn export_maps(dir: &Path, video_id: &str, maps: &[AttentionMap]) -> Result<MapIndex> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(maps.len());
    for m in maps {
        let file = format!("layer{}_head{}.csv", m.layer, m.head);
        let mut csv = String::new();
        for r in 0..m.weights.rows() {
            let row: Vec<String> = m.weights.row_slice(r).iter().map(f64::to_string).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        fs::write(dir.join(&file), csv)?;
        entries.push(MapIndexEntry {
            layer: m.layer,
            head: m.head,
            file,
            frame_weights: m.frame_track(),
        });
    }
    let index = MapIndex {
        video_id: video_id.to_string(),
        frames: maps.first().map_or(0, |m| m.weights.rows()),
        maps: entries,
    };
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

/// Parse an exported CSV matrix.
pub fn read_map_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}
