use rand::Rng;

use super::config::{ModelConfig, TrainConfig};
use crate::attention::{encoder_forward, AttentionMap, EncoderParams, EncoderVars};
use crate::diffcore::{sigmoid, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::objectives::{
    classify, cls_loss, div_loss, total_loss_graph, ClassifierParams, ClassifierVars, LabelSet,
    LossTerms, Mode,
};
use crate::recurrent::{
    con_loss, decode_sequence, encode_sequence, rec_loss, AutoencoderParams, AutoencoderVars,
};
use crate::summarize::ShotSegmentation;

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub autoencoder: AutoencoderParams,
    pub classifier: ClassifierParams,
}

pub struct ModelVars {
    pub encoder: EncoderVars,
    pub autoencoder: Option<AutoencoderVars>,
    pub classifier: ClassifierVars,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut encoder = EncoderParams::init(cfg.d, &cfg.head_dims, cfg.layers, rng)?;
        if cfg.init_gain != 1.0 {
            for t in encoder.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= cfg.init_gain);
            }
        }
        Ok(ModelParams {
            encoder,
            autoencoder: AutoencoderParams::init(cfg.d, cfg.lstm_units, rng)?,
            classifier: ClassifierParams::init(cfg.d, rng),
        })
    }

    /// Flattened in a fixed order: encoder, autoencoder, classifier.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.autoencoder.tensors());
        v.push(&self.classifier.w);
        v.push(&self.classifier.b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.autoencoder.tensors_mut());
        v.push(&mut self.classifier.w);
        v.push(&mut self.classifier.b);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Bind as trainable leaves. The autoencoder is only bound when used.
    pub fn bind(&self, g: &mut Graph, with_autoencoder: bool) -> Result<ModelVars> {
        Ok(ModelVars {
            encoder: self.encoder.bind(g, true),
            autoencoder: if with_autoencoder {
                Some(self.autoencoder.bind(g, true)?)
            } else {
                None
            },
            classifier: self.classifier.bind(g, true),
        })
    }

    /// Per-frame importance scores and the attention maps.
    pub fn score(&self, x: &Tensor, scaled: bool) -> Result<(Vec<f64>, Vec<AttentionMap>)> {
        if x.cols() != self.encoder.d {
            return Err(Error::shape("score", &[x.rows(), x.cols()], &[x.rows(), self.encoder.d]));
        }
        let (z, maps) = self.encoder.forward(x, scaled)?;
        let w = self.classifier.w.data();
        let b = self.classifier.b.data()[0];
        let s = (0..z.rows())
            .map(|t| {
                let dot: f64 = z.row_slice(t).iter().zip(w).map(|(a, c)| a * c).sum();
                sigmoid(dot + b)
            })
            .collect();
        Ok((s, maps))
    }
}

impl ModelVars {
    /// Same order as [`ModelParams::tensors`]; `None` for unbound tensors.
    pub fn vars(&self) -> Vec<Option<Var>> {
        let mut v: Vec<Option<Var>> = self.encoder.vars().into_iter().map(Some).collect();
        match &self.autoencoder {
            Some(ae) => v.extend(ae.vars().into_iter().map(Some)),
            None => v.extend([None; 5]),
        }
        v.push(Some(self.classifier.w));
        v.push(Some(self.classifier.b));
        v
    }
}

/// The loss graph of one video.
pub struct VideoLoss {
    pub graph: Graph,
    pub vars: ModelVars,
    pub total: Var,
    pub terms: LossTerms<Var>,
}

impl VideoLoss {
    pub fn term_values(&self) -> LossTerms<f64> {
        let val = |v: Option<Var>| v.map(|v| self.graph.value(v).item());
        LossTerms {
            cls: val(self.terms.cls),
            rec: val(self.terms.rec),
            con: val(self.terms.con),
            div: val(self.terms.div),
        }
    }
}

/// Build the training objective of one video under `cfg.mode`.
///
/// Returns `None` when the mode leaves no term for this video (an unlabeled
/// video in semi-supervised training without the autoencoder branch).
/// Labels are read only when the mode uses them and `labels.present()`.
pub fn video_loss(
    params: &ModelParams,
    cfg: &TrainConfig,
    x: &Tensor,
    labels: &LabelSet,
    div_segments: &ShotSegmentation,
) -> Result<Option<VideoLoss>> {
    let t = x.rows();
    if x.cols() != cfg.model.d {
        return Err(Error::Data(format!(
            "feature width {} does not match model width {}",
            x.cols(),
            cfg.model.d
        )));
    }
    let use_cls = cfg.mode != Mode::Unsupervised && labels.present();
    if cfg.mode == Mode::Supervised && !use_cls {
        return Err(Error::Usage(
            "supervised training needs labels on every training video".into(),
        ));
    }
    if !use_cls && !cfg.use_autoencoder && cfg.mode != Mode::Unsupervised {
        return Ok(None);
    }

    let mut g = Graph::new();
    let vars = params.bind(&mut g, cfg.use_autoencoder)?;
    let xv = g.constant(x.clone());
    let (z, _) = encoder_forward(&mut g, xv, &vars.encoder, cfg.model.scaled)?;
    let scores = classify(&mut g, z, &vars.classifier)?;

    let mut terms = LossTerms::default();
    if use_cls {
        terms.cls = Some(cls_loss(&mut g, scores, labels)?);
    }
    if let Some(ae) = &vars.autoencoder {
        let ex = encode_sequence(&mut g, xv, &ae.encoder)?;
        let ez = encode_sequence(&mut g, z, &ae.encoder)?;
        let xhat = decode_sequence(&mut g, ex, t, &ae.decoder, ae.out_proj)?;
        terms.rec = Some(rec_loss(&mut g, xhat, xv, cfg.rec_mean)?);
        terms.con = Some(con_loss(&mut g, ex, ez)?);
    }
    if cfg.mode == Mode::Unsupervised {
        terms.div = Some(div_loss(&mut g, x, scores, div_segments, cfg.diversity)?);
    }
    let total = total_loss_graph(&mut g, cfg.mode, terms, &cfg.weights)?;
    Ok(Some(VideoLoss {
        graph: g,
        vars,
        total,
        terms,
    }))
}
