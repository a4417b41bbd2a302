use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{DiversitySegments, TrainConfig};
use super::evaluate::video_segmentation;
use super::model::video_loss;
use super::optim::{adam_step, AdamConfig};
use crate::dataio::{Dataset, Split};
use crate::error::{Error, Result};
use crate::objectives::{total_loss, LossReport, Mode};
use crate::summarize::ShotSegmentation;

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Start {
        mode: Mode,
        train_videos: usize,
        labeled_videos: Vec<String>,
        parameters: usize,
    },
    Step {
        step: u64,
        epoch: usize,
        video_id: String,
        #[serde(flatten)]
        loss: LossReport,
        grad_norm: f64,
    },
    Epoch {
        epoch: usize,
        mean_total: f64,
        steps: usize,
        skipped: usize,
    },
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean total loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub labeled_videos: Vec<String>,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        AdamConfig {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
            clip: c.grad_clip,
        }
    }
}

fn emit(log: &mut dyn Write, rec: &LogRecord) -> Result<()> {
    serde_json::to_writer(&mut *log, rec)?;
    log.write_all(b"\n")?;
    Ok(())
}

/// Apply the mode's label policy to a copy of the dataset.
fn prepare_labels(ds: &Dataset, cfg: &TrainConfig) -> Result<(Dataset, Vec<String>)> {
    let mut ds = ds.clone();
    match cfg.mode {
        Mode::Unsupervised => ds.strip_labels(),
        _ => {
            if let Some(f) = cfg.labels_fraction {
                ds.apply_label_fraction(f, cfg.seed)?;
            }
        }
    }
    let n_train = ds.split(Split::Train).count();
    let labeled: Vec<String> = ds
        .split(Split::Train)
        .filter(|v| v.labels.present())
        .map(|v| v.id.clone())
        .collect();
    if cfg.mode == Mode::Supervised && labeled.len() != n_train {
        return Err(Error::Usage(format!(
            "supervised mode needs every training video labeled ({} of {n_train} are); \
             use semi mode for partial labels",
            labeled.len()
        )));
    }
    Ok((ds, labeled))
}

/// Train from a fresh initialization.
pub fn train(ds: &Dataset, cfg: &TrainConfig, log: &mut dyn Write) -> Result<TrainOutcome> {
    let ck = Checkpoint::init(cfg.clone())?;
    train_from(ck, ds, log)
}

/// Continue training `ck` for `ck.config.epochs` epochs.
pub fn train_from(mut ck: Checkpoint, ds: &Dataset, log: &mut dyn Write) -> Result<TrainOutcome> {
    let cfg = ck.config.clone();
    cfg.validate()?;
    match ds.feature_dim() {
        Some(d) if d == cfg.model.d => {}
        Some(d) => {
            return Err(Error::Data(format!(
                "features are {d}-wide but the model expects {}",
                cfg.model.d
            )))
        }
        None => return Err(Error::Data("dataset is empty".into())),
    }
    let (ds, labeled) = prepare_labels(ds, &cfg)?;
    let train: Vec<_> = ds.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Data("no training videos".into()));
    }
    let segments: Vec<ShotSegmentation> = train
        .iter()
        .map(|v| match cfg.diversity_segments {
            DiversitySegments::Video => Ok(ShotSegmentation::single(v.frames())),
            DiversitySegments::Shots => video_segmentation(v),
        })
        .collect::<Result<_>>()?;
    emit(
        log,
        &LogRecord::Start {
            mode: cfg.mode,
            train_videos: train.len(),
            labeled_videos: labeled.clone(),
            parameters: ck.params.parameter_count(),
        },
    )?;

    let adam_cfg = AdamConfig::from(&cfg);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut sum, mut steps, mut skipped) = (0.0, 0usize, 0usize);
        for &i in &order {
            let v = train[i];
            let at = |m: String| {
                Error::Numeric(format!("{m} (step {}, epoch {epoch}, video {})", ck.adam.step + 1, v.id))
            };
            let built = video_loss(&ck.params, &cfg, &v.features, &v.labels, &segments[i]);
            let Some(mut loss) = built.map_err(|e| match e {
                Error::Numeric(m) => at(m),
                other => other,
            })?
            else {
                skipped += 1;
                continue;
            };
            let report = total_loss(cfg.mode, loss.term_values(), &cfg.weights)?;
            if !report.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {} (epoch {epoch}, video {}): {report:?}",
                    ck.adam.step + 1,
                    v.id
                )));
            }
            loss.graph.backward(loss.total).map_err(|e| match e {
                Error::Numeric(m) => at(m),
                other => other,
            })?;
            let vars = loss.vars.vars();
            let grads: Vec<_> = vars
                .iter()
                .map(|v| v.and_then(|v| loss.graph.grad(v)))
                .collect();
            let grad_norm = adam_step(
                &mut ck.params.tensors_mut(),
                &grads,
                &mut ck.adam,
                &adam_cfg,
            )
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{m} (epoch {epoch}, video {})", v.id)),
                other => other,
            })?;
            emit(
                log,
                &LogRecord::Step {
                    step: ck.adam.step,
                    epoch,
                    video_id: v.id.clone(),
                    loss: report,
                    grad_norm,
                },
            )?;
            sum += report.total;
            steps += 1;
        }
        let mean_total = if steps > 0 { sum / steps as f64 } else { 0.0 };
        emit(
            log,
            &LogRecord::Epoch {
                epoch,
                mean_total,
                steps,
                skipped,
            },
        )?;
        epoch_losses.push(mean_total);
    }
    log.flush()?;
    Ok(TrainOutcome {
        checkpoint: ck,
        epoch_losses,
        labeled_videos: labeled,
    })
}
