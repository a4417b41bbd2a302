use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcvsa::dataio::{generate_synthetic, read_features, AnnotationFile, Dataset, Split, SyntheticSpec};
use mcvsa::metrics::Aggregation;
use mcvsa::objectives::Mode;
use mcvsa::pipeline::{
    detect_shots, evaluate, inspect, train, Checkpoint, EvalOptions, Scorer, TrainConfig,
};
use mcvsa::summarize::{make_summary, ShotSegmentation, SummaryExport};
use mcvsa::{Error, Result};

#[derive(Parser)]
#[command(name = "mcvsa", version, about = "Multi-concept self-attention video summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-highlight dataset.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Produce a keyshot summary for one feature file.
    Summarize(SummarizeArgs),
    /// Export attention maps of one video.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    n_videos: usize,
    #[arg(long, default_value_t = 60)]
    t_min: usize,
    #[arg(long, default_value_t = 120)]
    t_max: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    concepts: usize,
    #[arg(long, default_value_t = 8)]
    shots_min: usize,
    #[arg(long, default_value_t = 12)]
    shots_max: usize,
    #[arg(long, default_value_t = 0.15)]
    highlight_fraction: f64,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    annotators: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON file mirroring the training configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    labels_fraction: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Number of attention heads; each gets `--head-dim` dimensions.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lstm_units: Option<usize>,
    /// Multiplier on the attention encoder's init bound.
    #[arg(long)]
    init_gain: Option<f64>,
    /// Average the reconstruction error over frames.
    #[arg(long)]
    rec_mean: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Drop the reconstruction and consistency terms.
    #[arg(long)]
    no_autoencoder: bool,
    /// Checkpoint path.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// JSON-lines training log; defaults to stderr.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "mean")]
    aggregation: Aggregation,
    #[arg(long, default_value_t = 0.15)]
    budget: f64,
    #[arg(long, default_value = "model")]
    scorer: Scorer,
    /// Seed of the random scorer.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate the training split instead of the test split.
    #[arg(long)]
    train_split: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Annotation file supplying shot boundaries.
    #[arg(long)]
    annotation: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15)]
    budget: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature file of the video.
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn video_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into())
}

fn run_gen(a: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        seed: a.seed,
        n_videos: a.n_videos,
        t_min: a.t_min,
        t_max: a.t_max,
        d: a.d,
        concepts: a.concepts,
        shots_min: a.shots_min,
        shots_max: a.shots_max,
        highlight_fraction: a.highlight_fraction,
        noise_sigma: a.noise,
        annotators: a.annotators,
        test_fraction: a.test_fraction,
        ..SyntheticSpec::default()
    };
    let manifest = generate_synthetic(&spec, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

/// Configuration file (if any) with the flags applied on top. When neither
/// sets the feature width it is taken from the dataset.
fn train_config(a: &TrainArgs, ds: &Dataset) -> Result<TrainConfig> {
    let (mut cfg, has_d) = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let raw: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
            let has_d = raw.pointer("/model/d").is_some();
            let cfg: TrainConfig = serde_json::from_value(raw)
                .map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
            (cfg, has_d)
        }
        None => (TrainConfig::default(), false),
    };
    if !has_d {
        if let Some(d) = ds.feature_dim() {
            cfg.model.d = d;
        }
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.labels_fraction.is_some() {
        cfg.labels_fraction = a.labels_fraction;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if a.heads.is_some() || a.head_dim.is_some() {
        let n = a.heads.unwrap_or(cfg.model.heads());
        let w = a.head_dim.unwrap_or_else(|| (cfg.model.d / n).max(1));
        cfg.model.head_dims = vec![w; n];
    }
    if let Some(l) = a.layers {
        cfg.model.layers = l;
    }
    if let Some(u) = a.lstm_units {
        cfg.model.lstm_units = u;
    }
    if let Some(g) = a.init_gain {
        cfg.model.init_gain = g;
    }
    if a.rec_mean {
        cfg.rec_mean = true;
    }
    if let Some(c) = a.grad_clip {
        cfg.grad_clip = (c > 0.0).then_some(c);
    }
    if a.no_autoencoder {
        cfg.use_autoencoder = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.manifest)?;
    let cfg = train_config(&a, &ds)?;
    let mut log: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stderr().lock()),
    };
    let outcome = train(&ds, &cfg, &mut log)?;
    outcome.checkpoint.save(&a.out)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": a.out,
            "epochs": cfg.epochs,
            "final_epoch_loss": outcome.epoch_losses.last(),
        })
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.manifest)?;
    let opts = EvalOptions {
        aggregation: a.aggregation,
        budget_fraction: a.budget,
        scorer: a.scorer,
        seed: a.seed,
        split: if a.train_split { Split::Train } else { Split::Test },
    };
    let report = evaluate(&ck, &ds, &opts)?;
    write_json(&report, a.out.as_deref())
}

fn run_summarize(a: SummarizeArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let x = read_features(&a.features)?;
    let (scores, _) = ck.params.score(&x, ck.config.model.scaled)?;
    let mut id = video_id(&a.features);
    let seg = match &a.annotation {
        Some(p) => {
            let ann = AnnotationFile::read(p)?;
            id = ann.video_id;
            match ann.boundaries {
                Some(b) => ShotSegmentation::from_starts(b, x.rows())
                    .map_err(|e| Error::Data(format!("{}: {e}", p.display())))?,
                None => detect_shots(&x)?,
            }
        }
        None => detect_shots(&x)?,
    };
    let mask = make_summary(&scores, &seg, a.budget)?;
    write_json(&SummaryExport::new(&id, &seg, &mask), a.out.as_deref())
}

fn run_inspect(a: InspectArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let x = read_features(&a.video)?;
    let index = inspect(&ck, &video_id(&a.video), &x, &a.out_dir)?;
    println!(
        "{} maps over {} frames written to {}",
        index.maps.len(),
        index.frames,
        a.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Summarize(a) => run_summarize(a),
        Command::Inspect(a) => run_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
