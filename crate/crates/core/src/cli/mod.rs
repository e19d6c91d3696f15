//! The `wavepolyp` command line.
//!
//! Every option may also be given in a flat `key = value` file passed with
//! `--config`; flags win over the file, the file wins over defaults. Each
//! command echoes its effective configuration into what it writes.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

pub use config::{parse_list, ConfigFile, KNOWN_KEYS};

use crate::contrast::{analyze_corpus, band_keys, Modality, RgbImage, DEFAULT_EPSILON, DEFAULT_LEVELS};
use crate::data::{
    binarize, evaluate, load_dataset, read_rgb_png, synth_generate, write_corpus, write_mask_png, ChromaMode,
    ConstantPredictor, Dataset, OraclePredictor, Predictor, Split, SplitSpec, SynthConfig,
};
use crate::error::{Error, Result};
use crate::model::{batch_images, AblationMode, ModelConfig, SegModel};
use crate::train::{train, TrainConfig};
use crate::wavelet::{Band, Matrix2D};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Default tolerance when comparing GRAY and RGB_MEAN contrast.
pub const DEFAULT_VERDICT_TOLERANCE: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "wavepolyp", version, about = "Wavelet contrast analysis and dual-encoder polyp segmentation")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-band contrast index of a corpus, written as CSV.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic corpus on disk.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and history.
    Train(TrainArgs),
    /// Dice and IoU of one or more checkpoints, or of a baseline.
    Eval(EvalArgs),
    /// Predict the mask of a single image.
    Infer(InferArgs),
    /// Run the built-in property suite.
    Selftest,
}

#[derive(Args, Debug, Default)]
struct SynthOpts {
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    luma_delta: Option<f64>,
    /// achromatic, matched or opposed.
    #[arg(long)]
    chroma_mode: Option<ChromaMode>,
    #[arg(long)]
    illumination_gradient: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct SplitOpts {
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct DataOpts {
    /// Corpus directory with `images/` and `masks/`. Without it a synthetic
    /// corpus is generated in memory from the synth options.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthOpts,
    #[command(flatten)]
    split: SplitOpts,
}

#[derive(Args, Debug, Default)]
struct ModelOpts {
    /// full, rgb_only, add_fusion or no_cdf.
    #[arg(long)]
    ablate: Option<AblationMode>,
    /// Encoder stage widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    decoder_width: Option<usize>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// GRAY and RGB_MEAN closer than this count as equal.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Output CSV. A `<stem>.config.json` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthOpts,
    #[command(flatten)]
    split: SplitOpts,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Initialisation and batch-order seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory for `model.ckpt` and `history.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataOpts,
    /// Topology the checkpoints must have. Checked only when given.
    #[command(flatten)]
    model: ModelOpts,
    /// One checkpoint per run. May be repeated.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Training seed of each checkpoint, used as the run label.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Evaluate a reference predictor instead: oracle or background.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Metrics JSON path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// One CSV row per run.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Exit with status 1 when the mean Dice is below this.
    #[arg(long)]
    min_dice: Option<f64>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Output mask PNG. A `<stem>.json` metadata file is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    Failed(String),
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Failed(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit status for an error: divergence is a run failure, the rest are
/// problems with the input.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cli: Cli) -> Result<Status> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Analyze(a) => cmd_analyze(a, &file),
        Command::Synth(a) => cmd_synth(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Eval(a) => cmd_eval(a, &file),
        Command::Infer(a) => cmd_infer(a, &file),
        Command::Selftest => Ok(cmd_selftest()),
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("missing --{} (or `{key}` in the config file)", key.replace('_', "-"))))
}

impl SynthOpts {
    fn resolve(self, f: &ConfigFile) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            seed: f.pick(self.synth_seed, "synth_seed", d.seed)?,
            count: f.pick(self.count, "count", d.count)?,
            size: f.pick(self.size, "size", d.size)?,
            luma_delta: f.pick(self.luma_delta, "luma_delta", d.luma_delta)?,
            chroma_mode: f.pick(self.chroma_mode, "chroma_mode", d.chroma_mode)?,
            illumination_gradient: f.pick(self.illumination_gradient, "illumination_gradient", d.illumination_gradient)?,
            noise_sigma: f.pick(self.noise_sigma, "noise_sigma", d.noise_sigma)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SplitOpts {
    fn resolve(self, f: &ConfigFile) -> Result<SplitSpec> {
        let d = SplitSpec::default();
        let spec = SplitSpec {
            seed: f.pick(self.split_seed, "split_seed", d.seed)?,
            val: f.pick(self.val_fraction, "val_fraction", d.val)?,
            test: f.pick(self.test_fraction, "test_fraction", d.test)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ModelOpts {
    fn resolve(self, f: &ConfigFile) -> Result<(ModelConfig, bool)> {
        let d = ModelConfig::default();
        let widths = match self.widths {
            Some(w) => Some(w),
            None => f.list("widths")?,
        };
        let ablate = f.pick_opt(self.ablate, "ablate")?;
        let scale = f.pick_opt(self.scale, "scale")?;
        let window = f.pick_opt(self.window, "window")?;
        let heads = f.pick_opt(self.heads, "heads")?;
        let decoder_width = f.pick_opt(self.decoder_width, "decoder_width")?;
        let any = widths.is_some()
            || ablate.is_some()
            || scale.is_some()
            || window.is_some()
            || heads.is_some()
            || decoder_width.is_some();
        let cfg = ModelConfig {
            widths: widths.unwrap_or(d.widths),
            scale: scale.unwrap_or(d.scale),
            window: window.unwrap_or(d.window),
            heads: heads.unwrap_or(d.heads),
            decoder_width: decoder_width.unwrap_or(d.decoder_width),
            mode: ablate.unwrap_or(d.mode),
        };
        Ok((cfg, any))
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
enum Source {
    Dir { data: PathBuf },
    Synth { synth: SynthConfig },
}

impl DataOpts {
    fn resolve(self, f: &ConfigFile) -> Result<(Source, SplitSpec)> {
        let split = self.split.resolve(f)?;
        let source = match f.pick_opt(self.data, "data")? {
            Some(data) => Source::Dir { data },
            None => Source::Synth {
                synth: self.synth.resolve(f)?,
            },
        };
        Ok((source, split))
    }
}

fn load(source: &Source, split: &SplitSpec) -> Result<Dataset> {
    match source {
        Source::Dir { data } => load_dataset(data, split),
        Source::Synth { synth } => {
            let mut d = synth_generate(synth)?;
            d.resplit(split)?;
            Ok(d)
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// `dir/name.csv` becomes `dir/name.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn cmd_analyze(a: AnalyzeArgs, f: &ConfigFile) -> Result<Status> {
    let out: PathBuf = required(f.pick_opt(a.out, "out")?, "out")?;
    let levels = f.pick(a.levels, "levels", DEFAULT_LEVELS)?;
    let epsilon = f.pick(a.epsilon, "epsilon", DEFAULT_EPSILON)?;
    let tolerance = f.pick(a.tolerance, "tolerance", DEFAULT_VERDICT_TOLERANCE)?;
    let (source, split) = a.data.resolve(f)?;
    let data = load(&source, &split)?;
    let report = analyze_corpus(
        data.samples.iter().map(|s| (s.id.as_str(), &s.image, &s.mask)),
        levels,
        epsilon,
    )?;
    let verdict = report.verdict(tolerance);

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, report.to_csv())?;
    let meta = json!({
        "command": "analyze",
        "config": {
            "source": source,
            "levels": levels,
            "epsilon": epsilon,
            "tolerance": tolerance,
        },
        "n_samples": data.len(),
        "excluded": data.excluded,
        "verdict": verdict.to_string(),
        "gray_higher": verdict.gray_higher,
        "equal": verdict.equal,
        "rgb_higher": verdict.rgb_higher,
    });
    write_json(&sidecar(&out, "config.json"), &meta)?;

    for (level, band) in band_keys(levels) {
        if band == Band::LL {
            continue;
        }
        let g = report.ci(level, band, Modality::Gray).unwrap_or(f64::NAN);
        let m = report.ci(level, band, Modality::RgbMean).unwrap_or(f64::NAN);
        let rel = if (g - m).abs() <= tolerance {
            "="
        } else if g > m {
            ">"
        } else {
            "<"
        };
        println!("L{level} {:<2}  GRAY {g:.6} {rel} RGB_MEAN {m:.6}", band.as_str());
    }
    println!("{verdict}");
    Ok(Status::Ok)
}

fn cmd_synth(a: SynthArgs, f: &ConfigFile) -> Result<Status> {
    let out: PathBuf = required(f.pick_opt(a.out, "out")?, "out")?;
    let cfg = a.synth.resolve(f)?;
    let split = a.split.resolve(f)?;
    let mut data = synth_generate(&cfg)?;
    data.resplit(&split)?;
    let manifest = write_corpus(&out, &cfg, &split, &data)?;
    println!(
        "wrote {} samples to {} (corpus sha256 {})",
        data.len(),
        out.display(),
        manifest.corpus_sha256
    );
    Ok(Status::Ok)
}

fn cmd_train(a: TrainArgs, f: &ConfigFile) -> Result<Status> {
    let out: PathBuf = required(f.pick_opt(a.out, "out")?, "out")?;
    let d = TrainConfig::default();
    let (model, _) = a.model.resolve(f)?;
    let cfg = TrainConfig {
        epochs: f.pick(a.epochs, "epochs", d.epochs)?,
        batch_size: f.pick(a.batch_size, "batch_size", d.batch_size)?,
        lr: f.pick(a.lr, "lr", d.lr)?,
        seed: f.pick(a.seed, "seed", d.seed)?,
        threshold: f.pick(a.threshold, "threshold", d.threshold)?,
        model,
    };
    cfg.validate()?;
    let (source, split) = a.data.resolve(f)?;
    let data = load(&source, &split)?;
    fs::create_dir_all(&out)?;

    let outcome = train(&cfg, &data.split(Split::Train), &data.split(Split::Val), |r| match r.val_dice {
        Some(v) => println!("epoch {:>3}/{}  loss {:.6}  val_dice {:.4}", r.epoch, cfg.epochs, r.train_loss, v),
        None => println!("epoch {:>3}/{}  loss {:.6}", r.epoch, cfg.epochs, r.train_loss),
    })?;
    let h = &outcome.history;
    let ckpt = out.join("model.ckpt");
    outcome.model.save(&ckpt)?;
    let mut history = serde_json::to_value(h)?;
    history["data"] = json!({ "source": source, "split": split, "excluded": data.excluded });
    write_json(&out.join("history.json"), &history)?;
    println!(
        "mode {}  params {}  best epoch {}  train dice {:.4}  -> {}",
        h.mode,
        h.param_count,
        h.best_epoch,
        h.final_train_dice,
        ckpt.display()
    );
    Ok(Status::Ok)
}

fn cmd_eval(a: EvalArgs, f: &ConfigFile) -> Result<Status> {
    let threshold = f.pick(a.threshold, "threshold", 0.5)?;
    let split = f.pick(a.split, "split", Split::Test)?;
    let baseline: Option<String> = f.pick_opt(a.baseline, "baseline")?;
    let checkpoints: Vec<PathBuf> = if a.checkpoints.is_empty() {
        f.list("checkpoints")?.unwrap_or_default()
    } else {
        a.checkpoints
    };
    let seeds = match a.seeds {
        Some(s) => Some(s),
        None => f.list::<u64>("seeds")?,
    };
    let out: Option<PathBuf> = f.pick_opt(a.out, "out")?;
    let csv: Option<PathBuf> = f.pick_opt(a.csv, "csv")?;
    let min_dice: Option<f64> = f.pick_opt(a.min_dice, "min_dice")?;
    let (expected, check_topology) = a.model.resolve(f)?;

    let baseline_predictor: Option<Box<dyn Predictor>> = match baseline.as_deref() {
        None => None,
        Some("oracle") => Some(Box::new(OraclePredictor)),
        Some("background") => Some(Box::new(ConstantPredictor(0.0))),
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "unknown baseline '{other}' (expected oracle or background)"
            )))
        }
    };
    if baseline_predictor.is_some() && !checkpoints.is_empty() {
        return Err(Error::InvalidArgument("--baseline and --checkpoint are exclusive".into()));
    }
    if baseline_predictor.is_none() && checkpoints.is_empty() {
        return Err(Error::InvalidArgument("give at least one --checkpoint or a --baseline".into()));
    }
    let n_runs = checkpoints.len().max(1);
    let seeds = seeds.unwrap_or_else(|| (1..=n_runs as u64).collect());
    if seeds.len() != n_runs {
        return Err(Error::InvalidArgument(format!(
            "{} seeds given for {n_runs} runs",
            seeds.len()
        )));
    }
    for c in &checkpoints {
        if !c.is_file() {
            return Err(Error::PathNotFound(c.clone()));
        }
    }
    let expected = check_topology.then_some(&expected);
    let models = checkpoints
        .iter()
        .map(|c| SegModel::load(c, expected))
        .collect::<Result<Vec<_>>>()?;

    let (source, split_spec) = a.data.resolve(f)?;
    let data = load(&source, &split_spec)?;
    let samples = data.split(split);
    let runs: Vec<(u64, &dyn Predictor)> = match &baseline_predictor {
        Some(p) => vec![(seeds[0], p.as_ref())],
        None => seeds.iter().copied().zip(models.iter().map(|m| m as &dyn Predictor)).collect(),
    };
    let summary = evaluate(&runs, split, &samples, threshold)?;

    let mut report = serde_json::to_value(&summary)?;
    report["config"] = json!({
        "source": source,
        "split": split_spec,
        "checkpoints": checkpoints,
        "baseline": baseline,
        "expected_topology": expected,
    });
    match &out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    if let Some(p) = &csv {
        let mut text = String::from("seed,dice,iou,n_samples\n");
        for r in &summary.per_run {
            text.push_str(&format!("{},{},{},{}\n", r.seed, r.dice, r.iou, r.n_samples));
        }
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, text)?;
    }
    eprintln!(
        "{} runs on {} {} samples: dice {:.4} ± {:.4}, iou {:.4} ± {:.4}",
        summary.runs,
        samples.len(),
        split,
        summary.dice_mean,
        summary.dice_std,
        summary.iou_mean,
        summary.iou_std
    );
    match min_dice {
        Some(m) if !(summary.dice_mean >= m) => Ok(Status::Failed(format!(
            "mean dice {:.4} is below the required {m}",
            summary.dice_mean
        ))),
        _ => Ok(Status::Ok),
    }
}

/// Replicates the last row and column until both sides are multiples of
/// `divisor`.
fn pad_to_multiple(img: &RgbImage, divisor: usize) -> Result<RgbImage> {
    let (h, w) = (img.height(), img.width());
    let ph = h.div_ceil(divisor) * divisor;
    let pw = w.div_ceil(divisor) * divisor;
    if (ph, pw) == (h, w) {
        return Ok(img.clone());
    }
    let planes = img
        .planes()
        .clone()
        .map(|p| Matrix2D::from_fn(ph, pw, |r, c| p.get(r.min(h - 1), c.min(w - 1))));
    let [r, g, b] = planes;
    RgbImage::new(r, g, b)
}

fn cmd_infer(a: InferArgs, f: &ConfigFile) -> Result<Status> {
    let checkpoint: PathBuf = required(f.pick_opt(a.checkpoint, "checkpoint")?, "checkpoint")?;
    let image: PathBuf = required(f.pick_opt(a.image, "image")?, "image")?;
    let out: PathBuf = required(f.pick_opt(a.out, "out")?, "out")?;
    let threshold = f.pick(a.threshold, "threshold", 0.5)?;
    if !checkpoint.is_file() {
        return Err(Error::PathNotFound(checkpoint));
    }
    let model = SegModel::load(&checkpoint, None)?;
    let img = read_rgb_png(&image)?;
    let (h, w) = (img.height(), img.width());
    let padded = pad_to_multiple(&img, model.config().size_divisor())?;
    let (ph, pw) = (padded.height(), padded.width());
    let probs = model.predict(&batch_images(&[&padded])?)?;
    let cropped: Vec<f64> = (0..h)
        .flat_map(|r| probs.data()[r * pw..r * pw + w].to_vec())
        .collect();
    let mask = binarize(&cropped, h, w, threshold)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_mask_png(&out, &mask)?;
    let fraction = mask.fraction();
    let meta = json!({
        "command": "infer",
        "config": {
            "checkpoint": checkpoint,
            "image": image,
            "threshold": threshold,
        },
        "mode": model.mode(),
        "input_size": [h, w],
        "padded_size": [ph, pw],
        "padded": (ph, pw) != (h, w),
        "polyp_fraction": fraction,
    });
    write_json(&sidecar(&out, "json"), &meta)?;
    println!("polyp fraction {fraction:.6}");
    Ok(Status::Ok)
}

fn cmd_selftest() -> Status {
    let results = crate::selftest::run();
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{r}");
    }
    println!("{}/{} properties passed", results.len() - failed, results.len());
    if failed == 0 {
        Status::Ok
    } else {
        Status::Failed(format!("{failed} properties failed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_replicates_edges() {
        let img = RgbImage::achromatic(Matrix2D::from_fn(3, 2, |r, c| (r * 2 + c) as f64 / 10.0));
        let p = pad_to_multiple(&img, 4).unwrap();
        assert_eq!((p.height(), p.width()), (4, 4));
        assert_eq!(p.plane(0).get(3, 3), img.plane(0).get(2, 1));
        assert_eq!(p.plane(1).get(0, 1), img.plane(1).get(0, 1));
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("a/b.csv"), "config.json"), PathBuf::from("a/b.config.json"));
        assert_eq!(sidecar(Path::new("m.png"), "json"), PathBuf::from("m.json"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["wavepolyp", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["wavepolyp", "analyze", "--levels", "x"]), EXIT_USAGE);
        assert_eq!(run(["wavepolyp", "analyze"]), EXIT_USAGE);
    }
}
