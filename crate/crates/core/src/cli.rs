//! Command-line entry points: `synth`, `train`, `eval`, `infer`, `report`.
//!
//! Every failure is reported on stderr as one line,
//! `error kind=<kind> message=<text>`, with a nonzero exit status.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::data::{load_pairs, to_tensor, AugmentParams, ImagePair};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMask};
use crate::metrics::{error_map, write_curves};
use crate::synlcd::dataset::load_patterns;
use crate::synlcd::{build_dataset, builtin_patterns, BuildOptions, DefectType};
use crate::trainer::{
    argmax_mask, defect_probability, distance_probability, evaluate, EvalReport, LossRecord,
    ProtocolSpec, Trainer, LOSS_LOG_HEADER,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(
    name = "siamdefect",
    version,
    about = "Change-aware Siamese defect segmentation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override `section.key=value`, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed; overrides `train.seed` where a config is used.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compute device. Only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic LCD defect dataset and its manifest.
    Synth(SynthArgs),
    /// Train a model; writes a checkpoint and a loss log.
    Train(TrainArgs),
    /// Score a checkpoint; writes a report, curves and error maps.
    Eval(EvalArgs),
    /// Predict masks and distance maps for NG/OK image pairs.
    Infer(InferArgs),
    /// Tabulate the reports of several runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of clean pattern PNGs; the built-in patterns when absent.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    /// Samples per defect type and pattern.
    #[arg(long, default_value_t = 300)]
    pub count: usize,
    /// Size `WIDTHxHEIGHT` of the built-in patterns.
    #[arg(long, default_value = "512x512")]
    pub size: String,
    /// Defect types to generate (line, abpt, mixed).
    #[arg(long = "type", value_name = "TYPE")]
    pub types: Vec<DefectType>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root; its `train/` folder is used when present.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from a checkpoint (optimizer state included).
    #[arg(long, conflicts_with = "init")]
    pub resume: Option<PathBuf>,
    /// Start from a checkpoint's weights with a fresh optimizer.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root; its `test/` folder is used when present.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Alternating NG and OK image paths: `NG1 OK1 NG2 OK2 ...`.
    #[arg(required = true, num_args = 2.., value_name = "NG OK")]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, each holding a `report.json` from `eval`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

/// The clap command with each subcommand's help listing the config keys it
/// reads.
pub fn command() -> clap::Command {
    let keys = Config::keys().join("\n  ");
    let honored = format!("Config keys (set with --set KEY=VALUE or in --config):\n  {keys}");
    let mut cmd = Cli::command();
    for name in ["train", "eval", "infer"] {
        let text = honored.clone();
        cmd = cmd.mut_subcommand(name, |c| c.after_help(text));
    }
    cmd.mut_subcommand("synth", |c| {
        c.after_help("Config keys: none (synthesis is driven by the flags above and --seed).")
    })
    .mut_subcommand("report", |c| c.after_help("Config keys: none."))
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// One-line machine-parsable error.
pub fn error_line(e: &Error) -> String {
    let kind = match e {
        Error::InvalidConfig(_) => "invalid_config",
        Error::ConfigParse(_) => "config_parse",
        Error::Shape(_) => "shape",
        Error::InvalidInput(_) => "invalid_input",
        Error::Io { .. } => "io",
        Error::Image { .. } => "image",
        Error::Dataset(_) => "dataset",
        Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
        Error::CheckpointVersion { .. } => "checkpoint_version",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Poisson(_) => "poisson",
    };
    let msg = e.to_string().replace('\n', " ");
    format!("error kind={kind} message={msg}")
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.common.device != "cpu" {
        return Err(Error::InvalidInput(format!(
            "device `{}` is not available; only `cpu` is supported",
            cli.common.device
        )));
    }
    match &cli.command {
        Command::Synth(a) => synth(&cli.common, a),
        Command::Train(a) => train(&cli.common, a),
        Command::Eval(a) => eval(&cli.common, a),
        Command::Infer(a) => infer(&cli.common, a),
        Command::Report(a) => report(&cli.common, a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Config file (or defaults), then `--set` overrides, then `--seed`.
fn resolve_config(common: &Common, base: Option<Config>) -> Result<Config> {
    let cfg = match (&common.config, base) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(base)) => base,
        (None, None) => Config::default(),
    };
    let mut cfg = cfg.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidInput(format!("size `{s}` is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn synth(common: &Common, a: &SynthArgs) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    let patterns = match &a.patterns {
        Some(dir) => load_patterns(dir)?,
        None => {
            let (w, h) = parse_size(&a.size)?;
            builtin_patterns(w, h, seed)
        }
    };
    let mut opts = BuildOptions::new(a.count, seed);
    if !a.types.is_empty() {
        opts.defect_types = a.types.clone();
    }
    let manifest = build_dataset(&patterns, &common.out, &opts)?;
    println!(
        "wrote {} samples to {}",
        manifest.len(),
        common.out.display()
    );
    Ok(())
}

/// `root/sub` when it exists, else `root`.
fn split_dir(root: &Path, sub: &str) -> PathBuf {
    let d = root.join(sub);
    if d.join("ng").is_dir() {
        d
    } else {
        root.to_path_buf()
    }
}

fn train(common: &Common, a: &TrainArgs) -> Result<()> {
    let log_path = common.out.join(LOSS_LOG_FILE);
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let cfg = resolve_config(common, Some(ck.config.clone()))?;
            if cfg.model != ck.config.model {
                return Err(Error::InvalidInput(
                    "model settings cannot change when resuming".into(),
                ));
            }
            let mut t = Trainer::from_checkpoint(ck);
            t.config = cfg;
            t
        }
        None => {
            let cfg = resolve_config(common, None)?;
            match &a.init {
                Some(path) => Trainer::with_weights(cfg, &Checkpoint::load(path)?.model)?,
                None => Trainer::new(cfg)?,
            }
        }
    };
    let cfg = trainer.config.clone();
    let protocol = ProtocolSpec::from_config(&cfg);
    let all = load_pairs(&split_dir(&a.data, "train"), None, cfg.model.num_classes)?;
    let pairs = protocol.training_pairs(&all, cfg.train.seed)?;
    create_dir(&common.out)?;
    cfg.save(&common.out.join(CONFIG_FILE))?;

    // Append-only log: a resumed run continues the existing file.
    let fresh = a.resume.is_none() || !log_path.exists();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if fresh {
        writeln!(log, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    let mut io_err = None;
    let history = trainer.run(&pairs, |r: &LossRecord| {
        if io_err.is_none() {
            if let Err(e) = writeln!(log, "{}", r.csv_line()) {
                io_err = Some(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }
    let ck_path = common.out.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&ck_path)?;
    println!(
        "trained {} steps on {} pairs ({}); checkpoint {}",
        history.len(),
        pairs.len(),
        protocol.name,
        ck_path.display()
    );
    Ok(())
}

/// Checkpoint weights under a possibly overridden configuration.
fn load_model(common: &Common, path: &Path) -> Result<(Config, crate::model::Model)> {
    let ck = Checkpoint::load(path)?;
    let cfg = resolve_config(common, Some(ck.config.clone()))?;
    let t = Trainer::with_weights(cfg.clone(), &ck.model)?;
    Ok((cfg, t.model))
}

fn eval(common: &Common, a: &EvalArgs) -> Result<()> {
    let (cfg, model) = load_model(common, &a.checkpoint)?;
    let protocol = ProtocolSpec::from_config(&cfg);
    let all = load_pairs(&split_dir(&a.data, "test"), None, cfg.model.num_classes)?;
    let pairs = protocol.test_pairs(&all);
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no test pairs for protocol {}",
            protocol.name
        )));
    }
    let ev = evaluate(&model, &pairs, &protocol, &cfg)?;
    let maps = common.out.join("error_maps");
    create_dir(&maps)?;
    for s in &ev.predictions {
        error_map(&s.pred, &s.gt)?
            .0
            .save_png(&maps.join(format!("{}.png", s.sample_id)))?;
    }
    write_curves(&ev.curve, &common.out.join(CURVES_FILE))?;
    let path = common.out.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&ev.report).expect("report serialises");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let s = &ev.report.scores;
    println!(
        "{} samples  mIoU {:.4}  mAcc {:.4}  aAcc {:.4}  mFscore {:.4}",
        ev.report.samples, s.miou, s.macc, s.aacc, s.mfscore
    );
    Ok(())
}

fn infer(common: &Common, a: &InferArgs) -> Result<()> {
    if !a.images.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(
            "images must come in NG OK pairs".into(),
        ));
    }
    let (cfg, model) = load_model(common, &a.checkpoint)?;
    create_dir(&common.out)?;
    let [h, w] = cfg.train.input_size;
    let t = &cfg.train;
    for chunk in a.images.chunks(2) {
        let ng = Image::load_png(&chunk[0])?;
        let ok = Image::load_png(&chunk[1])?;
        if ng.dims() != ok.dims() {
            return Err(Error::InvalidInput(format!(
                "{} and {} differ in size",
                chunk[0].display(),
                chunk[1].display()
            )));
        }
        let (ow, oh) = ng.dims();
        let stem = chunk[0]
            .file_stem()
            .map_or("pair".into(), |s| s.to_string_lossy().into_owned());
        let pair = ImagePair {
            mask: LabelMask::zeros(ow, oh),
            ng,
            ok,
            pattern_id: String::new(),
            sample_id: stem.clone(),
        };
        let (ng, ok, _) = crate::data::transform_pair(&pair, w, h, &AugmentParams::identity(w, h));
        let out = model.predict(
            &to_tensor(&ng, &t.norm_mean, &t.norm_std),
            &to_tensor(&ok, &t.norm_mean, &t.norm_std),
        )?;
        let prob = match model.mode() {
            crate::config::DecoderMode::IntraClass => defect_probability(&out.logits),
            crate::config::DecoderMode::OutOfClass => distance_probability(&out.dist, h, w),
        };
        let pred = match model.mode() {
            crate::config::DecoderMode::IntraClass => argmax_mask(&out.logits),
            crate::config::DecoderMode::OutOfClass => {
                LabelMask::new(w, h, prob.iter().map(|&p| (p >= 0.5) as u8).collect())
            }
        };
        pred.resize_nearest(ow, oh)
            .save_png(&common.out.join(format!("{stem}_pred.png")))?;
        let dist = distance_probability(&out.dist, h, w);
        Image::from_fn(w, h, |x, y| [dist[y * w + x] * 255.0; 3])
            .resize_bilinear(ow, oh)
            .save_png(&common.out.join(format!("{stem}_dist.png")))?;
    }
    println!(
        "wrote {} predictions to {}",
        a.images.len() / 2,
        common.out.display()
    );
    Ok(())
}

/// Markdown table of run reports, one row per run.
pub fn report_table(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from(
        "| run | protocol | mode | samples | mIoU | mAcc | aAcc | mFscore | best IoU |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for (name, r) in rows {
        let s = &r.scores;
        let best = r.best_iou.map_or(f64::NAN, |c| c.iou());
        out.push_str(&format!(
            "| {name} | {} | {:?} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.protocol, r.mode, r.samples, s.miou, s.macc, s.aacc, s.mfscore, best
        ));
    }
    out
}

fn report(common: &Common, a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for dir in &a.runs {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let r: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        rows.push((dir.display().to_string(), r));
    }
    let table = report_table(&rows);
    create_dir(&common.out)?;
    let path = common.out.join("report.md");
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_config_keys() {
        let mut cmd = command();
        let help = cmd
            .find_subcommand_mut("train")
            .unwrap()
            .render_long_help()
            .to_string();
        for k in Config::keys() {
            assert!(help.contains(&k), "missing {k}");
        }
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("64x32").unwrap(), (64, 32));
        assert!(parse_size("64").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = Error::InvalidConfig(vec!["a".into(), "b".into()]);
        let l = error_line(&e);
        assert!(l.starts_with("error kind=invalid_config message="));
        assert!(!l.contains('\n'));
    }
}
