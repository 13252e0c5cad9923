//! Command-line front end: `gen-data`, `train`, `eval`, `ablate`, `attn`.

mod config;

pub use config::{parse_config, parse_config_text, RunConfig, ALIASES, KEYS};

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgMatches, Command};

use crate::episodes::{generate_synthetic, load_features, write_features, Dataset};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, TrxModel};
use crate::rng::derive_seed;
use crate::tensor::{Precision, Real};
use crate::train_eval::{attention_analytics, metrics_row, run_ablation, train, AblationKind, MetricsRow};

pub const COMMANDS: [&str; 5] = ["gen-data", "train", "eval", "ablate", "attn"];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn with_config_args(mut cmd: Command) -> Command {
    cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("`key = value` configuration file; flags override it"),
    );
    for k in KEYS {
        let mut arg = Arg::new(k.name)
            .long(flag_name(k.name))
            .value_name("VALUE")
            .help(format!("{} [default: {}]", k.help, k.default))
            .num_args(1)
            .allow_hyphen_values(true);
        for (alias, target) in ALIASES {
            if *target == k.name {
                arg = arg.alias(*alias);
            }
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

pub fn command() -> Command {
    let about = [
        ("gen-data", "generate the synthetic benchmark into <out>/features.trxf"),
        ("train", "train a model, write <out>/model.trxm and evaluate it"),
        ("eval", "evaluate a checkpoint"),
        ("ablate", "run one ablation sweep into <out>/metrics.jsonl"),
        ("attn", "attention statistics of a checkpoint into <out>/attn/"),
    ];
    let mut cmd = Command::new("trx")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Few-shot sequence classification with cross-attention over ordered frame tuples")
        .subcommand_required(true);
    for (name, text) in about {
        cmd = cmd.subcommand(with_config_args(Command::new(name).about(text)));
    }
    cmd
}

/// Flag values in key-table order; these override the config file.
fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Writes `manifest.txt` before any other output; `finish` appends the end
/// timestamp.
struct Manifest {
    path: PathBuf,
}

impl Manifest {
    fn start(command: &str, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        let path = cfg.out.join("manifest.txt");
        let text = format!(
            "# trx run manifest\n# tool = trx {}\n# command = {command}\n# start_unix = {:.3}\n{}",
            env!("CARGO_PKG_VERSION"),
            unix_now(),
            cfg.to_config_text()
        );
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(Manifest { path })
    }

    fn finish(self) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "# end_unix = {:.3}", unix_now()).map_err(|e| Error::io(&self.path, e))
    }
}

struct MetricsFile {
    path: PathBuf,
    file: File,
}

impl MetricsFile {
    fn create(out: &Path) -> Result<Self> {
        let path = out.join("metrics.jsonl");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsFile { path, file })
    }

    fn push(&mut self, row: &MetricsRow) -> Result<()> {
        if !row.accuracy.is_finite() || !row.ci95.is_finite() {
            return Err(Error::Argument(format!("non-finite metrics in {} row", row.kind)));
        }
        let line = row.to_json();
        println!("{line}");
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

fn dataset(cfg: &RunConfig, min_frames: usize) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => load_features(path, cfg.synthetic.split_policy()),
        None => {
            let spec = if min_frames > cfg.synthetic.frames {
                cfg.synthetic.with_frames(min_frames)
            } else {
                cfg.synthetic.clone()
            };
            generate_synthetic(&spec, derive_seed(cfg.train.seed, "data"))
        }
    }
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.checkpoint.as_deref().ok_or(Error::MissingInput("checkpoint"))
}

fn run_train<T: Real>(cfg: &RunConfig) -> Result<()> {
    let data = dataset(cfg, 0)?;
    let (model, log) = train::<T>(&cfg.train, &data)?;
    let ckpt = cfg.out.join("model.trxm");
    save_checkpoint(&ckpt, &model)?;
    let log_path = cfg.out.join("train_log.csv");
    let mut text = String::from("episode,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
    let mut metrics = MetricsFile::create(&cfg.out)?;
    metrics.push(&metrics_row("train", &model, &data, &cfg.eval, cfg.train.seed, false)?)
}

fn run_eval<T: Real>(cfg: &RunConfig) -> Result<()> {
    let model: TrxModel<T> = load_checkpoint(checkpoint_path(cfg)?)?;
    let data = dataset(cfg, 0)?;
    let mut metrics = MetricsFile::create(&cfg.out)?;
    metrics.push(&metrics_row("eval", &model, &data, &cfg.eval, cfg.eval.seed, false)?)
}

fn run_ablate<T: Real>(cfg: &RunConfig) -> Result<()> {
    let plan = &cfg.plan;
    let max_frames = match plan.kind {
        AblationKind::FramesSweep => plan.frames.iter().copied().max().unwrap_or(0),
        _ => 0,
    };
    let data = dataset(cfg, max_frames)?;
    let mut metrics = MetricsFile::create(&cfg.out)?;
    run_ablation::<T>(plan, &data, |row| metrics.push(row))?;
    Ok(())
}

fn run_attn<T: Real>(cfg: &RunConfig) -> Result<()> {
    let model: TrxModel<T> = load_checkpoint(checkpoint_path(cfg)?)?;
    let data = dataset(cfg, 0)?;
    let stats = attention_analytics(&model, &data, &cfg.eval)?;
    stats.write(&cfg.out.join("attn"))?;
    println!(
        "{}",
        serde_json::json!({
            "queries": stats.queries,
            "multi_video_fraction": stats.multi_video_fraction(),
        })
    );
    Ok(())
}

fn dispatch<T: Real>(command: &str, cfg: &RunConfig) -> Result<()> {
    match command {
        "gen-data" => {
            let data = dataset(cfg, 0)?;
            write_features(&cfg.out.join("features.trxf"), data.videos())
        }
        "train" => run_train::<T>(cfg),
        "eval" => run_eval::<T>(cfg),
        "ablate" => run_ablate::<T>(cfg),
        "attn" => run_attn::<T>(cfg),
        other => Err(Error::Argument(format!("unknown command `{other}`"))),
    }
}

/// Runs one command line (including the program name).
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(args).map_err(|e| {
        let first = e.to_string().lines().next().unwrap_or("").to_string();
        Error::Argument(first.trim_start_matches("error: ").to_string())
    })?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = parse_config(sub.get_one::<String>("config").map(Path::new), &overrides(sub))?;
    if matches!(name, "eval" | "attn") {
        checkpoint_path(&cfg)?;
    }
    let manifest = Manifest::start(name, &cfg)?;
    match cfg.train.precision {
        Precision::F32 => dispatch::<f32>(name, &cfg)?,
        Precision::F64 => dispatch::<f64>(name, &cfg)?,
    }
    manifest.finish()
}

/// Process entry point: returns the exit code and reports failures as one
/// JSON line on stderr.
pub fn main_with_args(args: Vec<std::ffi::OsString>) -> i32 {
    // help and version go to stdout with a zero exit
    if let Err(e) = command().try_get_matches_from(args.clone()) {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            let _ = write!(std::io::stdout(), "{e}");
            return 0;
        }
    }
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}
