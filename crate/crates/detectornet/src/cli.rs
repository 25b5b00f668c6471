//! Batch command-line interface: synthesize, train, evaluate, predict, and
//! gradcheck subcommands over a flat key-value config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{
    historical_average, load_adjacency_csv, load_series_csv, make_windows, synthesize_dataset,
    write_series_csv, SampleBatch,
};
use crate::error::{Error, Result};
use crate::graph::DetectorGraph;
use crate::metrics::{evaluate_metrics, MetricsReport};
use crate::model::{DetectorNet, ModelConfig};
use crate::train::{gradient_check_model, predict_batch, train, TrainRunConfig};

/// Documented in the long help; every config key with its default.
pub const CONFIG_KEY_HELP: &str = "\
Config file: one `key = value` per line, `#` starts a comment.
Keys and defaults:
  series_csv          (required)  path to the detector series CSV
  adjacency_csv       (required)  path to the from,to,distance CSV
  sigma               auto        Gaussian kernel width; 'auto' = std of distances
  threshold           0           kernel weights below this become 0
  split_train         0.7         chronological split ratios (must sum to 1)
  split_val           0.1
  split_test          0.2
  n_nodes             auto        'auto' = inferred from the series header
  input_len           12          P, input window length
  output_len          12          Q, prediction horizon length
  input_width         2           1 = value only, 2 = value + time of day
  hidden_width        32          C, hidden channels
  n_layers            2           L, stacked attention + graph-conv layers
  diffusion_steps     2           K, diffusion order
  embed_dim           10          node embedding width
  dropout             0.3
  learnable_fusion    false       train the fusion scalars beta/gamma
  without_mta         false       ablation: drop multi-view temporal attention
  without_gta         false       ablation: drop global temporal attention
  without_da          false       ablation: drop the dynamic adjacency
  without_sa          false       ablation: drop the static diffusion
  predictor_mid_width 64
  output_width        1           predicted features per node per step
  ffn_factor          2           FFN hidden width = ffn_factor * hidden_width
  batch_size          64
  learning_rate       0.001
  lr_decay            0.5         multiplied into the lr every lr_decay_every epochs
  lr_decay_every      100
  weight_decay        0.00001
  max_epochs          100
  patience            20          early-stop patience in epochs
  seed                42

Output directory defaults to $DETECTORNET_OUT, then '.'.";

#[derive(Parser)]
#[command(
    name = "detectornet",
    version,
    about = "Spatial-temporal graph network for traffic forecasting",
    after_long_help = CONFIG_KEY_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Flat key-value config file (see --help for the key list).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $DETECTORNET_OUT, then '.').
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ring-graph dataset plus a starter config.
    Synth {
        #[arg(long, default_value_t = 8)]
        nodes: usize,
        #[arg(long, default_value_t = 2016)]
        steps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output directory (default: $DETECTORNET_OUT, then '.').
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes manifest, checkpoint, and loss trace.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Train an ablated variant: without_mta, without_gta, without_da, without_sa.
        #[arg(long)]
        ablate: Option<String>,
    },
    /// Evaluate on the test split at horizons 3/6/12 (clamped to Q).
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint to evaluate; omit to score a freshly initialized model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also report a baseline from the same split; only 'ha' is known.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Write per-node per-horizon predictions for the test split as CSV.
    Predict {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference gradient check on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

/// All config-file keys, materialized with defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppConfig {
    pub series_csv: Option<String>,
    pub adjacency_csv: Option<String>,
    pub sigma: Option<f64>,
    pub threshold: f64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub n_nodes: Option<usize>,
    pub model: ModelConfig,
    pub run: TrainRunConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            series_csv: None,
            adjacency_csv: None,
            sigma: None,
            threshold: 0.0,
            split_train: 0.7,
            split_val: 0.1,
            split_test: 0.2,
            n_nodes: None,
            model: ModelConfig::default(),
            run: TrainRunConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn parse_file(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config '{}': {e}", path.display())))?;
        AppConfig::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<AppConfig> {
        let mut cfg = AppConfig::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!("config line {}: expected 'key = value'", idx + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    Error::Usage(m) => Error::Usage(format!("config line {}: {m}", idx + 1)),
                    other => other,
                })?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Usage(format!("bad value '{value}' for key '{key}'")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Usage(format!(
                    "key '{key}' expects true or false, got '{value}'"
                ))),
            }
        }
        match key {
            "series_csv" => self.series_csv = Some(value.to_string()),
            "adjacency_csv" => self.adjacency_csv = Some(value.to_string()),
            "sigma" => {
                self.sigma = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "threshold" => self.threshold = num(key, value)?,
            "split_train" => self.split_train = num(key, value)?,
            "split_val" => self.split_val = num(key, value)?,
            "split_test" => self.split_test = num(key, value)?,
            "n_nodes" => {
                self.n_nodes = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "input_len" => self.model.input_len = num(key, value)?,
            "output_len" => self.model.output_len = num(key, value)?,
            "input_width" => self.model.input_width = num(key, value)?,
            "hidden_width" => self.model.hidden_width = num(key, value)?,
            "n_layers" => self.model.n_layers = num(key, value)?,
            "diffusion_steps" => self.model.diffusion_steps = num(key, value)?,
            "embed_dim" => self.model.embed_dim = num(key, value)?,
            "dropout" => self.model.dropout = num(key, value)?,
            "learnable_fusion" => self.model.learnable_fusion = flag(key, value)?,
            "without_mta" => self.model.without_mta = flag(key, value)?,
            "without_gta" => self.model.without_gta = flag(key, value)?,
            "without_da" => self.model.without_da = flag(key, value)?,
            "without_sa" => self.model.without_sa = flag(key, value)?,
            "predictor_mid_width" => self.model.predictor_mid_width = num(key, value)?,
            "output_width" => self.model.output_width = num(key, value)?,
            "ffn_factor" => self.model.ffn_factor = num(key, value)?,
            "batch_size" => self.run.batch_size = num(key, value)?,
            "learning_rate" => self.run.learning_rate = num(key, value)?,
            "lr_decay" => self.run.lr_decay = num(key, value)?,
            "lr_decay_every" => self.run.lr_decay_every = num(key, value)?,
            "weight_decay" => self.run.weight_decay = num(key, value)?,
            "max_epochs" => self.run.max_epochs = num(key, value)?,
            "patience" => self.run.patience = num(key, value)?,
            "seed" => {
                let s: u64 = num(key, value)?;
                self.model.seed = s;
                self.run.seed = s;
            }
            _ => return Err(Error::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.run.seed = seed;
    }

    /// Render every key with its resolved value, in the documented order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let opt_str = |v: &Option<String>| v.clone().unwrap_or_default();
        let _ = writeln!(out, "series_csv = {}", opt_str(&self.series_csv));
        let _ = writeln!(out, "adjacency_csv = {}", opt_str(&self.adjacency_csv));
        match self.sigma {
            Some(s) => {
                let _ = writeln!(out, "sigma = {s}");
            }
            None => {
                let _ = writeln!(out, "sigma = auto");
            }
        }
        let _ = writeln!(out, "threshold = {}", self.threshold);
        let _ = writeln!(out, "split_train = {}", self.split_train);
        let _ = writeln!(out, "split_val = {}", self.split_val);
        let _ = writeln!(out, "split_test = {}", self.split_test);
        match self.n_nodes {
            Some(n) => {
                let _ = writeln!(out, "n_nodes = {n}");
            }
            None => {
                let _ = writeln!(out, "n_nodes = auto");
            }
        }
        let m = &self.model;
        let _ = writeln!(out, "input_len = {}", m.input_len);
        let _ = writeln!(out, "output_len = {}", m.output_len);
        let _ = writeln!(out, "input_width = {}", m.input_width);
        let _ = writeln!(out, "hidden_width = {}", m.hidden_width);
        let _ = writeln!(out, "n_layers = {}", m.n_layers);
        let _ = writeln!(out, "diffusion_steps = {}", m.diffusion_steps);
        let _ = writeln!(out, "embed_dim = {}", m.embed_dim);
        let _ = writeln!(out, "dropout = {}", m.dropout);
        let _ = writeln!(out, "learnable_fusion = {}", m.learnable_fusion);
        let _ = writeln!(out, "without_mta = {}", m.without_mta);
        let _ = writeln!(out, "without_gta = {}", m.without_gta);
        let _ = writeln!(out, "without_da = {}", m.without_da);
        let _ = writeln!(out, "without_sa = {}", m.without_sa);
        let _ = writeln!(out, "predictor_mid_width = {}", m.predictor_mid_width);
        let _ = writeln!(out, "output_width = {}", m.output_width);
        let _ = writeln!(out, "ffn_factor = {}", m.ffn_factor);
        let r = &self.run;
        let _ = writeln!(out, "batch_size = {}", r.batch_size);
        let _ = writeln!(out, "learning_rate = {}", r.learning_rate);
        let _ = writeln!(out, "lr_decay = {}", r.lr_decay);
        let _ = writeln!(out, "lr_decay_every = {}", r.lr_decay_every);
        let _ = writeln!(out, "weight_decay = {}", r.weight_decay);
        let _ = writeln!(out, "max_epochs = {}", r.max_epochs);
        let _ = writeln!(out, "patience = {}", r.patience);
        let _ = writeln!(out, "seed = {}", r.seed);
        out
    }
}

/// Everything needed to reproduce a run, written before training starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub seed: u64,
    /// The fully resolved config, verbatim in the config-file format.
    pub resolved_config: String,
    /// SHA-256 hex digest per input file.
    pub input_digests: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn out_dir(explicit: &Option<PathBuf>) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    if let Ok(env) = std::env::var("DETECTORNET_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(".")
}

/// Held for the duration of a subcommand that writes into a directory;
/// refuses to start if another run holds the directory.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".detectornet.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "output directory is locked by another run ({} exists)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

struct LoadedData {
    graph: DetectorGraph,
    train: SampleBatch,
    val: SampleBatch,
    test: SampleBatch,
    inputs: Vec<PathBuf>,
}

fn load_data(cfg: &mut AppConfig) -> Result<LoadedData> {
    let series_path = PathBuf::from(cfg.series_csv.clone().ok_or_else(|| {
        Error::Usage("config key 'series_csv' is required for this command".into())
    })?);
    let adjacency_path = PathBuf::from(cfg.adjacency_csv.clone().ok_or_else(|| {
        Error::Usage("config key 'adjacency_csv' is required for this command".into())
    })?);
    let series = load_series_csv(&series_path)?;
    let n = series.n_nodes();
    if let Some(expected) = cfg.n_nodes {
        if expected != n {
            return Err(Error::Usage(format!(
                "config says n_nodes = {expected} but the series has {n} columns"
            )));
        }
    }
    cfg.n_nodes = Some(n);
    cfg.model.n_nodes = n;
    let adjacency = load_adjacency_csv(&adjacency_path, n, cfg.sigma, cfg.threshold)?;
    let graph = DetectorGraph::new(n, adjacency)?;
    let (train, val, test) = make_windows(
        &series,
        cfg.model.input_len,
        cfg.model.output_len,
        cfg.model.input_width,
        (cfg.split_train, cfg.split_val, cfg.split_test),
    )?;
    Ok(LoadedData {
        graph,
        train,
        val,
        test,
        inputs: vec![series_path, adjacency_path],
    })
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &AppConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    let mut digests = BTreeMap::new();
    for path in inputs {
        digests.insert(path.display().to_string(), sha256_hex(path)?);
    }
    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: cfg.run.seed,
        resolved_config: cfg.render(),
        input_digests: digests,
        output_paths: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    Ok(())
}

/// Horizons reported by `eval`: 3, 6, and 12 steps, clamped to Q.
pub fn report_horizons(output_len: usize) -> Vec<usize> {
    let mut horizons: Vec<usize> = [3usize, 6, 12]
        .iter()
        .map(|h| (*h).min(output_len))
        .collect();
    horizons.dedup();
    horizons
}

fn filtered_json_lines(report: &MetricsReport, horizons: &[usize]) -> String {
    let mut out = String::new();
    for slice in &report.per_horizon {
        if slice.horizon.map_or(false, |h| horizons.contains(&h)) {
            out.push_str(&serde_json::to_string(slice).unwrap());
            out.push('\n');
        }
    }
    out.push_str(&serde_json::to_string(&report.aggregate).unwrap());
    out.push('\n');
    out
}

fn cmd_synth(nodes: usize, steps: usize, seed: u64, out: &Option<PathBuf>) -> Result<()> {
    let dir = out_dir(out);
    let _lock = DirLock::acquire(&dir)?;
    let (series, adjacency) = synthesize_dataset(nodes, steps, seed)?;
    let series_path = dir.join("series.csv");
    write_series_csv(&series, &series_path)?;
    let adjacency_path = dir.join("adjacency.csv");
    let mut text = String::from("from,to,distance\n");
    for i in 0..nodes {
        for j in 0..nodes {
            if adjacency[i * nodes + j] != 0.0 {
                let _ = writeln!(text, "{i},{j},0");
            }
        }
    }
    std::fs::write(&adjacency_path, text)?;
    let mut cfg = AppConfig::default();
    cfg.series_csv = Some(series_path.display().to_string());
    cfg.adjacency_csv = Some(adjacency_path.display().to_string());
    cfg.sigma = Some(1.0);
    cfg.set_seed(seed);
    let config_path = dir.join("run.conf");
    std::fs::write(&config_path, cfg.render())?;
    println!(
        "wrote {}, {}, {}",
        series_path.display(),
        adjacency_path.display(),
        config_path.display()
    );
    Ok(())
}

fn cmd_train(common: &CommonOpts, ablate: &Option<String>) -> Result<()> {
    let mut cfg = AppConfig::parse_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(flag) = ablate {
        cfg.set(flag, "true").map_err(|_| {
            Error::Usage(format!(
                "unknown ablation '{flag}' (expected without_mta, without_gta, without_da, or without_sa)"
            ))
        })?;
        if !flag.starts_with("without_") {
            return Err(Error::Usage(format!("'{flag}' is not an ablation flag")));
        }
    }
    let dir = out_dir(&common.out);
    let _lock = DirLock::acquire(&dir)?;
    let data = load_data(&mut cfg)?;
    cfg.model.validate()?;
    cfg.run.validate()?;
    let checkpoint_path = dir.join("checkpoint.dnet");
    let trace_path = dir.join("loss_trace.csv");
    write_manifest(
        &dir,
        "train",
        &cfg,
        &data.inputs,
        &[checkpoint_path.clone(), trace_path.clone()],
    )?;
    let mut model = DetectorNet::new(cfg.model.clone())?;
    let outcome = train(&mut model, &data.graph, &data.train, &data.val, &cfg.run)?;
    if outcome.saw_empty_mask {
        eprintln!("warning: at least one batch had an all-zero mask and was skipped");
    }
    save_checkpoint(&checkpoint_path, &outcome.checkpoint)?;
    let mut trace = String::from("epoch,lr,train_loss,val_mae\n");
    for r in &outcome.trace {
        let _ = writeln!(trace, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_mae);
    }
    std::fs::write(&trace_path, trace)?;
    println!(
        "trained {} epochs, best val MAE {:.6} at epoch {}; wrote {}",
        outcome.trace.len(),
        outcome.best_val_mae,
        outcome.best_epoch,
        checkpoint_path.display()
    );
    Ok(())
}

fn model_for_eval(
    cfg: &AppConfig,
    checkpoint: &Option<PathBuf>,
    test: &SampleBatch,
) -> Result<(DetectorNet, f64, f64)> {
    match checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let model = ckpt.build_model()?;
            Ok((model, ckpt.mean, ckpt.std))
        }
        None => {
            let model = DetectorNet::new(cfg.model.clone())?;
            Ok((model, test.mean, test.std))
        }
    }
}

fn cmd_eval(
    common: &CommonOpts,
    checkpoint: &Option<PathBuf>,
    baseline: &Option<String>,
) -> Result<()> {
    if let Some(b) = baseline {
        if b != "ha" {
            return Err(Error::Usage(format!("unknown baseline '{b}' (expected 'ha')")));
        }
    }
    let mut cfg = AppConfig::parse_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    let dir = out_dir(&common.out);
    let _lock = DirLock::acquire(&dir)?;
    let data = load_data(&mut cfg)?;
    if data.test.is_empty() {
        return Err(Error::Data("test split has no samples".into()));
    }
    let (mut model, mean, std) = model_for_eval(&cfg, checkpoint, &data.test)?;
    let mut test = data.test;
    test.mean = mean;
    test.std = std;
    let preds = predict_batch(&mut model, &data.graph, &test, cfg.run.batch_size)?;
    let report = evaluate_metrics(&preds, &test.targets, &test.masks, test.output_len)?;
    let horizons = report_horizons(cfg.model.output_len);
    let lines = filtered_json_lines(&report, &horizons);
    let metrics_path = dir.join("metrics.jsonl");
    std::fs::write(&metrics_path, &lines)?;
    print!("{lines}");
    if baseline.is_some() {
        let ha = historical_average(&test);
        let ha_report = evaluate_metrics(&ha, &test.targets, &test.masks, test.output_len)?;
        let ha_lines = filtered_json_lines(&ha_report, &horizons);
        let ha_path = dir.join("metrics_ha.jsonl");
        std::fs::write(&ha_path, &ha_lines)?;
        print!("{ha_lines}");
    }
    Ok(())
}

fn cmd_predict(common: &CommonOpts, checkpoint: &Path) -> Result<()> {
    let mut cfg = AppConfig::parse_file(&common.config)?;
    let dir = out_dir(&common.out);
    let _lock = DirLock::acquire(&dir)?;
    let data = load_data(&mut cfg)?;
    if data.test.is_empty() {
        return Err(Error::Data("test split has no samples".into()));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let mut model = ckpt.build_model()?;
    let mut test = data.test;
    test.mean = ckpt.mean;
    test.std = ckpt.std;
    let preds = predict_batch(&mut model, &data.graph, &test, cfg.run.batch_size)?;
    let (n, q) = (test.n_nodes, test.output_len);
    let mut out = String::from("sample,node,horizon,prediction\n");
    for s in 0..test.n_samples {
        for node in 0..n {
            for h in 0..q {
                let _ = writeln!(
                    out,
                    "{s},{node},{},{}",
                    h + 1,
                    preds[(s * n + node) * q + h]
                );
            }
        }
    }
    let path = dir.join("predictions.csv");
    std::fs::write(&path, out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let config = ModelConfig {
        n_nodes: 3,
        input_len: 3,
        output_len: 3,
        hidden_width: 4,
        n_layers: 1,
        diffusion_steps: 2,
        embed_dim: 3,
        predictor_mid_width: 4,
        seed,
        ..ModelConfig::default()
    };
    let report = gradient_check_model(&config, seed)?;
    for entry in &report.entries {
        println!(
            "{:<40} coords {:>4}  max rel err {:.3e}",
            entry.name, entry.coords_checked, entry.max_rel_err
        );
    }
    println!("overall max rel err {:.3e}", report.max_rel_err);
    let failures = report.failures(1e-3);
    if !failures.is_empty() {
        let names: Vec<&str> = failures.iter().map(|e| e.name.as_str()).collect();
        return Err(Error::Numeric(format!(
            "gradient check failed for: {}",
            names.join(", ")
        )));
    }
    Ok(())
}

/// Entry point shared by `main` and the integration tests. Returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth {
            nodes,
            steps,
            seed,
            out,
        } => cmd_synth(*nodes, *steps, *seed, out),
        Command::Train { common, ablate } => cmd_train(common, ablate),
        Command::Eval {
            common,
            checkpoint,
            baseline,
        } => cmd_eval(common, checkpoint, baseline),
        Command::Predict { common, checkpoint } => cmd_predict(common, checkpoint),
        Command::Gradcheck { seed } => cmd_gradcheck(*seed),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_roundtrip_through_render() {
        let cfg = AppConfig::default();
        let rendered = cfg.render();
        let parsed = AppConfig::parse_str(&rendered).unwrap();
        assert_eq!(parsed.render(), rendered);
    }

    #[test]
    fn unknown_key_names_the_key() {
        match AppConfig::parse_str("bogus_key = 1\n").unwrap_err() {
            Error::Usage(msg) => assert!(msg.contains("bogus_key"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = AppConfig::parse_str("# a comment\n\nhidden_width = 16 # trailing\n").unwrap();
        assert_eq!(cfg.model.hidden_width, 16);
    }

    #[test]
    fn bad_value_is_usage_error_with_line() {
        match AppConfig::parse_str("hidden_width = soon\n").unwrap_err() {
            Error::Usage(msg) => {
                assert!(msg.contains("line 1") && msg.contains("hidden_width"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_key_sets_both_model_and_run() {
        let cfg = AppConfig::parse_str("seed = 7\n").unwrap();
        assert_eq!(cfg.model.seed, 7);
        assert_eq!(cfg.run.seed, 7);
    }

    #[test]
    fn sigma_and_n_nodes_accept_auto() {
        let cfg = AppConfig::parse_str("sigma = auto\nn_nodes = auto\n").unwrap();
        assert!(cfg.sigma.is_none());
        assert!(cfg.n_nodes.is_none());
        let cfg = AppConfig::parse_str("sigma = 2.5\nn_nodes = 9\n").unwrap();
        assert_eq!(cfg.sigma, Some(2.5));
        assert_eq!(cfg.n_nodes, Some(9));
    }

    #[test]
    fn horizons_clamped_to_output_len() {
        assert_eq!(report_horizons(12), vec![3, 6, 12]);
        assert_eq!(report_horizons(6), vec![3, 6]);
        assert_eq!(report_horizons(3), vec![3]);
        assert_eq!(report_horizons(2), vec![2]);
    }

    #[test]
    fn every_documented_key_parses() {
        // every key mentioned in the help text must be accepted
        for line in CONFIG_KEY_HELP.lines() {
            let trimmed = line.trim_start();
            let Some(key) = trimmed.split_whitespace().next() else {
                continue;
            };
            if !key.chars().all(|c| c.is_ascii_lowercase() || c == '_') || key.len() < 4 {
                continue;
            }
            let mut cfg = AppConfig::default();
            let value = match key {
                "series_csv" | "adjacency_csv" => "x.csv",
                "sigma" | "n_nodes" => "auto",
                "learnable_fusion" | "without_mta" | "without_gta" | "without_da"
                | "without_sa" => "true",
                _ => "1",
            };
            if cfg.set(key, value).is_err() && key != "keys" && key != "config" {
                panic!("documented key '{key}' rejected");
            }
        }
    }
}
