//! The `eris` command line: dataset generation, training, evaluation, the
//! orthogonality flow simulator, λ sweeps, the ablation grid and report
//! aggregation. Every run writes a manifest holding its fully resolved
//! configuration; passing that manifest back through `--config` repeats the
//! run exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_dataset, lodo_split, save_dataset, SyntheticConfig, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::linalg::{sample_normal, Rng};
use crate::model::{load_params, save_params, ArchConfig, ModelParams};
use crate::orthoflow::{describe, simulate_flow, verify_lemma};
use crate::train::{fit, Ablation, TrainConfig, TrainHistory};

/// Settings of the `ortho-sim` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrthoSimConfig {
    /// rows of `W_d` and `W_l`
    pub h: usize,
    /// columns of `W_d` and `W_l`
    pub d: usize,
    pub dt: f64,
    pub steps: usize,
    pub log_every: usize,
    pub init_stddev: f64,
    /// allowed per-step loss increase in the monotonicity check
    pub monotone_tol: f64,
    /// required `final / initial` loss ratio
    pub reduction: f64,
}

impl Default for OrthoSimConfig {
    fn default() -> Self {
        Self {
            h: 16,
            d: 8,
            dt: 1e-3,
            steps: 200_000,
            log_every: 100,
            init_stddev: 1.0,
            monotone_tol: 1e-12,
            reduction: 1e-8,
        }
    }
}

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub ortho: OrthoSimConfig,
    /// dataset CSV; the synthetic generator is used when absent
    pub data: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub target_domain: Option<usize>,
    pub sweep_param: Option<String>,
    pub sweep_values: Vec<String>,
    pub inputs: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: 0,
            synthetic: SyntheticConfig::default(),
            arch: ArchConfig::benchmark(),
            train: TrainConfig::benchmark(),
            ortho: OrthoSimConfig::default(),
            data: None,
            params: None,
            out: None,
            target_domain: None,
            sweep_param: None,
            sweep_values: Vec::new(),
            inputs: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Parser)]
#[command(name = "eris", version, about = "Energy-regularized domain generalization for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// output file or directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
struct DataFlags {
    /// dataset CSV (default: synthetic data from the config)
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "target-domain")]
    target_domain: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct TrainFlags {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long = "lambda-adv")]
    lambda_adv: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "no-dse")]
    no_dse: bool,
    #[arg(long = "no-lse")]
    no_lse: bool,
    #[arg(long = "no-ortho")]
    no_ortho: bool,
    #[arg(long = "no-ag")]
    no_ag: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; with --target-domain, hold that domain out and evaluate on it
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Evaluate saved parameters
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        /// parameter file written by `train`
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Simulate the orthogonality gradient flow and check monotone decay
    OrthoSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train and evaluate once per value of one training parameter
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// name of a numeric training field, e.g. lambda2
        #[arg(long)]
        param: Option<String>,
        /// comma-separated values
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Run ablation configurations A to G over held-out domains
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Collect metrics JSON files into one CSV
    Report {
        #[command(flatten)]
        common: Common,
        /// metrics JSON files
        inputs: Vec<PathBuf>,
    },
}

/// Parses `argv` (without the program name), runs one subcommand and returns
/// the process exit code: 0 on success, 1 on usage errors, 2 on runtime
/// errors.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("eris".to_string()).chain(argv)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(cli.command) {
        Ok(c) => c,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            return 1;
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&cfg) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn base_config(common: &Common, command: &str) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.synthetic.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: &DataFlags) {
    if let Some(p) = &data.data {
        cfg.data = Some(p.clone());
    }
    if let Some(t) = data.target_domain {
        cfg.target_domain = Some(t);
    }
}

fn apply_train(cfg: &mut RunConfig, f: &TrainFlags) {
    let t = &mut cfg.train;
    if let Some(v) = f.lambda1 {
        t.lambda1 = v;
    }
    if let Some(v) = f.lambda2 {
        t.lambda2 = v;
    }
    if let Some(v) = f.lambda_adv {
        t.lambda_adv = v;
    }
    if let Some(v) = f.epochs {
        t.epochs = v;
    }
    t.enable_dse &= !f.no_dse;
    t.enable_lse &= !f.no_lse;
    t.enable_ortho &= !f.no_ortho;
    t.enable_ag &= !f.no_ag;
}

fn resolve(command: Command) -> CliResult<RunConfig> {
    Ok(match command {
        Command::GenData { common } => base_config(&common, "gen-data")?,
        Command::Train { common, data, train } => {
            let mut cfg = base_config(&common, "train")?;
            apply_data(&mut cfg, &data);
            apply_train(&mut cfg, &train);
            cfg
        }
        Command::Eval { common, data, params } => {
            let mut cfg = base_config(&common, "eval")?;
            apply_data(&mut cfg, &data);
            if params.is_some() {
                cfg.params = params;
            }
            cfg
        }
        Command::OrthoSim {
            common,
            h,
            d,
            dt,
            steps,
        } => {
            let mut cfg = base_config(&common, "ortho-sim")?;
            let o = &mut cfg.ortho;
            o.h = h.unwrap_or(o.h);
            o.d = d.unwrap_or(o.d);
            o.dt = dt.unwrap_or(o.dt);
            o.steps = steps.unwrap_or(o.steps);
            cfg
        }
        Command::Sweep {
            common,
            data,
            train,
            param,
            values,
        } => {
            let mut cfg = base_config(&common, "sweep")?;
            apply_data(&mut cfg, &data);
            apply_train(&mut cfg, &train);
            if param.is_some() {
                cfg.sweep_param = param;
            }
            if !values.is_empty() {
                cfg.sweep_values = values;
            }
            cfg
        }
        Command::Ablate { common, data, train } => {
            let mut cfg = base_config(&common, "ablate")?;
            apply_data(&mut cfg, &data);
            apply_train(&mut cfg, &train);
            cfg
        }
        Command::Report { common, inputs } => {
            let mut cfg = base_config(&common, "report")?;
            if !inputs.is_empty() {
                cfg.inputs = inputs;
            }
            cfg
        }
    })
}

fn execute(cfg: &RunConfig) -> CliResult<()> {
    match cfg.command.as_str() {
        "gen-data" => cmd_gen_data(cfg),
        "train" => cmd_train(cfg),
        "eval" => cmd_eval(cfg),
        "ortho-sim" => cmd_ortho_sim(cfg),
        "sweep" => cmd_sweep(cfg),
        "ablate" => cmd_ablate(cfg),
        "report" => cmd_report(cfg),
        other => Err(Failure::Usage(format!("unknown command `{other}`"))),
    }
}

fn require_out(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.out
        .as_deref()
        .ok_or_else(|| Failure::Usage(format!("`{}` needs --out", cfg.command)))
}

/// `<dir>/manifest.json` for directory outputs, `<stem>.manifest.json` next
/// to file outputs.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}.manifest.json"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(cfg: &RunConfig, out: &Path, is_dir: bool) -> Result<()> {
    write_text(&manifest_path(out, is_dir), &cfg.to_json()?)
}

fn load_data(cfg: &RunConfig) -> Result<TimeSeriesDataset> {
    match &cfg.data {
        Some(p) => load_dataset(p),
        None => gen_synthetic(&cfg.synthetic),
    }
}

fn split(cfg: &RunConfig, ds: &TimeSeriesDataset) -> Result<(TimeSeriesDataset, Option<TimeSeriesDataset>)> {
    match cfg.target_domain {
        Some(t) => {
            let (train, test) = lodo_split(ds, t)?;
            Ok((train, Some(test)))
        }
        None => Ok((ds.clone(), None)),
    }
}

fn echo(cfg: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn cmd_gen_data(cfg: &RunConfig) -> CliResult<()> {
    let out = require_out(cfg)?;
    let ds = gen_synthetic(&cfg.synthetic)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_dataset(&ds, out)?;
    write_manifest(cfg, out, false)?;
    log::info!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

struct RunOutcome {
    history: TrainHistory,
    metrics: Option<MetricsReport>,
}

/// Trains on `ds` (minus the target domain, if any), writing history,
/// parameters and held-out metrics into `dir`.
fn train_into(cfg: &RunConfig, ds: &TimeSeriesDataset, dir: &Path) -> Result<RunOutcome> {
    ensure_dir(dir)?;
    let (train, test) = split(cfg, ds)?;
    let arch = cfg.arch.clone().fitted_to(ds);
    let (params, history) = fit(&train, &cfg.train, &arch)?;
    history.save_csv(dir.join("history.csv"))?;
    save_params(&params, dir.join("params.bin"))?;
    let metrics = match test {
        Some(test) => {
            let mut m = eval::evaluate(&params, &test)?;
            m.config = echo(cfg)?;
            m.save(dir.join("metrics.json"))?;
            Some(m)
        }
        None => None,
    };
    Ok(RunOutcome { history, metrics })
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let out = require_out(cfg)?;
    let ds = load_data(cfg)?;
    let outcome = train_into(cfg, &ds, out)?;
    write_manifest(cfg, out, true)?;
    let last = outcome.history.epochs.last().expect("at least one epoch");
    log::info!(
        "trained {} epochs: loss {:.4}, train acc {:.3}, cross norm {:.3e}",
        outcome.history.len(),
        last.losses.l_total,
        last.train_acc,
        last.cross_norm
    );
    if let Some(m) = outcome.metrics {
        log::info!("held-out accuracy {:.4}, ece {:.4}", m.accuracy, m.ece);
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> CliResult<()> {
    let out = require_out(cfg)?;
    let params_path = cfg
        .params
        .as_deref()
        .ok_or_else(|| Failure::Usage("`eval` needs --params".into()))?;
    let params: ModelParams = load_params(params_path)?;
    let ds = load_data(cfg)?;
    let ds = match cfg.target_domain {
        Some(t) => lodo_split(&ds, t)?.1,
        None => ds,
    };
    ensure_dir(out)?;
    let mut report = eval::evaluate(&params, &ds)?;
    report.config = echo(cfg)?;
    report.save(out.join("metrics.json"))?;
    let feats = params.encode(&ds)?;
    let corr = eval::feature_correlation_matrix(&feats)?;
    let mi = eval::mutual_information_matrix(&feats, eval::DEFAULT_MI_BINS)?;
    eval::save_matrix_csv(&corr.matrix, out.join("corr.csv"))?;
    eval::save_matrix_csv(&mi.matrix, out.join("mi.csv"))?;
    eval::export_embeddings(&params, &ds, out.join("embeddings.csv"))?;
    write_manifest(cfg, out, true)?;
    log::info!(
        "accuracy {:.4} f1 {:.4} ece {:.4} mean |corr| {:.4}",
        report.accuracy,
        report.macro_f1,
        report.ece,
        corr.mean_abs_off_diagonal()
    );
    Ok(())
}

fn cmd_ortho_sim(cfg: &RunConfig) -> CliResult<()> {
    let out = require_out(cfg)?;
    let o = &cfg.ortho;
    if o.h == 0 || o.d == 0 {
        return Err(Failure::Usage("--h and --d must be at least 1".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let wd = sample_normal(&mut rng, o.h, o.d, o.init_stddev)?;
    let wl = sample_normal(&mut rng, o.h, o.d, o.init_stddev)?;
    let result = simulate_flow(&wd, &wl, o.dt, o.steps, o.log_every)?;
    result.trajectory.save_csv(out)?;
    write_manifest(cfg, out, false)?;
    let report = verify_lemma(&result.trajectory, o.monotone_tol)?;
    let ratio = report.final_loss / report.initial_loss;
    println!("{}", describe(&report));
    println!(
        "reduction {:.3e} (required {:.1e}); certified: {}",
        ratio,
        o.reduction,
        report.monotone && ratio <= o.reduction
    );
    Ok(())
}

/// Sets one numeric field of `train` from its text form.
pub fn set_train_param(train: &TrainConfig, name: &str, value: &str) -> Result<TrainConfig> {
    let mut obj = serde_json::to_value(train)?;
    let map = obj.as_object_mut().expect("config serializes to an object");
    if !map.contains_key(name) || name == "margins" {
        return Err(Error::InvalidArgument(format!("unknown training parameter `{name}`")));
    }
    let parsed: serde_json::Value = serde_json::from_str(value.trim())
        .map_err(|_| Error::InvalidArgument(format!("`{value}` is not a number")))?;
    if !parsed.is_number() {
        return Err(Error::InvalidArgument(format!("`{value}` is not a number")));
    }
    map.insert(name.to_string(), parsed);
    let cfg: TrainConfig = serde_json::from_value(obj)
        .map_err(|e| Error::InvalidArgument(format!("cannot set {name} = {value}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var("ERIS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn metrics_header(out: &mut String) {
    for f in MetricsReport::FIELDS {
        out.push(',');
        out.push_str(f);
    }
}

fn metrics_row(out: &mut String, m: &MetricsReport) {
    for v in m.values() {
        write!(out, ",{v}").expect("write to String");
    }
}

fn cmd_sweep(cfg: &RunConfig) -> CliResult<()> {
    let out = require_out(cfg)?;
    let param = cfg
        .sweep_param
        .as_deref()
        .ok_or_else(|| Failure::Usage("`sweep` needs --param".into()))?;
    if cfg.sweep_values.is_empty() {
        return Err(Failure::Usage("`sweep` needs --values".into()));
    }
    if cfg.target_domain.is_none() {
        return Err(Failure::Usage("`sweep` needs --target-domain".into()));
    }
    let runs: Vec<RunConfig> = cfg
        .sweep_values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.train = set_train_param(&cfg.train, param, v).map_err(|e| Failure::Usage(e.to_string()))?;
            Ok(c)
        })
        .collect::<CliResult<_>>()?;
    let ds = load_data(cfg)?;
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    let run_root = out.with_file_name(format!("{stem}_runs"));
    let pool = thread_pool()?;
    let results: Vec<Result<RunOutcome>> = pool.install(|| {
        runs.par_iter()
            .zip(&cfg.sweep_values)
            .map(|(c, v)| train_into(c, &ds, &run_root.join(format!("{param}={}", v.trim()))))
            .collect()
    });
    let mut csv = String::from("param,value");
    metrics_header(&mut csv);
    csv.push('\n');
    for (r, v) in results.into_iter().zip(&cfg.sweep_values) {
        let m = r?.metrics.expect("target domain set");
        write!(csv, "{param},{}", v.trim()).expect("write to String");
        metrics_row(&mut csv, &m);
        csv.push('\n');
    }
    write_text(out, &csv)?;
    write_manifest(cfg, out, false)?;
    log::info!("wrote {} sweep rows to {}", cfg.sweep_values.len(), out.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> CliResult<()> {
    let out = require_out(cfg)?;
    let ds = load_data(cfg)?;
    let targets: Vec<usize> = match cfg.target_domain {
        Some(t) => vec![t],
        None => (0..ds.num_domains()).collect(),
    };
    let mut jobs = Vec::new();
    for ab in Ablation::ALL {
        for &t in &targets {
            let mut c = cfg.clone();
            c.train = cfg.train.clone().with_ablation(ab);
            c.target_domain = Some(t);
            jobs.push((ab, t, c));
        }
    }
    let pool = thread_pool()?;
    let results: Vec<Result<RunOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|(ab, t, c)| train_into(c, &ds, &out.join(ab.name()).join(format!("target-{t}"))))
            .collect()
    });
    let mut csv = String::from("config,target_domain");
    metrics_header(&mut csv);
    csv.push_str(",cross_norm_first,cross_norm_last\n");
    for ((ab, t, _), r) in jobs.iter().zip(results) {
        let r = r?;
        let m = r.metrics.expect("target domain set");
        let cn = r.history.cross_norms();
        write!(csv, "{},{t}", ab.name()).expect("write to String");
        metrics_row(&mut csv, &m);
        writeln!(csv, ",{},{}", cn[0], cn[cn.len() - 1]).expect("write to String");
    }
    write_text(&out.join("ablation.csv"), &csv)?;
    write_manifest(cfg, out, true)?;
    log::info!("ablation summary in {}", out.join("ablation.csv").display());
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> CliResult<()> {
    if cfg.inputs.is_empty() {
        return Err(Failure::Usage("`report` needs at least one metrics file".into()));
    }
    let mut csv = String::from("file");
    metrics_header(&mut csv);
    csv.push('\n');
    for p in &cfg.inputs {
        let m = MetricsReport::load(p)?;
        csv.push_str(&p.display().to_string().replace(',', "_"));
        metrics_row(&mut csv, &m);
        csv.push('\n');
    }
    match &cfg.out {
        Some(out) => {
            write_text(out, &csv)?;
            write_manifest(cfg, out, false)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn small_config(dir: &Path) -> PathBuf {
        let cfg = dir.join("cfg.json");
        fs::write(
            &cfg,
            r#"{
                "synthetic": {"num_classes": 3, "num_domains": 3, "length": 16, "samples_per_domain_class": 4},
                "arch": {"conv_channels": [4], "encoding_dim": 6, "projection_dim": 3, "mlp_hidden": 5},
                "train": {"epochs": 2, "batch_size": 8}
            }"#,
        )
        .unwrap();
        cfg
    }

    fn ok(argv: &[&str]) {
        let code = run(argv.iter().map(|s| s.to_string()).collect());
        assert_eq!(code, 0, "eris {argv:?} exited with {code}");
    }

    fn p(path: &Path) -> &str {
        path.to_str().unwrap()
    }

    #[test]
    fn gen_data_writes_dataset_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let data = dir.path().join("data.csv");
        ok(&["gen-data", "--config", p(&cfg), "--out", p(&data), "--seed", "5"]);
        let ds = load_dataset(&data).unwrap();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds.num_domains(), 3);
        let manifest = RunConfig::load(dir.path().join("data.manifest.json")).unwrap();
        assert_eq!(manifest.command, "gen-data");
        assert_eq!(manifest.synthetic.seed, 5);
    }

    #[test]
    fn train_eval_report_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let data = dir.path().join("data.csv");
        ok(&["gen-data", "--config", p(&cfg), "--out", p(&data)]);

        let run_dir = dir.path().join("run");
        ok(&[
            "train", "--config", p(&cfg), "--data", p(&data), "--target-domain", "2", "--out", p(&run_dir),
            "--lambda2", "1.5",
        ]);
        for f in ["history.csv", "params.bin", "metrics.json", "manifest.json"] {
            assert!(run_dir.join(f).exists(), "missing {f}");
        }
        let history = fs::read_to_string(run_dir.join("history.csv")).unwrap();
        assert_eq!(history.lines().count(), 3);
        let manifest = RunConfig::load(run_dir.join("manifest.json")).unwrap();
        assert_eq!(manifest.train.lambda2, 1.5);
        assert_eq!(manifest.target_domain, Some(2));
        let m = MetricsReport::load(run_dir.join("metrics.json")).unwrap();
        assert!((0.0..=1.0).contains(&m.accuracy));

        let ev = dir.path().join("eval");
        let params = run_dir.join("params.bin");
        ok(&["eval", "--params", p(&params), "--data", p(&data), "--target-domain", "2", "--out", p(&ev)]);
        let again = MetricsReport::load(ev.join("metrics.json")).unwrap();
        assert_eq!(again.values(), m.values());
        let b = load_params(&params).unwrap().arch.encoding_dim;
        assert_eq!(fs::read_to_string(ev.join("corr.csv")).unwrap().lines().count(), b);
        assert!(ev.join("mi.csv").exists() && ev.join("embeddings.csv").exists());

        let summary = dir.path().join("summary.csv");
        ok(&["report", p(&run_dir.join("metrics.json")), p(&ev.join("metrics.json")), "--out", p(&summary)]);
        let text = fs::read_to_string(&summary).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("file,accuracy"));
    }

    #[test]
    fn ortho_sim_writes_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("traj.csv");
        ok(&["ortho-sim", "--h", "6", "--d", "3", "--dt", "1e-3", "--steps", "20000", "--out", p(&out)]);
        assert!(fs::read_to_string(&out).unwrap().lines().count() > 100);
        let manifest = RunConfig::load(dir.path().join("traj.manifest.json")).unwrap();
        assert_eq!((manifest.ortho.h, manifest.ortho.d, manifest.ortho.steps), (6, 3, 20000));
    }

    #[test]
    fn sweep_writes_one_row_per_value() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let out = dir.path().join("sweep.csv");
        ok(&[
            "sweep", "--config", p(&cfg), "--target-domain", "0", "--param", "lambda2", "--values", "0.5,2", "--out",
            p(&out),
        ]);
        let text = fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("lambda2,0.5,") && lines[2].starts_with("lambda2,2,"));
        assert!(dir.path().join("sweep_runs/lambda2=2/history.csv").exists());
    }

    #[test]
    fn ablate_covers_all_configurations() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let out = dir.path().join("abl");
        ok(&["ablate", "--config", p(&cfg), "--target-domain", "1", "--epochs", "1", "--out", p(&out)]);
        let text = fs::read_to_string(out.join("ablation.csv")).unwrap();
        let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, ["A", "B", "C", "D", "E", "F", "G"]);
        assert!(out.join("G/target-1/metrics.json").exists());
        assert_eq!(RunConfig::load(out.join("manifest.json")).unwrap().command, "ablate");
    }

    #[test]
    fn flags_disable_terms() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let out = dir.path().join("run");
        ok(&["train", "--config", p(&cfg), "--no-ortho", "--no-ag", "--epochs", "1", "--out", p(&out)]);
        let m = RunConfig::load(out.join("manifest.json")).unwrap();
        assert!(!m.train.enable_ortho && !m.train.enable_ag && m.train.enable_dse && m.train.enable_lse);
        assert_eq!(m.train.epochs, 1);
        assert!(!out.join("metrics.json").exists());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(args("train --bogus")), 1);
        assert_eq!(run(args("frobnicate")), 1);
        assert_eq!(run(args("gen-data")), 1);
        assert_eq!(run(args("sweep --out x.csv --target-domain 0")), 1);
    }

    #[test]
    fn runtime_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        let out = dir.path().join("o");
        let cmd = format!("train --data {} --out {}", missing.display(), out.display());
        assert_eq!(run(args(&cmd)), 2);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        fs::write(&cfg_path, r#"{"train": {"lambda2": 5.0, "epochs": 7}, "synthetic": {"num_classes": 3}}"#).unwrap();
        let cli = Cli::try_parse_from(
            ["eris", "train", "--config", cfg_path.to_str().unwrap(), "--lambda2", "0.5", "--no-ortho", "--seed", "4"],
        )
        .unwrap();
        let cfg = match resolve(cli.command) {
            Ok(c) => c,
            Err(_) => panic!("resolve failed"),
        };
        assert_eq!(cfg.train.lambda2, 0.5);
        assert_eq!(cfg.train.epochs, 7);
        assert!(!cfg.train.enable_ortho);
        assert!(cfg.train.enable_dse);
        assert_eq!(cfg.synthetic.num_classes, 3);
        assert_eq!(cfg.train.seed, 4);
        assert_eq!(cfg.synthetic.seed, 4);
    }

    #[test]
    fn sweep_param_setter() {
        let base = TrainConfig::default();
        assert_eq!(set_train_param(&base, "lambda2", "4").unwrap().lambda2, 4.0);
        assert_eq!(set_train_param(&base, "epochs", "3").unwrap().epochs, 3);
        assert!(set_train_param(&base, "nonsense", "1").is_err());
        assert!(set_train_param(&base, "lambda2", "abc").is_err());
        assert!(set_train_param(&base, "lambda2", "-1").is_err());
    }

    #[test]
    fn manifest_locations() {
        assert_eq!(manifest_path(Path::new("a/b.csv"), false), PathBuf::from("a/b.manifest.json"));
        assert_eq!(manifest_path(Path::new("runs/x"), true), PathBuf::from("runs/x/manifest.json"));
    }
}
