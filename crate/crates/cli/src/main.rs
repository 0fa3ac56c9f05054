mod config;
mod image;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use disentangle_core::data::{DatasetSpec, RenderedDataset};
use disentangle_core::decomposition::{exact_decomposition_weighted, minibatch_decomposition, Estimator};
use disentangle_core::metrics::{
    compute_mig, higgins_metric, kim_mnih_metric, GaussianCode, HigginsConfig, KimMnihConfig, MigConfig,
};
use disentangle_core::model::{load_checkpoint, save_checkpoint, Vae};
use disentangle_core::trainer::{
    sweep_with, train, write_sweep_csv, RunRecord, SweepResult, TrainFailure,
};
use disentangle_core::{RngStream, Tensor};

use config::ExperimentConfig;

/// Train and evaluate β-TCVAE models on procedural factor datasets.
#[derive(Parser, Debug)]
#[command(name = "disentangle", version)]
struct Cli {
    /// Seed; overrides the config file's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// key = value experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model; writes checkpoint.ckpt and run.json to --out.
    Train,
    /// Print the MI / TC / dimension-wise KL decomposition as JSON.
    Decompose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "bumps")]
        dataset: String,
        #[arg(long, value_enum, default_value = "exact")]
        method: MethodArg,
        /// Monte Carlo samples for the exact method.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 200)]
        batches: usize,
    },
    /// Print disentanglement metrics as JSON.
    Metrics {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "bumps")]
        dataset: String,
        #[arg(long, value_enum, default_value = "all")]
        which: WhichArg,
        /// Higgins aggregation sizes, comma separated.
        #[arg(long = "higgins-l", value_delimiter = ',', default_value = "64")]
        higgins_l: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        samples_per_value: usize,
    },
    /// Decode a sweep of one latent into a PGM image grid.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "bumps")]
        dataset: String,
        #[arg(long)]
        latent: usize,
        /// `lo..hi`
        #[arg(long, default_value = "-3..3", allow_hyphen_values = true)]
        range: String,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        /// Data index whose posterior mean anchors the other coordinates.
        #[arg(long, default_value_t = 0)]
        anchor: usize,
        /// Also write a PNG next to the PGM.
        #[arg(long)]
        png: bool,
    },
    /// Train over a grid of β and seeds; writes per-run and aggregate files.
    Sweep,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Exact,
    Mws,
    Mss,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum WhichArg {
    Mig,
    Higgins,
    KimMnih,
    All,
}

/// Marks failures that should exit with status 2.
#[derive(Debug)]
struct NumericalAbort(String);

impl std::fmt::Display for NumericalAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalAbort {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<NumericalAbort>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train => cmd_train(load_config(cli.config.as_deref(), seed)?, require_out(cli.out)?),
        Command::Sweep => cmd_sweep(load_config(cli.config.as_deref(), seed)?, require_out(cli.out)?),
        Command::Decompose {
            checkpoint,
            dataset,
            method,
            samples,
            batch_size,
            batches,
        } => {
            let (vae, data) = load_pair(&checkpoint, &dataset)?;
            print_json(&cmd_decompose(&vae, &data, method, samples, batch_size, batches, seed.unwrap_or(0))?)
        }
        Command::Metrics {
            checkpoint,
            dataset,
            which,
            higgins_l,
            samples_per_value,
        } => {
            let (vae, data) = load_pair(&checkpoint, &dataset)?;
            print_json(&cmd_metrics(&vae, &data, which, &higgins_l, samples_per_value, seed.unwrap_or(0))?)
        }
        Command::Traverse {
            checkpoint,
            dataset,
            latent,
            range,
            steps,
            anchor,
            png,
        } => {
            let (vae, data) = load_pair(&checkpoint, &dataset)?;
            let out = require_out(cli.out)?;
            let path = cmd_traverse(&vae, &data, latent, &range, steps, anchor, png, &out)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    let out = out.ok_or_else(|| anyhow!("--out is required for this command"))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    cfg.sweep.validate()?;
    Ok(cfg)
}

fn load_pair(checkpoint: &Path, dataset: &str) -> Result<(Vae, RenderedDataset)> {
    let vae = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let spec: DatasetSpec = dataset.parse()?;
    let data = spec.build()?;
    if vae.input_dim() != data.pixels() {
        bail!(
            "checkpoint expects {} pixels but dataset {spec} has {}",
            vae.input_dim(),
            data.pixels()
        );
    }
    Ok((vae, data))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(cfg: ExperimentConfig, out: PathBuf) -> Result<()> {
    let config = cfg.train;
    match train(&config) {
        Ok(outcome) => {
            save_checkpoint(&outcome.model, out.join("checkpoint.ckpt"))?;
            write_json(&out.join("run.json"), &outcome.record)?;
            Ok(())
        }
        Err(TrainFailure::Diverged(d)) => {
            save_checkpoint(&d.last_good, out.join("last_good.ckpt"))?;
            let mut record = RunRecord::failed(config, Some(d.step), d.cause.to_string(), 0.0);
            record.loss_trace = d.loss_trace;
            write_json(&out.join("run.json"), &record)?;
            Err(NumericalAbort(format!(
                "training diverged at step {} ({}); last good parameters saved to {}",
                d.step,
                d.cause,
                out.join("last_good.ckpt").display()
            ))
            .into())
        }
        Err(TrainFailure::Error(e)) => Err(e.into()),
    }
}

fn cmd_decompose(
    vae: &Vae,
    data: &RenderedDataset,
    method: MethodArg,
    samples: usize,
    batch_size: usize,
    batches: usize,
    seed: u64,
) -> Result<Value> {
    let posteriors = vae.encode_batch(data.images())?;
    let rng = RngStream::new(seed);
    let minibatch = |e: Estimator| -> Result<Value> {
        if !data.joint().is_uniform() {
            bail!("minibatch estimators need a dataset with a uniform index distribution");
        }
        Ok(serde_json::to_value(minibatch_decomposition(
            &posteriors,
            e,
            batch_size,
            batches,
            &rng,
        )?)?)
    };
    Ok(match method {
        MethodArg::Exact => serde_json::to_value(exact_decomposition_weighted(
            &posteriors,
            data.index_probs(),
            &rng,
            samples,
        )?)?,
        MethodArg::Mws => minibatch(Estimator::Mws)?,
        MethodArg::Mss => minibatch(Estimator::Mss)?,
        MethodArg::Both => json!({
            "mws": minibatch(Estimator::Mws)?,
            "mss": minibatch(Estimator::Mss)?,
        }),
    })
}

fn cmd_metrics(
    vae: &Vae,
    data: &RenderedDataset,
    which: WhichArg,
    higgins_l: &[usize],
    samples_per_value: usize,
    seed: u64,
) -> Result<Value> {
    let code = GaussianCode::from_vae(vae, data)?;
    let rng = RngStream::new(seed);
    let mut report = serde_json::Map::new();
    report.insert("seed".into(), json!(seed));
    report.insert("dataset".into(), json!(format!("{}:{}", data.name(), data.joint_tag())));
    if matches!(which, WhichArg::Mig | WhichArg::All) {
        let cfg = MigConfig { samples_per_value };
        report.insert("mig".into(), serde_json::to_value(compute_mig(&code, data, &rng.split(0), &cfg)?)?);
    }
    if matches!(which, WhichArg::Higgins | WhichArg::All) {
        let mut runs = Vec::new();
        for &l in higgins_l {
            let cfg = HigginsConfig { l, ..HigginsConfig::default() };
            let acc = higgins_metric(&code, data, &cfg, &rng.split(1))?;
            runs.push(json!({ "L": l, "accuracy": acc, "config": cfg }));
        }
        report.insert("higgins".into(), Value::Array(runs));
    }
    if matches!(which, WhichArg::KimMnih | WhichArg::All) {
        let cfg = KimMnihConfig::default();
        let acc = kim_mnih_metric(&code, data, &cfg, &rng.split(2))?;
        report.insert("kim_mnih".into(), json!({ "accuracy": acc, "config": cfg }));
    }
    Ok(Value::Object(report))
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| anyhow!("range must look like lo..hi, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("bad range start {lo:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("bad range end {hi:?}"))?;
    if !(lo.is_finite() && hi.is_finite()) {
        bail!("range bounds must be finite");
    }
    Ok((lo, hi))
}

#[allow(clippy::too_many_arguments)]
fn cmd_traverse(
    vae: &Vae,
    data: &RenderedDataset,
    latent: usize,
    range: &str,
    steps: usize,
    anchor: usize,
    png: bool,
    out: &Path,
) -> Result<PathBuf> {
    if latent >= vae.latent_dim() {
        bail!("latent {latent} out of range (model has {})", vae.latent_dim());
    }
    if steps < 2 {
        bail!("steps must be at least 2");
    }
    if anchor >= data.len() {
        bail!("anchor {anchor} out of range (dataset has {} points)", data.len());
    }
    let (lo, hi) = parse_range(range)?;
    let base = vae.encode(data.image(anchor))?.mean;
    let j = base.len();
    let mut z = Vec::with_capacity(steps * j);
    for t in 0..steps {
        let mut row = base.clone();
        row[latent] = lo + (hi - lo) * t as f64 / (steps - 1) as f64;
        z.extend(row);
    }
    let logits = vae.decode_logits_batch(&Tensor::new(vec![steps, j], z)?)?;
    let tiles: Vec<Vec<u8>> = (0..steps)
        .map(|t| logits.row(t).iter().map(|&l| image::to_grey(l)).collect())
        .collect();
    let (w, h) = (data.width(), data.height());
    let grid = image::tile_row(&tiles, w, h);
    let path = out.join(format!("traverse_z{latent}.pgm"));
    image::write_pgm(&path, steps * w, h, &grid)?;
    if png {
        image::write_png(&path.with_extension("png"), steps * w, h, &grid)?;
    }
    Ok(path)
}

fn run_stem(r: &RunRecord) -> String {
    format!("{}_beta{}_seed{}", r.config.objective, r.config.weights.beta, r.config.seed)
}

fn cmd_sweep(cfg: ExperimentConfig, out: PathBuf) -> Result<()> {
    let runs = out.join("runs");
    fs::create_dir_all(&runs)?;
    let write_err = std::sync::Mutex::new(None::<anyhow::Error>);
    let on_done = |r: &RunRecord, model: Option<&Vae>| {
        let stem = run_stem(r);
        let res = (|| -> Result<()> {
            write_json(&runs.join(format!("{stem}.json")), r)?;
            if let Some(m) = model {
                save_checkpoint(m, runs.join(format!("{stem}.ckpt")))?;
            }
            Ok(())
        })();
        if let Err(e) = res {
            write_err.lock().expect("lock").get_or_insert(e);
        }
    };
    let result = sweep_with(&cfg.sweep, &cfg.train, &on_done)?;
    if let Some(e) = write_err.into_inner().expect("lock") {
        return Err(e);
    }
    write_sweep_outputs(&result, &out)?;
    print!("{}", summary_table(&result));
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_sweep_outputs(result: &SweepResult, out: &Path) -> Result<()> {
    write_sweep_csv(&result.records, fs::File::create(out.join("sweep.csv"))?)?;

    let mut f = fs::File::create(out.join("elbo_vs_mig.csv"))?;
    writeln!(f, "objective,beta,seed,elbo,mig")?;
    for r in result.records.iter().filter(|r| r.completed()) {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.config.objective,
            r.config.weights.beta,
            r.config.seed,
            opt(r.elbo.as_ref().map(|e| e.elbo)),
            opt(r.mig_score())
        )?;
    }

    let mut f = fs::File::create(out.join("tc_vs_mig.csv"))?;
    writeln!(f, "beta,mean_tc,mean_mig,runs")?;
    if let Some(c) = &result.correlation {
        for p in &c.points {
            writeln!(f, "{},{},{},{}", p.beta, p.mean_tc, p.mean_mig, p.runs)?;
        }
    }

    let mut f = fs::File::create(out.join("mig_boxplot.csv"))?;
    writeln!(f, "objective,beta,runs,failures,min,q1,median,q3,max")?;
    for b in &result.per_beta {
        let q = b.mig;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            b.objective,
            b.beta,
            b.runs,
            b.failures,
            opt(q.map(|q| q.min)),
            opt(q.map(|q| q.q1)),
            opt(q.map(|q| q.median)),
            opt(q.map(|q| q.q3)),
            opt(q.map(|q| q.max)),
        )?;
    }

    write_json(
        &out.join("summary.json"),
        &json!({ "per_beta": result.per_beta, "correlation": result.correlation }),
    )?;
    fs::write(out.join("summary.txt"), summary_table(result))?;
    Ok(())
}

fn summary_table(result: &SweepResult) -> String {
    let mut s = format!(
        "{:<11} {:>6} {:>5} {:>6} {:>10} {:>8} {:>8} {:>8}\n",
        "objective", "beta", "runs", "failed", "med ELBO", "med TC", "med MIG", "IQR MIG"
    );
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for b in &result.per_beta {
        s += &format!(
            "{:<11} {:>6} {:>5} {:>6} {:>10} {:>8} {:>8} {:>8}\n",
            b.objective.to_string(),
            b.beta,
            b.runs,
            b.failures,
            f(b.elbo.map(|q| q.median)),
            f(b.total_correlation.map(|q| q.median)),
            f(b.mig.map(|q| q.median)),
            f(b.mig.map(|q| q.q3 - q.q1)),
        );
    }
    if let Some(c) = &result.correlation {
        s += &format!(
            "TC vs MIG across beta: spearman {:.3}, pearson {:.3}{}\n",
            c.spearman,
            c.pearson,
            if c.undefined { " (undefined: constant series)" } else { "" }
        );
    }
    s
}
