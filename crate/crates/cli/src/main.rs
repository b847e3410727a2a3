//! `gctm` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 a check failed, 3 runtime fault.

mod io;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gctm::couplings::{CorruptionOperator, CouplingKind, Sampler, StandardGaussian};
use gctm::harness::checkpoint::Checkpoint;
use gctm::harness::config::RunConfig;
use gctm::harness::{metrics, plot, verify};
use gctm::inference::{self, GuidanceConfig, GuidanceMethod, Lambda};
use gctm::schedule::TimeGrid;
use gctm::trainer::{self, LogRow, Marginals, TrainObserver, TrainState, LOG_HEADER};
use gctm::{rng, GctmError, Points};

#[derive(Parser)]
#[command(
    name = "gctm",
    version,
    about = "Generalized consistency trajectory models on toy data"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// key=value run configuration (a manifest works too).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes metrics.csv, manifest.cfg and model.ckpt.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples with NFE network evaluations.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        nfe: usize,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Compare against fresh draws of this run's dataset.
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-shot restoration of measured points.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One measurement per line.
        #[arg(long)]
        measurement: PathBuf,
        #[arg(long, value_parser = ["dps", "cm", "gctm"])]
        method: Option<String>,
        /// Fixed guidance step; omit for the adaptive default.
        #[arg(long)]
        lambda: Option<f64>,
        /// Comma-separated masked coordinates; otherwise the config operator.
        #[arg(long)]
        mask: Option<String>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edit points: translate/scale x_0, re-noise to t_edit, map back.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Paired x_1 points; standard normal draws if omitted.
        #[arg(long)]
        pair: Option<PathBuf>,
        #[arg(long)]
        t_edit: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        translate: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// G(x_1 + gamma * eps, 1, 0) for several noise draws per input.
    Manip {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        #[arg(long, default_value_t = 4)]
        draws: usize,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the theorem and property suite.
    Verify,
    /// Independent vs OT coupling at N = 4, equal iterations.
    BenchOt {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Check(String),
    Fault(GctmError),
}

impl From<GctmError> for Failure {
    fn from(e: GctmError) -> Self {
        Failure::Fault(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Fault(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn load_run(args: &RunArgs) -> Result<RunConfig, GctmError> {
    let mut text = match &args.config {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    for kv in &args.set {
        text.push('\n');
        text.push_str(kv);
    }
    if let Some(seed) = args.seed {
        text.push_str(&format!("\nseed = {seed}"));
    }
    RunConfig::from_text(&text)
}

struct CsvSink {
    out: BufWriter<File>,
    ckpt_dir: PathBuf,
    cfg: RunConfig,
}

impl TrainObserver for CsvSink {
    fn on_log(&mut self, row: &LogRow) -> gctm::Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()?;
        eprintln!(
            "iter {:>6}  N={:<3} total={:.5}  {}={:.5}",
            row.iter, row.n, row.total, row.metric_name, row.metric_value
        );
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> gctm::Result<()> {
        let path = self.ckpt_dir.join(format!("ckpt_{:07}.ckpt", state.iter));
        checkpoint_of(&self.cfg, state).save(&path)
    }
}

fn checkpoint_of(cfg: &RunConfig, state: &TrainState) -> Checkpoint {
    Checkpoint {
        params: state.params.clone(),
        schedule: cfg.train.schedule,
        grid_n: cfg.train.n_schedule().n_at(state.iter.saturating_sub(1)),
        coupling: cfg.train.coupling.name().into(),
        seed: cfg.train.seed,
        iter: state.iter,
    }
}

fn train(run: &RunArgs, out: &Path) -> CmdResult {
    let cfg = load_run(run)?;
    fs::create_dir_all(out)?;
    io::write_manifest(out, &cfg, "train")?;
    let data = cfg.load_dataset()?;
    let source = StandardGaussian(data.dim());
    let marginals = Marginals {
        x0: &data,
        x1: &source,
    };
    let mut sink = CsvSink {
        out: BufWriter::new(File::create(out.join("metrics.csv"))?),
        ckpt_dir: out.to_path_buf(),
        cfg: cfg.clone(),
    };
    writeln!(sink.out, "{LOG_HEADER}")?;
    let outcome = trainer::train_loop(&cfg.train, &marginals, &mut sink)?;
    checkpoint_of(&cfg, &outcome.state).save(&out.join("model.ckpt"))?;
    Ok(())
}

fn sample(checkpoint: &Path, nfe: usize, count: usize, run: &RunArgs, out: &Path) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = load_run(run)?;
    if nfe == 0 {
        return Err(GctmError::InvalidArgument("--nfe must be >= 1".into()).into());
    }
    fs::create_dir_all(out)?;
    io::write_manifest(out, &cfg, &format!("sample --nfe {nfe} --count {count}"))?;
    let d = ck.params.data_dim();
    let x1 = rng::standard_normal(count, d, &mut rng::stream(cfg.train.seed, 1 << 40));
    let grid = TimeGrid::edm(nfe, ck.schedule)?;
    let x0 = inference::multistep_sample(&ck.params, &x1, &grid)?;
    io::write_points(&x0, &out.join("samples.txt"))?;
    if d == 2 {
        plot::emit_plot(&x0, &out.join("samples.ppm"))?;
    }
    if run.config.is_some() {
        let data = cfg.load_dataset()?;
        let target = data.sample(count, &mut rng::stream(cfg.train.seed, (1 << 40) + 1));
        let ed = metrics::energy_distance(&x0, &target)?;
        fs::write(out.join("metric.txt"), format!("energy_distance,{ed}\n"))?;
        println!("energy_distance {ed}");
    }
    Ok(())
}

fn parse_mask(s: &str) -> Result<CorruptionOperator, GctmError> {
    let idx = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| GctmError::Parse(format!("--mask '{v}': {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorruptionOperator::CoordinateMask(idx))
}

#[allow(clippy::too_many_arguments)]
fn restore(
    checkpoint: &Path,
    measurement: &Path,
    method: Option<&str>,
    lambda: Option<f64>,
    mask: Option<&str>,
    run: &RunArgs,
    out: &Path,
) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = load_run(run)?;
    let meas = io::read_points(measurement)?;
    let operator = match mask {
        Some(m) => parse_mask(m)?,
        None => cfg.operator.load()?,
    };
    let gcfg = GuidanceConfig {
        method: match method {
            Some(m) => m.parse::<GuidanceMethod>()?,
            None => cfg.guidance_method,
        },
        lambda: lambda.map(Lambda::Fixed).unwrap_or(cfg.guidance_lambda),
        operator,
        grid: TimeGrid::edm(ck.grid_n, ck.schedule)?,
    };
    fs::create_dir_all(out)?;
    io::write_manifest(out, &cfg, "restore")?;
    let net = ck.params.ema_network()?;
    let res = inference::restore(
        &net,
        &meas,
        &gcfg,
        &mut rng::stream(cfg.train.seed, 1 << 41),
    )?;
    if res.skipped > 0 {
        eprintln!(
            "warning: {} guidance steps skipped on non-finite gradients",
            res.skipped
        );
    }
    io::write_points(&res.x0, &out.join("restored.txt"))?;
    let rms = metrics::measurement_residual(&res.x0, &meas, &gcfg.operator)?;
    println!("measurement_residual {rms}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn edit(
    checkpoint: &Path,
    input: &Path,
    pair: Option<&Path>,
    t_edit: Option<f64>,
    translate: &[f64],
    scale: f64,
    run: &RunArgs,
    out: &Path,
) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = load_run(run)?;
    let x0 = io::read_points(input)?;
    let x1 = match pair {
        Some(p) => io::read_points(p)?,
        None => rng::standard_normal(
            x0.len(),
            x0.dim(),
            &mut rng::stream(cfg.train.seed, 1 << 42),
        ),
    };
    if !translate.is_empty() && translate.len() != x0.dim() {
        return Err(GctmError::Shape(format!("--translate needs {} components", x0.dim())).into());
    }
    let t = t_edit.unwrap_or_else(|| inference::default_edit_t(&cfg.train.coupling));
    fs::create_dir_all(out)?;
    io::write_manifest(out, &cfg, &format!("edit --t-edit {t}"))?;
    let net = ck.params.ema_network()?;
    let edited = inference::edit(&net, &x0, &x1, t, |x, o| {
        for (k, (v, src)) in o.iter_mut().zip(x).enumerate() {
            *v = scale * src + translate.get(k).copied().unwrap_or(0.0);
        }
    })?;
    io::write_points(&edited, &out.join("edited.txt"))?;
    Ok(())
}

fn manip(
    checkpoint: &Path,
    input: &Path,
    gamma: f64,
    draws: usize,
    run: &RunArgs,
    out: &Path,
) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = load_run(run)?;
    let x1 = io::read_points(input)?;
    fs::create_dir_all(out)?;
    io::write_manifest(out, &cfg, &format!("manip --gamma {gamma} --draws {draws}"))?;
    let net = ck.params.ema_network()?;
    let mut r = rng::stream(cfg.train.seed, 1 << 43);
    let mut all = Vec::new();
    for _ in 0..draws {
        let eps = inference::noise_like(&x1, &mut r);
        all.extend(inference::latent_manip(&net, &x1, &eps, gamma)?.into_vec());
    }
    io::write_points(&Points::from_vec(all, x1.dim())?, &out.join("manip.txt"))?;
    Ok(())
}

fn run_verify() -> CmdResult {
    let outcomes = verify::run_all()?;
    let mut failed = Vec::new();
    for c in &outcomes {
        println!("{c}");
        if !c.passed {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed: {}", failed.join(", "))))
    }
}

fn bench_ot(run: &RunArgs, out: &Path) -> CmdResult {
    let base = load_run(run)?;
    fs::create_dir_all(out)?;
    io::write_manifest(out, &base, "bench-ot")?;
    let data = base.load_dataset()?;
    let source = StandardGaussian(data.dim());
    let marginals = Marginals {
        x0: &data,
        x1: &source,
    };
    let mut csv = String::from("coupling,iter,N,metric_name,metric_value\n");
    for kind in [
        CouplingKind::Independent,
        CouplingKind::Ot {
            tau_rel: match base.train.coupling {
                CouplingKind::Ot { tau_rel } => tau_rel,
                _ => gctm::couplings::DEFAULT_TAU_REL,
            },
        },
    ] {
        let mut t = base.train.clone();
        t.coupling = kind;
        t.n_start = 4;
        t.doublings = 1;
        let outcome = trainer::train_loop(&t, &marginals, &mut ())?;
        for row in &outcome.log {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                t.coupling.name(),
                row.iter,
                row.n,
                row.metric_name,
                row.metric_value
            ));
        }
        if let Some(last) = outcome.log.last() {
            println!(
                "{} {} {}",
                t.coupling.name(),
                last.metric_name,
                last.metric_value
            );
        }
    }
    fs::write(out.join("bench_ot.csv"), csv)?;
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Cmd::Train { run, out } => train(&run, &out),
        Cmd::Sample {
            checkpoint,
            nfe,
            count,
            run,
            out,
        } => sample(&checkpoint, nfe, count, &run, &out),
        Cmd::Restore {
            checkpoint,
            measurement,
            method,
            lambda,
            mask,
            run,
            out,
        } => restore(
            &checkpoint,
            &measurement,
            method.as_deref(),
            lambda,
            mask.as_deref(),
            &run,
            &out,
        ),
        Cmd::Edit {
            checkpoint,
            input,
            pair,
            t_edit,
            translate,
            scale,
            run,
            out,
        } => edit(
            &checkpoint,
            &input,
            pair.as_deref(),
            t_edit,
            &translate,
            scale,
            &run,
            &out,
        ),
        Cmd::Manip {
            checkpoint,
            input,
            gamma,
            draws,
            run,
            out,
        } => manip(&checkpoint, &input, gamma, draws, &run, &out),
        Cmd::Verify => run_verify(),
        Cmd::BenchOt { run, out } => bench_ot(&run, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Fault(GctmError::Parse(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Fault(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
