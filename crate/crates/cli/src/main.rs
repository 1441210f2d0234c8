use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecl::analysis::{
    eval_linear_path, eval_noise_robustness, eval_simplex_grid, flops_report, hessian_top_eigs, FlopsMethod,
};
use ecl::experiment::{
    build_stream, grid_csv, load_benchmark_base, load_checkpoint, noise_csv, path_csv, run_experiment, task_data,
    Checkpoint, RunConfig, DATA_DIR_ENV,
};
use ecl::metrics::{AccuracyMatrix, MetricsSummary};
use ecl::numkit::{MlpSpec, ParamVector, Tensor};
use ecl::weightspace::EnsembleWeights;
use ecl::{Error, Result};

#[derive(Parser)]
#[command(name = "ecl", version, about = "Continual learning with ensembles, subspaces and connectivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write its reports.
    Run {
        config: PathBuf,
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
    },
    /// Weight-space diagnostics over saved checkpoints.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Recompute the summary metrics of an accuracy-matrix CSV.
    Metrics {
        matrix: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    /// Run config that produced the checkpoints.
    #[arg(long)]
    config: PathBuf,
    /// Seed whose benchmark instance is used for evaluation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 1-based task whose data is evaluated.
    #[arg(long, default_value_t = 1)]
    task: usize,
    /// Evaluate on the training split instead of the test split.
    #[arg(long)]
    train_split: bool,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Analyze {
    /// Loss and accuracy along the segment between two checkpoints.
    Path {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Entry of `a`; defaults to `mid`, else `model`.
        #[arg(long)]
        a_label: Option<String>,
        #[arg(long)]
        b_label: Option<String>,
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Barycentric grid over a three-member subspace.
    Simplex {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Label prefix of the members, e.g. `hat_`.
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long, default_value_t = 10)]
        resolution: usize,
    },
    /// Accuracy under multiplicative weight noise.
    Noise {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.4")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Top Hessian eigenvalues of the loss at a checkpoint entry.
    Hessian {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Examples of the task used for the loss; all when absent.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compute cost of one training configuration.
    Flops {
        #[arg(long, value_parser = parse_method)]
        method: FlopsMethod,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        batch_size: usize,
        #[arg(long, default_value_t = 784)]
        input: usize,
        #[arg(long, value_delimiter = ',', default_value = "100,100")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        output: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> std::result::Result<FlopsMethod, String> {
    Ok(match s {
        "single" | "multitask" => FlopsMethod::Single,
        "vanilla_ensemble" => FlopsMethod::VanillaEnsemble,
        "subspace" | "subspace_er" | "subspace_connectivity" => FlopsMethod::Subspace,
        "batch_ensemble" => FlopsMethod::BatchEnsemble,
        _ => return Err(format!("unknown method {s:?}")),
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Dimension { .. } => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable report") + "\n"
}

struct Context {
    spec: MlpSpec,
    x: Tensor,
    y: Vec<usize>,
}

fn context(src: &Source) -> Result<Context> {
    let cfg = RunConfig::load(&src.config)?;
    let base = load_benchmark_base(&cfg, src.data_dir.as_deref())?;
    let stream = build_stream(&cfg, base.as_ref(), src.seed)?;
    let spec = cfg.model_spec(&stream)?;
    let (x, y) = task_data(&stream, src.task, src.train_split)?;
    Ok(Context { spec, x, y })
}

fn entry<'a>(ck: &'a Checkpoint, path: &Path, label: Option<&str>, spec: &MlpSpec) -> Result<&'a ParamVector> {
    let p = match label {
        Some(l) => ck.get(l),
        None => ck
            .snapshot
            .eval_point()
            .ok_or_else(|| Error::Input("checkpoint has neither `mid` nor `model`".into())),
    }
    .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    if **p.layout() != *spec.layout() {
        return Err(Error::Dimension {
            layer: path.display().to_string(),
            expected: format!("layout of {} parameters from the config", spec.param_count()),
            got: format!("{} parameters", p.len()),
        });
    }
    Ok(p)
}

fn analyze(what: Analyze) -> Result<()> {
    match what {
        Analyze::Path {
            src,
            a,
            b,
            a_label,
            b_label,
            points,
        } => {
            let c = context(&src)?;
            let (ca, cb) = (load_checkpoint(&a)?, load_checkpoint(&b)?);
            let wa = entry(&ca, &a, a_label.as_deref(), &c.spec)?;
            let wb = entry(&cb, &b, b_label.as_deref(), &c.spec)?;
            let mut eval = eval_linear_path(&c.spec, wa, wb, points, &c.x, &c.y)?;
            eval.endpoints = (a.display().to_string(), b.display().to_string());
            emit(src.out.as_deref(), &path_csv(&eval))
        }
        Analyze::Simplex {
            src,
            checkpoint,
            prefix,
            resolution,
        } => {
            let c = context(&src)?;
            let ck = load_checkpoint(&checkpoint)?;
            let members = (1..=ck.n)
                .map(|i| entry(&ck, &checkpoint, Some(&format!("{prefix}member{i}")), &c.spec).cloned())
                .collect::<Result<Vec<_>>>()?;
            let grid = eval_simplex_grid(&c.spec, &EnsembleWeights::new(members)?, resolution, &c.x, &c.y)?;
            emit(src.out.as_deref(), &grid_csv(&grid))
        }
        Analyze::Noise {
            src,
            checkpoint,
            label,
            sigmas,
            trials,
        } => {
            let c = context(&src)?;
            let ck = load_checkpoint(&checkpoint)?;
            let p = entry(&ck, &checkpoint, label.as_deref(), &c.spec)?;
            let pts = eval_noise_robustness(&c.spec, p, &sigmas, trials, &c.x, &c.y, src.seed)?;
            emit(src.out.as_deref(), &noise_csv(&pts))
        }
        Analyze::Hessian {
            src,
            checkpoint,
            label,
            k,
            max_iter,
            tol,
            samples,
        } => {
            let mut c = context(&src)?;
            if let Some(s) = samples.filter(|&s| s < c.y.len()) {
                let d = c.x.cols();
                c.x = Tensor::new(vec![s, d], c.x.data()[..s * d].to_vec())?;
                c.y.truncate(s);
            }
            let ck = load_checkpoint(&checkpoint)?;
            let p = entry(&ck, &checkpoint, label.as_deref(), &c.spec)?;
            let spec = hessian_top_eigs(&c.spec, p, &c.x, &c.y, k, max_iter, tol, src.seed)?;
            emit(src.out.as_deref(), &json(&spec))
        }
        Analyze::Flops {
            method,
            n,
            batch_size,
            input,
            hidden,
            output,
            out,
        } => {
            let spec = MlpSpec::new(input, hidden, output)?;
            emit(out.as_deref(), &json(&flops_report(&spec, batch_size, method, n)?))
        }
    }
}

fn read_matrix(path: &Path) -> Result<AccuracyMatrix> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    AccuracyMatrix::read_csv(f).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, data_dir } => {
            let cfg = RunConfig::load(&config)?;
            let out = run_experiment(&cfg, data_dir.as_deref())?;
            print!("{}", json(&out.aggregate));
            Ok(())
        }
        Command::Analyze { what } => analyze(what),
        Command::Metrics { matrix, baseline } => {
            let a = read_matrix(&matrix)?;
            let b = baseline.as_deref().map(read_matrix).transpose()?;
            print!("{}", json(&MetricsSummary::of(&a, b.as_ref())));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
