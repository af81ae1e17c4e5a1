use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use unfolding::experiments::{self, ExperimentConfig, ExperimentKind, OUTPUT_ROOT_ENV};
use unfolding::io::{self, Spectrum};
use unfolding::kernel::{self, KernelBoundInputs, KERNEL_BUDGET};
use unfolding::training::{self, TrainConfig};
use unfolding::{Arch, Error, InitialState, Network64, Problem64, SmoothThreshold};

#[derive(Parser)]
#[command(name = "unfold", version, about = "Unfolded ISTA/ADMM networks: kernels, curvature and training experiments")]
struct Cli {
    /// Root directory for outputs that are not given explicitly.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "results")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sparse-recovery dataset file.
    Gen(GenArgs),
    /// Train one network and write a checkpoint plus a training log.
    Train(TrainArgs),
    /// Minimum eigenvalue of the tangent kernel for one network.
    Kernel(KernelArgs),
    /// Final training MSE against the number of samples.
    SweepT(SweepArgs),
    /// Kernel eigenvalues at initialisation against depth or width.
    SweepEigen(SweepArgs),
    /// Loss curves at matched parameter counts.
    ParamEff(SweepArgs),
    /// Held-out mean absolute error against width.
    GenMae(SweepArgs),
    /// Hessian block norms against width.
    HessianScaling(SweepArgs),
    /// Run the experiment described by a config file.
    RunSuite {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct ProblemArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 10.0)]
    frob: f64,
    /// Number of samples.
    #[arg(short = 't', long = "samples", default_value_t = 10)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataSource {
    /// Dataset file from `gen`; generated from the problem flags otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
}

impl DataSource {
    fn load(&self) -> unfolding::Result<unfolding::Dataset64> {
        match &self.data {
            Some(path) => Ok(io::load_dataset::<f64>(path)?.2),
            None => {
                let p = &self.problem;
                Problem64::generate(p.n, p.m, p.k, p.snr_db, p.frob, p.seed)?.gen_dataset(p.t, p.seed)
            }
        }
    }
}

#[derive(Args)]
struct NetArgs {
    #[arg(long, default_value = "lista")]
    arch: Arch,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Weight seed; defaults to the problem seed.
    #[arg(long)]
    weight_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataSource,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    /// Batch size, or `full` for gradient descent. Default `T / 5`.
    #[arg(long)]
    batch: Option<String>,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    #[arg(long)]
    track_kernel: bool,
    #[arg(long)]
    target_mse: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArgs {
    #[command(flatten)]
    data: DataSource,
    #[command(flatten)]
    net: NetArgs,
    /// Use trained weights instead of a fresh initialisation.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Config file; the built-in defaults are used when absent.
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Budget { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> unfolding::Result<()> {
    let root = cli.output_root;
    match cli.command {
        Command::Gen(args) => gen(&root, args),
        Command::Train(args) => train(&root, args),
        Command::Kernel(args) => kernel_cmd(&root, args),
        Command::SweepT(a) => sweep(&root, ExperimentKind::SweepT, a),
        Command::SweepEigen(a) => sweep(&root, ExperimentKind::SweepEigen, a),
        Command::ParamEff(a) => sweep(&root, ExperimentKind::ParamEff, a),
        Command::GenMae(a) => sweep(&root, ExperimentKind::GenMae, a),
        Command::HessianScaling(a) => sweep(&root, ExperimentKind::HessianScaling, a),
        Command::RunSuite { config, out, workers } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            suite(&root, &cfg, out.as_deref())
        }
    }
}

fn gen(root: &Path, args: GenArgs) -> unfolding::Result<()> {
    let p = &args.problem;
    let problem = Problem64::generate(p.n, p.m, p.k, p.snr_db, p.frob, p.seed)?;
    let data = problem.gen_dataset(p.t, p.seed)?;
    let out = args.out.unwrap_or_else(|| root.join("dataset.bin"));
    io::save_dataset(&out, &problem, &data, p.seed)?;
    println!("{}", out.display());
    Ok(())
}

fn build_net(net: &NetArgs, m: usize, n: usize, seed: u64) -> unfolding::Result<Network64> {
    Network64::init_gaussian(net.arch, net.depth, m, n, SmoothThreshold::new(net.lambda)?, net.weight_seed.unwrap_or(seed))
}

fn train(root: &Path, args: TrainArgs) -> unfolding::Result<()> {
    let data = args.data.load()?;
    let seed = args.data.problem.seed;
    let t = data.len();
    let batch_size = match args.batch.as_deref() {
        None => Some((t / 5).max(1)),
        Some("full") => None,
        Some(b) => Some(
            b.parse::<usize>()
                .map_err(|_| Error::Config {
                    field: "batch".into(),
                    message: format!("expected a positive integer or `full`, got {b}"),
                })?,
        ),
    };
    let cfg = TrainConfig {
        eta: args.eta,
        epochs: args.epochs,
        batch_size,
        seed,
        record_every: args.record_every,
        track_kernel: args.track_kernel,
        target_mse: args.target_mse,
    };
    cfg.validate(t)?;
    if args.track_kernel && data.m() * t > KERNEL_BUDGET {
        return Err(Error::Budget {
            what: "m*T",
            value: data.m() * t,
            budget: KERNEL_BUDGET,
        });
    }
    let net = build_net(&args.net, data.m(), data.n(), seed)?;
    let init = InitialState::zeros(data.m());
    let out = args.out.unwrap_or_else(|| root.join("train"));
    std::fs::create_dir_all(&out)?;
    let (net, records, stop) = match training::sgd_train(&net, &data, &init, &cfg) {
        Ok(o) => (o.net, o.records, format!("{:?}", o.stop)),
        Err(Error::Divergence { records, epoch, .. }) => {
            io::write_csv(&out.join("train_log.csv"), &records)?;
            return Err(Error::Domain(format!("training diverged at epoch {epoch}")));
        }
        Err(e) => return Err(e),
    };
    io::write_csv(&out.join("train_log.csv"), &records)?;
    io::save_checkpoint(&out.join("checkpoint.bin"), &net, seed)?;
    let last = records.last().expect("initial record");
    println!(
        "stop={} epoch={} mse={:.6e} out={}",
        stop.to_lowercase(),
        last.epoch,
        training::mse(last.loss, t),
        out.display()
    );
    Ok(())
}

fn kernel_cmd(root: &Path, args: KernelArgs) -> unfolding::Result<()> {
    let data = args.data.load()?;
    let seed = args.data.problem.seed;
    let side = data.m() * data.len();
    if side > KERNEL_BUDGET {
        return Err(Error::Budget {
            what: "m*T",
            value: side,
            budget: KERNEL_BUDGET,
        });
    }
    let (net, seed) = match &args.checkpoint {
        Some(path) => {
            let (meta, net) = io::load_checkpoint::<f64>(path)?;
            (net, meta.seed)
        }
        None => (build_net(&args.net, data.m(), data.n(), seed)?, args.net.weight_seed.unwrap_or(seed)),
    };
    let init = InitialState::zeros(net.m);
    let k = kernel::assemble_structured(&net, data.y.view(), &init, KERNEL_BUDGET)?;
    let eig = kernel::min_eigenvalue(&k)?;
    let mut ub = f64::INFINITY;
    for i in 0..data.len() {
        ub = ub.min(kernel::upper_bound(&KernelBoundInputs::measure(&net, data.y.column(i), &init, 0)?)?);
    }
    let spectrum = Spectrum {
        arch: net.arch,
        depth: net.depth(),
        m: net.m,
        n: net.n,
        t: data.len(),
        seed,
        lambda_min: eig.lambda_min,
        lambda_max: eig.lambda_max,
        ub_value: ub,
    };
    let out = args.out.unwrap_or_else(|| root.join("spectrum.json"));
    io::write_json(&out, &spectrum)?;
    println!("{}", serde_json::to_string(&spectrum)?);
    Ok(())
}

fn sweep(root: &Path, kind: ExperimentKind, args: SweepArgs) -> unfolding::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(kind),
    };
    if cfg.kind != kind {
        return Err(Error::Config {
            field: "kind".into(),
            message: format!("config is for {}, not {}", cfg.kind.name(), kind.name()),
        });
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    suite(root, &cfg, args.out.as_deref())
}

fn suite(root: &Path, cfg: &ExperimentConfig, out: Option<&Path>) -> unfolding::Result<()> {
    cfg.validate()?;
    let dir = experiments::output_dir(cfg, root, out);
    let report = experiments::run_suite(cfg, &dir)?;
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{}: {} cells ({} failed), config {} -> {}",
        report.kind,
        report.cells.len(),
        failed,
        &report.config_hash[..12],
        dir.display()
    );
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}
