use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vofml::dataset::{self, DatasetSpec};
use vofml::harness::{self, ExperimentConfig, SchemeKind, TestCase, DESK_MESHES, FULL_MESHES};
use vofml::network::{self, NetworkWeights, QuasiNewton, TrainSchedule, DEFAULT_DIMS};

const SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Parser)]
#[command(name = "vofml", version, about = "Machine-learned volume-of-fluid advection")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "VOFML_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic flux dataset as CSV.
    GenDataset(GenArgs),
    /// Train the network on a dataset.
    Train(TrainArgs),
    /// Compare upwind, limited downwind and network fluxes on the test split.
    EvalNet(EvalArgs),
    /// Run an advection benchmark on a list of meshes.
    RunTest(RunArgs),
    /// Fit convergence rates from summary files in a directory.
    Convergence(ConvArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Base configurations per family: one plane, two, three, ellipsoid.
    #[arg(long, value_delimiter = ',', default_values_t = [3000, 6000, 9000, 6000])]
    counts: Vec<usize>,
    /// Use the reduced counts 1000,2000,3000,2000.
    #[arg(long, conflicts_with = "counts")]
    desk: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.6)]
    beta_max: f64,
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct SplitArgs {
    /// Seed of the train/validation/test split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Split rows independently instead of keeping augmented copies together.
    #[arg(long)]
    naive_split: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5000)]
    epochs_adam: usize,
    #[arg(long, default_value_t = 5000)]
    steps_lbfgs: usize,
    /// Mini-batch size for ADAM; 0 trains on the full batch.
    #[arg(long, default_value_t = 0)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    history: usize,
    /// Dense BFGS instead of the limited-memory variant.
    #[arg(long)]
    full_bfgs: bool,
    /// Fit the symmetrized, complement-wrapped network directly.
    #[arg(long)]
    through_wrapper: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
    /// Print losses every this many iterations.
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Evaluate on every row instead of the test partition.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    test: u8,
    #[arg(long)]
    scheme: SchemeKind,
    #[arg(long, value_delimiter = ',')]
    nh: Option<Vec<usize>>,
    /// Use the full mesh list up to 105 cells per direction.
    #[arg(long, conflicts_with = "nh")]
    full: bool,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    eps_mark: f64,
    #[arg(long)]
    cycle_sweeps: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::GenDataset(a) => gen_dataset(a),
        Command::Train(a) => train(a),
        Command::EvalNet(a) => eval_net(a),
        Command::RunTest(a) => run_test(a),
        Command::Convergence(a) => convergence(a),
    }
}

fn gen_dataset(a: GenArgs) -> Result<()> {
    let counts: [usize; 4] = if a.desk {
        [1000, 2000, 3000, 2000]
    } else {
        a.counts.try_into().map_err(|_| anyhow::anyhow!("--counts takes exactly four values"))?
    };
    let spec = DatasetSpec {
        counts,
        beta_range: (0.0, a.beta_max),
        augment: !a.no_augment,
        seed: a.seed,
    };
    let data = dataset::build(&spec)?;
    dataset::write(&data, &a.out)?;
    println!("wrote {} samples to {}", data.len(), a.out.display());
    Ok(())
}

fn load_split(path: &PathBuf, s: &SplitArgs) -> Result<dataset::Split> {
    let data = dataset::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(dataset::split(&data, SPLIT, s.split_seed, !s.naive_split))
}

fn print_table(t: &network::FluxTable) {
    println!("scheme     MSE          MAE");
    for (name, m) in [
        ("UW", t.uw),
        ("LD", t.ld),
        ("VOFML", t.vofml),
        ("VOFML-raw", t.vofml_unprojected),
    ] {
        println!("{name:<10} {:.4e}   {:.4e}", m.mse, m.mae);
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let parts = load_split(&a.dataset, &a.split)?;
    let schedule = TrainSchedule {
        adam_epochs: a.epochs_adam,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        qn_steps: a.steps_lbfgs,
        quasi_newton: if a.full_bfgs {
            QuasiNewton::Full
        } else {
            QuasiNewton::Limited { history: a.history }
        },
        seed: a.seed,
        through_wrapper: a.through_wrapper,
        ..TrainSchedule::default()
    };
    let w0 = NetworkWeights::xavier(&DEFAULT_DIMS, a.seed)?;
    let every = a.log_every.max(1);
    let out = network::train_with_observer(&w0, &parts.train, &parts.validation, &schedule, |e| {
        if e.iteration % every == 0 {
            eprintln!(
                "{:>12} {:>6}  train {:.4e}  validation {:.4e}",
                e.phase, e.iteration, e.train_loss, e.validation_loss
            );
        }
    })?;
    out.weights.save(&a.out)?;
    println!("best validation MSE {:.4e}", out.best_validation_loss);
    print_table(&network::flux_table(&out.weights, &parts.test)?);
    Ok(())
}

fn eval_net(a: EvalArgs) -> Result<()> {
    let w = NetworkWeights::load(&a.weights)?;
    let rows = if a.all {
        dataset::read(&a.dataset)?
    } else {
        load_split(&a.dataset, &a.split)?.test
    };
    print_table(&network::flux_table(&w, &rows)?);
    Ok(())
}

fn run_test(a: RunArgs) -> Result<()> {
    let test = TestCase::from_id(a.test).unwrap();
    let meshes = match (a.full, a.nh) {
        (true, _) => FULL_MESHES.to_vec(),
        (false, Some(v)) => v,
        (false, None) => DESK_MESHES.to_vec(),
    };
    let weights = match (&a.weights, a.scheme) {
        (Some(p), _) => Some(Arc::new(NetworkWeights::load(p)?)),
        (None, SchemeKind::Vofml) => bail!("--weights is required for the vofml scheme"),
        (None, _) => None,
    };
    let mut cfg = ExperimentConfig::new(test, a.scheme, Vec::new());
    cfg.eps_mark = a.eps_mark;
    cfg.cycle_sweeps = a.cycle_sweeps;
    std::fs::create_dir_all(&a.out)?;
    let summary = a.out.join("summary.csv");
    let mut reports = Vec::new();
    for n in meshes {
        cfg.meshes = vec![n];
        let r = harness::run(&cfg, weights.as_ref())?.remove(0);
        harness::write_run_csv(&r, &a.out.join(harness::run_file_name(&r)))?;
        harness::append_summary(std::slice::from_ref(&r), &summary)?;
        println!(
            "test {} {:>5} N={:<4} E={:.4e}  Rmix T/0={:.3}  ({:.1}s)",
            test.id(),
            r.scheme,
            r.n,
            r.error,
            r.r_mix_ratio,
            r.wall_seconds
        );
        reports.push(r);
    }
    if reports.len() >= 3 {
        let ns: Vec<usize> = reports.iter().map(|r| r.n).collect();
        let es: Vec<f64> = reports.iter().map(|r| r.error).collect();
        println!("rate {:.3}", harness::convergence(&ns, &es)?.rate);
    }
    Ok(())
}

fn convergence(a: ConvArgs) -> Result<()> {
    let mut rows = Vec::new();
    for entry in std::fs::read_dir(&a.input)? {
        let p = entry?.path();
        if p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("summary") && n.to_string_lossy().ends_with(".csv")) {
            rows.extend(harness::read_summary(&p)?);
        }
    }
    if rows.is_empty() {
        bail!("no summary*.csv files in {}", a.input.display());
    }
    println!("test scheme  rate");
    for (t, s, fit) in harness::rates_from_summary(&rows) {
        match fit {
            Ok(f) => println!("{t:<4} {s:<6} {:.3}", f.rate),
            Err(e) => println!("{t:<4} {s:<6} n/a ({e})"),
        }
    }
    Ok(())
}
