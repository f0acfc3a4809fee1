use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bmnn::dataio::load_mnist;
use bmnn::harness::{
    evaluate_on_mnist, run_mnist, run_teacher_student, run_verify, Command, Model, RunConfig,
    MNIST_ARCHITECTURE,
};
use bmnn::mfb::{MfbConfig, DEFAULT_EPS};
use bmnn::verify::VerifyConfig;
use bmnn::{Algorithm, Error};

#[derive(Parser)]
#[command(name = "bmnn", version = bmnn::harness::VERSION, about = "Binary-weight network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Online learning of a random MxMx1 binary teacher.
    TeacherStudent(TrainArgs),
    /// Epoch training on MNIST.
    Mnist(TrainArgs),
    /// Run the invariant and oracle suites; exits 1 on any failure.
    Verify(VerifyArgs),
    /// Test error of a saved model on the MNIST test set.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Layer widths, e.g. 7x7x1 or 785x510x10.
    #[arg(long)]
    arch: Option<String>,
    /// Algorithm to run (repeatable): mfb, pmfb, backprop, clipped. Default: all.
    #[arg(long = "algo")]
    algorithms: Vec<Algorithm>,
    #[arg(long)]
    trials: Option<usize>,
    /// Training samples (teacher-student) or per-epoch cap (mnist).
    #[arg(long)]
    samples: Option<usize>,
    /// Test samples (teacher-student) or test-set cap (mnist).
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// BackProp learning rate; defaults depend on the task.
    #[arg(long)]
    eta: Option<f64>,
    /// Variance floor of the mean-field passes.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = bmnn::harness::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, env = "BMNN_DATA_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Output directory for CSV logs, models and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = bmnn::harness::DEFAULT_SEED)]
    seed: u64,
    /// Smaller suite sizes for a fast smoke run.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model JSON or packed .bmnn file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, env = "BMNN_DATA_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
}

fn run_config(command: Command, args: TrainArgs) -> Result<RunConfig, Error> {
    let architecture = match (command, args.arch) {
        (_, Some(a)) => a,
        (Command::Mnist, None) => MNIST_ARCHITECTURE.to_string(),
        _ => return Err(Error::Config("--arch is required, e.g. --arch 7x7x1".into())),
    };
    let base = match command {
        Command::Mnist => RunConfig::mnist(&architecture, args.data_dir),
        _ => RunConfig {
            architecture,
            ..RunConfig::teacher_student(1)
        },
    };
    Ok(RunConfig {
        algorithms: if args.algorithms.is_empty() {
            Algorithm::ALL.to_vec()
        } else {
            args.algorithms
        },
        seed: args.seed,
        trials: args.trials.unwrap_or(base.trials),
        samples: args.samples,
        test_samples: args.test_samples,
        epochs: args.epochs,
        eta: args.eta,
        eps: args.eps,
        progress: true,
        ..base
    })
}

fn train(command: Command, args: TrainArgs) -> Result<(), Error> {
    let out = args.out.clone();
    let config = run_config(command, args)?;
    let report = match command {
        Command::Mnist => run_mnist(&config)?,
        _ => run_teacher_student(&config)?,
    };
    println!("algorithm,best_trial,best_test_error,mean_test_error");
    for s in &report.summary {
        println!("{},{},{},{}", s.algorithm, s.best_trial, s.best_test_error, s.mean_test_error);
    }
    if let Some(dir) = out {
        report.write(&dir)?;
        eprintln!("wrote {}", dir.display());
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<bool, Error> {
    let config = if args.quick {
        VerifyConfig {
            seed: args.seed,
            instances: 20,
            nan_steps: 2_000,
            oracle_instances: 200,
            mc_samples: 5_000,
            gradient_instances: 10,
            packed_pairs: 500,
            timing_ms: 0,
        }
    } else {
        VerifyConfig {
            seed: args.seed,
            ..VerifyConfig::default()
        }
    };
    let result = run_verify(&config, args.out.as_deref())?;
    for s in &result.suites {
        let status = if s.passed { "PASS" } else { "FAIL" };
        println!("{status} {} ({} checked, {} failed): {}", s.name, s.checked, s.failures, s.detail);
    }
    Ok(result.passed())
}

fn eval(args: EvalArgs) -> Result<(), Error> {
    let model = Model::load(&args.model)?;
    let data = load_mnist(&args.data_dir)?;
    let results = evaluate_on_mnist(&model, &data, args.test_samples, MfbConfig::with_eps(args.eps)?)?;
    println!("algorithm,test_error");
    for (a, e) in results {
        println!("{a},{e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Cmd::TeacherStudent(a) => train(Command::TeacherStudent, a).map(|_| true),
        Cmd::Mnist(a) => train(Command::Mnist, a).map(|_| true),
        Cmd::Verify(a) => verify(a),
        Cmd::Eval(a) => eval(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::Config(_) | Error::InvalidTopology(_) | Error::MissingData(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
