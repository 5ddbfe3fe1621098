use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rbirgnm::algorithm::AlgorithmRegistry;
use rbirgnm::experiments::{compare_reconstructions, estimator_case_study, run_benchmark, Overrides, RunConfig};
use rbirgnm::forward::ProblemKind;
use rbirgnm::report::RunReport;
use rbirgnm::state_reduction::EstimatorMode;

#[derive(Parser)]
#[command(name = "rbirgnm", version, about = "Reduced-basis trust-region IRGNM for coefficient identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark.
    Run(RunArgs),
    /// Compare offline, online and mixed estimator evaluation on run 2.
    CaseStudy(RunArgs),
    /// Relative distance of reconstruction A to reference B.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the pointwise relative error field here.
        #[arg(long)]
        pointwise: Option<PathBuf>,
    },
    /// List registered algorithms.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    run: Option<u32>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    estimator: Option<EstimatorMode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(self) -> rbirgnm::Result<RunConfig> {
        let o = Overrides {
            run: self.run,
            problem: self.problem,
            algorithm: self.algorithm,
            n: self.n,
            delta: self.delta,
            seed: self.seed,
            estimator: self.estimator,
            out: self.out,
        };
        RunConfig::load(self.config.as_deref(), &o)
    }
}

fn print_summary(r: &RunReport) {
    let s = &r.summary;
    let bracket = if s.algorithm == "qr-vr" {
        format!("{}(+{})", s.fom_solves, s.riesz_solves)
    } else {
        s.fom_solves.to_string()
    };
    let dim = |v: Option<usize>| v.map_or("--".to_string(), |v| v.to_string());
    println!(
        "{:<6} time {:>8.2}s  FOM solves {:>12}  B apps {:>6}  n_Q {:>4}  n_V {:>4}  iter {:>3}  |F-y| {:.3e}  converged {}",
        s.algorithm,
        s.time_s,
        bracket,
        s.bu_apps,
        dim(s.n_q),
        dim(s.n_v),
        s.outer_iterations,
        s.final_discrepancy,
        s.converged
    );
}

fn run(cli: Cli) -> rbirgnm::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let report = run_benchmark(&cfg, &AlgorithmRegistry::with_builtin())?;
            print_summary(&report);
        }
        Command::CaseStudy(args) => {
            let cfg = args.load()?;
            for (mode, report) in estimator_case_study(&cfg)? {
                print!("{:<8} ", mode.name());
                print_summary(&report);
            }
        }
        Command::Compare { a, b, pointwise } => {
            let a = RunReport::parse(&a)?;
            let b = RunReport::parse(&b)?;
            let c = compare_reconstructions(&a, &b)?;
            println!("relative L2 {:.4e}  relative Q {:.4e}", c.relative_l2, c.relative_q);
            if let Some(path) = pointwise {
                c.write_pointwise(&path)?;
            }
        }
        Command::List => {
            for alg in AlgorithmRegistry::with_builtin().iter() {
                println!("{:<6} {}", alg.name(), alg.description());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
