use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqkf::experiment::{load_config, mean_std, run_experiment, ExperimentConfig, ExperimentError, Profile};
use seqkf::neural::gradcheck;
use seqkf::numerics::rng_from_seed;
use seqkf::oracle::run_oracle_suite;
use seqkf::pipeline::MethodKind;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "seqkf", version, about = "Kalman filtering with EM and learned observation encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the robot benchmark and write the result tables.
    Run(RunArgs),
    /// Compare filter and smoother against exact Gaussian conditioning.
    Oracle {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seeds; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Comma-separated methods, e.g. KF,EM_KF,TL_KF.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<MethodKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if !args.methods.is_empty() {
        cfg.methods = args.methods.clone();
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(k) = args.em_iters {
        cfg.em.max_iter = k;
    }
    if let Some(p) = args.profile {
        cfg.profile = p;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run(args: RunArgs) -> ExitCode {
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let summary = match run_experiment(&cfg) {
        Ok(s) => s,
        Err(ExperimentError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    println!("{:<16}{:>6}{:>16}{:>16}", "method", "runs", "filter MSE", "smoother MSE");
    for m in &cfg.methods {
        let f: Vec<f64> = summary.reports_for(*m).map(|r| r.filter_mse).collect();
        if f.is_empty() {
            println!("{:<16}{:>6}", m.label(), 0);
            continue;
        }
        let s: Vec<f64> = summary.reports_for(*m).map(|r| r.smoother_mse).collect();
        println!("{:<16}{:>6}{:>16.6e}{:>16.6e}", m.label(), f.len(), mean_std(&f).0, mean_std(&s).0);
    }
    for file in &summary.files {
        println!("wrote {}", file.display());
    }
    if summary.succeeded() {
        ExitCode::SUCCESS
    } else {
        for f in &summary.failures {
            eprintln!("failed: seed {} {}: {}", f.seed, f.stage, f.message);
        }
        ExitCode::from(EXIT_RUNTIME)
    }
}

fn oracle(cases: usize, seed: u64) -> ExitCode {
    match run_oracle_suite(cases, &mut rng_from_seed(seed)) {
        Ok(d) => {
            println!("cases           {}", d.cases);
            println!("filter mean     {:.3e}", d.filter_mean);
            println!("filter cov      {:.3e}", d.filter_cov);
            println!("smoother mean   {:.3e}", d.smoother_mean);
            println!("smoother cov    {:.3e}", d.smoother_cov);
            println!("lag-one cov     {:.3e}", d.lag_one_cov);
            println!("log-likelihood  {:.3e}", d.log_likelihood);
            if d.worst_moment() < 1e-8 {
                ExitCode::SUCCESS
            } else {
                eprintln!("max moment deviation {:.3e} exceeds 1e-8", d.worst_moment());
                ExitCode::from(EXIT_RUNTIME)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn gradcheck_cmd(seed: u64, step: f64) -> ExitCode {
    let results = gradcheck::run_all(seed, step);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for r in &results {
        match worst.iter_mut().find(|(c, _)| *c == r.case) {
            Some(w) => w.1 = w.1.max(r.relative_error),
            None => worst.push((r.case.clone(), r.relative_error)),
        }
    }
    for (case, err) in &worst {
        println!("{case:<24}{err:.3e}");
    }
    let overall = results.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error)).expect("cases exist");
    println!("worst: {}/{} {:.3e}", overall.case, overall.tensor, overall.relative_error);
    if results.iter().all(|r| r.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => run(args),
        Command::Oracle { cases, seed } => oracle(cases, seed),
        Command::Gradcheck { seed, step } => gradcheck_cmd(seed, step),
    }
}
