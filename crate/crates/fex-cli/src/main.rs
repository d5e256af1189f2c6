//! `fex` — finite-expression PIDE solver.
//!
//! Subcommands: `solve` runs the full search + fine-tune pipeline and
//! writes a run directory; `validate` runs the built-in oracle suite;
//! `bench` sweeps `solve` over dimensions and seeds into a CSV.

mod settings;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fex_core::search::{solve, SolveReport};
use settings::{resolve, Overrides, Settings};

#[derive(Parser)]
#[command(name = "fex", version, about = "Finite-expression PIDE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a closed-form solution and write report + traces.
    Solve(SolveArgs),
    /// Run the built-in oracle suite (residuals at known solutions,
    /// derivative checks, quadrature exactness, clustering and controller
    /// semantics).
    Validate {
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Sweep solve over dimensions and seeds, emitting a CSV of relative
    /// errors and wall times.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key-value config file; FEX_DEFAULT_CONFIG is used when unset.
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tree_depth: Option<usize>,
    #[arg(long)]
    search_iters: Option<usize>,
    #[arg(long)]
    samples_per_iter: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    batch_n: Option<usize>,
    #[arg(long)]
    batch_m: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    eta_cluster: Option<f64>,
    #[arg(long)]
    controller_lr: Option<f64>,
    #[arg(long)]
    grouping: Option<bool>,
    /// Integral estimator: taylor | trapezoid.
    #[arg(long)]
    integral: Option<String>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    grid_lo: Option<f64>,
    #[arg(long)]
    grid_hi: Option<f64>,
    /// Override the jump variance (the right-hand side stays consistent).
    #[arg(long)]
    jump_var: Option<f64>,
    /// Candidate-scoring worker threads (0 = auto, 1 = serial).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    t1: Option<usize>,
    #[arg(long)]
    t2: Option<usize>,
    #[arg(long)]
    t2_polish: Option<usize>,
    #[arg(long)]
    t3: Option<usize>,
    #[arg(long)]
    t4: Option<usize>,
    #[arg(long)]
    adam_lr_coarse: Option<f64>,
    #[arg(long)]
    adam_lr_fine: Option<f64>,
    #[arg(long)]
    early_stop_threshold: Option<f64>,
    #[arg(long)]
    early_stop_window: Option<usize>,
    #[arg(long)]
    trace_every: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated list of dimensions to sweep.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    dims: Vec<usize>,
    /// Comma-separated list of seeds to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            problem: self.problem.clone(),
            dim: self.dim,
            seed: self.seed,
            tree_depth: self.tree_depth,
            search_iters: self.search_iters,
            samples_per_iter: self.samples_per_iter,
            pool_size: self.pool_size,
            batch_n: self.batch_n,
            batch_m: self.batch_m,
            epsilon: self.epsilon,
            nu: self.nu,
            eta_cluster: self.eta_cluster,
            controller_lr: self.controller_lr,
            grouping: self.grouping,
            integral: self.integral.clone(),
            grid_points: self.grid_points,
            grid_lo: self.grid_lo,
            grid_hi: self.grid_hi,
            jump_var: self.jump_var,
            workers: self.workers,
            out_dir: self.out_dir.clone(),
            t1: self.t1,
            t2: self.t2,
            t2_polish: self.t2_polish,
            t3: self.t3,
            t4: self.t4,
            adam_lr_coarse: self.adam_lr_coarse,
            adam_lr_fine: self.adam_lr_fine,
            early_stop_threshold: self.early_stop_threshold,
            early_stop_window: self.early_stop_window,
            trace_every: self.trace_every,
        }
    }

    fn config_path(&self) -> Option<PathBuf> {
        self.config
            .clone()
            .or_else(|| std::env::var_os("FEX_DEFAULT_CONFIG").map(PathBuf::from))
    }
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NO_CANDIDATE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Validate { seed } => cmd_validate(seed),
        Command::Bench(args) => cmd_bench(&args),
    }
}

fn resolve_or_exit(common: &CommonArgs) -> Result<Settings, ExitCode> {
    match resolve(common.config_path().as_deref(), &common.overrides()) {
        Ok(s) => Ok(s),
        Err(e) => {
            eprintln!("config error: {e:#}");
            Err(ExitCode::from(EXIT_CONFIG))
        }
    }
}

fn cmd_solve(args: &SolveArgs) -> ExitCode {
    let settings = match resolve_or_exit(&args.common) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let problem = match settings.build_problem() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match solve(&problem, &settings.search, settings.seed) {
        Ok(report) => {
            println!("expression: {}", report.expression);
            println!("loss: {:.6e}", report.loss);
            if let Some(rel) = report.relative_error {
                println!("relative error: {rel:.6e}");
            }
            match write_run_dir(&settings, &report) {
                Ok(dir) => {
                    println!("run directory: {}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("failed to write run directory: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Err(fex_core::Error::NoViableCandidate) => {
            eprintln!("no candidate produced a finite loss; nothing to report");
            ExitCode::from(EXIT_NO_CANDIDATE)
        }
        Err(e) => {
            eprintln!("solve failed: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_validate(seed: u64) -> ExitCode {
    let mut all_ok = true;
    for check in fex_core::validate::run_all(seed) {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {:<34} {}", check.name, check.detail);
        all_ok &= check.passed;
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_bench(args: &BenchArgs) -> ExitCode {
    let settings = match resolve_or_exit(&args.common) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Err(e) = std::fs::create_dir_all(&settings.out_dir) {
        eprintln!("cannot create output directory: {e}");
        return ExitCode::FAILURE;
    }
    let csv_path = settings.out_dir.join("bench.csv");
    let mut rows = vec!["problem,dim,seed,relative_error,loss,wall_time_secs".to_string()];
    println!("problem,dim,seed,relative_error,loss,wall_time_secs");
    for &dim in &args.dims {
        for &seed in &args.seeds {
            let mut s = settings.clone();
            s.dim = dim;
            s.seed = seed;
            let problem = match s.build_problem() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("config error at dim {dim}: {e:#}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match solve(&problem, &s.search, seed) {
                Ok(report) => {
                    let rel = report
                        .relative_error
                        .map(|r| format!("{r:.6e}"))
                        .unwrap_or_default();
                    let row = format!(
                        "{},{},{},{},{:.6e},{:.1}",
                        s.problem_name, dim, seed, rel, report.loss, report.wall_time_secs
                    );
                    println!("{row}");
                    rows.push(row);
                }
                Err(e) => {
                    eprintln!("dim {dim} seed {seed}: {e}");
                    rows.push(format!("{},{},{},,,", s.problem_name, dim, seed));
                }
            }
        }
    }
    match std::fs::write(&csv_path, rows.join("\n") + "\n") {
        Ok(()) => {
            println!("wrote {}", csv_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cannot write {}: {e}", csv_path.display());
            ExitCode::FAILURE
        }
    }
}

fn write_run_dir(settings: &Settings, report: &SolveReport) -> anyhow::Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = settings
        .out_dir
        .join(format!("{stamp}-seed{}", settings.seed));
    let dir = unique_dir(&base);
    std::fs::create_dir_all(&dir)?;

    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(dir.join("effective_config.txt"), settings.render_effective())?;

    let mut search_csv = std::fs::File::create(dir.join("search_trace.csv"))?;
    writeln!(search_csv, "iteration,best_pool_loss")?;
    for (i, loss) in report.search_trace.iter().enumerate() {
        writeln!(search_csv, "{i},{loss:e}")?;
    }

    let mut fine_csv = std::fs::File::create(dir.join("finetune_trace.csv"))?;
    writeln!(fine_csv, "step,loss,relative_error")?;
    let rel: std::collections::BTreeMap<usize, f64> =
        report.finetune_relative_error.iter().cloned().collect();
    for (i, loss) in report.finetune_trace.iter().enumerate() {
        match rel.get(&i) {
            Some(r) => writeln!(fine_csv, "{i},{loss:e},{r:e}")?,
            None => writeln!(fine_csv, "{i},{loss:e},")?,
        }
    }
    Ok(dir)
}

fn unique_dir(base: &Path) -> PathBuf {
    if !base.exists() {
        return base.to_path_buf();
    }
    for k in 2.. {
        let candidate = base.with_file_name(format!(
            "{}-{k}",
            base.file_name().unwrap_or_default().to_string_lossy()
        ));
        if !candidate.exists() {
            return candidate;
        }
    }
    unreachable!()
}
