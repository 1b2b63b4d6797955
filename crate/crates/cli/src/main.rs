use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use segre_cpd::bench::{run_experiment, ExperimentSpec, Model, SolverSpec};
use segre_cpd::conditioning::condition_number;
use segre_cpd::io::{load_cpd, load_tensor_file, save_cpd, save_tucker, TensorFile};
use segre_cpd::solver::{solve, SolverConfig, Variant};
use segre_cpd::tensor::{expand_core_factors, st_hosvd};
use segre_cpd::Cpd;

#[derive(Parser)]
#[command(name = "segre-cpd", version, about = "Low-rank CPD by Riemannian Gauss-Newton with hot restarts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Hr,
    Reg,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Hr => Variant::HotRestarts,
            VariantArg::Reg => Variant::TikhonovReg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    F,
    G,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate a tensor (DTEN, Tucker DTEN or text) by a rank-R CPD.
    Decompose {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, value_enum, default_value = "hr")]
        variant: VariantArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        tau_f: f64,
        #[arg(long, default_value_t = 1e-10)]
        tau_df: f64,
        #[arg(long, default_value_t = 1e-12)]
        tau_dx: f64,
        #[arg(long, default_value_t = 1500)]
        k_max: usize,
        #[arg(long, default_value_t = 500)]
        r_max: usize,
        /// Convergence trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Output CPD JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the condition number of a CPD JSON file.
    Condition {
        #[arg(long)]
        cpd: PathBuf,
    },
    /// Run a synthetic exact-recovery experiment and write the report JSON.
    Benchmark {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Column correlation (model F).
        #[arg(long, default_value_t = 0.0)]
        c: f64,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 5.0)]
        e: f64,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "hr,reg")]
        solvers: Vec<VariantArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated shape; defaults to the model's shape.
        #[arg(long, value_delimiter = ',')]
        shape: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
        /// Per-solver summary CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for per-attempt trace CSVs.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Orthogonal Tucker compression by sequentially truncated HOSVD.
    Compress {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Decompose { tensor, rank, variant, seed, tau_f, tau_df, tau_dx, k_max, r_max, trace, out } => {
            let config = SolverConfig {
                tau_f,
                tau_df,
                tau_dx,
                k_max,
                r_max,
                variant: variant.into(),
                seed,
                ..SolverConfig::default()
            };
            decompose(&tensor, rank, &config, trace.as_deref(), &out)
        }
        Command::Condition { cpd } => {
            let p: Cpd = load_cpd(&cpd).with_context(|| format!("reading {}", cpd.display()))?;
            let report = condition_number(&p)?;
            println!("{}", json!({ "kappa": finite(report.kappa), "sigma_min": report.sigma_min }));
            Ok(())
        }
        Command::Benchmark { model, c, s, rank, e, starts, solvers, seed, shape, out, csv, trace_dir } => {
            let model = match model {
                ModelArg::F => Model::F { c, s },
                ModelArg::G => Model::G { s },
            };
            let starts = starts.unwrap_or(match model {
                Model::F { .. } => 25,
                Model::G { .. } => 50,
            });
            let spec = ExperimentSpec {
                model,
                shape: shape.unwrap_or_else(|| model.default_shape()),
                rank,
                e,
                starts,
                solvers: solvers.into_iter().map(|v| SolverSpec::standard(v.into(), e)).collect(),
                seed,
                record_traces: trace_dir.is_some(),
            };
            benchmark(&spec, &out, csv.as_deref(), trace_dir.as_deref())
        }
        Command::Compress { tensor, ranks, out } => {
            let t = match load_tensor_file::<f64>(&tensor).with_context(|| format!("reading {}", tensor.display()))? {
                TensorFile::Dense(t) => t,
                TensorFile::Tucker(t) => t.expand(),
            };
            let tucker = st_hosvd(&t, &ranks, None)?;
            save_tucker(&tucker, &out)?;
            let rel = t.sub(&tucker.expand())?.frobenius_norm() / t.frobenius_norm();
            println!("{}", json!({ "shape": t.shape(), "ranks": tucker.ranks(), "relative_error": rel }));
            Ok(())
        }
    }
}

fn decompose(tensor: &Path, rank: usize, config: &SolverConfig, trace: Option<&Path>, out: &Path) -> Result<()> {
    let file = load_tensor_file::<f64>(tensor).with_context(|| format!("reading {}", tensor.display()))?;
    let (target, tucker) = match file {
        TensorFile::Dense(t) => (t, None),
        TensorFile::Tucker(t) => (t.core.clone(), Some(t)),
    };
    let report = solve(&target, rank, config)?;
    if let Some(path) = trace {
        report.write_trace(File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    let relative_residual = report.relative_residual(&target)?;
    let point = match &tucker {
        None => report.final_point.clone(),
        Some(t) => Cpd::from_factor_matrices(&expand_core_factors(&report.final_point.factor_matrices(), &t.factors)?)?,
    };
    save_cpd(&point, out)?;
    println!(
        "{}",
        json!({
            "status": report.status,
            "final_f": report.final_f,
            "relative_residual": relative_residual,
            "final_kappa": report.final_kappa.and_then(finite),
            "iterations": report.iterations.len(),
            "restarts": report.restarts,
            "wall_time": report.wall_time,
        })
    );
    Ok(())
}

fn benchmark(spec: &ExperimentSpec, out: &Path, csv: Option<&Path>, trace_dir: Option<&Path>) -> Result<()> {
    let report = run_experiment(spec)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out)?), &report)?;
    if let Some(path) = csv {
        report.write_csv(File::create(path)?)?;
    }
    if let Some(dir) = trace_dir {
        fs::create_dir_all(dir)?;
        for a in &report.attempts {
            let path = dir.join(format!("{}-{:03}.csv", a.solver, a.index));
            segre_cpd::solver::write_trace(&a.trace, File::create(&path)?)?;
        }
    }
    for s in &report.solvers {
        println!(
            "{}",
            json!({ "solver": s.solver, "p_success": s.ets.p_success, "ets": finite(s.ets.ets), "speedup": s.speedup })
        );
    }
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}
