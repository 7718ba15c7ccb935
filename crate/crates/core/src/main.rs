use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use aggregation_lab::config::{run_experiment, ExperimentConfig, Method};
use aggregation_lab::energy::total_energy;
use aggregation_lab::kernels::{gamma_density_radial, GammaTable, Kernel, KernelSpec, MollifiedKernel};
use aggregation_lab::measures::ParticleCloud;
use aggregation_lab::transport::{distance, Exponent};
use aggregation_lab::verify::{el_check, ElOptions};
use aggregation_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "agglab", version, about = "Minimisers of repulsive-attractive interaction energies")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline named by the configuration's `method`.
    Run(RunArgs),
    /// Particle gradient flow.
    Flow(RunArgs),
    /// Self-consistent obstacle solve (fractional solver when s < 1).
    Obstacle(RunArgs),
    /// Energy breakdown of a particle cloud.
    Energy {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
    },
    /// Exact transport distance between two equal-weight clouds.
    Dist {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Exponent `p >= 1` or `inf`.
        #[arg(long, default_value = "2")]
        p: String,
    },
    /// Euler–Lagrange report of a particle cloud.
    Verify {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        r_check: f64,
        #[arg(long, default_value_t = 2000)]
        m_samples: usize,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
    },
    /// Tabulate `V_s`, `Gamma_lambda` and `gamma_lambda` on `(0, r_max]`.
    KernelsTable {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 3.0)]
        r_max: f64,
        #[arg(long, default_value_t = 300)]
        n: usize,
    },
}

/// Kernel from a bare kernel file or the `kernel` member of a configuration.
fn load_kernel(path: &Path) -> Result<Kernel> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let spec = v.get("config").and_then(|c| c.get("kernel")).or_else(|| v.get("kernel")).unwrap_or(&v);
    let spec: KernelSpec = serde_json::from_value(spec.clone()).map_err(|e| Error::Config(vec![e.to_string()]))?;
    Kernel::from_spec(&spec)
}

fn run(args: &RunArgs, method: Option<Method>) -> Result<Value> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = method {
        cfg.method = match m {
            Method::Obstacle if cfg.kernel.s < 1.0 => Method::FracObstacle,
            m => m,
        };
    }
    let summary = run_experiment(&cfg, &args.out)?;
    Ok(json!({
        "passed": summary.passed,
        "out_dir": summary.out_dir,
        "files": summary.files,
    }))
}

fn kernels_table(kernel: &Path, out: &Path, lambda: f64, r_max: f64, n: usize) -> Result<Value> {
    let k = load_kernel(kernel)?;
    let mk = MollifiedKernel::new(k.dim(), k.order(), lambda)?;
    let table = if k.order() < 1.0 { Some(GammaTable::new(k.dim(), k.order())?) } else { None };
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["r", "V_s", "Gamma_lambda", "gamma_lambda"])?;
    for i in 1..=n {
        let r = r_max * i as f64 / n as f64;
        let gamma = match &table {
            Some(t) => t.scaled(lambda, r),
            None => gamma_density_radial(&mk, r)?,
        };
        w.write_record([
            format!("{r:e}"),
            format!("{:e}", k.v(r)),
            format!("{:e}", mk.value(r)),
            format!("{gamma:e}"),
        ])?;
    }
    w.flush()?;
    Ok(json!({ "rows": n, "out": out }))
}

fn dispatch(cmd: &Command) -> Result<Value> {
    match cmd {
        Command::Run(a) => run(a, None),
        Command::Flow(a) => run(a, Some(Method::Flow)),
        Command::Obstacle(a) => run(a, Some(Method::Obstacle)),
        Command::Energy { cloud, kernel } => {
            let c = ParticleCloud::read_csv(cloud)?;
            Ok(serde_json::to_value(total_energy(&c, &load_kernel(kernel)?))?)
        }
        Command::Dist { a, b, p } => {
            let e: Exponent = p.parse()?;
            let (d, m) = distance(&ParticleCloud::read_csv(a)?, &ParticleCloud::read_csv(b)?, e)?;
            Ok(json!({ "p": p, "distance": d, "bottleneck": m.bottleneck }))
        }
        Command::Verify {
            cloud,
            kernel,
            r_check,
            m_samples,
            smoothing,
        } => {
            let opts = ElOptions {
                r_check: *r_check,
                m_samples: *m_samples,
                smoothing: *smoothing,
                ..ElOptions::default()
            };
            let rep = el_check(&ParticleCloud::read_csv(cloud)?, &load_kernel(kernel)?, &opts)?;
            Ok(serde_json::to_value(rep)?)
        }
        Command::KernelsTable {
            kernel,
            out,
            lambda,
            r_max,
            n,
        } => kernels_table(kernel, out, *lambda, *r_max, *n),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli.command) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                return ExitCode::from(1);
            }
            if let Command::Run(a) | Command::Flow(a) | Command::Obstacle(a) = &cli.command {
                let diag = json!({ "error": e.to_string(), "detail": format!("{e:?}") });
                if fs::create_dir_all(&a.out).is_ok() {
                    let _ = fs::write(a.out.join("diagnostics.json"), diag.to_string() + "\n");
                }
            }
            ExitCode::from(2)
        }
    }
}
