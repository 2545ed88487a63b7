use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alterwave::config::RunConfig;
use alterwave::experiments::{run_experiment, summarize, write_records_csv};
use alterwave::geometry::{validate_assumptions, GeometryDocument};
use alterwave::model1d::{lambda_n, solve_bottom_root, upsilon_fit, RobinCoefficient};
use alterwave::specfun::{
    eval_theta, eval_x, eval_x_eta, eval_x_series, eval_y, eval_y1_leading, eval_z_accelerated,
    PlanePoint, SeriesControl, ThetaArguments,
};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "alterwave", version, about = "Waveguides with frequently alternating boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a special function at one point.
    Specfun(SpecfunArgs),
    /// One-dimensional model problem.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Geometry documents.
    #[command(subcommand)]
    Geometry(GeometryCommand),
    /// Run an experiment from a config file.
    Run {
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Function {
    #[value(name = "X")]
    X,
    #[value(name = "Y")]
    Y,
    #[value(name = "Y1")]
    Y1,
    #[value(name = "X_eta")]
    XEta,
    #[value(name = "Z")]
    Z,
    #[value(name = "theta")]
    Theta,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SpecfunArgs {
    function: Function,
    /// First coordinate (`t₁` for theta).
    x: f64,
    /// Second coordinate (`t₂` for theta).
    y: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    eps_b: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 1e-14)]
    tail: f64,
    #[arg(long, default_value_t = 1_000_000)]
    max_terms: usize,
}

#[derive(Args)]
struct Robin {
    #[arg(long, allow_hyphen_values = true)]
    b: f64,
    #[arg(long = "K")]
    k: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// First `n` model eigenvalues `Λ_k`.
    Lambda {
        #[command(flatten)]
        robin: Robin,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1e-13)]
        tol: f64,
    },
    /// Root `Λ(ε, μ)` of the bottom equation.
    Bottom {
        #[command(flatten)]
        robin: Robin,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1e-13)]
        tol: f64,
    },
    /// Polynomial fit of `Λ(ε, μ) − Λ₁(μ)` in powers of `ε`.
    Upsilon {
        #[command(flatten)]
        robin: Robin,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.04,0.03,0.02,0.01")]
        eps_grid: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        degree: usize,
    },
}

#[derive(Subcommand)]
enum GeometryCommand {
    /// Check the geometric assumptions of a geometry document.
    Validate {
        file: PathBuf,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
}

fn cmd_specfun(a: &SpecfunArgs) -> Result<()> {
    let ctl = SeriesControl::new(a.max_terms, a.tail)?;
    let (value, tail, branch) = match a.function {
        Function::X => {
            let p = PlanePoint::new(a.x, a.y)?;
            let v = eval_x(p)?;
            let branch = if (-2.0 * a.y).exp() < 0.5 {
                "closed form, log1p branch (e^{-2 xi2} < 1/2)".to_string()
            } else {
                "closed form, direct logarithm branch (e^{-2 xi2} >= 1/2)".to_string()
            };
            let tail = if a.y > 0.0 {
                let s = eval_x_series(p, ctl)?;
                format!("series cross-check {:.12} ({} terms, tail {:.3e})", s.value, s.terms, s.tail_bound)
            } else {
                "exact".to_string()
            };
            (v, tail, branch)
        }
        Function::Y => (
            eval_y(PlanePoint::new(a.x, a.y)?)?,
            "exact".into(),
            "conformal map z + sqrt(z-1)sqrt(z+1)".into(),
        ),
        Function::Y1 => (
            eval_y1_leading(PlanePoint::new(a.x, a.y)?)?,
            "exact".into(),
            "explicit leading part".into(),
        ),
        Function::XEta => {
            let eta = a.eta.context("X_eta needs --eta")?;
            (
                eval_x_eta(PlanePoint::new(a.x, a.y)?, eta)?,
                "exact".into(),
                "closed form in sin(xi1 + i xi2)".into(),
            )
        }
        Function::Z => {
            let s = eval_z_accelerated(PlanePoint::new(a.x, a.y)?, a.eps_b, a.beta, ctl)?;
            (
                s.value,
                format!("{:.3e} after {} terms", s.tail_bound, s.terms),
                "X plus accelerated difference series".into(),
            )
        }
        Function::Theta => {
            let s = eval_theta(ThetaArguments { t1: a.x, t2: a.y }, ctl)?;
            (
                s.value,
                format!("{:.3e} after {} terms", s.tail_bound, s.terms),
                "partial sum plus Euler-Maclaurin tails".into(),
            )
        }
    };
    println!("value      {value:.12}");
    println!("tail_bound {tail}");
    println!("branch     {branch}");
    Ok(())
}

fn cmd_model(m: &ModelCommand) -> Result<()> {
    match m {
        ModelCommand::Lambda { robin, n, tol } => {
            let c = RobinCoefficient::new(robin.b, robin.k, robin.mu)?;
            println!("n,value,residual");
            for k in 1..=*n {
                let e = lambda_n(c, k, *tol)?;
                println!("{},{:.12},{:.3e}", e.index, e.value, e.residual);
            }
        }
        ModelCommand::Bottom { robin, eps, tol } => {
            let c = RobinCoefficient::new(robin.b, robin.k, robin.mu)?;
            let r = solve_bottom_root(*eps, c, *tol)?;
            println!("epsilon,mu,root,leading,branch_gap,residual");
            println!(
                "{},{},{:.12},{:.12},{:.3e},{:.3e}",
                r.epsilon, r.mu, r.value, r.leading, r.branch_gap, r.residual
            );
        }
        ModelCommand::Upsilon {
            robin,
            eps_grid,
            degree,
        } => {
            let c = RobinCoefficient::new(robin.b, robin.k, robin.mu)?;
            let fit = upsilon_fit(c, eps_grid, *degree)?;
            println!("power,coefficient");
            for (j, v) in fit.coefficients.iter().enumerate() {
                println!("{},{:.9e}", j + 1, v);
            }
            println!("fit residual {:.3e}", fit.residual);
            println!(
                "closed-form candidates {:.9e} {:.9e}",
                fit.candidates.first, fit.candidates.second
            );
        }
    }
    Ok(())
}

fn cmd_geometry(g: &GeometryCommand) -> Result<bool> {
    match g {
        GeometryCommand::Validate { file, samples } => {
            let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            let geom = GeometryDocument::from_json_str(&text)?.build()?;
            let r = validate_assumptions(&geom, *samples);
            println!("indices    {}..={}", r.indices_checked.0, r.indices_checked.1);
            println!("c1         measured {:.6} declared {:.6}", r.c1_measured, r.c1_declared);
            println!("c2         {:.6}", r.c2_measured);
            println!("c3         {:.6}", r.c3_measured);
            println!("overlap    margin {:.6}", r.overlap_margin);
            println!("placement  error {:.3e}", r.placement_error);
            println!("degenerate {}", r.degenerate);
            for f in &r.failures {
                println!("FAIL {f}");
            }
            println!("{}", if r.passed() { "valid" } else { "invalid" });
            Ok(r.passed())
        }
    }
}

fn cmd_run(path: &Path) -> Result<()> {
    let cfg = RunConfig::from_path(path).with_context(|| format!("config {}", path.display()))?;
    let plan = cfg.plan()?;
    log::info!("running {} over {} epsilons", cfg.experiment.label(), plan.epsilons.len());
    let records = run_experiment(cfg.experiment, &plan)?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let csv = cfg.output_dir.join(cfg.experiment.csv_name());
    let mut buf = Vec::new();
    write_records_csv(&records, &mut buf)?;
    fs::write(&csv, buf).with_context(|| format!("writing {}", csv.display()))?;
    let stamp = chrono::Utc::now().to_rfc3339();
    let summary = summarize(cfg.experiment, &records, cfg.seed, &stamp);
    let json = cfg.output_dir.join("rates.json");
    fs::write(&json, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", json.display()))?;
    for o in &summary.observables {
        match o.rate_fit {
            Some(f) => println!(
                "{:20} slope {:+.3} r2 {:.3}{}",
                o.name,
                f.slope,
                f.r2,
                if f.warning { " (flat)" } else { "" }
            ),
            None => println!("{:20} no fit ({} records)", o.name, o.records),
        }
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Specfun(a) => cmd_specfun(a).map(|_| true),
        Command::Model(m) => cmd_model(m).map(|_| true),
        Command::Geometry(g) => cmd_geometry(g),
        Command::Run { config } => cmd_run(config).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
