use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nlch::harness::{self, ConvergenceReport, CosineField};
use nlch::stepper::{self, Trajectory};
use nlch::{Error, RunConfig, TauRule};

#[derive(Parser)]
#[command(
    name = "nlch",
    version,
    about = "Nonlocal viscous Cahn-Hilliard simulator and convergence harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauRuleArg {
    Fixed,
    Eps,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file.
    config: PathBuf,
    /// Output directory; defaults to `<output.dir>/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write diagnostics and snapshots.
    Run(Common),
    /// Nonlocal energy of a cosine field against its Dirichlet limit.
    GammaCheck(Common),
    /// Nonlocal Poincare ratio over random smooth fields.
    PoincareCheck(Common),
    /// Successive differences as the regularization parameter goes to zero.
    SweepLambda(Common),
    /// Nonlocal runs against the local reference as epsilon goes to zero.
    SweepEps {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        tau_rule: Option<TauRuleArg>,
    },
    /// Continuous-dependence ratios for shrinking perturbations.
    Stability(Common),
    /// Normalization and tail mass of both mollifier families.
    KernelValidate(Common),
}

fn out_dir(cfg: &RunConfig, common: &Common, name: &str) -> Result<PathBuf, Error> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.output.dir.join(name));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn finish_report(cfg: &RunConfig, dir: &Path, command: &str, report: &ConvergenceReport) -> Result<bool, Error> {
    report.write_csv(&dir.join("report.csv"))?;
    cfg.write_manifest(dir, command, &[("verdict".into(), report.verdict().into())])?;
    println!("{report}");
    Ok(report.pass)
}

fn write_trajectory(cfg: &RunConfig, dir: &Path, traj: &Trajectory) -> Result<(), Error> {
    traj.write_diagnostics_csv(&dir.join("diagnostics.csv"))?;
    if cfg.output.write_snapshots {
        for (step, u) in traj.steps.iter().zip(&traj.u) {
            u.write_csv(&dir.join(format!("u_{step:06}.csv")))?;
        }
    }
    Ok(())
}

fn run_command(common: &Common) -> Result<bool, Error> {
    let cfg = RunConfig::from_file(&common.config)?;
    let dir = out_dir(&cfg, common, "run")?;
    match stepper::run(&cfg) {
        Ok(traj) => {
            write_trajectory(&cfg, &dir, &traj)?;
            let last = traj.diagnostics.last().expect("initial record");
            cfg.write_manifest(
                &dir,
                "run",
                &[
                    ("status".into(), "completed".into()),
                    ("steps".into(), last.step.to_string()),
                ],
            )?;
            println!(
                "completed {} steps: t = {}, mass = {:.12e}, E_total = {:.12e}",
                last.step, last.t, last.mass, last.e_total
            );
            Ok(true)
        }
        Err(aborted) => {
            if let Some(partial) = &aborted.partial {
                write_trajectory(&cfg, &dir, partial)?;
            }
            cfg.write_manifest(
                &dir,
                "run",
                &[("status".into(), format!("aborted: {}", aborted.source))],
            )?;
            Err(aborted.source)
        }
    }
}

fn execute(command: Command) -> Result<bool, Error> {
    match command {
        Command::Run(common) => run_command(&common),
        Command::GammaCheck(common) => {
            let cfg = RunConfig::from_file(&common.config)?;
            let dir = out_dir(&cfg, &common, "gamma-check")?;
            let field = CosineField {
                k: cfg.sweep.test_mode,
                dim: cfg.dim,
            };
            let ratio = cfg
                .sweep
                .grid_ratio
                .unwrap_or_else(|| harness::default_grid_ratio(cfg.dim));
            let report = harness::gamma_check(
                field,
                cfg.kernel.family,
                cfg.kernel.quadrature,
                &cfg.sweep.epsilons,
                ratio,
            )?;
            finish_report(&cfg, &dir, "gamma-check", &report)
        }
        Command::PoincareCheck(common) => {
            let cfg = RunConfig::from_file(&common.config)?;
            let dir = out_dir(&cfg, &common, "poincare-check")?;
            let report = harness::poincare_check(
                cfg.grid()?,
                cfg.kernel.family,
                cfg.kernel.quadrature,
                &cfg.sweep.epsilons,
                cfg.sweep.samples,
                cfg.sweep.seed,
            )?;
            finish_report(&cfg, &dir, "poincare-check", &report)
        }
        Command::SweepLambda(common) => {
            let cfg = RunConfig::from_file(&common.config)?;
            let dir = out_dir(&cfg, &common, "sweep-lambda")?;
            let report = harness::lambda_sweep(&cfg, &cfg.sweep.lambdas)?;
            finish_report(&cfg, &dir, "sweep-lambda", &report)
        }
        Command::SweepEps { common, tau_rule } => {
            let mut cfg = RunConfig::from_file(&common.config)?;
            if let Some(rule) = tau_rule {
                cfg.sweep.tau_rule = match rule {
                    TauRuleArg::Fixed => TauRule::Fixed,
                    TauRuleArg::Eps => TauRule::Eps,
                };
            }
            let dir = out_dir(&cfg, &common, "sweep-eps")?;
            let report = harness::eps_sweep(&cfg, &cfg.sweep.epsilons, cfg.sweep.tau_rule)?;
            finish_report(&cfg, &dir, "sweep-eps", &report)
        }
        Command::Stability(common) => {
            let cfg = RunConfig::from_file(&common.config)?;
            let dir = out_dir(&cfg, &common, "stability")?;
            let report = harness::stability_check(&cfg, &cfg.sweep.perturbations, None)?;
            finish_report(&cfg, &dir, "stability", &report)
        }
        Command::KernelValidate(common) => {
            let cfg = RunConfig::from_file(&common.config)?;
            let dir = out_dir(&cfg, &common, "kernel-validate")?;
            let v = harness::kernel_validate(cfg.dim, &cfg.sweep.epsilons, cfg.sweep.delta)?;
            let path = dir.join("report.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            v.write_csv(file)?;
            v.write_csv(std::io::stdout())?;
            let verdict = if v.pass() { "PASS" } else { "FAIL" };
            cfg.write_manifest(&dir, "kernel-validate", &[("verdict".into(), verdict.into())])?;
            Ok(v.pass())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
