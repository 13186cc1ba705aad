use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crosspol::fusion::WeightingScheme;
use crosspol_cli::config::{
    exit_code, CliError, CliResult, ExperimentConfig, ExperimentKind,
};
use crosspol_cli::experiments::{bearings, gamma, orbit};
use crosspol_cli::report::{log_log_slope, write_json};

/// Thread-count override for the worker pool.
const THREADS_ENV: &str = "CROSSPOL_THREADS";

#[derive(Parser)]
#[command(
    name = "crosspol",
    version,
    about = "Cross-pollination data-fusion experiments",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo convergence study on the conjugate Gamma problem.
    GammaConvergence(RunArgs),
    /// Single Gamma fusion run reported against the analytic posterior.
    GammaFuse(RunArgs),
    /// Two-sensor orbit determination with MCMC inputs and fusion.
    OrbitFusion(RunArgs),
    /// Sequential two-sensor bearings-only tracking.
    BearingsSequential(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file (strict schema; unknown keys rejected).
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the CSV (summaries land next to it as .json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Particle-count override.
    #[arg(long)]
    particles: Option<usize>,
    /// Trial-count override (gamma-convergence).
    #[arg(long)]
    trials: Option<usize>,
    /// Weighting scheme override: apart | together | dm.
    #[arg(long)]
    scheme: Option<String>,
    /// Run at full published sizes instead of desk scale.
    #[arg(long)]
    paper_scale: bool,
    /// Populate wall-clock columns (off by default so outputs are
    /// bit-reproducible).
    #[arg(long)]
    timing: bool,
}

struct Resolved {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    paper_scale: bool,
    timing: bool,
    scheme: Option<WeightingScheme>,
    particles: Option<usize>,
    trials: Option<usize>,
}

fn resolve(args: &RunArgs, kind: ExperimentKind, default_out: &str) -> CliResult<Resolved> {
    let config = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if let Some(declared) = cfg.experiment {
                if declared != kind {
                    return Err(CliError::Config(format!(
                        "config declares experiment '{}' but the '{}' subcommand was invoked",
                        declared.name(),
                        kind.name()
                    )));
                }
            }
            cfg
        }
        None => ExperimentConfig::default(),
    };
    let scheme = match &args.scheme {
        Some(s) => Some(s.parse::<WeightingScheme>().map_err(CliError::Config)?),
        None => config.scheme()?,
    };
    if args.particles == Some(0) {
        return Err(CliError::Config("--particles must be >= 1".into()));
    }
    if args.trials == Some(0) {
        return Err(CliError::Config("--trials must be >= 1".into()));
    }
    Ok(Resolved {
        seed: args.seed.or(config.seed).unwrap_or(0),
        out: args
            .out
            .clone()
            .or_else(|| config.output_path.clone())
            .unwrap_or_else(|| PathBuf::from(default_out)),
        paper_scale: args.paper_scale || config.paper_scale.unwrap_or(false),
        timing: args.timing || config.timing.unwrap_or(false),
        particles: args.particles.or(config.n_particles),
        trials: args.trials.or(config.n_trials),
        scheme,
        config,
    })
}

fn summary_path(csv: &std::path::Path) -> PathBuf {
    csv.with_extension("json")
}

fn run_gamma_convergence(args: &RunArgs) -> CliResult<()> {
    let r = resolve(args, ExperimentKind::GammaConvergence, "gamma_convergence.csv")?;
    let mut settings = if r.paper_scale {
        gamma::ConvergenceSettings::paper_scale(r.seed)
    } else {
        gamma::ConvergenceSettings::desk_scale(r.seed)
    };
    if let Some(t) = r.trials {
        settings.n_trials = t;
    }
    if let Some(n) = r.particles {
        settings.particle_grid.retain(|&g| g <= n);
        if settings.particle_grid.is_empty() {
            return Err(CliError::Config(format!(
                "--particles {n} leaves no grid points (smallest is 100)"
            )));
        }
    }
    if let Some(block) = &r.config.gamma {
        settings.params = block.to_params()?;
    }
    settings.timing = r.timing;

    let summary = gamma::run_convergence(&settings)?;
    gamma::write_convergence_csv(&r.out, &summary)?;
    println!("wrote {}", r.out.display());
    for scheme in ["apart", "together"] {
        for moment in gamma::MOMENT_NAMES {
            let points: Vec<(f64, f64)> = settings
                .particle_grid
                .iter()
                .map(|&n| (n as f64, summary.mean_abs_error(scheme, n, moment)))
                .collect();
            let slope = log_log_slope(&points);
            println!("{scheme:9} {moment:9} log-log slope {slope:+.3}");
        }
    }
    Ok(())
}

fn run_gamma_fuse(args: &RunArgs) -> CliResult<()> {
    let r = resolve(args, ExperimentKind::GammaFuse, "gamma_fuse.json")?;
    let params = r
        .config
        .gamma
        .clone()
        .unwrap_or_default()
        .to_params()?;
    let settings = gamma::FuseSettings {
        n_particles: r.particles.unwrap_or(1_000_000),
        seed: r.seed,
        schemes: match r.scheme {
            Some(s) => vec![s],
            None => vec![
                WeightingScheme::NormingApart,
                WeightingScheme::NormingTogether,
                WeightingScheme::DeterministicMixture,
            ],
        },
        params,
    };
    let summary = gamma::run_fuse(&settings)?;
    write_json(&r.out, &summary)?;
    println!("wrote {}", r.out.display());
    for s in &summary.schemes {
        println!(
            "{:9} mean {:+.6} (err {:.2e})  variance {:+.6} (err {:.2e})",
            s.scheme, s.mean, s.abs_error_mean, s.variance, s.abs_error_variance
        );
    }
    Ok(())
}

fn run_orbit_fusion(args: &RunArgs) -> CliResult<()> {
    let r = resolve(args, ExperimentKind::OrbitFusion, "orbit_fusion.csv")?;
    let mut settings = if r.paper_scale {
        orbit::OrbitSettings::paper_scale(r.seed)
    } else {
        orbit::OrbitSettings::desk_scale(r.seed)
    };
    if let Some(n) = r.particles {
        settings.n_particles = n;
    }
    if let Some(s) = r.scheme {
        settings.scheme = s;
    }
    if let Some(block) = &r.config.orbit {
        settings.block = block.clone();
    }

    let (summary, plots) = orbit::run_orbit_fusion(&settings)?;
    orbit::write_traces_csv(&r.out, &plots)?;
    write_json(&summary_path(&r.out), &summary)?;
    println!("wrote {} and {}", r.out.display(), summary_path(&r.out).display());
    println!(
        "rmse position km: leo {:.3}  ground {:.3}  fused {:.3}",
        summary.rmse_leo.position_km,
        summary.rmse_ground.position_km,
        summary.rmse_fused.position_km
    );
    println!(
        "rmse velocity km/s: leo {:.5}  ground {:.5}  fused {:.5}",
        summary.rmse_leo.velocity_km_s,
        summary.rmse_ground.velocity_km_s,
        summary.rmse_fused.velocity_km_s
    );
    println!(
        "mcmc acceptance: {:?}  propagation failures: {}",
        summary
            .mcmc_acceptance
            .iter()
            .map(|a| (a * 100.0).round() / 100.0)
            .collect::<Vec<_>>(),
        summary.propagation_failures
    );
    Ok(())
}

fn run_bearings_sequential(args: &RunArgs) -> CliResult<()> {
    let r = resolve(
        args,
        ExperimentKind::BearingsSequential,
        "bearings_sequential.csv",
    )?;
    let mut settings = bearings::BearingsSettings::desk_scale(r.seed);
    if let Some(n) = r.particles {
        settings.n_particles = n;
    }
    if let Some(s) = r.scheme {
        settings.scheme = s;
    }
    if let Some(block) = &r.config.bearings {
        settings.block = block.clone();
    }

    let (summary, dump) = bearings::run_bearings_sequential(&settings)?;
    bearings::write_snapshots_csv(&r.out, &dump)?;
    write_json(&summary_path(&r.out), &summary)?;
    println!("wrote {} and {}", r.out.display(), summary_path(&r.out).display());
    for e in &summary.epochs {
        println!(
            "epoch {:2} sensor {}  initial rmse {:.4}  fused rmse {:.4}  ess {:8.1}  triggers {}",
            e.epoch, e.sensor_index, e.rmse_initial_pos, e.rmse_fused_pos, e.pooled_ess,
            e.resample_triggers
        );
    }
    let worst_epoch = summary
        .epochs
        .iter()
        .map(|e| e.fused_mean_bearing_residual)
        .fold(0.0f64, f64::max);
    let worst_traj = summary
        .mean_trajectory_bearing_residuals
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    println!(
        "final position rmse {:.4}; worst per-epoch fused-mean bearing residual {:.5} rad ({:.1} sigma_r); worst final-trajectory residual {:.5} rad ({:.1} sigma_r)",
        summary.final_position_rmse,
        worst_epoch,
        worst_epoch / summary.sigma_r,
        worst_traj,
        worst_traj / summary.sigma_r
    );
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw.parse().map_err(|_| {
            CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'"))
        })?;
        if n == 0 {
            return Err(CliError::Config(format!("{THREADS_ENV} must be >= 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::GammaConvergence(args) => run_gamma_convergence(args),
        Command::GammaFuse(args) => run_gamma_fuse(args),
        Command::OrbitFusion(args) => run_orbit_fusion(args),
        Command::BearingsSequential(args) => run_bearings_sequential(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crosspol: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
