use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::Serialize;

use scoreflow::bounds::{eval_bound, BoundInputs, BoundReport};
use scoreflow::concavity::ConcavityProfile;
use scoreflow::hyperparams::plan;
use scoreflow::metrics::{estimate_w2, moments, w2_gaussian, W2Estimate, W2Method};
use scoreflow::sampler;
use scoreflow::schedule::{Family, Schedule};
use scoreflow::target::TargetConstants;

use crate::config::ExperimentConfig;
use crate::output::{csv_string, float, read_samples, samples_csv, to_json, write_artifact};
use crate::{AnalyzeArgs, Cli, CliError, Command, FamilyArgs, FamilyName, MethodName, PlanArgs, SampleArgs, W2Args};

/// Seed offset separating fresh target draws from the sampler's own stream.
const FRESH_SEED_OFFSET: u64 = 0x5eed_0f_7a79e7;

pub fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let out_dir = cli.out_dir;
    match cli.command {
        Command::Plan(args) => cmd_plan(&args, out_dir.as_deref()),
        Command::Analyze(args) => cmd_analyze(&args, out_dir),
        Command::Bound(args) => cmd_bound(&args.config, out_dir),
        Command::Sample(args) => cmd_sample(&args, out_dir),
        Command::W2(args) => cmd_w2(&args, out_dir.as_deref()),
        Command::Validate(args) => cmd_validate(&args.config, out_dir),
    }
}

/// Prints `contents` and, when an output directory is known, stores it there.
fn emit(contents: &str, name: &str, dir: Option<&Path>) -> Result<(), CliError> {
    print!("{contents}");
    if let Some(dir) = dir {
        write_artifact(dir, name, contents)?;
    }
    Ok(())
}

/// Output directory from the command line or environment, else the config.
fn config_dir(cli_dir: Option<PathBuf>, cfg: &ExperimentConfig) -> Option<PathBuf> {
    cli_dir.or_else(|| cfg.output_dir.clone())
}

/// Stores the parsed config next to the outputs so the run can be repeated.
fn echo_config(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<(), CliError> {
    if let Some(dir) = dir {
        write_artifact(dir, "config.toml", &cfg.to_toml()?)?;
    }
    Ok(())
}

fn family(args: &FamilyArgs) -> Family {
    let a = args.a.unwrap_or(1.0);
    let b = args.b.unwrap_or(1.0);
    match args.family {
        FamilyName::Ou => Family::Ou,
        FamilyName::VeExp => Family::VeExp { a, b },
        FamilyName::VePoly => Family::VePoly { a, b, c: args.c.unwrap_or(1.0) },
        FamilyName::VpConst => Family::VpConst { b },
        FamilyName::VpLinear => Family::VpLinear { a, b },
        FamilyName::VpPoly => Family::VpPoly { a, b, rho: args.rho.unwrap_or(1.0) },
    }
}

fn cmd_plan(args: &PlanArgs, dir: Option<&Path>) -> Result<ExitCode, CliError> {
    let fam = family(&args.family);
    Schedule::new(fam)?;
    let p = plan(fam, args.epsilon, args.d, args.x0_norm, args.constant_c)?;
    emit(&to_json(&p)?, "plan.json", dir)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(args: &AnalyzeArgs, cli_dir: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let (profile, t_end, dir) = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let c = &cfg.constants;
            let l0 = c.l0.unwrap_or(args.l0);
            let p = ConcavityProfile::new(cfg.schedule()?, c.alpha0, c.m0, l0)?;
            let dir = config_dir(cli_dir, &cfg);
            echo_config(&cfg, dir.as_deref())?;
            (p, cfg.sampler.t_end, dir)
        }
        None => {
            let fam = family(&args.family);
            let alpha0 = args.alpha0.expect("required by clap");
            let m0 = args.m0.expect("required by clap");
            (ConcavityProfile::new(Schedule::new(fam)?, alpha0, m0, args.l0)?, args.t_end, cli_dir)
        }
    };
    if args.points < 2 {
        return Err(CliError::Config("need at least 2 points".into()));
    }
    let tau = profile.regime_shift()?;
    let mut times: Vec<f64> = (0..args.points)
        .map(|i| t_end * i as f64 / (args.points - 1) as f64)
        .collect();
    if tau > 0.0 && tau < t_end && !times.contains(&tau) {
        times.push(tau);
        times.sort_by(f64::total_cmp);
    }
    let header: Vec<String> = ["t", "alpha", "m", "k", "l", "k_lower_bound", "tau_marker"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::with_capacity(times.len());
    for &t in &times {
        rows.push(vec![
            float(t),
            float(profile.alpha_t(t)?),
            float(profile.m_t(t)?),
            float(profile.k_t(t)?),
            float(profile.lipschitz_t(t)?),
            float(profile.k_lower_bound(t)?),
            u8::from(t == tau).to_string(),
        ]);
    }
    emit(&csv_string(&header, rows)?, "analyze.csv", dir.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    family: &'static str,
    constants: &'a TargetConstants,
    /// `10 (||X0|| + sqrt(d))`; totals above it carry no information.
    vacuous_threshold: f64,
    vacuous: bool,
    report: &'a BoundReport,
}

fn vacuous_threshold(c: &TargetConstants) -> f64 {
    10.0 * (c.x0_norm + (c.dim as f64).sqrt())
}

fn bound_for(cfg: &ExperimentConfig) -> Result<(TargetConstants, BoundReport), CliError> {
    let constants = cfg.resolve_constants()?;
    let inputs = BoundInputs::new(cfg.schedule()?, constants.clone(), cfg.sampler.t_end, cfg.sampler.k_steps)?;
    Ok((constants, eval_bound(&inputs)?))
}

fn cmd_bound(path: &Path, cli_dir: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    let dir = config_dir(cli_dir, &cfg);
    let (constants, report) = bound_for(&cfg)?;
    let threshold = vacuous_threshold(&constants);
    let out = BoundOutput {
        family: cfg.schedule.name(),
        constants: &constants,
        vacuous_threshold: threshold,
        vacuous: !(report.total <= threshold),
        report: &report,
    };
    echo_config(&cfg, dir.as_deref())?;
    emit(&to_json(&out)?, "bound.json", dir.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(args: &SampleArgs, cli_dir: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(n) = args.n {
        cfg.sampler.n_samples = n;
    }
    if let Some(k) = args.k_steps {
        cfg.sampler.k_steps = k;
    }
    let sc = cfg.sampler_config()?;
    let dir = config_dir(cli_dir, &cfg);
    let x = sampler::run(&sc, cfg.sampler.n_samples)?;
    echo_config(&cfg, dir.as_deref())?;
    emit(&samples_csv(&x)?, "samples.csv", dir.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_w2(args: &W2Args, dir: Option<&Path>) -> Result<ExitCode, CliError> {
    let a = read_samples(&args.a)?;
    let b = read_samples(&args.b)?;
    let method = match args.method {
        MethodName::Auto => W2Method::auto(a.ncols()),
        MethodName::Exact1d => W2Method::Exact1d,
        MethodName::GaussianClosedForm => W2Method::GaussianClosedForm,
        MethodName::Coordinatewise => W2Method::Coordinatewise,
        MethodName::Sliced => W2Method::Sliced { n_projections: args.n_proj },
        MethodName::LpOracle => W2Method::LpOracle,
    };
    let est = estimate_w2(a.view(), b.view(), method, args.seed)?;
    emit(&to_json(&est)?, "w2.json", dir)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    w2_empirical: f64,
    w2: W2Estimate,
    bound_total: f64,
    /// `bound_total - w2_empirical`.
    margin: f64,
    /// `w2_empirical <= bound_total + 3 stderr` (stderr is zero unless sliced).
    pass: bool,
    vacuous: bool,
    constants: &'a TargetConstants,
    report: &'a BoundReport,
}

fn cmd_validate(path: &Path, cli_dir: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    let dir = config_dir(cli_dir, &cfg);
    let sc = cfg.sampler_config()?;
    let (constants, report) = bound_for(&cfg)?;
    let n = cfg.sampler.n_samples;
    let out = sampler::run(&sc, n)?;
    let target = &cfg.target;
    let w2 = match cfg.metric() {
        // A single Gaussian is known exactly; compare the output's moments
        // with it directly rather than with a second sample.
        W2Method::GaussianClosedForm if target.n_components() == 1 => {
            let (mu, var) = moments(out.view());
            W2Estimate {
                value: w2_gaussian(&mu, &var, target.mean(0), target.variance(0))?,
                method: W2Method::GaussianClosedForm,
                n_samples: [n, 0],
                stderr: None,
            }
        }
        method => {
            let fresh = target.sample(n, cfg.seed.wrapping_add(FRESH_SEED_OFFSET));
            estimate_w2(out.view(), fresh.view(), method, cfg.seed)?
        }
    };
    let slack = 3.0 * w2.stderr.unwrap_or(0.0);
    let pass = w2.value <= report.total + slack;
    let result = ValidateOutput {
        w2_empirical: w2.value,
        w2,
        bound_total: report.total,
        margin: report.total - w2.value,
        pass,
        vacuous: !(report.total <= vacuous_threshold(&constants)),
        constants: &constants,
        report: &report,
    };
    echo_config(&cfg, dir.as_deref())?;
    emit(&to_json(&result)?, "validate.json", dir.as_deref())?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
