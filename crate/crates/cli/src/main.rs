//! `mkv`: simulate / cost / optimize / verify / validate for controlled
//! mean-field SDE experiments, with deterministic seeds and machine-readable
//! JSON outputs.
//!
//! Exit codes: 0 on success (and on a passing check), 1 on a failing check
//! or a runtime failure, 2 on configuration errors.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::{CheckSpec, ExperimentConfig, FamilyRef, GridConfig, ModelRef, PolicyRef};
use mkv_core::controls::{constant_policy, FeedbackPolicy, PolicyFile};
use mkv_core::measures::ControlMeasure;
use mkv_core::model::{builtin_model, builtin_models, JsonModel, ModelSpec};
use mkv_core::objective::{
    estimate_cost, estimate_value, CemConfig, FamilyFile, PolicyFamily,
};
use mkv_core::simulate::{simulate_ensemble, InitialLaw, TimeGrid};
use mkv_core::verify as checks;

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "mkv",
    version,
    about = "Numerical laboratory for controlled mean-field SDEs"
)]
struct Cli {
    /// Worker threads (values must not affect numerical output).
    #[arg(long, global = true, env = "MKV_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the builtin models.
    ListModels,
    /// Simulate a particle ensemble and export paths.
    Simulate(RunArgs),
    /// Estimate the cost functional under a fixed policy.
    Cost(RunArgs),
    /// Optimize a policy family and estimate the value function.
    Optimize(OptimizeArgs),
    /// Run a named numerical check; exit 0 on pass, 1 on fail.
    Verify(VerifyArgs),
    /// Validate a config file without executing it.
    Validate { config: PathBuf },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment config; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin model name.
    #[arg(long)]
    model: Option<String>,
    /// Declarative JSON model file (alternative to --model).
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Policy JSON file.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Initial-law JSON file (default: Dirac at the origin).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Start time.
    #[arg(long)]
    s: Option<f64>,
    /// End time.
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON result path (default: print to stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV path export (simulate only).
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Optional binary path export (simulate only).
    #[arg(long)]
    bin_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OptimizeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Policy-family JSON file.
    #[arg(long)]
    family: Option<PathBuf>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    elite_frac: Option<f64>,
    #[arg(long)]
    init_spread: Option<f64>,
}

#[derive(Args, Clone)]
struct VerifyArgs {
    /// Check name (informative; the config's check block is authoritative).
    #[arg(long)]
    check: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    model_file: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    /// Bad configuration: exit 2.
    Config(String),
    /// Runtime failure: exit 1.
    Runtime(String),
    /// A check ran and failed: exit 1 (the report was already written).
    CheckFailed,
}

impl From<mkv_core::Error> for CliError {
    fn from(e: mkv_core::Error) -> Self {
        match e {
            mkv_core::Error::Config(_) | mkv_core::Error::InvalidParameter(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("config error: threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("config error: cannot build thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::ListModels => run_list_models(),
        Command::Simulate(args) => run_simulate(args),
        Command::Cost(args) => run_cost(args),
        Command::Optimize(args) => run_optimize(args),
        Command::Verify(args) => run_verify(args),
        Command::Validate { config } => run_validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::CheckFailed) => ExitCode::from(1),
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run_list_models() -> Result<(), CliError> {
    for model in builtin_models() {
        println!("{}", model.name());
    }
    Ok(())
}

/// Concrete inputs after merging config file, flags, and defaults.
struct Resolved {
    model: ModelSpec,
    policy: FeedbackPolicy,
    family: Option<PolicyFamily>,
    init: InitialLaw,
    grid: TimeGrid,
    particles: usize,
    seed: u64,
    cem: CemConfig,
    check: Option<CheckSpec>,
    out: Option<PathBuf>,
    csv_out: Option<PathBuf>,
    bin_out: Option<PathBuf>,
    echo: serde_json::Value,
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let cfg = ExperimentConfig::from_file(p).map_err(CliError::Config)?;
            let violations = cfg.validate();
            if !violations.is_empty() {
                return Err(CliError::Config(violations.join("; ")));
            }
            Ok(cfg)
        }
    }
}

fn run_args_to_config(args: &RunArgs, subcommand: &str) -> Result<ExperimentConfig, CliError> {
    let mut flags = ExperimentConfig {
        subcommand: Some(subcommand.to_string()),
        ..ExperimentConfig::default()
    };
    if let Some(name) = &args.model {
        flags.model = Some(ModelRef::Builtin(name.clone()));
    }
    if let Some(file) = &args.model_file {
        flags.model = Some(ModelRef::File { file: file.clone() });
    }
    if let Some(p) = &args.policy {
        flags.policy = Some(PolicyRef::File { file: p.clone() });
    }
    if let Some(init) = &args.init {
        flags.init = Some(config::read_json(init).map_err(CliError::Config)?);
    }
    if args.s.is_some() || args.t_end.is_some() || args.steps.is_some() {
        flags.grid = Some(GridConfig {
            s: args.s.unwrap_or(0.0),
            t_end: args.t_end.unwrap_or(1.0),
            steps: args.steps.unwrap_or(100),
        });
    }
    flags.particles = args.particles;
    flags.seed = args.seed;
    flags.out = args.out.clone();
    flags.csv_out = args.csv_out.clone();
    flags.bin_out = args.bin_out.clone();
    Ok(flags)
}

fn resolve(config: ExperimentConfig) -> Result<Resolved, CliError> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(CliError::Config(violations.join("; ")));
    }
    let model = match &config.model {
        None => return Err(CliError::Config("no model specified".into())),
        Some(ModelRef::Builtin(name)) => builtin_model(name)?,
        Some(ModelRef::File { file }) => {
            let text = std::fs::read_to_string(file)
                .map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
            JsonModel::from_json(&text)?.compile()?
        }
    };
    let grid_cfg = config.grid.unwrap_or(GridConfig {
        s: 0.0,
        t_end: model.horizon(),
        steps: 100,
    });
    let grid = grid_cfg.to_grid()?;
    let policy = match &config.policy {
        None => {
            let center = model.control_box().center();
            let alpha = ControlMeasure::dirac(&center, model.control_box())?;
            constant_policy(alpha, model.horizon())?
        }
        Some(PolicyRef::File { file }) => {
            let pf: PolicyFile = config::read_json(file).map_err(CliError::Config)?;
            pf.into_policy(model.horizon(), model.control_box())?
        }
        Some(PolicyRef::Inline(pf)) => {
            pf.clone().into_policy(model.horizon(), model.control_box())?
        }
    };
    let family = match &config.family {
        None => None,
        Some(FamilyRef::File { file }) => {
            let ff: FamilyFile = config::read_json(file).map_err(CliError::Config)?;
            Some(ff.into_family(&model)?)
        }
        Some(FamilyRef::Inline(ff)) => Some(ff.clone().into_family(&model)?),
    };
    let init = config
        .init
        .clone()
        .unwrap_or_else(|| InitialLaw::dirac(&vec![0.0; model.dim_state()]));
    let particles = config.particles.unwrap_or(1000);
    let seed = config.seed.unwrap_or(0);
    let mut cem = config.cem.unwrap_or_default();
    cem.seed = seed;

    // Echo the fully resolved configuration, including defaulted fields.
    let echo = json!({
        "subcommand": config.subcommand,
        "model": model.name(),
        "grid": {"s": grid.s, "t_end": grid.t_end, "steps": grid.steps},
        "particles": particles,
        "seed": seed,
        "init": &init,
        "policy": PolicyFile::from_policy(&policy),
        "cem": &cem,
        "check": &config.check,
        "out": &config.out,
        "csv_out": &config.csv_out,
        "bin_out": &config.bin_out,
    });
    Ok(Resolved {
        model,
        policy,
        family,
        init,
        grid,
        particles,
        seed,
        cem,
        check: config.check,
        out: config.out,
        csv_out: config.csv_out,
        bin_out: config.bin_out,
        echo,
    })
}

#[derive(Serialize)]
struct OutputEnvelope<T: Serialize> {
    tool_version: &'static str,
    resolved_config: serde_json::Value,
    seed: u64,
    result: T,
}

fn emit<T: Serialize>(resolved: &Resolved, result: T) -> Result<(), CliError> {
    let envelope = OutputEnvelope {
        tool_version: TOOL_VERSION,
        resolved_config: resolved.echo.clone(),
        seed: resolved.seed,
        result,
    };
    let text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    match &resolved.out {
        Some(path) => {
            std::fs::write(path, &text)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run_simulate(args: RunArgs) -> Result<(), CliError> {
    let file_cfg = load_config(&args.config)?;
    let resolved = resolve(file_cfg.overlay(run_args_to_config(&args, "simulate")?))?;
    let bundle = simulate_ensemble(
        &resolved.model,
        &resolved.policy,
        &resolved.grid,
        &resolved.init,
        resolved.particles,
        resolved.seed,
    )?;
    if let Some(csv) = &resolved.csv_out {
        let file = std::fs::File::create(csv)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", csv.display())))?;
        bundle.write_csv(std::io::BufWriter::new(file))?;
    }
    if let Some(bin) = &resolved.bin_out {
        let file = std::fs::File::create(bin)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", bin.display())))?;
        bundle.write_binary(std::io::BufWriter::new(file))?;
    }
    let terminal = bundle.terminal_law();
    let result = json!({
        "particles": bundle.n_particles(),
        "steps": bundle.grid().steps,
        "terminal_mean": terminal.mean(),
        "terminal_abs_moment_1": terminal.abs_moment(1.0)?,
        "terminal_abs_moment_2": terminal.abs_moment(2.0)?,
        "csv_out": &resolved.csv_out,
        "bin_out": &resolved.bin_out,
    });
    emit(&resolved, result)
}

fn run_cost(args: RunArgs) -> Result<(), CliError> {
    let file_cfg = load_config(&args.config)?;
    let resolved = resolve(file_cfg.overlay(run_args_to_config(&args, "cost")?))?;
    let estimate = estimate_cost(
        &resolved.model,
        &resolved.policy,
        &resolved.init,
        &resolved.grid,
        resolved.particles,
        resolved.seed,
    )?;
    emit(&resolved, estimate)
}

fn run_optimize(args: OptimizeArgs) -> Result<(), CliError> {
    let file_cfg = load_config(&args.run.config)?;
    let mut flags = run_args_to_config(&args.run, "optimize")?;
    if let Some(family) = &args.family {
        flags.family = Some(FamilyRef::File {
            file: family.clone(),
        });
    }
    let mut merged = file_cfg.overlay(flags);
    let mut cem = merged.cem.unwrap_or_default();
    if let Some(g) = args.generations {
        cem.generations = g;
    }
    if let Some(p) = args.population {
        cem.population = p;
    }
    if let Some(e) = args.elite_frac {
        cem.elite_frac = e;
    }
    if let Some(s) = args.init_spread {
        cem.init_spread = s;
    }
    merged.cem = Some(cem);
    let resolved = resolve(merged)?;
    let family = resolved
        .family
        .clone()
        .ok_or_else(|| CliError::Config("optimize requires a --family file".into()))?;
    let estimate = estimate_value(
        &resolved.model,
        &family,
        &resolved.init,
        &resolved.grid,
        resolved.particles,
        &resolved.cem,
    )?;
    emit(&resolved, estimate)
}

fn run_verify(args: VerifyArgs) -> Result<(), CliError> {
    let file_cfg = load_config(&args.config)?;
    let mut flags = ExperimentConfig {
        subcommand: Some("verify".into()),
        ..ExperimentConfig::default()
    };
    if let Some(name) = &args.model {
        flags.model = Some(ModelRef::Builtin(name.clone()));
    }
    if let Some(file) = &args.model_file {
        flags.model = Some(ModelRef::File { file: file.clone() });
    }
    if let Some(p) = &args.policy {
        flags.policy = Some(PolicyRef::File { file: p.clone() });
    }
    if args.s.is_some() || args.t_end.is_some() || args.steps.is_some() {
        flags.grid = Some(GridConfig {
            s: args.s.unwrap_or(0.0),
            t_end: args.t_end.unwrap_or(1.0),
            steps: args.steps.unwrap_or(100),
        });
    }
    flags.particles = args.particles;
    flags.seed = args.seed;
    flags.out = args.out.clone();
    let resolved = resolve(file_cfg.overlay(flags))?;

    let spec = resolved
        .check
        .clone()
        .ok_or_else(|| CliError::Config("verify needs a `check` block in the config".into()))?;
    if let Some(requested) = &args.check {
        if requested != spec.name() {
            return Err(CliError::Config(format!(
                "--check {requested} does not match the config's check block '{}'",
                spec.name()
            )));
        }
    }

    let report = match &spec {
        CheckSpec::Stability { mu, mu_tilde } => checks::check_stability(
            &resolved.model,
            &resolved.policy,
            mu,
            mu_tilde,
            &resolved.grid,
            resolved.particles,
            resolved.seed,
        )?,
        CheckSpec::Moment { init } => checks::check_moment(
            &resolved.model,
            &resolved.policy,
            init,
            &resolved.grid,
            resolved.particles,
            resolved.seed,
        )?,
        CheckSpec::TightnessModulus { init } => {
            let bundle = simulate_ensemble(
                &resolved.model,
                &resolved.policy,
                &resolved.grid,
                init,
                resolved.particles,
                resolved.seed,
            )?;
            checks::check_tightness_modulus(&bundle, &resolved.model)?
        }
        CheckSpec::ValueContinuity {
            base_s,
            base_init,
            perturbations,
            c_max,
        } => {
            let family = resolved
                .family
                .clone()
                .unwrap_or_else(|| PolicyFamily::Fixed(resolved.policy.clone()));
            checks::check_value_continuity(
                &resolved.model,
                &family,
                *base_s,
                base_init,
                perturbations,
                resolved.grid.steps,
                resolved.particles,
                &resolved.cem,
                *c_max,
            )?
        }
        CheckSpec::LawInvariance { mu, seed_b } => checks::check_law_invariance(
            &resolved.model,
            &resolved.policy,
            mu,
            &resolved.grid,
            resolved.particles,
            (resolved.seed, *seed_b),
        )?,
        CheckSpec::ChaosConvergence { init, schedule } => checks::check_chaos_convergence(
            &resolved.model,
            &resolved.policy,
            init,
            &resolved.grid,
            schedule,
            resolved.seed,
        )?,
        CheckSpec::FlowProperty { init, t_mid } => checks::check_flow_property(
            &resolved.model,
            &resolved.policy,
            *t_mid,
            init,
            &resolved.grid,
            resolved.particles,
            resolved.seed,
        )?,
    };

    let passed = report.passed();
    println!(
        "{}: {}",
        report.check_name,
        if passed { "pass" } else { "FAIL" }
    );
    emit(&resolved, &report)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::CheckFailed)
    }
}

fn run_validate(path: &std::path::Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::from_file(path).map_err(CliError::Config)?;
    let violations = cfg.validate();
    if violations.is_empty() {
        println!("OK");
        Ok(())
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        Err(CliError::Config(format!(
            "{} violation(s) in {}",
            violations.len(),
            path.display()
        )))
    }
}
