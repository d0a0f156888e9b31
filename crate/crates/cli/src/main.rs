mod io;
mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use pmphi::estimator::{fit, FitConfig, GScore, Init};
use pmphi::inference::{
    approximate_power, ell_star, power_from_parts, required_sample_size, sample_size_from_parts,
    wald_test, LinearHypothesis,
};
use pmphi::robustness::{influence, ContaminationPoint};
use pmphi::samplers::{
    generate_dataset, ClusterSizes, ContaminationSpec, Design, Family, OverdispersionSpec,
};
use pmphi::sim::{emit_report, run_experiment, ExperimentPlan};
use pmphi::survey::{read_dataset, save_dataset, CsvSchema};
use pmphi::{CressieReadLambda, Execution};
use serde::Serialize;
use serde_json::json;

use crate::io::{parse_beta, parse_fit, parse_matrix, parse_vector, read_input, FitOutput};
use crate::manifest::RunManifest;

const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug)]
pub enum CliError {
    /// Bad input or usage; exit code 1.
    Usage(String),
    Core(pmphi::Error),
    /// Numerical failure after a partial result was written; exit code 2.
    Numerical(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<pmphi::Error> for CliError {
    fn from(e: pmphi::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pmphi",
    version,
    about = "Pseudo minimum phi-divergence estimation and Wald-type tests for survey multinomial logistic regression"
)]
struct Cli {
    /// RNG seed for stochastic subcommands (echoed in the manifest).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress and diagnostics on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a PMφE to a survey CSV.
    Fit(FitArgs),
    /// Wald-type test of Mᵀβ = m from a fit output.
    Test(TestArgs),
    /// Influence function of the PMφE for one contaminated cluster.
    Influence(InfluenceArgs),
    /// Approximate power of the Wald-type test.
    Power(PowerArgs),
    /// Sample size reaching a target power.
    Samplesize(SampleSizeArgs),
    /// Draw a synthetic stratified cluster dataset.
    Generate(GenerateArgs),
    /// Run a Monte Carlo experiment plan.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum InitArg {
    Zeros,
    Pmle,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum GScoreArg {
    Kl,
    Lambda,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "pmle")]
    init: InitArg,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Score used for Ĝ.
    #[arg(long, value_enum, default_value = "kl")]
    g_score: GScoreArg,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct HypothesisArgs {
    /// Headerless CSV with the p×r matrix M.
    #[arg(long = "M")]
    m_matrix: Option<PathBuf>,
    /// Headerless CSV with the r-vector m.
    #[arg(long = "m")]
    m_vector: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TestArgs {
    #[arg(long)]
    fit: PathBuf,
    #[command(flatten)]
    hyp: HypothesisArgs,
    #[arg(long, default_values_t = [0.05])]
    alpha: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct InfluenceArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON with coefficient rows, or a fit output.
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, allow_hyphen_values = true)]
    stratum: i64,
    #[arg(long, allow_hyphen_values = true)]
    cluster: i64,
    /// 1-based outcome category receiving the point mass.
    #[arg(long)]
    category: usize,
    #[command(flatten)]
    hyp: HypothesisArgs,
    /// Headerless CSV with V for the second-order IF; taken from --beta when it is a fit output.
    #[arg(long = "V")]
    v: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PlanningArgs {
    /// Coefficient rows of the assumed true β⁰ (JSON).
    #[arg(long)]
    beta0: Option<PathBuf>,
    #[command(flatten)]
    hyp: HypothesisArgs,
    /// Fit output supplying V̂.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Headerless CSV with V.
    #[arg(long = "V")]
    v: Option<PathBuf>,
    /// Scalar mode: ℓ*(β⁰) given directly.
    #[arg(long)]
    ell: Option<f64>,
    /// Scalar mode: σ_W(β⁰); defaults to 2√ℓ*.
    #[arg(long)]
    sigma_w: Option<f64>,
    /// Scalar mode: number of restrictions r.
    #[arg(long, default_value_t = 1)]
    df: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PowerArgs {
    #[command(flatten)]
    common: PlanningArgs,
    #[arg(long)]
    n: usize,
}

#[derive(Args, Serialize)]
struct SampleSizeArgs {
    #[command(flatten)]
    common: PlanningArgs,
    /// Target power π⁰.
    #[arg(long)]
    power: f64,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long = "H")]
    strata: usize,
    #[arg(long)]
    nh: usize,
    #[arg(long)]
    m: u64,
    /// JSON with coefficient rows.
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, default_value = "m_inflated")]
    family: String,
    #[arg(long, default_value_t = 0.0)]
    rho2: f64,
    #[arg(long, default_value_t = 0.0)]
    contaminate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

struct Context {
    seed: Option<u64>,
    quiet: bool,
}

impl Context {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<(), CliError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))? + "\n";
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::usage(e.to_string())),
    }
}

fn lambda_arg(v: f64) -> Result<CressieReadLambda, CliError> {
    Ok(CressieReadLambda::new(v)?)
}

fn load_data(path: &Path, manifest: &mut RunManifest) -> Result<pmphi::SurveyDataset, CliError> {
    let bytes = read_input(path, manifest)?;
    Ok(read_dataset(bytes.as_slice(), &CsvSchema::default())?)
}

fn load_hypothesis(
    args: &HypothesisArgs,
    manifest: &mut RunManifest,
) -> Result<Option<LinearHypothesis>, CliError> {
    match (&args.m_matrix, &args.m_vector) {
        (None, None) => Ok(None),
        (Some(mp), Some(vp)) => {
            let m = parse_matrix(&read_input(mp, manifest)?, "--M")?;
            let v = parse_vector(&read_input(vp, manifest)?, "--m")?;
            Ok(Some(LinearHypothesis::new(m, v)?))
        }
        _ => Err(CliError::usage("--M and --m must be given together")),
    }
}

fn cmd_fit(ctx: &Context, args: &FitArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("fit", None, args);
    let data = load_data(&args.data, &mut manifest)?;
    let mut config = FitConfig::new(lambda_arg(args.lambda)?).with_tolerance(args.tol);
    config.max_iterations = args.max_iter;
    config.init = match args.init {
        InitArg::Zeros => Init::Zeros,
        InitArg::Pmle => Init::PmleFirst,
    };
    config.g_score = match args.g_score {
        GScoreArg::Kl => GScore::Kl,
        GScoreArg::Lambda => GScore::Lambda,
    };
    let result = fit(&data, &config)?;
    let output = FitOutput::from(&result);
    let manifest = manifest.finish();
    write_json(
        args.out.as_deref(),
        &json!({ "manifest": manifest, "fit": output }),
    )?;
    for w in &result.warnings {
        ctx.note(format!("warning: {w:?}"));
    }
    if !result.converged {
        return Err(CliError::Numerical(format!(
            "solver did not converge after {} iterations (score norm {:.3e}); partial result written",
            result.iterations, result.score_norm
        )));
    }
    ctx.note(format!("converged in {} iterations", result.iterations));
    Ok(())
}

fn cmd_test(args: &TestArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("test", None, args);
    let fit_out = parse_fit(&read_input(&args.fit, &mut manifest)?, &args.fit)?;
    let hyp = load_hypothesis(&args.hyp, &mut manifest)?
        .ok_or_else(|| CliError::usage("test requires --M and --m"))?;
    if !fit_out.converged {
        return Err(CliError::Core(pmphi::Error::NotConverged));
    }
    let fit_result = pmphi::FitResult {
        lambda: lambda_arg(fit_out.lambda)?,
        beta_hat: fit_out.beta()?,
        score_norm: fit_out.score_norm,
        objective: fit_out.objective,
        j_hat: io::matrix_from_rows(&fit_out.j_hat, "j_hat")?,
        g_hat: io::matrix_from_rows(&fit_out.g_hat, "g_hat")?,
        v_hat: fit_out.v_matrix()?,
        n_clusters: fit_out.n_clusters,
        converged: fit_out.converged,
        iterations: fit_out.iterations,
        objective_history: fit_out.objective_history.clone(),
        warnings: fit_out.warnings.clone(),
    };
    let report = wald_test(&fit_result, &hyp, &args.alpha)?;
    write_json(
        args.out.as_deref(),
        &json!({ "manifest": manifest.finish(), "wald": report }),
    )
}

fn cmd_influence(args: &InfluenceArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("influence", None, args);
    let data = load_data(&args.data, &mut manifest)?;
    let (beta, fit_v) = parse_beta(&read_input(&args.beta, &mut manifest)?, &args.beta)?;
    if args.category == 0 {
        return Err(CliError::usage("--category is 1-based"));
    }
    let point = ContaminationPoint::new(args.stratum, args.cluster, args.category - 1);
    let mut report = influence(&data, &beta, lambda_arg(args.lambda)?, &point)?;
    if let Some(hyp) = load_hypothesis(&args.hyp, &mut manifest)? {
        let v = match &args.v {
            Some(p) => parse_matrix(&read_input(p, &mut manifest)?, "--V")?,
            None => fit_v.ok_or_else(|| {
                CliError::usage("the second-order IF needs --V or a fit output in --beta")
            })?,
        };
        report = report.with_wald(&hyp, &v)?;
    }
    let value = json!({
        "manifest": manifest.finish(),
        "influence": {
            "lambda": report.lambda.value(),
            "stratum": args.stratum,
            "cluster": args.cluster,
            "category": args.category,
            "if_vector": report.if_vector,
            "if_norm": report.norm(),
            "u_star": report.u_star,
            "psi": io::rows_of(&report.psi),
            "if2_wald": report.if2_wald,
        }
    });
    write_json(args.out.as_deref(), &value)
}

/// Resolved ingredients for power and sample-size planning.
struct Planning {
    ell: f64,
    sigma_w: f64,
    df: usize,
    model: Option<(Vec<f64>, LinearHypothesis, DMatrix<f64>)>,
}

fn resolve_planning(args: &PlanningArgs, manifest: &mut RunManifest) -> Result<Planning, CliError> {
    if let Some(ell) = args.ell {
        if ell.is_nan() || ell < 0.0 {
            return Err(CliError::usage("--ell must be nonnegative"));
        }
        return Ok(Planning {
            ell,
            sigma_w: args.sigma_w.unwrap_or(2.0 * ell.sqrt()),
            df: args.df,
            model: None,
        });
    }
    let beta_path = args.beta0.as_ref().ok_or_else(|| {
        CliError::usage("give either --ell or --beta0 with --M, --m and a V source")
    })?;
    let (beta0, _) = parse_beta(&read_input(beta_path, manifest)?, beta_path)?;
    let hyp = load_hypothesis(&args.hyp, manifest)?
        .ok_or_else(|| CliError::usage("--M and --m are required"))?;
    let v = match (&args.v, &args.fit) {
        (Some(p), None) => parse_matrix(&read_input(p, manifest)?, "--V")?,
        (None, Some(p)) => parse_fit(&read_input(p, manifest)?, p)?.v_matrix()?,
        _ => return Err(CliError::usage("give exactly one of --V or --fit")),
    };
    let ell = ell_star(beta0.flat(), &hyp, &v)?;
    Ok(Planning {
        ell,
        sigma_w: 2.0 * ell.sqrt(),
        df: hyp.df(),
        model: Some((beta0.into_flat(), hyp, v)),
    })
}

fn cmd_power(args: &PowerArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("power", None, args);
    let plan = resolve_planning(&args.common, &mut manifest)?;
    let power = match &plan.model {
        Some((b, hyp, v)) => approximate_power(b, hyp, v, args.n, args.common.alpha)?,
        None => power_from_parts(
            plan.ell,
            plan.sigma_w,
            args.n as f64,
            args.common.alpha,
            plan.df,
        )?,
    };
    let value = json!({
        "manifest": manifest.finish(),
        "power": { "n": args.n, "alpha": args.common.alpha, "df": plan.df, "ell_star": plan.ell, "sigma_w": plan.sigma_w, "power": power }
    });
    write_json(args.common.out.as_deref(), &value)
}

fn cmd_samplesize(args: &SampleSizeArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("samplesize", None, args);
    let plan = resolve_planning(&args.common, &mut manifest)?;
    let n = match &plan.model {
        Some((b, hyp, v)) => required_sample_size(b, hyp, v, args.common.alpha, args.power)?,
        None => sample_size_from_parts(
            plan.ell,
            plan.sigma_w * plan.sigma_w,
            args.common.alpha,
            plan.df,
            args.power,
        )?,
    };
    let achieved = power_from_parts(plan.ell, plan.sigma_w, n as f64, args.common.alpha, plan.df)?;
    let value = json!({
        "manifest": manifest.finish(),
        "sample_size": { "n": n, "target_power": args.power, "achieved_power": achieved, "alpha": args.common.alpha, "df": plan.df, "ell_star": plan.ell, "sigma_w": plan.sigma_w }
    });
    write_json(args.common.out.as_deref(), &value)
}

fn cmd_generate(ctx: &Context, args: &GenerateArgs) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
    let mut manifest = RunManifest::start("generate", Some(seed), args);
    let (beta0, _) = parse_beta(&read_input(&args.beta, &mut manifest)?, &args.beta)?;
    let family: Family = args.family.parse()?;
    let spec = OverdispersionSpec::from_rho2(family, args.rho2, seed)?;
    let contamination = ContaminationSpec::cyclic(args.contaminate, beta0.categories() + 1)?;
    let design = Design {
        strata: args.strata,
        clusters_per_stratum: args.nh,
        sizes: ClusterSizes::Fixed(args.m),
        beta0,
    };
    let data = generate_dataset(&design, &spec, &contamination, Execution::Parallel)?;
    save_dataset(&data, &args.out)?;
    let sidecar = sidecar_path(&args.out);
    write_json(
        Some(&sidecar),
        &json!({ "manifest": manifest.finish(), "output": args.out }),
    )?;
    ctx.note(format!(
        "wrote {} clusters to {} (seed {seed})",
        data.n_clusters(),
        args.out.display()
    ));
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("simulate", None, args);
    let bytes = read_input(&args.plan, &mut manifest)?;
    let mut plan: ExperimentPlan = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.plan.display())))?;
    if let Some(seed) = ctx.seed {
        plan.seed = seed;
    }
    plan.validate()?;
    manifest.seed = Some(plan.seed);
    manifest.config = json!({ "plan": plan, "out": args.out });
    let mut cell_times = Vec::new();
    let table = run_experiment(&plan, Execution::Parallel, |c| {
        ctx.note(format!(
            "lambda={:<8} nh={:<4} contaminated={:<5} rmse={:.4} level={:.3} power={:.3} nonconverged={}",
            c.lambda,
            c.nh,
            c.contaminated,
            c.rmse,
            c.level,
            c.power,
            c.nonconverged()
        ));
        cell_times.push(json!({ "lambda": c.lambda, "nh": c.nh, "contaminated": c.contaminated, "wall_seconds": c.wall_time }));
    })?;
    emit_report(&table, &args.out)?;
    let mut value =
        serde_json::to_value(manifest.finish()).map_err(|e| CliError::usage(e.to_string()))?;
    value["cell_timings"] = serde_json::Value::Array(cell_times);
    value["outputs"] = json!([pmphi::sim::CELLS_FILE, pmphi::sim::PLOT_FILE]);
    write_json(Some(&args.out.join("manifest.json")), &value)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let ctx = Context {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Test(a) => cmd_test(a),
        Command::Influence(a) => cmd_influence(a),
        Command::Power(a) => cmd_power(a),
        Command::Samplesize(a) => cmd_samplesize(a),
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
