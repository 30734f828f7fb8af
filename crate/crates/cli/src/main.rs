use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use changeover::colgen::{ColGenConfig, ColGenVariant};
use changeover::data_ingest::{
    generate_scenario, load_prices, read_scenarios, write_scenarios, LoadOptions, ScenarioParams, SyntheticMarket,
};
use changeover::domain::Cents;
use changeover::engine::PolicySpec;
use changeover::experiments::{
    default_policies, emit_report, prepare_scenarios, read_results, run_suite, write_results, SuiteConfig,
    DEFAULT_MAPE_THRESHOLD,
};
use changeover::forecasting::{ForecastConfig, ForecastMethod};
use changeover::formulations::{solve_policy, FormulationError, ModelOptions, PolicyConfig, SubProblem};
use changeover::oracle::{random_instance, solve_exhaustive, solve_naive_exhaustive, InstanceLimits, OracleRules};
use changeover_milp::SolverSettings;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "changeover", version, about = "Portfolio changeover under fixed trade fees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random-walk price history as CSV.
    SynthMarket(SynthMarketArgs),
    /// Draw scenarios from a price history.
    GenScenarios(GenScenariosArgs),
    /// Run a policy suite over a scenario file.
    Run(RunArgs),
    /// Render tables and plots from a results directory.
    Report(ReportArgs),
    /// Compare every compact policy against exhaustive search on random small instances.
    OracleCheck(OracleCheckArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Relative optimality gap.
    #[arg(long, default_value_t = 1e-6)]
    gap: f64,
    /// Per-solve time limit in seconds.
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    /// Solver random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn settings(&self) -> anyhow::Result<SolverSettings> {
        if !(self.gap >= 0.0) || !(self.time_limit > 0.0) {
            bail!("--gap must be >= 0 and --time-limit > 0");
        }
        Ok(SolverSettings {
            gap: self.gap,
            time_limit: Duration::from_secs_f64(self.time_limit),
            seed: self.seed,
            ..SolverSettings::default()
        })
    }
}

#[derive(Args)]
struct SynthMarketArgs {
    #[arg(long, default_value_t = 10)]
    assets: usize,
    #[arg(long, default_value_t = 200)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenScenariosArgs {
    /// Price CSV with a date column followed by one column per symbol.
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    min_assets: usize,
    #[arg(long, default_value_t = 50)]
    max_assets: usize,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    /// Dollars.
    #[arg(long, default_value = "2")]
    min_fee: Cents,
    #[arg(long, default_value = "9")]
    max_fee: Cents,
    #[arg(long, default_value = "15000")]
    min_budget: Cents,
    #[arg(long, default_value = "350000")]
    max_budget: Cents,
    #[arg(long, default_value_t = 48)]
    lookback: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    scenarios: PathBuf,
    /// Results directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated policy names; defaults to the full roster.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<PolicySpec>,
    /// Adds a penalized policy per value, as a fraction of wrong-direction trade value.
    #[arg(long)]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = ForecastMethod::Drift)]
    forecaster: ForecastMethod,
    #[arg(long, default_value_t = 48)]
    lookback: usize,
    /// Scenarios whose mean forecast MAPE (percent) exceeds this are excluded.
    #[arg(long, default_value_t = DEFAULT_MAPE_THRESHOLD)]
    mape_threshold: f64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Also write tables and plots into the results directory.
    #[arg(long)]
    report: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `run`.
    #[arg(long)]
    results: PathBuf,
    /// Output directory; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleCheckArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 3)]
    max_assets: usize,
    #[arg(long, default_value_t = 4)]
    max_periods: usize,
    /// Penalties checked besides the directional and naive policies.
    #[arg(long, default_values_t = [0.25, 0.5, 0.75, 5.0])]
    lambda: Vec<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::SynthMarket(a) => synth_market(a),
        Command::GenScenarios(a) => gen_scenarios(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::OracleCheck(a) => oracle_check(a),
    }
}

fn synth_market(a: SynthMarketArgs) -> anyhow::Result<()> {
    let market = SyntheticMarket {
        n_assets: a.assets,
        n_rows: a.rows,
        ..SyntheticMarket::default()
    };
    market.generate(a.seed).write_csv(&a.out)?;
    log::info!("wrote {} rows of {} assets to {}", a.rows, a.assets, a.out.display());
    Ok(())
}

fn gen_scenarios(a: GenScenariosArgs) -> anyhow::Result<()> {
    let (history, load) = load_prices(&a.history, &LoadOptions::default())?;
    for (symbol, reason) in &load.dropped {
        log::warn!("dropped {symbol}: {reason}");
    }
    let params = ScenarioParams {
        universe_size: (a.min_assets, a.max_assets),
        horizon: a.horizon,
        fee: (a.min_fee, a.max_fee),
        budget: (a.min_budget, a.max_budget),
        lookback: a.lookback,
        ..ScenarioParams::default()
    };
    let records = (0..a.count)
        .map(|id| generate_scenario(&history, &params, id, a.seed.wrapping_add(id as u64)).map(|(r, _)| r))
        .collect::<Result<Vec<_>, _>>()?;
    write_scenarios(&a.out, &records)?;
    log::info!("wrote {} scenarios to {}", records.len(), a.out.display());
    Ok(())
}

fn roster(named: Vec<PolicySpec>, lambdas: &[f64]) -> anyhow::Result<Vec<PolicySpec>> {
    let mut policies = if named.is_empty() && lambdas.is_empty() {
        let mut all = default_policies();
        all.push(PolicySpec::ColGen(ColGenConfig::new(ColGenVariant::BothDirections)));
        all.push(PolicySpec::ColGen(ColGenConfig::new(ColGenVariant::BuysOnly)));
        all
    } else {
        named
    };
    for &l in lambdas {
        if !(l >= 0.0) || !l.is_finite() {
            bail!("--lambda must be a finite non-negative number, got {l}");
        }
        policies.push(PolicySpec::Compact(PolicyConfig::penalized(l)));
    }
    let mut seen = Vec::new();
    policies.retain(|p| {
        let fresh = !seen.contains(&p.name());
        seen.push(p.name());
        fresh
    });
    Ok(policies)
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let (history, _) = load_prices(&a.history, &LoadOptions::default())?;
    let records = read_scenarios(&a.scenarios)?;
    let (scenarios, mut failures) = prepare_scenarios(&history, &records, a.lookback);
    for f in &failures {
        log::warn!("scenario {} unusable: {}", f.scenario, f.cause);
    }
    let mut config = SuiteConfig::new(
        roster(a.policies, &a.lambda)?,
        ForecastConfig {
            lookback: a.lookback,
            method: a.forecaster,
        },
    );
    config.settings = a.solver.settings()?;
    config.mape_threshold = a.mape_threshold;
    config.jobs = a.jobs;
    let names: Vec<String> = config.policies.iter().map(PolicySpec::name).collect();
    log::info!("running {} scenarios with {}", scenarios.len(), names.join(", "));
    let mut results = run_suite(&scenarios, &config)?;
    failures.append(&mut results.failures);
    failures.sort_by_key(|f| f.scenario);
    results.failures = failures;
    write_results(&a.out, &results)?;
    log::info!(
        "{} runs, {} excluded, {} failed scenarios; results in {}",
        results.runs.len(),
        results.exclusions.len(),
        results.failures.len(),
        a.out.display()
    );
    if a.report {
        let bundle = emit_report(&a.out, &results)?;
        log::info!("tables in {}", bundle.tables.display());
    }
    Ok(())
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let results = read_results(&a.results)?;
    let out = a.out.unwrap_or_else(|| a.results.clone());
    let bundle = emit_report(&out, &results)?;
    print!("{}", std::fs::read_to_string(&bundle.tables).context("reading rendered tables")?);
    for p in &bundle.plots {
        log::info!("plot {}", p.display());
    }
    Ok(())
}

fn objective(
    sub: &SubProblem,
    policy: PolicyConfig,
    settings: &SolverSettings,
) -> anyhow::Result<Option<f64>> {
    match solve_policy(sub, &policy, ModelOptions::default(), settings) {
        Ok(sol) => Ok(Some(sol.value.penalized_objective(policy.lambda))),
        Err(FormulationError::TargetInfeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn oracle_check(a: OracleCheckArgs) -> anyhow::Result<()> {
    let settings = a.solver.settings()?;
    let limits = InstanceLimits {
        max_assets: a.max_assets.max(1),
        max_periods: a.max_periods.max(1),
        ..InstanceLimits::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.solver.seed);
    let mut mismatches = 0usize;
    let mut checks = 0usize;
    for i in 0..a.count {
        let sub = SubProblem::from_instance(&random_instance(&mut rng, &limits));
        let mut cases = vec![
            (PolicyConfig::base(), solve_exhaustive(&sub, &OracleRules::base())),
            (PolicyConfig::directional(), solve_exhaustive(&sub, &OracleRules::directional())),
            (PolicyConfig::naive(), solve_naive_exhaustive(&sub)),
        ];
        for &l in &a.lambda {
            cases.push((PolicyConfig::penalized(l), solve_exhaustive(&sub, &OracleRules::penalized(l))));
        }
        for (policy, brute) in cases {
            let brute = brute.map(|o| o.objective);
            let milp = objective(&sub, policy, &settings)?;
            checks += 1;
            let same = match (milp, brute) {
                (Some(x), Some(y)) => (x - y).abs() <= 1e-6,
                (None, None) => true,
                _ => false,
            };
            if !same {
                mismatches += 1;
                println!("instance {i} {}: milp {milp:?}, exhaustive {brute:?}", policy.name());
            }
        }
    }
    println!("{checks} checks on {} instances, {mismatches} mismatches", a.count);
    if mismatches > 0 {
        bail!("{mismatches} optima disagree with exhaustive search");
    }
    Ok(())
}
