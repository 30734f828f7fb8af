//! Receding-horizon simulation: forecast, solve over the remaining horizon,
//! execute the current period's trades, observe, repeat.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use changeover_milp::{export_lp_text, SolveStatus, SolverSettings};
use serde::{Deserialize, Serialize};

use crate::colgen::{build_colgen_master, ColGenConfig, ColGenError, ColGenVariant};
use crate::data_ingest::{columns_of, DataError, MarketHistory, ScenarioRecord};
use crate::domain::{
    apply_trades, portfolio_value, satisfies_target, Cents, DomainError, PortfolioState, PriceMatrix, TradeRow,
    TransitionInstance,
};
use crate::forecasting::{absolute_percent_errors, forecaster_for, ForecastConfig, ForecastError, ForecastInput};
use crate::formulations::{
    build_base, build_directional, build_naive, build_penalized, solve_built, BuiltModel, FormulationError,
    ModelOptions, PolicyConfig, PolicyKind, SubProblem,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("market has {available} rows from the start, the horizon needs {needed}")]
    ShortMarket { available: usize, needed: usize },
    #[error("forecast set covers {got} periods, instance horizon is {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Realised prices with the history that precedes them.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketData {
    /// History rows, then period 0 at row `start`, then the realised path.
    pub prices: PriceMatrix,
    pub start: usize,
    /// Optional exogenous series, one row per price row.
    pub covariates: Option<Vec<Vec<f64>>>,
}

impl MarketData {
    /// A market with no history before period 0.
    pub fn from_instance(instance: &TransitionInstance) -> Self {
        Self {
            prices: instance.prices.clone(),
            start: 0,
            covariates: None,
        }
    }

    /// The scenario's columns from `lookback` rows before its start through its last period.
    pub fn for_record(history: &MarketHistory, record: &ScenarioRecord, lookback: usize) -> Result<Self, EngineError> {
        let spec = &record.spec;
        let columns = columns_of(history, &spec.symbols)?;
        let start = history.row_of(spec.start_date).ok_or(DataError::UnknownDate(spec.start_date))?;
        let first = start.saturating_sub(lookback);
        let window = history.window(first..start + spec.horizon + 1, &columns)?;
        Ok(Self {
            prices: window.prices,
            start: start - first,
            covariates: window.covariates.map(|c| c.values),
        })
    }

    fn realized(&self, period: usize) -> &[Cents] {
        self.prices.row(self.start + period)
    }
}

/// Forecast made at one period for every later period of the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodForecast {
    pub prices: PriceMatrix,
    pub ape_sum: f64,
    pub cells: usize,
}

/// Forecasts for periods `0..horizon`, shared by every policy run on a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSet {
    pub periods: Vec<PeriodForecast>,
}

impl ForecastSet {
    /// Mean absolute percent error over every forecast cell.
    pub fn mean_mape(&self) -> Option<f64> {
        let (sum, cells) = self.periods.iter().fold((0.0, 0), |(s, c), p| (s + p.ape_sum, c + p.cells));
        (cells > 0).then(|| sum / cells as f64)
    }
}

pub fn precompute_forecasts(market: &MarketData, horizon: usize, config: &ForecastConfig) -> Result<ForecastSet, EngineError> {
    let available = market.prices.n_periods() - market.start;
    if available < horizon + 1 {
        return Err(EngineError::ShortMarket {
            available,
            needed: horizon + 1,
        });
    }
    let forecaster = forecaster_for(config);
    let mut periods = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let now = market.start + t + 1;
        let history = market.prices.slice(0..now)?;
        let future = market.prices.slice(now..market.start + horizon + 1)?;
        let covariates = market.covariates.as_ref().map(|c| &c[..now.min(c.len())]);
        let input = ForecastInput {
            history: &history,
            covariates,
            horizon: horizon - t,
            realized_future: Some(&future),
        };
        let prices = forecaster.predict(&input)?;
        let (ape_sum, cells) = absolute_percent_errors(&prices, &future);
        periods.push(PeriodForecast { prices, ape_sum, cells });
    }
    Ok(ForecastSet { periods })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Compact(PolicyConfig),
    ColGen(ColGenConfig),
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Compact(p) => p.name(),
            PolicySpec::ColGen(c) => c.name().to_string(),
        }
    }

    pub fn is_naive(&self) -> bool {
        matches!(self, PolicySpec::Compact(p) if p.kind == PolicyKind::Naive)
    }
}

/// Parses the names `name` produces.
impl std::str::FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        Ok(match s {
            "Naive" => PolicySpec::Compact(PolicyConfig::naive()),
            "Directional" => PolicySpec::Compact(PolicyConfig::directional()),
            "Base" => PolicySpec::Compact(PolicyConfig::base()),
            "ColGen_True" => PolicySpec::ColGen(ColGenConfig::new(ColGenVariant::BothDirections)),
            "ColGen_False" => PolicySpec::ColGen(ColGenConfig::new(ColGenVariant::BuysOnly)),
            _ => {
                let pct = s
                    .strip_prefix("DirP_")
                    .and_then(|p| p.parse::<f64>().ok())
                    .filter(|p| p.is_finite() && *p >= 0.0)
                    .ok_or_else(|| format!("unknown policy `{s}`"))?;
                PolicySpec::Compact(PolicyConfig::penalized(pct / 100.0))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub policy: PolicySpec,
    pub forecast: ForecastConfig,
    pub settings: SolverSettings,
    pub options: ModelOptions,
    /// Writes each period's model as LP text here when set.
    pub lp_export_dir: Option<PathBuf>,
}

impl SimulationConfig {
    pub fn new(policy: PolicySpec, forecast: ForecastConfig) -> Self {
        Self {
            policy,
            forecast,
            settings: SolverSettings::default(),
            options: ModelOptions::default(),
            lp_export_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cause", content = "detail", rename_all = "snake_case")]
pub enum FailureCause {
    Infeasible,
    Solver(String),
    Forecast(String),
    Execution(String),
    TargetMissed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Failed { period: usize, cause: FailureCause },
}

/// One simulated period, recorded before its trades execute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: usize,
    pub prices: Vec<Cents>,
    pub holdings: Vec<i64>,
    pub cash: Cents,
    pub value: Cents,
    pub trades: TradeRow,
    pub fees: Cents,
    /// `optimal` or `time_limit_feasible` when a solve ran.
    pub solver_status: Option<String>,
    /// The solve stopped at the time limit and its incumbent was executed.
    pub time_limited: bool,
    pub forecast_mape: Option<f64>,
    #[serde(skip)]
    pub forecast: Option<PriceMatrix>,
    #[serde(skip)]
    pub solve_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub initial_value: Cents,
    pub final_value: Option<Cents>,
    pub percent_change: Option<f64>,
    pub trades: i64,
    pub fees: Cents,
    pub target_satisfied: bool,
    pub mean_mape: Option<f64>,
    pub status: RunStatus,
    #[serde(skip)]
    pub runtime: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub policy: String,
    pub records: Vec<PeriodRecord>,
    pub summary: RunSummary,
}

impl SimulationResult {
    pub fn succeeded(&self) -> bool {
        self.summary.status == RunStatus::Success
    }
}

/// `100 (V_T - V_0) / V_0`.
pub fn percent_change(initial: Cents, last: Cents) -> f64 {
    100.0 * (last.0 - initial.0) as f64 / initial.0 as f64
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::TimeLimitFeasible => "time_limit_feasible",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Error => "error",
    }
}

fn build_for(
    sub: &SubProblem,
    spec: &PolicySpec,
    options: ModelOptions,
    relevant: &(Vec<usize>, Vec<usize>),
) -> Result<BuiltModel, ColGenError> {
    let partition = sub.partition();
    Ok(match spec {
        PolicySpec::Compact(p) => match p.kind {
            PolicyKind::Base => build_base(sub, options)?,
            PolicyKind::Directional => build_directional(sub, &partition, options)?,
            PolicyKind::Penalized => build_penalized(sub, &partition, p.lambda, options)?,
            PolicyKind::Naive => build_naive(sub, options)?,
        },
        PolicySpec::ColGen(c) => build_colgen_master(sub, &relevant.0, &relevant.1, c)?,
    })
}

fn failure_of(err: ColGenError) -> FailureCause {
    match err {
        ColGenError::Formulation(FormulationError::TargetInfeasible) => FailureCause::Infeasible,
        other => FailureCause::Solver(other.to_string()),
    }
}

/// Simulates `instance` against the realised prices in `market`.
pub fn run(instance: &TransitionInstance, market: &MarketData, config: &SimulationConfig) -> Result<SimulationResult, EngineError> {
    let forecasts = precompute_forecasts(market, instance.horizon, &config.forecast)?;
    run_with_forecasts(instance, &forecasts, config)
}

/// Simulates with forecasts computed beforehand; realised prices come from the instance.
pub fn run_with_forecasts(
    instance: &TransitionInstance,
    forecasts: &ForecastSet,
    config: &SimulationConfig,
) -> Result<SimulationResult, EngineError> {
    let horizon = instance.horizon;
    if forecasts.periods.len() != horizon {
        return Err(EngineError::HorizonMismatch {
            expected: horizon,
            got: forecasts.periods.len(),
        });
    }
    let clock = Instant::now();
    let market = MarketData::from_instance(instance);
    let relevant = {
        let (p0, target) = (&instance.initial.holdings, &instance.target.min_shares);
        let n = p0.len();
        (
            (0..n).filter(|&a| p0[a] < target[a]).collect::<Vec<_>>(),
            (0..n).filter(|&a| p0[a] > target[a]).collect::<Vec<_>>(),
        )
    };
    let mut state = instance.initial.clone();
    let mut records = Vec::with_capacity(horizon + 1);
    let mut status = RunStatus::Success;
    let mut trades = 0;
    let mut fees = Cents::ZERO;
    for t in 0..horizon {
        let y = market.realized(t).to_vec();
        let value = portfolio_value(&state, &y)?;
        let forecast = &forecasts.periods[t];
        let mut record = PeriodRecord {
            period: t,
            prices: y.clone(),
            holdings: state.holdings.clone(),
            cash: state.cash,
            value,
            trades: TradeRow::zero(state.holdings.len()),
            fees: Cents::ZERO,
            solver_status: None,
            time_limited: false,
            forecast_mape: (forecast.cells > 0).then(|| forecast.ape_sum / forecast.cells as f64),
            forecast: Some(forecast.prices.clone()),
            solve_time: Duration::ZERO,
        };
        // the naive policy commits everything on the first day
        if !(config.policy.is_naive() && t > 0) {
            match solve_period(&state, instance, &y, forecast, config, &relevant, t) {
                Ok((row, outcome_status, elapsed)) => {
                    record.solver_status = Some(status_name(outcome_status).to_string());
                    record.time_limited = outcome_status == SolveStatus::TimeLimitFeasible;
                    record.solve_time = elapsed;
                    match apply_trades(&state, &row, &y, instance.fee) {
                        Ok(next) => {
                            record.fees = instance.fee * row.flag_count();
                            trades += row.flag_count();
                            fees += record.fees;
                            record.trades = row;
                            state = next;
                        }
                        Err(e) => {
                            status = RunStatus::Failed {
                                period: t,
                                cause: FailureCause::Execution(e.to_string()),
                            };
                        }
                    }
                }
                Err((cause, elapsed)) => {
                    record.solve_time = elapsed;
                    status = RunStatus::Failed { period: t, cause };
                }
            }
        }
        records.push(record);
        if status != RunStatus::Success {
            break;
        }
    }
    let mut final_value = None;
    let mut target_satisfied = false;
    if status == RunStatus::Success {
        let y = market.realized(horizon).to_vec();
        let value = portfolio_value(&state, &y)?;
        target_satisfied = satisfies_target(&state, &instance.target)?;
        records.push(PeriodRecord {
            period: horizon,
            prices: y.clone(),
            holdings: state.holdings.clone(),
            cash: state.cash,
            value,
            trades: TradeRow::zero(state.holdings.len()),
            fees: Cents::ZERO,
            solver_status: None,
            time_limited: false,
            forecast_mape: None,
            forecast: None,
            solve_time: Duration::ZERO,
        });
        final_value = Some(value);
        if !target_satisfied {
            status = RunStatus::Failed {
                period: horizon,
                cause: FailureCause::TargetMissed,
            };
        }
    }
    let initial_value = records[0].value;
    Ok(SimulationResult {
        policy: config.policy.name(),
        summary: RunSummary {
            initial_value,
            final_value,
            percent_change: final_value.map(|v| percent_change(initial_value, v)),
            trades,
            fees,
            target_satisfied,
            mean_mape: forecasts.mean_mape(),
            status,
            runtime: clock.elapsed(),
        },
        records,
    })
}

fn solve_period(
    state: &PortfolioState,
    instance: &TransitionInstance,
    today: &[Cents],
    forecast: &PeriodForecast,
    config: &SimulationConfig,
    relevant: &(Vec<usize>, Vec<usize>),
    t: usize,
) -> Result<(TradeRow, SolveStatus, Duration), (FailureCause, Duration)> {
    let clock = Instant::now();
    let fail = |cause: FailureCause| (cause, clock.elapsed());
    let today = PriceMatrix::unlabelled(vec![today.to_vec()]).map_err(|e| fail(FailureCause::Forecast(e.to_string())))?;
    let path = today
        .stacked(&forecast.prices)
        .map_err(|e| fail(FailureCause::Forecast(e.to_string())))?;
    let sub = SubProblem {
        state: state.clone(),
        target: instance.target.clone(),
        fee: instance.fee,
        prices: path,
    };
    let built = build_for(&sub, &config.policy, config.options, relevant).map_err(|e| fail(failure_of(e)))?;
    if let Some(dir) = &config.lp_export_dir {
        let file = dir.join(format!("{}_t{t}.lp", config.policy.name()));
        std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&file, export_lp_text(&built.model)))
            .map_err(|e| fail(FailureCause::Execution(format!("{}: {e}", file.display()))))?;
    }
    let solution = solve_built(&built, &config.settings).map_err(|e| fail(failure_of(e.into())))?;
    let row = solution.plan.rows.into_iter().next().expect("at least one period");
    Ok((row, solution.outcome.status, clock.elapsed()))
}
