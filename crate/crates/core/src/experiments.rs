//! Batch runs over scenario sets, summary statistics and report rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

use changeover_milp::SolverSettings;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data_ingest::{instance_from_record, MarketHistory, ScenarioRecord};
use crate::domain::TransitionInstance;
use crate::engine::{precompute_forecasts, run_with_forecasts, MarketData, PolicySpec, SimulationConfig, SimulationResult};
use crate::forecasting::{exclude_scenario, ForecastConfig};
use crate::formulations::{ModelOptions, PolicyConfig};

/// Returns within this many percentage points count as a tie.
pub const TIE_TOLERANCE: f64 = 0.005;
pub const DEFAULT_MAPE_THRESHOLD: f64 = 10.0;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const EXCLUSIONS_FILE: &str = "exclusions.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{row} and {col} share no scenarios")]
    DisjointScenarios { row: String, col: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The roster used by default: Naive, Directional and the penalty sweep.
pub fn default_policies() -> Vec<PolicySpec> {
    let mut out = vec![
        PolicySpec::Compact(PolicyConfig::naive()),
        PolicySpec::Compact(PolicyConfig::directional()),
    ];
    for lambda in [0.0, 0.25, 0.5, 0.75, 5.0] {
        out.push(PolicySpec::Compact(PolicyConfig::penalized(lambda)));
    }
    out
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub policies: Vec<PolicySpec>,
    pub forecast: ForecastConfig,
    pub settings: SolverSettings,
    pub options: ModelOptions,
    pub mape_threshold: f64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl SuiteConfig {
    pub fn new(policies: Vec<PolicySpec>, forecast: ForecastConfig) -> Self {
        Self {
            policies,
            forecast,
            settings: SolverSettings::default(),
            options: ModelOptions::default(),
            mape_threshold: DEFAULT_MAPE_THRESHOLD,
            jobs: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteScenario {
    pub id: usize,
    pub instance: TransitionInstance,
    pub market: MarketData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: usize,
    #[serde(flatten)]
    pub result: SimulationResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub scenario: usize,
    pub policy: String,
    pub runtime_seconds: f64,
    pub solve_seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub scenario: usize,
    pub mean_mape: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub scenario: usize,
    pub cause: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteResults {
    pub runs: Vec<RunRecord>,
    pub timings: Vec<TimingRecord>,
    pub exclusions: Vec<Exclusion>,
    pub failures: Vec<ScenarioFailure>,
}

/// Rebuilds each record's instance and market; records that do not fit the history fail individually.
pub fn prepare_scenarios(
    history: &MarketHistory,
    records: &[ScenarioRecord],
    lookback: usize,
) -> (Vec<SuiteScenario>, Vec<ScenarioFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in records {
        let built = instance_from_record(history, r)
            .map_err(|e| e.to_string())
            .and_then(|instance| {
                MarketData::for_record(history, r, lookback)
                    .map(|market| (instance, market))
                    .map_err(|e| e.to_string())
            });
        match built {
            Ok((instance, market)) => ok.push(SuiteScenario {
                id: r.spec.id,
                instance,
                market,
            }),
            Err(cause) => failed.push(ScenarioFailure {
                scenario: r.spec.id,
                cause,
            }),
        }
    }
    (ok, failed)
}

enum Outcome {
    Ran(Vec<(RunRecord, TimingRecord)>),
    Excluded(Exclusion),
    Failed(ScenarioFailure),
}

fn run_scenario(s: &SuiteScenario, config: &SuiteConfig) -> Outcome {
    let forecasts = match precompute_forecasts(&s.market, s.instance.horizon, &config.forecast) {
        Ok(f) => f,
        Err(e) => {
            return Outcome::Failed(ScenarioFailure {
                scenario: s.id,
                cause: e.to_string(),
            })
        }
    };
    if let Some(m) = forecasts.mean_mape() {
        if exclude_scenario(m, config.mape_threshold) {
            log::info!("scenario {} excluded, mean MAPE {m:.2}", s.id);
            return Outcome::Excluded(Exclusion {
                scenario: s.id,
                mean_mape: m,
                threshold: config.mape_threshold,
            });
        }
    }
    let mut out = Vec::with_capacity(config.policies.len());
    for policy in &config.policies {
        let sim = SimulationConfig {
            policy: policy.clone(),
            forecast: config.forecast.clone(),
            settings: config.settings.clone(),
            options: config.options,
            lp_export_dir: None,
        };
        match run_with_forecasts(&s.instance, &forecasts, &sim) {
            Ok(result) => {
                let timing = TimingRecord {
                    scenario: s.id,
                    policy: result.policy.clone(),
                    runtime_seconds: result.summary.runtime.as_secs_f64(),
                    solve_seconds: result.records.iter().map(|r| r.solve_time.as_secs_f64()).collect(),
                };
                out.push((RunRecord { scenario: s.id, result }, timing));
            }
            Err(e) => {
                return Outcome::Failed(ScenarioFailure {
                    scenario: s.id,
                    cause: e.to_string(),
                })
            }
        }
    }
    Outcome::Ran(out)
}

/// Runs every policy on every scenario; output order is scenario order, then policy order.
pub fn run_suite(scenarios: &[SuiteScenario], config: &SuiteConfig) -> Result<SuiteResults, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let outcomes: Vec<Outcome> = pool.install(|| scenarios.par_iter().map(|s| run_scenario(s, config)).collect());
    let mut results = SuiteResults::default();
    for o in outcomes {
        match o {
            Outcome::Ran(runs) => {
                for (run, timing) in runs {
                    results.runs.push(run);
                    results.timings.push(timing);
                }
            }
            Outcome::Excluded(e) => results.exclusions.push(e),
            Outcome::Failed(f) => results.failures.push(f),
        }
    }
    Ok(results)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ExperimentError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for item in items {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExperimentError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes the four record files into `dir`.
pub fn write_results(dir: &Path, results: &SuiteResults) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_jsonl(&dir.join(RESULTS_FILE), &results.runs)?;
    write_jsonl(&dir.join(TIMINGS_FILE), &results.timings)?;
    write_jsonl(&dir.join(EXCLUSIONS_FILE), &results.exclusions)?;
    write_jsonl(&dir.join(FAILURES_FILE), &results.failures)
}

pub fn read_results(dir: &Path) -> Result<SuiteResults, ExperimentError> {
    Ok(SuiteResults {
        runs: read_jsonl(&dir.join(RESULTS_FILE))?,
        timings: read_jsonl(&dir.join(TIMINGS_FILE))?,
        exclusions: read_jsonl(&dir.join(EXCLUSIONS_FILE))?,
        failures: read_jsonl(&dir.join(FAILURES_FILE))?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PercentChange,
    Trades,
    Fees,
    Runtime,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::PercentChange, Metric::Trades, Metric::Fees, Metric::Runtime];

    pub fn title(self) -> &'static str {
        match self {
            Metric::PercentChange => "Percent Change (%) in Portfolio Value",
            Metric::Trades => "Number of Trades Executed",
            Metric::Fees => "Trading Cost Incurred ($)",
            Metric::Runtime => "Total Algorithm Runtime (s)",
        }
    }
}

/// One successful run reduced to the reported metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scenario: usize,
    pub policy: String,
    pub percent_change: f64,
    pub trades: f64,
    pub fees: f64,
    pub runtime: Option<f64>,
}

impl Observation {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::PercentChange => Some(self.percent_change),
            Metric::Trades => Some(self.trades),
            Metric::Fees => Some(self.fees),
            Metric::Runtime => self.runtime,
        }
    }
}

/// Successful runs joined with their timings.
pub fn observations(results: &SuiteResults) -> Vec<Observation> {
    let times: HashMap<(usize, &str), f64> = results
        .timings
        .iter()
        .map(|t| ((t.scenario, t.policy.as_str()), t.runtime_seconds))
        .collect();
    results
        .runs
        .iter()
        .filter(|r| r.result.succeeded())
        .filter_map(|r| {
            let s = &r.result.summary;
            Some(Observation {
                scenario: r.scenario,
                policy: r.result.policy.clone(),
                percent_change: s.percent_change?,
                trades: s.trades as f64,
                fees: s.fees.as_dollars(),
                runtime: times.get(&(r.scenario, r.result.policy.as_str())).copied(),
            })
        })
        .collect()
}

/// Policy names in first-seen order.
pub fn policy_order(obs: &[Observation]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    obs.iter().filter(|o| seen.insert(o.policy.clone())).map(|o| o.policy.clone()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
}

/// Sample standard deviation; the median of an even count is the midpoint.
pub fn summarize_values(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Some(Summary {
        n,
        mean,
        std_dev,
        median,
        max: sorted[n - 1],
        min: sorted[0],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub metric: Metric,
    pub rows: Vec<(String, Summary)>,
}

/// One row per policy in `policies` order; policies without values are skipped.
pub fn summarize(obs: &[Observation], metric: Metric, policies: &[String]) -> SummaryTable {
    let mut rows = Vec::new();
    for p in policies {
        let values: Vec<f64> = obs.iter().filter(|o| &o.policy == p).filter_map(|o| o.get(metric)).collect();
        match summarize_values(&values) {
            Some(s) => rows.push((p.clone(), s)),
            None => log::warn!("no {metric:?} values for {p}"),
        }
    }
    SummaryTable { metric, rows }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinLossTie {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl WinLossTie {
    pub fn total(&self) -> usize {
        self.wins + self.losses + self.ties
    }

    pub fn reversed(&self) -> Self {
        Self {
            wins: self.losses,
            losses: self.wins,
            ties: self.ties,
        }
    }
}

/// Entry `[i][j]` compares policy `i` against policy `j` on their shared scenarios.
pub fn win_loss_tie(
    obs: &[Observation],
    metric: Metric,
    policies: &[String],
    tolerance: f64,
) -> Result<Vec<Vec<WinLossTie>>, ExperimentError> {
    let by_policy: Vec<BTreeMap<usize, f64>> = policies
        .iter()
        .map(|p| {
            obs.iter()
                .filter(|o| &o.policy == p)
                .filter_map(|o| o.get(metric).map(|v| (o.scenario, v)))
                .collect()
        })
        .collect();
    let mut matrix = vec![vec![WinLossTie::default(); policies.len()]; policies.len()];
    for i in 0..policies.len() {
        for j in 0..policies.len() {
            let (a, b) = (&by_policy[i], &by_policy[j]);
            let mut cell = WinLossTie::default();
            for (s, va) in a {
                if let Some(vb) = b.get(s) {
                    if va - vb > tolerance {
                        cell.wins += 1;
                    } else if vb - va > tolerance {
                        cell.losses += 1;
                    } else {
                        cell.ties += 1;
                    }
                }
            }
            if cell.total() == 0 && !a.is_empty() && !b.is_empty() {
                return Err(ExperimentError::DisjointScenarios {
                    row: policies[i].clone(),
                    col: policies[j].clone(),
                });
            }
            matrix[i][j] = cell;
        }
    }
    Ok(matrix)
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn render_summary_table(table: &SummaryTable) -> String {
    let width = table.rows.iter().map(|(p, _)| p.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    writeln!(out, "{}", table.metric.title()).unwrap();
    writeln!(
        out,
        "{:<width$} | {:>10} | {:>10} | {:>10} | {:>10} | {:>10}",
        "policy", "Mean", "Std. Dev.", "Median", "Max", "Min"
    )
    .unwrap();
    writeln!(out, "{}", "-".repeat(width + 5 * 13)).unwrap();
    for (p, s) in &table.rows {
        writeln!(
            out,
            "{:<width$} | {:>10.2} | {:>10.2} | {:>10.2} | {:>10.2} | {:>10.2}",
            p, s.mean, s.std_dev, s.median, s.max, s.min
        )
        .unwrap();
    }
    out
}

/// Cells read `row win/row loss/tie`.
pub fn render_win_loss_tie(policies: &[String], matrix: &[Vec<WinLossTie>]) -> String {
    let cells: Vec<Vec<String>> = matrix
        .iter()
        .map(|r| r.iter().map(|c| format!("{}/{}/{}", c.wins, c.losses, c.ties)).collect())
        .collect();
    let width = policies
        .iter()
        .map(String::len)
        .chain(cells.iter().flatten().map(String::len))
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    write!(out, "{:<width$}", "").unwrap();
    for p in policies {
        write!(out, " | {p:>width$}").unwrap();
    }
    out.push('\n');
    for (p, row) in policies.iter().zip(&cells) {
        write!(out, "{p:<width$}").unwrap();
        for c in row {
            write!(out, " | {c:>width$}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 60.0;

impl Frame {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 1.0, hi + 1.0)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
        writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(out, r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, escape(title)).unwrap();
        writeln!(
            out,
            r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
            b = H - PAD,
            r = W - PAD
        )
        .unwrap();
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 15.0, escape(xlabel)).unwrap();
        writeln!(
            out,
            r#"<text x="15" y="{y}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {y})">{}</text>"#,
            escape(ylabel),
            y = H / 2.0
        )
        .unwrap();
        for (v, x, y, anchor) in [
            (self.x0, self.px(self.x0), H - PAD + 15.0, "middle"),
            (self.x1, self.px(self.x1), H - PAD + 15.0, "middle"),
            (self.y0, PAD - 5.0, self.py(self.y0), "end"),
            (self.y1, PAD - 5.0, self.py(self.y1), "end"),
        ] {
            writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="10">{v:.2}</text>"#).unwrap();
        }
    }
}

/// Scatter of `(x, y)` points with the least-squares line when one exists.
pub fn scatter_svg(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let frame = Frame::new(&xs, &ys);
    let mut out = String::new();
    frame.axes(&mut out, title, xlabel, ylabel);
    for &(x, y) in points {
        writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, frame.px(x), frame.py(y)).unwrap();
    }
    if let Some((slope, intercept)) = fit_line(&xs, &ys) {
        let (a, b) = (frame.x0, frame.x1);
        writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-width="2"/>"#,
            frame.px(a),
            frame.py(slope * a + intercept),
            frame.px(b),
            frame.py(slope * b + intercept)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="50" text-anchor="end" font-size="11">y = {slope:.3} x + {intercept:.3}</text>"#,
            W - PAD
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Counts of `values` in `bins` equal-width bins.
pub fn histogram_counts(values: &[f64], bins: usize) -> Vec<usize> {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &v in values {
        let i = if hi > lo {
            (((v - lo) / (hi - lo)) * bins as f64) as usize
        } else {
            0
        };
        counts[i.min(bins - 1)] += 1;
    }
    counts
}

pub fn histogram_svg(values: &[f64], bins: usize, title: &str, xlabel: &str) -> String {
    let counts = histogram_counts(values, bins);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() { (0.0, 1.0) } else { (lo, hi.max(lo + 1e-9)) };
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: top,
    };
    let mut out = String::new();
    frame.axes(&mut out, title, xlabel, "count");
    let step = (hi - lo) / counts.len() as f64;
    for (i, &c) in counts.iter().enumerate() {
        let (a, b) = (lo + step * i as f64, lo + step * (i + 1) as f64);
        let (x, y) = (frame.px(a), frame.py(c as f64));
        writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"/>"#,
            frame.px(b) - x,
            H - PAD - y
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Files written by [`emit_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub tables: PathBuf,
    pub statistics: PathBuf,
    pub plots: Vec<PathBuf>,
}

#[derive(Serialize)]
struct StatisticsFile<'a> {
    summaries: &'a [SummaryTable],
    win_loss_tie: BTreeMap<String, BTreeMap<String, WinLossTie>>,
    excluded: Vec<usize>,
    failed: Vec<usize>,
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect()
}

/// Writes tables, a statistics file and plots for `results` into `dir`.
pub fn emit_report(dir: &Path, results: &SuiteResults) -> Result<ReportBundle, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let obs = observations(results);
    let policies = policy_order(&obs);
    let summaries: Vec<SummaryTable> = Metric::ALL.iter().map(|&m| summarize(&obs, m, &policies)).collect();
    let matrix = win_loss_tie(&obs, Metric::PercentChange, &policies, TIE_TOLERANCE)?;

    let mut text = String::new();
    for t in &summaries {
        text.push_str(&render_summary_table(t));
        text.push('\n');
    }
    writeln!(text, "Win/Loss/Tie on percent change (tolerance {TIE_TOLERANCE})").unwrap();
    text.push_str(&render_win_loss_tie(&policies, &matrix));
    writeln!(
        text,
        "\nexcluded scenarios: {}, failed scenarios: {}, failed runs: {}",
        results.exclusions.len(),
        results.failures.len(),
        results.runs.iter().filter(|r| !r.result.succeeded()).count()
    )
    .unwrap();
    let tables = dir.join("tables.txt");
    std::fs::write(&tables, text).map_err(io_err(&tables))?;

    let mut wlt = BTreeMap::new();
    for (i, p) in policies.iter().enumerate() {
        let row: BTreeMap<String, WinLossTie> = policies.iter().cloned().zip(matrix[i].iter().copied()).collect();
        wlt.insert(p.clone(), row);
    }
    let stats = StatisticsFile {
        summaries: &summaries,
        win_loss_tie: wlt,
        excluded: results.exclusions.iter().map(|e| e.scenario).collect(),
        failed: results.failures.iter().map(|f| f.scenario).collect(),
    };
    let statistics = dir.join("statistics.json");
    std::fs::write(&statistics, serde_json::to_string_pretty(&stats).expect("statistics serialize")).map_err(io_err(&statistics))?;

    let mut plots = Vec::new();
    let naive: BTreeMap<usize, f64> = obs
        .iter()
        .filter(|o| o.policy == "Naive")
        .map(|o| (o.scenario, o.percent_change))
        .collect();
    if !naive.is_empty() {
        for p in policies.iter().filter(|p| p.as_str() != "Naive") {
            let points: Vec<(f64, f64)> = obs
                .iter()
                .filter(|o| &o.policy == p)
                .filter_map(|o| naive.get(&o.scenario).map(|&x| (x, o.percent_change)))
                .collect();
            let path = dir.join(format!("scatter_{}_vs_Naive.svg", file_safe(p)));
            let svg = scatter_svg(&points, &format!("{p} vs Naive"), "Naive percent change (%)", &format!("{p} percent change (%)"));
            std::fs::write(&path, svg).map_err(io_err(&path))?;
            plots.push(path);
        }
    }
    let runtimes: Vec<f64> = obs.iter().filter_map(|o| o.runtime).collect();
    let path = dir.join("runtime_histogram.svg");
    std::fs::write(&path, histogram_svg(&runtimes, 20, "Total runtime per run", "seconds")).map_err(io_err(&path))?;
    plots.push(path);
    Ok(ReportBundle {
        tables,
        statistics,
        plots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Cents;
    use crate::engine::{RunStatus, RunSummary};
    use proptest::prelude::*;
    use std::time::Duration;

    fn obs(scenario: usize, policy: &str, pc: f64) -> Observation {
        Observation {
            scenario,
            policy: policy.into(),
            percent_change: pc,
            trades: 0.0,
            fees: 0.0,
            runtime: Some(1.0),
        }
    }

    #[test]
    fn summary_examples() {
        let s = summarize_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.median, s.std_dev, s.max, s.min), (2.0, 2.0, 1.0, 3.0, 1.0));
        let one = summarize_values(&[4.5]).unwrap();
        assert_eq!((one.mean, one.median, one.std_dev, one.max, one.min), (4.5, 4.5, 0.0, 4.5, 4.5));
        assert_eq!(summarize_values(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.5);
        assert!(summarize_values(&[]).is_none());
    }

    #[test]
    fn win_loss_tie_examples() {
        let o = vec![obs(0, "A", 1.0), obs(0, "B", 1.0)];
        let names = vec!["A".to_string(), "B".to_string()];
        let m = win_loss_tie(&o, Metric::PercentChange, &names, TIE_TOLERANCE).unwrap();
        assert_eq!(m[0][1], WinLossTie { wins: 0, losses: 0, ties: 1 });
        let o = vec![obs(0, "A", 1.0), obs(0, "B", 1.004), obs(1, "A", 2.0), obs(1, "B", 1.0), obs(2, "B", 9.0)];
        let m = win_loss_tie(&o, Metric::PercentChange, &names, TIE_TOLERANCE).unwrap();
        assert_eq!(m[0][1], WinLossTie { wins: 1, losses: 0, ties: 1 });
        assert_eq!(m[1][0], m[0][1].reversed());
        assert_eq!(m[1][1], WinLossTie { wins: 0, losses: 0, ties: 3 });
        let o = vec![obs(0, "A", 1.0), obs(1, "B", 1.0)];
        assert!(matches!(
            win_loss_tie(&o, Metric::PercentChange, &names, TIE_TOLERANCE),
            Err(ExperimentError::DisjointScenarios { .. })
        ));
    }

    #[test]
    fn trendline_of_doubled_returns() {
        let xs = [-3.0, -1.0, 0.5, 2.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let (slope, intercept) = fit_line(&xs, &ys).unwrap();
        assert!((slope - 2.0).abs() < 1e-6 && intercept.abs() < 1e-9);
        assert!(fit_line(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn table_has_five_statistics() {
        let t = summarize(&[obs(0, "Naive", 1.0), obs(1, "Naive", 3.0)], Metric::PercentChange, &["Naive".into()]);
        let text = render_summary_table(&t);
        let header = text.lines().nth(1).unwrap();
        let cols: Vec<&str> = header.split('|').map(str::trim).collect();
        assert_eq!(cols, ["policy", "Mean", "Std. Dev.", "Median", "Max", "Min"]);
        assert!(text.contains("2.00") && text.contains("1.41"));
    }

    #[test]
    fn histogram_counts_everything() {
        let v = [0.0, 0.1, 0.5, 0.99, 1.0];
        let c = histogram_counts(&v, 4);
        assert_eq!(c.iter().sum::<usize>(), 5);
        assert_eq!(c, vec![2, 0, 1, 2]);
        assert_eq!(histogram_counts(&[3.0, 3.0], 5), vec![2, 0, 0, 0, 0]);
    }

    #[test]
    fn empty_report_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = emit_report(dir.path(), &SuiteResults::default()).unwrap();
        let text = std::fs::read_to_string(&bundle.tables).unwrap();
        assert!(text.contains("Mean") && text.contains("Std. Dev."));
        let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&bundle.statistics).unwrap()).unwrap();
        assert!(stats["summaries"].is_array());
        assert!(std::fs::read_to_string(&bundle.plots[0]).unwrap().starts_with("<svg"));
    }

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunRecord {
            scenario: 3,
            result: SimulationResult {
                policy: "Naive".into(),
                records: Vec::new(),
                summary: RunSummary {
                    initial_value: Cents(100),
                    final_value: Some(Cents(110)),
                    percent_change: Some(10.0),
                    trades: 2,
                    fees: Cents(300),
                    target_satisfied: true,
                    mean_mape: Some(1.5),
                    status: RunStatus::Success,
                    runtime: Duration::ZERO,
                },
            },
        };
        let results = SuiteResults {
            runs: vec![run],
            timings: vec![TimingRecord {
                scenario: 3,
                policy: "Naive".into(),
                runtime_seconds: 0.25,
                solve_seconds: vec![0.25],
            }],
            exclusions: vec![Exclusion {
                scenario: 4,
                mean_mape: 12.0,
                threshold: 10.0,
            }],
            failures: Vec::new(),
        };
        write_results(dir.path(), &results).unwrap();
        let back = read_results(dir.path()).unwrap();
        assert_eq!(back, results);
        let o = observations(&back);
        assert_eq!(o.len(), 1);
        assert_eq!((o[0].fees, o[0].runtime), (3.0, Some(0.25)));
    }

    proptest! {
        #[test]
        fn antisymmetric_and_complete(values in proptest::collection::vec((0usize..6, 0usize..3, -5i32..5), 0..40)) {
            let names: Vec<String> = ["P0", "P1", "P2"].iter().map(|s| s.to_string()).collect();
            let mut seen = BTreeSet::new();
            let o: Vec<Observation> = values
                .into_iter()
                .filter(|(s, p, _)| seen.insert((*s, *p)))
                .map(|(s, p, v)| obs(s, &names[p], v as f64 / 100.0))
                .collect();
            if let Ok(m) = win_loss_tie(&o, Metric::PercentChange, &names, TIE_TOLERANCE) {
                for i in 0..3 {
                    prop_assert_eq!(m[i][i].wins + m[i][i].losses, 0);
                    for j in 0..3 {
                        prop_assert_eq!(m[i][j], m[j][i].reversed());
                    }
                }
            }
        }
    }
}
