//! Price and covariate loading, synthetic markets, and scenario generation.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AssetUniverse, Cents, DomainError, PortfolioState, PriceMatrix, TargetPortfolio, TransitionInstance,
};

/// Longest run of consecutive missing cells that is forward-filled.
pub const MAX_FILL: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("non-positive price {value} for {symbol} on {date}")]
    NonPositivePrice { date: NaiveDate, symbol: String, value: String },
    #[error("dates are not strictly increasing at {0}")]
    UnorderedDates(NaiveDate),
    #[error("no rows left after calendar alignment")]
    EmptyCalendar,
    #[error("no asset survives the gap rule")]
    NoAssets,
    #[error("history has {available} rows but the request needs {needed}")]
    InsufficientHistory { available: usize, needed: usize },
    #[error("history has {available} assets but at least {needed} are required")]
    InsufficientAssets { available: usize, needed: usize },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("date {0} is not in the history calendar")]
    UnknownDate(NaiveDate),
    #[error("invalid scenario record: {0}")]
    Record(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Exogenous series sharing the price calendar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    /// One row per date.
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketHistory {
    pub dates: Vec<NaiveDate>,
    pub universe: AssetUniverse,
    /// Row labels are the ISO dates.
    pub prices: PriceMatrix,
    pub covariates: Option<Covariates>,
}

impl MarketHistory {
    pub fn new(dates: Vec<NaiveDate>, universe: AssetUniverse, values: Vec<Vec<Cents>>) -> Result<Self, DataError> {
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(DataError::UnorderedDates(w[1]));
            }
        }
        let labels = dates.iter().map(|d| d.to_string()).collect();
        let prices = PriceMatrix::new(values, labels)?;
        if prices.n_assets() != universe.len() {
            return Err(DomainError::DimensionMismatch {
                what: "price columns",
                expected: universe.len(),
                got: prices.n_assets(),
            }
            .into());
        }
        Ok(Self {
            dates,
            universe,
            prices,
            covariates: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn row_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Rows `range` restricted to `columns`.
    pub fn window(&self, range: std::ops::Range<usize>, columns: &[usize]) -> Result<MarketHistory, DataError> {
        if range.end > self.n_rows() || range.start >= range.end {
            return Err(DataError::InsufficientHistory {
                available: self.n_rows(),
                needed: range.end,
            });
        }
        let symbols = columns.iter().map(|&c| self.universe.symbols()[c].clone()).collect();
        let prices = self.prices.slice(range.clone())?.select_columns(columns)?;
        Ok(MarketHistory {
            dates: self.dates[range.clone()].to_vec(),
            universe: AssetUniverse::new(symbols)?,
            prices,
            covariates: self.covariates.as_ref().map(|c| Covariates {
                names: c.names.clone(),
                values: c.values[range].to_vec(),
            }),
        })
    }

    /// Attaches covariates, keeping only dates present in both calendars.
    pub fn with_covariates(self, dates: &[NaiveDate], cov: Covariates) -> Result<MarketHistory, DataError> {
        let by_date: BTreeMap<NaiveDate, &Vec<f64>> = dates.iter().copied().zip(&cov.values).collect();
        let keep: Vec<usize> = (0..self.n_rows()).filter(|&r| by_date.contains_key(&self.dates[r])).collect();
        if keep.is_empty() {
            return Err(DataError::EmptyCalendar);
        }
        let values = keep.iter().map(|&r| self.prices.row(r).to_vec()).collect();
        let kept_dates: Vec<NaiveDate> = keep.iter().map(|&r| self.dates[r]).collect();
        let cov_rows = kept_dates.iter().map(|d| by_date[d].clone()).collect();
        let mut out = MarketHistory::new(kept_dates, self.universe, values)?;
        out.covariates = Some(Covariates {
            names: cov.names,
            values: cov_rows,
        });
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.universe.symbols().iter().cloned());
        w.write_record(&header)?;
        for (r, d) in self.dates.iter().enumerate() {
            let mut rec = vec![d.to_string()];
            rec.extend(self.prices.row(r).iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// What the loader had to change.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Symbol and reason for every dropped column.
    pub dropped: Vec<(String, String)>,
    /// Number of forward-filled cells.
    pub filled: usize,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Inclusive date range to keep; the gap rule is applied inside it.
    pub range: Option<(NaiveDate, NaiveDate)>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null" | "n/a")
}

struct RawTable {
    header: Vec<String>,
    dates: Vec<NaiveDate>,
    cells: Vec<Vec<Option<String>>>,
}

fn read_table(reader: impl std::io::Read, range: Option<(NaiveDate, NaiveDate)>) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if header.is_empty() {
        return Err(DataError::Parse {
            line: 1,
            message: "header names no series".into(),
        });
    }
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or("").trim(), "%Y-%m-%d").map_err(|e| DataError::Parse {
            line,
            message: format!("bad date: {e}"),
        })?;
        if let Some(&last) = dates.last() {
            if date <= last {
                return Err(DataError::UnorderedDates(date));
            }
        }
        if let Some((lo, hi)) = range {
            if date < lo || date > hi {
                continue;
            }
        }
        dates.push(date);
        cells.push(
            rec.iter()
                .skip(1)
                .map(|c| if is_missing(c) { None } else { Some(c.trim().to_string()) })
                .collect(),
        );
    }
    if dates.is_empty() {
        return Err(DataError::EmptyCalendar);
    }
    Ok(RawTable { header, dates, cells })
}

/// Forward-fills one column; `Err` carries the reason the column is unusable.
fn fill_column<T: Clone>(col: Vec<Option<T>>, filled: &mut usize) -> Result<Vec<T>, String> {
    let mut out: Vec<T> = Vec::with_capacity(col.len());
    let mut run = 0usize;
    for (r, cell) in col.into_iter().enumerate() {
        match cell {
            Some(v) => {
                run = 0;
                out.push(v);
            }
            None => {
                run += 1;
                if run > MAX_FILL {
                    return Err(format!("more than {MAX_FILL} consecutive missing rows"));
                }
                match out.last() {
                    Some(prev) => {
                        out.push(prev.clone());
                        *filled += 1;
                    }
                    None => return Err(format!("missing value in first row {r}")),
                }
            }
        }
    }
    Ok(out)
}

/// Reads a `date,SYM1,SYM2,...` table of decimal prices.
pub fn load_prices(path: &Path, options: &LoadOptions) -> Result<(MarketHistory, LoadReport), DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    load_prices_from_reader(file, options)
}

pub fn load_prices_from_reader(
    reader: impl std::io::Read,
    options: &LoadOptions,
) -> Result<(MarketHistory, LoadReport), DataError> {
    let table = read_table(reader, options.range)?;
    let mut report = LoadReport::default();
    let mut symbols = Vec::new();
    let mut columns: Vec<Vec<Cents>> = Vec::new();
    for (c, symbol) in table.header.iter().enumerate() {
        let mut parsed = Vec::with_capacity(table.dates.len());
        for (r, row) in table.cells.iter().enumerate() {
            let cell = match &row[c] {
                None => None,
                Some(text) => {
                    let p: Cents = text.parse().map_err(|_| DataError::Parse {
                        line: r + 2,
                        message: format!("`{text}` is not a price for {symbol}"),
                    })?;
                    if !p.is_positive() {
                        return Err(DataError::NonPositivePrice {
                            date: table.dates[r],
                            symbol: symbol.clone(),
                            value: text.clone(),
                        });
                    }
                    Some(p)
                }
            };
            parsed.push(cell);
        }
        match fill_column(parsed, &mut report.filled) {
            Ok(col) => {
                symbols.push(symbol.clone());
                columns.push(col);
            }
            Err(reason) => {
                log::warn!("dropping {symbol}: {reason}");
                report.dropped.push((symbol.clone(), reason));
            }
        }
    }
    if symbols.is_empty() {
        return Err(DataError::NoAssets);
    }
    let values = (0..table.dates.len()).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    let history = MarketHistory::new(table.dates, AssetUniverse::new(symbols)?, values)?;
    Ok((history, report))
}

/// Reads a `date,X1,X2,...` covariate table; gaps follow the price rule.
pub fn load_covariates(path: &Path) -> Result<(Vec<NaiveDate>, Covariates, LoadReport), DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let table = read_table(file, None)?;
    let mut report = LoadReport::default();
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (c, name) in table.header.iter().enumerate() {
        let mut parsed = Vec::new();
        for (r, row) in table.cells.iter().enumerate() {
            parsed.push(match &row[c] {
                None => None,
                Some(text) => Some(text.parse::<f64>().map_err(|e| DataError::Parse {
                    line: r + 2,
                    message: format!("{name}: {e}"),
                })?),
            });
        }
        match fill_column(parsed, &mut report.filled) {
            Ok(col) => {
                names.push(name.clone());
                columns.push(col);
            }
            Err(reason) => report.dropped.push((name.clone(), reason)),
        }
    }
    let values = (0..table.dates.len()).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    Ok((table.dates, Covariates { names, values }, report))
}

/// Weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Parameters of a random-walk market.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMarket {
    pub n_assets: usize,
    pub n_rows: usize,
    /// Initial prices are drawn uniformly from this dollar range.
    pub initial_price: (f64, f64),
    /// Per-asset daily drift is drawn uniformly from this range.
    pub drift: (f64, f64),
    /// Per-asset daily shock half-width is drawn uniformly from this range.
    pub volatility: (f64, f64),
    /// Prices never fall below this amount.
    pub floor: Cents,
    pub start: NaiveDate,
}

impl Default for SyntheticMarket {
    fn default() -> Self {
        Self {
            n_assets: 10,
            n_rows: 120,
            initial_price: (10.0, 150.0),
            drift: (-0.003, 0.003),
            volatility: (0.005, 0.03),
            floor: Cents(100),
            start: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
        }
    }
}

impl SyntheticMarket {
    /// Multiplicative random walk with uniform shocks plus a rate covariate.
    pub fn generate(&self, seed: u64) -> MarketHistory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n_assets.max(1);
        let mut level: Vec<f64> = (0..n).map(|_| rng.gen_range(self.initial_price.0..=self.initial_price.1)).collect();
        let drift: Vec<f64> = (0..n).map(|_| rng.gen_range(self.drift.0..=self.drift.1)).collect();
        let vol: Vec<f64> = (0..n).map(|_| rng.gen_range(self.volatility.0..=self.volatility.1)).collect();
        let mut rate = rng.gen_range(0.5..5.0);
        let mut values = Vec::with_capacity(self.n_rows);
        let mut cov = Vec::with_capacity(self.n_rows);
        for r in 0..self.n_rows {
            if r > 0 {
                for a in 0..n {
                    let shock = rng.gen_range(-vol[a]..=vol[a]);
                    level[a] *= 1.0 + drift[a] + shock;
                }
                rate = (rate + rng.gen_range(-0.02f64..=0.02)).max(0.0);
            }
            values.push(
                level
                    .iter()
                    .map(|&p| Cents::from_dollars_f64(p).unwrap_or(self.floor).max(self.floor))
                    .collect(),
            );
            cov.push(vec![rate]);
        }
        let dates = business_days(self.start, self.n_rows);
        let mut h = MarketHistory::new(dates, AssetUniverse::numbered(n), values).expect("positive synthetic prices");
        h.covariates = Some(Covariates {
            names: vec!["rate".into()],
            values: cov,
        });
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Initial and target budgets are separate draws.
    #[default]
    Independent,
    /// The target starts from the initial budget.
    Same,
}

/// Distribution of generated scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub universe_size: (usize, usize),
    pub horizon: usize,
    pub fee: (Cents, Cents),
    pub budget: (Cents, Cents),
    /// Rows required before the start date.
    pub lookback: usize,
    pub budget_mode: BudgetMode,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            universe_size: (20, 50),
            horizon: 30,
            fee: (Cents::from_dollars(2), Cents::from_dollars(9)),
            budget: (Cents::from_dollars(15_000), Cents::from_dollars(350_000)),
            lookback: 48,
            budget_mode: BudgetMode::Independent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: usize,
    pub seed: u64,
    pub symbols: Vec<String>,
    pub start_date: NaiveDate,
    pub horizon: usize,
    pub fee: Cents,
    pub initial_budget: Cents,
    pub target_budget: Cents,
}

/// A scenario with its realised portfolios, enough to replay it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    #[serde(flatten)]
    pub spec: ScenarioSpec,
    pub initial_holdings: Vec<i64>,
    pub initial_cash: Cents,
    pub target_shares: Vec<i64>,
}

/// Adds uniformly chosen affordable shares until none fits.
///
/// Returns the share counts and the unspent remainder.
pub fn fill_budget(rng: &mut impl Rng, prices: &[Cents], budget: Cents) -> (Vec<i64>, Cents) {
    let mut shares = vec![0i64; prices.len()];
    let mut left = budget;
    let mut affordable: Vec<usize> = (0..prices.len()).filter(|&a| prices[a] <= left).collect();
    while !affordable.is_empty() {
        let a = affordable[rng.gen_range(0..affordable.len())];
        shares[a] += 1;
        left -= prices[a];
        affordable.retain(|&b| prices[b] <= left);
    }
    (shares, left)
}

fn draw_cents(rng: &mut impl Rng, range: (Cents, Cents)) -> Cents {
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    Cents(rng.gen_range(lo.0..=hi.0))
}

/// Draws one scenario from `history`; a pure function of its inputs.
pub fn generate_scenario(
    history: &MarketHistory,
    params: &ScenarioParams,
    id: usize,
    seed: u64,
) -> Result<(ScenarioRecord, TransitionInstance), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let available = history.universe.len();
    let (lo, hi) = params.universe_size;
    if available < lo.max(1) {
        return Err(DataError::InsufficientAssets { available, needed: lo });
    }
    let needed = params.lookback + params.horizon + 1;
    if history.n_rows() < needed {
        return Err(DataError::InsufficientHistory {
            available: history.n_rows(),
            needed,
        });
    }
    let n = rng.gen_range(lo.max(1)..=hi.max(lo).min(available));
    let mut columns = sample(&mut rng, available, n).into_vec();
    columns.sort_unstable();
    let start = rng.gen_range(params.lookback..=history.n_rows() - params.horizon - 1);
    let fee = draw_cents(&mut rng, params.fee);
    let initial_budget = draw_cents(&mut rng, params.budget);
    let y0: Vec<Cents> = columns.iter().map(|&c| history.prices.get(start, c)).collect();

    let (initial_holdings, initial_cash) = fill_budget(&mut rng, &y0, initial_budget);
    let held: Cents = y0.iter().zip(&initial_holdings).map(|(&p, &h)| p * h).sum();
    let mut target_budget = match params.budget_mode {
        BudgetMode::Independent => draw_cents(&mut rng, params.budget),
        BudgetMode::Same => initial_budget,
    };
    let target_shares = loop {
        let (t, _) = fill_budget(&mut rng, &y0, target_budget);
        let cost: Cents = y0.iter().zip(&t).map(|(&p, &m)| p * m).sum();
        if cost <= held {
            break t;
        }
        // Any budget up to the held value is affordable; stay inside the range when possible.
        let lo = params.budget.0.min(params.budget.1);
        target_budget = if held >= lo {
            Cents(rng.gen_range(lo.0..=held.0))
        } else {
            held
        };
    };
    let spec = ScenarioSpec {
        id,
        seed,
        symbols: columns.iter().map(|&c| history.universe.symbols()[c].clone()).collect(),
        start_date: history.dates[start],
        horizon: params.horizon,
        fee,
        initial_budget,
        target_budget,
    };
    let record = ScenarioRecord {
        spec,
        initial_holdings,
        initial_cash,
        target_shares,
    };
    let instance = instance_from_record(history, &record)?;
    Ok((record, instance))
}

/// Column indices of `symbols` in `history`.
pub fn columns_of(history: &MarketHistory, symbols: &[String]) -> Result<Vec<usize>, DataError> {
    symbols
        .iter()
        .map(|s| history.universe.index_of(s).ok_or_else(|| DataError::UnknownSymbol(s.clone())))
        .collect()
}

/// Rebuilds the instance a record describes.
pub fn instance_from_record(history: &MarketHistory, record: &ScenarioRecord) -> Result<TransitionInstance, DataError> {
    let spec = &record.spec;
    let columns = columns_of(history, &spec.symbols)?;
    let start = history.row_of(spec.start_date).ok_or(DataError::UnknownDate(spec.start_date))?;
    let end = start + spec.horizon + 1;
    if end > history.n_rows() {
        return Err(DataError::InsufficientHistory {
            available: history.n_rows(),
            needed: end,
        });
    }
    let prices = history.prices.slice(start..end)?.select_columns(&columns)?;
    Ok(TransitionInstance::new(
        AssetUniverse::new(spec.symbols.clone())?,
        PortfolioState::new(record.initial_holdings.clone(), record.initial_cash)?,
        TargetPortfolio::new(record.target_shares.clone())?,
        spec.horizon,
        spec.fee,
        prices,
    )?)
}

/// One JSON object per line.
pub fn write_scenarios(path: &Path, records: &[ScenarioRecord]) -> Result<(), DataError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DataError::Record(e.to_string()))?;
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn read_scenarios(path: &Path) -> Result<Vec<ScenarioRecord>, DataError> {
    let f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
