//! Value types shared by every module, plus the exact accounting rules.
//!
//! Money is carried as integer cents ([`Cents`]) so that the no-leverage
//! boundary `cash >= 0` is never crossed through rounding. Optimisation
//! models work in floating-point dollars and are converted back through
//! integer share counts, which keeps every executed state exact.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("asset universe is empty")]
    EmptyUniverse,
    #[error("duplicate asset symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("price at row {row}, column {col} is not positive ({value})")]
    NonPositivePrice { row: usize, col: usize, value: Cents },
    #[error("price matrix has no rows")]
    EmptyPrices,
    #[error("price matrix has {rows} rows but horizon {horizon} needs {needed}")]
    ShortPriceMatrix { rows: usize, horizon: usize, needed: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("negative value in {0}")]
    Negative(&'static str),
    #[error("target costs {target_cost} at current prices but only {holdings_value} is held in shares")]
    Unaffordable { target_cost: Cents, holdings_value: Cents },
    #[error("infeasible trade: {constraint} violated ({detail})")]
    InfeasibleTrade { constraint: &'static str, detail: String },
    #[error("invalid trade row: {0}")]
    InvalidTradeRow(String),
    #[error("cannot parse `{0}` as a currency amount")]
    BadAmount(String),
}

pub type Result<T, E = DomainError> = std::result::Result<T, E>;

/// An exact currency amount in hundredths of a dollar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    pub fn from_dollars(dollars: i64) -> Self {
        Cents(dollars * 100)
    }

    /// Nearest cent to `d`, halves rounded away from zero.
    pub fn from_decimal(d: Decimal) -> Option<Self> {
        (d * Decimal::ONE_HUNDRED)
            .round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero)
            .to_i64()
            .map(Cents)
    }

    /// Nearest cent to a floating-point dollar amount.
    pub fn from_dollars_f64(dollars: f64) -> Option<Self> {
        Decimal::from_f64_retain(dollars).and_then(Self::from_decimal)
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }
}

impl FromStr for Cents {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Decimal::from_str(t)
            .or_else(|_| Decimal::from_scientific(t))
            .ok()
            .and_then(Cents::from_decimal)
            .ok_or_else(|| DomainError::BadAmount(s.to_string()))
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", a / 100, a % 100)
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, rhs: Cents) -> Cents {
        Cents(self.0 - rhs.0)
    }
}

impl Neg for Cents {
    type Output = Cents;
    fn neg(self) -> Cents {
        Cents(-self.0)
    }
}

impl Mul<i64> for Cents {
    type Output = Cents;
    fn mul(self, rhs: i64) -> Cents {
        Cents(self.0 * rhs)
    }
}

impl AddAssign for Cents {
    fn add_assign(&mut self, rhs: Cents) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Cents {
    fn sub_assign(&mut self, rhs: Cents) {
        self.0 -= rhs.0;
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        Cents(iter.map(|c| c.0).sum())
    }
}

/// The ordered set of tradable assets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetUniverse {
    symbols: Vec<String>,
}

impl AssetUniverse {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(DomainError::EmptyUniverse);
        }
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(DomainError::DuplicateSymbol(s.clone()));
            }
        }
        Ok(Self { symbols })
    }

    /// Symbols `A0`, `A1`, ...
    pub fn numbered(n: usize) -> Self {
        Self {
            symbols: (0..n.max(1)).map(|i| format!("A{i}")).collect(),
        }
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

/// Strictly positive per-share prices, one row per period.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceMatrix {
    values: Vec<Vec<Cents>>,
    labels: Vec<String>,
}

impl PriceMatrix {
    pub fn new(values: Vec<Vec<Cents>>, labels: Vec<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(DomainError::EmptyPrices);
        }
        if labels.len() != values.len() {
            return Err(DomainError::DimensionMismatch {
                what: "period labels",
                expected: values.len(),
                got: labels.len(),
            });
        }
        let n = values[0].len();
        if n == 0 {
            return Err(DomainError::EmptyUniverse);
        }
        for (r, row) in values.iter().enumerate() {
            if row.len() != n {
                return Err(DomainError::DimensionMismatch {
                    what: "price row",
                    expected: n,
                    got: row.len(),
                });
            }
            if let Some(c) = row.iter().position(|p| !p.is_positive()) {
                return Err(DomainError::NonPositivePrice { row: r, col: c, value: row[c] });
            }
        }
        Ok(Self { values, labels })
    }

    /// Rows labelled by their index.
    pub fn unlabelled(values: Vec<Vec<Cents>>) -> Result<Self> {
        let labels = (0..values.len()).map(|i| i.to_string()).collect();
        Self::new(values, labels)
    }

    pub fn n_periods(&self) -> usize {
        self.values.len()
    }

    pub fn n_assets(&self) -> usize {
        self.values[0].len()
    }

    pub fn row(&self, period: usize) -> &[Cents] {
        &self.values[period]
    }

    pub fn rows(&self) -> &[Vec<Cents>] {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, period: usize, asset: usize) -> Cents {
        self.values[period][asset]
    }

    /// Rows `range` as a new matrix.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.values[range.clone()].to_vec(), self.labels[range].to_vec())
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        let values = self.values.iter().map(|r| columns.iter().map(|&c| r[c]).collect()).collect();
        Self::new(values, self.labels.clone())
    }

    /// `self` followed by the rows of `other`.
    pub fn stacked(&self, other: &PriceMatrix) -> Result<Self> {
        let mut values = self.values.clone();
        values.extend(other.values.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        Self::new(values, labels)
    }

    pub fn min_in_row(&self, period: usize) -> Cents {
        *self.values[period].iter().min().expect("non-empty row")
    }
}

/// Whole-share holdings plus cash.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortfolioState {
    pub holdings: Vec<i64>,
    pub cash: Cents,
}

impl PortfolioState {
    pub fn new(holdings: Vec<i64>, cash: Cents) -> Result<Self> {
        if holdings.iter().any(|&h| h < 0) {
            return Err(DomainError::Negative("holdings"));
        }
        if cash < Cents::ZERO {
            return Err(DomainError::Negative("cash"));
        }
        Ok(Self { holdings, cash })
    }

    pub fn cash_only(n: usize, cash: Cents) -> Self {
        Self {
            holdings: vec![0; n],
            cash,
        }
    }
}

/// Minimum share count per asset at the end of the horizon.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetPortfolio {
    pub min_shares: Vec<i64>,
}

impl TargetPortfolio {
    pub fn new(min_shares: Vec<i64>) -> Result<Self> {
        if min_shares.iter().any(|&m| m < 0) {
            return Err(DomainError::Negative("target"));
        }
        Ok(Self { min_shares })
    }
}

/// One trading period: buy and sell magnitudes with their fee flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRow {
    pub buys: Vec<i64>,
    pub sells: Vec<i64>,
    pub buy_flags: Vec<bool>,
    pub sell_flags: Vec<bool>,
}

impl TradeRow {
    pub fn zero(n: usize) -> Self {
        Self {
            buys: vec![0; n],
            sells: vec![0; n],
            buy_flags: vec![false; n],
            sell_flags: vec![false; n],
        }
    }

    /// Row whose flags are set exactly where a magnitude is positive.
    pub fn from_net(net: &[i64]) -> Self {
        let buys: Vec<i64> = net.iter().map(|&z| z.max(0)).collect();
        let sells: Vec<i64> = net.iter().map(|&z| (-z).max(0)).collect();
        Self {
            buy_flags: buys.iter().map(|&b| b > 0).collect(),
            sell_flags: sells.iter().map(|&s| s > 0).collect(),
            buys,
            sells,
        }
    }

    pub fn len(&self) -> usize {
        self.buys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buys.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buys.len();
        for (what, len) in [
            ("sells", self.sells.len()),
            ("buy flags", self.buy_flags.len()),
            ("sell flags", self.sell_flags.len()),
        ] {
            if len != n {
                return Err(DomainError::InvalidTradeRow(format!("{what} has length {len}, expected {n}")));
            }
        }
        for a in 0..n {
            if self.buys[a] < 0 || self.sells[a] < 0 {
                return Err(DomainError::InvalidTradeRow(format!("negative magnitude at asset {a}")));
            }
            if self.buys[a] > 0 && !self.buy_flags[a] {
                return Err(DomainError::InvalidTradeRow(format!("buy without flag at asset {a}")));
            }
            if self.sells[a] > 0 && !self.sell_flags[a] {
                return Err(DomainError::InvalidTradeRow(format!("sell without flag at asset {a}")));
            }
            if self.buy_flags[a] && self.sell_flags[a] {
                return Err(DomainError::InvalidTradeRow(format!("buy and sell flags both set at asset {a}")));
            }
        }
        Ok(())
    }

    /// Number of fee-bearing actions in the row.
    pub fn flag_count(&self) -> i64 {
        self.buy_flags.iter().chain(&self.sell_flags).filter(|&&f| f).count() as i64
    }

    pub fn net(&self, asset: usize) -> i64 {
        self.buys[asset] - self.sells[asset]
    }

    pub fn is_idle(&self) -> bool {
        self.flag_count() == 0 && self.buys.iter().chain(&self.sells).all(|&z| z == 0)
    }
}

/// Trades over the remaining horizon, first row executes now.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradePlan {
    pub rows: Vec<TradeRow>,
}

impl TradePlan {
    pub fn idle(periods: usize, n: usize) -> Self {
        Self {
            rows: vec![TradeRow::zero(n); periods],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rows.iter().try_for_each(TradeRow::validate)
    }

    pub fn total_flags(&self) -> i64 {
        self.rows.iter().map(TradeRow::flag_count).sum()
    }

    pub fn is_idle(&self) -> bool {
        self.rows.iter().all(TradeRow::is_idle)
    }

    /// Largest single-period magnitude in either direction per period.
    pub fn max_volume_per_period(&self) -> Vec<i64> {
        self.rows
            .iter()
            .map(|r| r.buys.iter().chain(&r.sells).copied().max().unwrap_or(0))
            .collect()
    }
}

/// One solvable changeover problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionInstance {
    pub universe: AssetUniverse,
    pub initial: PortfolioState,
    pub target: TargetPortfolio,
    /// Number of trading periods; prices run from period 0 to period `horizon`.
    pub horizon: usize,
    /// Charged once per executed buy and once per executed sell.
    pub fee: Cents,
    /// Realised prices, row 0 is known at the start.
    pub prices: PriceMatrix,
}

impl TransitionInstance {
    pub fn new(
        universe: AssetUniverse,
        initial: PortfolioState,
        target: TargetPortfolio,
        horizon: usize,
        fee: Cents,
        prices: PriceMatrix,
    ) -> Result<Self> {
        let n = universe.len();
        for (what, got) in [
            ("initial holdings", initial.holdings.len()),
            ("target", target.min_shares.len()),
            ("price columns", prices.n_assets()),
        ] {
            if got != n {
                return Err(DomainError::DimensionMismatch { what, expected: n, got });
            }
        }
        if horizon == 0 {
            return Err(DomainError::ZeroHorizon);
        }
        if prices.n_periods() < horizon + 1 {
            return Err(DomainError::ShortPriceMatrix {
                rows: prices.n_periods(),
                horizon,
                needed: horizon + 1,
            });
        }
        if fee < Cents::ZERO {
            return Err(DomainError::Negative("fee"));
        }
        let initial = PortfolioState::new(initial.holdings, initial.cash)?;
        let target = TargetPortfolio::new(target.min_shares)?;
        let y0 = prices.row(0);
        let target_cost: Cents = y0.iter().zip(&target.min_shares).map(|(&p, &m)| p * m).sum();
        let holdings_value: Cents = y0.iter().zip(&initial.holdings).map(|(&p, &h)| p * h).sum();
        let v0 = holdings_value + initial.cash;
        if target_cost + initial.cash > v0 {
            return Err(DomainError::Unaffordable { target_cost, holdings_value });
        }
        Ok(Self {
            universe,
            initial,
            target,
            horizon,
            fee,
            prices,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.universe.len()
    }

    pub fn initial_value(&self) -> Cents {
        portfolio_value(&self.initial, self.prices.row(0)).expect("validated dimensions")
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DomainError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// `prices · holdings + cash`.
pub fn portfolio_value(state: &PortfolioState, prices: &[Cents]) -> Result<Cents> {
    check_len("price row", state.holdings.len(), prices.len())?;
    Ok(prices.iter().zip(&state.holdings).map(|(&p, &h)| p * h).sum::<Cents>() + state.cash)
}

/// Executes one row of trades at `prices`, paying `fee` per set flag.
pub fn apply_trades(state: &PortfolioState, trades: &TradeRow, prices: &[Cents], fee: Cents) -> Result<PortfolioState> {
    let n = state.holdings.len();
    check_len("trade row", n, trades.len())?;
    check_len("price row", n, prices.len())?;
    trades.validate()?;
    let mut holdings = state.holdings.clone();
    let mut cash = state.cash;
    for a in 0..n {
        let z = trades.net(a);
        holdings[a] += z;
        cash -= prices[a] * z;
    }
    cash -= fee * trades.flag_count();
    if let Some(a) = holdings.iter().position(|&h| h < 0) {
        return Err(DomainError::InfeasibleTrade {
            constraint: "no short-selling",
            detail: format!("asset {a} would hold {} shares", holdings[a]),
        });
    }
    if cash < Cents::ZERO {
        return Err(DomainError::InfeasibleTrade {
            constraint: "no leverage",
            detail: format!("cash would be {cash}"),
        });
    }
    Ok(PortfolioState { holdings, cash })
}

/// True when every holding meets its minimum.
pub fn satisfies_target(state: &PortfolioState, target: &TargetPortfolio) -> Result<bool> {
    check_len("target", state.holdings.len(), target.min_shares.len())?;
    Ok(state.holdings.iter().zip(&target.min_shares).all(|(h, m)| h >= m))
}

/// Exact outcome of following a whole plan along a price path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanReplay {
    /// States before each row and after the last one.
    pub states: Vec<PortfolioState>,
    pub flags: i64,
    /// Value of the final state at the price row following the last trade row.
    pub terminal_value: Cents,
}

impl PlanReplay {
    pub fn final_state(&self) -> &PortfolioState {
        self.states.last().expect("at least the initial state")
    }
}

/// Applies `plan.rows[i]` at `prices.row(i)` and values the result at the
/// row after the last trade.
pub fn replay_plan(initial: &PortfolioState, plan: &TradePlan, prices: &PriceMatrix, fee: Cents) -> Result<PlanReplay> {
    if prices.n_periods() < plan.rows.len() + 1 {
        return Err(DomainError::ShortPriceMatrix {
            rows: prices.n_periods(),
            horizon: plan.rows.len(),
            needed: plan.rows.len() + 1,
        });
    }
    let mut states = vec![initial.clone()];
    for (i, row) in plan.rows.iter().enumerate() {
        let next = apply_trades(states.last().unwrap(), row, prices.row(i), fee)?;
        states.push(next);
    }
    let terminal_value = portfolio_value(states.last().unwrap(), prices.row(plan.rows.len()))?;
    Ok(PlanReplay {
        states,
        flags: plan.total_flags(),
        terminal_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: i64) -> Cents {
        Cents(x)
    }

    #[test]
    fn parses_decimal_prices_half_up() {
        assert_eq!("12.345".parse::<Cents>().unwrap(), c(1235));
        assert_eq!("12.344".parse::<Cents>().unwrap(), c(1234));
        assert_eq!(" 7 ".parse::<Cents>().unwrap(), c(700));
        assert_eq!("0.005".parse::<Cents>().unwrap(), c(1));
        assert_eq!("1e2".parse::<Cents>().unwrap(), c(10000));
        assert!("abc".parse::<Cents>().is_err());
        assert_eq!(c(-1205).to_string(), "-12.05");
        assert_eq!(c(7).to_string(), "0.07");
    }

    #[test]
    fn value_of_cash_only_state() {
        let s = PortfolioState::cash_only(3, c(1234));
        assert_eq!(portfolio_value(&s, &[c(1), c(2), c(3)]).unwrap(), c(1234));
    }

    #[test]
    fn value_two_shares_plus_cash() {
        let s = PortfolioState::new(vec![2], Cents::from_dollars(5)).unwrap();
        assert_eq!(portfolio_value(&s, &[Cents::from_dollars(10)]).unwrap(), Cents::from_dollars(25));
        assert!(portfolio_value(&s, &[c(1), c(2)]).is_err());
    }

    #[test]
    fn buy_two_with_fee() {
        let s = PortfolioState::new(vec![0], Cents::from_dollars(30)).unwrap();
        let row = TradeRow::from_net(&[2]);
        let out = apply_trades(&s, &row, &[Cents::from_dollars(10)], Cents::from_dollars(2)).unwrap();
        assert_eq!(out.holdings, vec![2]);
        assert_eq!(out.cash, Cents::from_dollars(8));
    }

    #[test]
    fn zero_trades_is_identity() {
        let s = PortfolioState::new(vec![4, 1], c(999)).unwrap();
        let out = apply_trades(&s, &TradeRow::zero(2), &[c(100), c(200)], c(300)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn infeasible_trades_name_the_constraint() {
        let s = PortfolioState::new(vec![1], c(100)).unwrap();
        match apply_trades(&s, &TradeRow::from_net(&[-2]), &[c(50)], c(0)) {
            Err(DomainError::InfeasibleTrade { constraint, .. }) => assert_eq!(constraint, "no short-selling"),
            other => panic!("{other:?}"),
        }
        match apply_trades(&s, &TradeRow::from_net(&[2]), &[c(50)], c(1)) {
            Err(DomainError::InfeasibleTrade { constraint, .. }) => assert_eq!(constraint, "no leverage"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flag_without_magnitude_still_pays_the_fee() {
        let s = PortfolioState::new(vec![1], c(100)).unwrap();
        let mut row = TradeRow::zero(1);
        row.sell_flags[0] = true;
        let out = apply_trades(&s, &row, &[c(50)], c(30)).unwrap();
        assert_eq!(out.cash, c(70));
    }

    #[test]
    fn trade_row_invariants() {
        let mut row = TradeRow::from_net(&[3, -1]);
        assert!(row.validate().is_ok());
        row.buy_flags[0] = false;
        assert!(row.validate().is_err());
        let mut row = TradeRow::zero(1);
        row.buy_flags[0] = true;
        row.sell_flags[0] = true;
        assert!(row.validate().is_err());
    }

    #[test]
    fn target_checks() {
        let t = TargetPortfolio::new(vec![3, 1]).unwrap();
        let s = |h: Vec<i64>| PortfolioState::new(h, c(0)).unwrap();
        assert!(satisfies_target(&s(vec![3, 1]), &t).unwrap());
        assert!(!satisfies_target(&s(vec![3, 0]), &t).unwrap());
        assert!(satisfies_target(&s(vec![5, 2]), &TargetPortfolio::new(vec![0, 0]).unwrap()).unwrap());
        assert!(satisfies_target(&s(vec![1]), &t).is_err());
    }

    #[test]
    fn instance_rejects_unaffordable_target() {
        let prices = PriceMatrix::unlabelled(vec![vec![c(1000), c(500)]; 3]).unwrap();
        let err = TransitionInstance::new(
            AssetUniverse::numbered(2),
            PortfolioState::new(vec![1, 0], c(10_000)).unwrap(),
            TargetPortfolio::new(vec![0, 3]).unwrap(),
            2,
            c(100),
            prices.clone(),
        )
        .unwrap_err();
        assert!(matches!(err, DomainError::Unaffordable { .. }));
        let short = TransitionInstance::new(
            AssetUniverse::numbered(2),
            PortfolioState::new(vec![1, 0], c(0)).unwrap(),
            TargetPortfolio::new(vec![0, 2]).unwrap(),
            3,
            c(100),
            prices,
        );
        assert!(matches!(short, Err(DomainError::ShortPriceMatrix { .. })));
    }

    #[test]
    fn price_matrix_validation() {
        assert!(PriceMatrix::unlabelled(vec![]).is_err());
        assert!(PriceMatrix::unlabelled(vec![vec![c(1), c(0)]]).is_err());
        assert!(PriceMatrix::unlabelled(vec![vec![c(1), c(2)], vec![c(1)]]).is_err());
        let m = PriceMatrix::unlabelled(vec![vec![c(3), c(2)], vec![c(5), c(7)]]).unwrap();
        assert_eq!(m.min_in_row(0), c(2));
        assert_eq!(m.select_columns(&[1]).unwrap().row(1), &[c(7)]);
        assert_eq!(m.stacked(&m).unwrap().n_periods(), 4);
    }

    #[test]
    fn universe_rejects_duplicates() {
        assert!(AssetUniverse::new(vec!["X".into(), "X".into()]).is_err());
        assert!(AssetUniverse::new(vec![]).is_err());
        assert_eq!(AssetUniverse::numbered(2).index_of("A1"), Some(1));
    }

    /// Re-applies a trade row one share at a time.
    fn unit_share_replay(state: &PortfolioState, row: &TradeRow, prices: &[Cents], fee: Cents) -> PortfolioState {
        let mut h = state.holdings.clone();
        let mut cash = state.cash.0;
        for a in 0..h.len() {
            for _ in 0..row.sells[a] {
                h[a] -= 1;
                cash += prices[a].0;
            }
            for _ in 0..row.buys[a] {
                h[a] += 1;
                cash -= prices[a].0;
            }
            if row.buy_flags[a] {
                cash -= fee.0;
            }
            if row.sell_flags[a] {
                cash -= fee.0;
            }
        }
        PortfolioState { holdings: h, cash: Cents(cash) }
    }

    fn arb_case() -> impl Strategy<Value = (Vec<i64>, i64, Vec<i64>, Vec<i64>, i64)> {
        (1usize..5).prop_flat_map(|n| {
            (
                prop::collection::vec(0i64..20, n),
                0i64..200_000,
                prop::collection::vec(1i64..5_000, n),
                prop::collection::vec(-20i64..20, n),
                0i64..900,
            )
        })
    }

    proptest! {
        #[test]
        fn value_matches_scalar_loop((h, cash, p, _, _) in arb_case()) {
            let prices: Vec<Cents> = p.iter().map(|&x| Cents(x)).collect();
            let s = PortfolioState::new(h.clone(), Cents(cash)).unwrap();
            let mut total = cash;
            for i in 0..h.len() {
                total += h[i] * p[i];
            }
            prop_assert_eq!(portfolio_value(&s, &prices).unwrap(), Cents(total));
        }

        #[test]
        fn apply_matches_unit_share_replay((h, cash, p, z, fee) in arb_case()) {
            let prices: Vec<Cents> = p.iter().map(|&x| Cents(x)).collect();
            let s = PortfolioState::new(h, Cents(cash)).unwrap();
            let row = TradeRow::from_net(&z);
            let oracle = unit_share_replay(&s, &row, &prices, Cents(fee));
            match apply_trades(&s, &row, &prices, Cents(fee)) {
                Ok(out) => prop_assert_eq!(out, oracle),
                Err(_) => prop_assert!(oracle.cash < Cents::ZERO || oracle.holdings.iter().any(|&x| x < 0)),
            }
        }

        #[test]
        fn value_conserved_up_to_fees_at_constant_prices((h, cash, p, z, fee) in arb_case()) {
            let prices: Vec<Cents> = p.iter().map(|&x| Cents(x)).collect();
            let s = PortfolioState::new(h, Cents(cash)).unwrap();
            let row = TradeRow::from_net(&z);
            if let Ok(out) = apply_trades(&s, &row, &prices, Cents(fee)) {
                let before = portfolio_value(&s, &prices).unwrap();
                let after = portfolio_value(&out, &prices).unwrap();
                prop_assert_eq!(before - after, Cents(fee) * row.flag_count());
            }
        }

        #[test]
        fn asset_order_does_not_matter((h, cash, p, z, fee) in arb_case()) {
            let n = h.len();
            let rev = |v: &[i64]| v.iter().rev().copied().collect::<Vec<_>>();
            let prices: Vec<Cents> = p.iter().map(|&x| Cents(x)).collect();
            let rprices: Vec<Cents> = prices.iter().rev().copied().collect();
            let s = PortfolioState::new(h.clone(), Cents(cash)).unwrap();
            let rs = PortfolioState::new(rev(&h), Cents(cash)).unwrap();
            let a = apply_trades(&s, &TradeRow::from_net(&z), &prices, Cents(fee));
            let b = apply_trades(&rs, &TradeRow::from_net(&rev(&z)), &rprices, Cents(fee));
            match (a, b) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x.cash, y.cash);
                    prop_assert_eq!(x.holdings, (0..n).map(|i| y.holdings[n - 1 - i]).collect::<Vec<_>>());
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "order changed feasibility"),
            }
        }

        #[test]
        fn adding_shares_keeps_target_satisfied(h in prop::collection::vec(0i64..10, 3), t in prop::collection::vec(0i64..10, 3), extra in prop::collection::vec(0i64..5, 3)) {
            let target = TargetPortfolio::new(t).unwrap();
            let s = PortfolioState::new(h.clone(), Cents(0)).unwrap();
            let more = PortfolioState::new(h.iter().zip(&extra).map(|(a, b)| a + b).collect(), Cents(0)).unwrap();
            if satisfies_target(&s, &target).unwrap() {
                prop_assert!(satisfies_target(&more, &target).unwrap());
            }
        }
    }
}
