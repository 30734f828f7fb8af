//! Compact MILP trading policies and their decoding into trade plans.
//!
//! Every builder works on a [`SubProblem`]: the live state, the target, the
//! fee and a price path whose first `H` rows are trading periods and whose
//! last row values the terminal holdings. Inside the models money is in
//! dollars; plans are re-evaluated exactly in cents by [`evaluate_plan`].

use changeover_milp::{LinExpr, MilpModel, ObjectiveSense, RowSense, SolveOutcome, SolveStatus, SolverSettings, VarId, VarKind};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::domain::{
    portfolio_value, replay_plan, Cents, DomainError, PortfolioState, PriceMatrix, TargetPortfolio, TradePlan, TradeRow,
    TransitionInstance,
};

/// Per-flag objective perturbation, as a multiple of the fee.
pub const TIE_BREAK: f64 = 1e-7;
/// Largest distance from an integer accepted when decoding.
pub const DECODE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormulationError {
    #[error("no plan reaches the target holdings (final holdings >= target) with the available cash")]
    TargetInfeasible,
    #[error("solver finished with status {status:?}: {message}")]
    Solver { status: SolveStatus, message: String },
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("price path needs at least two rows, got {0}")]
    ShortPath(usize),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Inputs of one policy solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SubProblem {
    pub state: PortfolioState,
    pub target: TargetPortfolio,
    pub fee: Cents,
    /// Trading rows followed by the terminal valuation row.
    pub prices: PriceMatrix,
}

impl SubProblem {
    /// The full-horizon problem with the instance's own prices.
    pub fn from_instance(instance: &TransitionInstance) -> Self {
        Self {
            state: instance.initial.clone(),
            target: instance.target.clone(),
            fee: instance.fee,
            prices: instance.prices.slice(0..instance.horizon + 1).expect("validated instance"),
        }
    }

    /// Number of trading periods.
    pub fn periods(&self) -> usize {
        self.prices.n_periods() - 1
    }

    pub fn n_assets(&self) -> usize {
        self.state.holdings.len()
    }

    pub fn value(&self) -> Cents {
        portfolio_value(&self.state, self.prices.row(0)).expect("consistent dimensions")
    }

    pub fn partition(&self) -> DirectionalPartition {
        DirectionalPartition::new(&self.state, &self.target)
    }

    fn check(&self) -> Result<(), FormulationError> {
        if self.prices.n_periods() < 2 {
            return Err(FormulationError::ShortPath(self.prices.n_periods()));
        }
        Ok(())
    }
}

/// Buy-permitted assets (below target) and the sell-permitted rest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionalPartition {
    pub buy_set: Vec<bool>,
}

impl DirectionalPartition {
    pub fn new(state: &PortfolioState, target: &TargetPortfolio) -> Self {
        Self {
            buy_set: state.holdings.iter().zip(&target.min_shares).map(|(p, t)| p < t).collect(),
        }
    }

    pub fn may_buy(&self, asset: usize) -> bool {
        self.buy_set[asset]
    }

    pub fn may_sell(&self, asset: usize) -> bool {
        !self.buy_set[asset]
    }
}

/// Accessible-value bounds `u` and share caps `m`, one entry per trading period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigMSchedule {
    /// Upper bound on the reachable portfolio value, in dollars.
    pub u: Vec<f64>,
    pub m: Vec<i64>,
    /// `max(1, ceil(u[τ] / price[τ][a]))`, never above `m[τ]`.
    pub per_asset: Vec<Vec<i64>>,
}

/// Caps on shares traded per asset per period from the perfect-trade bound.
///
/// `u[0] = value`, then each step multiplies by the best single-asset gross
/// return, never by less than 1. `m[τ] = max(1, ceil(u[τ] / min price[τ]))`,
/// evaluated in exact rational arithmetic.
pub fn compute_big_m(prices: &PriceMatrix, value: Cents, periods: usize) -> Result<BigMSchedule, FormulationError> {
    if prices.n_periods() < periods {
        return Err(FormulationError::ShortPath(prices.n_periods()));
    }
    let rat = |c: Cents| BigRational::from_integer(BigInt::from(c.0));
    let mut u = rat(value.max(Cents::ZERO));
    let mut us = Vec::with_capacity(periods);
    let mut ms = Vec::with_capacity(periods);
    let mut per_asset = Vec::with_capacity(periods);
    let cap = |q: BigRational| {
        let m = q.ceil().to_integer();
        let m = if m < BigInt::one() { BigInt::one() } else { m };
        m.to_i64().unwrap_or(i64::MAX)
    };
    for tau in 0..periods {
        if tau > 0 {
            let mut best = BigRational::one();
            for (prev, cur) in prices.row(tau - 1).iter().zip(prices.row(tau)) {
                let r = BigRational::new(BigInt::from(cur.0), BigInt::from(prev.0));
                if r > best {
                    best = r;
                }
            }
            u *= best;
        }
        ms.push(cap(&u / rat(prices.min_in_row(tau))));
        per_asset.push(prices.row(tau).iter().map(|&y| cap(&u / rat(y))).collect());
        us.push((&u / BigRational::from_integer(BigInt::from(100))).to_f64().unwrap_or(f64::INFINITY));
    }
    Ok(BigMSchedule {
        u: us,
        m: ms,
        per_asset,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Base,
    Directional,
    Penalized,
    Naive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Penalty as a fraction of wrong-direction trade value.
    pub lambda: f64,
}

impl PolicyConfig {
    pub fn base() -> Self {
        Self {
            kind: PolicyKind::Base,
            lambda: 0.0,
        }
    }

    pub fn directional() -> Self {
        Self {
            kind: PolicyKind::Directional,
            lambda: 0.0,
        }
    }

    pub fn penalized(lambda: f64) -> Self {
        Self {
            kind: PolicyKind::Penalized,
            lambda,
        }
    }

    pub fn naive() -> Self {
        Self {
            kind: PolicyKind::Naive,
            lambda: 0.0,
        }
    }

    /// `Naive`, `Directional`, `Base` or `DirP_<percent>`.
    pub fn name(&self) -> String {
        match self.kind {
            PolicyKind::Base => "Base".into(),
            PolicyKind::Directional => "Directional".into(),
            PolicyKind::Naive => "Naive".into(),
            PolicyKind::Penalized => format!("DirP_{}", format_percent(self.lambda)),
        }
    }
}

/// `0.25 -> "25"`, `5.0 -> "500"`, `0.125 -> "12.5"`.
pub fn format_percent(lambda: f64) -> String {
    let pct = (lambda * 100.0 * 1e6).round() / 1e6;
    if pct == pct.trunc() {
        format!("{}", pct as i64)
    } else {
        format!("{pct}")
    }
}

/// Optional model variations used by cross-checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelOptions {
    /// Keep `buy flag + sell flag <= 1` per cell.
    pub symmetry_row: bool,
    /// At most one flagged period per asset and direction.
    pub once_per_direction: bool,
    /// Subtract the per-flag tie-break from the objective.
    pub tie_break: bool,
    /// Link each trade to its flag with the asset's own cap instead of the period cap.
    pub per_asset_caps: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            symmetry_row: true,
            once_per_direction: false,
            tie_break: true,
            per_asset_caps: true,
        }
    }
}

/// Handles to the trade variables of a built model.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanVars {
    pub periods: usize,
    pub n: usize,
    pub buy: Vec<Vec<VarId>>,
    pub sell: Vec<Vec<VarId>>,
    pub buy_flag: Vec<Vec<VarId>>,
    pub sell_flag: Vec<Vec<VarId>>,
    /// Holdings after each trading period.
    pub holdings: Vec<Vec<VarId>>,
    /// Cash after each trading period.
    pub cash: Vec<VarId>,
    /// No symmetry row, so a cell may both buy and sell; decode nets it.
    pub offsetting_allowed: bool,
}

#[derive(Clone, Debug)]
pub struct BuiltModel {
    pub model: MilpModel,
    pub vars: PlanVars,
    pub big_m: BigMSchedule,
    /// The problem a decoded plan is evaluated against.
    pub sub: SubProblem,
}

/// Which flag variables a builder creates as binaries.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum FlagKind {
    Binary,
    /// Continuous in [0, 1]; something else makes them integral.
    Linked,
}

/// Variables, dynamics and the base objective shared by every policy.
pub(crate) fn build_core(
    name: &str,
    sub: &SubProblem,
    big_m: &BigMSchedule,
    buy_flags: FlagKind,
    sell_flags: FlagKind,
    options: ModelOptions,
) -> Result<(MilpModel, PlanVars, LinExpr), FormulationError> {
    sub.check()?;
    let h = sub.periods();
    let n = sub.n_assets();
    let fee = sub.fee.as_dollars();
    let price = |tau: usize, a: usize| sub.prices.get(tau, a).as_dollars();
    let mut m = MilpModel::new(name);
    let mut vars = PlanVars {
        periods: h,
        n,
        buy: Vec::new(),
        sell: Vec::new(),
        buy_flag: Vec::new(),
        sell_flag: Vec::new(),
        holdings: Vec::new(),
        cash: Vec::new(),
        offsetting_allowed: !options.symmetry_row,
    };
    let flag_var = |m: &mut MilpModel, name: String, kind: FlagKind| match kind {
        FlagKind::Binary => m.add_binary(name),
        FlagKind::Linked => m.add_var(name, VarKind::Continuous, 0.0, 1.0),
    };
    for tau in 0..h {
        let cap = big_m.m[tau] as f64;
        let mut zb = Vec::new();
        let mut zs = Vec::new();
        let mut wb = Vec::new();
        let mut ws = Vec::new();
        let mut ph = Vec::new();
        for a in 0..n {
            let cap = if options.per_asset_caps { big_m.per_asset[tau][a] as f64 } else { cap };
            zb.push(m.add_var(format!("zb_{tau}_{a}"), VarKind::Integer, 0.0, cap));
            zs.push(m.add_var(format!("zs_{tau}_{a}"), VarKind::Integer, 0.0, cap));
            wb.push(flag_var(&mut m, format!("wb_{tau}_{a}"), buy_flags));
            ws.push(flag_var(&mut m, format!("ws_{tau}_{a}"), sell_flags));
            ph.push(m.add_var(format!("p_{}_{a}", tau + 1), VarKind::Continuous, 0.0, f64::INFINITY));
        }
        vars.buy.push(zb);
        vars.sell.push(zs);
        vars.buy_flag.push(wb);
        vars.sell_flag.push(ws);
        vars.holdings.push(ph);
        vars.cash.push(m.add_var(format!("c_{}", tau + 1), VarKind::Continuous, 0.0, f64::INFINITY));
    }

    for tau in 0..h {
        let mut cash_row = LinExpr::new().with(vars.cash[tau], 1.0);
        let cash_rhs = if tau == 0 {
            sub.state.cash.as_dollars()
        } else {
            cash_row.add(vars.cash[tau - 1], -1.0);
            0.0
        };
        for a in 0..n {
            let mut hold = LinExpr::new()
                .with(vars.holdings[tau][a], 1.0)
                .with(vars.buy[tau][a], -1.0)
                .with(vars.sell[tau][a], 1.0);
            let rhs = if tau == 0 {
                sub.state.holdings[a] as f64
            } else {
                hold.add(vars.holdings[tau - 1][a], -1.0);
                0.0
            };
            m.add_constraint(format!("hold_{tau}_{a}"), hold, RowSense::Eq, rhs);
            cash_row.add(vars.buy[tau][a], price(tau, a));
            cash_row.add(vars.sell[tau][a], -price(tau, a));
            cash_row.add(vars.buy_flag[tau][a], fee);
            cash_row.add(vars.sell_flag[tau][a], fee);
            let cap = if options.per_asset_caps {
                big_m.per_asset[tau][a]
            } else {
                big_m.m[tau]
            } as f64;
            m.add_constraint(
                format!("link_buy_{tau}_{a}"),
                LinExpr::new().with(vars.buy[tau][a], 1.0).with(vars.buy_flag[tau][a], -cap),
                RowSense::Le,
                0.0,
            );
            m.add_constraint(
                format!("link_sell_{tau}_{a}"),
                LinExpr::new().with(vars.sell[tau][a], 1.0).with(vars.sell_flag[tau][a], -cap),
                RowSense::Le,
                0.0,
            );
            if options.symmetry_row {
                m.add_constraint(
                    format!("one_side_{tau}_{a}"),
                    LinExpr::new().with(vars.buy_flag[tau][a], 1.0).with(vars.sell_flag[tau][a], 1.0),
                    RowSense::Le,
                    1.0,
                );
            }
        }
        m.add_constraint(format!("cash_{tau}"), cash_row, RowSense::Eq, cash_rhs);
    }
    for a in 0..n {
        m.add_constraint(
            format!("target_{a}"),
            LinExpr::from(vars.holdings[h - 1][a]),
            RowSense::Ge,
            sub.target.min_shares[a] as f64,
        );
        if options.once_per_direction {
            let mut b = LinExpr::new();
            let mut s = LinExpr::new();
            for tau in 0..h {
                b.add(vars.buy_flag[tau][a], 1.0);
                s.add(vars.sell_flag[tau][a], 1.0);
            }
            m.add_constraint(format!("once_buy_{a}"), b, RowSense::Le, 1.0);
            m.add_constraint(format!("once_sell_{a}"), s, RowSense::Le, 1.0);
        }
    }

    let flag_cost = fee + if options.tie_break { TIE_BREAK * fee } else { 0.0 };
    let mut obj = LinExpr::new().with(vars.cash[h - 1], 1.0);
    for a in 0..n {
        obj.add(vars.holdings[h - 1][a], price(h, a));
    }
    for tau in 0..h {
        for a in 0..n {
            obj.add(vars.buy_flag[tau][a], -flag_cost);
            obj.add(vars.sell_flag[tau][a], -flag_cost);
        }
    }
    Ok((m, vars, obj))
}

fn big_m_for(sub: &SubProblem) -> Result<BigMSchedule, FormulationError> {
    sub.check()?;
    compute_big_m(&sub.prices, sub.value(), sub.periods())
}

/// The unrestricted multi-period model.
pub fn build_base(sub: &SubProblem, options: ModelOptions) -> Result<BuiltModel, FormulationError> {
    let big_m = big_m_for(sub)?;
    let (mut model, vars, obj) = build_core("base", sub, &big_m, FlagKind::Binary, FlagKind::Binary, options)?;
    model.set_objective(ObjectiveSense::Maximize, obj);
    Ok(BuiltModel { model, vars, big_m, sub: sub.clone() })
}

/// Buys only below target, sells only at or above it.
pub fn build_directional(
    sub: &SubProblem,
    partition: &DirectionalPartition,
    options: ModelOptions,
) -> Result<BuiltModel, FormulationError> {
    let big_m = big_m_for(sub)?;
    let options = ModelOptions {
        symmetry_row: false,
        ..options
    };
    let (mut model, vars, obj) = build_core("directional", sub, &big_m, FlagKind::Binary, FlagKind::Binary, options)?;
    for tau in 0..vars.periods {
        for a in 0..vars.n {
            if partition.may_buy(a) {
                model.add_constraint(format!("no_sell_{tau}_{a}"), LinExpr::from(vars.sell_flag[tau][a]), RowSense::Le, 0.0);
            } else {
                model.add_constraint(format!("no_buy_{tau}_{a}"), LinExpr::from(vars.buy_flag[tau][a]), RowSense::Le, 0.0);
            }
        }
    }
    model.set_objective(ObjectiveSense::Maximize, obj);
    Ok(BuiltModel { model, vars, big_m, sub: sub.clone() })
}

/// Base model minus `lambda` times the value of wrong-direction trades.
pub fn build_penalized(
    sub: &SubProblem,
    partition: &DirectionalPartition,
    lambda: f64,
    options: ModelOptions,
) -> Result<BuiltModel, FormulationError> {
    let big_m = big_m_for(sub)?;
    let (mut model, vars, mut obj) = build_core("penalized", sub, &big_m, FlagKind::Binary, FlagKind::Binary, options)?;
    if lambda != 0.0 {
        for tau in 0..vars.periods {
            for a in 0..vars.n {
                let y = sub.prices.get(tau, a).as_dollars();
                let wrong = if partition.may_buy(a) { vars.sell[tau][a] } else { vars.buy[tau][a] };
                obj.add(wrong, -lambda * y);
            }
        }
    }
    model.set_objective(ObjectiveSense::Maximize, obj);
    Ok(BuiltModel { model, vars, big_m, sub: sub.clone() })
}

/// Single-period transition at today's prices.
pub fn build_naive(sub: &SubProblem, options: ModelOptions) -> Result<BuiltModel, FormulationError> {
    sub.check()?;
    let naive = naive_subproblem(sub)?;
    let big_m = compute_big_m(&naive.prices, naive.value(), 1)?;
    let options = ModelOptions {
        symmetry_row: false,
        ..options
    };
    let (mut model, vars, obj) = build_core("naive", &naive, &big_m, FlagKind::Binary, FlagKind::Binary, options)?;
    model.set_objective(ObjectiveSense::Maximize, obj);
    Ok(BuiltModel {
        model,
        vars,
        big_m,
        sub: naive,
    })
}

/// Same state and target, one trading period valued at today's prices.
pub fn naive_subproblem(sub: &SubProblem) -> Result<SubProblem, FormulationError> {
    let row = sub.prices.slice(0..1)?;
    Ok(SubProblem {
        prices: row.stacked(&row)?,
        ..sub.clone()
    })
}

fn round_integral(x: f64, what: &str) -> Result<i64, FormulationError> {
    let r = x.round();
    if (x - r).abs() > DECODE_TOL {
        return Err(FormulationError::Decode(format!("{what} = {x} is not integral")));
    }
    Ok(r as i64)
}

/// Rounds an assignment into a validated [`TradePlan`].
///
/// Flags whose magnitude decodes to zero are cleared.
pub fn decode(outcome: &SolveOutcome, vars: &PlanVars) -> Result<TradePlan, FormulationError> {
    if !outcome.status.has_solution() {
        return Err(FormulationError::Decode(format!("status {:?} carries no assignment", outcome.status)));
    }
    let mut rows = Vec::with_capacity(vars.periods);
    for tau in 0..vars.periods {
        let mut row = TradeRow::zero(vars.n);
        for a in 0..vars.n {
            let zb = round_integral(outcome.value(vars.buy[tau][a]), "buy")?;
            let zs = round_integral(outcome.value(vars.sell[tau][a]), "sell")?;
            let wb = round_integral(outcome.value(vars.buy_flag[tau][a]), "buy flag")?;
            let ws = round_integral(outcome.value(vars.sell_flag[tau][a]), "sell flag")?;
            if zb < 0 || zs < 0 || !(0..=1).contains(&wb) || !(0..=1).contains(&ws) {
                return Err(FormulationError::Decode(format!("out-of-range value at period {tau}, asset {a}")));
            }
            let (zb, zs) = if vars.offsetting_allowed {
                let both = zb.min(zs);
                (zb - both, zs - both)
            } else {
                (zb, zs)
            };
            row.buys[a] = zb;
            row.sells[a] = zs;
            row.buy_flags[a] = wb == 1 && zb > 0;
            row.sell_flags[a] = ws == 1 && zs > 0;
        }
        row.validate().map_err(|e| FormulationError::Decode(e.to_string()))?;
        rows.push(row);
    }
    Ok(TradePlan { rows })
}

/// Exact economics of a plan on a sub-problem's price path.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanValue {
    pub final_state: PortfolioState,
    pub terminal_value: Cents,
    pub flags: i64,
    /// Value of trades against the live partition.
    pub wrong_value: Cents,
    /// `terminal_value - fee * flags`, in dollars.
    pub objective: f64,
}

impl PlanValue {
    /// Objective with the wrong-direction penalty at `lambda`.
    pub fn penalized_objective(&self, lambda: f64) -> f64 {
        self.objective - lambda * self.wrong_value.as_dollars()
    }
}

pub fn evaluate_plan(sub: &SubProblem, plan: &TradePlan) -> Result<PlanValue, FormulationError> {
    let replay = replay_plan(&sub.state, plan, &sub.prices, sub.fee)?;
    let partition = sub.partition();
    let mut wrong = Cents::ZERO;
    for (tau, row) in plan.rows.iter().enumerate() {
        for a in 0..row.len() {
            let q = if partition.may_buy(a) { row.sells[a] } else { row.buys[a] };
            wrong += sub.prices.get(tau, a) * q;
        }
    }
    let objective = (replay.terminal_value - sub.fee * replay.flags).as_dollars();
    Ok(PlanValue {
        final_state: replay.final_state().clone(),
        terminal_value: replay.terminal_value,
        flags: replay.flags,
        wrong_value: wrong,
        objective,
    })
}

/// A solved policy: plan, its exact value and the solver report.
#[derive(Clone, Debug)]
pub struct PolicySolution {
    pub plan: TradePlan,
    pub value: PlanValue,
    pub outcome: SolveOutcome,
    pub big_m: BigMSchedule,
}

/// Solves a built model and decodes its plan.
pub fn solve_built(built: &BuiltModel, settings: &SolverSettings) -> Result<PolicySolution, FormulationError> {
    let outcome = changeover_milp::solve(&built.model, settings);
    match outcome.status {
        SolveStatus::Infeasible => return Err(FormulationError::TargetInfeasible),
        SolveStatus::Error => {
            return Err(FormulationError::Solver {
                status: outcome.status,
                message: outcome.message.clone().unwrap_or_default(),
            })
        }
        SolveStatus::Optimal | SolveStatus::TimeLimitFeasible => {}
    }
    let plan = decode(&outcome, &built.vars)?;
    let value = evaluate_plan(&built.sub, &plan)?;
    Ok(PolicySolution {
        plan,
        value,
        outcome,
        big_m: built.big_m.clone(),
    })
}

/// Builds and solves `policy` on `sub`.
pub fn solve_policy(
    sub: &SubProblem,
    policy: &PolicyConfig,
    options: ModelOptions,
    settings: &SolverSettings,
) -> Result<PolicySolution, FormulationError> {
    let partition = sub.partition();
    let built = match policy.kind {
        PolicyKind::Base => build_base(sub, options)?,
        PolicyKind::Directional => build_directional(sub, &partition, options)?,
        PolicyKind::Penalized => build_penalized(sub, &partition, policy.lambda, options)?,
        PolicyKind::Naive => build_naive(sub, options)?,
    };
    solve_built(&built, settings)
}
