//! Pattern-enumeration master problems.
//!
//! A pattern fixes, for each asset in its scope, the single period in which
//! that asset is bought (or sold), or that it is never acted on. Selecting
//! exactly one pattern per group decides all fee flags of that direction;
//! trade magnitudes stay ordinary integer variables.

use changeover_milp::{LinExpr, MilpModel, ObjectiveSense, RowSense, SolverSettings, VarId, VarKind};
use serde::{Deserialize, Serialize};

use crate::domain::{PortfolioState, TargetPortfolio};
use crate::formulations::{
    build_core, compute_big_m, solve_built, BuiltModel, FlagKind, FormulationError, ModelOptions, PolicySolution, SubProblem,
};

/// Default ceiling on the number of jointly enumerated patterns.
pub const DEFAULT_PATTERN_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ColGenError {
    #[error("{count} joint patterns exceed the cap of {cap}; use per-asset decomposition instead")]
    TooManyPatterns { count: u128, cap: usize },
    #[error("cap must be at least 1")]
    ZeroCap,
    #[error("pattern group has horizon {got}, model has {expected} periods")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("a pattern group is empty")]
    EmptyGroup,
    #[error(transparent)]
    Formulation(#[from] FormulationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Buy,
    Sell,
}

/// When each scoped asset is acted on, if at all.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionPattern {
    pub direction: Direction,
    pub horizon: usize,
    pub scope: Vec<usize>,
    /// `days[i]` is the period for `scope[i]`.
    pub days: Vec<Option<usize>>,
}

impl ActionPattern {
    pub fn never(direction: Direction, scope: Vec<usize>, horizon: usize) -> Self {
        let days = vec![None; scope.len()];
        Self {
            direction,
            horizon,
            scope,
            days,
        }
    }

    pub fn is_never(&self) -> bool {
        self.days.iter().all(Option::is_none)
    }

    pub fn acts(&self, period: usize, asset: usize) -> bool {
        self.scope.iter().zip(&self.days).any(|(&a, &d)| a == asset && d == Some(period))
    }

    pub fn day_of(&self, asset: usize) -> Option<usize> {
        self.scope.iter().position(|&a| a == asset).and_then(|i| self.days[i])
    }

    /// Dense `horizon x n` schedule.
    pub fn schedule(&self, n: usize) -> Vec<Vec<bool>> {
        let mut s = vec![vec![false; n]; self.horizon];
        for (&a, &d) in self.scope.iter().zip(&self.days) {
            if let Some(d) = d {
                s[d][a] = true;
            }
        }
        s
    }
}

/// `(horizon + 1)^k`, or `None` on overflow.
pub fn count_patterns(k: usize, horizon: usize) -> Option<u128> {
    (horizon as u128 + 1).checked_pow(k as u32)
}

/// Every joint pattern over `assets`, the never-act pattern first.
pub fn enumerate_patterns(
    direction: Direction,
    assets: &[usize],
    horizon: usize,
    cap: usize,
) -> Result<Vec<ActionPattern>, ColGenError> {
    if cap == 0 {
        return Err(ColGenError::ZeroCap);
    }
    let count = count_patterns(assets.len(), horizon).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(ColGenError::TooManyPatterns { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    // mixed-radix counter, digit `horizon` meaning "never"
    let mut digits = vec![horizon; assets.len()];
    loop {
        out.push(ActionPattern {
            direction,
            horizon,
            scope: assets.to_vec(),
            days: digits.iter().map(|&d| (d < horizon).then_some(d)).collect(),
        });
        let mut i = 0;
        loop {
            if i == digits.len() {
                return Ok(out);
            }
            digits[i] = if digits[i] == horizon { 0 } else { digits[i] + 1 };
            if digits[i] != horizon {
                break;
            }
            i += 1;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnumerationMode {
    /// One convexity row per direction covering all relevant assets.
    Joint,
    /// One convexity row per asset and direction.
    #[default]
    PerAsset,
}

/// Patterns sharing one convexity row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternGroup {
    pub direction: Direction,
    pub scope: Vec<usize>,
    pub patterns: Vec<ActionPattern>,
}

pub fn enumerate_groups(
    direction: Direction,
    assets: &[usize],
    horizon: usize,
    mode: EnumerationMode,
    cap: usize,
) -> Result<Vec<PatternGroup>, ColGenError> {
    match mode {
        EnumerationMode::Joint => Ok(vec![PatternGroup {
            direction,
            scope: assets.to_vec(),
            patterns: enumerate_patterns(direction, assets, horizon, cap)?,
        }]),
        EnumerationMode::PerAsset => assets
            .iter()
            .map(|&a| {
                Ok(PatternGroup {
                    direction,
                    scope: vec![a],
                    patterns: enumerate_patterns(direction, &[a], horizon, cap)?,
                })
            })
            .collect(),
    }
}

/// Drops patterns that still act on assets whose transition is complete.
///
/// A sell is complete once holdings are at or below target, a buy once
/// holdings are at or above it.
pub fn prune_completed(patterns: Vec<ActionPattern>, state: &PortfolioState, target: &TargetPortfolio) -> Vec<ActionPattern> {
    patterns
        .into_iter()
        .filter(|p| {
            p.scope.iter().zip(&p.days).all(|(&a, d)| {
                let done = match p.direction {
                    Direction::Sell => state.holdings[a] <= target.min_shares[a],
                    Direction::Buy => state.holdings[a] >= target.min_shares[a],
                };
                d.is_none() || !done
            })
        })
        .collect()
}

pub fn prune_groups(groups: Vec<PatternGroup>, state: &PortfolioState, target: &TargetPortfolio) -> Vec<PatternGroup> {
    groups
        .into_iter()
        .map(|g| PatternGroup {
            patterns: prune_completed(g.patterns, state, target),
            ..g
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColGenVariant {
    /// Buys and sells both pattern-selected.
    BothDirections,
    /// Buys pattern-selected, sells compact.
    BuysOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColGenConfig {
    pub variant: ColGenVariant,
    pub mode: EnumerationMode,
    pub cap: usize,
}

impl ColGenConfig {
    pub fn new(variant: ColGenVariant) -> Self {
        Self {
            variant,
            mode: EnumerationMode::PerAsset,
            cap: DEFAULT_PATTERN_CAP,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            ColGenVariant::BothDirections => "ColGen_True",
            ColGenVariant::BuysOnly => "ColGen_False",
        }
    }
}

fn check_groups(groups: &[PatternGroup], horizon: usize) -> Result<(), ColGenError> {
    for g in groups {
        if g.patterns.is_empty() {
            return Err(ColGenError::EmptyGroup);
        }
        if let Some(p) = g.patterns.iter().find(|p| p.horizon != horizon) {
            return Err(ColGenError::HorizonMismatch {
                expected: horizon,
                got: p.horizon,
            });
        }
    }
    Ok(())
}

/// Adds one binary selector per pattern, one convexity row per group and
/// ties every flag to the selected patterns.
fn link_patterns(model: &mut MilpModel, groups: &[PatternGroup], tag: &str, flags: &[Vec<VarId>]) {
    let mut rows: Vec<Vec<LinExpr>> = flags
        .iter()
        .map(|row| row.iter().map(|&w| LinExpr::new().with(w, 1.0)).collect())
        .collect();
    for (g, group) in groups.iter().enumerate() {
        let mut conv = LinExpr::new();
        for (l, p) in group.patterns.iter().enumerate() {
            let sel = model.add_var(format!("sel_{tag}_{g}_{l}"), VarKind::Binary, 0.0, 1.0);
            conv.add(sel, 1.0);
            for (&a, &d) in p.scope.iter().zip(&p.days) {
                if let Some(d) = d {
                    rows[d][a].add(sel, -1.0);
                }
            }
        }
        model.add_constraint(format!("conv_{tag}_{g}"), conv, RowSense::Eq, 1.0);
    }
    for (tau, row) in rows.into_iter().enumerate() {
        for (a, expr) in row.into_iter().enumerate() {
            model.add_constraint(format!("pick_{tag}_{tau}_{a}"), expr, RowSense::Eq, 0.0);
        }
    }
}

/// Restricted master over the given pattern groups.
///
/// Flags of assets outside every group of a direction are fixed at zero.
/// With `sell_groups = None` the sell side keeps compact binary flags.
pub fn build_master(
    sub: &SubProblem,
    buy_groups: &[PatternGroup],
    sell_groups: Option<&[PatternGroup]>,
) -> Result<BuiltModel, ColGenError> {
    let h = sub.periods();
    check_groups(buy_groups, h)?;
    if let Some(s) = sell_groups {
        check_groups(s, h)?;
    }
    let big_m = compute_big_m(&sub.prices, sub.value(), h)?;
    let sell_kind = if sell_groups.is_some() { FlagKind::Linked } else { FlagKind::Binary };
    let (mut model, vars, obj) = build_core("master", sub, &big_m, FlagKind::Linked, sell_kind, ModelOptions::default())?;

    link_patterns(&mut model, buy_groups, "buy", &vars.buy_flag);
    if let Some(s) = sell_groups {
        link_patterns(&mut model, s, "sell", &vars.sell_flag);
    }
    model.set_objective(ObjectiveSense::Maximize, obj);
    Ok(BuiltModel {
        model,
        vars,
        big_m,
        sub: sub.clone(),
    })
}

/// Assets worth enumerating: buys below target, sells above it.
pub fn relevant_assets(state: &PortfolioState, target: &TargetPortfolio) -> (Vec<usize>, Vec<usize>) {
    let n = state.holdings.len();
    let buys = (0..n).filter(|&a| state.holdings[a] < target.min_shares[a]).collect();
    let sells = (0..n).filter(|&a| state.holdings[a] > target.min_shares[a]).collect();
    (buys, sells)
}

/// Enumerates over the sub-problem's horizon, prunes against its live state
/// and builds the master.
pub fn build_colgen_master(
    sub: &SubProblem,
    relevant_buys: &[usize],
    relevant_sells: &[usize],
    config: &ColGenConfig,
) -> Result<BuiltModel, ColGenError> {
    let h = sub.periods();
    let buys = prune_groups(
        enumerate_groups(Direction::Buy, relevant_buys, h, config.mode, config.cap)?,
        &sub.state,
        &sub.target,
    );
    match config.variant {
        ColGenVariant::BothDirections => {
            let sells = prune_groups(
                enumerate_groups(Direction::Sell, relevant_sells, h, config.mode, config.cap)?,
                &sub.state,
                &sub.target,
            );
            build_master(sub, &buys, Some(&sells))
        }
        ColGenVariant::BuysOnly => build_master(sub, &buys, None),
    }
}

pub fn solve_colgen(
    sub: &SubProblem,
    relevant_buys: &[usize],
    relevant_sells: &[usize],
    config: &ColGenConfig,
    settings: &SolverSettings,
) -> Result<PolicySolution, ColGenError> {
    let built = build_colgen_master(sub, relevant_buys, relevant_sells, config)?;
    Ok(solve_built(&built, settings)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Cents, PriceMatrix};
    use crate::formulations::{solve_policy, PolicyConfig};

    fn sub(holdings: Vec<i64>, cash: i64, target: Vec<i64>, fee: i64, rows: Vec<Vec<i64>>) -> SubProblem {
        SubProblem {
            state: PortfolioState::new(holdings, Cents(cash)).unwrap(),
            target: TargetPortfolio::new(target).unwrap(),
            fee: Cents(fee),
            prices: PriceMatrix::unlabelled(rows.into_iter().map(|r| r.into_iter().map(Cents).collect()).collect()).unwrap(),
        }
    }

    /// Counts joint patterns by recursion over assets.
    fn recursive_count(k: usize, horizon: usize) -> u128 {
        if k == 0 {
            1
        } else {
            (0..=horizon).map(|_| recursive_count(k - 1, horizon)).sum()
        }
    }

    #[test]
    fn two_sell_assets_thirty_days() {
        let p = enumerate_patterns(Direction::Sell, &[0, 2], 30, DEFAULT_PATTERN_CAP).unwrap();
        assert_eq!(p.len(), 961);
        assert_eq!(p.len(), 30 * 30 + 2 * 30 + 1);
    }

    #[test]
    fn small_counts() {
        assert_eq!(enumerate_patterns(Direction::Buy, &[0], 1, 10).unwrap().len(), 2);
        assert_eq!(enumerate_patterns(Direction::Buy, &[0, 1, 2], 2, 100).unwrap().len(), 27);
        for k in 0..=3 {
            for t in 1..=4 {
                let assets: Vec<usize> = (0..k).collect();
                let n = enumerate_patterns(Direction::Sell, &assets, t, 1000).unwrap().len() as u128;
                assert_eq!(n, recursive_count(k, t));
                assert_eq!(Some(n), count_patterns(k, t));
            }
        }
    }

    #[test]
    fn patterns_are_distinct_and_act_once() {
        let p = enumerate_patterns(Direction::Buy, &[1, 3], 3, 100).unwrap();
        let set: std::collections::HashSet<_> = p.iter().collect();
        assert_eq!(set.len(), p.len());
        assert!(p[0].is_never());
        for pat in &p {
            let s = pat.schedule(4);
            for a in 0..4 {
                assert!(s.iter().filter(|r| r[a]).count() <= 1);
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = enumerate_patterns(Direction::Sell, &[0, 1, 2, 3], 30, DEFAULT_PATTERN_CAP).unwrap_err();
        assert!(matches!(err, ColGenError::TooManyPatterns { count: 923_521, .. }));
        assert!(err.to_string().contains("per-asset"));
        assert!(matches!(enumerate_patterns(Direction::Sell, &[0], 1, 0), Err(ColGenError::ZeroCap)));
    }

    #[test]
    fn pruning() {
        let target = TargetPortfolio::new(vec![1, 1]).unwrap();
        let pats = enumerate_patterns(Direction::Sell, &[0, 1], 30, DEFAULT_PATTERN_CAP).unwrap();
        let at = |h: Vec<i64>| PortfolioState::new(h, Cents(0)).unwrap();
        assert_eq!(prune_completed(pats.clone(), &at(vec![5, 5]), &target), pats);
        assert_eq!(prune_completed(pats.clone(), &at(vec![1, 5]), &target).len(), 31);
        let left = prune_completed(pats, &at(vec![1, 0]), &target);
        assert_eq!(left.len(), 1);
        assert!(left[0].is_never());
        let buys = enumerate_patterns(Direction::Buy, &[0, 1], 4, 100).unwrap();
        let left = prune_completed(buys, &at(vec![1, 0]), &target);
        assert_eq!(left.len(), 5);
        assert!(left.iter().all(|p| p.day_of(0).is_none()));
    }

    #[test]
    fn never_only_master_with_met_target_is_idle() {
        let s = sub(vec![2, 2], 100, vec![1, 2], 100, vec![vec![500, 700]; 3]);
        let never = |d| vec![PatternGroup {
            direction: d,
            scope: vec![0, 1],
            patterns: vec![ActionPattern::never(d, vec![0, 1], 2)],
        }];
        let built = build_master(&s, &never(Direction::Buy), Some(&never(Direction::Sell))).unwrap();
        let sol = solve_built(&built, &SolverSettings::default()).unwrap();
        assert!(sol.plan.is_idle());
    }

    #[test]
    fn master_matches_once_restricted_base_and_modes_agree() {
        let s = sub(
            vec![3, 0, 2],
            150,
            vec![1, 2, 2],
            100,
            vec![vec![1000, 800, 1200], vec![1100, 700, 1250], vec![900, 760, 1180], vec![1050, 820, 1300]],
        );
        let all = [0, 1, 2];
        let settings = SolverSettings::default();
        let mut values = Vec::new();
        for mode in [EnumerationMode::Joint, EnumerationMode::PerAsset] {
            let b = enumerate_groups(Direction::Buy, &all, 3, mode, 1000).unwrap();
            let sl = enumerate_groups(Direction::Sell, &all, 3, mode, 1000).unwrap();
            let sol = solve_built(&build_master(&s, &b, Some(&sl)).unwrap(), &settings).unwrap();
            values.push(sol.value.objective);
        }
        let once = crate::formulations::ModelOptions {
            once_per_direction: true,
            ..Default::default()
        };
        let reference = solve_policy(&s, &PolicyConfig::base(), once, &settings).unwrap();
        assert!((values[0] - values[1]).abs() < 1e-9);
        assert!((values[0] - reference.value.objective).abs() < 1e-9);
        let unrestricted = solve_policy(&s, &PolicyConfig::base(), Default::default(), &settings).unwrap();
        assert!(values[0] <= unrestricted.value.objective + 1e-9);
    }

    #[test]
    fn buys_only_variant_relaxes_sells() {
        let s = sub(
            vec![6, 0],
            0,
            vec![0, 2],
            50,
            vec![vec![1000, 1500], vec![1200, 1400], vec![900, 1600], vec![1300, 1500]],
        );
        let (b, sl) = relevant_assets(&s.state, &s.target);
        assert_eq!((b.clone(), sl.clone()), (vec![1], vec![0]));
        let settings = SolverSettings::default();
        let t = solve_colgen(&s, &b, &sl, &ColGenConfig::new(ColGenVariant::BothDirections), &settings).unwrap();
        let f = solve_colgen(&s, &b, &sl, &ColGenConfig::new(ColGenVariant::BuysOnly), &settings).unwrap();
        assert!(f.value.objective >= t.value.objective - 1e-9);
        for sol in [&t, &f] {
            assert!(sol.plan.validate().is_ok());
            assert!(sol.value.final_state.holdings[1] >= 2);
        }
        let once_sells: usize = t.plan.rows.iter().filter(|r| r.sell_flags[0]).count();
        assert!(once_sells <= 1);
    }

    #[test]
    fn mismatched_horizon_is_rejected() {
        let s = sub(vec![1], 0, vec![1], 0, vec![vec![100]; 3]);
        let g = enumerate_groups(Direction::Buy, &[0], 5, EnumerationMode::PerAsset, 10).unwrap();
        assert!(matches!(build_master(&s, &g, None), Err(ColGenError::HorizonMismatch { .. })));
    }
}
