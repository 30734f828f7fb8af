//! Exhaustive optimizers for tiny instances, used to cross-check the MILPs.
//!
//! The multi-period search is a forward dynamic program over every integer
//! trade plan. Within a period all sells are applied before any buy, so a
//! plan is cash-feasible exactly when cash stays non-negative through the
//! buy phase. States with equal holdings keep a Pareto frontier of
//! (cash, cash minus accumulated penalty).

use std::collections::HashMap;

use rand::Rng;

use crate::data_ingest::fill_budget;
use crate::domain::{AssetUniverse, Cents, PortfolioState, PriceMatrix, TargetPortfolio, TransitionInstance};
use crate::formulations::{compute_big_m, naive_subproblem, SubProblem};

/// Which trades the search may take and how they are scored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleRules {
    /// Restrict each asset to its partition's direction.
    pub directional: bool,
    /// Penalty per dollar of wrong-direction trade value.
    pub lambda: f64,
    pub once_per_direction: bool,
    /// Forbid buying and selling one asset in the same period.
    pub symmetry: bool,
}

impl OracleRules {
    pub fn base() -> Self {
        Self {
            directional: false,
            lambda: 0.0,
            once_per_direction: false,
            symmetry: true,
        }
    }

    pub fn directional() -> Self {
        Self {
            directional: true,
            symmetry: false,
            ..Self::base()
        }
    }

    pub fn penalized(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::base()
        }
    }

    pub fn once_per_direction() -> Self {
        Self {
            once_per_direction: true,
            ..Self::base()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptimum {
    /// Best objective in dollars.
    pub objective: f64,
    /// Some optimal plan trades more than `M_tau` shares in a cell.
    pub optimum_exceeds_big_m: bool,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Key {
    holdings: Vec<i64>,
    bought: u32,
    sold: u32,
    sold_now: u32,
    exceeded: bool,
}

/// Points `(cash, score)` with `score = cash - penalty`, none dominating another.
#[derive(Default)]
struct Frontier(Vec<(i64, f64)>);

impl Frontier {
    fn insert(&mut self, cash: i64, score: f64) {
        if self.0.iter().any(|&(c, s)| c >= cash && s >= score) {
            return;
        }
        self.0.retain(|&(c, s)| !(cash >= c && score >= s));
        self.0.push((cash, score));
    }
}

type Layer = HashMap<Key, Frontier>;

fn push(layer: &mut Layer, key: Key, cash: i64, score: f64) {
    layer.entry(key).or_default().insert(cash, score);
}

fn bit(a: usize) -> u32 {
    1 << a
}

/// Best plan for `sub` under `rules`, or `None` if no plan reaches the target.
pub fn solve_exhaustive(sub: &SubProblem, rules: &OracleRules) -> Option<OracleOptimum> {
    let h = sub.periods();
    let n = sub.n_assets();
    assert!(n <= 16, "exhaustive search is for tiny instances");
    let fee = sub.fee.0;
    let partition = sub.partition();
    let big_m = compute_big_m(&sub.prices, sub.value(), h).ok()?;
    let mut layer = Layer::new();
    push(
        &mut layer,
        Key {
            holdings: sub.state.holdings.clone(),
            bought: 0,
            sold: 0,
            sold_now: 0,
            exceeded: false,
        },
        sub.state.cash.0,
        sub.state.cash.0 as f64,
    );
    for tau in 0..h {
        let m = big_m.m[tau];
        let price = |a: usize| sub.prices.get(tau, a).0;
        for a in 0..n {
            if rules.directional && partition.may_buy(a) {
                continue;
            }
            if rules.once_per_direction && layer.keys().all(|k| k.sold & bit(a) != 0) {
                continue;
            }
            let wrong = partition.may_buy(a);
            let mut next = Layer::new();
            for (key, frontier) in layer {
                for &(cash, score) in &frontier.0 {
                    push(&mut next, key.clone(), cash, score);
                }
                if rules.once_per_direction && key.sold & bit(a) != 0 {
                    continue;
                }
                for q in 1..=key.holdings[a] {
                    let mut k = key.clone();
                    k.holdings[a] -= q;
                    k.sold_now |= bit(a);
                    if rules.once_per_direction {
                        k.sold |= bit(a);
                    }
                    k.exceeded |= q > m;
                    let proceeds = price(a) * q - fee;
                    let penalty = fee as f64 + if wrong { rules.lambda * (price(a) * q) as f64 } else { 0.0 };
                    for &(cash, score) in &frontier.0 {
                        push(&mut next, k.clone(), cash + proceeds, score + proceeds as f64 - penalty);
                    }
                }
            }
            layer = next;
        }
        for a in 0..n {
            if rules.directional && !partition.may_buy(a) {
                continue;
            }
            let wrong = !partition.may_buy(a);
            let mut next = Layer::new();
            for (key, frontier) in layer {
                let max_cash = frontier.0.iter().map(|p| p.0).max().unwrap_or(0);
                for &(cash, score) in &frontier.0 {
                    push(&mut next, key.clone(), cash, score);
                }
                if rules.symmetry && key.sold_now & bit(a) != 0 {
                    continue;
                }
                if rules.once_per_direction && key.bought & bit(a) != 0 {
                    continue;
                }
                let mut q = 1;
                while price(a) * q + fee <= max_cash {
                    let mut k = key.clone();
                    k.holdings[a] += q;
                    if rules.once_per_direction {
                        k.bought |= bit(a);
                    }
                    k.exceeded |= q > m;
                    let cost = price(a) * q + fee;
                    let penalty = fee as f64 + if wrong { rules.lambda * (price(a) * q) as f64 } else { 0.0 };
                    for &(cash, score) in &frontier.0 {
                        if cash >= cost {
                            push(&mut next, k.clone(), cash - cost, score - cost as f64 - penalty);
                        }
                    }
                    q += 1;
                }
            }
            layer = next;
        }
        let mut next = Layer::new();
        for (mut key, frontier) in layer {
            key.sold_now = 0;
            for (cash, score) in frontier.0 {
                push(&mut next, key.clone(), cash, score);
            }
        }
        layer = next;
    }
    let terminal = sub.prices.row(h);
    let mut best: Option<f64> = None;
    let mut best_exceeding: Option<f64> = None;
    for (key, frontier) in &layer {
        if key.holdings.iter().zip(&sub.target.min_shares).any(|(p, t)| p < t) {
            continue;
        }
        let held: i64 = key.holdings.iter().zip(terminal).map(|(&p, y)| p * y.0).sum();
        for &(_, score) in &frontier.0 {
            let v = score + held as f64;
            best = Some(best.map_or(v, |b| b.max(v)));
            if key.exceeded {
                best_exceeding = Some(best_exceeding.map_or(v, |b| b.max(v)));
            }
        }
    }
    let best = best?;
    Some(OracleOptimum {
        objective: best / 100.0,
        optimum_exceeds_big_m: best_exceeding.is_some_and(|b| b >= best - 1e-6),
    })
}

/// Best single-period transition at today's prices by enumerating every net
/// trade vector `z` in `[-P_0, M]^N`.
pub fn solve_naive_exhaustive(sub: &SubProblem) -> Option<OracleOptimum> {
    let naive = naive_subproblem(sub).ok()?;
    let y0 = naive.prices.row(0);
    let n = naive.n_assets();
    let cheapest = naive.prices.min_in_row(0).0;
    let m = ((naive.value().0 + cheapest - 1) / cheapest).max(1);
    let fee = naive.fee.0;
    let mut z: Vec<i64> = naive.state.holdings.iter().map(|&p| -p).collect();
    let mut best: Option<i64> = None;
    loop {
        let flags = z.iter().filter(|&&q| q != 0).count() as i64;
        let cash = naive.state.cash.0 - z.iter().zip(y0).map(|(&q, y)| q * y.0).sum::<i64>() - fee * flags;
        let meets = (0..n).all(|a| naive.state.holdings[a] + z[a] >= naive.target.min_shares[a]);
        if cash >= 0 && meets {
            let held: i64 = (0..n).map(|a| (naive.state.holdings[a] + z[a]) * y0[a].0).sum();
            let v = cash + held - fee * flags;
            best = Some(best.map_or(v, |b| b.max(v)));
        }
        let mut a = 0;
        loop {
            if a == n {
                return best.map(|b| OracleOptimum {
                    objective: b as f64 / 100.0,
                    optimum_exceeds_big_m: false,
                });
            }
            if z[a] < m {
                z[a] += 1;
                break;
            }
            z[a] = -naive.state.holdings[a];
            a += 1;
        }
    }
}

/// Size and price ranges for random test instances.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceLimits {
    pub max_assets: usize,
    pub max_periods: usize,
    pub min_price: Cents,
    pub max_price: Cents,
    /// Largest per-period relative price move.
    pub max_step: f64,
    pub min_budget: Cents,
    pub max_budget: Cents,
    pub fees: Vec<Cents>,
}

impl Default for InstanceLimits {
    fn default() -> Self {
        Self {
            max_assets: 3,
            max_periods: 4,
            min_price: Cents(500),
            max_price: Cents(2000),
            max_step: 0.15,
            min_budget: Cents(2000),
            max_budget: Cents(10_000),
            fees: vec![Cents(0), Cents(100), Cents(200)],
        }
    }
}

/// A random instance whose target is affordable at today's prices.
pub fn random_instance(rng: &mut impl Rng, limits: &InstanceLimits) -> TransitionInstance {
    let n = rng.gen_range(1..=limits.max_assets);
    let horizon = rng.gen_range(1..=limits.max_periods);
    let (lo, hi) = (limits.min_price.0, limits.max_price.0);
    let mut rows = vec![(0..n).map(|_| Cents(rng.gen_range(lo..=hi))).collect::<Vec<_>>()];
    for _ in 0..horizon {
        let prev = rows.last().unwrap();
        let step = prev
            .iter()
            .map(|y| {
                let r = rng.gen_range(-limits.max_step..=limits.max_step);
                Cents(((y.0 as f64) * (1.0 + r)).round().clamp(lo as f64, hi as f64) as i64)
            })
            .collect();
        rows.push(step);
    }
    let y0 = rows[0].clone();
    let budget = Cents(rng.gen_range(limits.min_budget.0..=limits.max_budget.0));
    let invested = Cents((budget.0 as f64 * rng.gen_range(0.3..=1.0)) as i64);
    let (holdings, left) = fill_budget(rng, &y0, invested);
    let cash = budget - invested + left;
    let held = invested - left;
    let target_budget = Cents(rng.gen_range(0..=held.0));
    let (target, _) = fill_budget(rng, &y0, target_budget);
    let fee = limits.fees[rng.gen_range(0..limits.fees.len())];
    TransitionInstance::new(
        AssetUniverse::numbered(n),
        PortfolioState::new(holdings, cash).expect("non-negative by construction"),
        TargetPortfolio::new(target).expect("non-negative by construction"),
        horizon,
        fee,
        PriceMatrix::unlabelled(rows).expect("positive prices"),
    )
    .expect("affordable by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sub(holdings: Vec<i64>, cash: i64, target: Vec<i64>, fee: i64, rows: Vec<Vec<i64>>) -> SubProblem {
        SubProblem {
            state: PortfolioState::new(holdings, Cents(cash)).unwrap(),
            target: TargetPortfolio::new(target).unwrap(),
            fee: Cents(fee),
            prices: PriceMatrix::unlabelled(rows.into_iter().map(|r| r.into_iter().map(Cents).collect()).collect()).unwrap(),
        }
    }

    /// Plain recursion over every per-cell action, no state merging.
    fn naive_recursion(s: &SubProblem, tau: usize, a: usize, holdings: &mut Vec<i64>, cash: i64, pen: i64) -> Option<i64> {
        let n = s.n_assets();
        if tau == s.periods() {
            if holdings.iter().zip(&s.target.min_shares).any(|(p, t)| p < t) {
                return None;
            }
            let held: i64 = (0..n).map(|b| holdings[b] * s.prices.get(tau, b).0).sum();
            return Some(cash + held - pen);
        }
        if a == n {
            if cash < 0 {
                return None;
            }
            return naive_recursion(s, tau + 1, 0, holdings, cash, pen);
        }
        let y = s.prices.get(tau, a).0;
        let f = s.fee.0;
        let mut best = naive_recursion(s, tau, a + 1, holdings, cash, pen);
        for q in 1..=holdings[a] {
            holdings[a] -= q;
            let r = naive_recursion(s, tau, a + 1, holdings, cash + y * q - f, pen + f);
            holdings[a] += q;
            best = best.max(r);
        }
        // reachable cash bounds the buy count
        let reach = cash + (a..n).map(|b| holdings[b] * s.prices.get(tau, b).0).sum::<i64>();
        let mut q = 1;
        while y * q + f <= reach {
            holdings[a] += q;
            let r = naive_recursion(s, tau, a + 1, holdings, cash - y * q - f, pen + f);
            holdings[a] -= q;
            best = best.max(r);
            q += 1;
        }
        best
    }

    #[test]
    fn buy_two_shares() {
        let s = sub(vec![0], 3000, vec![2], 200, vec![vec![1000], vec![1000]]);
        assert_eq!(solve_exhaustive(&s, &OracleRules::base()).unwrap().objective, 26.0);
        assert_eq!(solve_naive_exhaustive(&s).unwrap().objective, 26.0);
    }

    #[test]
    fn idle_when_target_met_at_constant_prices() {
        let s = sub(vec![3, 1], 250, vec![1, 1], 100, vec![vec![700, 900]; 4]);
        let v0 = s.value().as_dollars();
        assert_eq!(solve_exhaustive(&s, &OracleRules::base()).unwrap().objective, v0);
        assert_eq!(solve_naive_exhaustive(&s).unwrap().objective, v0);
    }

    #[test]
    fn unreachable_target_is_none() {
        let s = sub(vec![1, 0], 0, vec![0, 1], 100, vec![vec![1000, 950], vec![1000, 950]]);
        assert!(solve_exhaustive(&s, &OracleRules::base()).is_none());
        assert!(solve_naive_exhaustive(&s).is_none());
    }

    #[test]
    fn rising_asset_is_bought_early() {
        let s = sub(vec![0], 2000, vec![0], 0, vec![vec![1000], vec![1500], vec![1500]]);
        let best = solve_exhaustive(&s, &OracleRules::base()).unwrap();
        assert_eq!(best.objective, 30.0);
        assert!(!best.optimum_exceeds_big_m);
    }

    #[test]
    fn dynamic_program_matches_plain_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let limits = InstanceLimits {
            max_assets: 2,
            max_periods: 2,
            max_budget: Cents(5000),
            ..Default::default()
        };
        for _ in 0..40 {
            let s = SubProblem::from_instance(&random_instance(&mut rng, &limits));
            let mut h = s.state.holdings.clone();
            let slow = naive_recursion(&s, 0, 0, &mut h, s.state.cash.0, 0).map(|v| v as f64 / 100.0);
            let fast = solve_exhaustive(&s, &OracleRules::base()).map(|o| o.objective);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn restrictions_only_lower_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let s = SubProblem::from_instance(&random_instance(&mut rng, &InstanceLimits::default()));
            let Some(base) = solve_exhaustive(&s, &OracleRules::base()) else { continue };
            for rules in [OracleRules::directional(), OracleRules::penalized(0.5), OracleRules::once_per_direction()] {
                if let Some(r) = solve_exhaustive(&s, &rules) {
                    assert!(r.objective <= base.objective + 1e-9);
                }
            }
            let zero = solve_exhaustive(&s, &OracleRules::penalized(0.0)).unwrap();
            assert_eq!(zero.objective, base.objective);
        }
    }

    #[test]
    fn generator_respects_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let limits = InstanceLimits::default();
        for _ in 0..100 {
            let inst = random_instance(&mut rng, &limits);
            assert!(inst.n_assets() <= 3 && inst.horizon <= 4);
            assert!(inst.initial_value() <= limits.max_budget);
            assert!(inst.prices.rows().iter().flatten().all(|y| (500..=2000).contains(&y.0)));
            assert!(limits.fees.contains(&inst.fee));
        }
    }
}
