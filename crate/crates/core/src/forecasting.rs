//! Forecaster contract, deterministic baselines, and forecast error metrics.

use serde::{Deserialize, Serialize};

use crate::domain::{Cents, DomainError, PriceMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForecastError {
    #[error("history has {available} rows, lookback needs {needed}")]
    InsufficientHistory { available: usize, needed: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("oracle forecaster needs {needed} realised future rows, got {available}")]
    MissingFuture { available: usize, needed: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMethod {
    /// Repeat the last observed row.
    Persistence,
    /// Least-squares trend over the lookback window, extrapolated.
    Drift,
    /// Copy the realised future; for tests and perfect-information baselines.
    Oracle,
}

impl std::str::FromStr for ForecastMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "persistence" => Ok(Self::Persistence),
            "drift" => Ok(Self::Drift),
            "oracle" => Ok(Self::Oracle),
            other => Err(format!("unknown forecaster `{other}`")),
        }
    }
}

impl std::fmt::Display for ForecastMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Persistence => "persistence",
            Self::Drift => "drift",
            Self::Oracle => "oracle",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub lookback: usize,
    pub method: ForecastMethod,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            lookback: 48,
            method: ForecastMethod::Drift,
        }
    }
}

/// Everything a forecaster may look at.
#[derive(Clone, Copy, Debug)]
pub struct ForecastInput<'a> {
    /// Observed prices up to and including the current period.
    pub history: &'a PriceMatrix,
    /// Exogenous series aligned with `history`.
    pub covariates: Option<&'a [Vec<f64>]>,
    pub horizon: usize,
    /// Realised prices after the current period, when known.
    pub realized_future: Option<&'a PriceMatrix>,
}

pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    /// Predicts `input.horizon` rows following the last history row.
    fn predict(&self, input: &ForecastInput<'_>) -> Result<PriceMatrix, ForecastError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub prices: PriceMatrix,
    /// Filled in when the realised future was available.
    pub mape: Option<f64>,
}

fn future_labels(h: usize) -> Vec<String> {
    (1..=h).map(|i| format!("+{i}")).collect()
}

fn check_history(input: &ForecastInput<'_>, lookback: usize) -> Result<(), ForecastError> {
    if input.horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    if input.history.n_periods() < lookback.max(1) {
        return Err(ForecastError::InsufficientHistory {
            available: input.history.n_periods(),
            needed: lookback.max(1),
        });
    }
    Ok(())
}

pub struct Persistence {
    pub lookback: usize,
}

impl Forecaster for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn predict(&self, input: &ForecastInput<'_>) -> Result<PriceMatrix, ForecastError> {
        check_history(input, self.lookback)?;
        let last = input.history.row(input.history.n_periods() - 1).to_vec();
        Ok(PriceMatrix::new(vec![last; input.horizon], future_labels(input.horizon))?)
    }
}

pub struct Drift {
    pub lookback: usize,
}

impl Forecaster for Drift {
    fn name(&self) -> &str {
        "drift"
    }

    fn predict(&self, input: &ForecastInput<'_>) -> Result<PriceMatrix, ForecastError> {
        check_history(input, self.lookback)?;
        let rows = input.history.n_periods();
        let l = self.lookback.max(1);
        let window = &input.history.rows()[rows - l..];
        let n = input.history.n_assets();
        let xbar = (l as f64 - 1.0) / 2.0;
        let sxx: f64 = (0..l).map(|i| (i as f64 - xbar).powi(2)).sum();
        let mut out = vec![vec![Cents::ZERO; n]; input.horizon];
        for a in 0..n {
            let ys: Vec<f64> = window.iter().map(|r| r[a].0 as f64).collect();
            let ybar = ys.iter().sum::<f64>() / l as f64;
            let slope = if sxx > 0.0 {
                ys.iter().enumerate().map(|(i, y)| (i as f64 - xbar) * (y - ybar)).sum::<f64>() / sxx
            } else {
                0.0
            };
            for (h, row) in out.iter_mut().enumerate() {
                let x = (l - 1 + h + 1) as f64;
                let y = ybar + slope * (x - xbar);
                row[a] = Cents((y.round() as i64).max(1));
            }
        }
        Ok(PriceMatrix::new(out, future_labels(input.horizon))?)
    }
}

pub struct OracleForecaster;

impl Forecaster for OracleForecaster {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, input: &ForecastInput<'_>) -> Result<PriceMatrix, ForecastError> {
        check_history(input, 1)?;
        let future = input.realized_future.ok_or(ForecastError::MissingFuture {
            available: 0,
            needed: input.horizon,
        })?;
        if future.n_periods() < input.horizon {
            return Err(ForecastError::MissingFuture {
                available: future.n_periods(),
                needed: input.horizon,
            });
        }
        Ok(future.slice(0..input.horizon)?)
    }
}

pub fn forecaster_for(config: &ForecastConfig) -> Box<dyn Forecaster> {
    match config.method {
        ForecastMethod::Persistence => Box::new(Persistence {
            lookback: config.lookback,
        }),
        ForecastMethod::Drift => Box::new(Drift {
            lookback: config.lookback,
        }),
        ForecastMethod::Oracle => Box::new(OracleForecaster),
    }
}

/// Runs the configured method and scores it when the future is known.
pub fn forecast(input: &ForecastInput<'_>, config: &ForecastConfig) -> Result<Forecast, ForecastError> {
    let prices = forecaster_for(config).predict(input)?;
    let mape = match input.realized_future {
        Some(real) if real.n_periods() >= input.horizon => Some(mape(&prices, &real.slice(0..input.horizon)?)?),
        _ => None,
    };
    Ok(Forecast { prices, mape })
}

/// Mean absolute percent error over all cells.
pub fn mape(forecast: &PriceMatrix, realized: &PriceMatrix) -> Result<f64, ForecastError> {
    let (sf, sr) = (
        (forecast.n_periods(), forecast.n_assets()),
        (realized.n_periods(), realized.n_assets()),
    );
    if sf != sr {
        return Err(ForecastError::ShapeMismatch(sf, sr));
    }
    let (total, cells) = absolute_percent_errors(forecast, realized);
    Ok(total / cells as f64)
}

/// Sum of per-cell absolute percent errors and the cell count.
pub fn absolute_percent_errors(forecast: &PriceMatrix, realized: &PriceMatrix) -> (f64, usize) {
    let mut total = 0.0;
    let mut cells = 0;
    for (fr, rr) in forecast.rows().iter().zip(realized.rows()) {
        for (f, r) in fr.iter().zip(rr) {
            total += 100.0 * (f.0 - r.0).abs() as f64 / r.0 as f64;
            cells += 1;
        }
    }
    (total, cells)
}

/// Scenarios whose mean forecast error is above `threshold` percent are dropped.
pub fn exclude_scenario(mean_mape: f64, threshold: f64) -> bool {
    mean_mape > threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pm(rows: Vec<Vec<i64>>) -> PriceMatrix {
        PriceMatrix::unlabelled(rows.into_iter().map(|r| r.into_iter().map(Cents).collect()).collect()).unwrap()
    }

    fn input(h: &PriceMatrix, horizon: usize) -> ForecastInput<'_> {
        ForecastInput {
            history: h,
            covariates: None,
            horizon,
            realized_future: None,
        }
    }

    #[test]
    fn persistence_repeats_last_row() {
        let h = pm(vec![vec![500, 600], vec![1000, 2000]]);
        let f = Persistence { lookback: 2 }.predict(&input(&h, 3)).unwrap();
        assert_eq!(f.rows(), pm(vec![vec![1000, 2000]; 3]).rows());
    }

    #[test]
    fn short_history_is_an_error() {
        let h = pm(vec![vec![500]]);
        assert!(matches!(
            Persistence { lookback: 48 }.predict(&input(&h, 1)),
            Err(ForecastError::InsufficientHistory { .. })
        ));
        assert!(matches!(Drift { lookback: 2 }.predict(&input(&h, 1)), Err(ForecastError::InsufficientHistory { .. })));
        assert!(matches!(Persistence { lookback: 1 }.predict(&input(&h, 0)), Err(ForecastError::ZeroHorizon)));
    }

    #[test]
    fn oracle_has_zero_error() {
        let h = pm(vec![vec![500, 700]]);
        let fut = pm(vec![vec![510, 690], vec![530, 650]]);
        let inp = ForecastInput {
            realized_future: Some(&fut),
            ..input(&h, 2)
        };
        let f = forecast(
            &inp,
            &ForecastConfig {
                lookback: 1,
                method: ForecastMethod::Oracle,
            },
        )
        .unwrap();
        assert_eq!(f.mape, Some(0.0));
        assert_eq!(f.prices.rows(), fut.rows());
        assert!(OracleForecaster.predict(&input(&h, 2)).is_err());
    }

    #[test]
    fn drift_continues_a_line() {
        // 7 + 3i cents on one asset, 900 - 5i on the other
        let h = pm((0..48).map(|i| vec![700 + 3 * i, 900 - 5 * i]).collect());
        let f = Drift { lookback: 48 }.predict(&input(&h, 4)).unwrap();
        for k in 0..4i64 {
            assert_eq!(f.row(k as usize), &[Cents(700 + 3 * (48 + k)), Cents(900 - 5 * (48 + k))]);
        }
    }

    #[test]
    fn drift_uses_only_the_lookback_window() {
        let mut rows: Vec<Vec<i64>> = (0..10).map(|_| vec![10_000]).collect();
        rows.extend((0..4).map(|i| vec![200 + 10 * i]));
        let f = Drift { lookback: 4 }.predict(&input(&pm(rows), 2)).unwrap();
        assert_eq!(f.row(0), &[Cents(240)]);
        assert_eq!(f.row(1), &[Cents(250)]);
    }

    #[test]
    fn drift_is_floored_at_one_cent() {
        let h = pm((0..5).map(|i| vec![500 - 100 * i]).collect());
        let f = Drift { lookback: 5 }.predict(&input(&h, 10)).unwrap();
        assert!(f.rows().iter().all(|r| r[0] == Cents(1) || r[0].0 > 0));
        assert_eq!(f.row(9), &[Cents(1)]);
    }

    #[test]
    fn mape_values() {
        let y = pm(vec![vec![1000, 2000], vec![500, 400]]);
        assert_eq!(mape(&y, &y).unwrap(), 0.0);
        let scaled = pm(vec![vec![1100, 2200], vec![550, 440]]);
        assert!((mape(&scaled, &y).unwrap() - 10.0).abs() < 1e-12);
        assert!(mape(&pm(vec![vec![1]]), &y).is_err());
    }

    #[test]
    fn exclusion_threshold() {
        assert!(!exclude_scenario(8.0, 10.0));
        assert!(!exclude_scenario(10.0, 10.0));
        assert!(exclude_scenario(10.1, 10.0));
    }

    proptest! {
        #[test]
        fn mape_matches_scalar_loop(
            cells in prop::collection::vec((1i64..100_000, 1i64..100_000), 1..30)
        ) {
            let n = cells.len();
            let f = pm(vec![cells.iter().map(|c| c.0).collect()]);
            let y = pm(vec![cells.iter().map(|c| c.1).collect()]);
            let mut acc = 0.0;
            for (a, b) in &cells {
                acc += ((*a as f64) - (*b as f64)).abs() / (*b as f64);
            }
            let expected = acc / n as f64 * 100.0;
            prop_assert!((mape(&f, &y).unwrap() - expected).abs() <= 1e-9 * expected.max(1.0));
        }

        #[test]
        fn forecasts_are_positive_and_deterministic(
            rows in prop::collection::vec(prop::collection::vec(1i64..5_000, 3), 6..20),
            method in prop::sample::select(vec![ForecastMethod::Persistence, ForecastMethod::Drift]),
        ) {
            let h = pm(rows);
            let cfg = ForecastConfig { lookback: 5, method };
            let a = forecast(&input(&h, 7), &cfg).unwrap();
            let b = forecast(&input(&h, 7), &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.prices.rows().iter().flatten().all(|p| p.0 > 0));
        }
    }
}
