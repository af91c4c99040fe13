//! Statistical point forecasters over a dense context grid whose last slot
//! is the cut-off. Gaps (`None`) are skipped, never filled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{from_usize, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ForecastError {
    #[error("context has no observed values")]
    EmptyContext,
    #[error("seasonal average needs one full period of {period} steps, context spans {available}")]
    InsufficientSeasonalHistory { period: usize, available: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    Naive,
    MovingAverage { window: usize },
    SeasonalAverage { period: usize, periods: usize },
}

impl BaselineKind {
    pub fn validate(&self) -> Result<(), ForecastError> {
        match *self {
            BaselineKind::Naive => Ok(()),
            BaselineKind::MovingAverage { window } if window >= 1 => Ok(()),
            BaselineKind::MovingAverage { .. } => Err(ForecastError::InvalidParameter("window must be >= 1")),
            BaselineKind::SeasonalAverage { period, periods } if period >= 1 && periods >= 1 => Ok(()),
            BaselineKind::SeasonalAverage { .. } => {
                Err(ForecastError::InvalidParameter("period and periods must be >= 1"))
            }
        }
    }

    pub fn forecast<T: Scalar>(&self, context: &[Option<T>], h: usize) -> Result<Vec<T>, ForecastError> {
        self.validate()?;
        match *self {
            BaselineKind::Naive => forecast_naive(context, h),
            BaselineKind::MovingAverage { window } => forecast_moving_average(context, window, h),
            BaselineKind::SeasonalAverage { period, periods } => {
                forecast_seasonal_average(context, period, periods, h)
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BaselineKind::Naive => "naive".into(),
            BaselineKind::MovingAverage { window } => format!("moving-average-w{window}"),
            BaselineKind::SeasonalAverage { period, periods } => format!("seasonal-average-m{period}-k{periods}"),
        }
    }
}

fn last_observed<T: Scalar>(context: &[Option<T>]) -> Result<T, ForecastError> {
    context.iter().rev().flatten().next().copied().ok_or(ForecastError::EmptyContext)
}

/// Repeats the last observed value.
pub fn forecast_naive<T: Scalar>(context: &[Option<T>], h: usize) -> Result<Vec<T>, ForecastError> {
    Ok(vec![last_observed(context)?; h])
}

/// Repeats the mean of the last `min(window, available)` observed values.
pub fn forecast_moving_average<T: Scalar>(
    context: &[Option<T>],
    window: usize,
    h: usize,
) -> Result<Vec<T>, ForecastError> {
    if window == 0 {
        return Err(ForecastError::InvalidParameter("window must be >= 1"));
    }
    let (sum, n) = context
        .iter()
        .rev()
        .flatten()
        .take(window)
        .fold((T::zero(), 0usize), |(s, n), v| (s + *v, n + 1));
    if n == 0 {
        return Err(ForecastError::EmptyContext);
    }
    Ok(vec![sum / from_usize::<T>(n); h])
}

/// Step `i` takes the mean of observed values at the same seasonal position
/// over the last `periods` periods inside the context; positions without any
/// observation fall back to the naive value.
pub fn forecast_seasonal_average<T: Scalar>(
    context: &[Option<T>],
    period: usize,
    periods: usize,
    h: usize,
) -> Result<Vec<T>, ForecastError> {
    if period == 0 || periods == 0 {
        return Err(ForecastError::InvalidParameter("period and periods must be >= 1"));
    }
    let n = context.len();
    if n < period {
        return Err(ForecastError::InsufficientSeasonalHistory {
            period,
            available: n,
        });
    }
    let naive = last_observed(context)?;
    let last = n - 1;
    Ok((1..=h)
        .map(|i| {
            let target = last + i;
            let first_lag = i.div_ceil(period);
            let (sum, count) = (first_lag..first_lag + periods)
                .map_while(|j| target.checked_sub(j * period))
                .filter_map(|idx| context[idx])
                .fold((T::zero(), 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                naive
            } else {
                sum / from_usize::<T>(count)
            }
        })
        .collect())
}
