//! Mean absolute scaled error.
//!
//! `MASE = mean_i |f_i - y_i| / scale`, where `scale` is the mean absolute
//! seasonal-naive error `|y_t - y_{t-m}|` over the in-sample context. Series
//! are handled on a dense step grid with `None` marking gaps; pairs touching
//! a gap are skipped and nothing is imputed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Frequency;
use crate::num::{from_usize, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("need at least {needed} context points, got {got}")]
    InsufficientContext { needed: usize, got: usize },
    #[error("no actuals observed")]
    NoActuals,
    #[error("forecast has {forecast} steps but horizon has {actuals}")]
    LengthMismatch { forecast: usize, actuals: usize },
    #[error("seasonal period must be >= 1")]
    ZeroPeriod,
}

/// MASE denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale<T> {
    Positive(T),
    Degenerate,
}

impl<T: Copy> Scale<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Scale::Positive(v) => Some(v),
            Scale::Degenerate => None,
        }
    }
}

/// Seasonal period in steps used for scaling: one day for sub-daily data
/// that divides a day evenly, one week for daily data, otherwise 1.
pub fn seasonal_period(frequency: Frequency) -> usize {
    const DAY: i64 = 86_400;
    let step = frequency.step().num_seconds();
    if step == DAY {
        7
    } else if step < DAY && DAY % step == 0 {
        (DAY / step) as usize
    } else {
        1
    }
}

/// Mean of `|y_t - y_{t-m}|` over all grid positions where both ends are observed.
/// The context grid must span at least `m + 1` steps.
pub fn mase_scale<T: Scalar>(context: &[Option<T>], m: usize) -> Result<Scale<T>, MetricError> {
    if m == 0 {
        return Err(MetricError::ZeroPeriod);
    }
    if context.len() < m + 1 {
        return Err(MetricError::InsufficientContext {
            needed: m + 1,
            got: context.len(),
        });
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for t in m..context.len() {
        if let (Some(a), Some(b)) = (context[t], context[t - m]) {
            sum = sum + (a - b).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Ok(Scale::Degenerate);
    }
    let mean = sum / from_usize::<T>(n);
    if mean > T::zero() && mean.is_finite() {
        Ok(Scale::Positive(mean))
    } else {
        Ok(Scale::Degenerate)
    }
}

/// Scale with the preferred period `m`, falling back to `m = 1` when the
/// context is too short. Returns the period actually used.
pub fn mase_scale_with_fallback<T: Scalar>(
    context: &[Option<T>],
    m: usize,
) -> Result<(Scale<T>, usize), MetricError> {
    match mase_scale(context, m) {
        Ok(s) => Ok((s, m)),
        Err(MetricError::InsufficientContext { .. }) if m > 1 => Ok((mase_scale(context, 1)?, 1)),
        Err(e) => Err(e),
    }
}

/// MASE over the observed horizon steps. `actuals[i]` aligns with `forecast[i]`.
pub fn mase<T: Scalar>(forecast: &[T], actuals: &[Option<T>], scale: T) -> Result<T, MetricError> {
    if forecast.len() != actuals.len() {
        return Err(MetricError::LengthMismatch {
            forecast: forecast.len(),
            actuals: actuals.len(),
        });
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    for (f, y) in forecast.iter().zip(actuals) {
        if let Some(y) = y {
            sum = sum + (*f - *y).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::NoActuals);
    }
    Ok(sum / from_usize::<T>(n) / scale)
}

/// Running MASE for one forecast as actuals trickle in.
///
/// Each step keeps its latest absolute error, so the result depends only on
/// the final set of observed actuals and not on their arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaseAccumulator<T> {
    forecast: Vec<T>,
    errors: Vec<Option<T>>,
    scale: Scale<T>,
}

impl<T: Scalar> MaseAccumulator<T> {
    pub fn new(forecast: Vec<T>, scale: Scale<T>) -> Self {
        let h = forecast.len();
        Self {
            forecast,
            errors: vec![None; h],
            scale,
        }
    }

    /// Records (or replaces) the actual for horizon step `step` (0-based).
    pub fn observe(&mut self, step: usize, actual: T) {
        self.errors[step] = Some((self.forecast[step] - actual).abs());
    }

    pub fn steps_observed(&self) -> usize {
        self.errors.iter().filter(|e| e.is_some()).count()
    }

    pub fn scale(&self) -> Scale<T> {
        self.scale
    }

    /// Current MASE, or `None` when nothing is observed or the scale is degenerate.
    pub fn value(&self) -> Option<T> {
        let scale = self.scale.value()?;
        let mut sum = T::zero();
        let mut n = 0usize;
        for e in self.errors.iter().flatten() {
            sum = sum + *e;
            n += 1;
        }
        (n > 0).then(|| sum / from_usize::<T>(n) / scale)
    }
}
