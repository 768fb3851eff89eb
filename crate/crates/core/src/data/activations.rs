use serde::{Deserialize, Serialize};

use super::series::runs;
use super::{DataError, PowerSeries, Result};

/// Thresholds that define when an appliance is "on".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSpec {
    /// Watts.
    pub on_power_threshold: f64,
    /// Seconds.
    pub min_on_duration: f64,
    /// Seconds.
    pub min_off_duration: f64,
}

impl ActivationSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.on_power_threshold, self.min_on_duration, self.min_off_duration];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(DataError::Invalid(format!("activation thresholds must be finite and >= 0: {self:?}")))
        }
    }
}

/// One "on" interval, `[start, end)` in series indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Activation {
    pub start: usize,
    pub end: usize,
}

impl Activation {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Runs where power reaches the on threshold, merged across off-gaps shorter
/// than `min_off_duration`, keeping only merged runs lasting at least
/// `min_on_duration`. Durations are `points * period`.
pub fn get_activations(s: &PowerSeries, spec: &ActivationSpec) -> Vec<Activation> {
    let on: Vec<bool> = s.values.iter().map(|&v| v >= spec.on_power_threshold).collect();
    let mut merged: Vec<Activation> = Vec::new();
    for (start, end) in runs(&on) {
        match merged.last_mut() {
            Some(prev) if ((start - prev.end) as f64) * s.period < spec.min_off_duration => prev.end = end,
            _ => merged.push(Activation { start, end }),
        }
    }
    merged.retain(|a| a.len() as f64 * s.period >= spec.min_on_duration);
    merged
}
