//! Seeded synthetic households for desk-scale experiments.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::activations::Activation;
use super::series::{PowerSeries, TARGET_PERIOD};
use super::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseShape {
    Rectangular { amplitude: f64 },
    /// `high` for the first `high_fraction` of each pulse, then `low`.
    TwoLevel { high: f64, low: f64, high_fraction: f64 },
}

/// An appliance that alternates between off and on with durations drawn
/// uniformly from inclusive point ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceTemplate {
    pub name: String,
    pub shape: PulseShape,
    pub on_points: [usize; 2],
    pub off_points: [usize; 2],
}

impl ApplianceTemplate {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DataError::Invalid(format!("appliance template {:?}: {msg}", self.name)));
        let [on_lo, on_hi] = self.on_points;
        let [off_lo, off_hi] = self.off_points;
        if on_lo == 0 || on_lo > on_hi {
            return bad("on_points must be a nonempty range of positive lengths");
        }
        if off_lo == 0 || off_lo > off_hi {
            return bad("off_points must be a nonempty range of positive lengths");
        }
        let ok = |w: f64| w.is_finite() && w > 0.0;
        match self.shape {
            PulseShape::Rectangular { amplitude } if !ok(amplitude) => bad("amplitude must be positive"),
            PulseShape::TwoLevel { high, low, high_fraction }
                if !ok(high) || !ok(low) || !(high_fraction > 0.0 && high_fraction <= 1.0) =>
            {
                bad("levels must be positive and high_fraction in (0, 1]")
            }
            _ => Ok(()),
        }
    }

    fn pulse(&self, len: usize, out: &mut [f64]) {
        match self.shape {
            PulseShape::Rectangular { amplitude } => out[..len].fill(amplitude),
            PulseShape::TwoLevel { high, low, high_fraction } => {
                let h = ((len as f64 * high_fraction).ceil() as usize).clamp(1, len);
                out[..h].fill(high);
                out[h..len].fill(low);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Points per generated house.
    pub length: usize,
    #[serde(default)]
    pub start_time: f64,
    /// Watts; background is `max(0, N(0, sigma))` per point.
    pub noise_sigma: f64,
    pub appliances: Vec<ApplianceTemplate>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(DataError::Invalid("scenario length must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(DataError::Invalid("noise_sigma must be finite and >= 0".into()));
        }
        if self.appliances.is_empty() {
            return Err(DataError::Invalid("scenario has no appliances".into()));
        }
        self.appliances.iter().try_for_each(ApplianceTemplate::validate)
    }

    /// The desk-scale acceptance household: a 2000 W kettle-like pulse and
    /// a 100 W cycling fridge-like load.
    pub fn kettle_and_fridge(length: usize) -> Self {
        Self {
            length,
            start_time: 0.0,
            noise_sigma: 30.0,
            appliances: vec![
                ApplianceTemplate {
                    name: "kettle".into(),
                    shape: PulseShape::Rectangular { amplitude: 2000.0 },
                    on_points: [24, 44],
                    off_points: [60, 240],
                },
                ApplianceTemplate {
                    name: "fridge".into(),
                    shape: PulseShape::Rectangular { amplitude: 100.0 },
                    on_points: [20, 40],
                    off_points: [20, 60],
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthAppliance {
    pub name: String,
    pub series: PowerSeries,
    /// Injected on-intervals.
    pub intervals: Vec<Activation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthHouse {
    pub aggregate: PowerSeries,
    pub appliances: Vec<SynthAppliance>,
}

impl SynthHouse {
    pub fn appliance(&self, name: &str) -> Option<&SynthAppliance> {
        self.appliances.iter().find(|a| a.name == name)
    }
}

/// Each appliance starts with an off period, then alternates on/off until
/// the series ends. A pulse that would run past the end is not started.
pub fn synth_generate<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<SynthHouse> {
    scenario.validate()?;
    let n = scenario.length;
    let mut total = vec![0.0; n];
    let mut appliances = Vec::with_capacity(scenario.appliances.len());
    for t in &scenario.appliances {
        let mut values = vec![0.0; n];
        let mut intervals = Vec::new();
        let mut i = rng.random_range(t.off_points[0]..=t.off_points[1]);
        while i < n {
            let on = rng.random_range(t.on_points[0]..=t.on_points[1]);
            if i + on > n {
                break;
            }
            t.pulse(on, &mut values[i..]);
            intervals.push(Activation { start: i, end: i + on });
            i += on + rng.random_range(t.off_points[0]..=t.off_points[1]);
        }
        total.iter_mut().zip(&values).for_each(|(a, v)| *a += v);
        appliances.push(SynthAppliance {
            name: t.name.clone(),
            series: PowerSeries::new(scenario.start_time, TARGET_PERIOD, values)?,
            intervals,
        });
    }
    if scenario.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, scenario.noise_sigma).map_err(|e| DataError::Invalid(e.to_string()))?;
        total.iter_mut().for_each(|a| *a += noise.sample(rng).max(0.0));
    }
    Ok(SynthHouse {
        aggregate: PowerSeries::new(scenario.start_time, TARGET_PERIOD, total)?,
        appliances,
    })
}
