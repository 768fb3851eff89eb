use super::{DataError, Result};

/// Target sampling period after resampling, in seconds.
pub const TARGET_PERIOD: f64 = 6.0;
/// Gap runs longer than this disqualify any window overlapping them.
pub const DEFAULT_MAX_GAP_SECONDS: f64 = 180.0;

const PERIOD_TOL: f64 = 1e-9;

/// Uniformly sampled active power in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSeries {
    /// Epoch seconds of sample 0.
    pub start_time: f64,
    /// Seconds between samples.
    pub period: f64,
    pub values: Vec<f64>,
    /// `true` where no reading existed for the slot.
    pub gaps: Vec<bool>,
}

impl PowerSeries {
    pub fn new(start_time: f64, period: f64, values: Vec<f64>) -> Result<Self> {
        let gaps = vec![false; values.len()];
        Self::with_gaps(start_time, period, values, gaps)
    }

    pub fn with_gaps(start_time: f64, period: f64, values: Vec<f64>, gaps: Vec<bool>) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(DataError::Invalid(format!("period must be positive, got {period}")));
        }
        if values.len() != gaps.len() {
            return Err(DataError::Invalid(format!(
                "{} values but {} gap flags",
                values.len(),
                gaps.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            start_time,
            period,
            values,
            gaps,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.period
    }

    /// Maximal runs of gap slots as `(start, end)` half-open ranges.
    pub fn gap_runs(&self) -> Vec<(usize, usize)> {
        runs(&self.gaps)
    }

    /// Forward-fills gap runs no longer than `max_gap_seconds`; longer runs
    /// are left at zero. Gap flags are kept either way.
    pub fn fill_short_gaps(&mut self, max_gap_seconds: f64) {
        for (s, e) in self.gap_runs() {
            let short = (e - s) as f64 * self.period <= max_gap_seconds;
            let fill = if short && s > 0 { self.values[s - 1] } else { 0.0 };
            self.values[s..e].fill(fill);
        }
    }

    /// Slots inside gap runs longer than `max_gap_seconds`.
    pub fn long_gap_mask(&self, max_gap_seconds: f64) -> Vec<bool> {
        let mut bad = vec![false; self.len()];
        for (s, e) in self.gap_runs() {
            if (e - s) as f64 * self.period > max_gap_seconds {
                bad[s..e].fill(true);
            }
        }
        bad
    }

    /// Index of windows that do not overlap any gap run longer than
    /// `max_gap_seconds`.
    pub fn clean_windows(&self, max_gap_seconds: f64) -> CleanWindows {
        CleanWindows::from_mask(&self.long_gap_mask(max_gap_seconds))
    }

    pub fn slice(&self, start: usize, end: usize) -> PowerSeries {
        PowerSeries {
            start_time: self.time_at(start),
            period: self.period,
            values: self.values[start..end].to_vec(),
            gaps: self.gaps[start..end].to_vec(),
        }
    }
}

pub(crate) fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let s = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            out.push((s, i));
        } else {
            i += 1;
        }
    }
    out
}

/// O(1) check that a window avoids long gaps.
#[derive(Debug, Clone)]
pub struct CleanWindows {
    prefix: Vec<u32>,
}

impl CleanWindows {
    /// `bad[i]` marks slots no window may cover.
    pub fn from_mask(bad: &[bool]) -> Self {
        let mut prefix = Vec::with_capacity(bad.len() + 1);
        prefix.push(0u32);
        for &b in bad {
            prefix.push(prefix.last().unwrap() + b as u32);
        }
        Self { prefix }
    }

    pub fn is_clean(&self, start: usize, len: usize) -> bool {
        let end = start + len;
        end < self.prefix.len() && self.prefix[end] == self.prefix[start]
    }
}

/// Bucket means over a coarser grid of `target_period` seconds. Buckets are
/// aligned to multiples of `target_period` in epoch time; buckets without
/// readings become gaps.
pub fn resample(s: &PowerSeries, target_period: f64) -> Result<PowerSeries> {
    if (s.period - target_period).abs() < PERIOD_TOL {
        return Ok(s.clone());
    }
    if s.period > target_period {
        return Err(DataError::Upsample {
            from: s.period,
            to: target_period,
        });
    }
    let bucket_of = |t: f64| (t / target_period + 1e-9).floor() as i64;
    let first = bucket_of(s.start_time);
    let n = if s.is_empty() {
        0
    } else {
        (bucket_of(s.time_at(s.len() - 1)) - first + 1) as usize
    };
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (i, (&v, &gap)) in s.values.iter().zip(&s.gaps).enumerate() {
        if gap {
            continue;
        }
        let b = (bucket_of(s.time_at(i)) - first) as usize;
        sum[b] += v;
        count[b] += 1;
    }
    let values = sum.iter().zip(&count).map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let gaps = count.iter().map(|&c| c == 0).collect();
    PowerSeries::with_gaps(first as f64 * target_period, target_period, values, gaps)
}

/// Down-samples to the 6 s working resolution.
pub fn resample_6s(s: &PowerSeries) -> Result<PowerSeries> {
    resample(s, TARGET_PERIOD)
}

/// Crops series with a common period onto their shared time range. Starts
/// are snapped to the nearest slot of the first series' grid.
pub fn align(series: &[&PowerSeries]) -> Result<Vec<PowerSeries>> {
    let first = series.first().ok_or_else(|| DataError::Invalid("nothing to align".into()))?;
    let period = first.period;
    if let Some(bad) = series.iter().find(|s| (s.period - period).abs() > PERIOD_TOL) {
        return Err(DataError::Invalid(format!(
            "cannot align periods {period} and {}",
            bad.period
        )));
    }
    let slot = |s: &PowerSeries| ((s.start_time - first.start_time) / period).round() as i64;
    let lo = series.iter().map(|s| slot(s)).max().unwrap();
    let hi = series.iter().map(|s| slot(s) + s.len() as i64).min().unwrap();
    if hi <= lo {
        return Err(DataError::Invalid("series do not overlap in time".into()));
    }
    Ok(series
        .iter()
        .map(|s| {
            let off = (lo - slot(s)) as usize;
            let mut out = s.slice(off, off + (hi - lo) as usize);
            out.start_time = first.start_time + lo as f64 * period;
            out
        })
        .collect())
}
