use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activations::{get_activations, Activation, ActivationSpec};
use super::series::{CleanWindows, PowerSeries, DEFAULT_MAX_GAP_SECONDS};
use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Positive,
    Negative,
}

/// Why a candidate window produced no pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    ActivationTooLong,
    OutOfBounds,
    Gap,
    ZeroAggregate,
}

/// Where a pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub split: Split,
    pub kind: PairKind,
    /// Points in the source activation.
    pub activation_len: u32,
    /// Index of the first window point in the source series.
    pub start: u64,
    /// Whether the training filter was run on this pair.
    pub filtered: bool,
}

/// Un-normalized aligned windows in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPair {
    pub start: usize,
    pub aggregate: Vec<f64>,
    pub appliance: Vec<f64>,
}

/// Aligned aggregate/appliance windows divided by the aggregate maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub aggregate: Vec<f32>,
    pub appliance: Vec<f32>,
    /// Watts; the aggregate maximum before normalization.
    pub scale: f64,
    pub provenance: Provenance,
}

impl SamplePair {
    pub fn window_length(&self) -> usize {
        self.aggregate.len()
    }
}

/// Divides both windows by the aggregate maximum. Appliance readings above
/// the aggregate (meter skew) are clipped to 1.
pub fn normalize_pair(raw: &RawPair, provenance: Provenance) -> std::result::Result<SamplePair, Skip> {
    let scale = raw.aggregate.iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Skip::ZeroAggregate);
    }
    let norm = |v: &[f64]| v.iter().map(|&x| (x / scale).clamp(0.0, 1.0) as f32).collect();
    Ok(SamplePair {
        aggregate: norm(&raw.aggregate),
        appliance: norm(&raw.appliance),
        scale,
        provenance,
    })
}

/// Watts from normalized values.
pub fn denormalize<T: Copy + Into<f64>>(values: &[T], scale: f64) -> Result<Vec<f64>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(DataError::Invalid(format!("scale must be positive, got {scale}")));
    }
    Ok(values.iter().map(|&v| v.into() * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    /// Activation shorter than a third of the window.
    DiscardShortActivation,
    /// Aggregate exceeds three times the appliance on more than half the window.
    DiscardAggregateDominant,
}

pub fn filter_training_pair(p: &SamplePair, activation_len: usize) -> FilterDecision {
    let w = p.window_length();
    if 3 * activation_len < w {
        return FilterDecision::DiscardShortActivation;
    }
    let dominated = p
        .aggregate
        .iter()
        .zip(&p.appliance)
        .filter(|(&n, &m)| f64::from(n) > 3.0 * f64::from(m))
        .count();
    if 2 * dominated > w {
        FilterDecision::DiscardAggregateDominant
    } else {
        FilterDecision::Keep
    }
}

/// Window offsets that keep `act` inside a `window`-point window within a
/// series of `len` points.
pub fn positive_offsets(act: &Activation, window: usize, len: usize) -> Option<RangeInclusive<usize>> {
    if act.len() > window || window > len {
        return None;
    }
    let lo = act.end.saturating_sub(window);
    let hi = act.start.min(len - window);
    (lo <= hi).then_some(lo..=hi)
}

/// Aggregate and appliance channels on one grid, with their shared gap index.
#[derive(Debug, Clone)]
pub struct ChannelPair {
    pub aggregate: PowerSeries,
    pub appliance: PowerSeries,
    clean: CleanWindows,
}

impl ChannelPair {
    pub fn new(aggregate: PowerSeries, appliance: PowerSeries, max_gap_seconds: f64) -> Result<Self> {
        if aggregate.len() != appliance.len()
            || aggregate.period != appliance.period
            || aggregate.start_time != appliance.start_time
        {
            return Err(DataError::Invalid(
                "aggregate and appliance channels must share a grid; align them first".into(),
            ));
        }
        let bad: Vec<bool> = aggregate
            .long_gap_mask(max_gap_seconds)
            .into_iter()
            .zip(appliance.long_gap_mask(max_gap_seconds))
            .map(|(a, b)| a || b)
            .collect();
        Ok(Self {
            clean: CleanWindows::from_mask(&bad),
            aggregate,
            appliance,
        })
    }

    pub fn len(&self) -> usize {
        self.aggregate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aggregate.is_empty()
    }

    pub fn window(&self, start: usize, len: usize) -> RawPair {
        RawPair {
            start,
            aggregate: self.aggregate.values[start..start + len].to_vec(),
            appliance: self.appliance.values[start..start + len].to_vec(),
        }
    }

    /// Legal, gap-free offsets for a positive window.
    pub fn clean_positive_offsets(&self, act: &Activation, window: usize) -> std::result::Result<Vec<usize>, Skip> {
        if act.len() > window {
            return Err(Skip::ActivationTooLong);
        }
        let range = positive_offsets(act, window, self.len()).ok_or(Skip::OutOfBounds)?;
        let clean: Vec<usize> = range.filter(|&o| self.clean.is_clean(o, window)).collect();
        if clean.is_empty() {
            Err(Skip::Gap)
        } else {
            Ok(clean)
        }
    }

    /// Uniform over every clean placement that contains the activation.
    pub fn sample_positive<R: Rng + ?Sized>(
        &self,
        act: &Activation,
        window: usize,
        rng: &mut R,
    ) -> std::result::Result<RawPair, Skip> {
        let offsets = self.clean_positive_offsets(act, window)?;
        let start = offsets[rng.random_range(0..offsets.len())];
        Ok(self.window(start, window))
    }

    /// The window ending `back * window` points before the activation starts.
    pub fn sample_negative(&self, act: &Activation, window: usize, back: usize) -> std::result::Result<RawPair, Skip> {
        let start = act
            .start
            .checked_sub((back + 1) * window)
            .ok_or(Skip::OutOfBounds)?;
        if !self.clean.is_clean(start, window) {
            return Err(Skip::Gap);
        }
        Ok(self.window(start, window))
    }
}

/// Window generation settings for one appliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub window_length: usize,
    pub negatives_per_activation: usize,
    pub max_gap_seconds: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            window_length: 64,
            negatives_per_activation: 1,
            max_gap_seconds: DEFAULT_MAX_GAP_SECONDS,
        }
    }
}

/// Tallies of what happened to each candidate window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PairStats {
    pub activations: usize,
    pub positives: usize,
    pub negatives: usize,
    pub skipped_too_long: usize,
    pub skipped_out_of_bounds: usize,
    pub skipped_gap: usize,
    pub skipped_zero_aggregate: usize,
    pub discarded_short_activation: usize,
    pub discarded_aggregate_dominant: usize,
}

impl PairStats {
    fn skip(&mut self, s: Skip) {
        match s {
            Skip::ActivationTooLong => self.skipped_too_long += 1,
            Skip::OutOfBounds => self.skipped_out_of_bounds += 1,
            Skip::Gap => self.skipped_gap += 1,
            Skip::ZeroAggregate => self.skipped_zero_aggregate += 1,
        }
    }

    pub fn merge(&mut self, o: &PairStats) {
        self.activations += o.activations;
        self.positives += o.positives;
        self.negatives += o.negatives;
        self.skipped_too_long += o.skipped_too_long;
        self.skipped_out_of_bounds += o.skipped_out_of_bounds;
        self.skipped_gap += o.skipped_gap;
        self.skipped_zero_aggregate += o.skipped_zero_aggregate;
        self.discarded_short_activation += o.discarded_short_activation;
        self.discarded_aggregate_dominant += o.discarded_aggregate_dominant;
    }
}

/// One positive window per activation plus `negatives_per_activation`
/// windows preceding it. Training positives pass through
/// [`filter_training_pair`]; negatives and test pairs never do.
pub fn generate_pairs<R: Rng + ?Sized>(
    channels: &ChannelPair,
    spec: &ActivationSpec,
    cfg: &SamplingConfig,
    split: Split,
    rng: &mut R,
) -> (Vec<SamplePair>, PairStats) {
    let w = cfg.window_length;
    let mut stats = PairStats::default();
    let mut out = Vec::new();
    for act in get_activations(&channels.appliance, spec) {
        stats.activations += 1;
        let prov = |kind, start: usize| Provenance {
            split,
            kind,
            activation_len: act.len() as u32,
            start: start as u64,
            filtered: split == Split::Train && kind == PairKind::Positive,
        };
        match channels
            .sample_positive(&act, w, rng)
            .and_then(|raw| normalize_pair(&raw, prov(PairKind::Positive, raw.start)))
        {
            Ok(pair) => {
                let decision = if pair.provenance.filtered {
                    filter_training_pair(&pair, act.len())
                } else {
                    FilterDecision::Keep
                };
                match decision {
                    FilterDecision::Keep => {
                        stats.positives += 1;
                        out.push(pair);
                    }
                    FilterDecision::DiscardShortActivation => stats.discarded_short_activation += 1,
                    FilterDecision::DiscardAggregateDominant => stats.discarded_aggregate_dominant += 1,
                }
            }
            Err(s) => stats.skip(s),
        }
        for back in 0..cfg.negatives_per_activation {
            match channels
                .sample_negative(&act, w, back)
                .and_then(|raw| normalize_pair(&raw, prov(PairKind::Negative, raw.start)))
            {
                Ok(pair) => {
                    stats.negatives += 1;
                    out.push(pair);
                }
                Err(s) => stats.skip(s),
            }
        }
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const PROV: Provenance = Provenance {
        split: Split::Train,
        kind: PairKind::Positive,
        activation_len: 0,
        start: 0,
        filtered: true,
    };

    fn channels(agg: Vec<f64>, app: Vec<f64>) -> ChannelPair {
        ChannelPair::new(
            PowerSeries::new(0.0, 6.0, agg).unwrap(),
            PowerSeries::new(0.0, 6.0, app).unwrap(),
            DEFAULT_MAX_GAP_SECONDS,
        )
        .unwrap()
    }

    #[test]
    fn full_length_activation_has_one_placement() {
        let act = Activation { start: 10, end: 74 };
        assert_eq!(positive_offsets(&act, 64, 200), Some(10..=10));
    }

    #[test]
    fn uniform_over_55_offsets() {
        let c = channels(vec![1.0; 400], vec![0.0; 400]);
        let act = Activation { start: 100, end: 110 };
        let offsets = c.clean_positive_offsets(&act, 64).unwrap();
        assert_eq!(offsets.len(), 55);
        assert_eq!((offsets[0], offsets[54]), (46, 100));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut hist = vec![0usize; 55];
        for _ in 0..draws {
            let raw = c.sample_positive(&act, 64, &mut rng).unwrap();
            assert!(raw.start <= act.start && raw.start + 64 >= act.end);
            hist[raw.start - 46] += 1;
        }
        let expected = draws as f64 / 55.0;
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - expected).powi(2) / expected).sum();
        // 54 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 94.46, "chi2 = {chi2}");
    }

    #[test]
    fn too_long_and_gappy_windows_are_skipped() {
        let c = channels(vec![1.0; 100], vec![0.0; 100]);
        let act = Activation { start: 10, end: 80 };
        assert_eq!(c.sample_positive(&act, 64, &mut ChaCha8Rng::seed_from_u64(0)), Err(Skip::ActivationTooLong));

        let mut gaps = vec![false; 300];
        gaps[150..200].fill(true);
        let c = ChannelPair::new(
            PowerSeries::with_gaps(0.0, 6.0, vec![1.0; 300], gaps).unwrap(),
            PowerSeries::new(0.0, 6.0, vec![0.0; 300]).unwrap(),
            DEFAULT_MAX_GAP_SECONDS,
        )
        .unwrap();
        let act = Activation { start: 120, end: 130 };
        let offsets = c.clean_positive_offsets(&act, 64).unwrap();
        assert_eq!(offsets, (66..=86).collect::<Vec<_>>());
        assert_eq!(c.sample_negative(&Activation { start: 210, end: 220 }, 64, 0), Err(Skip::Gap));
    }

    #[test]
    fn negative_window_precedes_activation() {
        let c = channels((0..200).map(f64::from).collect(), vec![0.0; 200]);
        let act = Activation { start: 100, end: 110 };
        let raw = c.sample_negative(&act, 64, 0).unwrap();
        assert_eq!(raw.start, 36);
        assert_eq!(raw.aggregate[0], 36.0);
        assert_eq!(raw.aggregate.len(), 64);
        let early = Activation { start: 50, end: 60 };
        assert_eq!(c.sample_negative(&early, 64, 0), Err(Skip::OutOfBounds));
    }

    #[test]
    fn normalization_divides_by_aggregate_max() {
        let raw = RawPair {
            start: 0,
            aggregate: vec![0.0, 2500.0, 1250.0],
            appliance: vec![0.0, 2500.0, 0.0],
        };
        let p = normalize_pair(&raw, PROV).unwrap();
        assert_eq!(p.scale, 2500.0);
        assert_eq!(p.aggregate, vec![0.0, 1.0, 0.5]);
        assert_eq!(p.appliance, vec![0.0, 1.0, 0.0]);
        let zero = RawPair { start: 0, aggregate: vec![0.0; 3], appliance: vec![0.0; 3] };
        assert_eq!(normalize_pair(&zero, PROV), Err(Skip::ZeroAggregate));
        assert!(denormalize(&[1.0f32], 0.0).is_err());
        assert_eq!(denormalize(&[0.0f64, 1.0], 2500.0).unwrap(), vec![0.0, 2500.0]);
    }

    #[test]
    fn filter_rules() {
        let pair = |agg: Vec<f32>, app: Vec<f32>| SamplePair { aggregate: agg, appliance: app, scale: 1.0, provenance: PROV };
        let p = pair(vec![1.0; 1024], vec![1.0; 1024]);
        assert_eq!(filter_training_pair(&p, 300), FilterDecision::DiscardShortActivation);
        assert_eq!(filter_training_pair(&p, 342), FilterDecision::Keep);
        let mut app = vec![0.0f32; 64];
        app[..31].fill(1.0);
        assert_eq!(filter_training_pair(&pair(vec![1.0; 64], app.clone()), 40), FilterDecision::DiscardAggregateDominant);
        app[31] = 1.0;
        assert_eq!(filter_training_pair(&pair(vec![1.0; 64], app), 40), FilterDecision::Keep);
    }

    #[test]
    fn test_pairs_are_never_filtered() {
        let mut app = vec![0.0; 400];
        app[100..105].fill(2500.0);
        let agg: Vec<f64> = app.iter().map(|v| v + 100.0).collect();
        let c = channels(agg, app);
        let spec = ActivationSpec { on_power_threshold: 2000.0, min_on_duration: 12.0, min_off_duration: 0.0 };
        let cfg = SamplingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, s) = generate_pairs(&c, &spec, &cfg, Split::Train, &mut rng);
        assert_eq!(s.discarded_short_activation, 1);
        assert_eq!(train.len(), 1);
        assert_eq!(train[0].provenance.kind, PairKind::Negative);
        let (test, _) = generate_pairs(&c, &spec, &cfg, Split::Test, &mut rng);
        assert_eq!(test.len(), 2);
        assert!(test.iter().all(|p| !p.provenance.filtered));
        let neg = test.iter().find(|p| p.provenance.kind == PairKind::Negative).unwrap();
        assert!(neg.appliance.iter().all(|&v| (v as f64) * neg.scale < spec.on_power_threshold));
    }
}
