//! On/off classification, pointwise metrics and evaluation reports.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{DataError, SamplePair};
use crate::layers::Mode;
use crate::model::{ModelError, SequenceModel};
use crate::tensor::{no_grad, Scalar, TensorError};
use crate::training::batch_tensors;

pub use crate::data::denormalize;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: truth has {truth} points, prediction {pred}")]
    Length { truth: usize, pred: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Predictor(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `power >= threshold` per point.
pub fn classify_on_off(power: &[f64], threshold: f64) -> Vec<bool> {
    power.iter().map(|&p| p >= threshold).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

pub fn confusion(truth_on: &[bool], pred_on: &[bool]) -> Result<ConfusionCounts> {
    if truth_on.len() != pred_on.len() {
        return Err(EvalError::Length {
            truth: truth_on.len(),
            pred: pred_on.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in truth_on.iter().zip(pred_on) {
        match (t, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Recall, precision and F1. Any 0/0 ratio is reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub degenerate: bool,
}

pub fn f1(c: &ConfusionCounts) -> Scores {
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Scores {
        recall,
        precision,
        f1,
        degenerate,
    }
}

/// Mean absolute error, in the units of the inputs.
pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(EvalError::Length {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / truth.len() as f64)
}

/// Produces normalized appliance estimates for a batch of pairs.
pub trait Predictor: Sync {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<Vec<f64>>>;
}

/// Runs a sequence model in eval mode.
pub struct ModelPredictor<'a, M> {
    pub model: &'a M,
    pub batch_size: usize,
}

impl<'a, M> ModelPredictor<'a, M> {
    pub fn new(model: &'a M) -> Self {
        Self { model, batch_size: 32 }
    }
}

impl<M> ModelPredictor<'_, M> {
    fn run<S: Scalar>(&self, pairs: &[&SamplePair]) -> Result<Vec<Vec<f64>>>
    where
        M: SequenceModel<S>,
    {
        no_grad(|| {
            let mut out = Vec::with_capacity(pairs.len());
            for chunk in pairs.chunks(self.batch_size.max(1)) {
                let (x, _) = batch_tensors::<S>(chunk).map_err(|e| EvalError::Predictor(e.to_string()))?;
                let y = self.model.forward(&x, Mode::Eval)?;
                let w = chunk[0].window_length();
                out.extend(y.data().chunks(w).map(|r| r.iter().map(|v| v.as_f64()).collect()));
            }
            Ok(out)
        })
    }
}

impl<M: SequenceModel<f32>> Predictor for ModelPredictor<'_, M> {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<Vec<f64>>> {
        self.run::<f32>(pairs)
    }
}

/// Same as [`ModelPredictor`] at double precision.
pub struct ModelPredictor64<'a, M>(pub ModelPredictor<'a, M>);

impl<M: SequenceModel<f64>> Predictor for ModelPredictor64<'_, M> {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<Vec<f64>>> {
        self.0.run::<f64>(pairs)
    }
}

/// Echoes the ground-truth labels.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<Vec<f64>>> {
        Ok(pairs
            .iter()
            .map(|p| p.appliance.iter().map(|&v| v as f64).collect())
            .collect())
    }
}

/// Predicts the same normalized value everywhere.
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<Vec<f64>>> {
        Ok(pairs.iter().map(|p| vec![self.0; p.window_length()]).collect())
    }
}

/// Per-window tallies; the report is their exact sum.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub counts: ConfusionCounts,
    pub abs_error_sum: f64,
    pub points: u64,
    pub truth_watts: Vec<f64>,
    pub pred_watts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub appliance: String,
    pub threshold: f64,
    pub windows: usize,
    pub points: u64,
    pub counts: ConfusionCounts,
    pub scores: Scores,
    /// Watts.
    pub mae: f64,
    /// Optional normalizer, usually the appliance's maximum power.
    pub mae_normalizer: Option<f64>,
    pub config_digest: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn normalized_mae(&self) -> Option<f64> {
        self.mae_normalizer.filter(|&m| m > 0.0).map(|m| self.mae / m)
    }

    pub const CSV_HEADER: &'static str =
        "appliance,threshold_w,windows,points,tp,fp,tn,fn,recall,precision,f1,degenerate,mae_w,mae_normalized,config_digest,seed";

    pub fn csv_row(&self) -> String {
        let c = &self.counts;
        let s = &self.scores;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.appliance,
            self.threshold,
            self.windows,
            self.points,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            s.recall,
            s.precision,
            s.f1,
            s.degenerate,
            self.mae,
            self.normalized_mae().map(|v| v.to_string()).unwrap_or_default(),
            self.config_digest,
            self.seed
        )
    }

    pub fn to_csv(reports: &[EvalReport]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn to_table(reports: &[EvalReport]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>9} {:>9} {:>7} {:>10}",
            "appliance", "windows", "recall", "precision", "f1", "mae (W)"
        );
        for r in reports {
            let flag = if r.scores.degenerate { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<16} {:>8} {:>9.4} {:>9.4} {:>7.4} {:>10.2}{flag}",
                r.appliance, r.windows, r.scores.recall, r.scores.precision, r.scores.f1, r.mae
            );
        }
        if reports.iter().any(|r| r.scores.degenerate) {
            out.push_str("* a 0/0 ratio was reported as 0\n");
        }
        out
    }
}

/// Per-point dump: `window,index,truth_w,pred_w,seed`.
pub fn prediction_csv(results: &[WindowResult], seed: u64) -> String {
    let mut out = String::from("window,index,truth_w,pred_w,seed\n");
    for (w, r) in results.iter().enumerate() {
        for (i, (t, p)) in r.truth_watts.iter().zip(&r.pred_watts).enumerate() {
            let _ = writeln!(out, "{w},{i},{t},{p},{seed}");
        }
    }
    out
}

/// Scores one window after denormalizing with its own scale.
pub fn score_window(pair: &SamplePair, pred: &[f64], threshold: f64) -> Result<WindowResult> {
    let truth_watts = denormalize(&pair.appliance, pair.scale)?;
    let pred_watts = denormalize(pred, pair.scale)?;
    let counts = confusion(&classify_on_off(&truth_watts, threshold), &classify_on_off(&pred_watts, threshold))?;
    let abs_error_sum = truth_watts.iter().zip(&pred_watts).map(|(t, p)| (t - p).abs()).sum();
    Ok(WindowResult {
        counts,
        abs_error_sum,
        points: truth_watts.len() as u64,
        truth_watts,
        pred_watts,
    })
}

/// Evaluation settings for one appliance.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub appliance: String,
    pub threshold: f64,
    pub mae_normalizer: Option<f64>,
    pub config_digest: String,
    pub seed: u64,
    pub batch: usize,
    pub workers: usize,
}

/// Predicts every pair, then pools confusion counts and absolute errors over
/// all points of all windows. Workers split the pairs at batch boundaries and
/// results are summed in window order, so the report does not depend on the
/// worker count.
pub fn evaluate(predictor: &dyn Predictor, pairs: &[&SamplePair], spec: &EvalSpec) -> Result<(EvalReport, Vec<WindowResult>)> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let batch = spec.batch.max(1);
    let batches: Vec<&[&SamplePair]> = pairs.chunks(batch).collect();
    let score = |chunk: &[&SamplePair]| -> Result<Vec<WindowResult>> {
        let preds = predictor.predict(chunk)?;
        if preds.len() != chunk.len() {
            return Err(EvalError::Predictor(format!("{} predictions for {} windows", preds.len(), chunk.len())));
        }
        chunk
            .iter()
            .zip(&preds)
            .map(|(p, y)| score_window(p, y, spec.threshold))
            .collect()
    };
    let workers = spec.workers.clamp(1, batches.len());
    let per_batch: Vec<Result<Vec<WindowResult>>> = if workers == 1 {
        batches.iter().map(|c| score(c)).collect()
    } else {
        let per_worker = batches.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(per_worker)
                .map(|group| s.spawn(move || group.iter().map(|c| score(c)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let mut results = Vec::with_capacity(pairs.len());
    for r in per_batch {
        results.extend(r?);
    }

    let mut counts = ConfusionCounts::default();
    let mut abs = 0.0;
    let mut points = 0u64;
    for r in &results {
        counts.add(&r.counts);
        abs += r.abs_error_sum;
        points += r.points;
    }
    let report = EvalReport {
        appliance: spec.appliance.clone(),
        threshold: spec.threshold,
        windows: results.len(),
        points,
        counts,
        scores: f1(&counts),
        mae: abs / points as f64,
        mae_normalizer: spec.mae_normalizer,
        config_digest: spec.config_digest.clone(),
        seed: spec.seed,
    };
    Ok((report, results))
}
