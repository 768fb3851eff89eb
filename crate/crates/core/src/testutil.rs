//! Test-only oracles shared by unit and integration tests.
//!
//! Finite differences here never touch the backward graph: every probe
//! evaluation runs on constant copies of the inputs under `no_grad`.

#![allow(dead_code)]

use nilm_core::data::{Activation, ActivationSpec};
use nilm_core::tensor::{no_grad, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;
/// Errors above this trigger a retry in [`check_gradients_at_steps`].
const RETRY_ABOVE: f64 = 1e-6;

/// Constant tensor with entries drawn uniformly from (-1, 1).
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Entries that needed a smaller step.
    pub fallbacks: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> GradReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    check_gradients_at(inputs, &all, f)
}

/// Checks the listed element indices of each input with central differences.
pub fn check_gradients_at<F>(inputs: &[Tensor<f64>], indices: &[Vec<usize>], f: F) -> GradReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    check_gradients_at_steps(inputs, indices, &[FD_STEP], f)
}

/// Like [`check_gradients_at`], but an entry whose difference quotient at
/// the first step disagrees is retried at the later steps and scored by the
/// best one. A ReLU kink inside `[x - h, x + h]` spoils one step size; a wrong
/// analytic gradient spoils all of them. Retries are counted in `fallbacks`.
pub fn check_gradients_at_steps<F>(inputs: &[Tensor<f64>], indices: &[Vec<usize>], steps: &[f64], f: F) -> GradReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let vars: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::variable(t.shape(), t.data().to_vec()).unwrap())
        .collect();
    f(&vars).backward().unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.numel()]))
        .collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        fallbacks: 0,
    };
    for (i, idxs) in indices.iter().enumerate() {
        for &j in idxs {
            let eval = |delta: f64| {
                let mut probe: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
                let mut data = inputs[i].data().to_vec();
                data[j] += delta;
                probe[i] = Tensor::new(inputs[i].shape(), data).unwrap();
                no_grad(|| f(&probe)).item().unwrap()
            };
            let mut best = (f64::INFINITY, 0.0);
            for (n, &h) in steps.iter().enumerate() {
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let err = rel_err(analytic[i][j], numeric);
                if err < best.0 {
                    best = (err, numeric);
                }
                if err <= RETRY_ABOVE {
                    break;
                }
                if n == 0 && steps.len() > 1 {
                    report.fallbacks += 1;
                }
            }
            report.checked += 1;
            if best.0 > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(best.0);
                report.worst = Some((i, j, analytic[i][j], best.1));
            }
        }
    }
    report
}

/// Closes short interior off-gaps on the on-mask first, then reads runs.
pub fn brute_force_activations(values: &[f64], period: f64, spec: &ActivationSpec) -> Vec<Activation> {
    let mut on: Vec<bool> = values.iter().map(|&v| v >= spec.on_power_threshold).collect();
    let n = on.len();
    let mut i = 0;
    while i < n {
        if !on[i] {
            let s = i;
            while i < n && !on[i] {
                i += 1;
            }
            let interior = s > 0 && i < n;
            if interior && ((i - s) as f64) * period < spec.min_off_duration {
                on[s..i].iter_mut().for_each(|b| *b = true);
            }
        } else {
            i += 1;
        }
    }
    let mut out = Vec::new();
    let mut start = None;
    for t in 0..=n {
        let cur = t < n && on[t];
        match (cur, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if ((t - s) as f64) * period >= spec.min_on_duration {
                    out.push(Activation { start: s, end: t });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

