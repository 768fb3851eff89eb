use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_input, ModelConfig, Result, SequenceModel};
use crate::layers::{prefixed, prefixed_mut, DilatedConv1d, Mode, Parameters, PositionwiseDense};
use crate::tensor::{Scalar, Tensor};

/// Stack of ordinary (dilation 1) convolutions with ReLU, followed by the
/// same position-wise head as the multi-scale network.
#[derive(Debug, Clone)]
pub struct BaselineCnn<S: Scalar> {
    pub convs: Vec<DilatedConv1d<S>>,
    pub hidden: PositionwiseDense<S>,
    pub output: PositionwiseDense<S>,
    config: ModelConfig,
}

impl<S: Scalar> BaselineCnn<S> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut c_in = 1;
        for &c in &config.baseline.channels {
            convs.push(DilatedConv1d::new(c_in, c, config.baseline.kernel_size, 1, &mut rng)?);
            c_in = c;
        }
        Ok(Self {
            convs,
            hidden: PositionwiseDense::new(c_in, config.head_hidden, &mut rng)?,
            output: PositionwiseDense::new(config.head_hidden, 1, &mut rng)?,
            config: config.clone(),
        })
    }
}

impl<S: Scalar> Parameters<S> for BaselineCnn<S> {
    fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<_> = self
            .convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| prefixed(&format!("convs.{i}"), c.parameters()))
            .collect();
        out.extend(prefixed("head.hidden", self.hidden.parameters()));
        out.extend(prefixed("head.output", self.output.parameters()));
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<_> = self
            .convs
            .iter_mut()
            .enumerate()
            .flat_map(|(i, c)| prefixed_mut(&format!("convs.{i}"), c.parameters_mut()))
            .collect();
        out.extend(prefixed_mut("head.hidden", self.hidden.parameters_mut()));
        out.extend(prefixed_mut("head.output", self.output.parameters_mut()));
        out
    }
}

impl<S: Scalar> SequenceModel<S> for BaselineCnn<S> {
    fn forward(&self, x: &Tensor<S>, _mode: Mode) -> Result<Tensor<S>> {
        check_input(x)?;
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu();
        }
        let h = self.hidden.forward(&h)?.relu();
        Ok(self.output.forward(&h)?.sigmoid())
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, BaselineConfig};
    use crate::testutil::{check_gradients, random_tensor};
    use proptest::prelude::*;

    fn config() -> ModelConfig {
        ModelConfig {
            architecture: Architecture::BaselineCnn,
            head_hidden: 4,
            baseline: BaselineConfig { channels: vec![3, 2], kernel_size: 3 },
            ..Default::default()
        }
    }

    #[test]
    fn zero_init_outputs_one_half() {
        let mut m = BaselineCnn::<f64>::new(&config(), 0).unwrap();
        for (_, t) in m.parameters_mut() {
            *t = Tensor::variable(t.shape(), vec![0.0; t.numel()]).unwrap();
        }
        let y = m.forward(&random_tensor(&[2, 1, 9], 1), Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let m = BaselineCnn::<f64>::new(&config(), 3).unwrap();
        let x = random_tensor(&[2, 1, 10], 2);
        let target = random_tensor(&[2, 1, 10], 5);
        // Random biases keep every ReLU away from its kink at exactly zero.
        let params: Vec<Tensor<f64>> = m
            .parameters()
            .iter()
            .enumerate()
            .map(|(i, (_, t))| random_tensor(t.shape(), 100 + i as u64))
            .collect();
        let template = m.clone();
        let r = check_gradients(&params, move |p| {
            let mut model = template.clone();
            for ((_, slot), v) in model.parameters_mut().into_iter().zip(p) {
                *slot = v.clone();
            }
            model.forward(&x, Mode::Eval).unwrap().mul(&target).unwrap().sum()
        });
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn preserves_length(len in 1usize..100) {
            let m = BaselineCnn::<f64>::new(&config(), 0).unwrap();
            let y = m.forward(&random_tensor(&[1, 1, len], 0), Mode::Eval).unwrap();
            prop_assert_eq!(y.shape(), &[1, 1, len]);
        }
    }
}
