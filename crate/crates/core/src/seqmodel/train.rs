use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Examples per gradient work unit. Fixed so the summation order, and hence
/// the trained parameters, do not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            grad_clip: 5.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

fn apply_update(params: &mut [f64], grad: &[f64], lr: f64, adam: Option<&mut Adam>) {
    match adam {
        None => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Some(st) => {
            st.t += 1;
            let c1 = 1.0 - BETA1.powi(st.t);
            let c2 = 1.0 - BETA2.powi(st.t);
            for i in 0..params.len() {
                let g = grad[i];
                st.m[i] = BETA1 * st.m[i] + (1.0 - BETA1) * g;
                st.v[i] = BETA2 * st.v[i] + (1.0 - BETA2) * g * g;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

/// Minibatch training over a flat parameter buffer.
///
/// `example_grad(params, index, epoch, grad)` must add the gradient of example
/// `index` into `grad` and return its loss. Batches are drawn from a
/// per-epoch shuffle seeded by `config.seed`; gradients are averaged over the
/// batch and clipped by global norm. Returns the mean loss of each epoch.
pub fn fit<F>(params: &mut [f64], n_examples: usize, config: &TrainConfig, example_grad: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], usize, usize, &mut [f64]) -> Result<f64> + Sync,
{
    config.validate()?;
    if n_examples == 0 {
        return Err(Error::EmptyCorpus);
    }
    let n_params = params.len();
    let mut adam = match config.optimizer {
        OptimizerKind::Adam => Some(Adam {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }),
        OptimizerKind::Sgd => None,
    };
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n_examples).collect();

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(config.batch_size) {
            let frozen: &[f64] = params;
            let parts: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grad = vec![0.0; n_params];
                    let mut loss = 0.0;
                    for &i in chunk {
                        let l = example_grad(frozen, i, epoch, &mut grad)?;
                        if !l.is_finite() {
                            return Err(Error::NonFiniteLoss { epoch, example: i });
                        }
                        loss += l;
                    }
                    Ok((loss, grad))
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for part in parts {
                let (loss, g) = part?;
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if config.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.grad_clip {
                    let s = config.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            if config.learning_rate > 0.0 {
                apply_update(params, &grad, config.learning_rate, adam.as_mut());
            }
        }
        let mean = epoch_loss / n_examples as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, example: 0 });
        }
        history.push(mean);
    }
    Ok(history)
}
