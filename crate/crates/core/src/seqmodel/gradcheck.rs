use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest error, and both derivatives there.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central-difference check of `analytic` (the gradient of `loss` at
/// `params`) over a random sample of coordinates.
pub fn finite_difference_check<F>(
    params: &[f64],
    analytic: &[f64],
    loss: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&config.epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {} outside [1e-7, 1e-3]",
            config.epsilon
        )));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension("gradient length".into()));
    }
    let n = config.samples.min(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: n,
    };
    for i in sample(&mut rng, params.len(), n) {
        let orig = probe[i];
        probe[i] = orig + config.epsilon;
        let up = loss(&probe)?;
        probe[i] = orig - config.epsilon;
        let down = loss(&probe)?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * config.epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_zero_is_zero_error() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }

    #[test]
    fn quadratic_passes() {
        let p = vec![1.0, -2.0, 0.5, 0.0];
        let grad: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = finite_difference_check(&p, &grad, |q| Ok(q.iter().map(|x| x * x).sum()), &GradCheckConfig::default())
            .unwrap();
        assert!(r.max_relative_error < 1e-8);
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let cfg = GradCheckConfig {
            epsilon: 0.1,
            ..Default::default()
        };
        assert!(finite_difference_check(&[1.0], &[2.0], |q| Ok(q[0] * q[0]), &cfg).is_err());
    }
}
