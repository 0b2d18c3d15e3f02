//! Central finite-difference verification of analytic gradients.
//!
//! The operation under test is reduced to a scalar through a fixed random
//! projection `L = Σ r·y`. For each input element the numeric derivative is
//! `Σ r·(y(x+h) − y(x−h)) / 2h`, with the difference taken per output element
//! first so that unaffected outputs contribute exactly zero.

use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Maximum relative error per input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tol)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Finite-difference step for an element of magnitude `x`.
pub fn step_for(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Compares `backward` against central differences of `forward`.
///
/// `backward(inputs, dy)` must return one gradient vector per input, each of
/// that input's length.
pub fn grad_check<F, B>(forward: F, backward: B, inputs: &[Tensor<f64>], tol: f64, seed: u64) -> GradReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Vec<Vec<f64>>,
{
    let y0 = forward(inputs);
    let mut rng = SplitMix64::new(seed);
    let proj = Tensor::from_fn(y0.shape(), |_| rng.uniform(-1.0, 1.0));
    let analytic = backward(inputs, &proj);
    assert_eq!(analytic.len(), inputs.len(), "backward must return one gradient per input");

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for (t, grads) in analytic.iter().enumerate() {
        assert_eq!(grads.len(), inputs[t].len(), "gradient length for input {t}");
        let mut worst = 0.0f64;
        for i in 0..inputs[t].len() {
            let x = inputs[t].data()[i];
            let h = step_for(x);
            work[t].data_mut()[i] = x + h;
            let plus = forward(&work);
            work[t].data_mut()[i] = x - h;
            let minus = forward(&work);
            work[t].data_mut()[i] = x;
            let numeric = plus
                .data()
                .iter()
                .zip(minus.data())
                .zip(proj.data())
                .map(|((p, m), r)| r * (p - m))
                .sum::<f64>()
                / (2.0 * h);
            worst = worst.max(relative_error(grads[i], numeric));
        }
        max_rel_error.push(worst);
    }
    GradReport { max_rel_error, tol }
}
