//! Central finite-difference checking of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Relative error with a floor on the denominator; gradients below the floor
/// are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Upper bound on the number of coordinates perturbed across all inputs.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-4, max_samples: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckResult {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheck {
    /// Compare tape gradients of `f(inputs)` with central differences.
    ///
    /// `f` must build a scalar from the given leaves; it is re-run on a fresh
    /// tape for every perturbation.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckResult>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false)).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.value(out).data()[0])
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], |g| g.data().to_vec()))
            .collect();

        let total: usize = inputs.iter().map(Tensor::numel).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut picks = sample(&mut rng, total, self.max_samples.min(total)).into_vec();
        picks.sort_unstable();

        let mut work = inputs.to_vec();
        let mut max_rel_err = 0.0f64;
        for flat in &picks {
            let (mut which, mut idx) = (0, *flat);
            while idx >= work[which].numel() {
                idx -= work[which].numel();
                which += 1;
            }
            let orig = work[which].data()[idx];
            work[which].data_mut()[idx] = orig + self.step;
            let plus = eval(&work)?;
            work[which].data_mut()[idx] = orig - self.step;
            let minus = eval(&work)?;
            work[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * self.step);
            max_rel_err = max_rel_err.max(rel_err(analytic[which][idx], numeric));
        }
        Ok(GradCheckResult { max_rel_err, checked: picks.len() })
    }
}
