//! Feature-matching and least-squares adversarial objectives.

use crate::discriminator::ScaleOutput;
use crate::error::{config_err, contract_err, dim_err, Result};
use crate::tensor::{Element, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GanMode {
    /// Real target 1, fake target 0, squared error.
    #[default]
    LeastSquares,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_fm: f64,
    pub gan_mode: GanMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_fm: 10.0, gan_mode: GanMode::LeastSquares }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_fm.is_finite() || self.lambda_fm < 0.0 {
            return Err(config_err!("lambda_fm must be finite and >= 0, got {}", self.lambda_fm));
        }
        Ok(())
    }
}

/// `Σ_i (1/N_i)·‖real_i − fake_i‖₁`, with `N_i` the element count of layer `i`.
///
/// Real features are detached: no gradient reaches whatever produced them.
pub fn feature_matching_loss<T: Element>(tape: &mut Tape<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(dim_err!("feature lists have {} and {} layers", real.len(), fake.len()));
    }
    let terms = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| {
            let r = tape.detach(r);
            // l1_loss is the per-element mean, i.e. ‖·‖₁ / N_i
            tape.l1_loss(r, f)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.add_all(&terms)
}

fn check_scales(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(contract_err!("scale count mismatch: {a} vs {b}"));
    }
    Ok(())
}

/// `Σ_k [mean (real_k − 1)² + mean fake_k²]`.
///
/// Callers must produce `fake_logits` from a detached generator output.
pub fn gan_loss_discriminator<T: Element>(tape: &mut Tape<T>, real_logits: &[Var], fake_logits: &[Var]) -> Result<Var> {
    check_scales(real_logits.len(), fake_logits.len())?;
    let mut terms = Vec::with_capacity(2 * real_logits.len());
    for (&r, &f) in real_logits.iter().zip(fake_logits) {
        terms.push(tape.mse_to(r, T::one()));
        terms.push(tape.mse_to(f, T::zero()));
    }
    tape.add_all(&terms)
}

/// `Σ_k mean (fake_k − 1)² + λ_FM · Σ_k FM_k`.
pub fn total_generator_loss<T: Element>(
    tape: &mut Tape<T>,
    fake_logits: &[Var],
    real_feats: &[Vec<Var>],
    fake_feats: &[Vec<Var>],
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    check_scales(fake_logits.len(), real_feats.len())?;
    check_scales(real_feats.len(), fake_feats.len())?;
    let adv: Vec<Var> = fake_logits.iter().map(|&f| tape.mse_to(f, T::one())).collect();
    let adv = tape.add_all(&adv)?;
    let fm = real_feats
        .iter()
        .zip(fake_feats)
        .map(|(r, f)| feature_matching_loss(tape, r, f))
        .collect::<Result<Vec<_>>>()?;
    let fm = tape.add_all(&fm)?;
    let fm = tape.scale(fm, T::from_f64_lossy(weights.lambda_fm));
    tape.add(adv, fm)
}

/// Convenience: split per-scale discriminator outputs into logits and features.
pub fn unzip_scales(outs: &[ScaleOutput]) -> (Vec<Var>, Vec<Vec<Var>>) {
    outs.iter().map(|o| (o.logits, o.features.clone())).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap(), true)
    }

    fn val(tape: &Tape<f64>, v: Var) -> f64 {
        tape.value(v).data()[0]
    }

    #[test]
    fn feature_matching_hand_case() {
        let mut t = Tape::new();
        let r = [leaf(&mut t, &[1], vec![1.0]), leaf(&mut t, &[2], vec![1.0, 1.0])];
        let f = [leaf(&mut t, &[1], vec![0.0]), leaf(&mut t, &[2], vec![0.0, 0.0])];
        let l = feature_matching_loss(&mut t, &r, &f).unwrap();
        assert_eq!(val(&t, l), 2.0);
        let same = feature_matching_loss(&mut t, &r, &r).unwrap();
        assert_eq!(val(&t, same), 0.0);
        assert!(feature_matching_loss(&mut t, &r, &f[..1]).is_err());
        assert!(feature_matching_loss(&mut t, &[r[0]], &[f[1]]).is_err());
    }

    #[test]
    fn feature_matching_is_homogeneous_and_size_invariant() {
        let mut t = Tape::new();
        let base_r: Vec<f64> = (0..6).map(|i| (i as f64 * 1.3).sin()).collect();
        let base_f: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).cos()).collect();
        let r = leaf(&mut t, &[6], base_r.clone());
        let f = leaf(&mut t, &[6], base_f.clone());
        let l = feature_matching_loss(&mut t, &[r], &[f]).unwrap();
        let c = 3.5;
        let rs = leaf(&mut t, &[6], base_r.iter().map(|v| v * c).collect());
        let fs = leaf(&mut t, &[6], base_f.iter().map(|v| v * c).collect());
        let ls = feature_matching_loss(&mut t, &[rs], &[fs]).unwrap();
        assert!((val(&t, ls) - c * val(&t, l)).abs() < 1e-12);

        let rd = leaf(&mut t, &[12], base_r.iter().chain(&base_r).copied().collect());
        let fd = leaf(&mut t, &[12], base_f.iter().chain(&base_f).copied().collect());
        let ld = feature_matching_loss(&mut t, &[rd], &[fd]).unwrap();
        assert!((val(&t, ld) - val(&t, l)).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_cases() {
        let mut t = Tape::new();
        let ones = leaf(&mut t, &[1, 1, 2, 2], vec![1.0; 4]);
        let zeros = leaf(&mut t, &[1, 1, 2, 2], vec![0.0; 4]);
        let perfect = gan_loss_discriminator(&mut t, &[ones], &[zeros]).unwrap();
        assert_eq!(val(&t, perfect), 0.0);
        let r = leaf(&mut t, &[1], vec![0.0]);
        let f = leaf(&mut t, &[1], vec![1.0]);
        let worst = gan_loss_discriminator(&mut t, &[r], &[f]).unwrap();
        assert_eq!(val(&t, worst), 2.0);
        assert!(matches!(gan_loss_discriminator(&mut t, &[r, r], &[f]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn generator_loss_cases() {
        let mut t = Tape::new();
        let logit = leaf(&mut t, &[1], vec![0.5]);
        let real = vec![vec![leaf(&mut t, &[1], vec![2.0])]];
        let fake = vec![vec![leaf(&mut t, &[1], vec![0.0])]];
        let w = LossWeights { lambda_fm: 10.0, ..Default::default() };
        let l = total_generator_loss(&mut t, &[logit], &real, &fake, &w).unwrap();
        assert_eq!(val(&t, l), 20.25);

        let pure = LossWeights { lambda_fm: 0.0, ..Default::default() };
        let l0 = total_generator_loss(&mut t, &[logit], &real, &fake, &pure).unwrap();
        assert_eq!(val(&t, l0), 0.25);

        let one = leaf(&mut t, &[1], vec![1.0]);
        let lz = total_generator_loss(&mut t, &[one], &real, &real, &w).unwrap();
        assert_eq!(val(&t, lz), 0.0);

        let bad = LossWeights { lambda_fm: -1.0, ..Default::default() };
        assert!(total_generator_loss(&mut t, &[logit], &real, &fake, &bad).is_err());
    }
}
