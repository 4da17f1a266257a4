//! Adversarial objectives for the discriminator and the autoencoder.
//!
//! All objectives are written as quantities to minimize. Probabilities are
//! clamped to `[LOG_EPS, 1 - LOG_EPS]` before any logarithm, and gradients are
//! evaluated at the clamped value.

use crate::error::{Error, Result};
use crate::loss::mse_loss;
use crate::tensor::Tensor;

pub const LOG_EPS: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

fn check_probs(name: &str, p: &Tensor) -> Result<()> {
    if !p.all_finite() {
        return Err(Error::NonFinite {
            context: name.to_string(),
        });
    }
    if let Some(bad) = p.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!(
            "{name}: probability {bad} outside [0, 1]"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_adv: 0.01,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_rec: f64, lambda_adv: f64) -> Result<Self> {
        let w = Self {
            lambda_rec,
            lambda_adv,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_rec >= 0.0
            && self.lambda_adv >= 0.0
            && self.lambda_rec.is_finite()
            && self.lambda_adv.is_finite()
            && self.lambda_rec + self.lambda_adv > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid loss weights {self:?}")))
        }
    }
}

/// Which form of the autoencoder's adversarial term to minimize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GeneratorObjective {
    /// `mean(log(1 - D(y)))`.
    #[default]
    Saturating,
    /// `-mean(log D(y))`. Extension, not part of the original objective.
    NonSaturating,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorLoss {
    pub value: f64,
    pub grad_real: Tensor,
    pub grad_fake: Tensor,
}

/// `L_D = -(1/m) Σ [log d_real + log(1 - d_fake)]`.
pub fn discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<DiscriminatorLoss> {
    if d_real.len() != d_fake.len() {
        return Err(Error::shape(
            "discriminator_loss",
            d_real.shape(),
            d_fake.shape(),
        ));
    }
    check_probs("discriminator_loss d_real", d_real)?;
    check_probs("discriminator_loss d_fake", d_fake)?;
    let m = d_real.len() as f64;
    let mut sum = 0.0;
    for (&r, &f) in d_real.data().iter().zip(d_fake.data()) {
        sum += clamp_prob(r).ln() + (1.0 - clamp_prob(f)).ln();
    }
    Ok(DiscriminatorLoss {
        value: -sum / m,
        grad_real: d_real.map(|r| -1.0 / (m * clamp_prob(r))),
        grad_fake: d_fake.map(|f| 1.0 / (m * (1.0 - clamp_prob(f)))),
    })
}

#[derive(Clone, Debug)]
pub struct GeneratorAdvLoss {
    pub value: f64,
    pub grad_fake: Tensor,
}

pub fn generator_adversarial_loss(
    d_fake: &Tensor,
    objective: GeneratorObjective,
) -> Result<GeneratorAdvLoss> {
    check_probs("generator_adversarial_loss", d_fake)?;
    let m = d_fake.len() as f64;
    Ok(match objective {
        GeneratorObjective::Saturating => GeneratorAdvLoss {
            value: d_fake
                .data()
                .iter()
                .map(|&f| (1.0 - clamp_prob(f)).ln())
                .sum::<f64>()
                / m,
            grad_fake: d_fake.map(|f| -1.0 / (m * (1.0 - clamp_prob(f)))),
        },
        GeneratorObjective::NonSaturating => GeneratorAdvLoss {
            value: -d_fake
                .data()
                .iter()
                .map(|&f| clamp_prob(f).ln())
                .sum::<f64>()
                / m,
            grad_fake: d_fake.map(|f| -1.0 / (m * clamp_prob(f))),
        },
    })
}

#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub value: f64,
    pub reconstruction: f64,
    pub adversarial: f64,
    /// Gradient of the reconstruction term with respect to `y`.
    pub grad_y: Tensor,
    /// Gradient of the adversarial term with respect to the discriminator's
    /// outputs on `y`; route it back through the discriminator to reach `y`.
    pub grad_fake: Tensor,
}

/// `lambda_rec · MSE(y, x_mu) + lambda_adv · L_adv(d_fake)`.
pub fn combined_generator_loss(
    y: &Tensor,
    x_mu: &Tensor,
    d_fake: &Tensor,
    weights: &LossWeights,
    objective: GeneratorObjective,
) -> Result<CombinedLoss> {
    weights.validate()?;
    let (rec, rec_grad) = mse_loss(y, x_mu)?;
    let adv = generator_adversarial_loss(d_fake, objective)?;
    Ok(CombinedLoss {
        value: weights.lambda_rec * rec + weights.lambda_adv * adv.value,
        reconstruction: rec,
        adversarial: adv.value,
        grad_y: rec_grad.scale(weights.lambda_rec),
        grad_fake: adv.grad_fake.scale(weights.lambda_adv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_discriminator_is_near_zero() {
        let l = discriminator_loss(&probs(&[1.0 - 1e-7]), &probs(&[1e-7])).unwrap();
        assert!((l.value - 2e-7).abs() < 1e-12, "{}", l.value);
    }

    #[test]
    fn chance_discriminator() {
        let l = discriminator_loss(&probs(&[0.5, 0.5]), &probs(&[0.5, 0.5])).unwrap();
        assert!((l.value - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((l.value - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn generator_closed_forms() {
        let half =
            generator_adversarial_loss(&probs(&[0.5]), GeneratorObjective::Saturating).unwrap();
        assert!((half.value - 0.5f64.ln()).abs() < 1e-15);
        let sat = generator_adversarial_loss(&probs(&[1.0 - 1e-7]), GeneratorObjective::Saturating)
            .unwrap();
        assert!((sat.value - 1e-7f64.ln()).abs() < 1e-6);
        assert!((sat.value + 16.1181).abs() < 1e-4);
        // clamping keeps fully saturated outputs finite
        let one =
            generator_adversarial_loss(&probs(&[1.0]), GeneratorObjective::Saturating).unwrap();
        assert_eq!(one.value, sat.value);
        assert!(one.grad_fake.all_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(discriminator_loss(&probs(&[0.5]), &probs(&[0.5, 0.5])).is_err());
        assert!(discriminator_loss(&probs(&[1.5]), &probs(&[0.5])).is_err());
        assert!(discriminator_loss(&probs(&[f64::NAN]), &probs(&[0.5])).is_err());
        assert!(
            generator_adversarial_loss(&probs(&[-0.1]), GeneratorObjective::Saturating).is_err()
        );
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn degenerate_weights_reduce_to_components() {
        let y = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64 * 0.1);
        let t = Tensor::from_fn(&[2, 1, 2, 2], |i| 0.8 - i as f64 * 0.05);
        let d = probs(&[0.3, 0.9]);
        let obj = GeneratorObjective::Saturating;

        let rec_only =
            combined_generator_loss(&y, &t, &d, &LossWeights::new(1.0, 0.0).unwrap(), obj).unwrap();
        let (mse, mse_grad) = mse_loss(&y, &t).unwrap();
        assert_eq!(rec_only.value, mse);
        assert_eq!(rec_only.grad_y, mse_grad);

        let adv_only =
            combined_generator_loss(&y, &t, &d, &LossWeights::new(0.0, 1.0).unwrap(), obj).unwrap();
        let adv = generator_adversarial_loss(&d, obj).unwrap();
        assert_eq!(adv_only.value, adv.value);
        assert_eq!(adv_only.grad_fake, adv.grad_fake);
    }
}
