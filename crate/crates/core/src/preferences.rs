//! Power and log utilities, their risk-aversion coefficients, and the
//! function `φ(x) = 1 - U'(x+1)/U'(x+ε)` behind the jump-sign results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Anything with a positive, strictly decreasing marginal utility. The PDE
/// engine only needs this much, which lets tests plug in fixtures.
pub trait MarginalUtility<F: Scalar>: Sync {
    fn marginal(&self, x: F) -> F;

    /// `-U''/U'`
    fn absolute_risk_aversion(&self, x: F) -> F;
}

/// Utility of the representative agent or of an individual investor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[serde(bound = "")]
pub enum Utility<F: Scalar> {
    /// `x^{1-γ}/(1-γ)` with relative risk aversion `γ ∈ (0, 1]`; `γ = 1` is log.
    Power { gamma: F },
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskAversionReport<F: Scalar> {
    pub absolute: F,
    pub relative: F,
}

impl<F: Scalar> Utility<F> {
    pub fn power(gamma: F) -> Result<Self> {
        let u = Utility::Power { gamma };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if let Utility::Power { gamma } = *self {
            if !(gamma > F::zero() && gamma <= F::one()) {
                return Err(Error::InvalidParameter(format!(
                    "relative risk aversion {gamma} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Relative risk aversion, constant for this family.
    pub fn gamma(&self) -> F {
        match *self {
            Utility::Power { gamma } => gamma,
            Utility::Log => F::one(),
        }
    }

    fn is_log(&self) -> bool {
        self.gamma() == F::one()
    }

    pub fn value(&self, x: F) -> F {
        if self.is_log() {
            x.ln()
        } else {
            let g = self.gamma();
            x.powf(F::one() - g) / (F::one() - g)
        }
    }

    #[inline]
    pub fn marginal(&self, x: F) -> F {
        if self.is_log() {
            x.recip()
        } else {
            x.powf(-self.gamma())
        }
    }

    pub fn second_derivative(&self, x: F) -> F {
        let g = self.gamma();
        -g * x.powf(-g - F::one())
    }

    /// Inverse marginal utility `I(y) = y^{-1/γ}`.
    #[inline]
    pub fn inverse_marginal(&self, y: F) -> F {
        if self.is_log() {
            y.recip()
        } else {
            y.powf(-self.gamma().recip())
        }
    }

    pub fn risk_aversion(&self, x: F) -> Result<RiskAversionReport<F>> {
        if !(x > F::zero()) {
            return Err(Error::InvalidParameter(format!("wealth {x} must be positive")));
        }
        let g = self.gamma();
        Ok(RiskAversionReport {
            absolute: g / x,
            relative: g,
        })
    }

    /// Every member of the family has strictly decreasing absolute risk
    /// aversion `γ/x`.
    pub fn is_dara(&self) -> bool {
        true
    }

    pub fn relative_risk_aversion_at_most_one(&self) -> bool {
        self.gamma() <= F::one()
    }

    pub fn phi(&self, eps: F, x: F) -> Result<F> {
        check_phi_args(eps, x)?;
        Ok(F::one() - self.marginal(x + F::one()) / self.marginal(x + eps))
    }

    /// `φ'(x) = U'(x+1)/U'(x+ε) · [ℓ(x+1) - ℓ(x+ε)]`.
    pub fn phi_prime(&self, eps: F, x: F) -> Result<F> {
        check_phi_args(eps, x)?;
        let one = F::one();
        let ratio = self.marginal(x + one) / self.marginal(x + eps);
        Ok(ratio * (self.absolute_risk_aversion(x + one) - self.absolute_risk_aversion(x + eps)))
    }
}

fn check_phi_args<F: Scalar>(eps: F, x: F) -> Result<()> {
    if !(eps > F::zero() && eps < F::one()) {
        return Err(Error::InvalidParameter(format!("recovery {eps} outside (0, 1)")));
    }
    if !(x > F::zero()) {
        return Err(Error::InvalidParameter(format!("level {x} must be positive")));
    }
    Ok(())
}

impl<F: Scalar> MarginalUtility<F> for Utility<F> {
    #[inline]
    fn marginal(&self, x: F) -> F {
        Utility::marginal(self, x)
    }

    #[inline]
    fn absolute_risk_aversion(&self, x: F) -> F {
        self.gamma() / x
    }
}
