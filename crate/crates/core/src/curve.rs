//! Scalar functions of the dividend level: default intensities, short rates
//! and the coefficient functions of general dividend models.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A function `x ↦ f(x)` on the positive half-line.
///
/// The closed forms serialize into scenario configs; `Custom` is for
/// programmatic use only and cannot be written to a config or cache key.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
#[serde(bound = "")]
pub enum ScalarFn<F: Scalar> {
    /// `value`
    Constant { value: F },
    /// `scale · exp(-rate · x)`
    ExpDecay { scale: F, rate: F },
    /// `scale · (1 - exp(-rate · x))`
    Saturating { scale: F, rate: F },
    /// `intercept + slope · x`
    Linear { intercept: F, slope: F },
    #[serde(skip)]
    Custom(Arc<dyn Fn(F) -> F + Send + Sync>),
}

impl<F: Scalar> fmt::Debug for ScalarFn<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Constant { value } => write!(f, "Constant({value})"),
            ScalarFn::ExpDecay { scale, rate } => write!(f, "{scale}·exp(-{rate}x)"),
            ScalarFn::Saturating { scale, rate } => write!(f, "{scale}·(1-exp(-{rate}x))"),
            ScalarFn::Linear { intercept, slope } => write!(f, "{intercept}+{slope}x"),
            ScalarFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl<F: Scalar> PartialEq for ScalarFn<F> {
    fn eq(&self, other: &Self) -> bool {
        use ScalarFn::*;
        match (self, other) {
            (Constant { value: a }, Constant { value: b }) => a == b,
            (ExpDecay { scale: a, rate: b }, ExpDecay { scale: c, rate: d }) => a == c && b == d,
            (Saturating { scale: a, rate: b }, Saturating { scale: c, rate: d }) => {
                a == c && b == d
            }
            (Linear { intercept: a, slope: b }, Linear { intercept: c, slope: d }) => {
                a == c && b == d
            }
            (Custom(a), Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl<F: Scalar> ScalarFn<F> {
    pub fn constant(value: F) -> Self {
        ScalarFn::Constant { value }
    }

    pub fn custom(f: impl Fn(F) -> F + Send + Sync + 'static) -> Self {
        ScalarFn::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: F) -> F {
        match self {
            ScalarFn::Constant { value } => *value,
            ScalarFn::ExpDecay { scale, rate } => *scale * (-*rate * x).exp(),
            ScalarFn::Saturating { scale, rate } => *scale * (F::one() - (-*rate * x).exp()),
            ScalarFn::Linear { intercept, slope } => *intercept + *slope * x,
            ScalarFn::Custom(f) => f(x),
        }
    }

    pub fn as_constant(&self) -> Option<F> {
        match self {
            ScalarFn::Constant { value } => Some(*value),
            _ => None,
        }
    }

    pub fn is_serializable(&self) -> bool {
        !matches!(self, ScalarFn::Custom(_))
    }

    pub fn is_nondecreasing_on(&self, grid: &[F]) -> bool {
        grid.windows(2).all(|w| self.eval(w[1]) >= self.eval(w[0]))
    }

    pub fn is_nonincreasing_on(&self, grid: &[F]) -> bool {
        grid.windows(2).all(|w| self.eval(w[1]) <= self.eval(w[0]))
    }
}

/// Cyclicality of a curve in the dividend level: pro-cyclical means
/// nondecreasing, counter-cyclical nonincreasing. Constants are both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cyclicality {
    Pro,
    Counter,
    Constant,
    Unclassified,
}

/// An intensity `λ(x)` or short rate `r(x)` with its cyclicality tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CurveSpec<F: Scalar> {
    #[serde(flatten)]
    pub f: ScalarFn<F>,
    #[serde(default = "unclassified")]
    pub cyclicality: Cyclicality,
}

fn unclassified() -> Cyclicality {
    Cyclicality::Unclassified
}

impl<F: Scalar> CurveSpec<F> {
    pub fn new(f: ScalarFn<F>, cyclicality: Cyclicality) -> Self {
        Self { f, cyclicality }
    }

    pub fn constant(value: F) -> Self {
        Self::new(ScalarFn::constant(value), Cyclicality::Constant)
    }

    /// `scale · e^{-rate x}`, counter-cyclical for positive scale and rate.
    pub fn exp_decay(scale: F, rate: F) -> Self {
        Self::new(ScalarFn::ExpDecay { scale, rate }, Cyclicality::Counter)
    }

    /// `scale · (1 - e^{-rate x})`, pro-cyclical for positive scale and rate.
    pub fn saturating(scale: F, rate: F) -> Self {
        Self::new(ScalarFn::Saturating { scale, rate }, Cyclicality::Pro)
    }

    #[inline]
    pub fn eval(&self, x: F) -> F {
        self.f.eval(x)
    }

    pub fn as_constant(&self) -> Option<F> {
        self.f.as_constant()
    }

    /// Weakly pro-cyclical on `grid` (constants qualify).
    pub fn is_pro_on(&self, grid: &[F]) -> bool {
        self.f.is_nondecreasing_on(grid)
    }

    /// Weakly counter-cyclical on `grid` (constants qualify).
    pub fn is_counter_on(&self, grid: &[F]) -> bool {
        self.f.is_nonincreasing_on(grid)
    }

    /// Checks the cyclicality tag against a monotonicity scan on `grid`.
    pub fn certify(&self, grid: &[F]) -> Result<()> {
        let ok = match self.cyclicality {
            Cyclicality::Pro => self.is_pro_on(grid),
            Cyclicality::Counter => self.is_counter_on(grid),
            Cyclicality::Constant => self.is_pro_on(grid) && self.is_counter_on(grid),
            Cyclicality::Unclassified => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::HypothesisViolation(format!(
                "curve {:?} tagged {:?} fails the monotonicity scan",
                self.f, self.cyclicality
            )))
        }
    }

    /// Errors on the first grid point where the curve is negative.
    pub fn check_nonnegative_on(&self, grid: &[F]) -> Result<()> {
        for &x in grid {
            let v = self.eval(x);
            if v < F::zero() || v.is_nan() {
                return Err(Error::NegativeIntensity {
                    x: x.as_f64(),
                    value: v.as_f64(),
                });
            }
        }
        Ok(())
    }
}
