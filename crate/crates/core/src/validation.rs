//! Numerical oracles for the probabilistic facts the pricing formulas rest
//! on: conditioning on survival through the intensity, an exchange
//! inequality on finite supports, and the sign of covariances of monotone
//! transforms.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::default_engine::sample_default_times;
use crate::dividend::simulate_paths;
use crate::error::{Error, Result};
use crate::pricing::Economy;
use crate::scalar::Scalar;
use crate::stats::{combined_se, mean_se, MomentSample};

/// Serializable outcome of one oracle: raw quantities and verdicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub oracle: String,
    pub inputs_hash: String,
    pub quantities: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub pass: bool,
    /// Why the oracle was skipped or could not run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl OracleReport {
    pub fn new(oracle: &str, inputs: &impl Serialize) -> Result<Self> {
        let bytes = serde_json::to_vec(inputs)?;
        Ok(Self {
            oracle: oracle.into(),
            inputs_hash: hex::encode(Sha256::digest(&bytes)),
            quantities: BTreeMap::new(),
            flags: BTreeMap::new(),
            pass: false,
            note: None,
        })
    }

    pub fn put<F: Scalar>(&mut self, name: &str, v: F) {
        self.quantities.insert(name.into(), v.as_f64());
    }

    pub fn flag(&mut self, name: &str, v: bool) {
        self.flags.insert(name.into(), v);
    }

    pub fn quantity(&self, name: &str) -> f64 {
        self.quantities.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const MIN_SURVIVORS: usize = 1000;

/// Estimates `E[X | τ > t]` for `X = X1(D_T) 1{τ > T} + X2(D_T) 1{τ ≤ T}`
/// twice: (a) averaging `X` over simulated `(path, τ)` pairs alive at `t`,
/// (b) weighting every path by its survival probability
/// `e^{-∫_0^t λ}` and replacing the default indicator after `t` by
/// `e^{-∫_t^T λ}`. The two agree within three combined standard errors.
pub fn survival_reduction_check<F: Scalar>(
    econ: &Economy<F>,
    t: F,
    x1: impl Fn(F) -> F + Sync,
    x2: impl Fn(F) -> F + Sync,
    inputs: &impl Serialize,
) -> Result<OracleReport> {
    econ.validate()?;
    if !(t >= F::zero() && t < econ.horizon) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, T)")));
    }
    let paths = simulate_paths(
        &econ.model,
        F::zero(),
        econ.model.initial_level,
        econ.horizon,
        econ.mc.n_steps,
        econ.mc.n_paths,
        econ.mc.seed,
    )?;
    let defaults = sample_default_times(&paths, &econ.intensity, econ.mc.seed)?;
    let horizon = econ.horizon;
    let mut survivors = Vec::new();
    let mut rows = Vec::with_capacity(2 * defaults.len());
    for (i, s) in defaults.iter().enumerate() {
        let d = paths.path(i)[paths.n_times() - 1];
        let (a, b) = (x1(d), x2(d));
        if !s.defaulted_by(t) {
            survivors.push(if s.defaulted_by(horizon) { b } else { a });
        }
        let w = (-s.hazard_at(t)).exp();
        let q = (-(s.horizon_hazard() - s.hazard_at(t))).exp();
        rows.push(w * (q * a + (F::one() - q) * b));
        rows.push(w);
    }
    if survivors.len() < MIN_SURVIVORS {
        return Err(Error::InsufficientSample(format!(
            "{} paths survive to t = {t}, need {MIN_SURVIVORS}",
            survivors.len()
        )));
    }
    let raw = mean_se(&survivors)?;
    let m = MomentSample::from_rows(&rows, 2)?;
    let reduced = m.estimate(|v| v[0] / v[1]);
    // The floor absorbs rounding when both sides are exact.
    let rounding = F::lit(1e-4) * F::epsilon().sqrt() * (raw.value.abs() + reduced.value.abs());
    let tol = (F::lit(3.0) * combined_se(raw.se, reduced.se)).max(rounding);
    let mut rep = OracleReport::new("survival_conditioning", inputs)?;
    rep.put("t", t);
    rep.put("survivors", F::from_count(survivors.len()));
    rep.put("raw", raw.value);
    rep.put("raw_se", raw.se);
    rep.put("reduced", reduced.value);
    rep.put("reduced_se", reduced.se);
    rep.put("tolerance", tol);
    rep.pass = (raw.value - reduced.value).abs() <= tol;
    Ok(rep)
}

/// Point mass of a finite distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct Atom<F: Scalar> {
    pub x: F,
    pub p: F,
}

/// Exact check of `E[fg]E[fG] - E[fh]E[fH] >= 0` on a finite support, given
/// that `f >= 0` and `ψ(x,y) + ψ(y,x) >= 0` with `ψ(x,y) = g(x)G(y) - h(x)H(y)`.
/// Errors when the hypothesis fails somewhere on the support. The strict
/// variant requires distinct points and strict positivity off the diagonal.
#[allow(clippy::too_many_arguments)]
pub fn exchange_bruteforce<F: Scalar>(
    f: impl Fn(F) -> F,
    g: impl Fn(F) -> F,
    big_g: impl Fn(F) -> F,
    h: impl Fn(F) -> F,
    big_h: impl Fn(F) -> F,
    support: &[Atom<F>],
    inputs: &impl Serialize,
) -> Result<OracleReport> {
    if support.is_empty() {
        return Err(Error::EmptySample("empty support".into()));
    }
    let total: F = support.iter().map(|a| a.p).sum();
    if support.iter().any(|a| !(a.p > F::zero())) || (total - F::one()).abs() > F::lit(1e-12) {
        return Err(Error::InvalidParameter(
            "probabilities must be positive and sum to one".into(),
        ));
    }
    let fx: Vec<F> = support.iter().map(|a| f(a.x)).collect();
    if let Some(i) = fx.iter().position(|&v| !(v >= F::zero())) {
        return Err(Error::HypothesisViolation(format!(
            "f({}) = {} is negative",
            support[i].x, fx[i]
        )));
    }
    let gx: Vec<F> = support.iter().map(|a| g(a.x)).collect();
    let ggx: Vec<F> = support.iter().map(|a| big_g(a.x)).collect();
    let hx: Vec<F> = support.iter().map(|a| h(a.x)).collect();
    let hhx: Vec<F> = support.iter().map(|a| big_h(a.x)).collect();
    let psi = |i: usize, j: usize| gx[i] * ggx[j] - hx[i] * hhx[j];
    let scale = |i: usize, j: usize| (gx[i] * ggx[j]).abs() + (hx[i] * hhx[j]).abs();
    let slack = F::lit(1e-12);
    let mut min_sym = F::infinity();
    let mut strict = true;
    for i in 0..support.len() {
        for j in i..support.len() {
            let s = psi(i, j) + psi(j, i);
            let tol = slack * (scale(i, j) + scale(j, i));
            if s < -tol {
                return Err(Error::HypothesisViolation(format!(
                    "ψ(x,y) + ψ(y,x) = {s} < 0 at x = {}, y = {}",
                    support[i].x, support[j].x
                )));
            }
            if i != j {
                min_sym = min_sym.min(s);
                if !(s > tol) || support[i].x == support[j].x {
                    strict = false;
                }
            }
        }
    }
    let e = |v: &[F]| -> F { (0..support.len()).map(|i| support[i].p * fx[i] * v[i]).sum() };
    let lhs = e(&gx) * e(&ggx) - e(&hx) * e(&hhx);
    let mut rep = OracleReport::new("exchange_inequality", inputs)?;
    rep.put("lhs", lhs);
    rep.put("min_symmetrized_psi", if support.len() > 1 { min_sym } else { F::zero() });
    let magnitude = (e(&gx) * e(&ggx)).abs() + (e(&hx) * e(&hhx)).abs();
    let weak = lhs >= -slack * magnitude;
    let strict_hyp = strict && support.len() > 1 && fx.iter().all(|&v| v > F::zero());
    rep.flag("weak_pass", weak);
    rep.flag("strict_hypotheses", strict_hyp);
    rep.flag("strict_pass", strict_hyp && lhs > F::zero());
    rep.pass = weak && (!strict_hyp || lhs > F::zero());
    Ok(rep)
}

/// Whether the two transforms move together or oppositely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    /// Both increasing (or both decreasing): covariance nonnegative.
    Same,
    /// One increasing, one decreasing: covariance nonpositive.
    Opposite,
}

/// Sample covariance of `h1(X)` and `h2(X)` with its standard error, and
/// whether its sign is consistent with the monotonicity relation.
pub fn covariance_sign_check<F: Scalar>(
    h1: impl Fn(F) -> F,
    h2: impl Fn(F) -> F,
    samples: &[F],
    relation: Monotonicity,
    inputs: &impl Serialize,
) -> Result<OracleReport> {
    if samples.len() < 2 {
        return Err(Error::EmptySample("need at least two samples".into()));
    }
    if samples.iter().all(|&s| s == samples[0]) {
        return Err(Error::InsufficientSample("sample is constant".into()));
    }
    let a: Vec<F> = samples.iter().map(|&s| h1(s)).collect();
    let b: Vec<F> = samples.iter().map(|&s| h2(s)).collect();
    let n = F::from_count(samples.len());
    let ma = a.iter().copied().sum::<F>() / n;
    let mb = b.iter().copied().sum::<F>() / n;
    let prods: Vec<F> = a.iter().zip(&b).map(|(&x, &y)| (x - ma) * (y - mb)).collect();
    let est = mean_se(&prods)?;
    let cov = est.value * n / (n - F::one());
    let three = F::lit(3.0) * est.se;
    let mut rep = OracleReport::new("covariance_sign", inputs)?;
    rep.put("covariance", cov);
    rep.put("se", est.se);
    rep.pass = match relation {
        Monotonicity::Same => cov > -three,
        Monotonicity::Opposite => cov < three,
    };
    rep.flag("significant", cov.abs() > three);
    Ok(rep)
}
