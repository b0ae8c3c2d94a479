//! Pre- and post-default prices by forward Monte Carlo from a state `(t, x)`.
//!
//! Every quantity is a smooth function of a handful of path averages taken
//! on the same paths. With `D = D_T`, `E = e^{-∫λ}`, `R = e^{∫r}` and
//! `Δu = U'(D+ε) - U'(D+1)` these are
//!
//! ```text
//! a = E[D U'(D+ε)]      b = E[E D Δu]
//! c = E[R U'(D+ε)]      d = E[R E Δu]
//! ```
//!
//! so that `ξ_post = c`, `ξ_pre = c - d`, `S_post = a/c` and
//! `S_pre = (a - b)/(c - d)`. Standard errors come from the delta method on
//! the joint sample of all averages. Spatial derivatives use bumped starting
//! levels driven by the same Brownian increments.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{McSettings, ScenarioConfig};
use crate::curve::CurveSpec;
use crate::dividend::{DividendModel, TerminalSimulator};
use crate::error::{Error, Result};
use crate::preferences::Utility;
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;
use crate::stats::{combined_se, Estimate, MomentSample};

/// A Markov state of the economy together with the default indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MarketPoint<F: Scalar> {
    pub t: F,
    pub x: F,
    pub defaulted: bool,
}

impl<F: Scalar> MarketPoint<F> {
    pub fn pre(t: F, x: F) -> Self {
        Self { t, x, defaulted: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PrePostPair<F: Scalar> {
    pub pre: Estimate<F>,
    pub post: Estimate<F>,
}

impl<F: Scalar> PrePostPair<F> {
    /// The component that applies in the given default state.
    pub fn at(&self, defaulted: bool) -> Estimate<F> {
        if defaulted {
            self.post
        } else {
            self.pre
        }
    }

    /// `pre <= post` up to three combined standard errors.
    pub fn pre_below_post(&self) -> bool {
        self.pre.value <= self.post.value + F::lit(3.0) * combined_se(self.pre.se, self.post.se)
    }
}

/// Everything a forward pricing run needs. Recovery may be 1 here, which
/// tests use as the no-loss boundary; configs keep it strictly below 1.
#[derive(Debug, Clone)]
pub struct Economy<F: Scalar> {
    pub model: DividendModel<F>,
    pub intensity: CurveSpec<F>,
    pub rate: CurveSpec<F>,
    pub utility: Utility<F>,
    pub epsilon: F,
    pub horizon: F,
    pub mc: McSettings<F>,
}

impl<F: Scalar> Economy<F> {
    pub fn from_config(cfg: &ScenarioConfig<F>) -> Self {
        Self {
            model: cfg.dividend_model(),
            intensity: cfg.curves.intensity.clone(),
            rate: cfg.curves.rate.clone(),
            utility: cfg.utility,
            epsilon: cfg.recovery.epsilon,
            horizon: cfg.horizon,
            mc: cfg.mc.clone(),
        }
    }

    pub fn with_epsilon(&self, epsilon: F) -> Self {
        Self { epsilon, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.utility.validate()?;
        if !(self.epsilon > F::zero() && self.epsilon <= F::one()) {
            return Err(Error::InvalidParameter(format!(
                "recovery {} outside (0, 1]",
                self.epsilon
            )));
        }
        if !(self.horizon > F::zero()) {
            return Err(Error::InvalidParameter(format!("horizon {} must be positive", self.horizon)));
        }
        if self.mc.n_paths < 2 || self.mc.n_steps == 0 {
            return Err(Error::InvalidGrid("need at least two paths and one step".into()));
        }
        Ok(())
    }

    /// Steps for the remaining horizon, keeping the step size of the full run.
    pub fn steps_from(&self, t: F) -> usize {
        let frac = (self.horizon - t) / self.horizon;
        let n = (F::from_count(self.mc.n_steps) * frac).ceil();
        n.to_usize().unwrap_or(1).max(1)
    }

    fn check_point(&self, point: &MarketPoint<F>) -> Result<()> {
        if !(point.t >= F::zero() && point.t < self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "time {} outside [0, T) with T = {}",
                point.t, self.horizon
            )));
        }
        if !(point.x > F::zero()) {
            return Err(Error::InvalidParameter(format!("level {} must be positive", point.x)));
        }
        Ok(())
    }
}

/// An investor whose terminal wealth is `I(y · U_rep'(D_T + P_T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthLeg<F: Scalar> {
    pub utility: Utility<F>,
    pub multiplier: F,
}

const A: usize = 0;
const B: usize = 1;
const C: usize = 2;
const D: usize = 3;
const BOND_POST: usize = 4;
const BOND_PRE: usize = 5;
const PER_LEVEL: usize = 6;
const PER_INVESTOR: usize = 4;

/// Joint path sample at one state, optionally with bumped starting levels.
#[derive(Debug, Clone)]
pub struct PointSample<F: Scalar> {
    pub point: MarketPoint<F>,
    /// Relative bump `h`; levels are `x`, `x(1∓h)`, `x(1∓h/2)`.
    pub bump: Option<F>,
    intensity_at_x: F,
    sigma_at_x: F,
    epsilon: F,
    n_levels: usize,
    n_investors: usize,
    moments: MomentSample<F>,
}

impl<F: Scalar> PointSample<F> {
    pub fn simulate(
        econ: &Economy<F>,
        point: MarketPoint<F>,
        bump: Option<F>,
        investors: &[WealthLeg<F>],
    ) -> Result<Self> {
        econ.validate()?;
        econ.check_point(&point)?;
        let x = point.x;
        let levels: Vec<F> = match bump {
            None => vec![x],
            Some(h) => {
                if !(h > F::zero() && h < F::lit(0.5)) {
                    return Err(Error::InvalidParameter(format!("bump {h} outside (0, 0.5)")));
                }
                let half = h * F::lit(0.5);
                vec![
                    x,
                    x * (F::one() - h),
                    x * (F::one() + h),
                    x * (F::one() - half),
                    x * (F::one() + half),
                ]
            }
        };
        let remaining = econ.horizon - point.t;
        let sim = TerminalSimulator::new(
            &econ.model,
            remaining,
            econ.steps_from(point.t),
            econ.mc.seed,
            &econ.intensity.f,
            &econ.rate.f,
        )?;
        let eps = econ.epsilon;
        let u = &econ.utility;
        let n_lv = levels.len();
        let k = n_lv * PER_LEVEL + investors.len() * PER_INVESTOR;
        let moments = MomentSample::accumulate(econ.mc.n_paths, k, |i, row| {
            for (l, &x0) in levels.iter().enumerate() {
                let s = sim.path(x0, i)?;
                let dv = s.terminal;
                let surv = (-s.hazard).exp();
                let disc = s.rate.exp();
                let ue = u.marginal(dv + eps);
                let u1 = u.marginal(dv + F::one());
                let du = ue - u1;
                let out = &mut row[l * PER_LEVEL..(l + 1) * PER_LEVEL];
                out[A] = dv * ue;
                out[B] = surv * dv * du;
                out[C] = disc * ue;
                out[D] = disc * surv * du;
                out[BOND_POST] = eps * ue;
                out[BOND_PRE] = eps * ue - surv * (eps * ue - u1);
                if l == 0 && !investors.is_empty() {
                    let base = n_lv * PER_LEVEL;
                    for (j, inv) in investors.iter().enumerate() {
                        let ie = inv.utility.inverse_marginal(inv.multiplier * ue);
                        let i1 = inv.utility.inverse_marginal(inv.multiplier * u1);
                        let nu = F::one() - F::one() / inv.utility.gamma();
                        let o = &mut row[base + j * PER_INVESTOR..base + (j + 1) * PER_INVESTOR];
                        o[0] = ue * ie;
                        o[1] = surv * (ue * ie - u1 * i1);
                        o[2] = surv * u1.powf(nu);
                        o[3] = ue.powf(nu);
                    }
                }
            }
            Ok(())
        })?;
        Ok(Self {
            point,
            bump,
            intensity_at_x: econ.intensity.eval(x),
            sigma_at_x: econ.model.sigma(x),
            epsilon: eps,
            n_levels: n_lv,
            n_investors: investors.len(),
            moments,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.moments.n
    }

    fn m(&self, means: &[F], level: usize, col: usize) -> F {
        means[level * PER_LEVEL + col]
    }

    fn xi_pre_at(&self, v: &[F], l: usize) -> F {
        self.m(v, l, C) - self.m(v, l, D)
    }

    fn xi_post_at(&self, v: &[F], l: usize) -> F {
        self.m(v, l, C)
    }

    fn stock_pre_at(&self, v: &[F], l: usize) -> F {
        (self.m(v, l, A) - self.m(v, l, B)) / self.xi_pre_at(v, l)
    }

    fn stock_post_at(&self, v: &[F], l: usize) -> F {
        self.m(v, l, A) / self.xi_post_at(v, l)
    }

    fn kappa_at(&self, v: &[F], l: usize) -> F {
        self.xi_post_at(v, l) / self.xi_pre_at(v, l) - F::one()
    }

    fn pair(&self, pre: impl Fn(&[F]) -> F, post: impl Fn(&[F]) -> F) -> PrePostPair<F> {
        PrePostPair {
            pre: self.moments.estimate(pre),
            post: self.moments.estimate(post),
        }
    }

    pub fn xi(&self) -> PrePostPair<F> {
        self.pair(|v| self.xi_pre_at(v, 0), |v| self.xi_post_at(v, 0))
    }

    pub fn stock(&self) -> PrePostPair<F> {
        self.pair(|v| self.stock_pre_at(v, 0), |v| self.stock_post_at(v, 0))
    }

    pub fn bond(&self) -> PrePostPair<F> {
        self.pair(
            |v| self.m(v, 0, BOND_PRE) / self.xi_pre_at(v, 0),
            |v| self.m(v, 0, BOND_POST) / self.xi_post_at(v, 0),
        )
    }

    /// `S_post - S_pre`.
    pub fn stock_jump(&self) -> Estimate<F> {
        self.moments
            .estimate(|v| self.stock_post_at(v, 0) - self.stock_pre_at(v, 0))
    }

    /// `κ = ξ_post/ξ_pre - 1`.
    pub fn kappa(&self) -> Estimate<F> {
        self.moments.estimate(|v| self.kappa_at(v, 0))
    }

    /// Risk-neutral intensity `λ(x)(1 + κ)`.
    pub fn risk_neutral_intensity(&self) -> Estimate<F> {
        let lam = self.intensity_at_x;
        self.moments.estimate(|v| lam * (self.kappa_at(v, 0) + F::one()))
    }

    fn bump_levels(&self, half: bool) -> Result<(usize, usize, F)> {
        let h = self
            .bump
            .ok_or_else(|| Error::InvalidParameter("sample was drawn without a bump".into()))?;
        Ok(if half { (3, 4, h * F::lit(0.5)) } else { (1, 2, h) })
    }

    fn require_diffusion(&self) -> Result<()> {
        if !(self.sigma_at_x > F::zero()) {
            return Err(Error::DegenerateDiffusion(format!(
                "σ({}) = {} is not positive",
                self.point.x, self.sigma_at_x
            )));
        }
        Ok(())
    }

    /// `-(∂_x ξ / ξ) · x σ(x)` from the bump pair, as a function of the means.
    fn theta_fn<'a>(
        &'a self,
        pre: bool,
        half: bool,
    ) -> Result<impl Fn(&[F]) -> F + 'a> {
        let (dn, up, h) = self.bump_levels(half)?;
        let sigma = self.sigma_at_x;
        Ok(move |v: &[F]| {
            let xi = |l| if pre { self.xi_pre_at(v, l) } else { self.xi_post_at(v, l) };
            -(xi(up) - xi(dn)) / ((h + h) * xi(0)) * sigma
        })
    }

    fn theta_with(&self, half: bool) -> Result<PrePostPair<F>> {
        self.require_diffusion()?;
        Ok(PrePostPair {
            pre: self.moments.estimate(self.theta_fn(true, half)?),
            post: self.moments.estimate(self.theta_fn(false, half)?),
        })
    }

    /// Market prices of diffusion risk before and after default. Errors when
    /// halving the bump moves either estimate by more than three standard
    /// errors.
    pub fn theta(&self) -> Result<PrePostPair<F>> {
        let full = self.theta_with(false)?;
        let half = self.theta_with(true)?;
        for (a, b) in [(full.pre, half.pre), (full.post, half.post)] {
            let tol = F::lit(3.0) * combined_se(a.se, b.se);
            let diff = (a.value - b.value).abs();
            if diff > tol {
                return Err(Error::UnreliableDerivative {
                    difference: diff.as_f64(),
                    tolerance: tol.as_f64(),
                });
            }
        }
        Ok(full)
    }

    /// Stock volatility `σ^S = (∂_x S_pre / S_pre) · x σ(x)`.
    pub fn stock_volatility(&self) -> Result<Estimate<F>> {
        self.require_diffusion()?;
        let (dn, up, h) = self.bump_levels(false)?;
        let sigma = self.sigma_at_x;
        Ok(self.moments.estimate(|v| {
            (self.stock_pre_at(v, up) - self.stock_pre_at(v, dn))
                / ((h + h) * self.stock_pre_at(v, 0))
                * sigma
        }))
    }

    pub fn equity_risk_premium(&self) -> Result<RiskPremium<F>> {
        self.theta()?;
        let (dn, up, h) = self.bump_levels(false)?;
        let sigma = self.sigma_at_x;
        let lam = self.intensity_at_x;
        let theta_pre = self.theta_fn(true, false)?;
        let sig_s = |v: &[F]| {
            (self.stock_pre_at(v, up) - self.stock_pre_at(v, dn))
                / ((h + h) * self.stock_pre_at(v, 0))
                * sigma
        };
        let default_part = |v: &[F]| {
            -(self.stock_post_at(v, 0) / self.stock_pre_at(v, 0) - F::one()) * self.kappa_at(v, 0) * lam
        };
        Ok(RiskPremium {
            diffusion_part: self.moments.estimate(|v| sig_s(v) * theta_pre(v)),
            default_part: self.moments.estimate(default_part),
            total: self.moments.estimate(|v| sig_s(v) * theta_pre(v) + default_part(v)),
        })
    }

    /// Compares the central difference of `κ` with the closed expression in
    /// terms of the two market prices of risk.
    pub fn kappa_slope_check(&self) -> Result<KappaSlopeCheck<F>> {
        self.require_diffusion()?;
        let (dn, up, h) = self.bump_levels(false)?;
        let x = self.point.x;
        let sigma = self.sigma_at_x;
        let lhs = self
            .moments
            .estimate(|v| (self.kappa_at(v, up) - self.kappa_at(v, dn)) / ((h + h) * x));
        let th_pre = self.theta_fn(true, false)?;
        let th_post = self.theta_fn(false, false)?;
        let rhs = self.moments.estimate(|v| {
            -(self.xi_post_at(v, 0) / self.xi_pre_at(v, 0)) * (th_post(v) - th_pre(v)) / (x * sigma)
        });
        let diff = (lhs.value - rhs.value).abs();
        let tol = (F::lit(0.02) * rhs.value.abs()).max(F::lit(3.0) * combined_se(lhs.se, rhs.se));
        Ok(KappaSlopeCheck {
            lhs,
            rhs,
            tolerance: tol,
            pass: diff <= tol,
        })
    }

    /// Wealth of investor `j` (in the order passed to [`PointSample::simulate`]).
    pub fn wealth(&self, j: usize) -> Result<PrePostPair<F>> {
        let (ak, bk) = self.investor_cols(j)?;
        Ok(self.pair(
            |v| (v[ak] - v[bk]) / self.xi_pre_at(v, 0),
            |v| v[ak] / self.xi_post_at(v, 0),
        ))
    }

    /// `(W_post - W_pre) / W_pre`.
    pub fn relative_wealth_jump(&self, j: usize) -> Result<Estimate<F>> {
        let (ak, bk) = self.investor_cols(j)?;
        Ok(self.moments.estimate(|v| {
            let c = self.xi_post_at(v, 0);
            let cd = self.xi_pre_at(v, 0);
            (cd / c) * (v[ak] / (v[ak] - v[bk])) - F::one()
        }))
    }

    /// The two sides of the ordering condition for investor `j`:
    /// `E[e^{-∫λ} U'(D+1)^ν] / E[U'(D+ε)^ν]` with `ν = 1 - 1/γ`.
    pub fn ordering_ratio(&self, j: usize) -> Result<Estimate<F>> {
        let (ak, _) = self.investor_cols(j)?;
        Ok(self.moments.estimate(|v| v[ak + 2] / v[ak + 3]))
    }

    fn investor_cols(&self, j: usize) -> Result<(usize, usize)> {
        if j >= self.n_investors {
            return Err(Error::InvalidParameter(format!(
                "investor {j} not sampled ({} present)",
                self.n_investors
            )));
        }
        let base = self.n_levels * PER_LEVEL + j * PER_INVESTOR;
        Ok((base, base + 1))
    }

    pub fn epsilon(&self) -> F {
        self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct RiskPremium<F: Scalar> {
    pub diffusion_part: Estimate<F>,
    pub default_part: Estimate<F>,
    pub total: Estimate<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct KappaSlopeCheck<F: Scalar> {
    pub lhs: Estimate<F>,
    pub rhs: Estimate<F>,
    pub tolerance: F,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct DefaultPremium<F: Scalar> {
    pub kappa: Estimate<F>,
    pub risk_neutral_intensity: Estimate<F>,
}

pub fn xi_pre_post<F: Scalar>(econ: &Economy<F>, point: MarketPoint<F>) -> Result<PrePostPair<F>> {
    Ok(PointSample::simulate(econ, point, None, &[])?.xi())
}

pub fn stock_pre_post<F: Scalar>(econ: &Economy<F>, point: MarketPoint<F>) -> Result<PrePostPair<F>> {
    Ok(PointSample::simulate(econ, point, None, &[])?.stock())
}

pub fn bond_pre_post<F: Scalar>(econ: &Economy<F>, point: MarketPoint<F>) -> Result<PrePostPair<F>> {
    Ok(PointSample::simulate(econ, point, None, &[])?.bond())
}

fn require_pre<F: Scalar>(point: &MarketPoint<F>) -> Result<()> {
    if point.defaulted {
        return Err(Error::InvalidParameter(
            "quantity is defined only before default".into(),
        ));
    }
    Ok(())
}

pub fn stock_jump<F: Scalar>(econ: &Economy<F>, point: MarketPoint<F>) -> Result<Estimate<F>> {
    require_pre(&point)?;
    Ok(PointSample::simulate(econ, point, None, &[])?.stock_jump())
}

pub fn default_risk_premium<F: Scalar>(
    econ: &Economy<F>,
    point: MarketPoint<F>,
) -> Result<DefaultPremium<F>> {
    require_pre(&point)?;
    let s = PointSample::simulate(econ, point, None, &[])?;
    Ok(DefaultPremium {
        kappa: s.kappa(),
        risk_neutral_intensity: s.risk_neutral_intensity(),
    })
}

fn bumped<F: Scalar>(econ: &Economy<F>, point: MarketPoint<F>) -> Result<PointSample<F>> {
    if !(econ.model.sigma(point.x) > F::zero()) {
        return Err(Error::DegenerateDiffusion(format!(
            "σ({}) is not positive",
            point.x
        )));
    }
    PointSample::simulate(econ, point, Some(econ.mc.bump), &[])
}

pub fn theta_pre_post<F: Scalar>(econ: &Economy<F>, point: MarketPoint<F>) -> Result<PrePostPair<F>> {
    bumped(econ, point)?.theta()
}

pub fn equity_risk_premium<F: Scalar>(
    econ: &Economy<F>,
    point: MarketPoint<F>,
) -> Result<RiskPremium<F>> {
    require_pre(&point)?;
    bumped(econ, point)?.equity_risk_premium()
}

pub fn kappa_x_check<F: Scalar>(
    econ: &Economy<F>,
    point: MarketPoint<F>,
) -> Result<KappaSlopeCheck<F>> {
    require_pre(&point)?;
    bumped(econ, point)?.kappa_slope_check()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct SystemicMeasures<F: Scalar> {
    pub rho_s: F,
    /// Absent when no investors were supplied.
    pub rho_w: Option<F>,
}

/// Stock and average wealth drop per dollar lost on the bond at default.
pub fn systemic_measures<F: Scalar>(
    stock: &PrePostPair<F>,
    bond_pre: F,
    epsilon: F,
    wealth: &[PrePostPair<F>],
    floor: F,
) -> Result<SystemicMeasures<F>> {
    let gap = bond_pre - epsilon;
    if !(gap.abs() >= floor) {
        return Err(Error::DegenerateDenominator {
            gap: gap.as_f64(),
            floor: floor.as_f64(),
        });
    }
    let rho_s = (stock.pre.value - stock.post.value) / gap;
    let rho_w = if wealth.is_empty() {
        None
    } else {
        let drop: F = wealth.iter().map(|w| w.pre.value - w.post.value).sum();
        Some(drop / F::from_count(wealth.len()) / gap)
    };
    Ok(SystemicMeasures { rho_s, rho_w })
}

/// `E[D_T ξ_T] / ξ_pre(0, D_0)` with the default drawn by its Cox trigger,
/// against the pre-default stock price at `(0, D_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct PricingConsistency<F: Scalar> {
    pub repriced: Estimate<F>,
    pub stock_pre: Estimate<F>,
    pub pass: bool,
}

pub fn pricing_consistency<F: Scalar>(econ: &Economy<F>) -> Result<PricingConsistency<F>> {
    econ.validate()?;
    let d0 = econ.model.initial_level;
    let sample = PointSample::simulate(econ, MarketPoint::pre(F::zero(), d0), None, &[])?;
    let stock_pre = sample.stock();
    let sim = TerminalSimulator::new(
        &econ.model,
        econ.horizon,
        econ.mc.n_steps,
        econ.mc.seed,
        &econ.intensity.f,
        &econ.rate.f,
    )?;
    // Trigger draws come from their own substreams, so the Cox sample is
    // independent of the analytic conditioning beyond the shared paths.
    let m = MomentSample::accumulate(econ.mc.n_paths, 2, |i, row| {
        let s = sim.path(d0, i)?;
        let chi: F = F::unit_exponential(&mut substream(econ.mc.seed, Purpose::DefaultTrigger, i as u64));
        let payoff = if s.hazard >= chi { econ.epsilon } else { F::one() };
        let kernel = econ.utility.marginal(s.terminal + payoff);
        row[0] = s.terminal * kernel;
        row[1] = s.rate.exp() * kernel;
        Ok(())
    })?;
    let repriced = m.estimate(|v| v[0] / v[1]);
    let tol = F::lit(3.0) * combined_se(repriced.se, stock_pre.pre.se);
    Ok(PricingConsistency {
        repriced,
        stock_pre: stock_pre.pre,
        pass: (repriced.value - stock_pre.pre.value).abs() <= tol,
    })
}

/// Monte-Carlo sample of the terminal pricing kernel `U'(D_T + P_T)` from
/// `(0, D_0)`, with default drawn by its Cox trigger.
pub fn terminal_kernel_sample<F: Scalar>(econ: &Economy<F>) -> Result<Vec<F>> {
    use rayon::prelude::*;
    econ.validate()?;
    let d0 = econ.model.initial_level;
    let sim = TerminalSimulator::new(
        &econ.model,
        econ.horizon,
        econ.mc.n_steps,
        econ.mc.seed,
        &econ.intensity.f,
        &econ.rate.f,
    )?;
    (0..econ.mc.n_paths)
        .into_par_iter()
        .map(|i| {
            let s = sim.path(d0, i)?;
            let chi: F = F::unit_exponential(&mut substream(econ.mc.seed, Purpose::DefaultTrigger, i as u64));
            let payoff = if s.hazard >= chi { econ.epsilon } else { F::one() };
            Ok(econ.utility.marginal(s.terminal + payoff))
        })
        .collect()
}

/// One row of a `(t, x)` scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ScanRow<F: Scalar> {
    pub t: F,
    pub x: F,
    pub stock: PrePostPair<F>,
    pub jump: Estimate<F>,
    pub kappa: Estimate<F>,
    pub theta: Option<PrePostPair<F>>,
}

/// Scans the stock prices, jump, `κ` and (with `with_theta`) the market
/// prices of risk over a `(t, x)` grid; `θ` is left empty where the bump
/// halving check fails. Points run sequentially; each point
/// is parallel over paths.
pub fn scan<F: Scalar>(
    econ: &Economy<F>,
    t_grid: &[F],
    x_grid: &[F],
    with_theta: bool,
) -> Result<Vec<ScanRow<F>>> {
    let mut rows = Vec::with_capacity(t_grid.len() * x_grid.len());
    for &t in t_grid {
        for &x in x_grid {
            let point = MarketPoint::pre(t, x);
            let bump = with_theta.then_some(econ.mc.bump);
            let s = PointSample::simulate(econ, point, bump, &[])?;
            rows.push(ScanRow {
                t,
                x,
                stock: s.stock(),
                jump: s.stock_jump(),
                kappa: s.kappa(),
                theta: if with_theta { reliable(s.theta())? } else { None },
            });
        }
    }
    Ok(rows)
}

/// Keeps a failed bump-halving check as a missing value instead of an error.
fn reliable<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UnreliableDerivative { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn write_scan_csv<F: Scalar, W: Write>(rows: &[ScanRow<F>], mut w: W) -> Result<()> {
    writeln!(
        w,
        "t,x,pre,post,jump,kappa,theta_pre,theta_post,pre_se,post_se,jump_se,kappa_se,theta_pre_se,theta_post_se"
    )?;
    for r in rows {
        let nan = Estimate::new(F::nan(), F::nan());
        let th = r.theta.unwrap_or(PrePostPair { pre: nan, post: nan });
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.x,
            r.stock.pre.value,
            r.stock.post.value,
            r.jump.value,
            r.kappa.value,
            th.pre.value,
            th.post.value,
            r.stock.pre.se,
            r.stock.post.se,
            r.jump.se,
            r.kappa.se,
            th.pre.se,
            th.post.se
        )?;
    }
    Ok(())
}
