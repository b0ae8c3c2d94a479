//! Investor budget multipliers, wealth before and after default, and the
//! ordering of relative wealth jumps across risk aversions.

use std::io::Write;

use serde::Serialize;

use crate::config::InvestorSpec;
use crate::error::{Error, Result};
use crate::pricing::{
    systemic_measures, Economy, MarketPoint, PointSample, PrePostPair, SystemicMeasures, WealthLeg,
};
use crate::preferences::Utility;
use crate::scalar::Scalar;
use crate::stats::{combined_se, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct Investor<F: Scalar> {
    #[serde(skip)]
    pub utility: Utility<F>,
    pub initial_wealth: F,
}

impl<F: Scalar> Investor<F> {
    pub fn new(utility: Utility<F>, initial_wealth: F) -> Result<Self> {
        utility.validate()?;
        if !(initial_wealth > F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "initial wealth {initial_wealth} must be positive"
            )));
        }
        Ok(Self { utility, initial_wealth })
    }

    pub fn from_spec(spec: &InvestorSpec<F>) -> Result<Self> {
        let utility = if spec.gamma == F::one() {
            Utility::Log
        } else {
            Utility::power(spec.gamma)?
        };
        Self::new(utility, spec.initial_wealth)
    }

    pub fn gamma(&self) -> F {
        self.utility.gamma()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedInvestor<F: Scalar> {
    pub investor: Investor<F>,
    pub multiplier: F,
}

impl<F: Scalar> CalibratedInvestor<F> {
    pub fn leg(&self) -> WealthLeg<F> {
        WealthLeg {
            utility: self.investor.utility,
            multiplier: self.multiplier,
        }
    }

    /// Sample mean of `I(y ξ) ξ`.
    pub fn budget(&self, xi: &[F]) -> F {
        budget(&self.investor.utility, self.multiplier, xi)
    }
}

fn budget<F: Scalar>(u: &Utility<F>, y: F, xi: &[F]) -> F {
    let sum: F = xi.iter().map(|&k| u.inverse_marginal(y * k) * k).sum();
    sum / F::from_count(xi.len())
}

/// Solves the sample budget equation `mean(I(y ξ) ξ) = W_0` for `y` by
/// bisection. The bracket starts at `[1/2, 2]` and doubles outward.
pub fn solve_budget_multiplier<F: Scalar>(
    inv: &Investor<F>,
    xi_samples: &[F],
) -> Result<CalibratedInvestor<F>> {
    if xi_samples.is_empty() {
        return Err(Error::EmptySample("no kernel samples".into()));
    }
    if let Some(&bad) = xi_samples.iter().find(|&&k| !(k > F::zero()) || !k.is_finite()) {
        return Err(Error::InvalidParameter(format!("kernel sample {bad} is not positive")));
    }
    let u = &inv.utility;
    let w0 = inv.initial_wealth;
    let excess = |y: F| budget(u, y, xi_samples) - w0;
    let two = F::lit(2.0);
    let (mut lo, mut hi) = (F::lit(0.5), two);
    let mut doublings = 0;
    // The budget is decreasing in y: need excess(lo) > 0 > excess(hi).
    while !(excess(lo) > F::zero()) {
        doublings += 1;
        if doublings > 60 {
            return Err(Error::NotBracketed { doublings: 60 });
        }
        lo = lo / two;
    }
    while !(excess(hi) < F::zero()) {
        doublings += 1;
        if doublings > 60 {
            return Err(Error::NotBracketed { doublings: 60 });
        }
        hi = hi * two;
    }
    for _ in 0..200 {
        let mid = lo + (hi - lo) * F::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let e = excess(mid);
        if e == F::zero() {
            lo = mid;
            hi = mid;
            break;
        }
        if e > F::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = if excess(lo).abs() <= excess(hi).abs() { lo } else { hi };
    Ok(CalibratedInvestor {
        investor: *inv,
        multiplier: y,
    })
}

/// Closed-form multiplier for power (and log) utility:
/// `y = (mean[ξ^{1-1/γ}] / W_0)^γ`.
pub fn power_multiplier<F: Scalar>(inv: &Investor<F>, xi_samples: &[F]) -> F {
    let g = inv.gamma();
    let nu = F::one() - F::one() / g;
    let m: F = xi_samples.iter().map(|&k| k.powf(nu)).sum::<F>() / F::from_count(xi_samples.len());
    (m / inv.initial_wealth).powf(g)
}

fn sample_with<F: Scalar>(
    econ: &Economy<F>,
    point: MarketPoint<F>,
    investors: &[CalibratedInvestor<F>],
) -> Result<PointSample<F>> {
    let legs: Vec<_> = investors.iter().map(|c| c.leg()).collect();
    PointSample::simulate(econ, point, None, &legs)
}

pub fn wealth_pre_post<F: Scalar>(
    econ: &Economy<F>,
    point: MarketPoint<F>,
    cinv: &CalibratedInvestor<F>,
) -> Result<PrePostPair<F>> {
    sample_with(econ, point, std::slice::from_ref(cinv))?.wealth(0)
}

/// `(W_post - W_pre) / W_pre` before default at `point`.
pub fn relative_wealth_jump<F: Scalar>(
    econ: &Economy<F>,
    point: MarketPoint<F>,
    cinv: &CalibratedInvestor<F>,
) -> Result<Estimate<F>> {
    if point.defaulted {
        return Err(Error::InvalidParameter("wealth jump needs a pre-default point".into()));
    }
    sample_with(econ, point, std::slice::from_ref(cinv))?.relative_wealth_jump(0)
}

/// One adjacent pair `γ_k ≥ γ_l` at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct PairComparison<F: Scalar> {
    pub t: F,
    pub x: F,
    pub gamma_k: F,
    pub gamma_l: F,
    pub jump_k: Estimate<F>,
    pub jump_l: Estimate<F>,
    /// Left and right side of the ordering condition.
    pub ratio_k: Estimate<F>,
    pub ratio_l: Estimate<F>,
    pub condition_verified: bool,
    /// `|jump_k| <= |jump_l| + 3 SE`.
    pub ordering_holds: bool,
    /// Whether `ordering_holds` is part of the verdict.
    pub asserted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct OrderingReport<F: Scalar> {
    pub comparisons: Vec<PairComparison<F>>,
    /// Every asserted comparison holds.
    pub pass: bool,
    /// Some comparison had an unverified condition and was not asserted.
    pub condition_unverified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct WealthJumpRow<F: Scalar> {
    pub t: F,
    pub x: F,
    pub gamma: F,
    pub rel_jump: Estimate<F>,
    pub wealth: PrePostPair<F>,
}

/// Relative jumps of all investors on a grid, sharing paths within a point.
pub fn wealth_jump_table<F: Scalar>(
    econ: &Economy<F>,
    points: &[MarketPoint<F>],
    investors: &[CalibratedInvestor<F>],
) -> Result<Vec<WealthJumpRow<F>>> {
    let mut rows = Vec::new();
    for &p in points {
        let s = sample_with(econ, p, investors)?;
        for (j, inv) in investors.iter().enumerate() {
            rows.push(WealthJumpRow {
                t: p.t,
                x: p.x,
                gamma: inv.investor.gamma(),
                rel_jump: s.relative_wealth_jump(j)?,
                wealth: s.wealth(j)?,
            });
        }
    }
    Ok(rows)
}

/// Checks `|ΔW_k/W_k| <= |ΔW_l/W_l|` for adjacent investors ordered by
/// decreasing `γ`, asserting it only where the ratio condition
/// `E[e^{-∫λ} U'(D+1)^ν]/E[U'(D+ε)^ν]` (with `ν = 1 - 1/γ`) is no larger
/// for `k` than for `l`.
pub fn compare_relative_jumps<F: Scalar>(
    econ: &Economy<F>,
    points: &[MarketPoint<F>],
    investors: &[CalibratedInvestor<F>],
) -> Result<OrderingReport<F>> {
    check_order(investors)?;
    let mut comparisons = Vec::new();
    for &p in points {
        let s = sample_with(econ, p, investors)?;
        compare_at(&s, investors, &mut comparisons)?;
    }
    Ok(ordering_report(comparisons))
}

fn check_order<F: Scalar>(investors: &[CalibratedInvestor<F>]) -> Result<()> {
    if investors.windows(2).any(|w| w[0].investor.gamma() < w[1].investor.gamma()) {
        return Err(Error::InvalidParameter(
            "investors must be ordered by decreasing gamma".into(),
        ));
    }
    Ok(())
}

fn compare_at<F: Scalar>(
    s: &PointSample<F>,
    investors: &[CalibratedInvestor<F>],
    out: &mut Vec<PairComparison<F>>,
) -> Result<()> {
    let three = F::lit(3.0);
    let p = s.point;
    for k in 0..investors.len().saturating_sub(1) {
        let l = k + 1;
        let jump_k = s.relative_wealth_jump(k)?;
        let jump_l = s.relative_wealth_jump(l)?;
        let ratio_k = s.ordering_ratio(k)?;
        let ratio_l = s.ordering_ratio(l)?;
        let condition_verified =
            ratio_k.value <= ratio_l.value + three * combined_se(ratio_k.se, ratio_l.se);
        let ordering_holds =
            jump_k.value.abs() <= jump_l.value.abs() + three * combined_se(jump_k.se, jump_l.se);
        out.push(PairComparison {
            t: p.t,
            x: p.x,
            gamma_k: investors[k].investor.gamma(),
            gamma_l: investors[l].investor.gamma(),
            jump_k,
            jump_l,
            ratio_k,
            ratio_l,
            condition_verified,
            ordering_holds,
            asserted: condition_verified,
        });
    }
    Ok(())
}

fn ordering_report<F: Scalar>(comparisons: Vec<PairComparison<F>>) -> OrderingReport<F> {
    let pass = comparisons.iter().all(|c| !c.asserted || c.ordering_holds);
    let condition_unverified = comparisons.iter().any(|c| !c.condition_verified);
    OrderingReport {
        comparisons,
        pass,
        condition_unverified,
    }
}

/// Systemic measures at one state; `None` where the bond barely moves at
/// default and the ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct SystemicRow<F: Scalar> {
    pub t: F,
    pub x: F,
    pub bond_gap: F,
    pub measures: Option<SystemicMeasures<F>>,
}

/// Wealth jumps, their ordering and the systemic measures on a grid, from
/// one joint sample per state.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct WealthStudy<F: Scalar> {
    pub rows: Vec<WealthJumpRow<F>>,
    pub ordering: OrderingReport<F>,
    pub systemic: Vec<SystemicRow<F>>,
}

pub fn wealth_study<F: Scalar>(
    econ: &Economy<F>,
    points: &[MarketPoint<F>],
    investors: &[CalibratedInvestor<F>],
    systemic_floor: F,
) -> Result<WealthStudy<F>> {
    check_order(investors)?;
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    let mut systemic = Vec::new();
    for &p in points {
        let s = sample_with(econ, p, investors)?;
        let mut pairs = Vec::with_capacity(investors.len());
        for (j, inv) in investors.iter().enumerate() {
            let wealth = s.wealth(j)?;
            pairs.push(wealth);
            rows.push(WealthJumpRow {
                t: p.t,
                x: p.x,
                gamma: inv.investor.gamma(),
                rel_jump: s.relative_wealth_jump(j)?,
                wealth,
            });
        }
        compare_at(&s, investors, &mut comparisons)?;
        let bond_pre = s.bond().pre.value;
        let measures = match systemic_measures(&s.stock(), bond_pre, s.epsilon(), &pairs, systemic_floor) {
            Ok(m) => Some(m),
            Err(Error::DegenerateDenominator { .. }) => None,
            Err(e) => return Err(e),
        };
        systemic.push(SystemicRow {
            t: p.t,
            x: p.x,
            bond_gap: bond_pre - s.epsilon(),
            measures,
        });
    }
    Ok(WealthStudy {
        rows,
        ordering: ordering_report(comparisons),
        systemic,
    })
}

pub fn write_systemic_csv<F: Scalar, W: Write>(rows: &[SystemicRow<F>], mut w: W) -> Result<()> {
    writeln!(w, "t,x,bond_gap,rho_s,rho_w")?;
    for r in rows {
        let (s, wm) = match r.measures {
            Some(m) => (m.rho_s, m.rho_w.unwrap_or(F::nan())),
            None => (F::nan(), F::nan()),
        };
        writeln!(w, "{},{},{},{},{}", r.t, r.x, r.bond_gap, s, wm)?;
    }
    Ok(())
}

pub fn write_wealth_csv<F: Scalar, W: Write>(rows: &[WealthJumpRow<F>], mut w: W) -> Result<()> {
    writeln!(w, "t,x,gamma,rel_jump,se")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.t, r.x, r.gamma, r.rel_jump.value, r.rel_jump.se)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::curve::CurveSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn kernel() -> Vec<f64> {
        (0..500).map(|i| 0.3 + (i as f64 * 0.731).sin().abs() * 2.0).collect()
    }

    #[test]
    fn log_multiplier_is_reciprocal_wealth() {
        for w0 in [1.0, 2.0, 3.5] {
            let inv = Investor::new(Utility::Log, w0).unwrap();
            let c = solve_budget_multiplier(&inv, &kernel()).unwrap();
            assert_relative_eq!(c.multiplier, 1.0 / w0, max_relative = 1e-14);
        }
    }

    #[test]
    fn power_multiplier_matches_closed_form() {
        for g in [0.3, 0.5, 0.8] {
            let inv = Investor::new(Utility::power(g).unwrap(), 1.7).unwrap();
            let xi = kernel();
            let c = solve_budget_multiplier(&inv, &xi).unwrap();
            assert_relative_eq!(c.multiplier, power_multiplier(&inv, &xi), max_relative = 1e-8);
            assert_relative_eq!(c.budget(&xi), 1.7, max_relative = 1e-8);
        }
    }

    #[test]
    fn far_bracket_still_found() {
        let inv = Investor::new(Utility::power(0.5).unwrap(), 1e-9).unwrap();
        let c = solve_budget_multiplier(&inv, &kernel()).unwrap();
        assert_relative_eq!(c.budget(&kernel()), 1e-9, max_relative = 1e-8);
    }

    #[test]
    fn unbracketable_budget_errors() {
        let inv = Investor::new(Utility::power(0.1).unwrap(), 1e-300).unwrap();
        assert!(matches!(
            solve_budget_multiplier(&inv, &kernel()),
            Err(Error::NotBracketed { .. })
        ));
    }

    #[test]
    fn rejects_bad_samples() {
        let inv = Investor::new(Utility::Log, 1.0).unwrap();
        assert!(solve_budget_multiplier(&inv, &[]).is_err());
        assert!(solve_budget_multiplier(&inv, &[1.0, -1.0]).is_err());
    }

    proptest! {
        #[test]
        fn budget_holds_after_calibration(g in 0.2f64..1.0, w0 in 0.1f64..10.0) {
            let inv = Investor::new(Utility::power(g).unwrap(), w0).unwrap();
            let xi = kernel();
            let c = solve_budget_multiplier(&inv, &xi).unwrap();
            prop_assert!((c.budget(&xi) / w0 - 1.0).abs() < 1e-8);
        }
    }

    fn small_econ() -> Economy<f64> {
        let mut cfg = ScenarioConfig::<f64>::case_study();
        cfg.mc.n_paths = 5000;
        cfg.mc.n_steps = 20;
        cfg.curves.rate = CurveSpec::constant(0.0);
        Economy::from_config(&cfg)
    }

    #[test]
    fn log_investor_wealth_times_kernel_is_constant() {
        let econ = small_econ();
        let inv = Investor::new(Utility::Log, 2.0).unwrap();
        let c = solve_budget_multiplier(&inv, &[1.0]).unwrap();
        let s = PointSample::simulate(&econ, MarketPoint::pre(0.2, 1.1), None, &[c.leg()]).unwrap();
        let w = s.wealth(0).unwrap();
        let xi = s.xi();
        assert_relative_eq!(w.pre.value * xi.pre.value, 1.0 / c.multiplier, max_relative = 1e-12);
        assert_relative_eq!(w.post.value * xi.post.value, 1.0 / c.multiplier, max_relative = 1e-12);
    }

    #[test]
    fn full_recovery_means_no_wealth_jump() {
        let econ = small_econ().with_epsilon(1.0);
        let inv = Investor::new(Utility::power(0.5).unwrap(), 1.0).unwrap();
        let c = CalibratedInvestor { investor: inv, multiplier: 0.8 };
        let j = relative_wealth_jump(&econ, MarketPoint::pre(0.0, 1.0), &c).unwrap();
        assert_eq!(j.value, 0.0);
    }

    #[test]
    fn identical_investors_have_equal_jumps() {
        let econ = small_econ();
        let inv = Investor::new(Utility::power(0.7).unwrap(), 1.0).unwrap();
        let c = CalibratedInvestor { investor: inv, multiplier: 1.3 };
        let rep = compare_relative_jumps(&econ, &[MarketPoint::pre(0.0, 1.0)], &[c, c]).unwrap();
        let cmp = rep.comparisons[0];
        assert_eq!(cmp.jump_k.value, cmp.jump_l.value);
        assert!(rep.pass);
    }

    #[test]
    fn ordering_requires_sorted_investors() {
        let econ = small_econ();
        let a = CalibratedInvestor {
            investor: Investor::new(Utility::power(0.5).unwrap(), 1.0).unwrap(),
            multiplier: 1.0,
        };
        let b = CalibratedInvestor {
            investor: Investor::new(Utility::Log, 1.0).unwrap(),
            multiplier: 1.0,
        };
        assert!(compare_relative_jumps(&econ, &[MarketPoint::pre(0.0, 1.0)], &[a, b]).is_err());
    }
}
