//! Cox construction of the default time: `τ = inf{t : ∫_0^t λ(D_s) ds ≥ χ}`
//! with `χ` unit exponential and independent of the dividend.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::curve::CurveSpec;
use crate::dividend::PathSet;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;
use crate::stats::{mean_se, Estimate};

/// Default time of one path together with its trigger and hazard.
#[derive(Debug, Clone)]
pub struct DefaultSample<F: Scalar> {
    pub path_id: usize,
    /// `None` when the path survives the whole horizon.
    pub tau: Option<F>,
    pub chi: F,
    time_grid: Arc<Vec<F>>,
    /// Trapezoidal accumulated hazard on the path grid.
    cumulative_hazard: Vec<F>,
}

impl<F: Scalar> DefaultSample<F> {
    /// Accumulated hazard `∫_0^t λ ds`, linear between grid nodes.
    pub fn hazard_at(&self, t: F) -> F {
        let g = &self.time_grid;
        if t <= g[0] {
            return F::zero();
        }
        let last = g.len() - 1;
        if t >= g[last] {
            return self.cumulative_hazard[last];
        }
        let k = g.partition_point(|&s| s <= t).max(1);
        let w = (t - g[k - 1]) / (g[k] - g[k - 1]);
        self.cumulative_hazard[k - 1] + w * (self.cumulative_hazard[k] - self.cumulative_hazard[k - 1])
    }

    /// Compensator of the default indicator, `∫_0^{t∧τ} λ ds`.
    pub fn compensator_at(&self, t: F) -> F {
        match self.tau {
            Some(tau) if tau < t => self.hazard_at(tau),
            _ => self.hazard_at(t),
        }
    }

    pub fn defaulted_by(&self, t: F) -> bool {
        matches!(self.tau, Some(tau) if tau <= t)
    }

    pub fn horizon_hazard(&self) -> F {
        self.cumulative_hazard[self.cumulative_hazard.len() - 1]
    }
}

/// Draws one default time per path. `χ` for path `i` comes from substream
/// `(seed, DefaultTrigger, i)`, disjoint from every Brownian substream.
pub fn sample_default_times<F: Scalar>(
    paths: &PathSet<F>,
    intensity: &CurveSpec<F>,
    seed: u64,
) -> Result<Vec<DefaultSample<F>>> {
    let grid = Arc::new(paths.time_grid.clone());
    let n = paths.n_times();
    let half = F::lit(0.5);
    (0..paths.n_paths)
        .into_par_iter()
        .map(|i| {
            let path = paths.path(i);
            let mut cum = Vec::with_capacity(n);
            cum.push(F::zero());
            let mut prev = intensity.eval(path[0]);
            check_intensity(path[0], prev)?;
            for k in 1..n {
                let cur = intensity.eval(path[k]);
                check_intensity(path[k], cur)?;
                let last = cum[k - 1];
                cum.push(last + half * (prev + cur) * (grid[k] - grid[k - 1]));
                prev = cur;
            }
            let chi = F::unit_exponential(&mut substream(seed, Purpose::DefaultTrigger, i as u64));
            let tau = locate_crossing(&grid, &cum, chi);
            Ok(DefaultSample {
                path_id: i,
                tau,
                chi,
                time_grid: Arc::clone(&grid),
                cumulative_hazard: cum,
            })
        })
        .collect()
}

fn check_intensity<F: Scalar>(x: F, v: F) -> Result<()> {
    if v < F::zero() || v.is_nan() {
        Err(Error::NegativeIntensity {
            x: x.as_f64(),
            value: v.as_f64(),
        })
    } else {
        Ok(())
    }
}

/// First time the piecewise-linear accumulated hazard reaches `chi`.
fn locate_crossing<F: Scalar>(grid: &[F], cum: &[F], chi: F) -> Option<F> {
    if cum[cum.len() - 1] < chi {
        return None;
    }
    let k = cum.partition_point(|&h| h < chi);
    if k == 0 {
        return Some(grid[0]);
    }
    let (h0, h1) = (cum[k - 1], cum[k]);
    let w = if h1 > h0 { (chi - h0) / (h1 - h0) } else { F::one() };
    Some(grid[k - 1] + w * (grid[k] - grid[k - 1]))
}

/// Sample mean of `1{τ ≤ t} - ∫_0^{t∧τ} λ ds`, which is zero in expectation.
pub fn martingale_residual<F: Scalar>(samples: &[DefaultSample<F>], t: F) -> Result<Estimate<F>> {
    if samples.is_empty() {
        return Err(Error::EmptySample("no default samples".into()));
    }
    let g = &samples[0].time_grid;
    if t < g[0] || t > g[g.len() - 1] {
        return Err(Error::InvalidParameter(format!("t = {t} outside the path horizon")));
    }
    let vals: Vec<F> = samples
        .iter()
        .map(|s| {
            let jump = if s.defaulted_by(t) { F::one() } else { F::zero() };
            jump - s.compensator_at(t)
        })
        .collect();
    if vals.len() == 1 {
        return Ok(Estimate::new(vals[0], F::zero()));
    }
    mean_se(&vals)
}

/// CSV with columns `path_id,tau_or_empty,chi`.
pub fn write_default_csv<F: Scalar, W: Write>(samples: &[DefaultSample<F>], mut w: W) -> Result<()> {
    writeln!(w, "path_id,tau_or_empty,chi")?;
    for s in samples {
        match s.tau {
            Some(tau) => writeln!(w, "{},{},{}", s.path_id, tau, s.chi)?,
            None => writeln!(w, "{},,{}", s.path_id, s.chi)?,
        }
    }
    Ok(())
}
