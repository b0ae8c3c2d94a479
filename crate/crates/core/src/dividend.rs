//! Dividend diffusion `dD/D = μ(D) dt + σ(D) dB`: forward paths, the
//! lognormal transition density of the constant-coefficient case, and
//! time-reversed paths used to condition on the terminal dividend.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::ScalarFn;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;

/// Constant-coefficient (geometric Brownian motion) dividend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct GbmParams<F: Scalar> {
    pub mu: F,
    pub sigma: F,
    pub d0: F,
}

impl<F: Scalar> GbmParams<F> {
    pub fn new(mu: F, sigma: F, d0: F) -> Result<Self> {
        let p = Self { mu, sigma, d0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > F::zero()) {
            return Err(Error::DegenerateDiffusion(format!(
                "GBM volatility must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.d0 > F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "initial dividend must be positive, got {}",
                self.d0
            )));
        }
        Ok(())
    }

    /// Drift of `log D`.
    #[inline]
    pub fn log_drift(&self) -> F {
        self.mu - F::lit(0.5) * self.sigma * self.sigma
    }

    pub fn model(&self) -> DividendModel<F> {
        DividendModel {
            drift: ScalarFn::constant(self.mu),
            volatility: ScalarFn::constant(self.sigma),
            initial_level: self.d0,
        }
    }
}

/// General one-dimensional dividend model with level-dependent relative
/// drift and volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct DividendModel<F: Scalar> {
    pub drift: ScalarFn<F>,
    pub volatility: ScalarFn<F>,
    pub initial_level: F,
}

impl<F: Scalar> DividendModel<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_level > F::zero()) {
            return Err(Error::InvalidParameter(format!(
                "initial dividend must be positive, got {}",
                self.initial_level
            )));
        }
        if let Some(s) = self.volatility.as_constant() {
            if s < F::zero() {
                return Err(Error::InvalidParameter(format!("negative volatility {s}")));
            }
        }
        Ok(())
    }

    /// The constant-coefficient special case, if this model is one.
    pub fn as_gbm(&self) -> Option<GbmParams<F>> {
        match (self.drift.as_constant(), self.volatility.as_constant()) {
            (Some(mu), Some(sigma)) => Some(GbmParams {
                mu,
                sigma,
                d0: self.initial_level,
            }),
            _ => None,
        }
    }

    #[inline]
    pub fn mu(&self, x: F) -> F {
        self.drift.eval(x)
    }

    #[inline]
    pub fn sigma(&self, x: F) -> F {
        self.volatility.eval(x)
    }

    /// Errors unless the volatility is strictly positive on `grid`.
    pub fn require_positive_volatility(&self, grid: &[F]) -> Result<()> {
        for &x in grid {
            let s = self.sigma(x);
            if !(s > F::zero()) {
                return Err(Error::DegenerateDiffusion(format!(
                    "volatility {s} at x = {x} is not positive"
                )));
            }
        }
        Ok(())
    }
}

/// Discretization used for a path set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExactLognormal,
    LogEuler,
    ReversedStandard,
    ReversedClosedForm,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::ExactLognormal => "exact_lognormal",
            Scheme::LogEuler => "log_euler",
            Scheme::ReversedStandard => "reversed_standard",
            Scheme::ReversedClosedForm => "reversed_closed_form",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "exact_lognormal" => Scheme::ExactLognormal,
            "log_euler" => Scheme::LogEuler,
            "reversed_standard" => Scheme::ReversedStandard,
            "reversed_closed_form" => Scheme::ReversedClosedForm,
            other => return Err(Error::Format(format!("unknown scheme tag {other:?}"))),
        })
    }
}

/// Simulated dividend paths on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<F: Scalar> {
    pub time_grid: Vec<F>,
    /// Row-major `n_paths × n_times`.
    pub values: Vec<F>,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl<F: Scalar> PathSet<F> {
    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn path(&self, i: usize) -> &[F] {
        let n = self.n_times();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[F]> {
        self.values.chunks_exact(self.n_times())
    }

    pub fn terminal_values(&self) -> Vec<F> {
        self.paths().map(|p| p[p.len() - 1]).collect()
    }

    /// Trapezoidal integral of `f` along each path.
    pub fn integrate_along(&self, f: &ScalarFn<F>) -> Vec<F> {
        let grid = &self.time_grid;
        self.paths().map(|p| trapezoid(grid, p, f)).collect()
    }

    /// Concatenates path sets on the same grid, renumbering paths.
    pub fn concat(sets: &[PathSet<F>]) -> Result<PathSet<F>> {
        let first = sets
            .first()
            .ok_or_else(|| Error::EmptySample("no path sets to concatenate".into()))?;
        let mut out = first.clone();
        for s in &sets[1..] {
            if s.time_grid != first.time_grid {
                return Err(Error::GridMismatch("path sets use different time grids".into()));
            }
            out.values.extend_from_slice(&s.values);
            out.n_paths += s.n_paths;
        }
        Ok(out)
    }

    /// Binary cache format: magic, seed, counts, scheme tag, grid, then the
    /// row-major values, all little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PATHSET_MAGIC)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.n_times() as u64).to_le_bytes())?;
        let tag = self.scheme.tag().as_bytes();
        w.write_all(&(tag.len() as u32).to_le_bytes())?;
        w.write_all(tag)?;
        for &t in &self.time_grid {
            w.write_all(&t.as_f64().to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PATHSET_MAGIC {
            return Err(Error::Format("not a path-set cache file".into()));
        }
        let seed = read_u64(&mut r)?;
        let n_paths = read_u64(&mut r)? as usize;
        let n_times = read_u64(&mut r)? as usize;
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut tag = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut tag)?;
        let tag = String::from_utf8(tag).map_err(|e| Error::Format(e.to_string()))?;
        let scheme = Scheme::from_tag(&tag)?;
        let read_f = |r: &mut R| -> Result<F> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(F::lit(f64::from_le_bytes(b)))
        };
        let time_grid = (0..n_times).map(|_| read_f(&mut r)).collect::<Result<Vec<_>>>()?;
        let values = (0..n_paths * n_times)
            .map(|_| read_f(&mut r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            time_grid,
            values,
            n_paths,
            seed,
            scheme,
        })
    }

    /// CSV with columns `path_id,t,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path_id,t,value")?;
        for (i, p) in self.paths().enumerate() {
            for (t, v) in self.time_grid.iter().zip(p) {
                writeln!(w, "{i},{t},{v}")?;
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`PathSet::write_csv`]. Seed and scheme are
    /// not part of the CSV and must be supplied.
    pub fn read_csv<R: Read>(r: R, seed: u64, scheme: Scheme) -> Result<Self> {
        let mut time_grid: Vec<F> = Vec::new();
        let mut values = Vec::new();
        let mut n_paths = 0usize;
        for (lineno, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "path_id,t,value" {
                    return Err(Error::Format(format!("unexpected header {line:?}")));
                }
                continue;
            }
            let mut cols = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Format(format!("line {}: missing column", lineno + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
            };
            let id = parse(cols.next())? as usize;
            let t = F::lit(parse(cols.next())?);
            let v = F::lit(parse(cols.next())?);
            if id == 0 {
                time_grid.push(t);
            }
            n_paths = n_paths.max(id + 1);
            values.push(v);
        }
        if time_grid.is_empty() || values.len() != n_paths * time_grid.len() {
            return Err(Error::Format("ragged path CSV".into()));
        }
        Ok(Self {
            time_grid,
            values,
            n_paths,
            seed,
            scheme,
        })
    }
}

const PATHSET_MAGIC: &[u8; 8] = b"CXPATHS1";

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Trapezoidal rule for `∫ f(path(t)) dt` on a (possibly nonuniform) grid.
pub fn trapezoid<F: Scalar>(grid: &[F], path: &[F], f: &ScalarFn<F>) -> F {
    let half = F::lit(0.5);
    let mut acc = F::zero();
    let mut prev = f.eval(path[0]);
    for k in 1..path.len() {
        let cur = f.eval(path[k]);
        acc = acc + half * (prev + cur) * (grid[k] - grid[k - 1]);
        prev = cur;
    }
    acc
}

pub(crate) fn uniform_grid<F: Scalar>(t0: F, t1: F, n_steps: usize) -> Vec<F> {
    let dt = (t1 - t0) / F::from_count(n_steps);
    (0..=n_steps)
        .map(|k| if k == n_steps { t1 } else { t0 + dt * F::from_count(k) })
        .collect()
}

fn check_grid<F: Scalar>(t_start: F, t_end: F, n_steps: usize, n_paths: usize) -> Result<()> {
    if !(t_end > t_start) {
        return Err(Error::InvalidGrid(format!(
            "t_end = {t_end} must exceed t_start = {t_start}"
        )));
    }
    if n_steps == 0 || n_paths == 0 {
        return Err(Error::InvalidGrid("need at least one step and one path".into()));
    }
    Ok(())
}

/// One time step of the forward dividend. Constant coefficients use the
/// exact lognormal update, anything else Euler-Maruyama on `log D`.
#[derive(Clone, Copy)]
pub(crate) enum Stepper<F: Scalar> {
    Exact { drift_dt: F, vol_sqrt_dt: F },
    LogEuler { dt: F, sqrt_dt: F },
}

impl<F: Scalar> Stepper<F> {
    pub(crate) fn new(model: &DividendModel<F>, dt: F) -> Self {
        match model.as_gbm() {
            Some(p) => Stepper::Exact {
                drift_dt: p.log_drift() * dt,
                vol_sqrt_dt: p.sigma * dt.sqrt(),
            },
            None => Stepper::LogEuler { dt, sqrt_dt: dt.sqrt() },
        }
    }

    pub(crate) fn scheme(&self) -> Scheme {
        match self {
            Stepper::Exact { .. } => Scheme::ExactLognormal,
            Stepper::LogEuler { .. } => Scheme::LogEuler,
        }
    }

    #[inline]
    pub(crate) fn step(&self, model: &DividendModel<F>, x: F, z: F) -> F {
        match *self {
            Stepper::Exact { drift_dt, vol_sqrt_dt } => x * (drift_dt + vol_sqrt_dt * z).exp(),
            Stepper::LogEuler { dt, sqrt_dt } => {
                let s = model.sigma(x);
                x * ((model.mu(x) - F::lit(0.5) * s * s) * dt + s * sqrt_dt * z).exp()
            }
        }
    }
}

/// Simulates `n_paths` dividend paths from `x_start` at `t_start` to `t_end`.
/// Path `i` draws its increments from substream `(seed, Brownian, i)`.
pub fn simulate_paths<F: Scalar>(
    model: &DividendModel<F>,
    t_start: F,
    x_start: F,
    t_end: F,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet<F>> {
    check_grid(t_start, t_end, n_steps, n_paths)?;
    if !(x_start > F::zero()) {
        return Err(Error::InvalidParameter(format!("x_start = {x_start} must be positive")));
    }
    let time_grid = uniform_grid(t_start, t_end, n_steps);
    let dt = (t_end - t_start) / F::from_count(n_steps);
    let stepper = Stepper::new(model, dt);
    let n_times = n_steps + 1;
    let mut values = vec![F::zero(); n_paths * n_times];
    values
        .par_chunks_mut(n_times)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let mut rng = substream(seed, Purpose::Brownian, i as u64);
            row[0] = x_start;
            for k in 1..n_times {
                let z = F::standard_normal(&mut rng);
                let next = stepper.step(model, row[k - 1], z);
                if !next.is_finite() || !(next > F::zero()) {
                    return Err(Error::NonFinite { path: i, step: k });
                }
                row[k] = next;
            }
            Ok(())
        })?;
    Ok(PathSet {
        time_grid,
        values,
        n_paths,
        seed,
        scheme: stepper.scheme(),
    })
}

/// Terminal dividend and path integrals of the intensity and short rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalSample<F: Scalar> {
    pub terminal: F,
    /// Trapezoidal `∫ λ(D_s) ds` over the horizon.
    pub hazard: F,
    /// Trapezoidal `∫ r(D_s) ds` over the horizon.
    pub rate: F,
}

/// Per-path forward simulator that keeps only the terminal value and the two
/// path integrals. Path `i` uses the same increments as [`simulate_paths`]
/// for equal seeds, so bumped starting points share random numbers.
pub(crate) struct TerminalSimulator<'a, F: Scalar> {
    model: &'a DividendModel<F>,
    intensity: &'a ScalarFn<F>,
    rate: &'a ScalarFn<F>,
    stepper: Stepper<F>,
    n_steps: usize,
    horizon: F,
    seed: u64,
    lam_const: Option<F>,
    r_const: Option<F>,
}

impl<'a, F: Scalar> TerminalSimulator<'a, F> {
    pub(crate) fn new(
        model: &'a DividendModel<F>,
        horizon: F,
        n_steps: usize,
        seed: u64,
        intensity: &'a ScalarFn<F>,
        rate: &'a ScalarFn<F>,
    ) -> Result<Self> {
        check_grid(F::zero(), horizon, n_steps, 1)?;
        let dt = horizon / F::from_count(n_steps);
        Ok(Self {
            model,
            intensity,
            rate,
            stepper: Stepper::new(model, dt),
            n_steps,
            horizon,
            seed,
            lam_const: intensity.as_constant(),
            r_const: rate.as_constant(),
        })
    }

    pub(crate) fn path(&self, x_start: F, i: usize) -> Result<TerminalSample<F>> {
        let half_dt = F::lit(0.5) * self.horizon / F::from_count(self.n_steps);
        let mut rng = substream(self.seed, Purpose::Brownian, i as u64);
        let mut x = x_start;
        let mut lam_prev = self.intensity.eval(x);
        let mut r_prev = self.rate.eval(x);
        let mut hazard = F::zero();
        let mut r_int = F::zero();
        for k in 1..=self.n_steps {
            let z = F::standard_normal(&mut rng);
            x = self.stepper.step(self.model, x, z);
            if !x.is_finite() || !(x > F::zero()) {
                return Err(Error::NonFinite { path: i, step: k });
            }
            if self.lam_const.is_none() {
                let l = self.intensity.eval(x);
                hazard = hazard + half_dt * (lam_prev + l);
                lam_prev = l;
            }
            if self.r_const.is_none() {
                let r = self.rate.eval(x);
                r_int = r_int + half_dt * (r_prev + r);
                r_prev = r;
            }
        }
        if let Some(l) = self.lam_const {
            hazard = l * self.horizon;
        }
        if let Some(r) = self.r_const {
            r_int = r * self.horizon;
        }
        Ok(TerminalSample {
            terminal: x,
            hazard,
            rate: r_int,
        })
    }
}

/// Forward simulation that keeps only the terminal value and the two path
/// integrals. Draws the same increments as [`simulate_paths`] for equal
/// seeds, so bumped starting points share random numbers.
#[allow(clippy::too_many_arguments)]
pub fn simulate_terminal<F: Scalar>(
    model: &DividendModel<F>,
    x_start: F,
    horizon: F,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    intensity: &ScalarFn<F>,
    rate: &ScalarFn<F>,
) -> Result<Vec<TerminalSample<F>>> {
    check_grid(F::zero(), horizon, n_steps, n_paths)?;
    if !(x_start > F::zero()) {
        return Err(Error::InvalidParameter(format!("x_start = {x_start} must be positive")));
    }
    let sim = TerminalSimulator::new(model, horizon, n_steps, seed, intensity, rate)?;
    (0..n_paths)
        .into_par_iter()
        .map(|i| sim.path(x_start, i))
        .collect()
}

/// Lognormal density of `D_t` at `y` given `D_0 = d0`.
pub fn gbm_transition_density<F: Scalar>(params: &GbmParams<F>, t: F, y: F) -> Result<F> {
    params.validate()?;
    if !(t > F::zero()) || !(y > F::zero()) {
        return Err(Error::InvalidParameter(format!(
            "density needs t > 0 and y > 0, got t = {t}, y = {y}"
        )));
    }
    Ok(lognormal_density(params, t, y))
}

fn lognormal_density<F: Scalar>(p: &GbmParams<F>, t: F, y: F) -> F {
    let s2t = p.sigma * p.sigma * t;
    let dev = (y / p.d0).ln() - p.log_drift() * t;
    (-(dev * dev) / (s2t + s2t)).exp() / (y * p.sigma * (F::TAU() * t).sqrt())
}

/// `∂_y log p(t, y)` for the lognormal transition density.
pub fn gbm_log_density_slope<F: Scalar>(p: &GbmParams<F>, t: F, y: F) -> F {
    let dev = (y / p.d0).ln() - p.log_drift() * t;
    -F::one() / y - dev / (p.sigma * p.sigma * t * y)
}

/// Which formula supplies the drift of the time-reversed dividend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReversalVariant {
    /// `-μx + (1/σ)(μ - σ²/2 - log(x/D0)/(T-t))`.
    ClosedForm,
    /// `-b(T-t,x) + ∂_x[a² p](T-t,x) / p(T-t,x)` with `a = σx`, `b = μx`.
    Standard,
}

impl ReversalVariant {
    pub fn scheme(self) -> Scheme {
        match self {
            ReversalVariant::ClosedForm => Scheme::ReversedClosedForm,
            ReversalVariant::Standard => Scheme::ReversedStandard,
        }
    }
}

/// Drift of the time-reversed GBM at reversed time `t` and level `x`.
pub fn reversed_drift<F: Scalar>(
    params: &GbmParams<F>,
    horizon: F,
    t: F,
    x: F,
    variant: ReversalVariant,
) -> Result<F> {
    params.validate()?;
    if t < F::zero() {
        return Err(Error::InvalidParameter(format!("reversed time {t} is negative")));
    }
    if t >= horizon {
        return Err(Error::ReversalEndpoint {
            t: t.as_f64(),
            horizon: horizon.as_f64(),
        });
    }
    if !(x > F::zero()) {
        return Err(Error::InvalidParameter(format!("level {x} must be positive")));
    }
    Ok(reversed_drift_unchecked(params, horizon - t, x, variant))
}

/// `remaining` is `T - t`, the forward time whose density enters the drift.
#[inline]
fn reversed_drift_unchecked<F: Scalar>(
    p: &GbmParams<F>,
    remaining: F,
    x: F,
    variant: ReversalVariant,
) -> F {
    match variant {
        ReversalVariant::ClosedForm => {
            -p.mu * x + (p.log_drift() - (x / p.d0).ln() / remaining) / p.sigma
        }
        ReversalVariant::Standard => {
            let s2 = p.sigma * p.sigma;
            // ∂_x[σ²x² p]/p = 2σ²x + σ²x² ∂_x log p
            -p.mu * x + (s2 + s2) * x + s2 * x * x * gbm_log_density_slope(p, remaining, x)
        }
    }
}

fn check_reversal<F: Scalar>(
    params: &GbmParams<F>,
    horizon: F,
    x_cond: F,
    n_steps: usize,
    n_paths: usize,
    endpoint_guard: F,
) -> Result<()> {
    params.validate()?;
    check_grid(F::zero(), horizon, n_steps, n_paths)?;
    if !(x_cond > F::zero()) {
        return Err(Error::InvalidParameter(format!("conditioning level {x_cond} must be positive")));
    }
    if !(endpoint_guard > F::zero()) || !(endpoint_guard < horizon) {
        return Err(Error::InvalidParameter(format!(
            "endpoint guard {endpoint_guard} must lie in (0, T)"
        )));
    }
    Ok(())
}

/// Log-space Euler step of the reversed process. The drift is frozen at
/// `T - guard` for steps starting after that time.
struct ReversedStepper<F: Scalar> {
    params: GbmParams<F>,
    horizon: F,
    dt: F,
    sqrt_dt: F,
    guard: F,
    variant: ReversalVariant,
}

impl<F: Scalar> ReversedStepper<F> {
    #[inline]
    fn step(&self, k: usize, x: F, z: F) -> F {
        let t = (self.dt * F::from_count(k)).min(self.horizon - self.guard);
        let remaining = self.horizon - t;
        let drift = reversed_drift_unchecked(&self.params, remaining, x, self.variant);
        let s = self.params.sigma;
        x * ((drift / x - F::lit(0.5) * s * s) * self.dt + s * self.sqrt_dt * z).exp()
    }
}

/// Simulates the time-reversed GBM started at `x_cond` over `[0, T]`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_reversed_paths<F: Scalar>(
    params: &GbmParams<F>,
    horizon: F,
    x_cond: F,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    endpoint_guard: F,
    variant: ReversalVariant,
) -> Result<PathSet<F>> {
    check_reversal(params, horizon, x_cond, n_steps, n_paths, endpoint_guard)?;
    let dt = horizon / F::from_count(n_steps);
    let stepper = ReversedStepper {
        params: *params,
        horizon,
        dt,
        sqrt_dt: dt.sqrt(),
        guard: endpoint_guard,
        variant,
    };
    let n_times = n_steps + 1;
    let mut values = vec![F::zero(); n_paths * n_times];
    values
        .par_chunks_mut(n_times)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let mut rng = substream(seed, Purpose::Reversed, i as u64);
            row[0] = x_cond;
            for k in 1..n_times {
                let z = F::standard_normal(&mut rng);
                let next = stepper.step(k - 1, row[k - 1], z);
                if !next.is_finite() || !(next > F::zero()) {
                    return Err(Error::NonFinite { path: i, step: k });
                }
                row[k] = next;
            }
            Ok(())
        })?;
    Ok(PathSet {
        time_grid: uniform_grid(F::zero(), horizon, n_steps),
        values,
        n_paths,
        seed,
        scheme: variant.scheme(),
    })
}

/// Reversed simulation that keeps only the trapezoidal integral of each
/// curve along every path. Uses the same substreams as
/// [`simulate_reversed_paths`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn reversed_integrals<F: Scalar>(
    params: &GbmParams<F>,
    horizon: F,
    x_cond: F,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    endpoint_guard: F,
    variant: ReversalVariant,
    curves: &[&ScalarFn<F>],
) -> Result<Vec<Vec<F>>> {
    check_reversal(params, horizon, x_cond, n_steps, n_paths, endpoint_guard)?;
    let dt = horizon / F::from_count(n_steps);
    let stepper = ReversedStepper {
        params: *params,
        horizon,
        dt,
        sqrt_dt: dt.sqrt(),
        guard: endpoint_guard,
        variant,
    };
    let half_dt = F::lit(0.5) * dt;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Purpose::Reversed, i as u64);
            let mut x = x_cond;
            let mut prev: Vec<F> = curves.iter().map(|c| c.eval(x)).collect();
            let mut acc = vec![F::zero(); curves.len()];
            for k in 0..n_steps {
                let z = F::standard_normal(&mut rng);
                x = stepper.step(k, x, z);
                if !x.is_finite() || !(x > F::zero()) {
                    return Err(Error::NonFinite { path: i, step: k + 1 });
                }
                for (j, c) in curves.iter().enumerate() {
                    let v = c.eval(x);
                    acc[j] = acc[j] + half_dt * (prev[j] + v);
                    prev[j] = v;
                }
            }
            Ok(acc)
        })
        .collect()
}
