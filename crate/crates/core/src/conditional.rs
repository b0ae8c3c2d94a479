//! Functionals of the dividend path conditioned on its terminal value:
//! `g(x) = E[e^{-∫λ} | D_T = x]` and `f(x) = E[e^{∫r} | D_T = x]`.
//!
//! The main estimator simulates the time-reversed dividend from `x`. A
//! kernel regression on forward paths provides an independent check.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::{CurveSpec, ScalarFn};
use crate::dividend::{reversed_integrals, simulate_terminal, GbmParams, PathSet, ReversalVariant};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;
use crate::stats::{combined_se, mean_se, Estimate, MomentSample};

/// Values of a function on an increasing grid, with standard errors.
/// Flagged points carry no estimate (value and error are NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<F: Scalar> {
    pub x_grid: Vec<F>,
    pub values: Vec<F>,
    pub std_errors: Vec<F>,
    pub flagged: Vec<bool>,
}

fn check_grid<F: Scalar>(x_grid: &[F]) -> Result<()> {
    if x_grid.is_empty() {
        return Err(Error::InvalidGrid("empty x grid".into()));
    }
    if x_grid.iter().any(|&x| !(x > F::zero()) || !x.is_finite()) {
        return Err(Error::InvalidGrid("x grid must be positive and finite".into()));
    }
    if x_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid("x grid must be strictly increasing".into()));
    }
    Ok(())
}

impl<F: Scalar> GridFunction<F> {
    pub fn new(x_grid: Vec<F>, values: Vec<F>, std_errors: Vec<F>) -> Result<Self> {
        check_grid(&x_grid)?;
        if values.len() != x_grid.len() || std_errors.len() != x_grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} grid points, {} values, {} errors",
                x_grid.len(),
                values.len(),
                std_errors.len()
            )));
        }
        let flagged = values.iter().map(|v| v.is_nan()).collect();
        Ok(Self {
            x_grid,
            values,
            std_errors,
            flagged,
        })
    }

    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }

    pub fn estimate(&self, i: usize) -> Estimate<F> {
        Estimate::new(self.values[i], self.std_errors[i])
    }

    /// Pointwise product with a deterministic function of `x`.
    pub fn scaled(&self, f: impl Fn(F) -> Result<F>) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.len() {
            let s = f(self.x_grid[i])?;
            out.values[i] = self.values[i] * s;
            out.std_errors[i] = self.std_errors[i] * s.abs();
        }
        Ok(out)
    }

    /// Index of the largest unflagged value.
    pub fn argmax(&self) -> Option<usize> {
        (0..self.len())
            .filter(|&i| !self.flagged[i])
            .max_by(|&a, &b| self.values[a].partial_cmp(&self.values[b]).expect("finite"))
    }

    fn adjacent_violations(&self, k: F, increasing: bool) -> Vec<usize> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| !self.flagged[i]).collect();
        idx.windows(2)
            .filter(|w| {
                let (a, b) = (w[0], w[1]);
                let step = self.values[b] - self.values[a];
                let drop = if increasing { -step } else { step };
                drop > k * combined_se(self.std_errors[a], self.std_errors[b])
            })
            .map(|w| w[0])
            .collect()
    }

    /// No adjacent decrease exceeds `k` combined standard errors.
    pub fn is_nondecreasing_within(&self, k: F) -> bool {
        self.adjacent_violations(k, true).is_empty()
    }

    pub fn is_nonincreasing_within(&self, k: F) -> bool {
        self.adjacent_violations(k, false).is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,value,std_error")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", self.x_grid[i], self.values[i], self.std_errors[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty grid CSV".into()))??;
        if header.trim() != "x,value,std_error" {
            return Err(Error::Format(format!("unexpected grid CSV header {header:?}")));
        }
        let (mut xs, mut vs, mut ss) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: &str| -> Result<F> {
                let v: f64 = s.trim().parse().map_err(|_| {
                    Error::Format(format!("line {}: cannot parse {s:?}", n + 2))
                })?;
                Ok(F::lit(v))
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!("line {}: expected 3 columns", n + 2)));
            }
            xs.push(parse(cols[0])?);
            vs.push(parse(cols[1])?);
            ss.push(parse(cols[2])?);
        }
        Self::new(xs, vs, ss)
    }
}

/// Settings for the reversed-time estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReversalOptions<F: Scalar> {
    pub variant: ReversalVariant,
    /// Drift is frozen this close to the horizon; one step when absent.
    pub endpoint_guard: Option<F>,
}

impl<F: Scalar> ReversalOptions<F> {
    pub fn new(variant: ReversalVariant) -> Self {
        Self {
            variant,
            endpoint_guard: None,
        }
    }

    fn guard(&self, horizon: F, n_steps: usize) -> F {
        self.endpoint_guard
            .unwrap_or_else(|| horizon / F::from_count(n_steps))
    }
}

/// Reversed-path sample size and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversalRun {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn conditional_mean<F: Scalar>(
    params: &GbmParams<F>,
    curve: &ScalarFn<F>,
    sign: F,
    horizon: F,
    x_grid: &[F],
    run: ReversalRun,
    opts: ReversalOptions<F>,
) -> Result<GridFunction<F>> {
    check_grid(x_grid)?;
    let guard = opts.guard(horizon, run.n_steps);
    let mut values = Vec::with_capacity(x_grid.len());
    let mut errors = Vec::with_capacity(x_grid.len());
    // Every grid point reuses the same substreams, which smooths the curve.
    for &x in x_grid {
        let ints = reversed_integrals(
            params, horizon, x, run.n_steps, run.n_paths, run.seed, guard, opts.variant, &[curve],
        )?;
        let ys: Vec<F> = ints.iter().map(|v| (sign * v[0]).exp()).collect();
        let e = mean_se(&ys)?;
        values.push(e.value);
        errors.push(e.se);
    }
    GridFunction::new(x_grid.to_vec(), values, errors)
}

/// `g(x) = E[e^{-∫_0^T λ(D_s) ds} | D_T = x]` by reversed simulation.
pub fn estimate_g<F: Scalar>(
    params: &GbmParams<F>,
    intensity: &CurveSpec<F>,
    horizon: F,
    x_grid: &[F],
    run: ReversalRun,
    opts: ReversalOptions<F>,
) -> Result<GridFunction<F>> {
    check_grid(x_grid)?;
    intensity.check_nonnegative_on(x_grid)?;
    conditional_mean(params, &intensity.f, -F::one(), horizon, x_grid, run, opts)
}

/// `f(x) = E[e^{∫_0^T r(D_s) ds} | D_T = x]` by reversed simulation.
pub fn estimate_f<F: Scalar>(
    params: &GbmParams<F>,
    rate: &CurveSpec<F>,
    horizon: F,
    x_grid: &[F],
    run: ReversalRun,
    opts: ReversalOptions<F>,
) -> Result<GridFunction<F>> {
    conditional_mean(params, &rate.f, F::one(), horizon, x_grid, run, opts)
}

/// Silverman's rule of thumb on a sample.
pub fn silverman_bandwidth<F: Scalar>(sorted: &[F]) -> F {
    let n = sorted.len();
    let nf = F::from_count(n);
    let mean = sorted.iter().copied().sum::<F>() / nf;
    let var = sorted.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / (nf - F::one());
    let q = |p: f64| sorted[((n - 1) as f64 * p).round() as usize];
    let iqr = (q(0.75) - q(0.25)) / F::lit(1.34);
    let spread = if iqr > F::zero() { var.sqrt().min(iqr) } else { var.sqrt() };
    F::lit(0.9) * spread * nf.powf(F::lit(-0.2))
}

/// Minimum Kish effective sample size for a supported grid point.
pub const MIN_EFFECTIVE_MASS: f64 = 30.0;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Nadaraya-Watson regression of `functional` on `log D_T`, Gaussian kernel,
/// bootstrap standard errors. Points whose effective kernel mass is below
/// [`MIN_EFFECTIVE_MASS`] are flagged.
pub fn kernel_regression<F: Scalar>(
    terminal: &[F],
    functional: &[F],
    x_grid: &[F],
    bandwidth: Option<F>,
    bootstrap_seed: u64,
) -> Result<GridFunction<F>> {
    check_grid(x_grid)?;
    if terminal.len() != functional.len() {
        return Err(Error::GridMismatch(format!(
            "{} terminal values but {} functional values",
            terminal.len(),
            functional.len()
        )));
    }
    if terminal.len() < 2 {
        return Err(Error::EmptySample("regression needs at least two paths".into()));
    }
    if terminal.iter().any(|&d| !(d > F::zero())) {
        return Err(Error::InvalidParameter("terminal values must be positive".into()));
    }
    let mut pairs: Vec<(F, F)> = terminal
        .iter()
        .zip(functional)
        .map(|(&d, &y)| (d.ln(), y))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite log levels"));
    let logs: Vec<F> = pairs.iter().map(|p| p.0).collect();
    let h = match bandwidth {
        Some(h) if h > F::zero() => h,
        Some(h) => return Err(Error::InvalidParameter(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(&logs),
    };
    let reach = F::lit(5.0) * h;
    let min_mass = F::lit(MIN_EFFECTIVE_MASS);
    let results: Vec<(F, F)> = x_grid
        .par_iter()
        .enumerate()
        .map(|(gi, &x)| {
            let z = x.ln();
            let lo = logs.partition_point(|&v| v < z - reach);
            let hi = logs.partition_point(|&v| v <= z + reach);
            let window = &pairs[lo..hi];
            let weights: Vec<F> = window
                .iter()
                .map(|&(v, _)| {
                    let u = (v - z) / h;
                    (-F::lit(0.5) * u * u).exp()
                })
                .collect();
            let sw: F = weights.iter().copied().sum();
            let sw2: F = weights.iter().map(|&w| w * w).sum();
            if window.is_empty() || !(sw * sw >= min_mass * sw2) {
                return (F::nan(), F::nan());
            }
            let nw = |idx: &mut dyn Iterator<Item = usize>| {
                let (mut num, mut den) = (F::zero(), F::zero());
                for i in idx {
                    num = num + weights[i] * window[i].1;
                    den = den + weights[i];
                }
                num / den
            };
            let value = nw(&mut (0..window.len()));
            let mut rng = substream(bootstrap_seed, Purpose::Bootstrap, gi as u64);
            let m = window.len();
            let boots: Vec<F> = (0..BOOTSTRAP_RESAMPLES)
                .map(|_| {
                    let draws: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
                    nw(&mut draws.into_iter())
                })
                .filter(|v| v.is_finite())
                .collect();
            let se = mean_se(&boots)
                .map(|e| e.se * F::from_count(boots.len()).sqrt())
                .unwrap_or(F::nan());
            (value, se)
        })
        .collect();
    let (values, errors) = results.into_iter().unzip();
    GridFunction::new(x_grid.to_vec(), values, errors)
}

/// Kernel regression of a per-path functional on the terminal values of
/// `paths`.
pub fn forward_regression<F: Scalar>(
    paths: &PathSet<F>,
    functional: &[F],
    x_grid: &[F],
    bandwidth: Option<F>,
    bootstrap_seed: u64,
) -> Result<GridFunction<F>> {
    kernel_regression(&paths.terminal_values(), functional, x_grid, bandwidth, bootstrap_seed)
}

/// Forward GBM samples of `(D_T, e^{-∫λ})` pooled over several drifts, each
/// chosen so that the median of `D_T` sits at one anchor. Given `D_T` the
/// GBM path is a Brownian bridge in log space whatever the drift, so the
/// pooled sample has the same conditional law and covers a wide range of
/// terminal values.
#[allow(clippy::too_many_arguments)]
pub fn tilted_forward_sample<F: Scalar>(
    params: &GbmParams<F>,
    intensity: &CurveSpec<F>,
    horizon: F,
    n_steps: usize,
    anchors: &[F],
    paths_per_anchor: usize,
    seed: u64,
) -> Result<(Vec<F>, Vec<F>)> {
    let zero = ScalarFn::constant(F::zero());
    let mut terminal = Vec::with_capacity(anchors.len() * paths_per_anchor);
    let mut functional = Vec::with_capacity(anchors.len() * paths_per_anchor);
    for (a, &anchor) in anchors.iter().enumerate() {
        if !(anchor > F::zero()) {
            return Err(Error::InvalidParameter(format!("anchor {anchor} must be positive")));
        }
        let log_drift = (anchor / params.d0).ln() / horizon;
        let tilted = GbmParams::new(
            log_drift + F::lit(0.5) * params.sigma * params.sigma,
            params.sigma,
            params.d0,
        )?;
        let sample = simulate_terminal(
            &tilted.model(),
            params.d0,
            horizon,
            n_steps,
            paths_per_anchor,
            seed.wrapping_add(a as u64 + 1),
            &intensity.f,
            &zero,
        )?;
        for s in sample {
            terminal.push(s.terminal);
            functional.push((-s.hazard).exp());
        }
    }
    Ok((terminal, functional))
}

/// Outcome of comparing the two reversal drifts against the regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSelection {
    pub chosen: ReversalVariant,
    /// Share of supported grid points where each variant agrees with the
    /// regression within three combined standard errors.
    pub agreement_standard: f64,
    pub agreement_closed_form: f64,
    pub supported_points: usize,
}

/// Share of unflagged oracle points where `g` agrees with the oracle within
/// three combined standard errors, and the number of such points.
pub fn oracle_agreement<F: Scalar>(g: &GridFunction<F>, oracle: &GridFunction<F>) -> Result<(f64, usize)> {
    if g.x_grid != oracle.x_grid {
        return Err(Error::GridMismatch("estimate and oracle grids differ".into()));
    }
    let supported: Vec<usize> = (0..oracle.len()).filter(|&i| !oracle.flagged[i]).collect();
    if supported.is_empty() {
        return Err(Error::InsufficientSample(
            "regression oracle has no supported grid point".into(),
        ));
    }
    let agree = supported
        .iter()
        .filter(|&&i| {
            let tol = F::lit(3.0) * combined_se(g.std_errors[i], oracle.std_errors[i]);
            (g.values[i] - oracle.values[i]).abs() <= tol
        })
        .count();
    Ok((agree as f64 / supported.len() as f64, supported.len()))
}

/// Picks the reversal drift whose `g` agrees with the regression oracle at
/// more supported grid points; ties go to the standard drift.
pub fn select_variant<F: Scalar>(
    g_standard: &GridFunction<F>,
    g_closed_form: &GridFunction<F>,
    oracle: &GridFunction<F>,
) -> Result<VariantSelection> {
    if g_standard.x_grid != oracle.x_grid || g_closed_form.x_grid != oracle.x_grid {
        return Err(Error::GridMismatch("variant and oracle grids differ".into()));
    }
    let (s, supported) = oracle_agreement(g_standard, oracle)?;
    let (p, _) = oracle_agreement(g_closed_form, oracle)?;
    Ok(VariantSelection {
        chosen: if p > s { ReversalVariant::ClosedForm } else { ReversalVariant::Standard },
        agreement_standard: s,
        agreement_closed_form: p,
        supported_points: supported,
    })
}

/// One grid point of the product inequality
/// `E[e^{∫r - ∫λ} | D_T] >= E[e^{∫r} | D_T] · E[e^{-∫λ} | D_T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ProductPoint<F: Scalar> {
    pub x: F,
    pub lhs: Estimate<F>,
    pub rhs: Estimate<F>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ProductCheckReport<F: Scalar> {
    pub points: Vec<ProductPoint<F>>,
    pub pass: bool,
}

/// Checks the product inequality on a grid. It needs `r` and `-λ` to be
/// monotone in the same direction, i.e. `r` and `λ` of opposite
/// cyclicality; the monotonicity is scanned over a wide range around the
/// grid and a mixed pair is rejected.
#[allow(clippy::too_many_arguments)]
pub fn product_conditional_check<F: Scalar>(
    params: &GbmParams<F>,
    rate: &CurveSpec<F>,
    intensity: &CurveSpec<F>,
    horizon: F,
    x_grid: &[F],
    run: ReversalRun,
    opts: ReversalOptions<F>,
) -> Result<ProductCheckReport<F>> {
    check_grid(x_grid)?;
    let lo = x_grid[0] / F::lit(100.0);
    let hi = x_grid[x_grid.len() - 1] * F::lit(100.0);
    let scan = crate::config::log_spaced(lo, hi, 400);
    let same_direction = (rate.f.is_nonincreasing_on(&scan) && intensity.f.is_nondecreasing_on(&scan))
        || (rate.f.is_nondecreasing_on(&scan) && intensity.f.is_nonincreasing_on(&scan));
    if !same_direction {
        return Err(Error::HypothesisViolation(format!(
            "r = {:?} and -λ with λ = {:?} are not monotone in the same direction",
            rate.f, intensity.f
        )));
    }
    let guard = opts.guard(horizon, run.n_steps);
    let three = F::lit(3.0);
    let mut points = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let ints = reversed_integrals(
            params,
            horizon,
            x,
            run.n_steps,
            run.n_paths,
            run.seed,
            guard,
            opts.variant,
            &[&rate.f, &intensity.f],
        )?;
        let rows: Vec<F> = ints
            .iter()
            .flat_map(|v| [(v[0] - v[1]).exp(), v[0].exp(), (-v[1]).exp()])
            .collect();
        let m = MomentSample::from_rows(&rows, 3)?;
        let lhs = m.column(0);
        let rhs = m.estimate(|v| v[1] * v[2]);
        let pass = lhs.value >= rhs.value - three * combined_se(lhs.se, rhs.se);
        points.push(ProductPoint { x, lhs, rhs, pass });
    }
    let pass = points.iter().all(|p| p.pass);
    Ok(ProductCheckReport { points, pass })
}

/// On-disk cache of grid functions keyed by a hash of their inputs.
#[derive(Debug, Clone)]
pub struct GridCache {
    dir: PathBuf,
}

impl GridCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// SHA-256 of the JSON rendering of `material`.
    pub fn key(material: &impl Serialize) -> Result<String> {
        let bytes = serde_json::to_vec(material)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn path_for(&self, name: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{name}-{}.csv", &key[..16]))
    }

    /// Loads the cached grid for `material` or computes and stores it.
    /// Returns the grid and whether it came from the cache.
    pub fn get_or_compute<F: Scalar>(
        &self,
        name: &str,
        material: &impl Serialize,
        compute: impl FnOnce() -> Result<GridFunction<F>>,
    ) -> Result<(GridFunction<F>, bool)> {
        let key = Self::key(material)?;
        let path = self.path_for(name, &key);
        if path.exists() {
            let g = GridFunction::read_csv(std::fs::File::open(&path)?)?;
            return Ok((g, true));
        }
        let g = compute()?;
        let tmp = path.with_extension("csv.tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            g.write_csv(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok((g, false))
    }
}

/// Cache key material for a reversed-time estimate.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "")]
pub struct ReversalKey<'a, F: Scalar> {
    pub functional: &'static str,
    pub params: GbmParams<F>,
    pub curve: &'a ScalarFn<F>,
    pub horizon: F,
    pub x_grid: &'a [F],
    pub run: ReversalRun,
    pub options: ReversalOptions<F>,
}
