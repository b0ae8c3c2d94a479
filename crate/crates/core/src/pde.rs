//! Backward Crank-Nicolson solver for `u^α(t, x) = E[U'(D_T + α) | D_t = x]`,
//! its log-gradient `v^α = -∂_x log u^α`, and the jump in the market price
//! of risk when rate and intensity are constant.
//!
//! The PDE `u_t + ½x²σ²u_xx + xμu_x = 0` is solved in `y = log x` on a
//! uniform grid, where it reads `u_t + ½σ²u_yy + (μ - ½σ²)u_y = 0`. The
//! truncated domain carries the condition `u_xx = 0` at both ends.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dividend::DividendModel;
use crate::error::{Error, Result};
use crate::preferences::MarginalUtility;
use crate::scalar::Scalar;

/// Log-uniform spatial nodes on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SpatialGrid<F: Scalar> {
    pub x_min: F,
    pub x_max: F,
    pub n_x: usize,
}

impl<F: Scalar> SpatialGrid<F> {
    pub fn new(x_min: F, x_max: F, n_x: usize) -> Result<Self> {
        let g = Self { x_min, x_max, n_x };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min > F::zero() && self.x_max > self.x_min && self.x_max.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "need 0 < x_min < x_max, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        if self.n_x < 16 {
            return Err(Error::InvalidGrid(format!("n_x = {} below 16", self.n_x)));
        }
        Ok(())
    }

    /// Spacing in `log x`.
    pub fn log_step(&self) -> F {
        (self.x_max.ln() - self.x_min.ln()) / F::from_count(self.n_x - 1)
    }

    pub fn nodes(&self) -> Vec<F> {
        let (a, h) = (self.x_min.ln(), self.log_step());
        (0..self.n_x)
            .map(|j| match j {
                0 => self.x_min,
                j if j == self.n_x - 1 => self.x_max,
                j => (a + h * F::from_count(j)).exp(),
            })
            .collect()
    }
}

/// A field on the `(t, x)` lattice, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<F: Scalar> {
    pub t_grid: Vec<F>,
    pub x_grid: Vec<F>,
    pub values: Vec<F>,
}

impl<F: Scalar> GridField<F> {
    pub fn at(&self, k: usize, j: usize) -> F {
        self.values[k * self.x_grid.len() + j]
    }

    pub fn slice(&self, k: usize) -> &[F] {
        let n = self.x_grid.len();
        &self.values[k * n..(k + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution<F: Scalar> {
    pub grid: SpatialGrid<F>,
    pub alpha: F,
    /// `u[k]` lives at `t_grid[k]`; the last slice is the terminal condition.
    pub u: GridField<F>,
}

impl<F: Scalar> PdeSolution<F> {
    pub fn t_grid(&self) -> &[F] {
        &self.u.t_grid
    }

    pub fn x_grid(&self) -> &[F] {
        &self.u.x_grid
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let v = v_alpha(self)?;
        writeln!(w, "t,x,u,v")?;
        for (k, &t) in self.u.t_grid.iter().enumerate() {
            for (j, &x) in self.u.x_grid.iter().enumerate() {
                writeln!(w, "{},{},{},{}", t, x, self.u.at(k, j), v.at(k, j))?;
            }
        }
        Ok(())
    }
}

/// Thomas algorithm for a tridiagonal system. `lower[0]` and
/// `upper[n-1]` are ignored.
pub fn solve_tridiagonal<F: Scalar>(lower: &[F], diag: &[F], upper: &[F], rhs: &[F]) -> Result<Vec<F>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n || n == 0 {
        return Err(Error::GridMismatch("tridiagonal bands of unequal length".into()));
    }
    let mut c = vec![F::zero(); n];
    let mut d = vec![F::zero(); n];
    let mut denom = diag[0];
    if denom == F::zero() {
        return Err(Error::InvalidParameter("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == F::zero() {
            return Err(Error::InvalidParameter("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] = d[i] - c[i] * d[i + 1];
    }
    Ok(d)
}

/// Solves for `u^α` backward from `u(T, x) = U'(x + α)` with `n_t` steps.
pub fn solve_u_alpha<F: Scalar, U: MarginalUtility<F> + ?Sized>(
    model: &DividendModel<F>,
    utility: &U,
    alpha: F,
    horizon: F,
    grid: SpatialGrid<F>,
    n_t: usize,
) -> Result<PdeSolution<F>> {
    grid.validate()?;
    if !(alpha > F::zero()) {
        return Err(Error::InvalidParameter(format!("shift α = {alpha} must be positive")));
    }
    if !(horizon > F::zero()) || n_t == 0 {
        return Err(Error::InvalidGrid("need a positive horizon and at least one step".into()));
    }
    let xs = grid.nodes();
    let n = xs.len();
    for &x in &xs {
        let s = model.sigma(x);
        if !(s >= F::zero()) || !s.is_finite() || !model.mu(x).is_finite() {
            return Err(Error::DegenerateDiffusion(format!("coefficients at x = {x} are invalid")));
        }
    }
    let h = grid.log_step();
    let half = F::lit(0.5);
    let two = F::lit(2.0);
    let dt = horizon / F::from_count(n_t);

    // Generator rows: L u_j = lo_j u_{j-1} + mid_j u_j + up_j u_{j+1}.
    let mut lo = vec![F::zero(); n];
    let mut mid = vec![F::zero(); n];
    let mut up = vec![F::zero(); n];
    for j in 1..n - 1 {
        let s = model.sigma(xs[j]);
        let a = half * s * s / (h * h);
        let b = (model.mu(xs[j]) - half * s * s) / (two * h);
        lo[j] = a - b;
        mid[j] = -two * a;
        up[j] = a + b;
    }
    // Where the generator reaches the boundary, u_0 = (1 + ρ0) u_1 - ρ0 u_2
    // and u_{n-1} = (1 + ρ1) u_{n-2} - ρ1 u_{n-3} make u linear in x across
    // the outer cells. A boundary with frozen dynamics keeps its terminal
    // value instead.
    let frozen = |x: F| model.sigma(x) == F::zero() && model.mu(x) == F::zero();
    let (frozen_lo, frozen_hi) = (frozen(xs[0]), frozen(xs[n - 1]));
    let rho0 = (xs[1] - xs[0]) / (xs[2] - xs[1]);
    let rho1 = (xs[n - 1] - xs[n - 2]) / (xs[n - 2] - xs[n - 3]);
    let m = n - 2;
    let mut l_lo = vec![F::zero(); m];
    let mut l_mid = vec![F::zero(); m];
    let mut l_up = vec![F::zero(); m];
    for i in 0..m {
        let j = i + 1;
        l_lo[i] = lo[j];
        l_mid[i] = mid[j];
        l_up[i] = up[j];
    }
    if !frozen_lo {
        l_mid[0] = l_mid[0] + lo[1] * (F::one() + rho0);
        l_up[0] = l_up[0] - lo[1] * rho0;
    }
    if !frozen_hi {
        l_mid[m - 1] = l_mid[m - 1] + up[n - 2] * (F::one() + rho1);
        l_lo[m - 1] = l_lo[m - 1] - up[n - 2] * rho1;
    }

    let c = half * dt;
    let a_lo: Vec<F> = l_lo.iter().map(|&v| -c * v).collect();
    let a_mid: Vec<F> = l_mid.iter().map(|&v| F::one() - c * v).collect();
    let a_up: Vec<F> = l_up.iter().map(|&v| -c * v).collect();

    let t_grid: Vec<F> = (0..=n_t)
        .map(|k| if k == n_t { horizon } else { dt * F::from_count(k) })
        .collect();
    let mut values = vec![F::zero(); (n_t + 1) * n];
    let mut cur: Vec<F> = xs.iter().map(|&x| utility.marginal(x + alpha)).collect();
    values[n_t * n..].copy_from_slice(&cur);
    let mut rhs = vec![F::zero(); m];
    for k in (0..n_t).rev() {
        for i in 0..m {
            let j = i + 1;
            rhs[i] = cur[j] + c * (lo[j] * cur[j - 1] + mid[j] * cur[j] + up[j] * cur[j + 1]);
        }
        // Frozen boundary values enter the implicit side as known terms.
        if frozen_lo {
            rhs[0] = rhs[0] + c * lo[1] * cur[0];
        }
        if frozen_hi {
            rhs[m - 1] = rhs[m - 1] + c * up[n - 2] * cur[n - 1];
        }
        let inner = solve_tridiagonal(&a_lo, &a_mid, &a_up, &rhs)?;
        cur[1..n - 1].copy_from_slice(&inner);
        if !frozen_lo {
            cur[0] = (F::one() + rho0) * cur[1] - rho0 * cur[2];
        }
        if !frozen_hi {
            cur[n - 1] = (F::one() + rho1) * cur[n - 2] - rho1 * cur[n - 3];
        }
        if let Some(j) = cur.iter().position(|&v| !(v > F::zero()) || !v.is_finite()) {
            return Err(Error::PositivityLost {
                t: t_grid[k].as_f64(),
                x: xs[j].as_f64(),
                value: cur[j].as_f64(),
            });
        }
        values[k * n..(k + 1) * n].copy_from_slice(&cur);
    }
    Ok(PdeSolution {
        grid,
        alpha,
        u: GridField {
            t_grid,
            x_grid: xs,
            values,
        },
    })
}

/// Solves for several shifts in parallel.
pub fn solve_u_alphas<F: Scalar, U: MarginalUtility<F> + ?Sized>(
    model: &DividendModel<F>,
    utility: &U,
    alphas: &[F],
    horizon: F,
    grid: SpatialGrid<F>,
    n_t: usize,
) -> Result<Vec<PdeSolution<F>>> {
    alphas
        .par_iter()
        .map(|&a| solve_u_alpha(model, utility, a, horizon, grid, n_t))
        .collect()
}

/// Three-point derivative on a nonuniform grid, exact for quadratics;
/// one-sided at the ends.
pub fn derivative<F: Scalar>(xs: &[F], f: &[F]) -> Vec<F> {
    let n = xs.len();
    let mut out = vec![F::zero(); n];
    let two = F::lit(2.0);
    for j in 1..n - 1 {
        let h1 = xs[j] - xs[j - 1];
        let h2 = xs[j + 1] - xs[j];
        out[j] = -h2 / (h1 * (h1 + h2)) * f[j - 1]
            + (h2 - h1) / (h1 * h2) * f[j]
            + h1 / (h2 * (h1 + h2)) * f[j + 1];
    }
    let (h1, h2) = (xs[1] - xs[0], xs[2] - xs[1]);
    out[0] = -(two * h1 + h2) / (h1 * (h1 + h2)) * f[0] + (h1 + h2) / (h1 * h2) * f[1]
        - h1 / (h2 * (h1 + h2)) * f[2];
    let (h1, h2) = (xs[n - 2] - xs[n - 3], xs[n - 1] - xs[n - 2]);
    out[n - 1] = (two * h2 + h1) / (h2 * (h1 + h2)) * f[n - 1] - (h1 + h2) / (h1 * h2) * f[n - 2]
        + h2 / (h1 * (h1 + h2)) * f[n - 3];
    out
}

/// `v^α = -∂_x log u^α` on every node.
pub fn v_alpha<F: Scalar>(sol: &PdeSolution<F>) -> Result<GridField<F>> {
    let xs = &sol.u.x_grid;
    let mut values = Vec::with_capacity(sol.u.values.len());
    for k in 0..sol.u.t_grid.len() {
        let slice = sol.u.slice(k);
        if slice.iter().any(|&v| !(v > F::zero())) {
            return Err(Error::PositivityLost {
                t: sol.u.t_grid[k].as_f64(),
                x: F::nan().as_f64(),
                value: F::nan().as_f64(),
            });
        }
        let logs: Vec<F> = slice.iter().map(|v| v.ln()).collect();
        values.extend(derivative(xs, &logs).into_iter().map(|d| -d));
    }
    Ok(GridField {
        t_grid: sol.u.t_grid.clone(),
        x_grid: xs.clone(),
        values,
    })
}

/// Market prices of risk before and after default on the PDE lattice, for
/// constant intensity `λ`. A constant short rate scales both kernels by the
/// same factor and cancels.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFields<F: Scalar> {
    pub theta_pre: GridField<F>,
    pub theta_post: GridField<F>,
    pub jump: GridField<F>,
}

pub fn theta_jump_constant<F: Scalar>(
    lambda0: F,
    model: &DividendModel<F>,
    sol_eps: &PdeSolution<F>,
    sol_one: &PdeSolution<F>,
) -> Result<ThetaFields<F>> {
    if sol_eps.u.x_grid != sol_one.u.x_grid || sol_eps.u.t_grid != sol_one.u.t_grid {
        return Err(Error::GridMismatch("the two solutions use different grids".into()));
    }
    if !(lambda0 >= F::zero()) {
        return Err(Error::InvalidParameter(format!("intensity {lambda0} is negative")));
    }
    let xs = &sol_eps.u.x_grid;
    let t_grid = &sol_eps.u.t_grid;
    let horizon = t_grid[t_grid.len() - 1];
    let n = xs.len();
    let mut pre = Vec::with_capacity(sol_eps.u.values.len());
    let mut post = Vec::with_capacity(sol_eps.u.values.len());
    for (k, &t) in t_grid.iter().enumerate() {
        let ue = sol_eps.u.slice(k);
        let u1 = sol_one.u.slice(k);
        let due = derivative(xs, ue);
        let du1 = derivative(xs, u1);
        let w = (-lambda0 * (horizon - t)).exp();
        for j in 0..n {
            let scale = xs[j] * model.sigma(xs[j]);
            post.push(-due[j] / ue[j] * scale);
            let num = (F::one() - w) * due[j] + w * du1[j];
            let den = (F::one() - w) * ue[j] + w * u1[j];
            pre.push(-num / den * scale);
        }
    }
    let jump = post.iter().zip(&pre).map(|(&a, &b)| a - b).collect();
    let field = |values| GridField {
        t_grid: t_grid.clone(),
        x_grid: xs.clone(),
        values,
    };
    Ok(ThetaFields {
        theta_pre: field(pre),
        theta_post: field(post),
        jump: field(jump),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::ScalarFn;
    use crate::dividend::GbmParams;
    use crate::preferences::Utility;
    use approx::assert_relative_eq;

    struct Cara(f64);

    impl MarginalUtility<f64> for Cara {
        fn marginal(&self, x: f64) -> f64 {
            (-self.0 * x).exp()
        }
        fn absolute_risk_aversion(&self, _x: f64) -> f64 {
            self.0
        }
    }

    fn gbm() -> DividendModel<f64> {
        GbmParams::new(-0.2, 0.3, 1.0).unwrap().model()
    }

    fn grid(n: usize) -> SpatialGrid<f64> {
        SpatialGrid::new(0.05, 20.0, n).unwrap()
    }

    #[test]
    fn thomas_solves_small_system() {
        // [2 1 0; 1 3 1; 0 1 2] x = [3 5 3] has solution [1 1 1]
        let x = solve_tridiagonal(&[0.0, 1.0, 1.0], &[2.0, 3.0, 2.0], &[1.0, 1.0, 0.0], &[3.0, 5.0, 3.0])
            .unwrap();
        for v in x {
            assert_relative_eq!(v, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(SpatialGrid::new(0.0, 1.0, 32).is_err());
        assert!(SpatialGrid::new(2.0, 1.0, 32).is_err());
        assert!(SpatialGrid::new(0.1, 1.0, 15).is_err());
        let g = grid(17).nodes();
        assert_eq!(g[0], 0.05);
        assert_eq!(g[16], 20.0);
    }

    #[test]
    fn frozen_dynamics_keep_terminal_condition() {
        let m = DividendModel {
            drift: ScalarFn::constant(0.0),
            volatility: ScalarFn::constant(0.0),
            initial_level: 1.0,
        };
        let sol = solve_u_alpha(&m, &Utility::Log, 0.5, 1.0, grid(40), 20).unwrap();
        for k in 0..=20 {
            for (j, &x) in sol.x_grid().iter().enumerate() {
                assert_relative_eq!(sol.u.at(k, j), 1.0 / (x + 0.5), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn terminal_slice_is_exact() {
        let sol = solve_u_alpha(&gbm(), &Utility::power(0.5).unwrap(), 1.0, 1.0, grid(64), 32).unwrap();
        let last = sol.t_grid().len() - 1;
        for (j, &x) in sol.x_grid().iter().enumerate() {
            assert_eq!(sol.u.at(last, j), (x + 1.0).powf(-0.5));
        }
    }

    #[test]
    fn terminal_gradient_is_absolute_risk_aversion() {
        let sol = solve_u_alpha(&gbm(), &Utility::Log, 0.5, 1.0, grid(400), 10).unwrap();
        let v = v_alpha(&sol).unwrap();
        let last = sol.t_grid().len() - 1;
        for (j, &x) in sol.x_grid().iter().enumerate().skip(1).take(398) {
            assert_relative_eq!(v.at(last, j), 1.0 / (x + 0.5), max_relative = 2e-3);
        }
    }

    #[test]
    fn cara_gradient_is_independent_of_shift() {
        let u = Cara(1.5);
        let g = SpatialGrid::new(0.05, 5.0, 64).unwrap();
        let a = solve_u_alpha(&gbm(), &u, 0.3, 1.0, g, 16).unwrap();
        let b = solve_u_alpha(&gbm(), &u, 1.0, 1.0, g, 16).unwrap();
        let (va, vb) = (v_alpha(&a).unwrap(), v_alpha(&b).unwrap());
        let last = a.t_grid().len() - 1;
        for j in 0..64 {
            assert_relative_eq!(va.at(last, j), vb.at(last, j), max_relative = 1e-9);
        }
    }

    #[test]
    fn gradient_nonincreasing_in_shift() {
        let sols = solve_u_alphas(&gbm(), &Utility::Log, &[0.25, 0.5, 1.0], 1.0, grid(200), 100).unwrap();
        let vs: Vec<_> = sols.iter().map(|s| v_alpha(s).unwrap()).collect();
        for k in 0..=100 {
            for j in 1..199 {
                assert!(vs[0].at(k, j) >= vs[1].at(k, j));
                assert!(vs[1].at(k, j) >= vs[2].at(k, j));
            }
        }
    }

    #[test]
    fn theta_jump_vanishes_for_equal_solutions_and_is_nonnegative_otherwise() {
        let model = gbm();
        let one = solve_u_alpha(&model, &Utility::Log, 1.0, 1.0, grid(120), 60).unwrap();
        let same = theta_jump_constant(0.5, &model, &one, &one).unwrap();
        assert!(same.jump.values.iter().all(|v| v.abs() < 1e-12));
        let eps = solve_u_alpha(&model, &Utility::Log, 0.5, 1.0, grid(120), 60).unwrap();
        let f = theta_jump_constant(0.5, &model, &eps, &one).unwrap();
        assert!(f.jump.values.iter().all(|&v| v >= -1e-12));
        let mismatch = solve_u_alpha(&model, &Utility::Log, 1.0, 1.0, grid(121), 60).unwrap();
        assert!(matches!(
            theta_jump_constant(0.5, &model, &eps, &mismatch),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn csv_export_has_all_nodes() {
        let sol = solve_u_alpha(&gbm(), &Utility::Log, 1.0, 1.0, grid(16), 2).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 16);
        assert!(text.starts_with("t,x,u,v\n"));
    }
}
