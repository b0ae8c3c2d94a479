use coxeq::curve::ScalarFn;
use coxeq::dividend::{simulate_terminal, GbmParams};
use coxeq::pde::{solve_u_alpha, solve_u_alphas, theta_jump_constant, SpatialGrid};
use coxeq::pricing::{Economy, MarketPoint, PointSample};
use coxeq::preferences::Utility;
use coxeq::stats::mean_se;
use coxeq::{CurveSpec64, ScenarioConfig64};

fn gbm() -> GbmParams<f64> {
    GbmParams::new(-0.2, 0.3, 1.0).unwrap()
}

fn u_at_one(x_min: f64, x_max: f64, n_x: usize, n_t: usize) -> f64 {
    let grid = SpatialGrid::new(x_min, x_max, n_x).unwrap();
    let sol = solve_u_alpha(&gbm().model(), &Utility::Log, 0.5, 1.0, grid, n_t).unwrap();
    // Both domains are symmetric about 1 in log space, so 1 is the middle node.
    let j = (n_x - 1) / 2;
    assert!((sol.x_grid()[j] - 1.0).abs() < 1e-12);
    sol.u.at(0, j)
}

#[test]
fn solution_matches_monte_carlo_expectation() {
    let grid = SpatialGrid::new(0.05, 20.0, 200).unwrap();
    let sol = solve_u_alpha(&gbm().model(), &Utility::Log, 0.5, 1.0, grid, 200).unwrap();
    let zero = ScalarFn::constant(0.0);
    for target in [0.5, 1.0, 2.0] {
        let j = sol.x_grid().iter().position(|&x| x >= target).unwrap();
        let x = sol.x_grid()[j];
        let sample = simulate_terminal(&gbm().model(), x, 1.0, 1, 200_000, 8, &zero, &zero).unwrap();
        let ys: Vec<f64> = sample.iter().map(|s| 1.0 / (s.terminal + 0.5)).collect();
        let mc = mean_se(&ys).unwrap();
        let pde = sol.u.at(0, j);
        let tol = (0.005 * mc.value).max(3.0 * mc.se);
        assert!((pde - mc.value).abs() <= tol, "x = {x}: pde {pde} vs mc {mc:?}");
    }
}

#[test]
fn second_order_convergence() {
    let u: Vec<f64> = [65, 129, 257].iter().map(|&n| u_at_one(0.05, 20.0, n, n - 1)).collect();
    let ratio = (u[0] - u[1]).abs() / (u[1] - u[2]).abs();
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}, values {u:?}");
}

#[test]
fn insensitive_to_domain_truncation() {
    let narrow = u_at_one(0.05, 20.0, 257, 256);
    let wide = u_at_one(0.025, 40.0, 317, 256);
    assert!(((narrow - wide) / narrow).abs() < 1e-3, "{narrow} vs {wide}");
}

#[test]
fn theta_jump_sign_agrees_with_monte_carlo() {
    let mut cfg = ScenarioConfig64::case_study();
    cfg.curves.intensity = CurveSpec64::constant(1.0);
    cfg.mc.n_paths = 100_000;
    let grid = SpatialGrid::new(0.05, 20.0, 201).unwrap();
    let model = gbm().model();
    let sols = solve_u_alphas(&model, &Utility::Log, &[0.5, 1.0], 1.0, grid, 200).unwrap();
    let fields = theta_jump_constant(1.0, &model, &sols[0], &sols[1]).unwrap();
    let j = 100;
    assert!((fields.jump.x_grid[j] - 1.0).abs() < 1e-12);
    let pde_jump = fields.jump.at(0, j);

    let econ = Economy::from_config(&cfg);
    let s = PointSample::simulate(&econ, MarketPoint::pre(0.0, 1.0), Some(cfg.mc.bump), &[]).unwrap();
    let th = s.theta().unwrap();
    let mc_jump = th.post.value - th.pre.value;
    assert!(pde_jump > 0.0 && mc_jump > 0.0, "pde {pde_jump}, mc {mc_jump}");
    assert!(
        (fields.theta_post.at(0, j) - th.post.value).abs() < 0.01 * th.post.value.abs() + 3.0 * th.post.se,
        "post: pde {} vs mc {:?}",
        fields.theta_post.at(0, j),
        th.post
    );
}
