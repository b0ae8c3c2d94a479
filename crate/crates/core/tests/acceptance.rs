//! Acceptance suite: one line per criterion. Runs as a plain binary so the
//! lines appear in order, and exits nonzero when a criterion fails that is
//! not listed in `KNOWN_UNATTAINABLE`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use coxeq::app::{run, Command};
use coxeq::conditional::{
    estimate_g, kernel_regression, oracle_agreement, select_variant, tilted_forward_sample, GridFunction,
    ReversalOptions, ReversalRun,
};
use coxeq::default_engine::{martingale_residual, sample_default_times};
use coxeq::dividend::{simulate_paths, ReversalVariant};
use coxeq::pde::{solve_u_alpha, solve_u_alphas, v_alpha, SpatialGrid};
use coxeq::preferences::{MarginalUtility, Utility};
use coxeq::pricing::{Economy, MarketPoint, PointSample};
use coxeq::stats::combined_se;
use coxeq::validation::{survival_reduction_check, exchange_bruteforce, Atom};
use coxeq::wealth::{compare_relative_jumps, solve_budget_multiplier, Investor};
use coxeq::{CurveSpec64, ScenarioConfig64};

/// Criteria that fail for reasons documented with the project; they are
/// still run and reported.
const KNOWN_UNATTAINABLE: &[usize] = &[2];

const CASE_STUDY_MIN_PATHS: usize = 500_000;
const JUMP_MAGNITUDE: (f64, f64) = (1e-4, 1e-2);
const CASE_STUDY_BUDGET: Duration = Duration::from_secs(600);
const FIGURE_BUDGET: Duration = Duration::from_secs(300);
const FIGURE_INCREASING_UNTIL: f64 = 8.0;
const FIGURE_ARGMAX: (f64, f64) = (8.0, 10.0);
const PDE_RELATIVE_FLOOR: f64 = 1e-6;
const CARA_TOLERANCE: f64 = 1e-6;
const KAPPA_RELATIVE: f64 = 0.02;
const ORACLE_SHARE: f64 = 0.95;
const Z: f64 = 3.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ScenarioConfig64 {
    ScenarioConfig64::load(&configs().join(format!("{name}.toml"))).expect("shipped config parses")
}

fn grid_points(cfg: &ScenarioConfig64) -> Vec<MarketPoint<f64>> {
    cfg.grids
        .t
        .iter()
        .flat_map(|&t| cfg.grids.x.iter().map(move |&x| MarketPoint::pre(t, x)))
        .collect()
}

fn case_study_jump() -> Verdict {
    let cfg = load("case_study");
    assert!(cfg.mc.n_paths >= CASE_STUDY_MIN_PATHS);
    let start = Instant::now();
    let econ = Economy::from_config(&cfg);
    let mut pass = true;
    let mut parts = Vec::new();
    for &eps in &cfg.recovery.sweep {
        let j = PointSample::simulate(&econ.with_epsilon(eps), MarketPoint::pre(0.0, 1.0), None, &[])
            .unwrap()
            .stock_jump();
        pass &= j.value > 0.0
            && j.excludes_zero_95()
            && (JUMP_MAGNITUDE.0..=JUMP_MAGNITUDE.1).contains(&j.value);
        parts.push(format!("eps {eps}: {:.3e} ± {:.1e}", j.value, 1.96 * j.se));
    }
    let took = start.elapsed();
    pass &= took <= CASE_STUDY_BUDGET;
    verdict(pass, format!("{} [{:.0} s, {} paths]", parts.join(", "), took.as_secs_f64(), cfg.mc.n_paths))
}

struct Reversal {
    selected: ReversalVariant,
    profiles: BTreeMap<&'static str, GridFunction<f64>>,
    shares: BTreeMap<&'static str, f64>,
    took: Duration,
}

fn reversal_study(cfg: &ScenarioConfig64) -> Reversal {
    let start = Instant::now();
    let params = cfg.model.gbm().unwrap();
    let rev = &cfg.reversal;
    let run = ReversalRun {
        n_paths: rev.n_paths,
        n_steps: rev.n_steps,
        seed: cfg.mc.seed,
    };
    let g = |v| estimate_g(&params, &cfg.curves.intensity, cfg.horizon, &rev.x_grid, run, ReversalOptions::new(v)).unwrap();
    let (gs, gp) = (g(ReversalVariant::Standard), g(ReversalVariant::ClosedForm));
    let per_anchor = rev.oracle_paths.div_ceil(rev.x_grid.len());
    let (terminal, functional) = tilted_forward_sample(
        &params,
        &cfg.curves.intensity,
        cfg.horizon,
        rev.n_steps,
        &rev.x_grid,
        per_anchor,
        cfg.mc.seed,
    )
    .unwrap();
    let oracle = kernel_regression(&terminal, &functional, &rev.x_grid, rev.bandwidth, cfg.mc.seed).unwrap();
    let selected = select_variant(&gs, &gp, &oracle).unwrap().chosen;
    let eps = cfg.recovery.epsilon;
    let mut profiles = BTreeMap::new();
    let mut shares = BTreeMap::new();
    for (name, gf) in [("standard", gs), ("closed_form", gp)] {
        shares.insert(name, oracle_agreement(&gf, &oracle).unwrap().0);
        profiles.insert(name, gf.scaled(|x| cfg.utility.phi(eps, x)).unwrap());
    }
    Reversal {
        selected,
        profiles,
        shares,
        took: start.elapsed(),
    }
}

fn tag(v: ReversalVariant) -> &'static str {
    match v {
        ReversalVariant::Standard => "standard",
        ReversalVariant::ClosedForm => "closed_form",
    }
}

/// Whether no adjacent pair with both points at most `until` decreases by
/// more than three combined SE.
fn increasing_up_to(pg: &GridFunction<f64>, until: f64) -> bool {
    (1..pg.len()).filter(|&i| pg.x_grid[i] <= until).all(|i| {
        pg.values[i] >= pg.values[i - 1] - Z * combined_se(pg.std_errors[i], pg.std_errors[i - 1])
    })
}

fn figure(r: &Reversal) -> Verdict {
    let describe = |name: &str| {
        let pg = &r.profiles[name];
        let k = pg.argmax().unwrap();
        (pg.x_grid[k], increasing_up_to(pg, FIGURE_INCREASING_UNTIL))
    };
    let sel = tag(r.selected);
    let (argmax, increasing) = describe(sel);
    let pass = increasing
        && (FIGURE_ARGMAX.0..=FIGURE_ARGMAX.1).contains(&argmax)
        && r.took <= FIGURE_BUDGET;
    let other = if sel == "standard" { "closed_form" } else { "standard" };
    let (alt_argmax, alt_increasing) = describe(other);
    verdict(
        pass,
        format!(
            "{sel} reversal (oracle-selected): argmax {argmax:.3}, increasing to 8: {increasing}; \
             {other} reversal: argmax {alt_argmax:.3}, increasing to 8: {alt_increasing} [{:.0} s]",
            r.took.as_secs_f64()
        ),
    )
}

fn procyclical_jumps() -> Verdict {
    let mut cfg = load("procyclical");
    cfg.mc.n_paths = 200_000;
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for utility in [Utility::Log, Utility::power(0.5).unwrap()] {
        let mut econ = Economy::from_config(&cfg);
        econ.utility = utility;
        for p in grid_points(&cfg) {
            let j = PointSample::simulate(&econ, p, None, &[]).unwrap().stock_jump();
            pass &= j.value < 0.0 && j.excludes_zero_95();
            worst = worst.max(j.value + 1.96 * j.se);
        }
    }
    verdict(pass, format!("50 states, largest upper 95% bound {worst:.3e}"))
}

struct Cara(f64);

impl MarginalUtility<f64> for Cara {
    fn marginal(&self, x: f64) -> f64 {
        (-self.0 * x).exp()
    }
    fn absolute_risk_aversion(&self, _x: f64) -> f64 {
        self.0
    }
}

fn pde_theta() -> Verdict {
    let cfg = load("constant");
    let model = cfg.dividend_model();
    let grid = SpatialGrid::new(cfg.pde.x_min, cfg.pde.x_max, cfg.pde.n_x).unwrap();
    let eps = cfg.recovery.epsilon;
    let sols = solve_u_alphas(&model, &Utility::Log, &[eps, 1.0], cfg.horizon, grid, cfg.pde.n_t).unwrap();
    let (ve, v1) = (v_alpha(&sols[0]).unwrap(), v_alpha(&sols[1]).unwrap());
    let n = ve.x_grid.len();
    let mut worst = f64::INFINITY;
    for k in 0..ve.t_grid.len() {
        for j in 1..n - 1 {
            worst = worst.min((ve.at(k, j) - v1.at(k, j)) / v1.at(k, j).abs());
        }
    }
    // exp(-a x) underflows at the far edge for a = 1; 0.5 keeps u positive
    let cara = Cara(0.5);
    let a = solve_u_alpha(&model, &cara, eps, cfg.horizon, grid, cfg.pde.n_t).unwrap();
    let b = solve_u_alpha(&model, &cara, 1.0, cfg.horizon, grid, cfg.pde.n_t).unwrap();
    let (va, vb) = (v_alpha(&a).unwrap(), v_alpha(&b).unwrap());
    let last = va.t_grid.len() - 1;
    let cara_gap = (0..n).map(|j| (va.at(last, j) - vb.at(last, j)).abs()).fold(0.0, f64::max);
    verdict(
        worst >= -PDE_RELATIVE_FLOOR && cara_gap <= CARA_TOLERANCE,
        format!("min (v_eps - v_1)/|v_1| = {worst:.3e} on {}x{} nodes; CARA gap at T {cara_gap:.1e}", cfg.pde.n_t, n),
    )
}

fn kappa_identity() -> Verdict {
    let cfg = load("case_study");
    let econ = Economy::from_config(&cfg);
    let mut pass = true;
    let mut worst = 0.0f64;
    for &t in &[0.2, 0.4, 0.6] {
        for &x in &[0.75, 1.0, 1.5] {
            let s = PointSample::simulate(&econ, MarketPoint::pre(t, x), Some(cfg.mc.bump), &[]).unwrap();
            match s.kappa_slope_check() {
                Ok(c) => {
                    let tol = (KAPPA_RELATIVE * c.rhs.value.abs()).max(Z * combined_se(c.lhs.se, c.rhs.se));
                    let gap = (c.lhs.value - c.rhs.value).abs();
                    pass &= gap <= tol;
                    worst = worst.max(gap / tol);
                }
                Err(_) => pass = false,
            }
        }
    }
    verdict(pass, format!("9 states, largest gap / tolerance {worst:.2}"))
}

fn wealth_ordering() -> Verdict {
    let mut cfg = load("constant");
    cfg.mc.n_paths = 100_000;
    let econ = Economy::from_config(&cfg);
    let xi = coxeq::pricing::terminal_kernel_sample(&econ).unwrap();
    let investors: Vec<_> = [1.0, 0.8, 0.5]
        .iter()
        .map(|&g| {
            let spec = coxeq::config::InvestorSpec { gamma: g, initial_wealth: 1.0 };
            solve_budget_multiplier(&Investor::from_spec(&spec).unwrap(), &xi).unwrap()
        })
        .collect();
    let rep = compare_relative_jumps(&econ, &grid_points(&cfg), &investors).unwrap();
    let holds = rep.comparisons.iter().all(|c| c.ordering_holds);
    let verified = rep.comparisons.iter().filter(|c| c.condition_verified).count();
    verdict(
        holds && rep.pass,
        format!(
            "{} adjacent pairs over 25 states, ordering holds at all: {holds}, condition verified at {verified}",
            rep.comparisons.len()
        ),
    )
}

fn reversal_oracle(r: &Reversal) -> Verdict {
    let sel = tag(r.selected);
    let share = r.shares[sel];
    verdict(
        share >= ORACLE_SHARE,
        format!(
            "{sel} reversal agrees at {:.1}% of supported points (standard {:.1}%, closed-form {:.1}%)",
            100.0 * share,
            100.0 * r.shares["standard"],
            100.0 * r.shares["closed_form"]
        ),
    )
}

fn kernel_inequalities() -> Verdict {
    let mut pass = true;
    let mut states = 0;
    for name in ["case_study", "procyclical"] {
        let mut cfg = load(name);
        cfg.mc.n_paths = 100_000;
        let econ = Economy::from_config(&cfg);
        for p in grid_points(&cfg) {
            let s = PointSample::simulate(&econ, p, None, &[]).unwrap();
            let k = s.kappa();
            pass &= s.xi().pre_below_post() && k.value >= -Z * k.se;
            states += 1;
        }
        let mut unit = econ.with_epsilon(1.0);
        unit.mc.n_paths = 20_000;
        let s = PointSample::simulate(&unit, MarketPoint::pre(0.3, 1.0), None, &[]).unwrap();
        let (xi, st, b) = (s.xi(), s.stock(), s.bond());
        pass &= xi.pre.value == xi.post.value
            && st.pre.value == st.post.value
            && b.pre.value == b.post.value
            && s.kappa().value == 0.0;
    }
    verdict(pass, format!("{states} states; unit recovery exact"))
}

fn martingale_and_reduction() -> Verdict {
    let mut pass = true;
    let mut checks = 0;
    for name in ["case_study", "procyclical", "constant", "stress_eps"] {
        let mut cfg = load(name);
        cfg.mc.n_paths = 100_000;
        let econ = Economy::from_config(&cfg);
        let paths = simulate_paths(&econ.model, 0.0, cfg.model.d0(), cfg.horizon, cfg.mc.n_steps, cfg.mc.n_paths, cfg.mc.seed)
            .unwrap();
        let defaults = sample_default_times(&paths, &cfg.curves.intensity, cfg.mc.seed).unwrap();
        for t in cfg.grids.t.iter().copied().chain([cfg.horizon]) {
            let e = martingale_residual(&defaults, t).unwrap();
            pass &= e.value.abs() < Z * e.se || e.value == 0.0;
            checks += 1;
        }
        drop(paths);
        let (u, eps) = (cfg.utility, cfg.recovery.epsilon);
        for &t in &cfg.grids.t {
            let rep = survival_reduction_check(&econ, t, |d| u.marginal(d + 1.0), |d| u.marginal(d + eps), &(name, t)).unwrap();
            pass &= rep.pass;
            checks += 1;
        }
    }
    let two = exchange_bruteforce(
        |_| 1.0,
        |x| x,
        |x| x,
        |_| 1.0,
        |_| 1.0,
        &[Atom { x: 1.0, p: 0.5 }, Atom { x: 2.0, p: 0.5 }],
        &"two-point",
    )
    .unwrap();
    pass &= two.pass && (two.quantity("lhs") - 1.25).abs() < 1e-12;
    let u = Utility::Log;
    let eps = 0.5;
    let fr = |x: f64| (0.03f64).exp() + 0.0 * x;
    let gl = |x: f64| (-2.0 * (1.0 - (-x).exp())).exp();
    let phi = |x: f64| u.phi(eps, x).unwrap();
    let five = exchange_bruteforce(
        |x| u.marginal(x + eps),
        |x| x,
        |x| fr(x) * gl(x) * phi(x),
        fr,
        |x| gl(x) * x * phi(x),
        &[
            Atom { x: 0.3, p: 0.1 },
            Atom { x: 0.7, p: 0.2 },
            Atom { x: 1.0, p: 0.3 },
            Atom { x: 1.6, p: 0.25 },
            Atom { x: 3.0, p: 0.15 },
        ],
        &"negative-jump",
    )
    .unwrap();
    pass &= five.pass;
    verdict(
        pass,
        format!("{checks} residual and reduction checks on 4 scenarios; exchange enumeration lhs {:.2} and {:.3e}", two.quantity("lhs"), five.quantity("lhs")),
    )
}

fn determinism() -> Verdict {
    let mut cfg = load("case_study");
    cfg.mc.n_paths = 4_000;
    cfg.mc.n_steps = 20;
    cfg.grids.t = vec![0.0, 0.5];
    cfg.grids.x = vec![0.8, 1.2];
    cfg.reversal.n_paths = 2_000;
    cfg.reversal.n_steps = 40;
    cfg.reversal.oracle_paths = 20_000;
    cfg.reversal.x_grid = coxeq::config::log_spaced(0.5, 3.0, 6);
    cfg.curves.intensity = CurveSpec64::constant(1.0);
    cfg.pde.n_x = 40;
    cfg.pde.n_t = 40;
    cfg.outputs.cache_dir = None;
    let mut pass = true;
    let mut files = 0;
    for cmd in Command::ALL {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let outs: Vec<BTreeMap<String, Vec<u8>>> = dirs
            .iter()
            .map(|d| {
                run(cmd, &cfg, d.path()).unwrap();
                std::fs::read_dir(d.path())
                    .unwrap()
                    .map(|e| e.unwrap().path())
                    .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.json"))
                    .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
                    .collect()
            })
            .collect();
        pass &= outs[0] == outs[1];
        files += outs[0].len();
    }
    verdict(pass, format!("6 commands rerun, {files} output files compared byte for byte"))
}

fn main() {
    let started = Instant::now();
    let case = load("case_study");
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {n:>2} {name}: {}", v.detail);
        results.push((n, name, v));
    };
    report(1, "case-study stock jump", case_study_jump());
    let reversal = reversal_study(&case);
    report(2, "phi*g profile", figure(&reversal));
    report(3, "negative jump, pro-cyclical intensity", procyclical_jumps());
    report(4, "PDE market-price-of-risk jump", pde_theta());
    report(5, "kappa slope identity", kappa_identity());
    report(6, "relative wealth jump ordering", wealth_ordering());
    report(7, "time-reversal oracle", reversal_oracle(&reversal));
    report(8, "kernel inequalities", kernel_inequalities());
    report(9, "martingale and reduction identities", martingale_and_reduction());
    report(10, "determinism", determinism());
    let unexpected: Vec<usize> = results
        .iter()
        .filter(|(n, _, v)| !v.pass && !KNOWN_UNATTAINABLE.contains(n))
        .map(|(n, _, _)| *n)
        .collect();
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "acceptance: {} of {} criteria pass ({:.0} s)",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
