//! Commands behind the `coxeq` binary. Each one reads a scenario, writes CSV
//! and JSON files into one output directory and returns a manifest listing
//! them. Everything here runs in `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::conditional::{
    estimate_g, kernel_regression, oracle_agreement, product_conditional_check, select_variant,
    tilted_forward_sample, GridCache, GridFunction, ReversalKey, ReversalOptions, ReversalRun,
};
use crate::config::{ScenarioConfig, SCHEMA_VERSION};
use crate::curve::ScalarFn;
use crate::default_engine::{martingale_residual, sample_default_times};
use crate::dividend::{simulate_paths, simulate_terminal, GbmParams, ReversalVariant};
use crate::error::{Error, Result};
use crate::pde::{solve_u_alphas, theta_jump_constant, v_alpha, SpatialGrid};
use crate::pricing::{
    pricing_consistency, scan, systemic_measures, terminal_kernel_sample, write_scan_csv, Economy,
    MarketPoint, PointSample,
};
use crate::stats::combined_se;
use crate::validation::{
    covariance_sign_check, survival_reduction_check, exchange_bruteforce, Atom, Monotonicity, OracleReport,
};
use crate::wealth::{
    solve_budget_multiplier, wealth_study, write_systemic_csv, write_wealth_csv, CalibratedInvestor,
    Investor,
};

type Config = ScenarioConfig<f64>;

/// Oracles that keep every path in memory run on at most this many paths.
pub const STORED_PATH_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CaseStudy,
    FigurePhig,
    JumpWealth,
    Mpr,
    Validate,
    Scan,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::CaseStudy,
        Command::FigurePhig,
        Command::JumpWealth,
        Command::Mpr,
        Command::Validate,
        Command::Scan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::CaseStudy => "case-study",
            Command::FigurePhig => "figure-phig",
            Command::JumpWealth => "jump-wealth",
            Command::Mpr => "mpr",
            Command::Validate => "validate",
            Command::Scan => "scan",
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Sets both the forward and the reversed path counts.
    pub paths: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.mc.seed = seed;
        }
        if let Some(n) = self.paths {
            cfg.mc.n_paths = n;
            cfg.reversal.n_paths = n;
        }
        cfg.validate()
    }

    pub fn out_dir(&self, cfg: &Config) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.outputs.dir))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Every file the run wrote, relative to the output directory when it
    /// lies inside it.
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub manifest: RunManifest,
    /// Human-readable summary lines.
    pub notes: Vec<String>,
}

struct Sink {
    dir: PathBuf,
    written: Vec<String>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn file(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.file(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn record(&mut self, path: &Path) {
        let shown = path
            .strip_prefix(&self.dir)
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| path.display().to_string());
        if !self.written.contains(&shown) {
            self.written.push(shown);
        }
    }
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("coxeq".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("config_schema".to_string(), SCHEMA_VERSION.to_string()),
    ])
}

/// Runs `command` on `cfg`, writing into `out_dir`, and finishes with
/// `manifest.json`.
pub fn run(command: Command, cfg: &Config, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut sink = Sink::new(out_dir)?;
    let mut notes = Vec::new();
    let pass = match command {
        Command::CaseStudy => case_study(cfg, &mut sink, &mut notes)?,
        Command::FigurePhig => figure_phig(cfg, &mut sink, &mut notes)?,
        Command::JumpWealth => jump_wealth(cfg, &mut sink, &mut notes)?,
        Command::Mpr => mpr(cfg, &mut sink, &mut notes)?,
        Command::Validate => validate(cfg, &mut sink, &mut notes)?,
        Command::Scan => scan_command(cfg, &mut sink, &mut notes)?,
    };
    sink.written.push("manifest.json".into());
    let manifest = RunManifest {
        command: command.name().into(),
        config_hash: cfg.content_hash()?,
        seed: cfg.mc.seed,
        outputs: sink.written.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        versions: versions(),
    };
    let mut w = BufWriter::new(File::create(out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(Outcome { pass, manifest, notes })
}

fn recovery_sweep(cfg: &Config) -> Vec<f64> {
    if cfg.recovery.sweep.is_empty() {
        vec![cfg.recovery.epsilon]
    } else {
        cfg.recovery.sweep.clone()
    }
}

fn grid_points(cfg: &Config) -> Vec<MarketPoint<f64>> {
    cfg.grids
        .t
        .iter()
        .flat_map(|&t| cfg.grids.x.iter().map(move |&x| MarketPoint::pre(t, x)))
        .collect()
}

/// The middle three entries of a grid with at least five, else all of it.
fn interior(v: &[f64]) -> &[f64] {
    if v.len() >= 5 {
        let mid = v.len() / 2;
        &v[mid - 1..=mid + 1]
    } else {
        v
    }
}

fn calibrated_investors(cfg: &Config, econ: &Economy<f64>) -> Result<Vec<CalibratedInvestor<f64>>> {
    let mut investors = cfg
        .investors
        .iter()
        .map(Investor::from_spec)
        .collect::<Result<Vec<_>>>()?;
    investors.sort_by(|a, b| b.gamma().total_cmp(&a.gamma()));
    if investors.is_empty() {
        return Ok(Vec::new());
    }
    let xi = terminal_kernel_sample(econ)?;
    investors.iter().map(|i| solve_budget_multiplier(i, &xi)).collect()
}

#[derive(Serialize)]
struct JumpRow {
    epsilon: f64,
    pre: f64,
    post: f64,
    jump: f64,
    se: f64,
    ci_low: f64,
    ci_high: f64,
}

fn case_study(cfg: &Config, sink: &mut Sink, notes: &mut Vec<String>) -> Result<bool> {
    let econ = Economy::from_config(cfg);
    let origin = MarketPoint::pre(0.0, cfg.model.d0());
    let mut rows = Vec::new();
    for eps in recovery_sweep(cfg) {
        let s = PointSample::simulate(&econ.with_epsilon(eps), origin, None, &[])?;
        let (stock, jump) = (s.stock(), s.stock_jump());
        let (lo, hi) = jump.ci(1.96);
        notes.push(format!(
            "epsilon {eps}: jump {:.4e} (95% CI [{lo:.4e}, {hi:.4e}])",
            jump.value
        ));
        rows.push(JumpRow {
            epsilon: eps,
            pre: stock.pre.value,
            post: stock.post.value,
            jump: jump.value,
            se: jump.se,
            ci_low: lo,
            ci_high: hi,
        });
    }
    sink.file("jumps.csv", |w| {
        writeln!(w, "epsilon,pre,post,jump,se,ci_low,ci_high")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{},{},{}", r.epsilon, r.pre, r.post, r.jump, r.se, r.ci_low, r.ci_high)?;
        }
        Ok(())
    })?;
    let rows = scan(&econ, &cfg.grids.t, &cfg.grids.x, false)?;
    sink.file("scan.csv", |w| write_scan_csv(&rows, w))?;
    Ok(true)
}

fn scan_command(cfg: &Config, sink: &mut Sink, notes: &mut Vec<String>) -> Result<bool> {
    let econ = Economy::from_config(cfg);
    let rows = scan(&econ, &cfg.grids.t, &cfg.grids.x, true)?;
    let missing = rows.iter().filter(|r| r.theta.is_none()).count();
    if missing > 0 {
        notes.push(format!("{missing} points without a reliable market price of risk"));
    }
    sink.file("scan.csv", |w| write_scan_csv(&rows, w))?;
    Ok(true)
}

fn gbm_params(cfg: &Config, command: &str) -> Result<GbmParams<f64>> {
    cfg.model.gbm().ok_or_else(|| {
        Error::Config(format!("{command} needs a geometric Brownian dividend (model.kind = \"gbm\")"))
    })
}

fn variant_tag(v: ReversalVariant) -> &'static str {
    match v {
        ReversalVariant::Standard => "standard",
        ReversalVariant::ClosedForm => "closed_form",
    }
}

#[derive(Serialize)]
struct OracleKey<'a> {
    functional: &'static str,
    params: GbmParams<f64>,
    curve: &'a ScalarFn<f64>,
    horizon: f64,
    x_grid: &'a [f64],
    n_steps: usize,
    paths_per_anchor: usize,
    bandwidth: Option<f64>,
    seed: u64,
}

fn cached(
    cache: &GridCache,
    sink: &mut Sink,
    name: &str,
    key: &impl Serialize,
    compute: impl FnOnce() -> Result<GridFunction<f64>>,
) -> Result<GridFunction<f64>> {
    let (g, _) = cache.get_or_compute(name, key, compute)?;
    sink.record(&cache.path_for(name, &GridCache::key(key)?));
    Ok(g)
}

fn reversed_g(cfg: &Config, cache: &GridCache, sink: &mut Sink, variant: ReversalVariant) -> Result<GridFunction<f64>> {
    let params = gbm_params(cfg, "figure-phig")?;
    let rev = &cfg.reversal;
    let run = ReversalRun {
        n_paths: rev.n_paths,
        n_steps: rev.n_steps,
        seed: cfg.mc.seed,
    };
    let options = ReversalOptions::new(variant);
    let key = ReversalKey {
        functional: "g",
        params,
        curve: &cfg.curves.intensity.f,
        horizon: cfg.horizon,
        x_grid: &rev.x_grid,
        run,
        options,
    };
    cached(cache, sink, &format!("g_{}", variant_tag(variant)), &key, || {
        estimate_g(&params, &cfg.curves.intensity, cfg.horizon, &rev.x_grid, run, options)
    })
}

/// Kernel regression of `e^{-∫λ}` on `D_T` over forward samples whose drifts
/// are tilted towards each grid point.
fn regression_oracle(cfg: &Config, cache: &GridCache, sink: &mut Sink) -> Result<GridFunction<f64>> {
    let params = gbm_params(cfg, "figure-phig")?;
    let rev = &cfg.reversal;
    let per_anchor = rev.oracle_paths.div_ceil(rev.x_grid.len());
    let key = OracleKey {
        functional: "g_regression",
        params,
        curve: &cfg.curves.intensity.f,
        horizon: cfg.horizon,
        x_grid: &rev.x_grid,
        n_steps: rev.n_steps,
        paths_per_anchor: per_anchor,
        bandwidth: rev.bandwidth,
        seed: cfg.mc.seed,
    };
    cached(cache, sink, "g_regression", &key, || {
        let (terminal, functional) = tilted_forward_sample(
            &params,
            &cfg.curves.intensity,
            cfg.horizon,
            rev.n_steps,
            &rev.x_grid,
            per_anchor,
            cfg.mc.seed,
        )?;
        kernel_regression(&terminal, &functional, &rev.x_grid, rev.bandwidth, cfg.mc.seed)
    })
}

/// Largest grid point up to which no adjacent pair decreases by more than
/// three combined standard errors.
pub fn increasing_until(gf: &GridFunction<f64>) -> f64 {
    let mut last = gf.x_grid[0];
    for i in 1..gf.len() {
        let tol = 3.0 * combined_se(gf.std_errors[i], gf.std_errors[i - 1]);
        if gf.values[i] < gf.values[i - 1] - tol {
            break;
        }
        last = gf.x_grid[i];
    }
    last
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub variant: ReversalVariant,
    pub argmax_x: f64,
    pub max_value: f64,
    pub increasing_until: f64,
    /// Share of supported oracle points within three combined SE.
    pub oracle_agreement: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureReport {
    pub epsilon: f64,
    pub selected: ProfileSummary,
    pub alternative: Option<ProfileSummary>,
    pub supported_points: usize,
}

fn profile(cfg: &Config, g: &GridFunction<f64>, oracle: &GridFunction<f64>, variant: ReversalVariant)
    -> Result<(GridFunction<f64>, ProfileSummary, usize)> {
    let eps = cfg.recovery.epsilon;
    let pg = g.scaled(|x| cfg.utility.phi(eps, x))?;
    let k = pg.argmax().ok_or_else(|| Error::EmptySample("φ·g has no finite value".into()))?;
    let (share, supported) = oracle_agreement(g, oracle)?;
    let summary = ProfileSummary {
        variant,
        argmax_x: pg.x_grid[k],
        max_value: pg.values[k],
        increasing_until: increasing_until(&pg),
        oracle_agreement: share,
    };
    Ok((pg, summary, supported))
}

fn figure_phig(cfg: &Config, sink: &mut Sink, notes: &mut Vec<String>) -> Result<bool> {
    let cache_dir = cfg
        .outputs
        .cache_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| sink.dir.join("cache"));
    let cache = GridCache::new(cache_dir)?;
    let oracle = regression_oracle(cfg, &cache, sink)?;
    let (chosen, other) = match cfg.reversal.variant.fixed() {
        Some(v) => (v, None),
        None => {
            let gs = reversed_g(cfg, &cache, sink, ReversalVariant::Standard)?;
            let gp = reversed_g(cfg, &cache, sink, ReversalVariant::ClosedForm)?;
            let sel = select_variant(&gs, &gp, &oracle)?;
            let alt = match sel.chosen {
                ReversalVariant::Standard => ReversalVariant::ClosedForm,
                ReversalVariant::ClosedForm => ReversalVariant::Standard,
            };
            (sel.chosen, Some(alt))
        }
    };
    let g = reversed_g(cfg, &cache, sink, chosen)?;
    let (pg, selected, supported) = profile(cfg, &g, &oracle, chosen)?;
    let alternative = match other {
        Some(v) => {
            let ga = reversed_g(cfg, &cache, sink, v)?;
            Some(profile(cfg, &ga, &oracle, v)?.1)
        }
        None => None,
    };
    let eps = cfg.recovery.epsilon;
    sink.file("phig.csv", |w| {
        writeln!(w, "x,phi,g,phi_times_g,se")?;
        for i in 0..g.len() {
            let x = g.x_grid[i];
            writeln!(w, "{},{},{},{},{}", x, cfg.utility.phi(eps, x)?, g.values[i], pg.values[i], pg.std_errors[i])?;
        }
        Ok(())
    })?;
    sink.file("g_regression.csv", |w| oracle.write_csv(w))?;
    notes.push(format!(
        "{} reversal: argmax of phi*g at x = {}, increasing up to x = {}, oracle agreement {:.1}%",
        variant_tag(chosen),
        selected.argmax_x,
        selected.increasing_until,
        100.0 * selected.oracle_agreement
    ));
    if let Some(a) = &alternative {
        notes.push(format!(
            "{} reversal: argmax at x = {}, oracle agreement {:.1}%",
            variant_tag(a.variant),
            a.argmax_x,
            100.0 * a.oracle_agreement
        ));
    }
    let pass = selected.oracle_agreement >= 0.95;
    let report = FigureReport {
        epsilon: eps,
        selected,
        alternative,
        supported_points: supported,
    };
    sink.json("phig_report.json", &report)?;
    Ok(pass)
}

#[derive(Serialize)]
struct WealthSummary<'a> {
    multipliers: Vec<(f64, f64)>,
    ordering: &'a crate::wealth::OrderingReport<f64>,
}

fn jump_wealth(cfg: &Config, sink: &mut Sink, notes: &mut Vec<String>) -> Result<bool> {
    let econ = Economy::from_config(cfg);
    let investors = calibrated_investors(cfg, &econ)?;
    if investors.is_empty() {
        return Err(Error::Config("jump-wealth needs at least one entry in investors".into()));
    }
    let study = wealth_study(&econ, &grid_points(cfg), &investors, cfg.validation.systemic_floor)?;
    sink.file("wealth_jumps.csv", |w| write_wealth_csv(&study.rows, w))?;
    sink.file("systemic.csv", |w| write_systemic_csv(&study.systemic, w))?;
    let summary = WealthSummary {
        multipliers: investors.iter().map(|c| (c.investor.gamma(), c.multiplier)).collect(),
        ordering: &study.ordering,
    };
    sink.json("wealth_ordering.json", &summary)?;
    let asserted = study.ordering.comparisons.iter().filter(|c| c.asserted).count();
    notes.push(format!(
        "ordering asserted at {asserted} of {} investor pairs, {}",
        study.ordering.comparisons.len(),
        if study.ordering.pass { "all hold" } else { "some fail" }
    ));
    Ok(study.ordering.pass)
}

/// Jump of the market price of risk on the PDE lattice, for constant
/// intensity and rate. `None` when the curves are not constant.
fn pde_theta_check(cfg: &Config, sink: Option<&mut Sink>) -> Result<Option<OracleReport>> {
    let (Some(lambda), Some(_)) = (cfg.curves.intensity.as_constant(), cfg.curves.rate.as_constant()) else {
        return Ok(None);
    };
    let model = cfg.dividend_model();
    let grid = SpatialGrid::new(cfg.pde.x_min, cfg.pde.x_max, cfg.pde.n_x)?;
    let eps = cfg.recovery.epsilon;
    let sols = solve_u_alphas(&model, &cfg.utility, &[eps, 1.0], cfg.horizon, grid, cfg.pde.n_t)?;
    let fields = theta_jump_constant(lambda, &model, &sols[0], &sols[1])?;
    let ve = v_alpha(&sols[0])?;
    let v1 = v_alpha(&sols[1])?;
    let n = ve.x_grid.len();
    let (mut min_v, mut min_jump) = (f64::INFINITY, f64::INFINITY);
    for k in 0..ve.t_grid.len() {
        for j in 1..n - 1 {
            min_v = min_v.min((ve.at(k, j) - v1.at(k, j)) / v1.at(k, j).abs());
            let post = fields.theta_post.at(k, j);
            min_jump = min_jump.min(fields.jump.at(k, j) / post.abs());
        }
    }
    if let Some(sink) = sink {
        sink.file("pde_theta.csv", |w| {
            writeln!(w, "t,x,v_eps,v_one,theta_pre,theta_post,jump")?;
            for (k, &t) in ve.t_grid.iter().enumerate() {
                for (j, &x) in ve.x_grid.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        t,
                        x,
                        ve.at(k, j),
                        v1.at(k, j),
                        fields.theta_pre.at(k, j),
                        fields.theta_post.at(k, j),
                        fields.jump.at(k, j)
                    )?;
                }
            }
            Ok(())
        })?;
    }
    let mut rep = OracleReport::new("pde_theta_jump", &(lambda, eps, cfg.pde.clone()))?;
    rep.put("min_relative_v_gap", min_v);
    rep.put("min_relative_theta_jump", min_jump);
    rep.pass = min_v >= -1e-6 && min_jump >= -1e-6;
    Ok(Some(rep))
}

fn mpr(cfg: &Config, sink: &mut Sink, notes: &mut Vec<String>) -> Result<bool> {
    let mut pass = true;
    match pde_theta_check(cfg, Some(sink))? {
        Some(rep) => {
            notes.push(format!(
                "PDE: min (v_eps - v_1)/|v_1| = {:.3e}, min jump/|theta_post| = {:.3e}",
                rep.quantity("min_relative_v_gap"),
                rep.quantity("min_relative_theta_jump")
            ));
            pass &= rep.pass;
            sink.json("pde_theta_report.json", &rep)?;
        }
        None => notes.push("PDE part skipped: it needs constant intensity and rate".into()),
    }
    let econ = Economy::from_config(cfg);
    let mut lines = Vec::new();
    let mut unreliable = 0;
    for p in grid_points(cfg) {
        let s = PointSample::simulate(&econ, p, Some(cfg.mc.bump), &[])?;
        let kappa = s.kappa();
        let row = (|| -> Result<String> {
            let th = s.theta()?;
            let check = s.kappa_slope_check()?;
            let erp = s.equity_risk_premium()?;
            pass &= check.pass;
            Ok(format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},ok",
                p.t,
                p.x,
                th.pre.value,
                th.post.value,
                th.post.value - th.pre.value,
                kappa.value,
                check.lhs.value,
                check.rhs.value,
                check.tolerance,
                check.pass,
                erp.diffusion_part.value,
                erp.default_part.value,
                erp.total.value
            ))
        })();
        let line = match row {
            Ok(l) => l,
            Err(Error::UnreliableDerivative { .. }) => {
                unreliable += 1;
                pass = false;
                format!("{},{},,,,{},,,,,,,,unreliable_derivative", p.t, p.x, kappa.value)
            }
            Err(e) => return Err(e),
        };
        lines.push(line);
    }
    if unreliable > 0 {
        notes.push(format!("{unreliable} points failed the bump-halving check"));
    }
    sink.file("mpr.csv", |w| {
        writeln!(
            w,
            "t,x,theta_pre,theta_post,theta_jump,kappa,kappa_x,kappa_x_rhs,kappa_x_tol,kappa_x_pass,erp_diffusion,erp_default,erp_total,status"
        )?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })?;
    Ok(pass)
}

fn failed(name: &str, err: &Error) -> OracleReport {
    let mut rep = OracleReport::new(name, &"").expect("string input serializes");
    rep.note = Some(err.to_string());
    rep
}

fn skipped(name: &str, why: &str) -> OracleReport {
    let mut rep = OracleReport::new(name, &"").expect("string input serializes");
    rep.flag("applicable", false);
    rep.pass = true;
    rep.note = Some(why.into());
    rep
}

/// Runs every oracle registered for the scenario. Failures are collected,
/// never short-circuited.
pub fn validation_suite(cfg: &Config) -> Vec<OracleReport> {
    let mut reports = Vec::new();
    let mut add = |name: &str, r: Result<OracleReport>| {
        reports.push(r.unwrap_or_else(|e| failed(name, &e)));
    };
    let econ = Economy::from_config(cfg);
    let mut capped = econ.clone();
    capped.mc.n_paths = econ.mc.n_paths.min(STORED_PATH_CAP);
    let eps = cfg.recovery.epsilon;
    let u = cfg.utility;

    add("martingale_residual", martingale_oracle(&capped));
    for &t in &cfg.grids.t {
        let name = format!("survival_conditioning@t={t}");
        let rep = survival_reduction_check(&capped, t, |d| u.marginal(d + 1.0), |d| u.marginal(d + eps), &(t, cfg.mc.seed));
        add(&name, rep.map(|mut r| {
            r.oracle = name.clone();
            r
        }));
    }
    add("product_inequality", product_oracle(cfg));
    add("kappa_slope", kappa_oracle(cfg, &econ));
    add("kernel_ordering", kernel_oracle(cfg, &econ));
    add(
        "pricing_consistency",
        pricing_consistency(&econ).and_then(|c| {
            let mut rep = OracleReport::new("pricing_consistency", &cfg.mc.seed)?;
            rep.put("repriced", c.repriced.value);
            rep.put("repriced_se", c.repriced.se);
            rep.put("stock_pre", c.stock_pre.value);
            rep.put("stock_pre_se", c.stock_pre.se);
            rep.pass = c.pass;
            Ok(rep)
        }),
    );
    add("systemic_guard", systemic_oracle(cfg, &econ));
    add("exchange_inequality", two_point_exchange());
    add("exchange_inequality", negative_jump_exchange(cfg));
    add("covariance_sign", covariance_oracle(cfg, &capped));
    add(
        "pde_theta_jump",
        pde_theta_check(cfg, None).map(|r| {
            r.unwrap_or_else(|| skipped("pde_theta_jump", "needs constant intensity and rate"))
        }),
    );
    reports
}

fn martingale_oracle(econ: &Economy<f64>) -> Result<OracleReport> {
    let paths = simulate_paths(
        &econ.model,
        0.0,
        econ.model.initial_level,
        econ.horizon,
        econ.mc.n_steps,
        econ.mc.n_paths,
        econ.mc.seed,
    )?;
    let defaults = sample_default_times(&paths, &econ.intensity, econ.mc.seed)?;
    let mut rep = OracleReport::new("martingale_residual", &(econ.mc.n_paths, econ.mc.seed))?;
    let mut pass = true;
    for (k, &t) in paths.time_grid.iter().enumerate().skip(1) {
        let e = martingale_residual(&defaults, t)?;
        let ok = e.value.abs() < 3.0 * e.se || e.value == 0.0;
        pass &= ok;
        if k % 10 == 0 || k == paths.time_grid.len() - 1 {
            rep.put(&format!("residual@{t}"), e.value);
            rep.put(&format!("se@{t}"), e.se);
        }
    }
    rep.pass = pass;
    Ok(rep)
}

fn product_oracle(cfg: &Config) -> Result<OracleReport> {
    let Some(params) = cfg.model.gbm() else {
        return Ok(skipped("product_inequality", "needs a geometric Brownian dividend"));
    };
    let run = ReversalRun {
        n_paths: cfg.reversal.n_paths,
        n_steps: cfg.reversal.n_steps,
        seed: cfg.mc.seed,
    };
    let variant = cfg.reversal.variant.fixed().unwrap_or(ReversalVariant::Standard);
    let res = product_conditional_check(
        &params,
        &cfg.curves.rate,
        &cfg.curves.intensity,
        cfg.horizon,
        &cfg.grids.x,
        run,
        ReversalOptions::new(variant),
    );
    let report = match res {
        Ok(r) => r,
        Err(Error::HypothesisViolation(m)) => return Ok(skipped("product_inequality", &m)),
        Err(e) => return Err(e),
    };
    let mut rep = OracleReport::new("product_inequality", &(run, &cfg.grids.x))?;
    for p in &report.points {
        rep.put(&format!("lhs@{}", p.x), p.lhs.value);
        rep.put(&format!("rhs@{}", p.x), p.rhs.value);
    }
    rep.pass = report.pass;
    Ok(rep)
}

fn kappa_oracle(cfg: &Config, econ: &Economy<f64>) -> Result<OracleReport> {
    let mut rep = OracleReport::new("kappa_slope", &(cfg.mc.seed, cfg.mc.n_paths, cfg.mc.bump))?;
    let mut pass = true;
    let mut problems = Vec::new();
    for &t in interior(&cfg.grids.t) {
        for &x in interior(&cfg.grids.x) {
            let s = PointSample::simulate(econ, MarketPoint::pre(t, x), Some(cfg.mc.bump), &[])?;
            match s.kappa_slope_check() {
                Ok(c) => {
                    rep.put(&format!("lhs@({t},{x})"), c.lhs.value);
                    rep.put(&format!("rhs@({t},{x})"), c.rhs.value);
                    rep.put(&format!("tol@({t},{x})"), c.tolerance);
                    pass &= c.pass;
                }
                Err(e @ Error::UnreliableDerivative { .. }) => {
                    pass = false;
                    problems.push(format!("({t},{x}): {e}"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    if !problems.is_empty() {
        rep.note = Some(problems.join("; "));
    }
    rep.pass = pass;
    Ok(rep)
}

fn kernel_oracle(cfg: &Config, econ: &Economy<f64>) -> Result<OracleReport> {
    let mut rep = OracleReport::new("kernel_ordering", &(cfg.mc.seed, cfg.mc.n_paths))?;
    let mut pass = true;
    let (mut worst_xi, mut worst_kappa) = (f64::NEG_INFINITY, f64::INFINITY);
    for p in grid_points(cfg) {
        let s = PointSample::simulate(econ, p, None, &[])?;
        let xi = s.xi();
        pass &= xi.pre_below_post();
        worst_xi = worst_xi.max((xi.pre.value - xi.post.value) / combined_se(xi.pre.se, xi.post.se).max(f64::MIN_POSITIVE));
        let k = s.kappa();
        pass &= k.value >= -3.0 * k.se;
        worst_kappa = worst_kappa.min(k.value);
    }
    rep.put("max_standardized_xi_excess", worst_xi);
    rep.put("min_kappa", worst_kappa);
    // No loss at default: the two kernels coincide exactly.
    let mut unit = econ.with_epsilon(1.0);
    unit.mc.n_paths = econ.mc.n_paths.min(10_000);
    let s = PointSample::simulate(&unit, MarketPoint::pre(0.0, cfg.model.d0()), None, &[])?;
    let exact = s.xi().pre.value == s.xi().post.value && s.kappa().value == 0.0;
    rep.flag("unit_recovery_exact", exact);
    rep.pass = pass && exact;
    Ok(rep)
}

fn systemic_oracle(cfg: &Config, econ: &Economy<f64>) -> Result<OracleReport> {
    let investors = calibrated_investors(cfg, econ)?;
    let legs: Vec<_> = investors.iter().map(|c| c.leg()).collect();
    let s = PointSample::simulate(econ, MarketPoint::pre(0.0, cfg.model.d0()), None, &legs)?;
    let wealth = (0..legs.len()).map(|j| s.wealth(j)).collect::<Result<Vec<_>>>()?;
    let expect = cfg.validation.expect_degenerate_systemic;
    let mut rep = OracleReport::new("systemic_guard", &(cfg.mc.seed, expect))?;
    let bond_pre = s.bond().pre.value;
    rep.put("bond_gap", bond_pre - s.epsilon());
    rep.flag("expected_degenerate", expect);
    match systemic_measures(&s.stock(), bond_pre, s.epsilon(), &wealth, cfg.validation.systemic_floor) {
        Ok(m) => {
            rep.put("rho_s", m.rho_s);
            if let Some(w) = m.rho_w {
                rep.put("rho_w", w);
            }
            rep.flag("degenerate", false);
            rep.pass = !expect && m.rho_s.is_finite();
        }
        Err(e @ Error::DegenerateDenominator { .. }) => {
            rep.flag("degenerate", true);
            rep.note = Some(if expect { format!("expected error: {e}") } else { e.to_string() });
            rep.pass = expect;
        }
        Err(e) => return Err(e),
    }
    Ok(rep)
}

fn two_point_exchange() -> Result<OracleReport> {
    let support = [Atom { x: 1.0, p: 0.5 }, Atom { x: 2.0, p: 0.5 }];
    let mut rep = exchange_bruteforce(|_| 1.0, |x| x, |x| x, |_| 1.0, |_| 1.0, &support, &"two-point")?;
    rep.pass &= (rep.quantity("lhs") - 1.25).abs() < 1e-12;
    Ok(rep)
}

/// The exchange inequality behind the negative jump under a pro-cyclical
/// intensity and a nonincreasing rate, on the scenario's `x` grid with
/// deterministic stand-ins for the conditional functionals.
fn negative_jump_exchange(cfg: &Config) -> Result<OracleReport> {
    let mut scan = cfg.grids.x.clone();
    scan.sort_by(f64::total_cmp);
    let applicable = cfg.curves.intensity.f.is_nondecreasing_on(&scan)
        && cfg.curves.rate.f.is_nonincreasing_on(&scan)
        && cfg.curves.intensity.as_constant().is_none();
    if !applicable {
        return Ok(skipped(
            "exchange_inequality",
            "needs a nonconstant nondecreasing intensity and a nonincreasing rate",
        ));
    }
    let (t, eps, u) = (cfg.horizon, cfg.recovery.epsilon, cfg.utility);
    let fr = |x: f64| (cfg.curves.rate.eval(x) * t).exp();
    let gl = |x: f64| (-cfg.curves.intensity.eval(x) * t).exp();
    let phi = |x: f64| u.phi(eps, x).unwrap_or(f64::NAN);
    let p = 1.0 / scan.len() as f64;
    let support: Vec<Atom<f64>> = scan.iter().map(|&x| Atom { x, p }).collect();
    exchange_bruteforce(
        |x| u.marginal(x + eps),
        |x| x,
        |x| fr(x) * gl(x) * phi(x),
        fr,
        |x| gl(x) * x * phi(x),
        &support,
        &(&cfg.curves, eps),
    )
}

fn covariance_oracle(cfg: &Config, econ: &Economy<f64>) -> Result<OracleReport> {
    let zero = ScalarFn::constant(0.0);
    let sample = simulate_terminal(
        &econ.model,
        econ.model.initial_level,
        econ.horizon,
        econ.mc.n_steps,
        econ.mc.n_paths,
        econ.mc.seed,
        &zero,
        &zero,
    )?;
    let d: Vec<f64> = sample.iter().map(|s| s.terminal).collect();
    let (eps, u) = (cfg.recovery.epsilon, cfg.utility);
    covariance_sign_check(|x| x, |x| x * u.marginal(x + eps), &d, Monotonicity::Same, &(econ.mc.seed, eps))
}

#[derive(Serialize)]
struct SuiteReport<'a> {
    pass: bool,
    reports: &'a [OracleReport],
}

fn validate(cfg: &Config, sink: &mut Sink, notes: &mut Vec<String>) -> Result<bool> {
    let reports = validation_suite(cfg);
    let pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        let status = match (r.pass, r.flags.get("applicable")) {
            (true, Some(false)) => "skip",
            (true, _) => "pass",
            (false, _) => "FAIL",
        };
        let note = r.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default();
        notes.push(format!("{status:>4}  {}{note}", r.oracle));
    }
    sink.json("validation.json", &SuiteReport { pass, reports: &reports })?;
    Ok(pass)
}
