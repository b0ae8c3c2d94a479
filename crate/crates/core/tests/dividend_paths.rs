use coxeq::curve::ScalarFn;
use coxeq::dividend::{simulate_paths, simulate_terminal, DividendModel, GbmParams, Scheme};
use coxeq::stats::{combined_se, mean_se};
use statrs::distribution::{ContinuousCDF, LogNormal};

fn case_study() -> GbmParams<f64> {
    GbmParams::new(-0.2, 0.3, 1.0).unwrap()
}

fn terminal(model: &DividendModel<f64>, n_steps: usize, n: usize, seed: u64) -> Vec<f64> {
    let zero = ScalarFn::constant(0.0);
    simulate_terminal(model, model.initial_level, 1.0, n_steps, n, seed, &zero, &zero)
        .unwrap()
        .into_iter()
        .map(|s| s.terminal)
        .collect()
}

#[test]
fn terminal_mean_matches_lognormal_mean() {
    let d = terminal(&case_study().model(), 10, 100_000, 1);
    let e = mean_se(&d).unwrap();
    assert!((e.value - (-0.2f64).exp()).abs() < 3.0 * e.se, "{e:?}");
}

#[test]
fn exact_scheme_passes_kolmogorov_smirnov() {
    let p = case_study();
    let mut d = terminal(&p.model(), 7, 100_000, 2);
    d.sort_by(f64::total_cmp);
    let law = LogNormal::new(p.log_drift(), p.sigma).unwrap();
    let n = d.len() as f64;
    let ks = d
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = law.cdf(x);
            (c - i as f64 / n).abs().max((((i + 1) as f64) / n - c).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample statistic
    assert!(ks < 1.628 / n.sqrt(), "KS distance {ks}");
}

#[test]
fn log_euler_is_stable_under_step_halving() {
    let model = DividendModel {
        drift: ScalarFn::Linear { intercept: 0.05, slope: -0.1 },
        volatility: ScalarFn::Saturating { scale: 0.4, rate: 1.0 },
        initial_level: 1.0,
    };
    assert!(model.as_gbm().is_none());
    let coarse = mean_se(&terminal(&model, 20, 100_000, 3)).unwrap();
    let fine = mean_se(&terminal(&model, 40, 100_000, 4)).unwrap();
    let gap = (coarse.value - fine.value).abs();
    assert!(gap < 3.0 * combined_se(coarse.se, fine.se), "{coarse:?} vs {fine:?}");
}

#[test]
fn general_model_paths_stay_positive_and_record_scheme() {
    let model = DividendModel {
        drift: ScalarFn::Linear { intercept: -1.0, slope: 0.0 },
        volatility: ScalarFn::ExpDecay { scale: 1.5, rate: 0.1 },
        initial_level: 0.2,
    };
    let paths = simulate_paths(&model, 0.0, 0.2, 2.0, 50, 2_000, 5).unwrap();
    assert_eq!(paths.scheme, Scheme::LogEuler);
    assert!(paths.values.iter().all(|&v| v > 0.0));
    assert_eq!(paths.time_grid[0], 0.0);
    assert!(paths.time_grid.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn paths_do_not_depend_on_worker_count() {
    let model = case_study().model();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_paths(&model, 0.0, 1.0, 1.0, 25, 3_000, 11).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.values, b.values);
}
