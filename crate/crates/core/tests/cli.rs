use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command as Process;

use coxeq::app::{run, Command, Overrides};
use coxeq::ScenarioConfig64;

fn small() -> ScenarioConfig64 {
    let mut c = ScenarioConfig64::case_study();
    c.mc.n_paths = 3_000;
    c.mc.n_steps = 20;
    c.grids.t = vec![0.0, 0.5];
    c.grids.x = vec![0.8, 1.2];
    c.recovery.sweep = vec![0.25, 0.75];
    c
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn write_config(dir: &Path, cfg: &ScenarioConfig64) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small();
    for cmd in [Command::CaseStudy, Command::JumpWealth, Command::Scan] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run(cmd, &cfg, a.path()).unwrap();
        run(cmd, &cfg, b.path()).unwrap();
        let (ca, cb) = (csvs(a.path()), csvs(b.path()));
        assert!(!ca.is_empty());
        assert_eq!(ca, cb, "{}", cmd.name());
    }
}

#[test]
fn manifest_lists_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(Command::JumpWealth, &small(), dir.path()).unwrap();
    let on_disk: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for f in &on_disk {
        assert!(out.manifest.outputs.contains(f), "{f} missing from manifest");
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], small().mc.seed);
    assert_eq!(m["config_hash"], small().content_hash().unwrap());
}

#[test]
fn figure_cache_is_reused_and_listed() {
    let mut cfg = small();
    cfg.reversal.n_paths = 2_000;
    cfg.reversal.n_steps = 40;
    cfg.reversal.oracle_paths = 20_000;
    cfg.reversal.x_grid = coxeq::config::log_spaced(0.5, 3.0, 6);
    let dir = tempfile::tempdir().unwrap();
    let first = run(Command::FigurePhig, &cfg, dir.path()).unwrap();
    let before = std::fs::read(dir.path().join("phig.csv")).unwrap();
    assert!(first.manifest.outputs.iter().any(|o| o.starts_with("cache")));
    run(Command::FigurePhig, &cfg, dir.path()).unwrap();
    assert_eq!(before, std::fs::read(dir.path().join("phig.csv")).unwrap());
    let header = String::from_utf8(before).unwrap();
    assert!(header.starts_with("x,phi,g,phi_times_g,se\n"));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_coxeq");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nhorizon = \"one\"\n").unwrap();
    let out = Process::new(exe).args(["case-study", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"), "{out:?}");

    let cfg = write_config(dir.path(), &small());
    let out_dir = dir.path().join("run");
    let out = Process::new(exe)
        .args(["case-study", "--paths", "2000", "--seed", "3", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(out_dir.join("jumps.csv").exists());

    let out = Process::new(exe)
        .args(["scan", "--paths", "1", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_change_the_config_hash() {
    let mut a = small();
    let mut b = small();
    Overrides { seed: Some(1), ..Default::default() }.apply(&mut a).unwrap();
    Overrides { seed: Some(2), ..Default::default() }.apply(&mut b).unwrap();
    assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["case_study", "procyclical", "constant", "stress_eps"] {
        let c = ScenarioConfig64::load(&root.join(format!("{name}.toml"))).unwrap();
        let again = ScenarioConfig64::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again, "{name}");
    }
    let c = ScenarioConfig64::load(&root.join("case_study.toml")).unwrap();
    assert_eq!(c.reversal.x_grid, ScenarioConfig64::case_study().reversal.x_grid);
}
