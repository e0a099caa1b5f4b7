use std::fs;
use std::path::PathBuf;

use rffsb_core::config::*;
use rffsb_core::CoreError;

fn write(dir: &tempfile::TempDir, body: &str) -> PathBuf {
    let p = dir.path().join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn load(body: &str) -> rffsb_core::Result<RunConfig> {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, body);
    RunConfig::load(Some(&p), &Overrides::default())
}

#[test]
fn presets_differ_only_in_scale() {
    let desk = RunConfig::load(None, &Overrides::default()).unwrap();
    assert_eq!(desk.scale, Scale::Desk);
    assert_eq!((desk.scenario.train_frames, desk.scenario.test_frames), (500, 50));
    assert_eq!(desk.scenario.n_legit, 10);
    assert_eq!(desk.scenario.resolved_targets().len(), 3);
    let paper = RunConfig::load(
        None,
        &Overrides {
            scale: Some(Scale::Paper),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!((paper.scenario.train_frames, paper.scenario.test_frames), (5000, 500));
    assert_eq!(paper.scenario.resolved_targets(), desk.scenario.resolved_targets());
    assert_eq!(desk.sweep.ebn0_db, vec![-10.0, -5.0, 0.0, 5.0, 10.0, 20.0, 30.0]);
    assert_eq!(desk.sweep.k_factors.len(), 11);
}

#[test]
fn file_overlays_preset_and_cli_overlays_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        r#"
scale = "paper"
master_seed = 5
train_frames = 40
out_dir = "runs/a"

[attack]
epochs = 3

[profiles.indoor_b]
k_factor = 2.0

[profiles.lab]
tap_delays_ns = [0.0, 25.0]
tap_gains_db = [0.0, -6.0]
k_factor = inf
max_doppler_hz = 0.0
ebn0_db = 15.0
bit_rate = 250e3

[sweep]
ebn0_db = [0.0, 10.0]
k_profiles = ["lab"]
"#,
    );
    let r = RunConfig::load(Some(&p), &Overrides::default()).unwrap();
    assert_eq!(r.scale, Scale::Paper);
    assert_eq!(r.scenario.master_seed, 5);
    assert_eq!(r.scenario.train_frames, 40);
    assert_eq!(r.scenario.test_frames, 500);
    assert_eq!(r.scenario.attack.epochs, 3);
    assert_eq!(r.scenario.attack.batch_size, 8);
    assert_eq!(r.scenario.profiles["indoor_b"].k_factor, 2.0);
    assert_eq!(r.scenario.profiles["indoor_b"].tap_delays_ns.len(), 6);
    assert_eq!(r.scenario.profiles["lab"].name, "lab");
    assert!(r.scenario.profiles["lab"].k_factor.is_infinite());
    assert_eq!(r.sweep.ebn0_db, vec![0.0, 10.0]);
    assert_eq!(r.sweep.ebn0_profiles, vec!["indoor_a".to_string()]);
    assert_eq!(r.out_dir, dir.path().join("runs/a"));

    let r = RunConfig::load(
        Some(&p),
        &Overrides {
            scale: Some(Scale::Desk),
            seed: Some(u64::MAX),
            out: Some(PathBuf::from("/tmp/x")),
        },
    )
    .unwrap();
    assert_eq!(r.scale, Scale::Desk);
    assert_eq!(r.scenario.master_seed, u64::MAX);
    assert_eq!(r.scenario.test_frames, 50);
    assert_eq!(r.out_dir, PathBuf::from("/tmp/x"));
}

#[test]
fn unknown_keys_are_rejected() {
    for body in [
        "trian_frames = 3\n",
        "[attack]\nepoch = 3\n",
        "[sweep]\naxis = \"k\"\n",
        "[profiles.indoor_a]\nk = 3.0\n",
        "scale = \"huge\"\n",
    ] {
        match load(body) {
            Err(CoreError::Config(_)) => {}
            other => panic!("{body:?} gave {:?}", other.map(|_| ())),
        }
    }
}

#[test]
fn invalid_values_are_config_errors() {
    for body in [
        "n_legit = 0\n",
        "train_profile = \"mars\"\n",
        "[sweep]\nk_profiles = [\"mars\"]\n",
        "[loss]\nkl = -1.0\n",
        "[profiles.bad]\ntap_delays_ns = [5.0]\ntap_gains_db = [0.0]\nk_factor = 1.0\nmax_doppler_hz = 0.0\nebn0_db = 1.0\nbit_rate = 1.0\n",
    ] {
        assert!(matches!(load(body), Err(CoreError::Config(_))), "{body:?}");
    }
}

#[test]
fn missing_file_names_the_path() {
    let p = PathBuf::from("/nonexistent/dir/run.toml");
    match RunConfig::load(Some(&p), &Overrides::default()) {
        Err(CoreError::Config(m)) => assert!(m.contains("/nonexistent/dir/run.toml"), "{m}"),
        other => panic!("{:?}", other.map(|_| ())),
    }
}

#[test]
fn output_directory_falls_back_to_environment() {
    // the only test in this binary that touches the environment
    std::env::set_var(OUT_ENV, "/tmp/from-env");
    let r = RunConfig::load(None, &Overrides::default()).unwrap();
    assert_eq!(r.out_dir, PathBuf::from("/tmp/from-env"));
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "out_dir = \"here\"\n");
    assert_eq!(RunConfig::load(Some(&p), &Overrides::default()).unwrap().out_dir, dir.path().join("here"));
    std::env::remove_var(OUT_ENV);
}

#[test]
fn resolved_echo_materializes_defaults() {
    let r = RunConfig::load(None, &Overrides::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write_resolved(dir.path()).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(v["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["master_seed"], 20240501);
    assert_eq!(v["scale"], "desk");
    assert_eq!(v["scenario"]["loss"]["recon"], 2.0);
    assert_eq!(v["scenario"]["profiles"]["awgn"]["k_factor"], "inf");
    assert_eq!(v["scenario"]["profiles"]["indoor_a"]["tap_gains_db"][5], -32.0);
    assert_eq!(v["sweep"]["ebn0_floor_db"], -20.0);
}
