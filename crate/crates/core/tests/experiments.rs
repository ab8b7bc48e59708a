use std::path::PathBuf;

use rfsense::experiments::{
    compare_estimators, run_scenario, simulate_fmcw, simulate_imaging, simulate_positioning, Method, ScenarioConfig,
    MANIFEST_NAME,
};
use rfsense::estimators::Axis;
use rfsense::Error;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&config_path(name)).unwrap()
}

/// Small uplink scenario with a coarse grid, for fast Monte Carlo.
fn small_ul() -> ScenarioConfig {
    let mut c = load("desk-ul.toml");
    c.grid.as_mut().unwrap().n_subcarriers = 256;
    let s = c.search.as_mut().unwrap();
    s.azimuth = Axis::new(40.0, 140.0, 4.0).unwrap();
    s.elevation = Axis::new(60.0, 120.0, 4.0).unwrap();
    s.delay = Some(Axis::new(30e-9, 105e-9, 5e-9).unwrap());
    if let rfsense::experiments::UeRegion::Spherical {
        azimuth_deg,
        elevation_deg,
        ..
    } = &mut c.channel.as_mut().unwrap().ue_region
    {
        *azimuth_deg = [40.0, 140.0];
        *elevation_deg = [60.0, 120.0];
    }
    c
}

#[test]
fn bundled_configs_round_trip_and_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(config_path("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = ScenarioConfig::load(&path).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let again = ScenarioConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
            assert_eq!(again, c, "{}", path.display());
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn noiseless_on_grid_recovery_is_exact() {
    for name in ["desk-ul.toml", "desk-dl.toml"] {
        let mut c = small_ul();
        if name == "desk-dl.toml" {
            let dl = load(name);
            c.kind = dl.kind;
            c.signal = dl.signal;
            let s = c.search.as_mut().unwrap();
            s.azimuth = Axis::new(220.0, 320.0, 4.0).unwrap();
        }
        c.trials = 1;
        let ch = c.channel.as_mut().unwrap();
        ch.noise_variance = Some(0.0);
        ch.on_grid = true;
        let out = simulate_positioning(&c).unwrap();
        for run in &out.points[0].runs {
            assert_eq!(run.errors(), vec![0.0], "{name} {}", run.label);
        }
    }
}

#[test]
fn noiseless_comparison_columns_are_zero() {
    let mut c = small_ul();
    c.trials = 3;
    let ch = c.channel.as_mut().unwrap();
    ch.noise_variance = Some(0.0);
    ch.on_grid = true;
    let dir = tempfile::tempdir().unwrap();
    compare_estimators(&c, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("snr_db,trial,music_err_m,sage_err_m"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[2], f[3]), ("0", "0"), "{row}");
    }
}

#[test]
fn comparison_requires_both_estimators() {
    let mut c = small_ul();
    c.estimators.as_mut().unwrap().methods = vec![Method::Music];
    let dir = tempfile::tempdir().unwrap();
    match compare_estimators(&c, dir.path()) {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "estimators.methods"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn same_seed_gives_identical_manifest() {
    let mut c = small_ul();
    c.trials = 20;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_scenario(&c, a.path()).unwrap();
    let mb = run_scenario(&c, b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(
        std::fs::read(a.path().join(MANIFEST_NAME)).unwrap(),
        std::fs::read(b.path().join(MANIFEST_NAME)).unwrap()
    );
    c.seed += 1;
    let mc = run_scenario(&c, tempfile::tempdir().unwrap().path()).unwrap();
    assert_ne!(ma.files, mc.files);
}

#[test]
fn mean_error_does_not_grow_with_snr() {
    let mut c = small_ul();
    c.trials = 500;
    c.estimators.as_mut().unwrap().methods = vec![Method::Music];
    c.sweep = Some(rfsense::experiments::SweepSection {
        snr_db: vec![-10.0, 0.0, 10.0, 20.0],
    });
    let out = simulate_positioning(&c).unwrap();
    let means: Vec<f64> = out.points.iter().map(|p| p.runs[0].mean_error()).collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}

#[test]
fn validation_names_the_field() {
    let cases = [
        ("trials = 0", "trials"),
        ("[grid]\nn_subcarriers = 0", "grid.n_subcarriers"),
        ("[channel]\nsnr_db = inf", "channel.snr_db"),
    ];
    let base = std::fs::read_to_string(config_path("desk-ul.toml")).unwrap();
    for (patch, field) in cases {
        let text = match patch.split_once('\n') {
            None => base.replace("trials = 200", patch),
            Some((table, line)) => {
                let key = line.split(" = ").next().unwrap();
                let start = base.find(&format!("{table}\n")).unwrap();
                let rel = base[start..].find(&format!("\n{key} = ")).unwrap() + start + 1;
                let end = base[rel..].find('\n').unwrap() + rel;
                format!("{}{line}{}", &base[..rel], &base[end..])
            }
        };
        let c = ScenarioConfig::from_toml_str(&text).unwrap();
        match c.validate() {
            Err(Error::Validation { field: f, .. }) => assert_eq!(f, field),
            other => panic!("{patch}: {other:?}"),
        }
    }
    let unknown = format!("{base}\nbogus = 1\n");
    assert!(matches!(ScenarioConfig::from_toml_str(&unknown), Err(Error::Parse(_))));
}

#[test]
fn sections_must_match_kind() {
    let mut c = load("desk-fmcw.toml");
    c.grid = load("desk-ul.toml").grid;
    match c.validate() {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "grid"),
        other => panic!("{other:?}"),
    }
    let mut c = load("desk-ul.toml");
    c.search = None;
    match c.validate() {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "search"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unwritable_output_is_io_error() {
    let file = tempfile::NamedTempFile::new().unwrap();
    let mut c = small_ul();
    c.trials = 1;
    let r = run_scenario(&c, &file.path().join("sub"));
    assert!(matches!(r, Err(Error::Io(_))), "{r:?}");
}

#[test]
fn imaging_scene_finds_reflectors_and_aliases() {
    let out = simulate_imaging(&load("desk-imaging.toml")).unwrap();
    let spacing = out.predicted_mirror_spacing_mps.unwrap();
    let measured = out.measured_mirror_spacing_mps.unwrap();
    assert!((measured - spacing).abs() <= out.image.velocity_step(), "{measured} vs {spacing}");
    let top = out.detections.peaks[0];
    assert!(!top.is_mirror);
    assert!((rfsense::sar_imaging::down_range(top.delay_s) - 20.0).abs() <= 0.6);
    assert!(out.detections.peaks.iter().any(|p| p.is_mirror));
}

#[test]
fn fmcw_frames_track_every_target() {
    let c = load("desk-fmcw.toml");
    let out = simulate_fmcw(&c).unwrap();
    assert_eq!(out.frames.len(), 8);
    let long: Vec<_> = out.tracks.iter().filter(|t| t.points.len() == 8).collect();
    assert_eq!(long.len(), 3, "{:?}", out.tracks);
    let sg = out.spectrogram.unwrap();
    let ridge = sg.ridge();
    let spread = ridge.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ridge.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread > 2.0, "{ridge:?}");
}

#[test]
fn every_kind_writes_a_manifest() {
    for name in ["desk-imaging.toml", "desk-fmcw.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let m = run_scenario(&load(name), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        for f in &m.files {
            let bytes = std::fs::read(dir.path().join(&f.path)).unwrap();
            assert_eq!(bytes.len(), f.bytes);
            assert!(text.contains(&format!("{} {} {}", f.path, f.sha256, f.bytes)));
        }
    }
}
