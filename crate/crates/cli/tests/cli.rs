use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfsense"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn validate_accepts_bundled_config() {
    let st = bin().args(["--quiet", "validate", "--config"]).arg(config("desk-ul.toml")).status().unwrap();
    assert_eq!(st.code(), Some(0));
}

#[test]
fn validate_rejects_bad_config_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("desk-ul.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("trials = 200", "trials = 0")).unwrap();
    let out = bin().args(["validate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials"));

    std::fs::write(&bad, format!("{text}\nnot_a_key = 3\n")).unwrap();
    let st = bin().args(["validate", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn missing_config_file_exits_1() {
    let st = bin().args(["validate", "--config", "/nonexistent/x.toml"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn run_writes_manifest_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fmcw");
    let st = bin()
        .args(["--quiet", "run", "--seed", "5", "--config"])
        .arg(config("desk-fmcw.toml"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("# seed 5"), "{manifest}");
    assert!(out.join("tracks.csv").exists());
}

#[test]
fn render_csv_to_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let pgm = dir.path().join("g.pgm");
    std::fs::write(&csv, "r,c,v\n0,0,0\n0,1,1\n1,0,2\n1,1,3\n").unwrap();
    let st = bin().args(["render", "--input"]).arg(&csv).arg("--out").arg(&pgm).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let bytes = std::fs::read(&pgm).unwrap();
    assert_eq!(&bytes[..], b"P5\n# rows r (2), cols c (2)\n2 2\n255\n\x00\x55\xaa\xff");
}

#[test]
fn render_rejects_incomplete_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    std::fs::write(&csv, "r,c,v\n0,0,0\n0,1,1\n1,0,2\n").unwrap();
    let st = bin()
        .args(["render", "--input"])
        .arg(&csv)
        .arg("--out")
        .arg(dir.path().join("g.pgm"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}
