use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexopf::case_io::{read_csv, CaseFile};
use flexopf::toy;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flexopf"))
}

fn write_case(dir: &Path, name: &str, case: &CaseFile) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, case.to_toml_string()).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn solve_toy_succeeds_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let case = write_case(dir.path(), "toy.toml", &toy::two_bus_gen_case());
    let csv = dir.path().join("rows.csv");
    let boxes = dir.path().join("boxes.csv");
    let out = bin()
        .arg("solve")
        .arg(&case)
        .args(["--periods", "2", "--relaxation", "both", "--single-core", "--format", "csv"])
        .arg("--out")
        .arg(&csv)
        .arg("--dump-boxes")
        .arg(&boxes)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_csv(&csv).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.dual_bound.unwrap() <= r.primal_bound.unwrap() + 1e-6);
    }
    assert!(std::fs::read_to_string(&boxes).unwrap().lines().count() > 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("gap_pct"));
}

#[test]
fn relaxation_selector_limits_rows() {
    let dir = tempfile::tempdir().unwrap();
    let case = write_case(dir.path(), "toy.toml", &toy::two_bus_curt_case());
    let md = dir.path().join("rows.md");
    let out = bin()
        .arg("solve")
        .arg(&case)
        .args(["--relaxation", "lr", "--format", "md", "--seed", "3"])
        .arg("--out")
        .arg(&md)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&md).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("toy2_curt")).count(), 1);
}

#[test]
fn infeasible_case_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut case = toy::two_bus_gen_case();
    for dev in case.devices.iter_mut().filter(|d| d.id == "G") {
        dev.p_max = vec![0.1; 2];
    }
    let path = write_case(dir.path(), "tight.toml", &case);
    let out = bin().arg("solve").arg(&path).arg("--relaxation").arg("nfr").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin().args(["solve", "/nonexistent/case.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let case = write_case(dir.path(), "toy.toml", &toy::two_bus_gen_case());
    let bad_flag = bin().arg("solve").arg(&case).args(["--relaxation", "sdp"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(1));
    let bad_tol = bin().arg("solve").arg(&case).args(["--tol", "-1"]).output().unwrap();
    assert_eq!(bad_tol.status.code(), Some(1));
    let no_periods = bin().arg("solve").arg(&case).args(["--periods", "0"]).output().unwrap();
    assert_eq!(no_periods.status.code(), Some(1), "{}", stderr(&no_periods));

    let cfg = dir.path().join("bench.toml");
    std::fs::write(&cfg, "cases = []\n").unwrap();
    let empty = bin().arg("bench").arg(&cfg).output().unwrap();
    assert_eq!(empty.status.code(), Some(1));
    std::fs::write(&cfg, "cases = [\"missing.toml\"]\nperiods = [2]\n").unwrap();
    let unreadable = bin().arg("bench").arg(&cfg).output().unwrap();
    assert_eq!(unreadable.status.code(), Some(1));
}

#[test]
fn bench_runs_a_config() {
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), "a.toml", &toy::two_bus_gen_case());
    write_case(dir.path(), "b.toml", &toy::three_bus_gen_case());
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        "cases = [\"a.toml\", \"b.toml\"]\nperiods = [1, 2]\nsingle_core = true\n\n[output]\ncsv = \"out/rows.csv\"\nboxes_dir = \"out/boxes\"\n",
    )
    .unwrap();
    let out = bin().arg("bench").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("out/rows.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(std::fs::read_dir(dir.path().join("out/boxes")).unwrap().count(), 4);
}

#[test]
fn gen_cases_matches_shipped_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("gen-cases").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases");
    let mut n = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        let fresh = std::fs::read_to_string(&path).unwrap();
        let kept = std::fs::read_to_string(shipped.join(path.file_name().unwrap())).unwrap();
        assert_eq!(fresh, kept, "{} differs from the regenerated file", path.display());
        n += 1;
    }
    assert_eq!(n, 7);
}
