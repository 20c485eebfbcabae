use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ricci-monotone"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("RM_THREADS").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FLAT_TORUS: &str = "id = flat\ngeometry = torus_grid(16, 16, 2pi, 2pi)\nT = 0.5\ndt = 1e-2\nstride = 5\nk = 2\n";
const BUMPY_SPHERE: &str =
    "id = bumpy\ngeometry = icosphere(2)\nperturbation = 0.2 * linear_x\nT = 0.3\ndt = 2e-3\nstride = 10\nk = 2\n";

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

#[test]
fn flat_torus_simulates_and_verifies() {
    let dir = TempDir::new().unwrap();
    let scn = write(dir.path(), "flat.scn", FLAT_TORUS);
    let trace = dir.path().join("flat.csv");
    let out = run(&["simulate", p(&scn), "--out", p(&trace)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("chi=0"));
    let csv = fs::read_to_string(&trace).unwrap();
    assert!(column(&csv, "r").iter().all(|r| r.abs() < 1e-12));

    let out = run(&["verify", p(&trace)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let report = fs::read_to_string(dir.path().join("flat.report.csv")).unwrap();
    assert!(report.starts_with("quantity,direction,tol,max_violation,verdict,t_end\n"));
    assert!(!report.lines().skip(1).any(|l| l.contains(",nondecreasing,") && l.starts_with("Q2plus") && l.contains("fail")));
}

#[test]
fn injected_dip_fails_verification() {
    let dir = TempDir::new().unwrap();
    let scn = write(dir.path(), "bumpy.scn", BUMPY_SPHERE);
    let trace = dir.path().join("bumpy.csv");
    assert_eq!(code(&run(&["simulate", p(&scn), "--out", p(&trace)])), 0);
    assert_eq!(code(&run(&["verify", p(&trace), "--quantities", "Q2plus"])), 0);

    let csv = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    let header_at = lines.iter().position(|l| !l.starts_with('#')).unwrap();
    let lam = lines[header_at].split(',').position(|h| h == "lam_1").unwrap();
    let row = header_at + 3;
    let mut cells: Vec<String> = lines[row].split(',').map(String::from).collect();
    let prev: f64 = lines[row - 1].split(',').nth(lam).unwrap().parse().unwrap();
    cells[lam] = (0.9 * prev).to_string();
    lines[row] = cells.join(",");
    let dipped = write(dir.path(), "dipped.csv", &(lines.join("\n") + "\n"));

    let report = dir.path().join("dipped_report.csv");
    // the coarse mesh makes the default 10h² allowance larger than the dip
    let out = run(&["verify", p(&dipped), "--quantities", "Q2plus", "--tol", "1e-3", "--out", p(&report)]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    let body = fs::read_to_string(&report).unwrap();
    let line = body.lines().find(|l| l.starts_with("Q2plus_1,")).unwrap();
    let violation: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
    // the weight grows a little over one sample, so the dip reads slightly under 10%
    assert!((violation - 0.1).abs() < 0.01, "{line}");
    assert!(line.contains(",fail,"));
}

#[test]
fn malformed_inputs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad_trace = write(dir.path(), "bad.csv", "# scenario=x\nt,r\n0,1\n");
    let out = run(&["verify", p(&bad_trace)]);
    assert_eq!(code(&out), 2, "{}", text(&out));

    let bad_scn = write(dir.path(), "bad.scn", "id = x\ngeometry = icosphere(2)\nT = 1\ndt = 1e-3\ncolour = red\n");
    let out = run(&["simulate", p(&bad_scn)]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("line 5"), "{}", text(&out));

    assert_eq!(code(&run(&["verify", p(&bad_trace), "--quantities", "Q3plus"])), 2);
    assert_eq!(code(&run(&["simulate", p(&dir.path().join("missing.scn"))])), 2);
}

#[test]
fn numerical_abort_exits_with_three_and_keeps_partial_trace() {
    let dir = TempDir::new().unwrap();
    let scn = write(
        dir.path(),
        "wild.scn",
        "id = wild\ngeometry = icosphere(3)\nperturbation = 2 * linear_x\nT = 1\ndt = 2e-2\nstride = 1\nk = 1\n",
    );
    let trace = dir.path().join("wild.csv");
    let out = run(&["simulate", p(&scn), "--out", p(&trace)]);
    assert_eq!(code(&out), 3, "{}", text(&out));
    let partial = fs::read_to_string(&trace).unwrap();
    assert!(partial.lines().any(|l| l.starts_with("# truncated=") && !l.ends_with("none")));
}

#[test]
fn product_simulation_is_tagged() {
    let dir = TempDir::new().unwrap();
    let scn = write(
        dir.path(),
        "prod.scn",
        "id = prod\ngeometry = product_spheres(1, 2, 1, 1)\nT = 0.2\ndt = 1e-3\nstride = 10\nk = 3\n",
    );
    let trace = dir.path().join("prod.csv");
    let out = run(&["simulate", p(&scn), "--out", p(&trace)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let csv = fs::read_to_string(&trace).unwrap();
    assert!(csv.contains("# geometry=product_spheres(1,2)"));
    let out = run(&["verify", p(&trace)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert_eq!(code(&run(&["rate-check", p(&scn)])), 2);
}

#[test]
fn round_sphere_rate_check_skips_degenerate_rows() {
    let dir = TempDir::new().unwrap();
    let scn = write(
        dir.path(),
        "round.scn",
        "id = round\ngeometry = icosphere(2)\nT = 0.05\ndt = 1e-3\nstride = 10\nk = 4\n",
    );
    let out = run(&["rate-check", p(&scn)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let output = text(&out);
    assert!(output.contains("warning: all"));
    assert!(output.lines().filter(|l| l.contains("skipped:")).count() >= 1);
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let scn = write(dir.path(), "bumpy.scn", BUMPY_SPHERE);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(code(&run(&["--threads", "1", "simulate", p(&scn), "--out", p(&a)])), 0);
    let out = bin()
        .args(["simulate", p(&scn), "--out", p(&b)])
        .env("RM_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(code(&run(&["--threads", "0", "simulate", p(&scn)])), 2);
}
