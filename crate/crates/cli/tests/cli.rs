use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_griffith"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn energy_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let field = configs().join("affine_1d.json");
    let o = run(&["energy", "--eps", "0.05", "--field", field.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps,p,h,strategy,total,n_balls,n_directions,wall_ms");
    assert_eq!(lines.len(), 2);
    let total: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert!(total > 1.0 && total < 1.4, "{total}");
}

#[test]
fn energy_with_ball_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let field = configs().join("affine_1d.json");
    let o = run(&[
        "energy", "--eps", "0.05", "--p", "2", "--strategy", "dyadic:2", "--field",
        field.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "dyadic:2");
    assert!(row[5].parse::<usize>().unwrap() >= 1);
}

#[test]
fn energy_refuses_coarse_grid_and_missing_strategy() {
    let field = configs().join("affine_1d.json");
    let f = field.to_str().unwrap();
    let o = run(&["energy", "--eps", "0.05", "--h", "0.05", "--field", f]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not resolve"));
    let o = run(&["energy", "--eps", "0.05", "--p", "2", "--field", f]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn density_table_covers_both_conventions() {
    let o = run(&["density-table", "--dim", "2", "--p", "1,2", "--random", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "convention,n,p,matrix,phi_p,beta_p,beta_p_closed");
    // 2 conventions × 2 exponents × 3 matrices
    assert_eq!(lines.len(), 1 + 12);
    assert!(text.contains("weighted-slice") && text.contains("calibrated"));
}

#[test]
fn p1_explore_reports_each_ball_and_direction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p1.csv");
    let field = configs().join("jump_2d.json");
    let o = run(&[
        "p1-explore", "--field", field.to_str().unwrap(), "--strategy", "dyadic:1", "--sphere-order", "8",
        "--h", "0.02", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out), "ball,xi_index,mu_xi,mu_hat_p,i_u1");
    assert!(std::fs::read_to_string(&out).unwrap().lines().count() > 8);
}

#[test]
fn minimize_writes_trace_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = run(&[
        "minimize", "--load", "0.5", "--eps", "0.05", "--max-iter", "40", "--seed", "3", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out), "iter,eps,energy,grad_norm,step");
    let field = dir.path().join("final_field.csv");
    assert_eq!(header(&field), "cell,x0,u0");
    assert!(std::fs::read_to_string(&field).unwrap().lines().count() > 100);
}

#[test]
fn gamma_study_writes_the_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let spec = configs().join("sweep_1d.json");
    let o = run(&["gamma-study", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out), "eps,h,n_cells,n_directions,value");
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("relative error"));
}

#[test]
fn audit_exit_code_reflects_the_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audit.csv");
    let spec = configs().join("audit.json");
    let o = run(&["audit", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out), "field_index,inequality,params,lhs,rhs,margin,tolerance,pass");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"lower_eps": [1e-4, 1e-3]}"#).unwrap();
    let o = run(&["audit", "--spec", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
