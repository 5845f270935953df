//! End-to-end tests driving the compiled binary, exactly as a shell user
//! would.

use std::path::Path;
use std::process::{Command, Output};

fn variety(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_variety"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout_str(out),
        stderr_str(out)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).expect("readable output")
}

#[test]
fn rejection_csv_header_and_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let r = variety(&[
            "sample", "--system", "circle", "--sampler", "rejection", "--n", "3000", "--sigma",
            "0.1", "--box", "-1.5,1.5", "--seed", "1", "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&r, 0);
    }
    let text = read(&a);
    assert_eq!(text.lines().next().unwrap(), "x,y,log_density,residual_norm");
    assert!(text.lines().count() > 100, "expected a few hundred acceptances");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "same seed, same bytes");
}

#[test]
fn hmc_rows_carry_chain_and_projection_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("k.csv");
    let sum_path = dir.path().join("k.json");
    let r = variety(&[
        "sample", "--system", "kuramoto:N=5", "--sampler", "hmc", "--chains", "8", "--n", "25",
        "--warmup", "50", "--sigma", "0.05", "--project", "--seed", "7", "--out",
        out_path.to_str().unwrap(), "--summary", sum_path.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    let text = read(&out_path);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "c1,c2,c3,c4,s1,s2,s3,s4,chain_id,log_density,residual_norm,status,residual"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8 * 25, "chains times kept draws");
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 13);
        let chain: u32 = fields[8].parse().unwrap();
        assert!(chain < 8);
        assert!(fields[11] == "converged" || fields[11] == "stalled");
    }

    // The summary must agree with what landed in the file.
    let summary: serde_json::Value = serde_json::from_str(&read(&sum_path)).unwrap();
    assert_eq!(summary["chains"].as_array().unwrap().len(), 8);
    let conv = summary["projection"]["converged"].as_u64().unwrap();
    let stall = summary["projection"]["stalled"].as_u64().unwrap();
    assert_eq!(conv + stall, 200);
    let file_converged = rows.iter().filter(|r| r.contains("converged")).count() as u64;
    assert_eq!(conv, file_converged);
}

#[test]
fn project_known_point_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, "x,y\n1,1\n").unwrap();
    let first = dir.path().join("first.csv");
    let r = variety(&[
        "project", "--system", "circle", "--in", input.to_str().unwrap(), "--out",
        first.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    let text = read(&first);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,y,status,residual");
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (x, y): (f64, f64) = (fields[0].parse().unwrap(), fields[1].parse().unwrap());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((x - s).abs() < 1e-8 && (y - s).abs() < 1e-8, "got ({x}, {y})");
    assert_eq!(fields[2], "converged");

    // Feeding the projected file back should move nothing.
    let second = dir.path().join("second.csv");
    let r = variety(&[
        "project", "--system", "circle", "--in", first.to_str().unwrap(), "--out",
        second.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    let second_text = read(&second);
    let again: Vec<&str> = second_text.lines().nth(1).unwrap().split(',').collect();
    let (x2, y2): (f64, f64) = (again[0].parse().unwrap(), again[1].parse().unwrap());
    assert!((x2 - x).abs() < 1e-8 && (y2 - y).abs() < 1e-8);
}

#[test]
fn project_empty_inputs() {
    let dir = tempfile::tempdir().unwrap();

    let headered = dir.path().join("header_only.csv");
    std::fs::write(&headered, "x,y\n").unwrap();
    let out1 = dir.path().join("out1.csv");
    let r = variety(&[
        "project", "--system", "circle", "--in", headered.to_str().unwrap(), "--out",
        out1.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    assert_eq!(read(&out1), "x,y,status,residual\n");

    let blank = dir.path().join("blank.csv");
    std::fs::write(&blank, "").unwrap();
    let out2 = dir.path().join("out2.csv");
    let r = variety(&[
        "project", "--system", "circle", "--in", blank.to_str().unwrap(), "--out",
        out2.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
}

#[test]
fn malformed_csv_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, "x,y\n0.1,0.2\n0.3,oops\n").unwrap();
    let r = variety(&["project", "--system", "circle", "--in", input.to_str().unwrap()]);
    assert_exit(&r, 2);
    let err = stderr_str(&r);
    assert!(err.contains("line 3"), "stderr was: {err}");

    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "x,y\n0.1,0.2\n0.3\n").unwrap();
    let r = variety(&["project", "--system", "circle", "--in", ragged.to_str().unwrap()]);
    assert_exit(&r, 2);
    assert!(stderr_str(&r).contains("line 3"));
}

#[test]
fn eval_appends_loglik_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pts.csv");
    std::fs::write(
        &input,
        "p00,p01,p10,p11\n0.25,0.25,0.25,0.25\n0.5,0.5,0,0\n",
    )
    .unwrap();
    let out = dir.path().join("out.csv");
    let r = variety(&[
        "eval", "--system", "independence2x2", "--in", input.to_str().unwrap(), "--objective",
        "loglik:counts=8,8,1,3", "--out", out.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    let text = read(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "p00,p01,p10,p11,objective");
    let interior: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((interior - 20.0 * 0.25f64.ln()).abs() < 1e-12);
    // Zero cell with positive count: the sentinel must print as `-inf`.
    assert!(lines.next().unwrap().ends_with(",-inf"));

    let r = variety(&[
        "eval", "--system", "independence2x2", "--in", input.to_str().unwrap(), "--objective",
        "entropy",
    ]);
    assert_exit(&r, 2);
    assert!(stderr_str(&r).contains("unknown objective"));

    // Empty input: header-only output.
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "p00,p01,p10,p11\n").unwrap();
    let out2 = dir.path().join("out2.csv");
    let r = variety(&[
        "eval", "--system", "independence2x2", "--in", empty.to_str().unwrap(), "--objective",
        "loglik:counts=8,8,1,3", "--out", out2.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    assert_eq!(read(&out2), "p00,p01,p10,p11,objective\n");
}

#[test]
fn spec_file_error_names_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.vspec");
    std::fs::write(&spec, "vars x, y\npoly x^2 + y@2 - 1\n").unwrap();
    let r = variety(&[
        "sample", "--system", spec.to_str().unwrap(), "--sampler", "rejection", "--n", "10",
        "--sigma", "0.1", "--box", "-1,1",
    ]);
    assert_exit(&r, 2);
    let err = stderr_str(&r);
    assert!(err.contains("line 2, column 13"), "stderr was: {err}");
}

#[test]
fn spec_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("parab.vspec");
    std::fs::write(&spec, "# strip around a parabola\nvars u, v\npoly v - u^2\nsigma 0.08\nbox -1,1\n")
        .unwrap();
    let r = variety(&[
        "sample", "--system", spec.to_str().unwrap(), "--sampler", "rejection", "--n", "400",
        "--seed", "5",
    ]);
    assert_exit(&r, 0);
    let text = stdout_str(&r);
    assert_eq!(text.lines().next().unwrap(), "u,v,log_density,residual_norm");
    assert!(text.lines().count() > 10);

    // The file's box is one pair; it must broadcast to both axes, and an
    // explicit flag must win over it.
    let r2 = variety(&[
        "sample", "--system", spec.to_str().unwrap(), "--sampler", "rejection", "--n", "400",
        "--seed", "5", "--box", "0,0.5,0,0.25",
    ]);
    assert_exit(&r2, 0);
    for line in stdout_str(&r2).lines().skip(1) {
        let mut it = line.split(',');
        let u: f64 = it.next().unwrap().parse().unwrap();
        let v: f64 = it.next().unwrap().parse().unwrap();
        assert!((0.0..=0.5).contains(&u) && (0.0..=0.25).contains(&v));
    }
}

#[test]
fn rejection_without_box_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("noband.vspec");
    std::fs::write(&spec, "vars x, y\npoly x^2 + y^2 - 1\n").unwrap();
    let r = variety(&[
        "sample", "--system", spec.to_str().unwrap(), "--sampler", "rejection", "--n", "10",
        "--sigma", "0.1",
    ]);
    assert_exit(&r, 2);
    assert!(stderr_str(&r).contains("box"));
}

#[test]
fn band_flag_is_rejection_only() {
    let r = variety(&[
        "sample", "--system", "circle", "--sampler", "hmc", "--n", "10", "--warmup", "10",
        "--sigma", "0.1", "--band", "0.1",
    ]);
    assert_exit(&r, 2);
}

#[test]
fn all_chains_failing_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // Truncation window disjoint from the init box: every chain fails to
    // find a finite starting density.
    let spec = dir.path().join("far.vspec");
    std::fs::write(&spec, "vars x\npoly x^2 - 1\nbox 0,1\ntruncate 5,6\n").unwrap();
    let r = variety(&[
        "sample", "--system", spec.to_str().unwrap(), "--sampler", "hmc", "--n", "10",
        "--warmup", "10", "--sigma", "0.1", "--seed", "1",
    ]);
    assert_exit(&r, 3);
}

#[test]
fn json_output_mirrors_csv() {
    let r = variety(&[
        "sample", "--system", "circle", "--sampler", "rejection", "--n", "500", "--sigma", "0.1",
        "--box", "-1.5,1.5", "--seed", "2", "--format", "json",
    ]);
    assert_exit(&r, 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout_str(&r)).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), doc["summary"]["accepted"].as_u64().unwrap() as usize);
    for row in rows {
        assert!(row["x"].is_f64() && row["y"].is_f64());
        assert!(row["log_density"].as_f64().unwrap() <= 0.0);
    }
    assert!(doc["summary"]["system_hash"].as_str().unwrap().len() == 16);
}

#[test]
fn unknown_system_and_bad_params_exit_two() {
    let r = variety(&[
        "sample", "--system", "klein_bottle", "--sampler", "rejection", "--n", "10", "--sigma",
        "0.1", "--box", "-1,1",
    ]);
    assert_exit(&r, 2);

    let r = variety(&[
        "sample", "--system", "kuramoto:N=banana", "--sampler", "hmc", "--n", "10", "--sigma",
        "0.05",
    ]);
    assert_exit(&r, 2);
}
