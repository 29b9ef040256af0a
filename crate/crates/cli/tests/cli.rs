use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use symm_spectra::linalg::{c, CMat};
use symm_spectra::oracle::{DiracOracle, DiracTau, ExampleSystem};
use symm_spectra::spectral::{Atom, SpectralMeasure};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_symm-spectra"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("{e}: {s}"))
}

fn cx(v: &Value) -> (f64, f64) {
    (v[0].as_f64().unwrap(), v[1].as_f64().unwrap())
}

fn samples_csv(grid: &[f64], f: impl Fn(f64) -> Vec<(f64, f64)>) -> String {
    let k = f(grid[0]).len();
    let mut s = String::from("t");
    for i in 0..k {
        write!(s, ",f_{i}_re,f_{i}_im").unwrap();
    }
    s.push('\n');
    for &t in grid {
        s.push_str(&t.to_string());
        for (re, im) in f(t) {
            write!(s, ",{re},{im}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn bump(t: f64, lo: f64, hi: f64) -> f64 {
    let x = (2.0 * t - lo - hi) / (hi - lo);
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

#[test]
fn validate_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.json", r#"{"system": "paper-example"}"#);
    let r = run(&["validate", "--config", ok.to_str().unwrap(), "--json"], &[]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    let doc = json(&r.stdout);
    assert_eq!(doc["passed"], true);
    assert!(doc["checks"].as_array().unwrap().len() >= 5);

    let bad_b = write(
        dir.path(),
        "b.json",
        r#"{"system": {"interval": [0, 1], "p": 1, "q": 0, "breaks": [0, 0.5],
            "B": [[0, [[0], [[0, 1]]]], [0, 0]], "Delta": [[1, 0], [0, 1]]},
            "frame_a": {"U": [[0, 1]]}, "frame_b": {"Xb": [[1, 0], [0, 1]]}}"#,
    );
    let r = run(&["validate", "--config", bad_b.to_str().unwrap()], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("FAIL coefficients") && r.stdout.contains("t = 0.5"), "{}", r.stdout);

    let conj = write(
        dir.path(),
        "conj.json",
        r#"{"system": "dirac-oracle", "tau": {"polynomial": {"C0": [[[0]], [[1]]], "C1": [[[-1]]], "conjugate": true}}}"#,
    );
    let r = run(&["validate", "--config", conj.to_str().unwrap()], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("FAIL tau"), "{}", r.stdout);
}

#[test]
fn config_errors_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"system\": \"dirac-oracle\",\n \"job\": {\"window\": [0, \"a\"]}}");
    let r = run(&["mfunction", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("job.window"), "{}", r.stderr);
    let broken = write(dir.path(), "broken.json", "{\n\"system\": }");
    let r = run(&["mfunction", "--config", broken.to_str().unwrap()], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("line 2"), "{}", r.stderr);
    assert_eq!(run(&["mfunction"], &[]).code, 3);
    assert_eq!(run(&["nonsense"], &[]).code, 3);
    let ok = write(dir.path(), "ok.json", r#"{"system": "dirac-oracle"}"#);
    assert_eq!(run(&["spectral", "--config", ok.to_str().unwrap(), "--window", "0"], &[]).code, 3);
    let unknown = write(dir.path(), "unknown.json", r#"{"system": "nope"}"#);
    assert_eq!(run(&["mfunction", "--config", unknown.to_str().unwrap(), "--lambda-grid", "0,1"], &[]).code, 1);
}

#[test]
fn mfunction_values_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.json", r#"{"system": "dirac-oracle", "tau": {"C0": [[1]], "C1": [[0]]}}"#);
    let r = run(&["mfunction", "--config", d.to_str().unwrap(), "--lambda-grid", "0,1"], &[]);
    assert_eq!(r.code, 0);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines[0], "lambda_re,lambda_im,m_00_re,m_00_im,status");
    let f: Vec<&str> = lines[1].split(',').collect();
    assert!(f[2].parse::<f64>().unwrap().abs() < 1e-9);
    assert!((f[3].parse::<f64>().unwrap() - 0.761594155955765).abs() < 1e-8);

    let r = run(&["mfunction", "--config", d.to_str().unwrap(), "--lambda-grid", ""], &[]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stdout.lines().count(), 1);

    // a pole is reported in its row without failing the command
    let r = run(&["mfunction", "--config", d.to_str().unwrap(), "--lambda-grid", &format!("{},0;0,1", PI / 2.0)], &[]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.lines().nth(1).unwrap().contains("spectrum"));
    assert!(r.stdout.lines().nth(2).unwrap().ends_with(",ok"));

    let e = write(dir.path(), "e.json", r#"{"system": "paper-example", "job": {"lambdas": [[0, 2]]}}"#);
    let a = run(&["mfunction", "--config", e.to_str().unwrap(), "--json"], &[]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    let doc = json(&a.stdout);
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(doc["tolerances"]["tol_ode"], 1e-10);
    let m = &doc["rows"][0]["m"];
    let want = [[(0.0, 1.0), (0.0, SQRT_2 * (-2.0f64).exp())], [(0.0, 0.0), (0.0, 0.5)]];
    for i in 0..2 {
        for k in 0..2 {
            let (re, im) = cx(&m[i][k]);
            assert!((re - want[i][k].0).abs() < 1e-6 && (im - want[i][k].1).abs() < 1e-6, "{i}{k}: {re} {im}");
        }
    }
    let b = run(&["mfunction", "--config", e.to_str().unwrap(), "--json"], &[]);
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["mfunction", "--config", e.to_str().unwrap(), "--json"], &[("SYMM_SPECTRA_TOL_ID", "1e-9")]);
    assert_eq!(json(&c.stdout)["tolerances"]["tol_id"], 1e-9);
}

#[test]
fn spectral_dirac_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.json", r#"{"system": "dirac-oracle", "job": {"stieltjes": {"initial_points": 65, "scan_points": 1024}}}"#);
    let out = dir.path().join("sigma.json");
    let r = run(&["spectral", "--config", d.to_str().unwrap(), "--window", "0,10", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let doc = json(&std::fs::read_to_string(&out).unwrap());
    let atoms = doc["measure"]["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 3);
    for (k, a) in atoms.iter().enumerate() {
        assert!((a["s"].as_f64().unwrap() - (k as f64 + 0.5) * PI).abs() < 1e-6);
        assert!((cx(&a["mass"][0][0]).0 - 1.0).abs() < 1e-4);
    }
    let csv = std::fs::read_to_string(dir.path().join("sigma.density.csv")).unwrap();
    assert!(csv.starts_with("s,d_00_re,d_00_im\n"));

    let r = run(&["spectral", "--config", d.to_str().unwrap(), "--window", "0.1,1.0"], &[]);
    assert_eq!(r.code, 0);
    let doc = json(&r.stdout);
    assert!(doc["measure"]["atoms"].as_array().unwrap().is_empty());
    for v in doc["measure"]["density"]["values"].as_array().unwrap() {
        assert!(cx(&v[0][0]).0.abs() < 1e-6);
    }
}

#[test]
fn spectral_example_density() {
    let dir = tempfile::tempdir().unwrap();
    let e = write(
        dir.path(),
        "e.json",
        r#"{"system": "paper-example", "tolerances": {"tol_ode": 1e-8},
            "job": {"stieltjes": {"initial_points": 33, "refine_tol": 0.01}}}"#,
    );
    let r = run(&["spectral", "--config", e.to_str().unwrap(), "--window", "-3.14159265358979,3.14159265358979", "--eps", "0.2,0.1,0.05"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let doc = json(&r.stdout);
    assert_eq!(doc["options"]["eps_schedule"][2], 0.05);
    let ex = ExampleSystem::default();
    let d = &doc["measure"]["density"];
    let mut worst = 0.0f64;
    for (s, v) in d["s"].as_array().unwrap().iter().zip(d["values"].as_array().unwrap()) {
        let want = ex.sigma_density(s.as_f64().unwrap());
        for i in 0..2 {
            for k in 0..2 {
                let (re, im) = cx(&v[i][k]);
                worst = worst.max((c(re, im) - want[(i, k)]).norm());
            }
        }
    }
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn transform_round_trip_on_dirac() {
    let dir = tempfile::tempdir().unwrap();
    let o = DiracOracle::new(DiracTau::Canonical);
    let atoms = o.eigenvalues_in(-200.0, 200.0).into_iter().map(|s| Atom { s, mass: CMat::identity(1, 1) }).collect();
    let sigma = SpectralMeasure::from_atoms(1, (-200.0, 200.0), atoms);
    write(dir.path(), "sigma.json", &sigma.to_json().unwrap());
    let grid: Vec<f64> = (0..2001).map(|k| k as f64 / 2000.0).collect();
    let f = |t: f64| {
        let b = bump(t, 0.02, 0.98);
        vec![(b, 0.3 * b * t), (b * (3.0 * t).sin(), 0.0)]
    };
    write(dir.path(), "f.csv", &samples_csv(&grid, f));
    let fwd = write(dir.path(), "fwd.json", r#"{"system": "dirac-oracle", "job": {"input": "f.csv", "measure": "sigma.json"}}"#);
    let fhat = dir.path().join("fhat.csv");
    let r = run(&["transform", "--config", fwd.to_str().unwrap(), "--out", fhat.to_str().unwrap()], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("parseval"));
    let r = run(&["transform", "--config", fwd.to_str().unwrap(), "--json"], &[]);
    let doc = json(&r.stdout);
    let p = &doc["footer"]["parseval"];
    assert!(p["defect"].as_f64().unwrap().abs() <= 1e-3 * p["norm_sq"].as_f64().unwrap());

    let inv = write(
        dir.path(),
        "inv.json",
        r#"{"system": "dirac-oracle", "job": {"direction": "inverse", "input": "fhat.csv", "measure": "sigma.json",
            "t_grid": {"from": 0, "to": 1, "n": 201}}}"#,
    );
    let r = run(&["transform", "--config", inv.to_str().unwrap(), "--json"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let doc = json(&r.stdout);
    let (mut err, mut norm) = (0.0, 0.0);
    for (t, v) in doc["grid"].as_array().unwrap().iter().zip(doc["values"].as_array().unwrap()) {
        let want = f(t.as_f64().unwrap());
        for (i, w) in want.iter().enumerate() {
            let (re, im) = cx(&v[i]);
            err += (re - w.0).powi(2) + (im - w.1).powi(2);
            norm += w.0 * w.0 + w.1 * w.1;
        }
    }
    assert!((err / norm).sqrt() < 1e-4, "{}", (err / norm).sqrt());

    // zero in, zero out
    write(dir.path(), "zero.csv", &samples_csv(&grid, |_| vec![(0.0, 0.0), (0.0, 0.0)]));
    let z = write(dir.path(), "z.json", r#"{"system": "dirac-oracle", "job": {"input": "zero.csv", "measure": "sigma.json"}}"#);
    let doc = json(&run(&["transform", "--config", z.to_str().unwrap(), "--json"], &[]).stdout);
    assert_eq!(doc["footer"]["parseval"]["defect"], 0.0);
    assert!(doc["values"].as_array().unwrap().iter().all(|v| cx(&v[0]) == (0.0, 0.0)));

    // samples past the end point are rejected
    write(dir.path(), "long.csv", &samples_csv(&[0.0, 0.5, 1.5], |_| vec![(1.0, 0.0), (0.0, 0.0)]));
    let l = write(dir.path(), "l.json", r#"{"system": "dirac-oracle", "job": {"input": "long.csv", "measure": "sigma.json"}}"#);
    let r = run(&["transform", "--config", l.to_str().unwrap()], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("outside"));
}

#[test]
fn transform_matches_example_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let grid: Vec<f64> = (0..3001).map(|k| 6.0 * k as f64 / 3000.0).collect();
    write(
        dir.path(),
        "f.csv",
        &samples_csv(&grid, |t| {
            let b = bump(t, 0.2, 5.8);
            vec![(b, 0.0), (0.5 * b * t.cos(), 0.0), (0.0, b)]
        }),
    );
    let cfg = write(
        dir.path(),
        "e.json",
        r#"{"system": "paper-example", "job": {"input": "f.csv", "s_grid": {"from": -3, "to": 3, "n": 13}}}"#,
    );
    let r = run(&["transform", "--config", cfg.to_str().unwrap(), "--json"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let doc = json(&r.stdout);
    assert!(doc["footer"]["closed_form_difference"].as_f64().unwrap() < 1e-6, "{}", doc["footer"]);
}

#[test]
fn resolvent_on_dirac() {
    let dir = tempfile::tempdir().unwrap();
    let grid: Vec<f64> = (0..2001).map(|k| k as f64 / 2000.0).collect();
    write(dir.path(), "f.csv", &samples_csv(&grid, |t| vec![(t.cos(), 0.5), (0.0, t * t)]));
    let cfg = write(dir.path(), "r.json", r#"{"system": "dirac-oracle", "job": {"input": "f.csv", "lambda": [0.4, 0.7]}}"#);
    let r = run(&["resolvent", "--config", cfg.to_str().unwrap(), "--json"], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let doc = json(&r.stdout);
    let res = &doc["residuals"];
    assert!(res["ode_max"].as_f64().unwrap() <= 1e-6 * res["f_norm"].as_f64().unwrap());
    assert!(res["gamma1_a"].as_f64().unwrap() <= 1e-6 && res["tau"].as_f64().unwrap() <= 1e-6);
    let r = run(&["resolvent", "--config", cfg.to_str().unwrap()], &[]);
    assert!(r.stdout.starts_with("t,y_0_re,y_0_im,y_1_re,y_1_im\n"));
}
