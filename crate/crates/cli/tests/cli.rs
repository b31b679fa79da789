use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdlab")).args(args).output().expect("spawn cdlab")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn curvature_csv_of_bergman_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "b.json", r#"{"type":"bergman","lambda":2}"#);
    let out = dir.path().join("k.csv");
    let o = cdlab(&["curvature", "--spec", s(&spec), "--grid", "r=0:0.8:0.1,theta=0:360:30", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("re_w,im_w,k"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(&first[..2], &[0.0, 0.0]);
    assert!((first[2] + 2.0).abs() < 1e-5);
    assert_eq!(text.lines().count(), 1 + 9 * 12);
    assert!(dir.path().join("k.csv.manifest.json").exists());
}

#[test]
fn chern_and_theta_columns() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "a.json", r#"{"type":"ncfb","n":2,"lambda":[2,3],"truncation":256}"#);
    let o = cdlab(&["chern", "--spec", s(&spec), "--grid", "r=0:0.4:0.2,theta=0:360:120"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("re_w,im_w,re_c1,im_c1,re_c2,im_c2"));
    let o = cdlab(&["theta", "--spec", s(&spec), "--grid", "r=0.5:0.5:1,theta=0:0:1"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("re_w,im_w,ratio,re_form,im_form"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((row[2] - 0.75).abs() < 1e-12);
}

#[test]
fn exit_code_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = write(d, "a.json", r#"{"type":"ncfb","n":2,"lambda":[2,3],"truncation":256}"#);
    let b = write(d, "b.json", r#"{"type":"ncfb","n":2,"lambda":[2.1,3],"truncation":256}"#);
    let au = write(d, "au.json", r#"{"type":"ncfb","lambda":[2,3],"truncation":256,"conjugation":"unitary","seed":5}"#);
    let ar = write(d, "ar.json", r#"{"type":"ncfb","lambda":[2,3],"truncation":256,"conjugation":"rank_one","seed":5}"#);
    let ar2 = write(
        d,
        "ar2.json",
        r#"{"type":"ncfb","lambda":[2,3],"truncation":256,"conjugation":"rank_one","seed":6,"conjugation_window":4}"#,
    );
    let g = "r=0:0.6:0.3,theta=0:360:90";
    // equivalent
    assert_eq!(cdlab(&["compare-unitary", "--spec", s(&a), "--spec", s(&a), "--grid", g]).status.code(), Some(0));
    assert_eq!(cdlab(&["compare-unitary", "--spec", s(&a), "--spec", s(&au), "--grid", g]).status.code(), Some(0));
    assert_eq!(cdlab(&["compare-uk", "--spec", s(&a), "--spec", s(&ar), "--grid", g]).status.code(), Some(0));
    // not equivalent
    let o = cdlab(&["compare-unitary", "--spec", s(&a), "--spec", s(&b), "--grid", g]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "not_equivalent");
    assert_eq!(cdlab(&["compare-uk", "--spec", s(&a), "--spec", s(&b), "--grid", g]).status.code(), Some(2));
    // undecided: no witness can be read off windows of different sizes
    let o = cdlab(&["compare-uk", "--spec", s(&ar), "--spec", s(&ar2), "--grid", g]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "undecided");
    // between the bands: residual 0.1 at the origin against tol 0.02
    let o = cdlab(&["compare-unitary", "--spec", s(&a), "--spec", s(&b), "--grid", "r=0:0:1,theta=0:0:1", "--tol", "0.02"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = write(d, "bad.json", r#"{"type":"ncfb","n":2,"lambda":[2,4.5]}"#);
    let o = cdlab(&["build", "--spec", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["field"], "lambda");
    assert_eq!(e["citation"], "If λ₂−λ₁<2, then");

    let o = cdlab(&["build", "--spec", s(&d.join("missing.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["field"], "spec");

    let junk = write(d, "junk.json", "{not json");
    assert_eq!(stderr_json(&cdlab(&["build", "--spec", s(&junk)]))["field"], "spec");

    let ok = write(d, "ok.json", r#"{"type":"bergman","lambda":2,"truncation":64}"#);
    for args in [
        vec!["compare-unitary", "--spec", s(&ok), "--spec", s(&ok), "--tol", "0"],
        vec!["compare-unitary", "--spec", s(&ok), "--spec", s(&ok), "--tol", "-1e-3"],
        vec!["curvature", "--spec", s(&ok), "--tol", "1e-6"],
    ] {
        let o = cdlab(&args);
        assert_eq!(o.status.code(), Some(1));
        assert_eq!(stderr_json(&o)["field"], "tol");
    }
    let o = cdlab(&["curvature", "--spec", s(&ok), "--fd-step", "0.5"]);
    assert_eq!(stderr_json(&o)["field"], "fd-step");
    let o = cdlab(&["curvature", "--spec", s(&ok), "--grid", "r=0:0.95:0.05,theta=0:360:90"]);
    assert_eq!(stderr_json(&o)["field"], "grid");
    let o = cdlab(&["orthogonalize"]);
    assert_eq!(stderr_json(&o)["field"], "seed");
    let seeded = write(d, "seeded.json", r#"{"type":"bergman","lambda":2,"conjugation":"rank_one"}"#);
    assert_eq!(stderr_json(&cdlab(&["build", "--spec", s(&seeded)]))["field"], "seed");
    let o = cdlab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cdlab(&[
        "curvature",
        "--spec",
        s(&ok),
        "--grid",
        "r=0:0.2:0.1,theta=0:360:90",
        "--out",
        s(&d.join("no/such/dir/k.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["field"], "out");
}

#[test]
fn property_h_json() {
    let o = cdlab(&["property-h", "--lambda1", "2", "--lambda2", "3", "--kmax", "10000"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["slope"].as_f64().unwrap() - 0.5).abs() < 0.05);
    assert_eq!(v["verdict"], "diverges");
}

#[test]
fn built_spec_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "a.json",
        r#"{"type":"ncfb","lambda":[2,2.9,3.7],"truncation":32,"couplings":[{"from":1,"to":3,"series":[0,[1,0.25]]}],"conjugation":"rank_one","seed":9}"#,
    );
    let o = cdlab(&["build", "--spec", s(&spec)]);
    let first: Value = serde_json::from_slice(&o.stdout).unwrap();
    let again = write(dir.path(), "again.json", &first["spec"].to_string());
    let o = cdlab(&["build", "--spec", s(&again)]);
    let second: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(first["operator_sha256"], second["operator_sha256"]);
    assert_eq!(first["spec"], second["spec"]);
}

#[test]
fn replay_detects_drift() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "b.json", r#"{"type":"bergman","lambda":3.5,"truncation":128}"#);
    let out = dir.path().join("k.csv");
    let o = cdlab(&["curvature", "--spec", s(&spec), "--grid", "r=0:0.6:0.3,theta=0:360:90", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let manifest = dir.path().join("k.csv.manifest.json");
    let before = std::fs::read(&manifest).unwrap();
    let o = cdlab(&["replay", "--manifest", s(&manifest)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["identical"], true);
    assert_eq!(std::fs::read(&manifest).unwrap(), before);
    // a changed spec is refused
    std::fs::write(&spec, r#"{"type":"bergman","lambda":3,"truncation":128}"#).unwrap();
    let o = cdlab(&["replay", "--manifest", s(&manifest)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["field"], "spec");
}
