use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use fracsym::io::{read_domain, read_field, write_field};
use fracsym::ScalarField;
use serde_json::Value;

fn fracsym(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracsym")).current_dir(dir).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn make_domain(dir: &Path, shape: &str, n: &str) {
    let out = fracsym(dir, &["domain", "--shape", shape, "--n", n, "--out", "dom.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn make_field(dir: &Path, name: &str, f: impl Fn(f64, f64) -> f64) {
    let d = Arc::new(read_domain(&dir.join("dom.json")).unwrap());
    write_field(&dir.join(name), &ScalarField::from_fn(d, f)).unwrap();
}

#[test]
fn domain_template_is_a_field_of_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracsym(dir.path(), &["domain", "--shape", "annulus:0.5,1", "--n", "12", "--out", "dom.json", "--template", "f.csv"]);
    assert!(out.status.success());
    assert_eq!(json(&out)["template"], "f.csv");
    let d = Arc::new(read_domain(&dir.path().join("dom.json")).unwrap());
    let f = read_field(&dir.path().join("f.csv"), &d).unwrap();
    assert_eq!(f.len(), d.len());
    assert!(f.values().iter().all(|v| *v == 1.0));
}

#[test]
fn assemble_then_eig_prints_spectral_json() {
    let dir = tempfile::tempdir().unwrap();
    make_domain(dir.path(), "interval:0,3.141592653589793", "40");
    let out = fracsym(dir.path(), &["assemble", "--domain", "dom.json", "--sigma", "0.5", "--out", "A.bin"]);
    assert!(out.status.success());
    assert_eq!(json(&out)["n"], 40);
    let out = fracsym(dir.path(), &["eig", "--matrix", "A.bin", "--k", "4"]);
    assert!(out.status.success());
    let v = json(&out);
    let lambda: Vec<f64> = serde_json::from_value(v["lambda"].clone()).unwrap();
    assert_eq!(lambda.len(), 4);
    assert!(lambda.windows(2).all(|w| w[0] <= w[1]) && lambda[0] > 0.0);
    assert_eq!(v["psi1"].as_array().unwrap().len(), 40);
}

#[test]
fn usage_and_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    make_domain(dir.path(), "square:1", "8");

    let out = fracsym(dir.path(), &["eig", "--k", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = fracsym(dir.path(), &["eig", "--matrix", "A.bin", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    let out = fracsym(dir.path(), &["assemble", "--domain", "dom.json", "--sigma", "2.5", "--out", "A.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0,2)"));

    let out = fracsym(dir.path(), &["assemble", "--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn field_for_another_domain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    make_domain(dir.path(), "interval:0,1", "16");
    make_field(dir.path(), "f.csv", |x, _| x);
    make_domain(dir.path(), "interval:0,1", "17");
    let out = fracsym(dir.path(), &["rearrange", "--domain", "dom.json", "--field", "f.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash mismatch"));
}

#[test]
fn rearrange_emits_profile_and_spherical_field() {
    let dir = tempfile::tempdir().unwrap();
    make_domain(dir.path(), "lshape:1", "10");
    make_field(dir.path(), "f.csv", |x, y| (x + 2.0 * y).max(0.0));
    let out = fracsym(
        dir.path(),
        &["rearrange", "--domain", "dom.json", "--field", "f.csv", "--emit", "p.csv", "--spherical", "fs.csv", "--compare", "f.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["comparison"]["verdict"], "EQUAL");
    let profile = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(profile.starts_with("s,value\n"));
    let ball = Arc::new(read_domain(&dir.path().join("fs.domain.json")).unwrap());
    let fs = read_field(&dir.path().join("fs.csv"), &ball).unwrap();
    let f = read_field(&dir.path().join("f.csv"), &Arc::new(read_domain(&dir.path().join("dom.json")).unwrap())).unwrap();
    assert!((fs.norm_l1() - f.norm_l1()).abs() <= 1e-12 * f.norm_l1());
}

#[test]
fn elliptic_report_lists_profiles() {
    let dir = tempfile::tempdir().unwrap();
    make_domain(dir.path(), "union-intervals:0,1,2,3", "48");
    make_field(dir.path(), "f.csv", |x, _| (1.0 - (x - 0.5).abs()).max(0.0));
    let out = fracsym(
        dir.path(),
        &["elliptic", "--domain", "dom.json", "--sigma", "0.8", "--B", "linear:1.0", "--f", "f.csv", "--report", "out.json", "--out", "v.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(matches!(v["verdict"].as_str(), Some("LESS" | "EQUAL")));
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
    assert_eq!(saved, v);
    for key in ["omega", "ball"] {
        assert!(Path::new(v["profiles"][key].as_str().unwrap()).is_relative());
        assert!(dir.path().join(v["profiles"][key].as_str().unwrap()).exists());
    }
}

#[test]
fn parabolic_writes_trajectory_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    make_domain(dir.path(), "ellipse:1,0.5", "16");
    make_field(dir.path(), "u0.csv", |x, y| 1.0 - x * x - 4.0 * y * y);
    let out = fracsym(
        dir.path(),
        &["parabolic", "--domain", "dom.json", "--sigma", "0.5", "--u0", "u0.csv", "--T", "0.1", "--h", "0.02", "--compare-symmetrized", "--out-dir", "traj"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["steps"], 5);
    assert_eq!(v["comparison_holds"], true);
    let index: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("traj/index.json")).unwrap()).unwrap();
    assert_eq!(index["states"].as_array().unwrap().len(), 6);
}

#[test]
fn faber_krahn_and_text_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracsym(dir.path(), &["faber-krahn", "--shapes", "square:1", "--sigmas", "1", "--n", "12", "--out", "fk.json"]);
    assert!(out.status.success());
    let v = json(&out);
    assert!(v[0]["ratio"].as_f64().unwrap() > 1.0);
    assert!(dir.path().join("fk.json").exists());

    std::fs::write(dir.path().join("shapes.json"), r#"[{"shape": "disk", "radius": 1.0}]"#).unwrap();
    let out = fracsym(dir.path(), &["faber-krahn", "--shapes", "shapes.json", "--sigmas", "0.5", "--n", "12", "--format", "text"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("{\"cells\"") && text.contains("\"shape\":\"disk\""));
}

#[test]
fn run_writes_reports_and_signals_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("ok.toml"),
        "suite = \"rearrangement-properties\"\ntrials = 6\nn1d = 32\nn2d = 8\noutput_dir = \"ok\"\n",
    )
    .unwrap();
    let out = fracsym(dir.path(), &["run", "--config", "ok.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["passed"], true);
    for f in ["report.json", "cases.csv", "report.md", "summary.json", "failures.json"] {
        assert!(dir.path().join("ok").join(f).exists(), "{f}");
    }

    std::fs::write(dir.path().join("bad.toml"), "suite = \"itd-convergence\"\nt_end = 1e6\nn1d = 16\nn2d = 4\n").unwrap();
    let out = fracsym(dir.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json(&out)["passed"], false);

    std::fs::write(dir.path().join("typo.toml"), "suite = \"faber-krahn\"\nsigmaz = [1.0]\n").unwrap();
    assert_eq!(fracsym(dir.path(), &["run", "--config", "typo.toml"]).status.code(), Some(2));
}

#[test]
fn extension_dtn_check_exports_field() {
    let dir = tempfile::tempdir().unwrap();
    make_domain(dir.path(), "interval:-1,1", "32");
    let out = fracsym(
        dir.path(),
        &["extension", "--domain", "dom.json", "--sigma", "0.6", "--mode", "dtn-check", "--layers", "32", "--export", "w"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["rel_l2_error"].as_f64().unwrap() < 0.05);
    let header: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("w.json")).unwrap()).unwrap();
    let bytes = std::fs::metadata(dir.path().join("w.bin")).unwrap().len();
    let count = header["nx"].as_u64().unwrap() * header["ny"].as_u64().unwrap() * (header["M"].as_u64().unwrap() + 1);
    assert_eq!(bytes, 8 * count);
}
