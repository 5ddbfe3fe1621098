use std::process::Command;

use rbirgnm::experiments::{build_run, Overrides, RunConfig};
use rbirgnm::report::RunReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rbirgnm"))
}

#[test]
fn run_two_exact_field_values() {
    let spec = build_run(2, &Overrides::default()).unwrap().exact_spec();
    assert_eq!(spec.eval(18.0 / 30.0, 15.0 / 30.0), 1.0);
    assert_eq!(spec.eval(6.0 / 30.0, 15.0 / 30.0), 5.0);
}

#[test]
fn run_one_exact_field_far_from_bumps() {
    let spec = build_run(1, &Overrides::default()).unwrap().exact_spec();
    assert!((spec.eval(1.0, 0.0) - 3.0).abs() < 1e-6);
}

#[test]
fn custom_run_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("custom.toml");
    std::fs::write(
        &path,
        r#"
n = 10
algorithm = "fom"

[[exact.terms]]
kind = "constant"
value = 2.0

[[exact.terms]]
kind = "hat"
center = [0.5, 0.5]
support = 0.4
height = 1.0
"#,
    )
    .unwrap();
    let cfg = RunConfig::load(Some(&path), &Overrides::default()).unwrap();
    assert_eq!(cfg.run, None);
    assert_eq!(cfg.exact_spec().eval(0.5, 0.5), 3.0);
    assert!(RunConfig::load(None, &Overrides { run: Some(9), ..Default::default() }).is_err());
}

#[test]
fn list_names_every_algorithm() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fom", "qr", "qr-vr"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(name)), "{text}");
    }
}

#[test]
fn run_writes_report_and_compare_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (alg, out) in [("qr-vr", &a), ("fom", &b)] {
        let status = bin()
            .args(["run", "--run", "1", "--n", "10", "--algorithm", alg, "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        for f in ["history.csv", "summary.json", "details.json", "q_reconstructed.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
    }
    let pw = dir.path().join("pointwise.csv");
    let out = bin().arg("compare").arg(&a).arg(&b).arg("--pointwise").arg(&pw).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("relative L2"));
    assert!(pw.exists());
    assert_eq!(RunReport::parse(&a).unwrap().summary.algorithm, "qr-vr");
}

#[test]
fn bad_input_fails_cleanly() {
    let out = bin().args(["run", "--run", "7"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("error"));
    let out = bin().args(["run", "--run", "1", "--n", "8", "--algorithm", "newton"]).output().unwrap();
    assert!(!out.status.success());
}
