use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlslab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlslab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn psi_d1_alpha1() {
    let t = tempfile::tempdir().unwrap();
    let o = nlslab(t.path(), &["--out", "o", "psi", "--d", "1", "--alpha", "1"]);
    assert!(o.status.success());
    let v = json(&t.path().join("o/psi.json"));
    let psi = v["value"].as_f64().unwrap();
    assert!((psi - (4.0f64 / 3.0).ln()).abs() < 1e-8, "{psi}");
    let m = json(&t.path().join("o/manifest.json"));
    assert_eq!(m["subcommand"], "psi");
    assert_eq!(m["outputs"][0], "psi.json");
}

#[test]
fn soliton_d1_energy() {
    let t = tempfile::tempdir().unwrap();
    let o = nlslab(t.path(), &["--out", "o", "soliton", "--d", "1", "--p", "3", "--m", "4", "--h", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&t.path().join("o/soliton.json"));
    let e = v["energy"].as_f64().unwrap();
    assert!((e + 2.0 / 3.0).abs() < 0.02, "{e}");
    assert!(t.path().join("o/soliton.nlsf").exists());
    assert_eq!(fs::read_dir(t.path().join("cache/soliton")).unwrap().count(), 1);
}

#[test]
fn unknown_config_key_exits_2() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.toml"), "alpha = 1.0\nalhpa = 2.0\n").unwrap();
    let o = nlslab(t.path(), &["--config", "c.toml", "psi"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alhpa"));
}

#[test]
fn config_file_fills_missing_flags() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.toml"), "alpha = 7.0\nd = 1\n").unwrap();
    let o = nlslab(t.path(), &["--config", "c.toml", "--out", "o", "psi", "--alpha", "1"]);
    assert!(o.status.success());
    assert_eq!(json(&t.path().join("o/psi.json"))["alpha"].as_f64(), Some(1.0));
}

#[test]
fn missing_required_key_exits_2() {
    let t = tempfile::tempdir().unwrap();
    let o = nlslab(t.path(), &["psi", "--d", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_table_exits_4_with_hint() {
    let t = tempfile::tempdir().unwrap();
    let o = nlslab(t.path(), &["variational", "--h", "0.5", "--E0", "1", "--m0", "4"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nlslab emin-table"));
}

#[test]
fn table_then_variational_and_sample_rerun_identical() {
    let t = tempfile::tempdir().unwrap();
    let table = ["emin-table", "--h", "0.5", "--m-max", "4", "--points", "20", "--n", "64"];
    assert!(nlslab(t.path(), &[&["--out", "t"][..], &table].concat()).status.success());
    let var = [
        "variational", "--h", "0.5", "--m-max", "4", "--points", "20", "--n", "64", "--E0", "0", "--m0", "4",
    ];
    let o = nlslab(t.path(), &[&["--out", "v"][..], &var].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let k = json(&t.path().join("v/kset.json"));
    assert!(k["masses"][0].as_f64().unwrap() > 1.0);

    let sample = [
        "sample", "--n", "32", "--h", "0.5", "--m0", "4", "--E0", "4", "--m-max", "4", "--points", "20",
        "--table-n", "64", "--n-steps", "20000", "--burn-in", "5000", "--thin", "1000", "--chains", "2",
    ];
    for out in ["s1", "s2"] {
        let o = nlslab(t.path(), &[&["--out", out][..], &sample].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "report.csv", "reference.nlsf", "samples/sample_00000.nlsf"] {
        let a = fs::read(t.path().join("s1").join(f)).unwrap();
        let b = fs::read(t.path().join("s2").join(f)).unwrap();
        assert!(a == b, "{f} differs between reruns");
    }
    let m1 = json(&t.path().join("s1/manifest.json"));
    let m2 = json(&t.path().join("s2/manifest.json"));
    assert_eq!(m1["config_hash"], m2["config_hash"]);
    assert_eq!(m1["seed"].as_u64(), Some(1));

    let o = nlslab(
        t.path(),
        &[
            "--out", "r", "src", "--samples", "s1/samples", "--reference", "s1/reference.nlsf", "--t-end", "1",
            "--max-samples", "3",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(t.path().join("r/src.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn evolve_writes_trajectory() {
    let t = tempfile::tempdir().unwrap();
    let o = nlslab(
        t.path(),
        &["--out", "o", "evolve", "--d", "1", "--h", "0.5", "--m", "2", "--n", "64", "--t-end", "1", "--scheme", "rk4"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&t.path().join("o/evolve.json"));
    assert!(v["max_mass_drift"].as_f64().unwrap() < 1e-8);
    let csv = fs::read_to_string(t.path().join("o/trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,mass,energy,distance\n"));
    let o = nlslab(t.path(), &["--out", "o", "evolve", "--h", "0.5", "--m", "2", "--scheme", "leapfrog"]);
    assert_eq!(o.status.code(), Some(2));
}
