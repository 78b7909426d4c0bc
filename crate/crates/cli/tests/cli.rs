use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rockgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rockgan"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = rockgan(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json summary")
}

fn csv_column(path: &Path, col: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

/// Phantom volume plus small generator weights in `dir`.
fn fixture(dir: &Path) {
    ok(dir, &["phantom", "--edge", "40", "--porosity", "0.4", "--radius", "4", "--seed", "3"]);
    ok(dir, &["init-weights", "--component", "generator", "--filters", "1", "--latent-dim", "4", "--seed", "5"]);
}

#[test]
fn validate_is_byte_identical_and_composes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let real = d.join("phantom.raw");
    let weights = d.join("generator.g3dw");
    let args = |out: &str| {
        vec![
            "validate".to_string(),
            "--real".into(),
            real.to_str().unwrap().into(),
            "--weights".into(),
            weights.to_str().unwrap().into(),
            "--count".into(),
            "2".into(),
            "--size".into(),
            "16".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            d.join(out).to_str().unwrap().into(),
        ]
    };
    let run = |out: &str, jobs: &str| {
        let mut a = args(out);
        a.extend(["--jobs".to_string(), jobs.to_string()]);
        let o = Command::new(env!("CARGO_BIN_EXE_rockgan")).args(&a).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("r1", "1");
    run("r2", "1");
    run("r3", "2");
    let a = fs::read(d.join("r1/report.json")).unwrap();
    assert_eq!(a, fs::read(d.join("r2/report.json")).unwrap());
    assert_eq!(a, fs::read(d.join("r3/report.json")).unwrap());

    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["report_version"], 1);
    for key in ["metadata", "real", "synthetic", "ks", "images"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }

    // the same seed through the individual commands
    let sub = d.join("subs");
    ok(&sub, &["subdomains", "--input", real.to_str().unwrap(), "--size", "16", "--count", "2", "--seed", "11"]);
    let img1 = report["images"][1].clone();
    let index: Value = serde_json::from_slice(&fs::read(sub.join("subdomains.json")).unwrap()).unwrap();
    assert_eq!(index["subvolumes"][1]["origin"], img1["origin"]);
    let sub1 = sub.join("sub_0001.raw");
    let s2 = d.join("s2");
    ok(&s2, &["s2", "--input", sub1.to_str().unwrap(), "--r-max", "8"]);
    let direct = csv_column(&s2.join("s2_x.csv"), 2);
    let from_report: Vec<f64> = img1["analysis"]["s2"]["x"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(direct, from_report);
    let flow = ok(&d.join("flow"), &["flow", "--input", sub1.to_str().unwrap(), "--axis", "x"]);
    let fr = &img1["analysis"]["flow"][0];
    if let Some(res) = fr.get("result") {
        assert_eq!(flow["result"]["permeability_m2"], res["permeability_m2"]);
    }

    let gen = d.join("gen");
    let g = ok(&gen, &["generate", "--weights", weights.to_str().unwrap(), "--latent", "1", "1", "1", "--crop", "16", "--seed", "11"]);
    assert_eq!(g["outputs"][0]["latent_seed"], report["images"][2]["latent_seed"]);
}

#[test]
fn generate_size_law_and_crop() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let w = d.join("generator.g3dw");
    let s = ok(d, &["generate", "--weights", w.to_str().unwrap(), "--latent", "1", "1", "1"]);
    assert_eq!(s["outputs"][0]["dims"], serde_json::json!([64, 64, 64]));
    assert_eq!(fs::metadata(d.join("generated_0000.raw")).unwrap().len(), 64 * 64 * 64);
    let c = ok(&d.join("c"), &["generate", "--weights", w.to_str().unwrap(), "--latent", "1", "1", "1", "--crop", "40"]);
    assert_eq!(c["outputs"][0]["dims"], serde_json::json!([40, 40, 40]));
    let i = ok(&d.join("i"), &["interpolate", "--weights", w.to_str().unwrap(), "--steps", "3", "--crop", "20"]);
    assert_eq!(i["outputs"].as_array().unwrap().len(), 3);
    let acts = ok(&d.join("a"), &["activations", "--weights", w.to_str().unwrap()]);
    let shapes: Vec<Value> = acts["layers"].as_array().unwrap().iter().map(|l| l["shape"][1].clone()).collect();
    assert_eq!(shapes, [4, 8, 16, 32, 32, 64].map(Value::from).to_vec());
}

#[test]
fn score_segment_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--edge", "64", "--porosity", "0.3", "--radius", "5"]);
    ok(d, &["init-weights", "--component", "discriminator", "--filters", "1"]);
    let p = d.join("phantom.raw");
    let s = ok(d, &["score", "--weights", d.join("discriminator.g3dw").to_str().unwrap(), "--input", p.to_str().unwrap()]);
    let v = s["scores"][0]["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&v));
    let seg = ok(d, &["segment", "--input", p.to_str().unwrap()]);
    let phi = seg["porosity"].as_f64().unwrap();
    assert!((phi - 0.3).abs() < 0.05, "{phi}");
    ok(d, &["minkowski-sweep", "--input", p.to_str().unwrap()]);
    let phis = csv_column(&d.join("minkowski_sweep.csv"), 1);
    assert_eq!(phis.len(), 256);
    assert!(phis.windows(2).all(|w| w[1] <= w[0]));
    // dark polarity inverts the phases
    let inv = ok(&d.join("inv"), &["segment", "--input", p.to_str().unwrap(), "--pore", "dark"]);
    assert!((inv["porosity"].as_f64().unwrap() - (1.0 - phi)).abs() < 0.02);
}

#[test]
fn ks_and_vhist() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["phantom", "--edge", "24", "--porosity", "0.5", "--radius", "3"]);
    let p = d.join("phantom.raw");
    ok(d, &["vhist", "--input", p.to_str().unwrap(), "--axis", "x"]);
    ok(d, &["vhist", "--input", p.to_str().unwrap(), "--axis", "z"]);
    let same = ok(d, &["ks", "--a", d.join("vhist_x.csv").to_str().unwrap(), "--b", d.join("vhist_x.csv").to_str().unwrap()]);
    assert_eq!(same["d_nm"], 0.0);
    assert_eq!(same["reject"], false);
    let xz = ok(d, &["ks", "--a", d.join("vhist_x.csv").to_str().unwrap(), "--b", d.join("vhist_z.csv").to_str().unwrap(), "--alpha", "0.05"]);
    for k in ["direction", "d_nm", "threshold", "alpha", "n", "m", "reject"] {
        assert!(xz.get(k).is_some());
    }
    assert!((xz["threshold"].as_f64().unwrap() - 0.12).abs() < 1e-3);
}

#[test]
fn errors_are_structured() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = rockgan(d, &["segment", "--input", d.join("missing.raw").to_str().unwrap()]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "validation");
    fs::write(d.join("bad.g3dw"), b"nope").unwrap();
    let out = rockgan(d, &["generate", "--weights", d.join("bad.g3dw").to_str().unwrap()]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "format");
    // blocked geometry
    fs::write(d.join("solid.raw"), vec![0u8; 512]).unwrap();
    let out = rockgan(d, &["flow", "--input", d.join("solid.raw").to_str().unwrap(), "--dims", "8", "8", "8", "--threshold", "10", "--pore", "bright"]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "no_flow");
}
