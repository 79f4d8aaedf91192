use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use nalgebra::DMatrix;
use statgeo::decoder::{toy_circle_codes, Activation, DecoderMap, Head, Layer};
use statgeo::io::{write_codes, write_json, DecoderFile, GridFile, LandFile};
use statgeo::metric::{GridSpec, MetricGrid};
use statgeo::{FamilyKind, RngStream};
use tempfile::TempDir;

fn statgeo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statgeo"))
        .current_dir(dir)
        .env_remove("STATGEO_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).expect("stderr ends with JSON")
}

/// One Normal feature with (mean, variance) = z.
fn identity_normal() -> DecoderMap {
    let head = Head::new("eta", vec![Layer::pointwise(2, Activation::Identity)]).unwrap();
    DecoderMap::new(2, 1, FamilyKind::Normal, vec![head]).unwrap()
}

fn identity_decoder(dir: &Path) {
    write_json(&dir.join("id.json"), &DecoderFile::from_decoder(&identity_normal(), None)).unwrap();
}

fn flat_grid(dir: &Path) {
    let spec = GridSpec {
        lower: vec![-2.0, -2.0],
        upper: vec![2.0, 2.0],
        resolution: vec![5, 5],
        sigma: 1.0,
    };
    let grid = MetricGrid::new(spec, vec![DMatrix::identity(2, 2); 25]).unwrap();
    write_json(&dir.join("flat.json"), &GridFile::from_grid(&grid, "pullback", None)).unwrap();
}

#[test]
fn kl_matches_the_gaussian_formula() {
    let tmp = TempDir::new().unwrap();
    identity_decoder(tmp.path());
    let v = ok_json(&statgeo(tmp.path(), &["kl", "--decoder", "id.json", "--z1", "0,1", "--z2", "0.1,1"]));
    // δμ = 0.1 at unit variance: δμ²/2
    assert!((v["kl"].as_f64().unwrap() - 0.005).abs() < 1e-12);
    assert!((v["quadratic_approx"].as_f64().unwrap() - 0.005).abs() < 1e-12);
    assert!(v["gap"].as_f64().unwrap() < 1e-12);
}

#[test]
fn geodesic_writes_curve_and_summary() {
    let tmp = TempDir::new().unwrap();
    identity_decoder(tmp.path());
    let v = ok_json(&statgeo(
        tmp.path(),
        &["geodesic", "--decoder", "id.json", "--from", "0,1", "--to", "1,1", "--samples", "10", "--out", "c.csv", "--seed", "1"],
    ));
    // (μ/√2, σ) is a hyperbolic half-plane scaled by √2, so the distance
    // between (0, 1) and (1, 1) is √2·arccosh(1 + 1/4) = √2·ln 2
    let exact = 2f64.sqrt() * 2f64.ln();
    let length = v["length"].as_f64().unwrap();
    assert!((length - exact).abs() < 5e-3, "{length}");
    assert!(v["energy"].as_f64().unwrap() < v["straight_energy"].as_f64().unwrap());
    assert!((v["straight_energy"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let text = std::fs::read_to_string(tmp.path().join("c.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "t,z0,z1,eta0,eta1,segment_kl");
    assert_eq!(rows.len(), 12);
    assert!(rows[11].ends_with(','));
    let total: f64 = rows[1..11].iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    // 2N·ΣKL approximates the energy on the sampled curve
    assert!((20.0 * total / v["energy"].as_f64().unwrap() - 1.0).abs() < 0.05, "{total}");
}

#[test]
fn geodesic_pair_selects_code_rows() {
    let tmp = TempDir::new().unwrap();
    identity_decoder(tmp.path());
    let mut buf = Vec::new();
    write_codes(&mut buf, &[vec![0.0, 1.0], vec![5.0, 5.0], vec![0.0, 2.0]]).unwrap();
    std::fs::write(tmp.path().join("codes.csv"), buf).unwrap();
    let v = ok_json(&statgeo(
        tmp.path(),
        &["geodesic", "--decoder", "id.json", "--codes", "codes.csv", "--pair", "0,2", "--out", "c.csv", "--seed", "1"],
    ));
    // pure variance change: ∫ dv/(√2·v) = ln 2/√2
    assert!((v["length"].as_f64().unwrap() - 2f64.ln() / 2f64.sqrt()).abs() < 1e-3, "{v}");
    let out = statgeo(
        tmp.path(),
        &["geodesic", "--decoder", "id.json", "--codes", "codes.csv", "--pair", "0,7", "--out", "c.csv", "--seed", "1"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exp_and_log_on_a_flat_metric() {
    let tmp = TempDir::new().unwrap();
    flat_grid(tmp.path());
    let v = ok_json(&statgeo(tmp.path(), &["exp", "--grid", "flat.json", "--z", "0.5,-0.25", "--v", "1,2", "--steps", "10"]));
    let end: Vec<f64> = serde_json::from_value(v["endpoint"].clone()).unwrap();
    assert!((end[0] - 1.5).abs() < 1e-12 && (end[1] - 1.75).abs() < 1e-12, "{end:?}");
    let v = ok_json(&statgeo(
        tmp.path(),
        &["log", "--grid", "flat.json", "--z", "0.5,-0.25", "--y", "1.5,1.75", "--seed", "2"],
    ));
    let vel: Vec<f64> = serde_json::from_value(v["velocity"].clone()).unwrap();
    assert!((vel[0] - 1.0).abs() < 1e-9 && (vel[1] - 2.0).abs() < 1e-9, "{vel:?}");
}

#[test]
fn usage_and_parse_errors_exit_one_with_json() {
    let tmp = TempDir::new().unwrap();
    identity_decoder(tmp.path());
    let out = statgeo(tmp.path(), &["kl", "--decoder", "id.json", "--z1", "0,1,0", "--z2", "0,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
    let out = statgeo(tmp.path(), &["kl", "--decoder", "missing.json", "--z1", "0,1", "--z2", "0,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("missing.json"));
    let out = statgeo(tmp.path(), &["geodesic", "--decoder", "id.json", "--from", "0,1", "--to", "1,1", "--out", "c.csv"]);
    assert_eq!(out.status.code(), Some(1), "stochastic commands need a seed");
    let out = statgeo(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn non_finite_metric_exits_two_with_point_index() {
    let tmp = TempDir::new().unwrap();
    let mut file = DecoderFile::from_decoder(&identity_normal(), None);
    for layer in file.heads.iter_mut().flat_map(|h| h.layers.iter_mut()) {
        layer.weight.iter_mut().for_each(|w| *w *= 1e300);
    }
    write_json(&tmp.path().join("bad.json"), &file).unwrap();
    let out = statgeo(
        tmp.path(),
        &["metric-grid", "--decoder", "bad.json", "--lower", "-1,-1", "--upper", "1,1", "--resolution", "3,3", "--out", "g.json"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(error_json(&out)["error"]["details"]["point_index"].is_u64());
}

#[test]
fn toy_pipeline_is_deterministic_across_threads() {
    let cfg = "[land]\nmc_samples = 64\nmax_iters = 3\n[energy]\nmax_iters = 40\n";
    let run = |threads: &str| {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();
        std::fs::write(dir.join("run.toml"), cfg).unwrap();
        let t = ["--threads", threads, "--config", "run.toml", "--seed", "7"];
        let with = |args: &[&str]| {
            let mut all: Vec<&str> = args.to_vec();
            all.extend_from_slice(&t);
            statgeo(dir, &all)
        };
        let (codes, dec, grid, curve, land) = ("codes.csv", "dec.json", "grid.json", "curve.csv", "land.json");
        ok_json(&with(&["toygen", "--n", "80", "--out", codes]));
        ok_json(&with(&["toydecoder", "--family", "normal", "--codes", codes, "--k", "10", "--out", dec]));
        ok_json(&with(&["geodesic", "--decoder", dec, "--codes", codes, "--pair", "0,40", "--samples", "20", "--out", curve]));
        ok_json(&with(&[
            "metric-grid", "--decoder", dec, "--lower", "-1.5,-1.5", "--upper", "1.5,1.5", "--resolution", "7,7", "--out", grid,
        ]));
        let out = with(&["land", "--grid", grid, "--codes", codes, "--out", land]);
        assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
        [codes, dec, grid, curve, land].map(|f| std::fs::read(dir.join(f)).unwrap())
    };
    let one = run("1");
    let two = run("2");
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a, b);
    }
    let model: LandFile = serde_json::from_slice(&one[4]).unwrap();
    assert_eq!(model.metric_ref, "grid.json");
    let grid: GridFile = serde_json::from_slice(&one[2]).unwrap();
    assert_eq!(grid.points.len(), 49);
}

#[test]
fn kl_probe_grid_reports_validation_error() {
    let tmp = TempDir::new().unwrap();
    let codes = toy_circle_codes(60, 0.1, &mut RngStream::new(3));
    let mut buf = Vec::new();
    write_codes(&mut buf, &codes).unwrap();
    std::fs::write(tmp.path().join("codes.csv"), buf).unwrap();
    ok_json(&statgeo(tmp.path(), &["toydecoder", "--family", "bernoulli", "--codes", "codes.csv", "--k", "8", "--out", "d.json"]));
    let v = ok_json(&statgeo(
        tmp.path(),
        &["metric-grid", "--decoder", "d.json", "--mode", "kl-probe", "--lower", "-1,-1", "--upper", "1,1", "--resolution", "3,3", "--out", "g.json"],
    ));
    assert_eq!(v["points"], 9);
    let file: GridFile = serde_json::from_slice(&std::fs::read(tmp.path().join("g.json")).unwrap()).unwrap();
    let errs = file.validation_error.unwrap();
    assert_eq!(errs.len(), 9);
    assert!(errs.iter().all(|e| e.is_finite() && *e >= 0.0));
    assert_eq!(v["mean_validation_error"].as_f64().unwrap(), errs.iter().sum::<f64>() / 9.0);
}
