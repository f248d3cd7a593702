use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recoil-cli")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = cli(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> String {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn geo_table_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["geo", "--out", "a"]);
    ok(d, &["geo", "--out", "a2"]);
    let csv = fs::read_to_string(d.join("a/geometry.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "theta_m_deg,ratio_com,ratio_libr");
    assert_eq!(lines.len(), 92);
    let row60: Vec<f64> = lines[61].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(row60[0], 60.0);
    assert!((row60[1] - 11.5 / 128.0).abs() < 1e-12);
    assert_eq!(csv, fs::read_to_string(d.join("a2/geometry.csv")).unwrap());

    let cfg = write_config(d, &json!({"geometry": {"points": 10, "quadrature": true}}));
    ok(d, &["geo", "--config", &cfg, "--out", "q"]);
    let meta = read_json(&d.join("q/geometry.json"));
    assert_eq!(meta["method"], "quadrature");
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["tool_version"].as_str().unwrap().starts_with("recoil-cli"));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();

    let cfg = write_config(d, &json!({"grid": {"points": 0}}));
    let o = cli(d, &["jspec", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.points"));

    let cfg = write_config(d, &json!({"gird": {}}));
    assert_eq!(cli(d, &["geo", "--config", &cfg]).status.code(), Some(2));

    assert_eq!(cli(d, &["fit", "missing.csv"]).status.code(), Some(1));
    assert_eq!(cli(d, &["geo", "--config", "nope.json"]).status.code(), Some(1));

    // two narrow modes leave no unique cavity to keep
    let fit = json!({
        "N": 2, "g": [1.0, 1.0], "kappa": [1.0, 1.2], "Lambda": [[0.0, 0.0], [0.0, 0.5]],
        "residual": 1e-6, "labels": ["narrow", "narrow"], "seed": 0,
        "omega0": 1.0e15, "mechanical_frequency": 1.0,
        "diagnostics": {"evaluations": 1, "restarts": 1, "converged_restarts": 1,
                        "best_restart": 0, "converged": true, "weighting": "uniform"}
    });
    fs::write(d.join("narrow.json"), fit.to_string()).unwrap();
    let o = cli(d, &["reduce", "narrow.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    // recoil heating with undamped mechanics has no steady state
    let reduced = json!({
        "omega_c": null, "g": null, "kappa": null, "Gamma": 1.0, "Omega": 10.0,
        "omega0": 1.0e15, "contributions": [{"mode": 0, "Gamma_beta": 1.0, "label": "broad"}]
    });
    fs::write(d.join("bg.json"), reduced.to_string()).unwrap();
    let cfg = write_config(d, &json!({"dynamics": {"steady_state": true}}));
    assert_eq!(cli(d, &["simulate", "bg.json", "--config", &cfg]).status.code(), Some(4));
}

#[test]
fn free_space_pipeline_heats_at_gamma() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = write_config(
        d,
        &json!({
            "grid": {"half_span_hz": 4e6, "points": 201},
            "fit": {"order": "auto", "tol": 1e-3, "n_max": 2},
            "reduction": {"background_only": true},
            "dynamics": {"horizon_s": 1e-3, "samples": 10}
        }),
    );
    ok(d, &["jspec", "--config", &cfg]);
    ok(d, &["fit", "out/jspec.csv", "--config", &cfg]);
    ok(d, &["reduce", "out/fit.json", "--config", &cfg]);
    ok(d, &["simulate", "out/reduced.json", "--config", &cfg]);

    let meta: Value = read_json(&d.join("out/jspec.json"));
    let gamma_fs = meta["gamma_fs"].as_f64().unwrap();
    let fit = read_json(&d.join("out/fit.json"));
    assert_eq!(fit["N"], 1);
    assert!(fit["residual"].as_f64().unwrap() < 1e-3);
    let red = read_json(&d.join("out/reduced.json"));
    assert!(red["omega_c"].is_null());
    let gamma = red["Gamma"].as_f64().unwrap();
    assert!((gamma / gamma_fs - 1.0).abs() < 1e-3, "{gamma} vs {gamma_fs}");
    let sim = read_json(&d.join("out/simulate.json"));
    let slope = sim["heating_slope"].as_f64().unwrap();
    assert!((slope / gamma - 1.0).abs() < 1e-6);
    for f in ["fit.json", "reduced.json", "simulate.json"] {
        assert_eq!(read_json(&d.join("out").join(f))["config_hash"], meta["config_hash"]);
    }

    // rerun into a second directory: every output identical
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["output_dir"] = "out".into();
    let cfg2 = write_config(d, &v);
    let d2 = d.join("rerun");
    fs::create_dir(&d2).unwrap();
    ok(&d2, &["jspec", "--config", &cfg2]);
    ok(&d2, &["fit", "out/jspec.csv", "--config", &cfg2]);
    let d3 = d.join("rerun2");
    fs::create_dir(&d3).unwrap();
    ok(&d3, &["jspec", "--config", &cfg2]);
    ok(&d3, &["fit", "out/jspec.csv", "--config", &cfg2]);
    for f in ["jspec.csv", "jspec.json", "jspec_fs.csv", "fit.json"] {
        assert_eq!(fs::read(d2.join("out").join(f)).unwrap(), fs::read(d3.join("out").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn plate_cavity_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    // Omega_y / 2pi ~ 194 kHz for the default particle and tweezer
    let cfg = write_config(
        d,
        &json!({
            "provider": {"kind": "parallel_plates", "axis": "y", "separation_m": 100e-6, "n_img": 8, "reflectivity": 0.5},
            "cavity_modes": [{"detuning_hz": 194072.0, "kappa_hz": 97036.0, "waist_m": 1.9e-3,
                              "length_m": 100e-6, "axis": "y", "parity": "node"}],
            "grid": {"half_span_hz": 3.9e6, "points": 801},
            "fit": {"order": 2, "seed": 3},
            "dynamics": {"horizon_s": 2e-5, "samples": 20, "initial_occupation": 5.0, "continuum_modes": 800}
        }),
    );
    ok(d, &["jspec", "--config", &cfg]);
    let csv = fs::read_to_string(d.join("out/jspec.csv")).unwrap();
    let js: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let peak = js.iter().cloned().fold(0.0, f64::max);
    assert!(peak > 3.0 * js[0], "no resonance: peak {peak}, edge {}", js[0]);

    ok(d, &["fit", "out/jspec.csv", "--config", &cfg]);
    let fit = read_json(&d.join("out/fit.json"));
    assert_eq!(fit["seed"], 3);
    assert!(fit["residual"].as_f64().unwrap() < 1e-2);

    let out = ok(d, &["reduce", "out/fit.json", "--config", &cfg]);
    assert!(out.contains("Gamma"));
    let red = read_json(&d.join("out/reduced.json"));
    for k in ["omega_c", "g", "kappa", "Gamma"] {
        assert!(red[k].as_f64().is_some(), "{k} missing");
    }
    let sum: f64 = red["contributions"].as_array().unwrap().iter().map(|c| c["Gamma_beta"].as_f64().unwrap()).sum();
    assert!((sum / red["Gamma"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    ok(d, &["simulate", "out/reduced.json", "--fewmode", "out/fit.json", "--jspec", "out/jspec.csv", "--config", &cfg]);
    let sim = read_json(&d.join("out/simulate.json"));
    assert_eq!(sim["files"].as_array().unwrap().len(), 3);
    let last = |f: &str| -> f64 {
        let t = fs::read_to_string(d.join("out").join(f)).unwrap();
        t.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    let (r, c) = (last("trajectory_reduced.csv"), last("trajectory_continuum.csv"));
    assert!((r / c - 1.0).abs() < 0.05, "reduced {r} vs continuum {c}");
    assert!((last("trajectory_fewmode.csv") / c - 1.0).abs() < 0.05);
}
