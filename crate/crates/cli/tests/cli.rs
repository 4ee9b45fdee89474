//! End-to-end runs of the `transduce` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use transduction_cli::{parse_config, sha256_hex, RunManifest, MANIFEST_NAME};

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}

fn preset(name: &str) -> PathBuf {
    presets().join(format!("{name}.toml"))
}

fn transduce(subcommand: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transduce"))
        .arg(subcommand)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(extra)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_NAME)).unwrap()).unwrap()
}

fn experiment_of(path: &Path) -> String {
    parse_config(&fs::read_to_string(path).unwrap()).unwrap().experiment.to_string()
}

/// Rows of a CSV file as string fields, header excluded.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn every_preset_parses_runs_and_lists_its_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut names: Vec<PathBuf> = fs::read_dir(presets()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 9);
    for path in names {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let out = tmp.path().join(&stem);
        let o = transduce(&experiment_of(&path), &path, &out, &[]);
        assert!(o.status.success(), "{stem}: {}", stderr(&o));
        let m = manifest(&out);
        assert!(!m.files.is_empty());
        for f in &m.files {
            let data = fs::read(out.join(&f.path)).unwrap();
            assert_eq!(f.sha256, sha256_hex(&data), "{stem}/{}", f.path);
            assert_eq!(f.bytes, data.len() as u64);
        }
        assert!(m.duration_s < 120.0, "{stem} took {} s", m.duration_s);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["fig3b_protocol", "sweep_kappa", "fig2_encode"] {
        let path = preset(name);
        let sub = experiment_of(&path);
        let (a, b) = (tmp.path().join(format!("{name}_a")), tmp.path().join(format!("{name}_b")));
        assert!(transduce(&sub, &path, &a, &[]).status.success());
        assert!(transduce(&sub, &path, &b, &[]).status.success());
        assert_eq!(manifest(&a).files, manifest(&b).files, "{name}");
    }
}

#[test]
fn manifest_echo_reparses_to_the_same_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["fig3_magnon", "sweep_kappa"] {
        let path = preset(name);
        let out = tmp.path().join(name);
        assert!(transduce(&experiment_of(&path), &path, &out, &[]).status.success());
        let m = manifest(&out);
        let echoed = parse_config(&m.config_toml).unwrap();
        assert_eq!(echoed, m.config);
        assert_eq!(echoed, parse_config(&fs::read_to_string(&path).unwrap()).unwrap());
    }
}

#[test]
fn kappa_two_g_preset_flags_two_windows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    assert!(transduce("protocol", &preset("fig3b_protocol"), &out, &[]).status.success());
    let usable: Vec<String> = rows(&out.join("windows.csv")).into_iter().map(|r| r[7].clone()).collect();
    assert_eq!(usable.iter().filter(|u| *u == "true").count(), 2);
    assert_eq!(&usable[..2], ["true", "true"]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(doc["result"]["usable_count"], 2);
    assert_eq!(doc["config"]["experiment"], "protocol");
}

#[test]
fn encode_preset_grows_linearly_in_opposite_directions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    assert!(transduce("encode", &preset("fig2_encode"), &out, &[]).status.success());
    let rate = 2.0 * std::f64::consts::PI * 1e6;
    for r in rows(&out.join("encode.csv")) {
        let sign = if r[0] == "ground" { 1.0 } else { -1.0 };
        let (t, re, im): (f64, f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!(re.abs() < 1e-6);
        assert!((im - sign * rate * t).abs() < 0.01, "{r:?}");
    }
}

#[test]
fn sweep_reproduces_the_linewidth_trends() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    assert!(transduce("sweep", &preset("sweep_kappa"), &out, &[]).status.success());
    let table = rows(&out.join("sweep.csv"));
    let find = |kappa: f64, ratio: f64| {
        table
            .iter()
            .find(|r| r[0].parse::<f64>().unwrap() == kappa && r[1].parse::<f64>().unwrap() == ratio)
            .unwrap()
            .clone()
    };
    let count = |r: &[String]| r[4].parse::<usize>().unwrap();
    let span = |r: &[String]| r[6].parse::<f64>().unwrap();
    assert_eq!(count(&find(1e7, 2.0)), 2);
    assert!(count(&find(1e7, 1.0)) > count(&find(1e7, 2.0)));
    assert!(span(&find(1e6, 1.0)) >= 5.0 * span(&find(1e7, 1.0)));
}

#[test]
fn single_point_sweep_matches_a_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(preset("fig3b_protocol")).unwrap();
    let single = tmp.path().join("single");
    let p = write_config(tmp.path(), "p.toml", &base);
    assert!(transduce("protocol", &p, &single, &[]).status.success());
    let sweep_text = base.replace("experiment = \"protocol\"", "experiment = \"sweep\"")
        + "\n[[grid.axes]]\nparameter = \"kappa_over_2pi\"\nvalues = [1e7]\n";
    let s = write_config(tmp.path(), "s.toml", &sweep_text);
    let swept = tmp.path().join("swept");
    assert!(transduce("sweep", &s, &swept, &[]).status.success());
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(single.join("result.json")).unwrap()).unwrap();
    let row = &rows(&swept.join("sweep.csv"))[0];
    // One axis column, then coupling, linewidth, count, peak, span.
    assert_eq!(row[3], doc["result"]["usable_count"].to_string());
    assert_eq!(row[4].parse::<f64>().unwrap(), doc["result"]["peak_efficiency"].as_f64().unwrap());
    assert_eq!(row[5].parse::<f64>().unwrap(), doc["result"]["usable_span"].as_f64().unwrap());
}

#[test]
fn engine_override_is_applied_and_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let (m, a) = (tmp.path().join("m"), tmp.path().join("a"));
    assert!(transduce("protocol", &preset("fig3a_ideal"), &m, &[]).status.success());
    assert!(transduce("protocol", &preset("fig3a_ideal"), &a, &["--engine", "analytic"]).status.success());
    assert_eq!(manifest(&a).config.engine.unwrap().to_string(), "analytic");
    for (x, y) in rows(&m.join("windows.csv")).iter().zip(rows(&a.join("windows.csv"))) {
        for col in [2, 3] {
            let (u, v): (f64, f64) = (x[col].parse().unwrap(), y[col].parse().unwrap());
            assert!((u - v).abs() < 1e-9 * 18.0);
        }
    }
    // The closed form has no loss channels.
    let o = transduce("protocol", &preset("fig3b_protocol"), &tmp.path().join("x"), &["--engine", "analytic"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_with_two_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(preset("fig3b_protocol")).unwrap();
    let big_grid = base.replace("experiment = \"protocol\"", "experiment = \"sweep\"")
        + "\n[[grid.axes]]\nparameter = \"kappa_over_g\"\nstart = 0.5\nstop = 4.0\ncount = 200\n\
           \n[[grid.axes]]\nparameter = \"n_th\"\nstart = 0.0\nstop = 1.0\ncount = 51\n";
    let cases = [
        ("protocol", base.replace("kappa_over_2pi = 1e7", "kappa_over_2pi = -1e7"), "mechanical.kappa_over_2pi"),
        ("protocol", base.replace("phi_ac = 0.1", "phi_ac = 0.1\nphi_dc = 0.0"), "phi_dc"),
        ("protocol", base.replace("g0_over_2pi = 1e7\n", ""), "g0_over_2pi"),
        ("protocol", base.replace("order = 12", "order = 5"), "order"),
        ("encode", base.clone(), "experiment"),
        ("sweep", big_grid, "10200 points"),
        ("protocol", base.replace("phi_ac = 0.1", "phi_ac = 0.5"), "phi_ac"),
    ];
    for (k, (sub, text, needle)) in cases.into_iter().enumerate() {
        let path = write_config(tmp.path(), &format!("c{k}.toml"), &text);
        let o = transduce(sub, &path, &tmp.path().join(format!("o{k}")), &[]);
        assert_eq!(o.status.code(), Some(2), "case {k}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "case {k}: {}", stderr(&o));
    }
    let o = transduce("protocol", &tmp.path().join("absent.toml"), &tmp.path().join("o"), &[]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn numerical_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(preset("fig2_encode")).unwrap();
    // A step far beyond the stability limit, with no record times to shorten it.
    let unstable = base
        .replace("boson_dim = 40", "boson_dim = 40\ndt_s = 2e-7\norder = 4")
        .replace("series_points = 101", "series_points = 2");
    // Thermal influx above the truncation guard.
    let hot = base.replace("gamma_b_over_2pi = 1.0", "gamma_b_over_2pi = 1e3");
    for (k, (text, needle)) in [(unstable, "integration failure"), (hot, "thermal influx")].into_iter().enumerate() {
        let path = write_config(tmp.path(), &format!("n{k}.toml"), &text);
        let o = transduce("encode", &path, &tmp.path().join(format!("n{k}")), &[]);
        assert_eq!(o.status.code(), Some(3), "case {k}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "case {k}: {}", stderr(&o));
    }
}
