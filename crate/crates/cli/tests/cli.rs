use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chiralsim_core::device::serialize_config;
use chiralsim_core::reference_ring;

fn chiralsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chiralsim")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn circulate_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = chiralsim(dir.path(), &["circulate", "--flux", "1.5707963", "--out", "run1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run1/circulation.csv")).unwrap();
    assert!(csv.starts_with("t_ns,p_q1,p_q2,p_q3,"));
    assert_eq!(csv.lines().count(), 602);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run1/circulation.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["wall_times"].as_array().unwrap().len() >= 3);
    assert!(!dir.path().join("run1/.chiralsim.lock").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let o = Command::new(env!("CARGO_BIN_EXE_chiralsim"))
            .current_dir(dir.path())
            .env("CHIRALSIM_THREADS", threads)
            .args(["darkon", "--alphas", "5", "--duration", "200", "--flux-frac", "0.25", "--out", out, "--plot"])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/darkon.csv"), read("b/darkon.csv"));
    assert_eq!(read("a/darkon.csv"), read("c/darkon.csv"));
    assert_eq!(read("a/darkon.svg"), read("c/darkon.svg"));
}

#[test]
fn spectrum_grid_closes_gap_at_zero_flux() {
    let dir = tempfile::tempdir().unwrap();
    let o = chiralsim(dir.path(), &["spectrum", "--flux-grid", "-3.1416:3.1416:201", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("s/spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "flux_rad,manifold,band_index,energy_mhz,gap_mhz");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 201 * 2 * 3);
    let (min_flux, min_gap) = rows
        .iter()
        .filter(|r| r[1] == 1.0)
        .fold((f64::NAN, f64::INFINITY), |acc, r| if r[4] < acc.1 { (r[0], r[4]) } else { acc });
    assert!(min_gap.abs() < 1e-6 && min_flux.abs() < 1e-9, "{min_flux} {min_gap}");
}

#[test]
fn validate_config_reports_rwa() {
    let dir = tempfile::tempdir().unwrap();
    let o = chiralsim(dir.path(), &["validate-config"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("link (2,3)") && text.contains("valid"), "{text}");
}

#[test]
fn config_file_round_trip_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("dev.toml"), serialize_config(&reference_ring().with_g0(4.1))).unwrap();
    let o = chiralsim(dir.path(), &["circulate", "--config", "dev.toml", "--flux", "1.5707963", "--out", "obs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = chiralsim(dir.path(), &["fit", "--observed", "obs/circulation.csv", "--flux", "1.5707963", "--out", "fit"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit/fit.manifest.json")).unwrap()).unwrap();
    let g0 = m["summary"]["g0_mhz"].as_f64().unwrap();
    assert!((g0 - 4.1).abs() < 0.041, "{g0}");
}

#[test]
fn json_format_mirrors_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = chiralsim(dir.path(), &["entanglement", "--duration", "50", "--format", "json", "--out", "j"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("j/entanglement.json")).unwrap()).unwrap();
    assert_eq!(v["columns"][0], "t_ns");
    assert_eq!(v["rows"].as_array().unwrap().len(), 51);
}

#[test]
fn compile_flux_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = chiralsim(dir.path(), &["compile-flux", "--edges", "1-2,2-3,3-1", "--targets", "-1.2", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("c/compile_flux.csv")).unwrap();
    let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total + 1.2).abs() < 1e-8, "{csv}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&chiralsim(dir.path(), &["circulate", "--config", "missing.toml"])), 2);
    fs::write(dir.path().join("bad.toml"), "levels = 1\n").unwrap();
    assert_eq!(code(&chiralsim(dir.path(), &["circulate", "--config", "bad.toml"])), 2);
    assert_eq!(code(&chiralsim(dir.path(), &["spectrum", "--flux-grid", "0:1"])), 2);
    assert_eq!(code(&chiralsim(dir.path(), &["circulate", "--flux", "1", "--flux-frac", "0.1"])), 2);
    assert_eq!(code(&chiralsim(dir.path(), &["circulate", "--initial", "1000"])), 2);
    fs::create_dir(dir.path().join("locked")).unwrap();
    fs::write(dir.path().join("locked/.chiralsim.lock"), "1").unwrap();
    assert_eq!(code(&chiralsim(dir.path(), &["circulate", "--duration", "10", "--out", "locked"])), 4);
}
