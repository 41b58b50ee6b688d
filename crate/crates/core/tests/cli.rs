use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hubble_core::io::read_dataset;
use hubble_core::model::ModelParams;
use tempfile::TempDir;

fn hubble(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hubble"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Runs `command config --output out` and returns the exit code.
fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![command, config.to_str().unwrap(), "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = hubble(&args);
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().unwrap()
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("{key} missing from {text}"))
        .trim()
        .parse()
        .unwrap()
}

fn read_table(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

const CONTRACTION: &str = "
[simulate]
R_start = 38.4
R_end = 11.9
t_i = 40.0
";

#[test]
fn simulate_ring_is_a_damped_sinusoid() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ring.toml",
        "[params]\nphi_0 = 0.3\n[simulate]\nR_start = 20.0\nt_end = 60.0\n",
    );
    let out = tmp.path().join("out");
    assert_eq!(run("simulate", &cfg, &out, &[]), 0);
    let rows = read_table(&out.join("trajectory.tsv"));
    let p = ModelParams::table_contraction();
    let omega = p.omega(20.0, 1.0);
    let gamma = p.gamma(20.0, 1.0).unwrap();
    let omega_d = (omega * omega - gamma * gamma).sqrt();
    // Density column against the envelope-and-phase convention.
    let dn_col = rows[0].len() - 2;
    for row in &rows {
        let t = row[0];
        let expected = p.dn_i * (-gamma * t).exp() * (omega_d * t + 0.3).cos();
        assert!((row[dn_col] - expected).abs() <= 1e-7, "t={t}: {} vs {expected}", row[dn_col]);
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("constant radius"));
}

#[test]
fn simulate_contraction_reports_peak_rate_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", CONTRACTION);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a, &[]), 0);
    assert_eq!(run("simulate", &cfg, &b, &[]), 0);
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    let rate = summary_value(&summary, "max_abs_hubble_rate_per_ms");
    assert!((rate - 0.328).abs() <= 0.1 * 0.328, "{rate}");
    for f in ["trajectory.tsv", "summary.txt", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn synth_preset_files_and_seeds() {
    let tmp = TempDir::new().unwrap();
    let noisy = write_config(tmp.path(), "s.toml", "[synth]\npreset = \"paper-contraction\"\n");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(run("synth", &noisy, &a, &["--seed", "1"]), 0);
    assert_eq!(run("synth", &noisy, &b, &["--seed", "2"]), 0);
    assert_eq!(run("synth", &noisy, &c, &["--seed", "1"]), 0);
    let tables = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tsv"))
        .count();
    assert_eq!(tables, 24);

    let (da, db) = (read_dataset(&a).unwrap(), read_dataset(&b).unwrap());
    assert_ne!(da.traces[0].matrix, db.traces[0].matrix);
    let strip = |p: &Path| -> String {
        fs::read_to_string(p.join("manifest.toml"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("seed ="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    assert_ne!(
        fs::read(a.join("manifest.toml")).unwrap(),
        fs::read(b.join("manifest.toml")).unwrap()
    );
    for f in ["manifest.toml", "trace_000.tsv", "trace_023.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap());
    }

    // Noiseless data need no seed and reproduce bit for bit.
    let clean = write_config(
        tmp.path(),
        "clean.toml",
        "[synth]\npreset = \"paper-contraction\"\nnoise_fraction = 0.0\n",
    );
    let (d, e) = (tmp.path().join("d"), tmp.path().join("e"));
    assert_eq!(run("synth", &clean, &d, &[]), 0);
    assert_eq!(run("synth", &clean, &e, &[]), 0);
    for i in 0..24 {
        let f = format!("trace_{i:03}.tsv");
        assert_eq!(fs::read(d.join(&f)).unwrap(), fs::read(e.join(&f)).unwrap());
    }
}

/// Small noiseless contraction set with constant atom numbers.
fn clean_dataset(tmp: &Path) -> PathBuf {
    let cfg = write_config(
        tmp,
        "synth.toml",
        "[synth]
preset = \"paper-contraction\"
noise_fraction = 0.0
atom_drop = 0.0
theta_bins = 16
time_samples = 24
constant_traces = 3
",
    );
    let out = tmp.join("data");
    assert_eq!(run("synth", &cfg, &out, &[]), 0);
    out
}

fn report_value(report: &str, name: &str) -> f64 {
    report
        .lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(name)).then(|| it.next().unwrap().parse().unwrap())
        })
        .unwrap()
}

#[test]
fn fit_recovers_noiseless_generator() {
    let tmp = TempDir::new().unwrap();
    clean_dataset(tmp.path());
    let cfg = write_config(tmp.path(), "fit.toml", "[fit]\ndataset = \"data\"\nvariant = \"all-shared\"\n");
    let out = tmp.path().join("fit");
    assert_eq!(run("fit", &cfg, &out, &[]), 0);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    let truth = ModelParams::table_contraction();
    for (name, value) in [
        ("gamma_H", truth.gamma_h),
        ("alpha", truth.alpha),
        ("Q_i", truth.q_i),
        ("Q_f", truth.q_f),
        ("c_theta_i", truth.c_theta_i),
        ("dn_i", truth.dn_i),
    ] {
        let got = report_value(&report, name);
        assert!((got - value).abs() <= 1e-4 * value, "{name}: {got} vs {value}");
    }

    // dof line: residuals - free parameters.
    let line = report.lines().find(|l| l.starts_with("residuals:")).unwrap();
    let nums: Vec<usize> = line
        .split_whitespace()
        .filter_map(|w| w.parse().ok())
        .collect();
    assert_eq!(nums[2], nums[0] - nums[1]);
    assert_eq!(nums[1], 6 + 1 + 1 + 20);
}

#[test]
fn fit_all_reports_eight_variants() {
    let tmp = TempDir::new().unwrap();
    clean_dataset(tmp.path());
    let cfg = write_config(tmp.path(), "fit.toml", "[fit]\ndataset = \"data\"\n");
    let out = tmp.path().join("fit");
    assert_eq!(run("fit", &cfg, &out, &["--variant", "all"]), 0);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    let rows = report.lines().filter(|l| l.starts_with("phi0=")).count();
    assert_eq!(rows, 8);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for r in json["per_variant"].as_array().unwrap() {
        let dof = r["dof"].as_u64().unwrap();
        assert_eq!(dof, r["n_residuals"].as_u64().unwrap() - r["n_free"].as_u64().unwrap());
    }
}

#[test]
fn phase_sweep_defaults_and_single_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sweep.toml", "[sweep]\npoints = 6\n");
    let out = tmp.path().join("sweep");
    assert_eq!(run("phase-sweep", &cfg, &out, &[]), 0);
    let header = fs::read_to_string(out.join("sweep.tsv")).unwrap();
    let header = header.lines().next().unwrap();
    for g in ["gamma_H=0]", "gamma_H=0.36]", "gamma_H=1]", "adiabatic"] {
        assert!(header.contains(g), "{header}");
    }
    let rows = read_table(&out.join("sweep.tsv"));
    assert_eq!(rows.len(), 6);
    let adiabatic: Vec<f64> = rows.iter().map(|r| *r.last().unwrap()).collect();
    let mean = adiabatic.iter().sum::<f64>() / adiabatic.len() as f64;
    assert!(adiabatic.iter().all(|a| (a - mean).abs() <= 5e-3 * mean));
    for i in 0..3 {
        assert!(out.join(format!("curve_{i:02}.tsv")).exists());
    }

    let one = write_config(tmp.path(), "one.toml", "[sweep]\npoints = 1\nadiabatic = false\n");
    let out = tmp.path().join("one");
    assert_eq!(run("phase-sweep", &one, &out, &[]), 0);
    assert_eq!(read_table(&out.join("sweep.tsv")).len(), 1);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");

    let missing = write_config(tmp.path(), "missing.toml", "[params]\nalpha = 0.5\n");
    assert_eq!(run("simulate", &missing, &out, &[]), 2);
    let unknown = write_config(tmp.path(), "unknown.toml", "[params]\nbogus = 1\n[simulate]\nR_start = 20.0\n");
    assert_eq!(run("simulate", &unknown, &out, &[]), 2);
    let no_seed = write_config(tmp.path(), "noseed.toml", "[synth]\npreset = \"paper-contraction\"\n");
    assert_eq!(run("synth", &no_seed, &out, &[]), 2);
    assert_eq!(run("simulate", &tmp.path().join("absent.toml"), &out, &[]), 2);

    // Critically damped ring: the underdamped initial condition does not exist.
    let overdamped = write_config(
        tmp.path(),
        "od.toml",
        "[params]\nQ_i = 0.5\nQ_f = 0.5\n[simulate]\nR_start = 20.0\n",
    );
    assert_eq!(run("simulate", &overdamped, &out, &[]), 3);

    clean_dataset(tmp.path());
    let capped = write_config(
        tmp.path(),
        "capped.toml",
        "[fit]\ndataset = \"data\"\nvariant = \"all-shared\"\nmax_iterations = 1\n",
    );
    let fit_out = tmp.path().join("capped");
    assert_eq!(run("fit", &capped, &fit_out, &[]), 4);
    assert!(fit_out.join("report.txt").exists());
}

#[test]
fn manifest_flag_writes_run_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", CONTRACTION);
    let out = tmp.path().join("m");
    assert_eq!(run("simulate", &cfg, &out, &["--manifest"]), 0);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(json["command"], "simulate");
    assert!(json["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(json["outputs"].as_array().unwrap().iter().any(|o| o == "trajectory.tsv"));
}
