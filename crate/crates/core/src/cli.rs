//! The `hubble` command line: one TOML file per run, a handful of flags.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, RampTemplate};
use crate::error::{Error, Result};
use crate::fit::{self, report, FitOptions, FitVariant, LmOptions, ParamVector};
use crate::integrator::{accumulated_phase, integrate, uniform_grid};
use crate::io;
use crate::model::{AtomSeries, ModelParams, PhononState, RampProfile};
use crate::synth::{self, Preset, PresetOptions, TraceSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hubble", version, about = "Phonons in expanding and contracting ring condensates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and write it as a table.
    Simulate(Common),
    /// Build a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// `paper-contraction` or `paper-expansion`.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Global fit of a dataset directory.
    Fit {
        #[command(flatten)]
        common: Common,
        /// `all`, `all-shared`, an index 0..8 or a variant label.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Amplitude-ratio curves against the phase at peak Hubble rate.
    PhaseSweep(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    pub config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write `run.json` with inputs, versions, seeds and wall time.
    #[arg(long)]
    pub manifest: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub params: Option<toml::Table>,
    pub simulate: Option<SimulateConfig>,
    pub synth: Option<SynthConfig>,
    pub fit: Option<FitConfig>,
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(rename = "R_start")]
    pub r_start: f64,
    #[serde(rename = "R_end")]
    pub r_end: Option<f64>,
    pub t_mid: Option<f64>,
    pub t_i: Option<f64>,
    #[serde(default = "default_rise")]
    pub rise_10_90: f64,
    #[serde(default)]
    pub t_start: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Atom number relative to `N_ref`.
    #[serde(rename = "N", default = "one")]
    pub n: f64,
    pub amplitude: Option<f64>,
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: Option<String>,
    pub traces: Option<Vec<TraceSpec>>,
    pub noise_fraction: Option<f64>,
    pub atom_drop: Option<f64>,
    pub atom_drift: Option<f64>,
    pub theta_bins: Option<usize>,
    pub time_samples: Option<usize>,
    pub t_max: Option<f64>,
    pub rise_10_90: Option<f64>,
    pub constant_traces: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Dataset directory, relative to the config file.
    pub dataset: PathBuf,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_prior")]
    pub atom_prior_sigma: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// `guess` (moment estimates) or `truth` (generator parameters).
    #[serde(default = "default_start")]
    pub start: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "R_start", default = "contraction_start")]
    pub r_start: f64,
    #[serde(rename = "R_end", default = "contraction_end")]
    pub r_end: f64,
    #[serde(default = "default_rise")]
    pub rise_10_90: f64,
    #[serde(rename = "N", default = "one")]
    pub n: f64,
    #[serde(rename = "gamma_H", default = "default_gamma_h")]
    pub gamma_h: Vec<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Phase range in units of π.
    #[serde(default = "default_phi_range")]
    pub phi_range: [f64; 2],
    /// Sweep these start times instead of a phase grid.
    pub t_i: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub adiabatic: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        toml::from_str("").expect("sweep defaults")
    }
}

fn default_rise() -> f64 {
    3.6
}
fn default_t_end() -> f64 {
    150.0
}
fn default_dt() -> f64 {
    0.05
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_variant() -> String {
    "all".into()
}
fn default_prior() -> f64 {
    FitOptions::default().atom_prior_sigma
}
fn default_iterations() -> usize {
    LmOptions::default().max_iterations
}
fn default_start() -> String {
    "guess".into()
}
fn contraction_start() -> f64 {
    38.4
}
fn contraction_end() -> f64 {
    11.9
}
fn default_gamma_h() -> Vec<f64> {
    vec![0.0, 0.36, 1.0]
}
fn default_points() -> usize {
    200
}
fn default_phi_range() -> [f64; 2] {
    [1.0, 3.0]
}

fn config_err(message: impl Into<String>) -> Error {
    Error::InvalidInput(message.into())
}

/// Preset parameters named by `base` (default contraction), with every
/// other key of the table overriding a field.
pub fn resolve_params(table: Option<&toml::Table>, default: Preset) -> Result<ModelParams> {
    let mut base = default;
    if let Some(name) = table.and_then(|t| t.get("base")) {
        let name = name
            .as_str()
            .ok_or_else(|| config_err("params.base must be a string"))?;
        base = match name {
            "contraction" => Preset::PaperContraction,
            "expansion" => Preset::PaperExpansion,
            other => Preset::parse(other)?,
        };
    }
    let mut merged = toml::Table::try_from(base.params()).map_err(|e| config_err(e.to_string()))?;
    if let Some(table) = table {
        for (k, v) in table {
            if k == "base" {
                continue;
            }
            if !merged.contains_key(k) && k != "undamped" {
                return Err(config_err(format!("unknown parameter `{k}`")));
            }
            let v = match v {
                toml::Value::Integer(i) if k != "m" => toml::Value::Float(*i as f64),
                other => other.clone(),
            };
            merged.insert(k.clone(), v);
        }
    }
    let params: ModelParams = merged.try_into().map_err(|e: toml::de::Error| Error::Parse {
        what: "params".into(),
        message: e.to_string(),
    })?;
    params.validate()?;
    Ok(params)
}

struct Loaded {
    config: RunConfig,
    text: String,
    dir: PathBuf,
    output: PathBuf,
}

fn load(common: &Common) -> Result<Loaded> {
    let text = fs::read_to_string(&common.config).map_err(|e| {
        config_err(format!("cannot read {}: {e}", common.config.display()))
    })?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
        what: common.config.display().to_string(),
        message: e.to_string(),
    })?;
    let dir = common
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let output = match (&common.output, &config.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => dir.join(o),
        (None, None) => return Err(config_err("no output directory (set `output` or --output)")),
    };
    fs::create_dir_all(&output)?;
    fs::write(output.join("config.toml"), &text)?;
    Ok(Loaded {
        config,
        text,
        dir,
        output,
    })
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config: String,
    config_text: &'a str,
    seed: Option<u64>,
    outputs: Vec<String>,
    wall_time_s: f64,
}

fn write_run_manifest(
    loaded: &Loaded,
    common: &Common,
    command: &str,
    seed: Option<u64>,
    started: Instant,
) -> Result<()> {
    let mut outputs: Vec<String> = fs::read_dir(&loaded.output)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "run.json")
        .collect();
    outputs.sort();
    let m = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: common.config.display().to_string(),
        config_text: &loaded.text,
        seed,
        outputs,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    fs::write(loaded.output.join("run.json"), report::to_json(&m))?;
    Ok(())
}

/// Runs a command and maps the outcome to an exit code, printing errors
/// to stderr.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NOT_CONVERGED,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_CONFIG
            }
        }
    }
}

/// `Ok(false)` when a fit did not converge (its report is still written).
pub fn execute(cli: Cli) -> Result<bool> {
    let started = Instant::now();
    match cli.command {
        Command::Simulate(common) => {
            let loaded = load(&common)?;
            cmd_simulate(&loaded)?;
            if common.manifest {
                write_run_manifest(&loaded, &common, "simulate", loaded.config.seed, started)?;
            }
            Ok(true)
        }
        Command::Synth {
            common,
            seed,
            preset,
        } => {
            let loaded = load(&common)?;
            let seed = seed.or(loaded.config.seed);
            cmd_synth(&loaded, seed, preset.as_deref())?;
            if common.manifest {
                write_run_manifest(&loaded, &common, "synth", seed, started)?;
            }
            Ok(true)
        }
        Command::Fit { common, variant } => {
            let loaded = load(&common)?;
            let converged = cmd_fit(&loaded, variant.as_deref())?;
            if common.manifest {
                write_run_manifest(&loaded, &common, "fit", loaded.config.seed, started)?;
            }
            Ok(converged)
        }
        Command::PhaseSweep(common) => {
            let loaded = load(&common)?;
            cmd_phase_sweep(&loaded)?;
            if common.manifest {
                write_run_manifest(&loaded, &common, "phase-sweep", loaded.config.seed, started)?;
            }
            Ok(true)
        }
    }
}

fn cmd_simulate(loaded: &Loaded) -> Result<()> {
    let cfg = loaded
        .config
        .simulate
        .clone()
        .ok_or_else(|| config_err("missing [simulate] section"))?;
    let params = resolve_params(loaded.config.params.as_ref(), Preset::PaperContraction)?;
    let r_end = cfg.r_end.unwrap_or(cfg.r_start);
    let profile = if r_end == cfg.r_start {
        RampProfile::constant(cfg.r_start)
    } else {
        match (cfg.t_mid, cfg.t_i) {
            (Some(t_mid), None) => RampProfile::new(cfg.r_start, r_end, t_mid, cfg.rise_10_90)?,
            (None, Some(t_i)) => {
                RampProfile::from_start_time(cfg.r_start, r_end, t_i, cfg.rise_10_90)?
            }
            _ => return Err(config_err("give exactly one of t_mid and t_i for a ramp")),
        }
    };
    if !(cfg.dt > 0.0) || !(cfg.t_end > cfg.t_start) {
        return Err(config_err("need dt > 0 and t_end > t_start"));
    }
    let atoms = cfg.n * params.n_ref;
    let series = AtomSeries::constant(atoms);
    let amplitude = cfg.amplitude.unwrap_or(params.dn_i * cfg.n);
    let phase = cfg.phase.unwrap_or(params.phi_0);
    let init = PhononState::from_density(&params, &profile, atoms, amplitude, phase, cfg.t_start)?;
    let grid = uniform_grid(cfg.t_start, cfg.t_end, cfg.dt);
    let traj = integrate(&params, &profile, &series, init, &grid)?;
    let mut table = Vec::new();
    traj.write_table(&mut table)?;
    fs::write(loaded.output.join("trajectory.tsv"), table)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "samples {}", traj.len());
    match profile.peak_time() {
        Ok(t_peak) => {
            let rate = profile.hubble_rate(t_peak).abs();
            let omega = params.omega(profile.radius(t_peak), atoms);
            let mut p = params.clone();
            p.phi_0 = phase;
            let phi_peak = accumulated_phase(&p, &profile, &series, t_peak);
            let _ = writeln!(summary, "t_peak_ms {t_peak:.9}");
            let _ = writeln!(summary, "R_at_peak_um {:.9}", profile.radius(t_peak));
            let _ = writeln!(summary, "max_abs_hubble_rate_per_ms {rate:.9}");
            let _ = writeln!(summary, "omega_at_peak_per_ms {omega:.9}");
            let _ = writeln!(summary, "rate_over_omega {:.9}", rate / omega);
            let _ = writeln!(summary, "phi_peak_over_pi {:.9}", phi_peak / PI);
        }
        Err(Error::NoRamp) => {
            let _ = writeln!(summary, "constant radius: no ramp");
        }
        Err(e) => return Err(e),
    }
    fs::write(loaded.output.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_synth(loaded: &Loaded, seed: Option<u64>, preset_flag: Option<&str>) -> Result<()> {
    let cfg = loaded.config.synth.clone().unwrap_or_default();
    let dataset = match (preset_flag.or(cfg.preset.as_deref()), cfg.traces.clone()) {
        (Some(name), _) => {
            let preset = Preset::parse(name)?;
            let params = resolve_params(loaded.config.params.as_ref(), preset)?;
            let o = &cfg;
            let d = PresetOptions::default();
            let opts = PresetOptions {
                noise_fraction: o.noise_fraction.unwrap_or(d.noise_fraction),
                atom_drop: o.atom_drop.unwrap_or(d.atom_drop),
                atom_drift: o.atom_drift.unwrap_or(d.atom_drift),
                theta_bins: o.theta_bins.unwrap_or(d.theta_bins),
                time_samples: o.time_samples.unwrap_or(d.time_samples),
                t_max: o.t_max.unwrap_or(d.t_max),
                rise_10_90: o.rise_10_90.unwrap_or(d.rise_10_90),
                constant_traces: o.constant_traces.unwrap_or(d.constant_traces),
                seed: match seed {
                    Some(s) => s,
                    None if opts_noisy(o, &d) => {
                        return Err(config_err("noise requested but no seed given"))
                    }
                    None => 0,
                },
            };
            let specs = synth::preset_specs(preset, &params, &opts)?;
            synth::build_dataset(&params, &specs)?
        }
        (None, Some(mut traces)) => {
            let params = resolve_params(loaded.config.params.as_ref(), Preset::PaperContraction)?;
            if let Some(s) = seed {
                for t in &mut traces {
                    t.seed = s;
                }
            }
            synth::build_dataset(&params, &traces)?
        }
        (None, None) => return Err(config_err("[synth] needs a preset or a list of traces")),
    };
    io::write_dataset(&loaded.output, &dataset)?;
    println!(
        "wrote {} traces ({} cells) to {}",
        dataset.traces.len(),
        dataset.n_cells(),
        loaded.output.display()
    );
    Ok(())
}

fn opts_noisy(o: &SynthConfig, d: &PresetOptions) -> bool {
    o.noise_fraction.unwrap_or(d.noise_fraction) > 0.0
}

fn cmd_fit(loaded: &Loaded, variant_flag: Option<&str>) -> Result<bool> {
    let cfg = loaded
        .config
        .fit
        .clone()
        .ok_or_else(|| config_err("missing [fit] section"))?;
    let dataset = io::read_dataset(&loaded.dir.join(&cfg.dataset))?;
    let opts = FitOptions {
        lm: LmOptions {
            max_iterations: cfg.max_iterations,
            ..LmOptions::default()
        },
        atom_prior_sigma: cfg.atom_prior_sigma,
    };
    let start = match cfg.start.as_str() {
        "guess" => fit::initial_guess(&dataset)?,
        "truth" => {
            let truth = dataset
                .meta
                .truth
                .as_ref()
                .ok_or_else(|| config_err("dataset records no generator parameters"))?;
            let means = dataset.traces.iter().map(|t| t.spec.n_series.mean()).collect();
            ParamVector::from_model(truth, dataset.traces.len(), means)
        }
        other => return Err(config_err(format!("unknown fit start `{other}`"))),
    };
    let variant = variant_flag.unwrap_or(&cfg.variant);
    let (text, json, converged, summary) = if variant == "all" {
        let ensemble = fit::ensemble_fit(&dataset, &start, &opts)?;
        let summary = ensemble
            .per_variant
            .iter()
            .map(|r| format!("{}: dof {} chi2/dof {:.6e}", r.variant, r.dof, r.chi2 / r.dof as f64))
            .collect::<Vec<_>>()
            .join("\n");
        (
            report::render_ensemble(&ensemble),
            report::to_json(&ensemble),
            ensemble.all_converged(),
            summary,
        )
    } else {
        let v = FitVariant::parse(variant)?;
        let result = fit::global_fit(&dataset, v, &start, &opts)?;
        let summary = format!(
            "{}: free {} dof {} chi2/dof {:.6e}",
            result.variant,
            result.n_free,
            result.dof,
            result.chi2 / result.dof as f64
        );
        (
            report::render_fit(&result),
            report::to_json(&result),
            result.converged,
            summary,
        )
    };
    fs::write(loaded.output.join("report.txt"), &text)?;
    fs::write(loaded.output.join("report.json"), &json)?;
    println!("{summary}");
    if !converged {
        eprintln!("fit did not converge; report written");
    }
    Ok(converged)
}

fn cmd_phase_sweep(loaded: &Loaded) -> Result<()> {
    let cfg = loaded.config.sweep.clone().unwrap_or_default();
    let params = resolve_params(loaded.config.params.as_ref(), Preset::PaperContraction)?;
    let template = RampTemplate {
        r_start: cfg.r_start,
        r_end: cfg.r_end,
        rise_10_90: cfg.rise_10_90,
    };
    if cfg.gamma_h.is_empty() {
        return Err(config_err("sweep.gamma_H is empty"));
    }
    let atoms = cfg.n * params.n_ref;
    let curves: Vec<analysis::GainCurve> = match &cfg.t_i {
        Some(list) => cfg
            .gamma_h
            .iter()
            .map(|&g| {
                let mut p = params.clone();
                p.gamma_h = g;
                Ok(analysis::GainCurve {
                    gamma_h: g,
                    points: analysis::phase_sweep(&p, &template, atoms, list)?,
                })
            })
            .collect::<Result<_>>()?,
        None => {
            if cfg.points == 0 {
                return Err(config_err("sweep.points must be positive"));
            }
            let [lo, hi] = cfg.phi_range;
            let grid: Vec<f64> = if cfg.points == 1 {
                vec![lo * PI]
            } else {
                (0..cfg.points)
                    .map(|k| PI * (lo + (hi - lo) * k as f64 / (cfg.points - 1) as f64))
                    .collect()
            };
            analysis::gain_curve_family(&params, &template, atoms, &cfg.gamma_h, &grid)?
        }
    };
    let phases: Vec<f64> = curves[0].points.iter().map(|p| p.phi_peak).collect();
    let adiabatic = if cfg.adiabatic {
        Some(analysis::adiabatic_sweep(
            &params,
            template.r_start,
            template.r_end,
            atoms,
            &phases,
        )?)
    } else {
        None
    };

    let mut table = String::from("# phi_peak/pi t_i");
    for c in &curves {
        let _ = write!(table, " ratio[gamma_H={0}] sigma[gamma_H={0}]", c.gamma_h);
    }
    if adiabatic.is_some() {
        table.push_str(" adiabatic");
    }
    table.push('\n');
    for (k, phi) in phases.iter().enumerate() {
        let _ = write!(table, "{:.9e} {:.9e}", phi / PI, curves[0].points[k].t_i);
        for c in &curves {
            let _ = write!(table, " {:.9e} {:.9e}", c.points[k].ratio, c.points[k].ratio_sigma);
        }
        if let Some(a) = &adiabatic {
            let _ = write!(table, " {:.9e}", a[k]);
        }
        table.push('\n');
    }
    fs::write(loaded.output.join("sweep.tsv"), &table)?;
    for (i, c) in curves.iter().enumerate() {
        let mut buf = Vec::new();
        analysis::write_sweep_table(&c.points, &mut buf)?;
        fs::write(loaded.output.join(format!("curve_{i:02}.tsv")), buf)?;
    }
    for c in &curves {
        println!(
            "gamma_H {}: mean ratio {:.6} peak-to-trough {:.4}",
            c.gamma_h,
            c.mean(),
            c.peak_to_trough()
        );
    }
    if let Some(a) = &adiabatic {
        println!("adiabatic ratio {:.6}", a.iter().sum::<f64>() / a.len() as f64);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_overlay() {
        let mut t = toml::Table::new();
        t.insert("base".into(), "expansion".into());
        t.insert("gamma_H".into(), 0.5.into());
        let p = resolve_params(Some(&t), Preset::PaperContraction).unwrap();
        assert_eq!(p.gamma_h, 0.5);
        assert_eq!(p.q_i, 3.5);
        t.insert("bogus".into(), 1.0.into());
        assert!(resolve_params(Some(&t), Preset::PaperContraction).is_err());
    }

    #[test]
    fn sweep_defaults() {
        let s = SweepConfig::default();
        assert_eq!(s.gamma_h, vec![0.0, 0.36, 1.0]);
        assert_eq!(s.points, 200);
        assert!(s.adiabatic);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["hubble", "fit", "run.toml", "--variant", "all-shared"]).unwrap();
        assert!(matches!(cli.command, Command::Fit { variant: Some(_), .. }));
        assert!(Cli::try_parse_from(["hubble", "simulate", "run.toml", "--seed", "3"]).is_err());
    }
}
