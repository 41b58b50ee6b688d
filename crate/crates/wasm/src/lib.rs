//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use std::f64::consts::PI;

use hubble_core::analysis::{self, RampTemplate};
use hubble_core::integrator::{accumulated_phase, integrate, uniform_grid};
use hubble_core::model::{AtomSeries, ModelParams, PhononState, RampProfile};
use hubble_core::synth::{build_dataset, TraceSpec, PRESET_DTHETA, PRESET_PHI_0};
use hubble_core::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn base_params(r_start: f64, r_end: f64) -> ModelParams {
    let mut p = if r_end < r_start {
        ModelParams::table_contraction()
    } else {
        ModelParams::table_expansion()
    };
    p.phi_0 = PRESET_PHI_0;
    p.dtheta = PRESET_DTHETA;
    p
}

fn to_json<T: Serialize>(value: Result<T>) -> String {
    match value {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

#[derive(Debug, Serialize)]
pub struct TrajectoryView {
    pub t: Vec<f64>,
    pub dn: Vec<f64>,
    pub radius: Vec<f64>,
    pub t_peak: f64,
    pub phi_peak_over_pi: f64,
    pub max_rate: f64,
    pub rate_over_omega: f64,
    pub ratio: f64,
}

/// One trace `δn(t)` through a ramp, with the quantities at peak Hubble rate.
pub fn trajectory_view(
    r_start: f64,
    r_end: f64,
    t_i: f64,
    rise: f64,
    gamma_h: f64,
    phi_0: f64,
    t_end: f64,
) -> Result<TrajectoryView> {
    let mut p = base_params(r_start, r_end);
    p.gamma_h = gamma_h;
    p.phi_0 = phi_0;
    p.validate()?;
    let profile = RampProfile::from_start_time(r_start, r_end, t_i, rise)?;
    let atoms = AtomSeries::constant(p.n_ref);
    let init = PhononState::from_density(&p, &profile, p.n_ref, p.dn_i, p.phi_0, 0.0)?;
    let grid = uniform_grid(0.0, t_end, t_end / 1500.0);
    let traj = integrate(&p, &profile, &atoms, init, &grid)?;
    let t_peak = profile.peak_time()?;
    let max_rate = profile.hubble_rate(t_peak).abs();
    let point = analysis::sweep_point(&p, &profile, p.n_ref)?;
    Ok(TrajectoryView {
        radius: traj.times.iter().map(|&t| profile.radius(t)).collect(),
        t: traj.times,
        dn: traj.dn,
        t_peak,
        phi_peak_over_pi: accumulated_phase(&p, &profile, &atoms, t_peak) / PI,
        max_rate,
        rate_over_omega: max_rate / p.omega(profile.radius(t_peak), p.n_ref),
        ratio: point.ratio,
    })
}

#[derive(Debug, Serialize)]
pub struct CurvesView {
    pub phi_over_pi: Vec<f64>,
    pub gamma_h: Vec<f64>,
    pub ratio: Vec<Vec<f64>>,
    pub adiabatic: f64,
}

/// Contraction gain curves `A_f/A_i` over `[π, 3π]`, one per `γ_H`.
pub fn curves_view(gamma_h: &[f64], points: usize, undamped: bool) -> Result<CurvesView> {
    let mut p = base_params(38.4, 11.9);
    p.undamped = undamped;
    let grid = analysis::default_phase_grid(points.max(1));
    let curves =
        analysis::gain_curve_family(&p, &RampTemplate::contraction(), p.n_ref, gamma_h, &grid)?;
    Ok(CurvesView {
        phi_over_pi: grid.iter().map(|g| g / PI).collect(),
        gamma_h: gamma_h.to_vec(),
        ratio: curves
            .iter()
            .map(|c| c.points.iter().map(|q| q.ratio).collect())
            .collect(),
        adiabatic: analysis::adiabatic_reference(&p, 38.4, 11.9, p.n_ref)?,
    })
}

#[derive(Debug, Serialize)]
pub struct DensityView {
    pub n_t: usize,
    pub n_theta: usize,
    pub t: Vec<f64>,
    /// Row-major, one row per time sample.
    pub values: Vec<f64>,
    pub max_abs: f64,
}

/// Synthetic `δn_1D(θ, t)` for one contraction trace.
pub fn density_view(
    t_i: f64,
    noise_fraction: f64,
    seed: u64,
    theta_bins: usize,
    time_samples: usize,
) -> Result<DensityView> {
    let p = base_params(38.4, 11.9);
    let n = time_samples.max(2);
    let t: Vec<f64> = (0..n).map(|k| 150.0 * k as f64 / (n - 1) as f64).collect();
    let spec = TraceSpec {
        id: "demo".into(),
        profile: RampProfile::from_start_time(38.4, 11.9, t_i, 3.6)?,
        t_samples: t.clone(),
        theta_bins,
        n_series: AtomSeries::constant(p.n_ref),
        noise_sigma: noise_fraction * p.dn_i,
        seed,
    };
    let ds = build_dataset(&p, &[spec])?;
    let m = &ds.traces[0].matrix;
    Ok(DensityView {
        n_t: m.n_t,
        n_theta: m.n_theta,
        t,
        max_abs: m.values.iter().fold(0.0, |a, v| a.max(v.abs())),
        values: m.values.clone(),
    })
}

#[wasm_bindgen]
pub fn trajectory(
    r_start: f64,
    r_end: f64,
    t_i: f64,
    rise: f64,
    gamma_h: f64,
    phi_0: f64,
    t_end: f64,
) -> String {
    to_json(trajectory_view(r_start, r_end, t_i, rise, gamma_h, phi_0, t_end))
}

/// `gamma_h` is a comma-separated list.
#[wasm_bindgen]
pub fn gain_curves(gamma_h: &str, points: usize, undamped: bool) -> String {
    let parsed: std::result::Result<Vec<f64>, _> = gamma_h
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    match parsed {
        Ok(list) => to_json(curves_view(&list, points, undamped)),
        Err(e) => error_json(&format!("gamma_H list: {e}")),
    }
}

#[wasm_bindgen]
pub fn density_map(
    t_i: f64,
    noise_fraction: f64,
    seed: u32,
    theta_bins: usize,
    time_samples: usize,
) -> String {
    to_json(density_view(t_i, noise_fraction, u64::from(seed), theta_bins, time_samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_json() {
        let v = trajectory_view(38.4, 11.9, 27.0, 3.6, 0.36, PRESET_PHI_0, 150.0).unwrap();
        assert_eq!(v.t.len(), v.dn.len());
        assert!((v.max_rate - 0.331).abs() < 1e-3);
        assert!((v.phi_peak_over_pi - 1.34).abs() < 0.01);
        let s = trajectory(38.4, 11.9, 27.0, 3.6, 0.36, PRESET_PHI_0, 150.0);
        assert!(s.starts_with("{\"t\":["));
    }

    #[test]
    fn curves_json() {
        let v = curves_view(&[0.0, 1.0], 5, false).unwrap();
        assert_eq!(v.ratio.len(), 2);
        assert_eq!(v.ratio[0].len(), 5);
        assert!((v.adiabatic - 1.5426).abs() < 0.01);
        assert!(gain_curves("0, x", 3, false).contains("error"));
    }

    #[test]
    fn density_json() {
        let v = density_view(40.0, 0.05, 1, 32, 20).unwrap();
        assert_eq!(v.values.len(), 32 * 20);
        assert!(v.max_abs > 0.0);
        assert!(density_map(40.0, 0.0, 1, 4, 20).contains("error"));
    }
}
