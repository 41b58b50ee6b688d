//! Time integration of the phonon equation
//!
//! ```text
//! φ̈ + [2γ(t) + γ_H Ṙ/R] φ̇ + ω²(t) φ = 0
//! ```
//!
//! along a radius ramp, plus closed-form and invariant-based oracles.

mod dopri5;

pub use dopri5::{Dopri5, SolveStats, StepControl};

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{AtomSeries, ModelParams, PhononState, RampProfile};

/// Relative tolerance of every model evaluation.
pub const RTOL: f64 = 1e-10;
/// Absolute tolerance of every model evaluation.
pub const ATOL: f64 = 1e-12;

/// Panels of the composite Simpson rule in [`accumulated_phase`].
pub const PHASE_PANELS: usize = 10_000;

/// Friction coefficient `2γ + γ_H Ṙ/R` and `ω²` at one instant.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coefficients {
    pub friction: f64,
    pub omega_sq: f64,
}

impl Coefficients {
    #[inline]
    pub fn at(params: &ModelParams, profile: &RampProfile, atoms: f64, t: f64) -> Result<Self> {
        let radius = profile.radius(t);
        let omega = params.omega(radius, atoms);
        let gamma = params.gamma(radius, atoms)?;
        let hubble = profile.radius_rate(t) / radius;
        Ok(Self {
            friction: 2.0 * gamma + params.gamma_h * hubble,
            omega_sq: omega * omega,
        })
    }
}

/// Right-hand side `(dφ/dt, d²φ/dt²)` at `state.t`.
pub fn rhs(
    state: &PhononState,
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
) -> Result<(f64, f64)> {
    let c = Coefficients::at(params, profile, atoms.at(state.t), state.t)?;
    Ok((
        state.dphi_dt,
        -c.friction * state.dphi_dt - c.omega_sq * state.phi,
    ))
}

/// Sampled solution of the phonon equation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi_dt: Vec<f64>,
    pub dn: Vec<f64>,
    pub omega_inst: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes the whitespace-separated table `t phi dphi_dt dn omega_inst`
    /// with 12 significant digits.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# t phi dphi_dt dn omega_inst")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{:.11e} {:.11e} {:.11e} {:.11e} {:.11e}",
                self.times[i], self.phi[i], self.dphi_dt[i], self.dn[i], self.omega_inst[i]
            )?;
        }
        Ok(())
    }
}

/// Integrates `N/2` independent solutions sharing the same coefficients,
/// restarting at every jump of the atom-number series.
///
/// `grid` must be ordered in the direction of integration, starting no
/// earlier than `t0`. Returns the state at `t_end`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn propagate<const N: usize, S>(
    solver: &Dopri5,
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    grid: &[f64],
    mut sink: S,
    stats: &mut SolveStats,
) -> Result<[f64; N]>
where
    S: FnMut(usize, f64, &[f64; N]),
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut cuts: Vec<f64> = atoms
        .breakpoints(t0.min(t_end), t0.max(t_end))
        .collect();
    if dir < 0.0 {
        cuts.reverse();
    }
    cuts.push(t_end);

    let mut start = t0;
    let mut y = y0;
    let mut offset = 0;
    for &stop in &cuts {
        let n_atoms = atoms.at(0.5 * (start + stop));
        let count = grid[offset..]
            .iter()
            .take_while(|&&s| (s - stop) * dir <= 0.0)
            .count();
        let samples = &grid[offset..offset + count];
        let base = offset;
        y = solver.solve(
            |t, y: &[f64; N]| {
                let c = Coefficients::at(params, profile, n_atoms, t)?;
                let mut dy = [0.0; N];
                for p in 0..N / 2 {
                    let (phi, v) = (y[2 * p], y[2 * p + 1]);
                    dy[2 * p] = v;
                    dy[2 * p + 1] = -c.friction * v - c.omega_sq * phi;
                }
                Ok(dy)
            },
            start,
            y,
            stop,
            samples,
            |i, t, y| sink(base + i, t, y),
            stats,
        )?;
        offset += count;
        start = stop;
    }
    Ok(y)
}

fn check_grid(init: &PhononState, t_grid: &[f64]) -> Result<()> {
    if !init.is_finite() {
        return Err(Error::invalid("initial state must be finite"));
    }
    if t_grid.is_empty() {
        return Err(Error::invalid("empty time grid"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    if t_grid[0] < init.t {
        return Err(Error::invalid("time grid starts before the initial state"));
    }
    Ok(())
}

/// Integrates from `init` and samples the solution on `t_grid` with the
/// default tolerances.
pub fn integrate(
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    init: PhononState,
    t_grid: &[f64],
) -> Result<Trajectory> {
    integrate_with(&Dopri5::default(), params, profile, atoms, init, t_grid)
}

pub fn integrate_with(
    solver: &Dopri5,
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    init: PhononState,
    t_grid: &[f64],
) -> Result<Trajectory> {
    check_grid(&init, t_grid)?;
    let n = t_grid.len();
    let mut phi = vec![0.0; n];
    let mut dphi = vec![0.0; n];
    let mut stats = SolveStats::default();
    propagate(
        solver,
        params,
        profile,
        atoms,
        init.t,
        [init.phi, init.dphi_dt],
        t_grid[n - 1],
        t_grid,
        |i, _, y| {
            phi[i] = y[0];
            dphi[i] = y[1];
        },
        &mut stats,
    )?;
    let mut dn = Vec::with_capacity(n);
    let mut omega_inst = Vec::with_capacity(n);
    for (i, &t) in t_grid.iter().enumerate() {
        let radius = profile.radius(t);
        dn.push(params.density_from_phase(radius, dphi[i]));
        omega_inst.push(params.omega(radius, atoms.at(t)));
    }
    if phi.iter().chain(&dphi).any(|v| !v.is_finite()) {
        return Err(Error::StiffFailure { t: t_grid[n - 1] });
    }
    Ok(Trajectory {
        times: t_grid.to_vec(),
        phi,
        dphi_dt: dphi,
        dn,
        omega_inst,
    })
}

/// Propagates a single state to `t_end`, forwards or backwards in time.
pub fn integrate_state(
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    init: PhononState,
    t_end: f64,
) -> Result<PhononState> {
    let mut stats = SolveStats::default();
    let y = propagate(
        &Dopri5::default(),
        params,
        profile,
        atoms,
        init.t,
        [init.phi, init.dphi_dt],
        t_end,
        &[],
        |_, _, _| {},
        &mut stats,
    )?;
    Ok(PhononState::new(y[0], y[1], t_end))
}

/// Closed-form solution for a ring at rest (underdamped only).
pub fn analytic_constant_r(
    params: &ModelParams,
    radius: f64,
    atoms: f64,
    init: PhononState,
    t: f64,
) -> Result<PhononState> {
    let omega = params.omega(radius, atoms);
    let gamma = if params.undamped {
        0.0
    } else {
        let q = params.quality_factor(radius)?;
        if q <= 0.5 {
            return Err(Error::OverdampedUnsupported(q));
        }
        omega / (2.0 * q)
    };
    let omega_d = (omega * omega - gamma * gamma).sqrt();
    let s = t - init.t;
    let (sin, cos) = (omega_d * s).sin_cos();
    let env = (-gamma * s).exp();
    let (x0, v0) = (init.phi, init.dphi_dt);
    Ok(PhononState {
        phi: env * (x0 * cos + (v0 + gamma * x0) / omega_d * sin),
        dphi_dt: env * (v0 * cos - (omega * omega * x0 + gamma * v0) / omega_d * sin),
        t,
    })
}

/// Temporal phase `φ_0 + ∫_0^t_end ω(t) dt` by composite Simpson quadrature.
pub fn accumulated_phase(
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    t_end: f64,
) -> f64 {
    params.phi_0 + phase_integral(params, profile, atoms, 0.0, t_end, PHASE_PANELS)
}

pub(crate) fn phase_integral(
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    t0: f64,
    t1: f64,
    panels: usize,
) -> f64 {
    if t1 == t0 {
        return 0.0;
    }
    let omega = |t: f64| params.omega(profile.radius(t), atoms.at(t));
    let n = 2 * panels;
    let h = (t1 - t0) / n as f64;
    let mut sum = omega(t0) + omega(t1);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * omega(t0 + i as f64 * h);
    }
    sum * h / 3.0
}

/// `W(t) (R(t)/R(t_0))^γ_H` for two undamped solutions, where
/// `W = φ_a φ̇_b - φ_b φ̇_a`. Constant in exact arithmetic.
pub fn wronskian_invariant(
    params: &ModelParams,
    profile: &RampProfile,
    init_a: PhononState,
    init_b: PhononState,
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    if !params.undamped {
        return Err(Error::invalid("the Wronskian invariant needs the undamped model"));
    }
    if init_a.t != init_b.t {
        return Err(Error::invalid("both solutions must start at the same time"));
    }
    check_grid(&init_a, t_grid)?;
    let atoms = AtomSeries::constant(params.n_ref);
    let r0 = profile.radius(init_a.t);
    let mut out = vec![0.0; t_grid.len()];
    let mut stats = SolveStats::default();
    propagate(
        &Dopri5::default(),
        params,
        profile,
        &atoms,
        init_a.t,
        [init_a.phi, init_a.dphi_dt, init_b.phi, init_b.dphi_dt],
        t_grid[t_grid.len() - 1],
        t_grid,
        |i, t, y| {
            let w = y[0] * y[3] - y[2] * y[1];
            out[i] = w * (profile.radius(t) / r0).powf(params.gamma_h);
        },
        &mut stats,
    )?;
    Ok(out)
}

/// Instantaneous adiabatic invariant `V_rel (φ̇² + ω² φ²) / ω` with
/// `V_rel = (R/R(t_0))^γ_H`, along an undamped trajectory.
pub fn adiabatic_invariant(
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    trajectory: &Trajectory,
) -> Vec<f64> {
    let r0 = profile.radius(trajectory.times[0]);
    (0..trajectory.len())
        .map(|i| {
            let t = trajectory.times[i];
            let radius = profile.radius(t);
            let omega = params.omega(radius, atoms.at(t));
            let v = trajectory.dphi_dt[i];
            let x = trajectory.phi[i];
            (radius / r0).powf(params.gamma_h) * (v * v + omega * omega * x * x) / omega
        })
        .collect()
}

/// Running mean over one local oscillation period of a sampled series.
pub fn cycle_average(times: &[f64], values: &[f64], omega: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let half = PI / omega[i];
        let (lo, hi) = (times[i] - half, times[i] + half);
        let a = times.partition_point(|&t| t < lo);
        let b = times.partition_point(|&t| t <= hi);
        let slice = &values[a..b];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    out
}

/// Uniform grid `t0, t0 + dt, ...` up to and including `t1` (to rounding).
pub fn uniform_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt + 1e-9).floor() as usize;
    (0..=n).map(|i| t0 + i as f64 * dt).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ring_params(q: f64) -> ModelParams {
        // ω = 0.4555 rad/ms at the reference radius.
        let mut p = ModelParams::table_expansion();
        p.q_i = q;
        p.q_f = q;
        p
    }

    #[test]
    fn rhs_fixed_point_and_textbook_form() {
        let p = ring_params(3.5);
        let ring = RampProfile::constant(11.9);
        let atoms = AtomSeries::constant(1.0);
        assert_eq!(rhs(&PhononState::new(0.0, 0.0, 3.0), &p, &ring, &atoms).unwrap(), (0.0, 0.0));
        let state = PhononState::new(0.7, -0.2, 3.0);
        let (d1, d2) = rhs(&state, &p, &ring, &atoms).unwrap();
        let w = p.omega(11.9, 1.0);
        let g = w / 7.0;
        assert_eq!(d1, -0.2);
        assert_relative_eq!(d2, -2.0 * g * -0.2 - w * w * 0.7, max_relative = 1e-14);

        let mut q = p.clone();
        q.gamma_h = 17.0;
        assert_eq!(rhs(&state, &q, &ring, &atoms).unwrap(), (d1, d2));
    }

    #[test]
    fn constant_ring_matches_closed_form() {
        let p = ring_params(3.5);
        let ring = RampProfile::constant(11.9);
        let atoms = AtomSeries::constant(1.0);
        let init = PhononState::new(1.0, 0.0, 0.0);
        let grid = uniform_grid(0.0, 150.0, 0.25);
        let traj = integrate(&p, &ring, &atoms, init, &grid).unwrap();
        let mut worst: f64 = 0.0;
        for (i, &t) in grid.iter().enumerate() {
            let exact = analytic_constant_r(&p, 11.9, 1.0, init, t).unwrap();
            worst = worst.max((exact.phi - traj.phi[i]).abs());
            worst = worst.max((exact.dphi_dt - traj.dphi_dt[i]).abs());
        }
        assert!(worst <= 1e-8, "max abs error {worst:e}");
    }

    #[test]
    fn zero_initial_state_stays_zero() {
        let p = ModelParams::table_contraction();
        let ramp = RampProfile::new(38.4, 11.9, 40.0, 3.6).unwrap();
        let grid = uniform_grid(0.0, 150.0, 1.0);
        let traj = integrate(
            &p,
            &ramp,
            &AtomSeries::constant(1.0),
            PhononState::new(0.0, 0.0, 0.0),
            &grid,
        )
        .unwrap();
        assert!(traj.phi.iter().chain(&traj.dn).all(|&v| v == 0.0));
    }

    #[test]
    fn sample_spacing_does_not_change_values() {
        let p = ModelParams::table_contraction();
        let ramp = RampProfile::new(38.4, 11.9, 40.0, 3.6).unwrap();
        let atoms = AtomSeries::constant(1.0);
        let init = PhononState::from_density(&p, &ramp, 1.0, 4.5, 0.3, 0.0).unwrap();
        let coarse = integrate(&p, &ramp, &atoms, init, &uniform_grid(0.0, 150.0, 1.0)).unwrap();
        let fine = integrate(&p, &ramp, &atoms, init, &uniform_grid(0.0, 150.0, 0.5)).unwrap();
        for i in 0..coarse.len() {
            assert!((coarse.phi[i] - fine.phi[2 * i]).abs() <= 1e-9);
            assert!((coarse.dn[i] - fine.dn[2 * i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn closed_form_envelope() {
        let p = ring_params(3.5);
        let init = PhononState::new(1.0, 0.0, 0.0);
        let w = p.omega(11.9, 1.0);
        let g = w / 7.0;
        let wd = (w * w - g * g).sqrt();
        let period = 2.0 * PI / wd;
        let s = analytic_constant_r(&p, 11.9, 1.0, init, period).unwrap();
        assert_relative_eq!(s.phi, (-2.0 * PI * g / wd).exp(), max_relative = 1e-12);
        // Per-period decay for Q = 3.5 is close to e^{-π/Q}.
        assert_relative_eq!(s.phi, (-PI / 3.5f64).exp(), max_relative = 0.011);
        assert_relative_eq!((-PI / 3.5f64).exp(), 0.407, epsilon = 1e-3);

        let mut undamped = p.clone();
        undamped.undamped = true;
        let s = analytic_constant_r(&undamped, 11.9, 1.0, init, 7.0).unwrap();
        assert_relative_eq!(s.phi, (w * 7.0).cos(), epsilon = 1e-14);

        let overdamped = ring_params(0.4);
        assert!(matches!(
            analytic_constant_r(&overdamped, 11.9, 1.0, init, 1.0),
            Err(Error::OverdampedUnsupported(_))
        ));
    }

    #[test]
    fn accumulated_phase_basics() {
        let p = ModelParams::table_contraction();
        let ring = RampProfile::constant(20.0);
        let atoms = AtomSeries::constant(1.0);
        assert_eq!(accumulated_phase(&p, &ring, &atoms, 0.0), p.phi_0);
        assert_relative_eq!(
            accumulated_phase(&p, &ring, &atoms, 33.0),
            p.phi_0 + p.omega(20.0, 1.0) * 33.0,
            max_relative = 1e-12
        );
        let ramp = RampProfile::new(38.4, 11.9, 40.0, 3.6).unwrap();
        let coarse = phase_integral(&p, &ramp, &atoms, 0.0, 80.0, PHASE_PANELS);
        let fine = phase_integral(&p, &ramp, &atoms, 0.0, 80.0, 2 * PHASE_PANELS);
        assert_relative_eq!(coarse, fine, max_relative = 1e-8);
    }

    #[test]
    fn wronskian_of_unit_pair() {
        let mut p = ModelParams::table_contraction();
        p.undamped = true;
        let ring = RampProfile::constant(25.0);
        let grid = uniform_grid(0.0, 100.0, 1.0);
        let w = wronskian_invariant(
            &p,
            &ring,
            PhononState::new(1.0, 0.0, 0.0),
            PhononState::new(0.0, 1.0, 0.0),
            &grid,
        )
        .unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-8));
        p.undamped = false;
        assert!(wronskian_invariant(
            &p,
            &ring,
            PhononState::new(1.0, 0.0, 0.0),
            PhononState::new(0.0, 1.0, 0.0),
            &grid
        )
        .is_err());
    }

    #[test]
    fn atom_jumps_are_respected() {
        let p = ring_params(5.0);
        let ring = RampProfile::constant(11.9);
        let atoms = AtomSeries::new(vec![0.0, 40.0], vec![1.0, 0.8]).unwrap();
        let init = PhononState::new(1.0, 0.0, 0.0);
        let grid = uniform_grid(0.0, 80.0, 2.0);
        let traj = integrate(&p, &ring, &atoms, init, &grid).unwrap();
        let mid = analytic_constant_r(&p, 11.9, 1.0, init, 40.0).unwrap();
        let end = analytic_constant_r(&p, 11.9, 0.8, mid, 80.0).unwrap();
        assert!((traj.phi[40] - end.phi).abs() < 1e-8);
        assert_relative_eq!(traj.omega_inst[40], p.omega(11.9, 0.8));
    }
}
