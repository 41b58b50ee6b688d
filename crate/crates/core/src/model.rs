//! Physical parameters, the error-function radius ramp and the static
//! scaling laws (sound speed, mode frequency, quality factor) that feed the
//! phonon equation of motion.
//!
//! Units are fixed throughout the crate: micrometers, milliseconds,
//! micrometers per millisecond, radians per millisecond.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to the linearly extrapolated quality factor.
pub const MIN_QUALITY_FACTOR: f64 = 0.5;

/// Inverse error function, solved by Newton iteration on `libm::erf` to 1e-12.
pub fn erfinv(y: f64) -> f64 {
    assert!(y > -1.0 && y < 1.0, "erfinv argument {y} outside (-1, 1)");
    if y == 0.0 {
        return 0.0;
    }
    // Winitzki's approximation as a starting point.
    let a = 0.147;
    let ln = (1.0 - y * y).ln();
    let t = 2.0 / (std::f64::consts::PI * a) + ln / 2.0;
    let mut x = y.signum() * ((t * t - ln / a).sqrt() - t).sqrt();
    let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
    for _ in 0..50 {
        let f = libm::erf(x) - y;
        let step = f / (two_over_sqrt_pi * (-x * x).exp());
        x -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    x
}

/// Error-function radius schedule `R(t)` between two fixed radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampProfile {
    #[serde(rename = "R_start")]
    pub r_start: f64,
    #[serde(rename = "R_end")]
    pub r_end: f64,
    /// Midpoint of the erf, where half the radius change has happened.
    pub t_mid: f64,
    pub rise_10_90: f64,
}

impl RampProfile {
    pub fn new(r_start: f64, r_end: f64, t_mid: f64, rise_10_90: f64) -> Result<Self> {
        let profile = Self {
            r_start,
            r_end,
            t_mid,
            rise_10_90,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Builds a ramp from the time its 10% point is reached.
    pub fn from_start_time(r_start: f64, r_end: f64, t_i: f64, rise_10_90: f64) -> Result<Self> {
        Self::new(r_start, r_end, t_i + rise_10_90 / 2.0, rise_10_90)
    }

    /// A ring held at fixed radius.
    pub fn constant(radius: f64) -> Self {
        Self {
            r_start: radius,
            r_end: radius,
            t_mid: 0.0,
            rise_10_90: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r_start > 0.0
            && self.r_end > 0.0
            && self.rise_10_90 > 0.0
            && self.t_mid.is_finite()
            && self.r_start.is_finite()
            && self.r_end.is_finite()
            && self.rise_10_90.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid ramp profile {self:?}")))
        }
    }

    pub fn is_constant(&self) -> bool {
        self.r_start == self.r_end
    }

    /// Width of the erf argument, `rise_10_90 / (2 erfinv(0.8))`.
    pub fn tau(&self) -> f64 {
        self.rise_10_90 / (2.0 * erfinv(0.8))
    }

    /// The 10% point of the ramp (`t_mid - rise_10_90 / 2`).
    pub fn t_i(&self) -> f64 {
        self.t_mid - self.rise_10_90 / 2.0
    }

    pub fn radius(&self, t: f64) -> f64 {
        if self.is_constant() {
            return self.r_start;
        }
        let x = (t - self.t_mid) / self.tau();
        // erfc from the nearer end keeps both limits exact.
        let span = self.r_end - self.r_start;
        if x < 0.0 {
            self.r_start + span * 0.5 * libm::erfc(-x)
        } else {
            self.r_end - span * 0.5 * libm::erfc(x)
        }
    }

    pub fn radius_rate(&self, t: f64) -> f64 {
        if self.is_constant() {
            return 0.0;
        }
        let tau = self.tau();
        let x = (t - self.t_mid) / tau;
        (self.r_end - self.r_start) / (tau * std::f64::consts::PI.sqrt()) * (-x * x).exp()
    }

    /// `Ṙ/R` in ms⁻¹.
    pub fn hubble_rate(&self, t: f64) -> f64 {
        self.radius_rate(t) / self.radius(t)
    }

    /// Time at which the ramp has covered `fraction` of the radius change.
    pub fn completion_time(&self, fraction: f64) -> f64 {
        self.t_mid + self.tau() * erfinv(2.0 * fraction - 1.0)
    }

    /// Argmax of `|Ṙ/R|`, by golden-section search on `t_mid ± 4τ`.
    pub fn peak_time(&self) -> Result<f64> {
        if self.is_constant() {
            return Err(Error::NoRamp);
        }
        let tau = self.tau();
        let f = |t: f64| -self.hubble_rate(t).abs();
        Ok(golden_section_min(
            f,
            self.t_mid - 4.0 * tau,
            self.t_mid + 4.0 * tau,
            1e-6,
        ))
    }

    /// The same schedule run backwards in radius.
    pub fn mirrored(&self) -> Self {
        Self {
            r_start: self.r_end,
            r_end: self.r_start,
            ..*self
        }
    }
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Relative atom number as a step-interpolated series.
///
/// The value at `t` is the sample at the last time `<= t`; before the first
/// sample the first value applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl AtomSeries {
    pub fn constant(value: f64) -> Self {
        Self {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let series = Self { times, values };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.values.len() {
            return Err(Error::invalid("atom series needs matching, non-empty times and values"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("atom series times must be strictly increasing"));
        }
        if self.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("atom series values must be positive"));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        self.values[idx.saturating_sub(1)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Times strictly inside `(t0, t1)` where the value may jump.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> impl Iterator<Item = f64> + '_ {
        (1..self.times.len())
            .filter(|&i| self.values[i] != self.values[i - 1])
            .map(|i| self.times[i])
            .filter(move |&t| t > t0 && t < t1)
    }
}

fn default_m() -> u32 {
    1
}

fn default_n_ref() -> f64 {
    1.0
}

/// Physical and fit parameters of the phonon model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Strength multiplying `Ṙ/R` in the friction term.
    #[serde(rename = "gamma_H")]
    pub gamma_h: f64,
    /// Volume exponent, `V ∝ R^alpha`.
    pub alpha: f64,
    #[serde(rename = "Q_i")]
    pub q_i: f64,
    #[serde(rename = "Q_f")]
    pub q_f: f64,
    /// Sound speed at `R_i_ref` and `N_ref`, μm/ms.
    pub c_theta_i: f64,
    /// Initial density-perturbation envelope.
    pub dn_i: f64,
    /// Initial temporal phase.
    pub phi_0: f64,
    /// Azimuthal offset angle.
    pub dtheta: f64,
    #[serde(default = "default_m")]
    pub m: u32,
    #[serde(rename = "R_i_ref")]
    pub r_i_ref: f64,
    #[serde(rename = "R_f_ref")]
    pub r_f_ref: f64,
    #[serde(rename = "N_ref", default = "default_n_ref")]
    pub n_ref: f64,
    /// Switches off the phenomenological damping (`gamma = 0`).
    #[serde(default)]
    pub undamped: bool,
}

impl ModelParams {
    /// Best-fit contraction values, 38.4 μm → 11.9 μm.
    pub fn table_contraction() -> Self {
        Self {
            gamma_h: 0.36,
            alpha: 0.52,
            q_i: 7.8,
            q_f: 3.5,
            c_theta_i: 4.36,
            dn_i: 4.50,
            phi_0: 0.0,
            dtheta: 0.0,
            m: 1,
            r_i_ref: 38.4,
            r_f_ref: 11.9,
            n_ref: 1.0,
            undamped: false,
        }
    }

    /// Best-fit expansion values, 11.9 μm → 38.4 μm.
    pub fn table_expansion() -> Self {
        Self {
            gamma_h: 0.28,
            alpha: 0.47,
            q_i: 3.5,
            q_f: 4.4,
            c_theta_i: 5.42,
            dn_i: 7.47,
            phi_0: 0.0,
            dtheta: 0.0,
            m: 1,
            r_i_ref: 11.9,
            r_f_ref: 38.4,
            n_ref: 1.0,
            undamped: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gamma_h,
            self.alpha,
            self.q_i,
            self.q_f,
            self.c_theta_i,
            self.dn_i,
            self.phi_0,
            self.dtheta,
            self.r_i_ref,
            self.r_f_ref,
            self.n_ref,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if !self.undamped && (self.q_i <= 0.0 || self.q_f <= 0.0) {
            return Err(Error::InvalidDamping(self.q_i.min(self.q_f)));
        }
        if self.c_theta_i <= 0.0 {
            return Err(Error::invalid("c_theta_i must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::invalid(format!("alpha = {} outside (0, 2)", self.alpha)));
        }
        if self.m == 0 {
            return Err(Error::invalid("mode number m must be >= 1"));
        }
        if self.r_i_ref <= 0.0 || self.r_f_ref <= 0.0 || self.n_ref <= 0.0 {
            return Err(Error::invalid("reference radii and atom number must be positive"));
        }
        Ok(())
    }

    /// `c_θ = c_theta_i (R/R_i_ref)^(-α/2) (N/N_ref)^(α/2)`.
    pub fn speed_of_sound(&self, radius: f64, atoms: f64) -> f64 {
        let half = 0.5 * self.alpha;
        self.c_theta_i * (radius / self.r_i_ref).powf(-half) * (atoms / self.n_ref).powf(half)
    }

    /// Mode angular frequency `m c_θ / R`.
    pub fn omega(&self, radius: f64, atoms: f64) -> f64 {
        f64::from(self.m) * self.speed_of_sound(radius, atoms) / radius
    }

    /// Quality factor interpolated linearly in `R`, clamped at [`MIN_QUALITY_FACTOR`].
    pub fn quality_factor(&self, radius: f64) -> Result<f64> {
        if self.q_i <= 0.0 || self.q_f <= 0.0 || !self.q_i.is_finite() || !self.q_f.is_finite() {
            return Err(Error::InvalidDamping(self.q_i.min(self.q_f)));
        }
        let span = self.r_f_ref - self.r_i_ref;
        let q = if span == 0.0 {
            self.q_i
        } else {
            self.q_i + (self.q_f - self.q_i) * (radius - self.r_i_ref) / span
        };
        if q.is_nan() {
            return Err(Error::InvalidDamping(q));
        }
        Ok(q.max(MIN_QUALITY_FACTOR))
    }

    /// Phenomenological damping rate `γ = ω / 2Q`; zero when undamped.
    pub fn gamma(&self, radius: f64, atoms: f64) -> Result<f64> {
        if self.undamped {
            return Ok(0.0);
        }
        Ok(self.omega(radius, atoms) / (2.0 * self.quality_factor(radius)?))
    }

    /// Density perturbation from the phase rate, `δn = -R^α ∂tδφ`.
    pub fn density_from_phase(&self, radius: f64, dphi_dt: f64) -> f64 {
        -radius.powf(self.alpha) * dphi_dt
    }

    /// Inverse of [`density_from_phase`](Self::density_from_phase).
    pub fn phase_rate_from_density(&self, radius: f64, dn: f64) -> f64 {
        -dn / radius.powf(self.alpha)
    }
}

/// Phase-field amplitude and its rate at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononState {
    pub phi: f64,
    pub dphi_dt: f64,
    pub t: f64,
}

impl PhononState {
    pub fn new(phi: f64, dphi_dt: f64, t: f64) -> Self {
        Self { phi, dphi_dt, t }
    }

    /// State whose density perturbation starts as `A e^{-γt} cos(ω_d t + phase)`
    /// for the ring at `t`, with `amplitude` the envelope `A`.
    ///
    /// Exact for a ring at rest; the same convention is used by synthesis,
    /// fitting and analysis.
    pub fn from_density(
        params: &ModelParams,
        profile: &RampProfile,
        atoms: f64,
        amplitude: f64,
        phase: f64,
        t: f64,
    ) -> Result<Self> {
        let radius = profile.radius(t);
        let omega = params.omega(radius, atoms);
        let gamma = params.gamma(radius, atoms)?;
        let omega_d_sq = omega * omega - gamma * gamma;
        if omega_d_sq <= 0.0 {
            return Err(Error::OverdampedUnsupported(omega / (2.0 * gamma)));
        }
        let omega_d = omega_d_sq.sqrt();
        let scale = radius.powf(params.alpha);
        let (s, c) = phase.sin_cos();
        let dphi_dt = -amplitude * c / scale;
        let phi = -amplitude * (omega_d * s - gamma * c) / (scale * omega * omega);
        Ok(Self { phi, dphi_dt, t })
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.dphi_dt.is_finite() && self.t.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn contraction(t_mid: f64) -> RampProfile {
        RampProfile::new(38.4, 11.9, t_mid, 3.6).unwrap()
    }

    #[test]
    fn erfinv_inverts_erf() {
        for &y in &[-0.999, -0.8, -0.1, 0.0, 0.3, 0.8, 0.98, 0.99999] {
            assert_relative_eq!(libm::erf(erfinv(y)), y, epsilon = 1e-12);
        }
        assert_relative_eq!(erfinv(0.8), 0.906_193_802_436_823, epsilon = 1e-12);
    }

    #[test]
    fn radius_midpoint_and_constant() {
        let p = RampProfile::new(11.9, 38.4, 20.0, 3.6).unwrap();
        assert_relative_eq!(p.radius(20.0), 25.15, epsilon = 1e-12);
        let c = RampProfile::new(38.4, 38.4, 20.0, 3.6).unwrap();
        for t in [-100.0, 0.0, 20.0, 1e3] {
            assert_eq!(c.radius(t), 38.4);
            assert_eq!(c.radius_rate(t), 0.0);
            assert_eq!(c.hubble_rate(t), 0.0);
        }
    }

    #[test]
    fn rise_time_hits_ninety_percent() {
        let p = RampProfile::new(11.9, 38.4, 20.0, 3.6).unwrap();
        let frac = |t: f64| (p.radius(t) - 11.9) / (38.4 - 11.9);
        assert_relative_eq!(frac(21.8), 0.9, epsilon = 1e-11);
        assert_relative_eq!(frac(18.2), 0.1, epsilon = 1e-11);
        // Bisection on the erf expression lands on the same time.
        let (mut lo, mut hi) = (20.0, 30.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if frac(mid) < 0.9 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(lo, 21.8, epsilon = 1e-9);
        assert_relative_eq!(p.t_i(), 18.2, epsilon = 1e-12);
        assert_relative_eq!(p.completion_time(0.9), 21.8, epsilon = 1e-10);
    }

    #[test]
    fn radius_rate_peak_matches_closed_form() {
        let p = contraction(40.0);
        let tau = p.tau();
        let peak = (11.9 - 38.4) / (tau * std::f64::consts::PI.sqrt());
        assert_relative_eq!(p.radius_rate(40.0), peak, epsilon = 1e-14);
        assert!((peak.abs() - 7.5).abs() < 0.05, "peak |Ṙ| = {peak}");
    }

    #[test]
    fn radius_rate_matches_finite_difference() {
        let p = contraction(40.0);
        let h = 1e-4;
        let tau = p.tau();
        let mut t = 40.0 - 3.0 * tau;
        while t <= 40.0 + 3.0 * tau {
            let fd = (p.radius(t + h) - p.radius(t - h)) / (2.0 * h);
            assert_relative_eq!(fd, p.radius_rate(t), max_relative = 1e-6);
            t += 0.01;
        }
    }

    #[test]
    fn peak_time_sides() {
        let c = contraction(40.0);
        let e = c.mirrored();
        assert!(c.peak_time().unwrap() > 40.0);
        assert!(e.peak_time().unwrap() < 40.0);
        assert!(matches!(RampProfile::constant(20.0).peak_time(), Err(Error::NoRamp)));
    }

    #[test]
    fn peak_time_beats_dense_scan() {
        for p in [contraction(40.0), contraction(40.0).mirrored()] {
            let tp = p.peak_time().unwrap();
            let best = p.hubble_rate(tp).abs();
            let tau = p.tau();
            let (a, b) = (40.0 - 6.0 * tau, 40.0 + 6.0 * tau);
            let mut scan_arg = a;
            let mut scan_max = 0.0;
            for i in 0..=10_000 {
                let t = a + (b - a) * i as f64 / 10_000.0;
                let v = p.hubble_rate(t).abs();
                assert!(best >= v - 1e-12, "t = {t}");
                if v > scan_max {
                    scan_max = v;
                    scan_arg = t;
                }
            }
            assert!((scan_arg - tp).abs() < 2.0 * (b - a) / 10_000.0);
        }
    }

    #[test]
    fn mirrored_hubble_rates_match_at_equal_radii() {
        let c = contraction(40.0);
        let e = c.mirrored();
        for s in [-3.0, -1.0, -0.2, 0.0, 0.5, 2.0] {
            let rc = c.radius(40.0 + s);
            // The expanding ring reaches the same radius at the mirrored time.
            let re = e.radius(40.0 - s);
            assert_relative_eq!(rc, re, max_relative = 1e-13);
            assert_relative_eq!(
                c.hubble_rate(40.0 + s).abs(),
                e.hubble_rate(40.0 - s).abs(),
                max_relative = 1e-12
            );
            assert_relative_eq!(e.radius(40.0 + s) + rc, 11.9 + 38.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn scaling_laws() {
        let p = ModelParams::table_contraction();
        assert_eq!(p.speed_of_sound(38.4, 1.0), 4.36);
        assert_relative_eq!(
            p.speed_of_sound(11.9, 1.0),
            4.36 * (11.9f64 / 38.4).powf(-0.26),
            max_relative = 1e-14
        );
        assert_relative_eq!(p.speed_of_sound(11.9, 1.0), 5.9125, epsilon = 1e-3);

        let mut e = ModelParams::table_expansion();
        assert_relative_eq!(e.omega(11.9, 1.0), 0.4555, epsilon = 1e-4);
        e.m = 2;
        assert_relative_eq!(e.omega(11.9, 1.0), 2.0 * 5.42 / 11.9, max_relative = 1e-14);

        // ω ∝ R^(-1-α/2) at fixed N.
        let ratio = p.omega(20.0, 1.0) / p.omega(30.0, 1.0);
        assert_relative_eq!(ratio, (20.0f64 / 30.0).powf(-1.26), max_relative = 1e-13);
    }

    #[test]
    fn quality_factor_interpolates_and_clamps() {
        let p = ModelParams::table_contraction();
        assert_relative_eq!(p.quality_factor(38.4).unwrap(), 7.8, epsilon = 1e-14);
        assert_relative_eq!(p.quality_factor(11.9).unwrap(), 3.5, epsilon = 1e-14);
        assert_relative_eq!(p.quality_factor(25.15).unwrap(), 5.65, epsilon = 1e-12);
        // Far extrapolation clamps.
        assert_eq!(p.quality_factor(-100.0).unwrap(), MIN_QUALITY_FACTOR);
        for r in [11.0, 20.0, 40.0] {
            let g = p.gamma(r, 1.0).unwrap();
            assert_relative_eq!(g * 2.0 * p.quality_factor(r).unwrap() / p.omega(r, 1.0), 1.0);
        }
        let mut bad = p.clone();
        bad.q_f = -1.0;
        assert!(matches!(bad.quality_factor(20.0), Err(Error::InvalidDamping(_))));
    }

    #[test]
    fn density_from_phase_sign_and_alpha() {
        let mut p = ModelParams::table_contraction();
        assert_eq!(p.density_from_phase(20.0, 0.0), 0.0);
        assert!(p.density_from_phase(20.0, 0.3) < 0.0);
        p.alpha = 1e-300;
        assert_relative_eq!(p.density_from_phase(20.0, 0.3), p.density_from_phase(35.0, 0.3));
    }

    #[test]
    fn atom_series_steps() {
        let s = AtomSeries::new(vec![0.0, 10.0, 20.0], vec![1.0, 0.9, 0.8]).unwrap();
        assert_eq!(s.at(-5.0), 1.0);
        assert_eq!(s.at(0.0), 1.0);
        assert_eq!(s.at(9.999), 1.0);
        assert_eq!(s.at(10.0), 0.9);
        assert_eq!(s.at(100.0), 0.8);
        assert_eq!(s.breakpoints(0.0, 15.0).collect::<Vec<_>>(), vec![10.0]);
        assert!(AtomSeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(AtomSeries::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn initial_state_reproduces_density_convention() {
        let p = ModelParams::table_contraction();
        let ring = RampProfile::constant(38.4);
        let s = PhononState::from_density(&p, &ring, 1.0, 2.0, 0.7, 0.0).unwrap();
        assert_relative_eq!(
            p.density_from_phase(38.4, s.dphi_dt),
            2.0 * 0.7f64.cos(),
            epsilon = 1e-14
        );
    }
}
