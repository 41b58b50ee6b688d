use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::lm::Bounds;
use crate::model::ModelParams;

/// One of the eight ways of tying phases and atom number across traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FitVariant {
    pub share_phi0: bool,
    pub share_dtheta: bool,
    /// Use each trace's measured `N(t)` series instead of fitting one
    /// relative atom number per trace.
    pub time_resolved_n: bool,
}

impl FitVariant {
    pub const ALL_SHARED: FitVariant = FitVariant {
        share_phi0: true,
        share_dtheta: true,
        time_resolved_n: false,
    };

    /// The 2×2×2 grid, in a fixed order starting with [`Self::ALL_SHARED`].
    pub fn all() -> [FitVariant; 8] {
        let mut out = [Self::ALL_SHARED; 8];
        let mut i = 0;
        for time_resolved_n in [false, true] {
            for share_phi0 in [true, false] {
                for share_dtheta in [true, false] {
                    out[i] = FitVariant {
                        share_phi0,
                        share_dtheta,
                        time_resolved_n,
                    };
                    i += 1;
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "phi0={} dtheta={} N={}",
            if self.share_phi0 { "shared" } else { "trace" },
            if self.share_dtheta { "shared" } else { "trace" },
            if self.time_resolved_n { "series" } else { "fitted" },
        )
    }

    /// Parses `all-shared`, an index `0..8`, or a label as printed by
    /// [`label`](Self::label).
    pub fn parse(s: &str) -> Result<Self> {
        if s == "all-shared" {
            return Ok(Self::ALL_SHARED);
        }
        if let Ok(i) = s.parse::<usize>() {
            return Self::all()
                .get(i)
                .copied()
                .ok_or_else(|| Error::invalid(format!("variant index {i} out of range 0..8")));
        }
        Self::all()
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fit variant `{s}`")))
    }
}

impl fmt::Display for FitVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub const GLOBAL_NAMES: [&str; 6] = ["gamma_H", "alpha", "Q_i", "Q_f", "c_theta_i", "dn_i"];

/// The six parameters shared by every trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Globals {
    #[serde(rename = "gamma_H")]
    pub gamma_h: f64,
    pub alpha: f64,
    #[serde(rename = "Q_i")]
    pub q_i: f64,
    #[serde(rename = "Q_f")]
    pub q_f: f64,
    pub c_theta_i: f64,
    pub dn_i: f64,
}

impl Globals {
    pub fn from_model(p: &ModelParams) -> Self {
        Self {
            gamma_h: p.gamma_h,
            alpha: p.alpha,
            q_i: p.q_i,
            q_f: p.q_f,
            c_theta_i: p.c_theta_i,
            dn_i: p.dn_i,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.gamma_h,
            self.alpha,
            self.q_i,
            self.q_f,
            self.c_theta_i,
            self.dn_i,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            gamma_h: a[0],
            alpha: a[1],
            q_i: a[2],
            q_f: a[3],
            c_theta_i: a[4],
            dn_i: a[5],
        }
    }

    /// Copies these values into `base`.
    pub fn apply(&self, base: &ModelParams) -> ModelParams {
        ModelParams {
            gamma_h: self.gamma_h,
            alpha: self.alpha,
            q_i: self.q_i,
            q_f: self.q_f,
            c_theta_i: self.c_theta_i,
            dn_i: self.dn_i,
            ..base.clone()
        }
    }
}

/// Fit parameters: globals plus the per-trace or shared phases and,
/// when fitted, one relative atom number per trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub globals: Globals,
    /// One entry when shared, otherwise one per trace.
    pub phi_0: Vec<f64>,
    pub dtheta: Vec<f64>,
    /// Empty when the measured series is used.
    pub n_scale: Vec<f64>,
}

impl ParamVector {
    /// Starting point for every trace from a single parameter set.
    pub fn from_model(p: &ModelParams, n_traces: usize, n_scale: Vec<f64>) -> Self {
        assert_eq!(n_scale.len(), n_traces);
        Self {
            globals: Globals::from_model(p),
            phi_0: vec![p.phi_0; n_traces],
            dtheta: vec![p.dtheta; n_traces],
            n_scale,
        }
    }

    pub fn phi_0_of(&self, trace: usize) -> f64 {
        self.phi_0[if self.phi_0.len() == 1 { 0 } else { trace }]
    }

    pub fn dtheta_of(&self, trace: usize) -> f64 {
        self.dtheta[if self.dtheta.len() == 1 { 0 } else { trace }]
    }

    /// Re-shapes to `layout`: shared angles become circular means,
    /// shared values are broadcast, missing atom numbers come from
    /// `trace_means`.
    pub fn adapt(&self, layout: &Layout, trace_means: &[f64]) -> Self {
        let n = layout.n_traces;
        let reshape = |v: &[f64], shared: bool| -> Vec<f64> {
            match (v.len() == 1, shared) {
                (_, true) => vec![circular_mean(v)],
                (true, false) => vec![v[0]; n],
                (false, false) => v.to_vec(),
            }
        };
        let n_scale = if layout.variant.time_resolved_n {
            Vec::new()
        } else if self.n_scale.len() == n {
            self.n_scale.clone()
        } else {
            trace_means.to_vec()
        };
        Self {
            globals: self.globals,
            phi_0: reshape(&self.phi_0, layout.variant.share_phi0),
            dtheta: reshape(&self.dtheta, layout.variant.share_dtheta),
            n_scale,
        }
    }
}

pub(crate) fn circular_mean(v: &[f64]) -> f64 {
    if v.len() == 1 {
        return v[0];
    }
    let (s, c) = v
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// What a flattened parameter controls; decides which trace models must
/// be re-integrated when it changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Enters the equation of motion of every trace.
    Dynamic,
    /// `dn_i`: scales every trace.
    Amplitude,
    Phase(Option<usize>),
    Offset(Option<usize>),
    /// Relative atom number of one trace.
    Atoms(usize),
}

/// Flattening order: globals, φ_0 block, δθ block, atom numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub variant: FitVariant,
    pub n_traces: usize,
}

impl Layout {
    pub fn new(variant: FitVariant, n_traces: usize) -> Self {
        Self { variant, n_traces }
    }

    pub fn n_phi(&self) -> usize {
        if self.variant.share_phi0 {
            1
        } else {
            self.n_traces
        }
    }

    pub fn n_dtheta(&self) -> usize {
        if self.variant.share_dtheta {
            1
        } else {
            self.n_traces
        }
    }

    pub fn n_atoms(&self) -> usize {
        if self.variant.time_resolved_n {
            0
        } else {
            self.n_traces
        }
    }

    pub fn n_free(&self) -> usize {
        6 + self.n_phi() + self.n_dtheta() + self.n_atoms()
    }

    pub fn role(&self, p: usize) -> ParamRole {
        let shared = |shared: bool, i: usize| if shared { None } else { Some(i) };
        match p {
            0..=4 => ParamRole::Dynamic,
            5 => ParamRole::Amplitude,
            _ => {
                let i = p - 6;
                if i < self.n_phi() {
                    return ParamRole::Phase(shared(self.variant.share_phi0, i));
                }
                let i = i - self.n_phi();
                if i < self.n_dtheta() {
                    return ParamRole::Offset(shared(self.variant.share_dtheta, i));
                }
                ParamRole::Atoms(i - self.n_dtheta())
            }
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = GLOBAL_NAMES.iter().map(|s| s.to_string()).collect();
        let block = |names: &mut Vec<String>, base: &str, n: usize| {
            if n == 1 {
                names.push(base.to_string());
            } else {
                names.extend((0..n).map(|i| format!("{base}[{i}]")));
            }
        };
        block(&mut names, "phi_0", self.n_phi());
        block(&mut names, "dtheta", self.n_dtheta());
        names.extend((0..self.n_atoms()).map(|i| format!("N[{i}]")));
        names
    }

    pub fn flatten(&self, pv: &ParamVector) -> Result<Vec<f64>> {
        if pv.phi_0.len() != self.n_phi()
            || pv.dtheta.len() != self.n_dtheta()
            || pv.n_scale.len() != self.n_atoms()
        {
            return Err(Error::invalid("parameter vector does not match the fit layout"));
        }
        let mut x = pv.globals.to_array().to_vec();
        x.extend(&pv.phi_0);
        x.extend(&pv.dtheta);
        x.extend(&pv.n_scale);
        Ok(x)
    }

    pub fn unflatten(&self, x: &[f64]) -> ParamVector {
        let (a, b) = (6 + self.n_phi(), 6 + self.n_phi() + self.n_dtheta());
        ParamVector {
            globals: Globals::from_array([x[0], x[1], x[2], x[3], x[4], x[5]]),
            phi_0: x[6..a].to_vec(),
            dtheta: x[a..b].to_vec(),
            n_scale: x[b..].to_vec(),
        }
    }

    pub fn bounds(&self) -> Bounds {
        let mut lower = vec![-2.0, 0.2, 0.5, 0.5, 1e-6, 1e-9];
        let mut upper = vec![3.0, 1.5, 50.0, 50.0, f64::INFINITY, f64::INFINITY];
        let angles = self.n_phi() + self.n_dtheta();
        lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, angles));
        upper.extend(std::iter::repeat_n(f64::INFINITY, angles));
        lower.extend(std::iter::repeat_n(0.05, self.n_atoms()));
        upper.extend(std::iter::repeat_n(20.0, self.n_atoms()));
        Bounds { lower, upper }
    }
}

/// Wraps an angle into `(-π, π]`.
pub(crate) fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
