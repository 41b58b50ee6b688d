//! Plain-text and JSON renderings of fit results.

use std::fmt::Write as _;

use serde::Serialize;

use crate::fit::global::{FitEnsemble, FitResult};
use crate::fit::params::GLOBAL_NAMES;

fn parameter_table(out: &mut String, result: &FitResult, all: bool) {
    let rows = if all { result.names.len() } else { 6 };
    let _ = writeln!(out, "  {:<14} {:>16} {:>14}", "name", "value", "sigma");
    for i in 0..rows {
        let _ = writeln!(
            out,
            "  {:<14} {:>16.9e} {:>14.6e}",
            result.names[i], result.values[i], result.sigma[i]
        );
    }
}

fn fit_summary(out: &mut String, result: &FitResult) {
    let _ = writeln!(out, "variant: {}", result.variant);
    let _ = writeln!(
        out,
        "residuals: {}  free parameters: {}  dof: {}",
        result.n_residuals, result.n_free, result.dof
    );
    let _ = writeln!(
        out,
        "chi2: {:.9e}  chi2/dof: {:.9e}",
        result.chi2,
        result.chi2 / result.dof as f64
    );
    let _ = writeln!(
        out,
        "converged: {}  termination: {:?}  iterations: {}  evaluations: {}",
        result.converged, result.termination, result.iterations, result.n_evals
    );
}

/// Report of one variant, listing every free parameter.
pub fn render_fit(result: &FitResult) -> String {
    let mut out = String::new();
    fit_summary(&mut out, result);
    parameter_table(&mut out, result, true);
    out
}

/// Variant matrix of the globals followed by the combined values.
pub fn render_ensemble(ensemble: &FitEnsemble) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# variants");
    let _ = write!(out, "{:<36} {:>6} {:>6} {:>14}", "variant", "free", "dof", "chi2/dof");
    for name in GLOBAL_NAMES {
        let _ = write!(out, " {name:>12}");
    }
    let _ = writeln!(out, " converged");
    for r in &ensemble.per_variant {
        let _ = write!(
            out,
            "{:<36} {:>6} {:>6} {:>14.6e}",
            r.variant.label(),
            r.n_free,
            r.dof,
            r.chi2 / r.dof as f64
        );
        for v in &r.values[..6] {
            let _ = write!(out, " {v:>12.6}");
        }
        let _ = writeln!(out, " {}", r.converged);
    }
    let _ = writeln!(out, "\n# combined");
    let _ = writeln!(
        out,
        "{:<14} {:>14} {:>14} {:>14} {:>14}",
        "name", "mean", "spread", "mean_sigma", "combined"
    );
    let rows = [
        ensemble.mean.to_array(),
        ensemble.spread.to_array(),
        ensemble.mean_sigma.to_array(),
        ensemble.combined_sigma.to_array(),
    ];
    for (i, name) in GLOBAL_NAMES.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<14} {:>14.8} {:>14.6e} {:>14.6e} {:>14.6e}",
            name, rows[0][i], rows[1][i], rows[2][i], rows[3][i]
        );
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("fit results serialize");
    s.push('\n');
    s
}
