//! Shared-parameter fit of the phonon model to every trace of a dataset.

use std::cell::RefCell;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::lm::{self, fd_step, Bounds, LeastSquares, LmOptions, Termination};
use crate::fit::params::{FitVariant, Globals, Layout, ParamRole, ParamVector};
use crate::fit::params::wrap_angle;
use crate::fit::slice::slice_rss;
use crate::model::{AtomSeries, ModelParams};
use crate::synth::{theta_grid, Dataset, TraceBasis};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub lm: LmOptions,
    /// Relative uncertainty assumed for each trace's mean atom number when
    /// a per-trace atom number is fitted.
    pub atom_prior_sigma: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            atom_prior_sigma: 0.03,
        }
    }
}

/// Per-cell noise level, from the scatter left after fitting a sinusoid to
/// every slice.
pub fn estimate_noise(dataset: &Dataset) -> f64 {
    let m = dataset.meta.m;
    let (mut rss, mut dof) = (0.0, 0usize);
    for trace in &dataset.traces {
        for slice in trace.matrix.slices() {
            rss += slice_rss(slice, m);
            dof += slice.len().saturating_sub(2);
        }
    }
    if dof == 0 {
        0.0
    } else {
        (rss / dof as f64).sqrt()
    }
}

/// Base model parameters carrying the dataset's reference values.
pub(crate) fn base_params(dataset: &Dataset) -> ModelParams {
    let mut p = ModelParams::table_contraction();
    p.r_i_ref = dataset.meta.r_i_ref;
    p.r_f_ref = dataset.meta.r_f_ref;
    p.n_ref = dataset.meta.n_ref;
    p.m = dataset.meta.m;
    p.phi_0 = 0.0;
    p.dtheta = 0.0;
    p
}

pub struct GlobalProblem<'a> {
    dataset: &'a Dataset,
    layout: Layout,
    base: ModelParams,
    offsets: Vec<usize>,
    n_cells: usize,
    trace_means: Vec<f64>,
    prior_weight: f64,
    bounds: Bounds,
    thetas: Vec<Vec<f64>>,
    cache: RefCell<Option<(Vec<f64>, Vec<TraceBasis>)>>,
}

impl<'a> GlobalProblem<'a> {
    pub fn new(dataset: &'a Dataset, variant: FitVariant, opts: &FitOptions) -> Result<Self> {
        if dataset.traces.is_empty() {
            return Err(Error::invalid("dataset has no traces"));
        }
        if dataset.ramp_kind().is_none() {
            return Err(Error::invalid(
                "expansions and contractions must be fitted separately",
            ));
        }
        let layout = Layout::new(variant, dataset.traces.len());
        let mut offsets = Vec::with_capacity(dataset.traces.len());
        let mut n_cells = 0;
        for t in &dataset.traces {
            offsets.push(n_cells);
            n_cells += t.matrix.values.len();
        }
        let scale = dataset
            .traces
            .iter()
            .flat_map(|t| t.matrix.values.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        // The prior pins the atom-number gauge; on clean data the noise
        // estimate vanishes, so keep a floor tied to the signal size.
        let noise = estimate_noise(dataset).max(1e-3 * scale);
        Ok(Self {
            dataset,
            layout,
            base: base_params(dataset),
            offsets,
            n_cells,
            trace_means: dataset.traces.iter().map(|t| t.spec.n_series.mean()).collect(),
            prior_weight: noise / opts.atom_prior_sigma,
            bounds: layout.bounds(),
            thetas: dataset
                .traces
                .iter()
                .map(|t| theta_grid(t.spec.theta_bins))
                .collect(),
            cache: RefCell::new(None),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn trace_means(&self) -> &[f64] {
        &self.trace_means
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_residuals(&self) -> usize {
        self.n_cells + self.layout.n_atoms()
    }

    fn atoms(&self, pv: &ParamVector, k: usize) -> AtomSeries {
        if self.layout.variant.time_resolved_n {
            self.dataset.traces[k].spec.n_series.clone()
        } else {
            AtomSeries::constant(pv.n_scale[k])
        }
    }

    fn basis(&self, pv: &ParamVector, k: usize) -> Result<TraceBasis> {
        let params = pv.globals.apply(&self.base);
        let spec = &self.dataset.traces[k].spec;
        TraceBasis::compute(&params, &spec.profile, &self.atoms(pv, k), &spec.t_samples)
    }

    /// Bases for every trace, reusing the last set when the parameters that
    /// enter the dynamics are unchanged.
    fn bases(&self, pv: &ParamVector) -> Result<Vec<TraceBasis>> {
        let g = pv.globals;
        let mut key = vec![g.gamma_h, g.alpha, g.q_i, g.q_f, g.c_theta_i];
        key.extend(&pv.n_scale);
        if let Some((k, b)) = self.cache.borrow().as_ref() {
            if *k == key {
                return Ok(b.clone());
            }
        }
        let bases = (0..self.dataset.traces.len())
            .map(|k| self.basis(pv, k))
            .collect::<Result<Vec<_>>>()?;
        *self.cache.borrow_mut() = Some((key, bases.clone()));
        Ok(bases)
    }

    fn trace_block(&self, pv: &ParamVector, k: usize, basis: &TraceBasis, out: &mut [f64]) {
        let trace = &self.dataset.traces[k];
        let dn = basis.envelope(pv.globals.dn_i, pv.phi_0_of(k));
        let m = f64::from(self.base.m);
        let dtheta = pv.dtheta_of(k);
        let angular: Vec<f64> = self.thetas[k].iter().map(|th| (m * th + dtheta).sin()).collect();
        let n_theta = angular.len();
        for (kt, d) in dn.iter().enumerate() {
            let row = &trace.matrix.values[kt * n_theta..(kt + 1) * n_theta];
            let dst = &mut out[kt * n_theta..(kt + 1) * n_theta];
            for j in 0..n_theta {
                dst[j] = d * angular[j] - row[j];
            }
        }
    }

    fn block_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.dataset.traces[k].matrix.values.len()
    }

    fn prior(&self, pv: &ParamVector, k: usize) -> f64 {
        self.prior_weight * (pv.n_scale[k] / self.trace_means[k] - 1.0)
    }

    /// Model minus data for every cell, trace-major, without prior rows.
    pub fn cell_residuals(&self, pv: &ParamVector) -> Result<Vec<f64>> {
        let bases = self.bases(pv)?;
        let mut out = vec![0.0; self.n_cells];
        for (k, basis) in bases.iter().enumerate() {
            let range = self.block_range(k);
            self.trace_block(pv, k, basis, &mut out[range]);
        }
        Ok(out)
    }
}

impl LeastSquares for GlobalProblem<'_> {
    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pv = self.layout.unflatten(x);
        let mut out = self.cell_residuals(&pv)?;
        for k in 0..self.layout.n_atoms() {
            out.push(self.prior(&pv, k));
        }
        Ok(out)
    }

    /// Forward differences, re-integrating only the traces a parameter
    /// reaches. Columns equal plain forward differences of `residuals`.
    fn jacobian(&self, x: &[f64], r: &[f64]) -> Result<DMatrix<f64>> {
        let pv = self.layout.unflatten(x);
        let bases = self.bases(&pv)?;
        let n_traces = self.dataset.traces.len();
        let mut jac = DMatrix::zeros(r.len(), x.len());
        let mut block = Vec::new();
        let mut xp = x.to_vec();
        for p in 0..x.len() {
            let h = fd_step(x[p], self.bounds.upper[p]);
            xp[p] = x[p] + h;
            let pvp = self.layout.unflatten(&xp);
            xp[p] = x[p];
            let role = self.layout.role(p);
            let traces: Vec<usize> = match role {
                ParamRole::Dynamic | ParamRole::Amplitude => (0..n_traces).collect(),
                ParamRole::Phase(None) | ParamRole::Offset(None) => (0..n_traces).collect(),
                ParamRole::Phase(Some(k)) | ParamRole::Offset(Some(k)) | ParamRole::Atoms(k) => {
                    vec![k]
                }
            };
            let mut column = jac.column_mut(p);
            for k in traces {
                let fresh;
                let basis = match role {
                    ParamRole::Dynamic | ParamRole::Atoms(_) => {
                        fresh = self.basis(&pvp, k)?;
                        &fresh
                    }
                    _ => &bases[k],
                };
                let range = self.block_range(k);
                block.resize(range.len(), 0.0);
                self.trace_block(&pvp, k, basis, &mut block);
                for (i, v) in range.zip(&block) {
                    column[i] = (v - r[i]) / h;
                }
            }
            if let ParamRole::Atoms(k) = role {
                let row = self.n_cells + k;
                column[row] = (self.prior(&pvp, k) - r[row]) / h;
            }
        }
        Ok(jac)
    }
}

/// Residuals (model minus data) of `pv` on every cell of `dataset`.
pub fn residuals(pv: &ParamVector, dataset: &Dataset, variant: FitVariant) -> Result<Vec<f64>> {
    let problem = GlobalProblem::new(dataset, variant, &FitOptions::default())?;
    let pv = pv.adapt(problem.layout(), problem.trace_means());
    problem.cell_residuals(&pv)
}

/// Forward-difference Jacobian of the full residual vector (cells, then
/// atom-number prior rows) at `pv`.
pub fn numeric_jacobian(
    pv: &ParamVector,
    dataset: &Dataset,
    variant: FitVariant,
) -> Result<DMatrix<f64>> {
    let problem = GlobalProblem::new(dataset, variant, &FitOptions::default())?;
    let x = problem
        .layout()
        .flatten(&pv.adapt(problem.layout(), problem.trace_means()))?;
    let r = problem.residuals(&x)?;
    problem.jacobian(&x, &r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: FitVariant,
    pub names: Vec<String>,
    pub best: ParamVector,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Sum of squared residuals.
    pub chi2: f64,
    pub dof: usize,
    pub n_residuals: usize,
    pub n_free: usize,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub n_evals: usize,
}

impl FitResult {
    /// 1σ of the six globals.
    pub fn global_sigma(&self) -> Globals {
        Globals::from_array([
            self.sigma[0],
            self.sigma[1],
            self.sigma[2],
            self.sigma[3],
            self.sigma[4],
            self.sigma[5],
        ])
    }
}

pub fn global_fit(
    dataset: &Dataset,
    variant: FitVariant,
    pv0: &ParamVector,
    opts: &FitOptions,
) -> Result<FitResult> {
    let problem = GlobalProblem::new(dataset, variant, opts)?;
    let layout = *problem.layout();
    let x0 = layout.flatten(&pv0.adapt(&layout, problem.trace_means()))?;
    if problem.n_residuals() <= layout.n_free() {
        return Err(Error::Overparameterized {
            residuals: problem.n_residuals(),
            parameters: layout.n_free(),
        });
    }
    let mut report = lm::levenberg_marquardt(&problem, &x0, problem.bounds(), &opts.lm)?;
    let n = layout.n_free();
    for p in 6..6 + layout.n_phi() + layout.n_dtheta() {
        report.x[p] = wrap_angle(report.x[p]);
    }
    let covariance: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| report.covariance[(i, j)]).collect())
        .collect();
    let sigma = (0..n).map(|i| report.covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        variant,
        names: layout.names(),
        best: layout.unflatten(&report.x),
        values: report.x.clone(),
        sigma,
        covariance,
        chi2: report.cost,
        dof: report.dof,
        n_residuals: report.residuals.len(),
        n_free: n,
        converged: report.converged,
        termination: report.termination,
        iterations: report.iterations,
        n_evals: report.residual_evals + report.jacobian_evals * n,
    })
}

/// Results of all eight variants and their combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEnsemble {
    pub per_variant: Vec<FitResult>,
    /// Mean of the variants' globals.
    pub mean: Globals,
    /// Standard deviation of the globals across variants.
    pub spread: Globals,
    /// Mean of the variants' 1σ.
    pub mean_sigma: Globals,
    /// `sqrt(spread² + mean_sigma²)`.
    pub combined_sigma: Globals,
}

impl FitEnsemble {
    pub fn combine(per_variant: Vec<FitResult>) -> Self {
        let n = per_variant.len() as f64;
        let mut mean = [0.0; 6];
        let mut mean_sigma = [0.0; 6];
        for r in &per_variant {
            for i in 0..6 {
                mean[i] += r.values[i] / n;
                mean_sigma[i] += r.sigma[i] / n;
            }
        }
        let mut spread = [0.0; 6];
        if per_variant.len() > 1 {
            for r in &per_variant {
                for i in 0..6 {
                    spread[i] += (r.values[i] - mean[i]).powi(2) / (n - 1.0);
                }
            }
        }
        let spread = spread.map(f64::sqrt);
        let mut combined = [0.0; 6];
        for i in 0..6 {
            combined[i] = spread[i].hypot(mean_sigma[i]);
        }
        Self {
            per_variant,
            mean: Globals::from_array(mean),
            spread: Globals::from_array(spread),
            mean_sigma: Globals::from_array(mean_sigma),
            combined_sigma: Globals::from_array(combined),
        }
    }

    pub fn all_converged(&self) -> bool {
        self.per_variant.iter().all(|r| r.converged)
    }
}

/// Runs every variant and combines them. The first (all-shared) variant
/// starts from `pv0`; the others start from its solution.
pub fn ensemble_fit(dataset: &Dataset, pv0: &ParamVector, opts: &FitOptions) -> Result<FitEnsemble> {
    let mut results = Vec::with_capacity(8);
    let mut start = pv0.clone();
    for (i, variant) in FitVariant::all().into_iter().enumerate() {
        let result = global_fit(dataset, variant, &start, opts)?;
        if i == 0 {
            start = result.best.clone();
        }
        results.push(result);
    }
    Ok(FitEnsemble::combine(results))
}
