//! Slice fits, the shared-parameter global fit and the variant ensemble.

pub mod global;
pub mod guess;
pub mod lm;
pub mod params;
pub mod report;
pub mod slice;

pub use global::{
    ensemble_fit, estimate_noise, global_fit, numeric_jacobian, residuals, FitEnsemble,
    FitOptions, FitResult, GlobalProblem,
};
pub use guess::initial_guess;
pub use lm::{levenberg_marquardt, Bounds, LeastSquares, LmOptions, LmReport, Termination};
pub use params::{FitVariant, Globals, Layout, ParamVector};
pub use slice::{signed_amplitude, slice_fit, slice_fit_mode, SliceFit};
