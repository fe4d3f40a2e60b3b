pub mod design;
pub mod ols;
pub mod output;
pub mod qr;
pub mod specs;

pub use design::{DesignBuilder, INTERCEPT};
pub use ols::{cluster_cov, coefficient, contrast, fit_ols, fit_ols_with, CiMethod, Contrast, DesignMatrix, FitResult};
pub use specs::{build_design, run_spec, SpecId, SpecOptions, SpecResult};
