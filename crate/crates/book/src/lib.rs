//! Compiles the guide's code blocks as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/variogram.md")]
pub mod variogram {}
#[doc = include_str!("../../../book/src/latent-field.md")]
pub mod latent_field {}
#[doc = include_str!("../../../book/src/hyperparameters.md")]
pub mod hyperparameters {}
#[doc = include_str!("../../../book/src/imputation.md")]
pub mod imputation {}
#[doc = include_str!("../../../book/src/sample-paths.md")]
pub mod sample_paths {}
#[doc = include_str!("../../../book/src/model-comparison.md")]
pub mod model_comparison {}
#[doc = include_str!("../../../book/src/calibration.md")]
pub mod calibration {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
