//! Contrastive feature distillation for stereo matching in fog.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors with a reverse-mode autodiff tape.
//! * [`fog`]: atmospheric-scattering fog rendering and its analytic inverse.
//! * [`matcher`]: shared-weight feature extractor, epipolar correlation and a
//!   recurrent disparity update.
//! * [`converter`]: the attentive feature converter (pixel and channel
//!   attention over a residual branch).
//! * [`training`]: teacher and student models, their losses and the
//!   optimisation loops.
//! * [`metrics`]: stereo (EPE, P1, 3px, D1) and depth (RMSE, MAE, SRD, ARD,
//!   SILog, delta) metrics.
//! * [`ablation`]: the seven-arm comparison repeated over seeds.
//! * [`io`], [`config`], [`synth`]: file formats, experiment configuration
//!   and the random-dot stereogram generator.

pub mod ablation;
pub mod config;
pub mod converter;
pub mod error;
pub mod fog;
pub mod gradsuite;
pub mod image;
pub mod io;
pub mod matcher;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
