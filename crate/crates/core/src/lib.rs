//! Quality-preserving adversarial image generation.
//!
//! The crate bundles everything needed to run perceptually-constrained
//! adversarial attacks against a small, locally trained image classifier:
//!
//! * [`tape`] — a reverse-mode automatic differentiation engine;
//! * [`classifier`] — a compact CNN, its trainer, and a binary checkpoint format;
//! * [`losses`] — adversarial and perceptual quality-preserving loss terms;
//! * [`attacks`] — the MND optimization loop and FGSM-family baselines;
//! * [`metrics`] — PSNR/SSIM evaluation, difference maps, Grad-CAM;
//! * [`dataset`] — a deterministic synthetic dataset of textured shapes;
//! * [`pixmap`] — binary P6 image interchange.

pub mod attacks;
pub mod classifier;
pub mod dataset;
pub mod error;
mod kernels;
pub mod losses;
pub mod metrics;
pub mod pixmap;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use kernels::Padding;
pub use tape::{grad_check, GradCheckReport, Tape, Var, DEFAULT_FD_EPS};
pub use tensor::Tensor;
