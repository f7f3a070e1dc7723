//! Core library for disentangling facial albedo from spherical-harmonic
//! lighting, plus the tone-balanced benchmark used to measure how evenly an
//! estimator performs across skin types.
//!
//! The pieces fit together like this:
//!
//! * [`colorimetry`] converts linear RGB to CIE L*a*b*, computes the
//!   individual typology angle (ITA) and buckets it into six skin types.
//! * [`sh`] evaluates a 3-band real spherical-harmonic basis and shades
//!   normal images; lights decompose into per-channel intensity and a
//!   unit-norm direction, which is what makes the scale ambiguity between
//!   albedo and lighting explicit.
//! * [`albedo`] holds a whitened PCA texture model over UV albedo maps plus
//!   the procedural, tone-balanced subject library it is trained on.
//! * [`raster`] renders a head mesh under a weak-perspective camera into a
//!   geometry buffer and bilinearly warps UV maps into image space.
//! * [`losses`] are the fitting objectives (photometric, scene consistency,
//!   optional supervision) with analytic gradients.
//! * [`fit`] runs the per-scene first-order optimizer that recovers albedo
//!   coefficients, light directions and one shared light intensity.
//! * [`benchmark`] generates balanced synthetic datasets, evaluates
//!   predictions and aggregates fairness metrics (Avg / Bias / Score).
//! * [`formats`] reads and writes every on-disk artifact (raw f32 maps,
//!   geometry buffers, PCA models, reports).
//!
//! All pixel math is `f64`; files store `f32` (see [`formats`]).

// The numeric kernels walk several parallel arrays per index; explicit
// index loops keep those in lockstep more readably than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod albedo;
pub mod benchmark;
pub mod colorimetry;
pub mod error;
pub mod fit;
pub mod formats;
pub mod image;
pub mod losses;
pub mod parallel;
pub mod raster;
pub mod sh;

pub use error::{Error, Result};
pub use image::{Mask, Pixmap};
pub use parallel::Parallelism;
