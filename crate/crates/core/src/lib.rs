//! Pseudo-supervised monocular depth estimation primitives.
//!
//! An unsupervised binocular teacher is trained with photometric,
//! left-right consistency and (semantic-guided) smoothness losses; its
//! disparities, occlusion masks and segmentation maps then supervise a
//! monocular student. This crate holds everything that is pure
//! computation: warping, losses with analytic gradients, evaluation
//! metrics, the miniature encoder-decoder, the optimizer, the synthetic
//! stereo scene generator and per-sample training steps.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. File formats, orchestration and the command line live in
//! the `psdepth` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(
    clippy::too_many_arguments,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

extern crate alloc;

pub mod augment;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod plane;
pub mod real;
pub mod ssim;
pub mod synth;
pub mod train;
pub mod trainer;

pub use error::{Error, Result};
pub use plane::{DisparityMap, ImagePlane, OcclusionMask, Plane, SemanticMap};
pub use real::Real;
