#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Slice-by-slice reconstruction and stability analysis for limited-data,
//! multi-coil MRI.
//!
//! When whole k-space lines parallel to `k1` are missing, each coil's
//! zero-filled image obeys `g_j = (I - L) (s_j F)` column by column, where
//! `L` is a 1-D convolution determined by the missing bands. The crate builds
//! those operators ([`operators`]), analyses their singular values
//! ([`svd`]), and reconstructs images one column at a time with a smoothed
//! total-variation penalty ([`solver`]). Simulation, baseline reconstructions,
//! quality metrics and experiment drivers round it out.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod optim;
pub mod simulation;
pub mod solver;
pub mod stack;
pub mod svd;

pub use error::{Error, Result};
pub use geometry::{Band, BandSet, Grid, SamplingMask};
pub use stack::{CoilStack, RealImage, StackKind};
