//! Open-world semi-supervised clustering with grouped prototypes.
//!
//! An MLP encoder maps instances onto the unit sphere, where they are softly
//! assigned to `K` learnable prototypes. Prototypes are periodically linked
//! into groups through the overlap of the instances they represent most
//! strongly, and each group stands for one class. Known classes are tied to
//! groups through a handful of labels; the remaining groups are novel
//! classes, so the final group count estimates the number of classes.
//!
//! [`trainer::run`] drives a whole experiment and [`cli`] exposes it as the
//! `protogroup` binary.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod grouping;
pub mod hungarian;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod prototypes;
pub mod trainer;
