//! Deterministic end-to-end simulator of a LEO-to-ground BB84 decoy-state QKD
//! link: satellite transmitter, turbulent downlink, adaptive-optics receiver,
//! pointing/acquisition/tracking control and classical post-processing.
//!
//! Every stochastic component is a pure function of its inputs and a seed
//! derived from one master seed (see [`seed`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ao;
pub mod geometry;
pub mod link;
pub mod mission;
pub mod oracles;
pub mod pat;
pub mod postprocessing;
pub mod screen;
pub mod seed;
pub mod telemetry;
pub mod transmitter;
pub mod turbulence;
pub mod zernike;

pub use screen::WavefrontScreen;
