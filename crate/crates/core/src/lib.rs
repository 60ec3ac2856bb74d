//! Simulator for image-based beam tracking across a wavy water surface.
//!
//! A laser leaves the water through a moving, sloped surface and is steered
//! by a fast mirror so that the refracted spot stays on a moving receiver.
//! A camera frame every control cycle locates the spot, an adaptive gain
//! controller computes the correction, and a link model turns the residual
//! offset into bit error rate, packet loss and throughput.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod link;
pub mod sim;
pub mod wave;
