//! Core building blocks for a 2-D lattice Boltzmann performance toolkit.
//!
//! This crate holds everything that does not need an operating system:
//! velocity sets and halo-padded population storage ([`lattice`]), the
//! propagate / boundary-condition / collide kernels ([`kernels`]), the
//! ring-decomposition halo-exchange logic and wire codec ([`exchange`]),
//! the per-timestep task plan ([`schedule`]), and the analytic
//! strong-scaling model with its calibration and metrics ([`perfmodel`]).
//!
//! The companion `lbtk` crate supplies threads, clocks, file formats and
//! the command-line front end. Everything here is `no_std`-compatible
//! (with `alloc`); disable the default `std` feature to use it that way.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod exchange;
pub mod kernels;
pub mod lattice;
mod math;
pub mod perfmodel;
pub mod schedule;
