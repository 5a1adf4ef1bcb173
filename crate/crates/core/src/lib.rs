//! Closed-loop toolkit for electromagnetic leakage of MIPI CSI-2 image links.
//!
//! The crate covers both halves of the loop:
//!
//! * a forward model ([`csi2`], [`emission`]) that turns ground-truth images
//!   into RAW10 packet streams and then into per-band complex baseband
//!   captures with noise, clock offset and clock drift;
//! * the attack pipeline that recovers images from such captures: band
//!   localization ([`band`]), raster reconstruction ([`raster`]),
//!   dual-modal demultiplexing ([`demux`]), multi-band fusion ([`fusion`])
//!   and variational restoration ([`restore`]).
//!
//! [`metrics`] provides the PSNR/SSIM/entropy/edge measures used throughout,
//! and [`pipeline`] wires the stages together behind a declarative config.

pub mod band;
pub mod csi2;
pub mod demo;
pub mod demux;
pub mod dsp;
pub mod emission;
mod error;
pub mod fusion;
pub mod image;
pub mod iq;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod restore;

pub use error::{Error, Result};
pub use image::{BitDepth, GrayImage};
pub use iq::{CaptureMeta, IqTrace};
