//! Face upsampling toolkit built around a global-local upsampling network
//! (GLN): a small from-scratch tensor/layer kernel with reverse-mode
//! gradients, declarative network builders, reconstruction and adversarial
//! training, the blur-plus-decimation degradation model, and an
//! image-quality metrics suite.
//!
//! Everything is generic over the floating-point element type; `Scalar` is
//! the build-wide default used by training and the CLI (f32 unless the
//! `f64` feature is enabled). Gradient-check code instantiates `f64`
//! explicitly so finite-difference tolerances stay meaningful.

pub mod checkpoint;
pub mod color;
pub mod dataset;
pub mod degrade;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod image_io;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use element::{Element, Scalar};
pub use error::{Error, Result};
pub use graph::{BuilderDescriptor, NetworkGraph, Topology};
pub use image_io::PixelScale;
pub use layers::{LayerKind, LayerSpec, LayerState, WeightInit};
pub use rng::SplitMix64;
pub use tensor::{FillRule, Shape, Tensor};
