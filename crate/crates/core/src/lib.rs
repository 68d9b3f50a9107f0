//! Training-free 3D stylisation from a content image and a style image.
//!
//! Stage one runs a multi-view denoiser whose late attention layers are
//! replaced by [`attn::fuse_attention`]: content queries attend to style keys
//! and values captured by inverting the style image. Stage two encodes the six
//! stylised views into a triplane, queries an SDF/colour field from it and
//! extracts a mesh with a dual-marching-cubes extractor that supports
//! per-vertex deformation and per-cell weights.

pub mod attn;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod nn;
pub mod pipeline;
pub mod recon;

pub use error::{Error, Result};
