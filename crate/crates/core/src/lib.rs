//! Sewing-pattern garment modeling toolkit.
//!
//! The crate covers the full desk-scale pipeline: cutting garment meshes
//! into disk-topology pieces, ARAP flattening into 2D panels, an implicit
//! sewing-pattern model (SDF + label + UV networks), diffused body
//! skinning, a pixel-aligned deformation network, and two-stage
//! physics-based mesh fitting against image observations.

pub mod body;
pub mod check;
pub mod deform;
pub mod error;
pub mod fit;
pub mod flatten;
pub mod grid;
pub mod io;
pub mod isp;
pub mod math;
pub mod mesh;
pub mod nnet;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};
pub use mesh::{CutPlane, GarmentCategory, TriMesh};
