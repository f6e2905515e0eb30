//! Differentiable 3D Gaussian splatting with a per-Gaussian atmospheric
//! scattering model.
//!
//! Foggy views are explained as clear Gaussians whose colors are mixed with a
//! global atmospheric light according to a depth-dependent transmission. The
//! crate renders foggy, clear, transmission, and depth maps, provides the
//! dehazing priors and losses used to fit such scenes, and an Adam-based
//! training loop.

pub mod error;
pub mod fog;
pub mod losses;
pub mod optim;
pub mod priors;
pub mod image;
pub mod io;
pub mod raster;
pub mod scene;
pub mod sh;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};
pub use fog::FogParams;
pub use image::ImagePlane;
pub use raster::{render, RenderMode, RenderOptions, RenderOutput};
pub use scene::{Camera, GaussianCloud};
