//! Tile-based differentiable rasterizer: EWA projection, per-tile depth
//! sorting, and front-to-back compositing of color and auxiliary maps.

pub mod composite;
pub mod project;
pub mod render;
pub mod tiles;

pub use composite::{composite_backward, composite_forward, CompositeGrads, CompositeOutput};
pub use project::{project, project_backward, project_gaussian, ProjectedGaussian, ProjectedGrad};
pub use render::{
    render, render_pass, render_pass_frozen, ForwardPass, FrozenInputs, RenderGrads, RenderMode, RenderOptions,
    RenderOutput, SceneGrads,
};
pub use tiles::{bin_and_sort, TileBins, DEFAULT_TILE_SIZE};
