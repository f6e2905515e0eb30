//! File formats: PNG, PFM, PLY, camera lists, scene directories, and
//! checkpoints.

mod checkpoint;
pub mod ply;
mod raster_files;
mod scene_files;

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, Checkpoint, CHECKPOINT_VERSION};
pub use ply::{read_points, write_points, PointCloud};
pub use raster_files::{read_pfm, read_png, write_pfm, write_png};
pub use scene_files::{
    load_images, load_scene, read_cameras, save_scene, write_cameras, CameraRecord, SceneBundle, SceneView,
    FILE_ORTHO_TOL,
};
