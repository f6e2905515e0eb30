use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::scene::{Camera, DEFAULT_FAR, DEFAULT_NEAR};

use super::ply::{read_points, write_points, PointCloud};
use super::raster_files::{read_pfm, read_png, write_pfm, write_png};

/// Maximum deviation of `R Rᵀ` from identity accepted from files.
pub const FILE_ORTHO_TOL: f64 = 1e-3;

/// One entry of `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row-major.
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera(name: impl Into<String>, cam: &Camera) -> Self {
        let r = &cam.rotation;
        Self {
            name: name.into(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: Matrix3::from_row_slice(&self.rotation),
            translation: Vector3::from(self.translation),
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        };
        cam.validate(FILE_ORTHO_TOL)
            .map_err(|e| Error::invalid(format!("camera '{}': {e}", self.name)))?;
        Ok(cam)
    }
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, format!("invalid camera list: {e}")))
}

pub fn write_cameras(path: &Path, cameras: &[CameraRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(cameras).map_err(|e| Error::data(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One view of a scene directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub name: String,
    pub camera: Camera,
    /// Foggy input.
    pub image: ImagePlane,
    pub clear: Option<ImagePlane>,
    pub depth: Option<ImagePlane>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub views: Vec<SceneView>,
    pub points: PointCloud,
}

impl SceneBundle {
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }
}

fn check_size(img: &ImagePlane, cam: &Camera, path: &Path, name: &str) -> Result<()> {
    if img.width() != cam.width || img.height() != cam.height {
        return Err(Error::data(
            path,
            format!(
                "image is {}x{} but camera '{name}' is {}x{}",
                img.width(),
                img.height(),
                cam.width,
                cam.height
            ),
        ));
    }
    Ok(())
}

fn optional<T>(path: PathBuf, read: impl Fn(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(&path).map(Some)
    } else {
        Ok(None)
    }
}

/// Loads `cameras.json`, `images/<name>.png`, `points.ply`, and the optional
/// `clear/<name>.png` and `depths/<name>.pfm`. Views are sorted by name.
pub fn load_scene(dir: &Path) -> Result<SceneBundle> {
    let cam_path = dir.join("cameras.json");
    let mut records = read_cameras(&cam_path)?;
    if records.is_empty() {
        return Err(Error::data(&cam_path, "no cameras"));
    }
    records.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = records.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(Error::data(&cam_path, format!("camera name '{}' appears twice", w[0].name)));
    }
    let mut views = Vec::with_capacity(records.len());
    for rec in &records {
        let camera = rec.to_camera().map_err(|e| Error::data(&cam_path, e.to_string()))?;
        let img_path = dir.join("images").join(format!("{}.png", rec.name));
        if !img_path.exists() {
            return Err(Error::data(&img_path, format!("missing image for camera '{}'", rec.name)));
        }
        let image = read_png(&img_path)?;
        check_size(&image, &camera, &img_path, &rec.name)?;
        let clear_path = dir.join("clear").join(format!("{}.png", rec.name));
        let clear = optional(clear_path.clone(), read_png)?;
        if let Some(c) = &clear {
            check_size(c, &camera, &clear_path, &rec.name)?;
        }
        let depth_path = dir.join("depths").join(format!("{}.pfm", rec.name));
        let depth = optional(depth_path.clone(), read_pfm)?;
        if let Some(d) = &depth {
            check_size(d, &camera, &depth_path, &rec.name)?;
        }
        views.push(SceneView {
            name: rec.name.clone(),
            camera,
            image,
            clear,
            depth,
        });
    }
    let points = read_points(&dir.join("points.ply"))?;
    Ok(SceneBundle { views, points })
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a bundle in the layout [`load_scene`] reads.
pub fn save_scene(dir: &Path, bundle: &SceneBundle) -> Result<()> {
    ensure_dir(&dir.join("images"))?;
    let records: Vec<CameraRecord> = bundle
        .views
        .iter()
        .map(|v| CameraRecord::from_camera(v.name.clone(), &v.camera))
        .collect();
    write_cameras(&dir.join("cameras.json"), &records)?;
    for v in &bundle.views {
        write_png(&dir.join("images").join(format!("{}.png", v.name)), &v.image)?;
        if let Some(c) = &v.clear {
            ensure_dir(&dir.join("clear"))?;
            write_png(&dir.join("clear").join(format!("{}.png", v.name)), c)?;
        }
        if let Some(d) = &v.depth {
            ensure_dir(&dir.join("depths"))?;
            write_pfm(&dir.join("depths").join(format!("{}.pfm", v.name)), d)?;
        }
    }
    write_points(&dir.join("points.ply"), &bundle.points)
}

/// Reads `<name>.png` from `dir` for every name.
pub fn load_images(dir: &Path, names: &[String]) -> Result<Vec<ImagePlane>> {
    names
        .iter()
        .map(|n| {
            let p = dir.join(format!("{n}.png"));
            if !p.exists() {
                return Err(Error::data(&p, format!("missing image for view '{n}'")));
            }
            read_png(&p)
        })
        .collect()
}
