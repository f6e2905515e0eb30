use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fog::FogParams;
use crate::optim::TrainConfig;
use crate::scene::{Camera, GaussianCloud};
use crate::sh;

use super::ply::{read_ply, PlyElement, ScalarKind};
use super::scene_files::CameraRecord;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "fogsplat-checkpoint";

/// A trained scene: Gaussians, fog, the run's configuration, and the
/// cameras it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cloud: GaussianCloud,
    pub fog: FogParams,
    pub config: TrainConfig,
    pub iteration: usize,
    pub cameras: Vec<CameraRecord>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    n_gaussians: usize,
    sh_degree: usize,
    iteration: usize,
    fog: FogParams,
    config: TrainConfig,
    cameras: Vec<CameraRecord>,
}

/// Path of the JSON file stored next to a checkpoint PLY.
pub fn sidecar_path(ply: &Path) -> PathBuf {
    ply.with_extension("json")
}

fn column_names(sh_degree: usize) -> Result<Vec<String>> {
    let k = sh::coeff_count(sh_degree)?;
    let mut names: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
    names.extend((0..3).map(|c| format!("f_dc_{c}")));
    names.extend((0..3 * (k - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    Ok(names)
}

/// Splits the cloud into per-vertex columns named like common splat viewers
/// expect. Higher SH bands are stored channel-major.
fn cloud_columns(cloud: &GaussianCloud) -> Result<Vec<Vec<f64>>> {
    let n = cloud.len();
    let k = cloud.coeffs_per_gaussian();
    let mut cols = Vec::new();
    for j in 0..3 {
        cols.push(cloud.positions.iter().map(|p| p[j]).collect());
    }
    for c in 0..3 {
        cols.push((0..n).map(|i| cloud.coeffs(i)[c]).collect());
    }
    for c in 0..3 {
        for b in 1..k {
            cols.push((0..n).map(|i| cloud.coeffs(i)[b * 3 + c]).collect());
        }
    }
    cols.push(cloud.opacity_latents.clone());
    for j in 0..3 {
        cols.push(cloud.log_scales.iter().map(|s| s[j]).collect());
    }
    for j in 0..4 {
        cols.push(cloud.rotations.iter().map(|q| q[j]).collect());
    }
    Ok(cols)
}

pub fn save_checkpoint(
    path: &Path,
    cloud: &GaussianCloud,
    fog: &FogParams,
    config: &TrainConfig,
    iteration: usize,
    cameras: &[CameraRecord],
) -> Result<()> {
    cloud.validate()?;
    let names = column_names(cloud.sh_degree())?;
    let element = PlyElement {
        name: "vertex".into(),
        count: cloud.len(),
        columns: names
            .into_iter()
            .zip(cloud_columns(cloud)?)
            .map(|(n, c)| (n, ScalarKind::F64, c))
            .collect(),
    };
    let comments = [
        format!("{FORMAT_TAG} version {CHECKPOINT_VERSION}"),
        format!("sh_degree {}", cloud.sh_degree()),
    ];
    super::ply::write_ply(path, &comments, &element)?;
    let side = Sidecar {
        format: FORMAT_TAG.into(),
        version: CHECKPOINT_VERSION,
        n_gaussians: cloud.len(),
        sh_degree: cloud.sh_degree(),
        iteration,
        fog: fog.clone(),
        config: config.clone(),
        cameras: cameras.to_vec(),
    };
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).map_err(|e| Error::data(&sp, e.to_string()))?;
    std::fs::write(&sp, text + "\n").map_err(|e| Error::io(&sp, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::data(&sp, format!("invalid checkpoint metadata: {e}")))?;
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::data(&sp, "checkpoint metadata has no version"))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::Version {
            found: found.min(u64::from(u32::MAX)) as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let side: Sidecar =
        serde_json::from_value(raw).map_err(|e| Error::data(&sp, format!("invalid checkpoint metadata: {e}")))?;

    let ply = read_ply(path)?;
    let tag = format!("{FORMAT_TAG} version {CHECKPOINT_VERSION}");
    if !ply.comments.iter().any(|c| c == &tag) {
        return Err(Error::data(path, "not a checkpoint of this format version"));
    }
    let v = ply
        .element("vertex")
        .ok_or_else(|| Error::data(path, "no 'vertex' element"))?;
    if v.count != side.n_gaussians {
        return Err(Error::data(
            path,
            format!("{} Gaussians stored, metadata says {}", v.count, side.n_gaussians),
        ));
    }
    let names = column_names(side.sh_degree)?;
    let cols: Vec<&[f64]> = names
        .iter()
        .map(|n| v.column(n).ok_or_else(|| Error::data(path, format!("vertex property '{n}' is missing"))))
        .collect::<Result<_>>()?;
    let n = v.count;
    let k = sh::coeff_count(side.sh_degree)?;
    let mut colors = vec![0.0; n * k * 3];
    for i in 0..n {
        for c in 0..3 {
            colors[i * k * 3 + c] = cols[3 + c][i];
            for b in 1..k {
                colors[i * k * 3 + b * 3 + c] = cols[6 + c * (k - 1) + (b - 1)][i];
            }
        }
    }
    let base = 6 + 3 * (k - 1);
    let cloud = GaussianCloud::new(
        (0..n).map(|i| [cols[0][i], cols[1][i], cols[2][i]]).collect(),
        (0..n).map(|i| [0, 1, 2].map(|j| cols[base + 1 + j][i])).collect(),
        (0..n).map(|i| [0, 1, 2, 3].map(|j| cols[base + 4 + j][i])).collect(),
        cols[base].to_vec(),
        colors,
        side.sh_degree,
    )
    .map_err(|e| Error::data(path, e.to_string()))?;
    Ok(Checkpoint {
        cloud,
        fog: side.fog,
        config: side.config,
        iteration: side.iteration,
        cameras: side.cameras,
    })
}

impl Checkpoint {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.cameras.iter().map(|c| c.to_camera()).collect()
    }
}
