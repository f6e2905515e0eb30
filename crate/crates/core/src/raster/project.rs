use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::error::Result;
use crate::scene::{Camera, GaussianCloud};

/// Added to the diagonal of every screen-space covariance, in px².
pub const COV_DILATION: f64 = 0.3;

/// Screen-space footprint radius in standard deviations.
pub const RADIUS_SIGMAS: f64 = 3.0;

/// A Gaussian after EWA projection into one camera.
///
/// Symmetric 2×2 matrices are stored as `(a, b, c)` for `[[a, b], [b, c]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    /// Dilated screen-space covariance, px².
    pub cov2d: [f64; 3],
    pub camera_depth: f64,
    /// Inverse of `cov2d`.
    pub conic: [f64; 3],
    pub screen_radius: f64,
    pub source_index: usize,
    /// Mean in camera coordinates.
    pub view_position: [f64; 3],
}

fn jacobian(camera: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz2,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz2,
    )
}

/// Projects one Gaussian given its world mean and covariance. Returns `None`
/// when it is clipped by the near/far planes, falls entirely outside the
/// image, or has a degenerate footprint.
pub fn project_gaussian(
    camera: &Camera,
    mean: &[f64; 3],
    cov3: &Matrix3<f64>,
    source_index: usize,
) -> Option<ProjectedGaussian> {
    let p = camera.to_camera(mean);
    if !(p.z > camera.near && p.z < camera.far) {
        return None;
    }
    let j = jacobian(camera, &p);
    let w = camera.rotation;
    let cov = j * (w * cov3 * w.transpose()) * j.transpose();
    let a = cov[(0, 0)] + COV_DILATION;
    let b = cov[(0, 1)];
    let c = cov[(1, 1)] + COV_DILATION;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = RADIUS_SIGMAS * lambda_max.sqrt();
    let u = camera.fx * p.x / p.z + camera.cx;
    let v = camera.fy * p.y / p.z + camera.cy;
    if u + radius < 0.0
        || u - radius > camera.width as f64
        || v + radius < 0.0
        || v - radius > camera.height as f64
    {
        return None;
    }
    Some(ProjectedGaussian {
        mean2d: [u, v],
        cov2d: [a, b, c],
        camera_depth: p.z,
        conic,
        screen_radius: radius,
        source_index,
        view_position: [p.x, p.y, p.z],
    })
}

/// Projects and culls every Gaussian of the cloud, preserving source order.
pub fn project(cloud: &GaussianCloud, camera: &Camera) -> Result<Vec<ProjectedGaussian>> {
    let mut out = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let cov3 = cloud.covariance(i)?;
        if let Some(pg) = project_gaussian(camera, &cloud.positions[i], &cov3, i) {
            out.push(pg);
        }
    }
    Ok(out)
}

/// Upstream gradients arriving at one projected Gaussian.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectedGrad {
    pub mean2d: [f64; 2],
    /// Gradient w.r.t. `(a, b, c)` of the conic, `b` counted once.
    pub conic: [f64; 3],
    /// Gradient w.r.t. the camera-space depth.
    pub depth: f64,
}

/// Pulls projected-space gradients back to the world mean and the 3D
/// covariance (returned as a symmetric matrix gradient).
pub fn project_backward(
    camera: &Camera,
    pg: &ProjectedGaussian,
    cov3: &Matrix3<f64>,
    grad: &ProjectedGrad,
) -> ([f64; 3], Matrix3<f64>) {
    let p = Vector3::from(pg.view_position);
    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;

    // Conic = S⁻¹, so ∂L/∂S = −C G C with G the symmetric conic gradient.
    let conic = Matrix2::new(pg.conic[0], pg.conic[1], pg.conic[1], pg.conic[2]);
    let g_conic = Matrix2::new(
        grad.conic[0],
        0.5 * grad.conic[1],
        0.5 * grad.conic[1],
        grad.conic[2],
    );
    let g_s = -(conic * g_conic * conic);

    let w = camera.rotation;
    let m = w * cov3 * w.transpose();
    let j = jacobian(camera, &p);
    let g_m = j.transpose() * g_s * j;
    let g_cov3 = w.transpose() * g_m * w;

    let g_j = 2.0 * g_s * j * m;
    let mut g_p = Vector3::zeros();
    // J00 = fx/z, J02 = −fx x/z², J11 = fy/z, J12 = −fy y/z².
    g_p.x += g_j[(0, 2)] * (-fx * iz2);
    g_p.y += g_j[(1, 2)] * (-fy * iz2);
    g_p.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * p.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * p.y * iz3);

    // Mean: u = fx x/z + cx, v = fy y/z + cy.
    let [gu, gv] = grad.mean2d;
    g_p.x += gu * fx * iz;
    g_p.y += gv * fy * iz;
    g_p.z += -(gu * fx * p.x + gv * fy * p.y) * iz2;

    g_p.z += grad.depth;

    let g_world = w.transpose() * g_p;
    ([g_world.x, g_world.y, g_world.z], g_cov3)
}
