//! Gaussian primitives, their latent parameterization, and cameras.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::sh;

pub type Quaternion = [f64; 4];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Learnable Gaussian parameters, all stored as unconstrained latents.
///
/// Quaternions are `(w, x, y, z)`. Colors are spherical-harmonic coefficients
/// laid out per Gaussian as `(deg + 1)²` RGB triples.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<Quaternion>,
    pub opacity_latents: Vec<f64>,
    pub color_coeffs: Vec<f64>,
    sh_degree: usize,
}

/// Activated (constrained) view of a [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedCloud {
    pub scales: Vec<[f64; 3]>,
    pub rotations: Vec<Quaternion>,
    pub opacities: Vec<f64>,
    /// View-independent color from the DC coefficient.
    pub colors: Vec<[f64; 3]>,
}

impl GaussianCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        log_scales: Vec<[f64; 3]>,
        rotations: Vec<Quaternion>,
        opacity_latents: Vec<f64>,
        color_coeffs: Vec<f64>,
        sh_degree: usize,
    ) -> Result<Self> {
        let cloud = Self {
            positions,
            log_scales,
            rotations,
            opacity_latents,
            color_coeffs,
            sh_degree,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// Builds a cloud from colored points with a uniform isotropic scale,
    /// identity rotations, and the given activated opacity. Higher SH bands
    /// start at zero.
    pub fn from_points(
        positions: &[[f64; 3]],
        rgb: &[[f64; 3]],
        scales: &[f64],
        opacity: f64,
        sh_degree: usize,
    ) -> Result<Self> {
        if positions.len() != rgb.len() || positions.len() != scales.len() {
            return Err(Error::shape("points, colors and scales differ in length"));
        }
        let k = sh::coeff_count(sh_degree)?;
        let mut color_coeffs = vec![0.0; positions.len() * k * 3];
        for (i, c) in rgb.iter().enumerate() {
            let dc = sh::rgb_to_dc(*c);
            color_coeffs[i * k * 3..i * k * 3 + 3].copy_from_slice(&dc);
        }
        Self::new(
            positions.to_vec(),
            scales.iter().map(|s| [s.ln(); 3]).collect(),
            vec![[1.0, 0.0, 0.0, 0.0]; positions.len()],
            vec![logit(opacity); positions.len()],
            color_coeffs,
            sh_degree,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::invalid("a Gaussian cloud needs at least one primitive"));
        }
        let k = sh::coeff_count(self.sh_degree)?;
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.opacity_latents.len() != n
            || self.color_coeffs.len() != n * k * 3
        {
            return Err(Error::shape(format!(
                "cloud arrays disagree: {n} positions, {} scales, {} rotations, {} opacities, {} color coefficients (expected {})",
                self.log_scales.len(),
                self.rotations.len(),
                self.opacity_latents.len(),
                self.color_coeffs.len(),
                n * k * 3
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    /// Number of SH coefficient triples per Gaussian.
    pub fn coeffs_per_gaussian(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    pub fn coeffs(&self, i: usize) -> &[f64] {
        let stride = self.coeffs_per_gaussian() * 3;
        &self.color_coeffs[i * stride..(i + 1) * stride]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_latents[i])
    }

    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        build_covariance(self.log_scales[i], self.rotations[i])
    }

    /// Keeps the Gaussians for which `keep` is true, in order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let stride = self.coeffs_per_gaussian() * 3;
        let mut colors = Vec::with_capacity(self.color_coeffs.len());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                colors.extend_from_slice(&self.color_coeffs[i * stride..(i + 1) * stride]);
            }
        }
        self.color_coeffs = colors;
        retain_by(&mut self.positions, keep);
        retain_by(&mut self.log_scales, keep);
        retain_by(&mut self.rotations, keep);
        retain_by(&mut self.opacity_latents, keep);
    }

    /// Appends one Gaussian copied from the latents of `src`.
    pub fn push_from(&mut self, src: usize, position: [f64; 3], log_scale: [f64; 3]) {
        let stride = self.coeffs_per_gaussian() * 3;
        let coeffs = self.color_coeffs[src * stride..(src + 1) * stride].to_vec();
        self.positions.push(position);
        self.log_scales.push(log_scale);
        self.rotations.push(self.rotations[src]);
        self.opacity_latents.push(self.opacity_latents[src]);
        self.color_coeffs.extend_from_slice(&coeffs);
    }
}

fn retain_by<T>(v: &mut Vec<T>, keep: &[bool]) {
    let mut it = keep.iter();
    v.retain(|_| *it.next().unwrap());
}

fn check_finite(what: &str, i: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} of Gaussian {i} is not finite")))
    }
}

/// Applies the activation rules: `exp` on scales, unit normalization on
/// rotations, logistic on opacities, and the DC band on colors.
pub fn activate(cloud: &GaussianCloud) -> Result<ActivatedCloud> {
    cloud.validate()?;
    let n = cloud.len();
    let mut out = ActivatedCloud {
        scales: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        opacities: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
    };
    for i in 0..n {
        check_finite("position", i, &cloud.positions[i])?;
        check_finite("log-scale", i, &cloud.log_scales[i])?;
        check_finite("rotation", i, &cloud.rotations[i])?;
        check_finite("opacity", i, &[cloud.opacity_latents[i]])?;
        check_finite("color", i, cloud.coeffs(i))?;
        out.scales.push(cloud.log_scales[i].map(f64::exp));
        out.rotations.push(normalize_quaternion(cloud.rotations[i])?);
        out.opacities.push(sigmoid(cloud.opacity_latents[i]));
        out.colors.push(sh::dc_to_rgb(cloud.coeffs(i)));
    }
    Ok(out)
}

pub fn normalize_quaternion(q: Quaternion) -> Result<Quaternion> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid(format!("quaternion {q:?} has no usable norm")));
    }
    Ok(q.map(|v| v / norm))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: Quaternion) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Σ = R S Sᵀ Rᵀ with S = diag(exp(log_scale)).
pub fn build_covariance(log_scale: [f64; 3], rotation: Quaternion) -> Result<Matrix3<f64>> {
    let r = rotation_matrix(normalize_quaternion(rotation)?);
    let s = Matrix3::from_diagonal(&Vector3::from(log_scale.map(f64::exp)));
    let m = r * s;
    Ok(m * m.transpose())
}

/// Gradient of `⟨upstream, Σ⟩` with respect to the log-scales and the
/// unnormalized quaternion.
pub fn build_covariance_backward(
    upstream: &Matrix3<f64>,
    log_scale: [f64; 3],
    rotation: Quaternion,
) -> Result<([f64; 3], [f64; 4])> {
    let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = normalize_quaternion(rotation)?;
    let g = (upstream + upstream.transpose()) * 0.5;
    let r = rotation_matrix(q);
    let s2 = Vector3::from(log_scale.map(|l| (2.0 * l).exp()));

    let mut grad_scale = [0.0; 3];
    for (i, gs) in grad_scale.iter_mut().enumerate() {
        let col = r.column(i);
        *gs = 2.0 * s2[i] * (col.transpose() * g * col)[0];
    }

    // dΣ = dR S² Rᵀ + R S² dRᵀ, so ∂/∂R = 2 G R S².
    let grad_r = 2.0 * g * r * Matrix3::from_diagonal(&s2);
    let [w, x, y, z] = q;
    let d_w = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let d_x = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let d_y = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let d_z = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    let g_unit = [
        grad_r.dot(&d_w),
        grad_r.dot(&d_x),
        grad_r.dot(&d_y),
        grad_r.dot(&d_z),
    ];
    Ok((grad_scale, normalize_backward(q, norm, g_unit)))
}

/// Chain rule through `q / |q|` given the unit quaternion and the norm.
pub fn normalize_backward(unit: Quaternion, norm: f64, grad_unit: [f64; 4]) -> [f64; 4] {
    let dot: f64 = unit.iter().zip(&grad_unit).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (grad_unit[k] - unit[k] * dot) / norm;
    }
    out
}

/// Pinhole camera with a world-to-camera pose.
///
/// The camera looks down +z, with +x right and +y down in the image. Pixel
/// `(px, py)` covers `[px, px + 1) × [py, py + 1)`, so its center sits at
/// `(px + 0.5, py + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 1000.0;

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        };
        cam.validate(1e-6)?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite the
    /// image +y axis.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self, ortho_tol: f64) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!(
                "clip range must satisfy 0 < near < far (near={}, far={})",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be non-zero"));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax();
        if !(err <= ortho_tol) {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, p: &[f64; 3]) -> Vector3<f64> {
        self.rotation * Vector3::from(*p) + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn covariance_identity_and_diagonal() {
        let id = build_covariance([0.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(&id, &Matrix3::identity(), 1e-15));
        let d = build_covariance([2f64.ln(), 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(&d, &Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), 1e-14));
    }

    #[test]
    fn isotropic_covariance_ignores_rotation() {
        let h = std::f64::consts::FRAC_PI_4;
        let q = [h.cos(), 0.0, 0.0, h.sin()];
        let s = build_covariance([0.0; 3], q).unwrap();
        assert!(close(&s, &Matrix3::identity(), 1e-15));
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(
            build_covariance([0.0; 3], [0.0; 4]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (gs, gq) =
            build_covariance_backward(&Matrix3::zeros(), [0.1, -0.3, 0.2], [0.9, 0.1, -0.2, 0.3]).unwrap();
        assert_eq!(gs, [0.0; 3]);
        assert_eq!(gq, [0.0; 4]);
    }

    #[test]
    fn isotropic_trace_gradient() {
        let (gs, _) =
            build_covariance_backward(&Matrix3::identity(), [0.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        for g in gs {
            assert!((g - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn activation_rules() {
        let mut cloud = GaussianCloud::new(
            vec![[0.0; 3]],
            vec![[-20.0, 0.0, 0.0]],
            vec![[2.0, 0.0, 0.0, 0.0]],
            vec![0.0],
            vec![0.0; 3],
            0,
        )
        .unwrap();
        let a = activate(&cloud).unwrap();
        assert_eq!(a.opacities[0], 0.5);
        assert!(a.scales[0][0] > 0.0 && (a.scales[0][0] - 2.061_153_622_438_558e-9).abs() < 1e-18);
        assert_eq!(a.rotations[0], [1.0, 0.0, 0.0, 0.0]);

        cloud.opacity_latents[0] = f64::NAN;
        assert!(matches!(activate(&cloud), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn mismatched_arrays_rejected() {
        let r = GaussianCloud::new(vec![[0.0; 3]; 2], vec![[0.0; 3]], vec![[1.0, 0.0, 0.0, 0.0]; 2], vec![0.0; 2], vec![0.0; 6], 0);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
        let empty = GaussianCloud::new(vec![], vec![], vec![], vec![], vec![], 0);
        assert!(empty.is_err());
    }

    #[test]
    fn look_at_is_orthonormal_and_centers_target() {
        let cam = Camera::look_at(
            Vector3::new(1.0, -2.0, -5.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            100.0,
            64,
            48,
        )
        .unwrap();
        let p = cam.to_camera(&[0.0, 0.0, 0.0]);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert!((cam.center() - Vector3::new(1.0, -2.0, -5.0)).norm() < 1e-12);
    }

    #[test]
    fn camera_invariants() {
        let bad = Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4, Matrix3::identity(), Vector3::zeros());
        assert!(bad.is_err());
        let mut r = Matrix3::identity();
        r[(0, 1)] = 0.01;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, r, Vector3::zeros()).is_err());
    }
}
