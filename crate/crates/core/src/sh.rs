//! Real spherical-harmonic color evaluation up to degree 3.
//!
//! The view direction is treated as a constant: gradients reach the
//! coefficients but not the Gaussian position.

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub fn coeff_count(degree: usize) -> Result<usize> {
    if degree > MAX_DEGREE {
        return Err(Error::invalid(format!(
            "spherical-harmonic degree {degree} exceeds {MAX_DEGREE}"
        )));
    }
    Ok((degree + 1) * (degree + 1))
}

pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / C0)
}

/// Color from the DC band alone (the view-independent part).
pub fn dc_to_rgb(coeffs: &[f64]) -> [f64; 3] {
    [0, 1, 2].map(|c| (C0 * coeffs[c] + 0.5).max(0.0))
}

/// Basis values for a unit direction; only the first `(deg + 1)²` are filled.
pub fn basis(degree: usize, dir: [f64; 3]) -> [f64; 16] {
    let mut b = [0.0; 16];
    b[0] = C0;
    if degree == 0 {
        return b;
    }
    let [x, y, z] = dir;
    b[1] = -C1 * y;
    b[2] = C1 * z;
    b[3] = -C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = C2[0] * xy;
    b[5] = C2[1] * yz;
    b[6] = C2[2] * (2.0 * zz - xx - yy);
    b[7] = C2[3] * xz;
    b[8] = C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = C3[0] * y * (3.0 * xx - yy);
    b[10] = C3[1] * xy * z;
    b[11] = C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = C3[5] * z * (xx - yy);
    b[15] = C3[6] * x * (xx - 3.0 * yy);
    b
}

/// RGB for a view direction, with the usual `+0.5` offset and a floor at 0.
pub fn eval(degree: usize, coeffs: &[f64], dir: [f64; 3]) -> [f64; 3] {
    let b = basis(degree, dir);
    let k = (degree + 1) * (degree + 1);
    let mut rgb = [0.5; 3];
    for (j, bj) in b.iter().enumerate().take(k) {
        for c in 0..3 {
            rgb[c] += bj * coeffs[j * 3 + c];
        }
    }
    rgb.map(|v| v.max(0.0))
}

/// Accumulates the coefficient gradient for one evaluation into `grad`.
pub fn eval_backward(degree: usize, coeffs: &[f64], dir: [f64; 3], grad_rgb: [f64; 3], grad: &mut [f64]) {
    let b = basis(degree, dir);
    let k = (degree + 1) * (degree + 1);
    let mut raw = [0.5; 3];
    for (j, bj) in b.iter().enumerate().take(k) {
        for c in 0..3 {
            raw[c] += bj * coeffs[j * 3 + c];
        }
    }
    for c in 0..3 {
        if raw[c] < 0.0 {
            continue;
        }
        for j in 0..k {
            grad[j * 3 + c] += b[j] * grad_rgb[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_round_trip() {
        let rgb = [0.2, 0.5, 0.9];
        let dc = rgb_to_dc(rgb);
        let back = dc_to_rgb(&dc);
        for c in 0..3 {
            assert!((back[c] - rgb[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn higher_bands_match_finite_differences_in_coefficients() {
        let dir = {
            let d = [0.3, -0.5, 0.81];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64;
            d.map(|v| v / n.sqrt())
        };
        let coeffs: Vec<f64> = (0..48).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.03).collect();
        let g = [0.7, -0.2, 0.4];
        let mut grad = vec![0.0; 48];
        eval_backward(3, &coeffs, dir, g, &mut grad);
        let f = |c: &[f64]| {
            let v = eval(3, c, dir);
            v[0] * g[0] + v[1] * g[1] + v[2] * g[2]
        };
        for i in 0..48 {
            let mut p = coeffs.clone();
            let mut m = coeffs.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-8, "coeff {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn degree_above_three_rejected() {
        assert!(coeff_count(4).is_err());
        assert_eq!(coeff_count(2).unwrap(), 9);
    }
}
