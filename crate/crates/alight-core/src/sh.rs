//! Real spherical harmonics, 3 bands / 9 coefficients per color channel.
//!
//! The basis is the raw real SH (Condon–Shortley-free, no cosine-lobe
//! convolution constants folded in), ordered
//! (Y₀₀, Y₁₋₁, Y₁₀, Y₁₁, Y₂₋₂, Y₂₋₁, Y₂₀, Y₂₁, Y₂₂) with band-1 components
//! proportional to (y, z, x). A light is 3×9 coefficients, channel-major,
//! and factors into a per-channel scalar intensity and a unit-norm
//! direction; that factorization is what the shared-intensity constraint in
//! the fitter operates on.

use crate::error::{Error, Result};
use crate::image::{Mask, Pixmap};
use serde::{Deserialize, Serialize};

pub const SH_COUNT: usize = 9;

const C0: f64 = 0.28209479177387814; // 1/(2√π)
const C1: f64 = 0.4886025119029199; // √(3/4π)
const C2A: f64 = 1.0925484305920792; // √(15/4π), xy / yz / xz terms
const C2C: f64 = 0.31539156525252005; // √(5/16π), (3z²−1) term
const C2E: f64 = 0.5462742152960396; // √(15/16π), (x²−y²) term

/// DC coefficient for which shading of any normal equals 1 (2√π).
pub const DC_UNIT_SHADING: f64 = 3.5449077018110318;

/// Evaluates the 9 basis functions at a unit normal.
pub fn eval_basis(n: [f64; 3]) -> [f64; SH_COUNT] {
    let [x, y, z] = n;
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2A * x * y,
        C2A * y * z,
        C2C * (3.0 * z * z - 1.0),
        C2A * x * z,
        C2E * (x * x - y * y),
    ]
}

/// One light: 9 coefficients per RGB channel, channel-major.
/// Serializes as a bare 3×9 JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShCoeffs(pub [[f64; SH_COUNT]; 3]);

impl ShCoeffs {
    pub fn zeros() -> Self {
        ShCoeffs([[0.0; SH_COUNT]; 3])
    }

    /// DC-only light producing constant shading `value` in every channel.
    pub fn constant_shading(value: f64) -> Self {
        let mut sh = ShCoeffs::zeros();
        for ch in 0..3 {
            sh.0[ch][0] = DC_UNIT_SHADING * value;
        }
        sh
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        for ch in 0..3 {
            for k in 0..SH_COUNT {
                out.0[ch][k] *= s;
            }
        }
        out
    }

    /// Euclidean norm of one channel's coefficient vector.
    pub fn channel_norm(&self, ch: usize) -> f64 {
        self.0[ch].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ShCoeffs) -> f64 {
        let mut m: f64 = 0.0;
        for ch in 0..3 {
            for k in 0..SH_COUNT {
                m = m.max((self.0[ch][k] - other.0[ch][k]).abs());
            }
        }
        m
    }
}

/// Per-channel intensity ‖γ_c‖ and unit direction γ_c/‖γ_c‖.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShDecomposition {
    pub intensity: [f64; 3],
    pub direction: [[f64; SH_COUNT]; 3],
}

/// Splits a light into intensity and unit-norm direction per channel.
/// A zero-norm channel has no direction and is an error.
pub fn decompose(sh: &ShCoeffs) -> Result<ShDecomposition> {
    let mut out = ShDecomposition {
        intensity: [0.0; 3],
        direction: [[0.0; SH_COUNT]; 3],
    };
    for ch in 0..3 {
        let norm = sh.channel_norm(ch);
        if norm == 0.0 {
            return Err(Error::ZeroNormChannel(ch));
        }
        out.intensity[ch] = norm;
        for k in 0..SH_COUNT {
            out.direction[ch][k] = sh.0[ch][k] / norm;
        }
    }
    Ok(out)
}

/// Inverse of [`decompose`].
pub fn recompose(d: &ShDecomposition) -> ShCoeffs {
    let mut sh = ShCoeffs::zeros();
    for ch in 0..3 {
        for k in 0..SH_COUNT {
            sh.0[ch][k] = d.intensity[ch] * d.direction[ch][k];
        }
    }
    sh
}

/// Shades a normal image: per valid pixel and channel, Σ_k γ_k H_k(n).
/// Invalid pixels are 0. Output is not clamped; SH shading can be negative.
pub fn shade(normals: &Pixmap, valid: &Mask, sh: &ShCoeffs) -> Result<Pixmap> {
    if normals.c != 3 {
        return Err(Error::shape(format!(
            "shade expects 3-channel normals, got {}",
            normals.c
        )));
    }
    if !valid.matches_image(normals) {
        return Err(Error::shape("shade: validity mask shape".to_string()));
    }
    let mut out = Pixmap::zeros(normals.h, normals.w, 3);
    for y in 0..normals.h {
        for x in 0..normals.w {
            if !valid.get(y, x) {
                continue;
            }
            let n = normals.pixel(y, x);
            let h = eval_basis([n[0], n[1], n[2]]);
            let o = out.pixel_mut(y, x);
            for ch in 0..3 {
                let mut s = 0.0;
                for k in 0..SH_COUNT {
                    s += sh.0[ch][k] * h[k];
                }
                o[ch] = s;
            }
        }
    }
    Ok(out)
}

/// Hadamard composition I_R = I_A ⊙ I_S.
pub fn render(albedo: &Pixmap, shading: &Pixmap) -> Result<Pixmap> {
    albedo.require_same_shape(shading, "render")?;
    let mut out = albedo.clone();
    for (o, s) in out.data.iter_mut().zip(&shading.data) {
        *o *= s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    // Frozen from hand-evaluating the closed-form real SH at
    // n = (1,1,1)/√3 before this module was written.
    const DIAG_BASIS: [f64; 9] = [
        0.28209479177387814,
        0.2820947917738782,
        0.2820947917738782,
        0.2820947917738782,
        0.3641828101973599,
        0.3641828101973599,
        0.0,
        0.3641828101973599,
        0.0,
    ];

    fn random_sh(rng: &mut ChaCha12Rng) -> ShCoeffs {
        let mut sh = ShCoeffs::zeros();
        for ch in 0..3 {
            for k in 0..SH_COUNT {
                sh.0[ch][k] = rng.random_range(-2.0..2.0);
            }
        }
        sh
    }

    #[test]
    fn dc_component_is_constant() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..100 {
            let v: [f64; 3] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n < 1e-6 {
                continue;
            }
            let b = eval_basis([v[0] / n, v[1] / n, v[2] / n]);
            assert!((b[0] - 0.2820948).abs() < 1e-7);
        }
    }

    #[test]
    fn band1_tracks_coordinates() {
        let b = eval_basis([0.0, 0.0, 1.0]);
        assert_eq!(b[1], 0.0); // y term
        assert_eq!(b[3], 0.0); // x term
        assert!(b[2] > 0.0); // z term
        // Band-1 components are proportional to (y, z, x) with one shared constant.
        let n = [0.6, 0.64, 0.48];
        let c = eval_basis(n);
        let k = c[2] / n[2];
        assert!((c[1] - k * n[1]).abs() < 1e-12);
        assert!((c[3] - k * n[0]).abs() < 1e-12);
    }

    #[test]
    fn basis_matches_closed_forms_on_diagonal() {
        let s = 1.0 / 3f64.sqrt();
        let b = eval_basis([s, s, s]);
        for k in 0..9 {
            assert!(
                (b[k] - DIAG_BASIS[k]).abs() < 1e-15,
                "component {k}: {} vs {}",
                b[k],
                DIAG_BASIS[k]
            );
        }
    }

    fn random_normals(h: usize, w: usize, rng: &mut ChaCha12Rng) -> Pixmap {
        let mut p = Pixmap::zeros(h, w, 3);
        for y in 0..h {
            for x in 0..w {
                loop {
                    let v: [f64; 3] = [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if n > 1e-3 {
                        p.pixel_mut(y, x)
                            .copy_from_slice(&[v[0] / n, v[1] / n, v[2] / n]);
                        break;
                    }
                }
            }
        }
        p
    }

    #[test]
    fn shade_dc_unit_is_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let normals = random_normals(4, 4, &mut rng);
        let valid = Mask::new(4, 4, true);
        let sh = ShCoeffs::constant_shading(1.0);
        let s = shade(&normals, &valid, &sh).unwrap();
        for v in &s.data {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shade_zero_light_and_invalid_pixels() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let normals = random_normals(3, 3, &mut rng);
        let mut valid = Mask::new(3, 3, true);
        valid.set(1, 1, false);
        let zero = shade(&normals, &valid, &ShCoeffs::zeros()).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        let lit = shade(&normals, &valid, &ShCoeffs::constant_shading(2.0)).unwrap();
        assert_eq!(lit.pixel(1, 1), &[0.0, 0.0, 0.0]);
        assert!((lit.get(0, 0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shade_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let normals = random_normals(4, 4, &mut rng);
        let valid = Mask::new(4, 4, true);
        let sh = random_sh(&mut rng);
        let got = shade(&normals, &valid, &sh).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let n = normals.pixel(y, x);
                let h = eval_basis([n[0], n[1], n[2]]);
                for ch in 0..3 {
                    let want: f64 = (0..9).map(|k| sh.0[ch][k] * h[k]).sum();
                    assert!((got.get(y, x, ch) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shade_is_linear_in_coefficients() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        let normals = random_normals(5, 3, &mut rng);
        let valid = Mask::new(5, 3, true);
        let a = random_sh(&mut rng);
        let b = random_sh(&mut rng);
        let mut sum = ShCoeffs::zeros();
        for ch in 0..3 {
            for k in 0..SH_COUNT {
                sum.0[ch][k] = 2.0 * a.0[ch][k] + b.0[ch][k];
            }
        }
        let sa = shade(&normals, &valid, &a).unwrap();
        let sb = shade(&normals, &valid, &b).unwrap();
        let ss = shade(&normals, &valid, &sum).unwrap();
        for i in 0..ss.data.len() {
            assert!((ss.data[i] - (2.0 * sa.data[i] + sb.data[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn decompose_trivials() {
        let mut sh = ShCoeffs::zeros();
        sh.0[0][0] = 2.0;
        sh.0[1][0] = 2.0;
        sh.0[2][0] = 2.0;
        let d = decompose(&sh).unwrap();
        for ch in 0..3 {
            assert_eq!(d.intensity[ch], 2.0);
            assert_eq!(d.direction[ch][0], 1.0);
            assert!(d.direction[ch][1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn decompose_unit_norm_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let mut sh = random_sh(&mut rng);
        for ch in 0..3 {
            let n = sh.channel_norm(ch);
            for k in 0..SH_COUNT {
                sh.0[ch][k] /= n;
            }
        }
        let d = decompose(&sh).unwrap();
        for ch in 0..3 {
            assert!((d.intensity[ch] - 1.0).abs() < 1e-12);
            for k in 0..SH_COUNT {
                assert!((d.direction[ch][k] - sh.0[ch][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decompose_recompose_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(27);
        for _ in 0..10_000 {
            let sh = random_sh(&mut rng);
            if (0..3).any(|ch| sh.channel_norm(ch) == 0.0) {
                continue;
            }
            let back = recompose(&decompose(&sh).unwrap());
            assert!(back.max_abs_diff(&sh) < 1e-12);
        }
    }

    #[test]
    fn decompose_rejects_zero_channel() {
        let mut sh = ShCoeffs::zeros();
        sh.0[0][0] = 1.0;
        sh.0[2][4] = 1.0;
        assert!(matches!(decompose(&sh), Err(Error::ZeroNormChannel(1))));
    }

    #[test]
    fn render_identity_zero_and_ambiguity_scale() {
        let mut rng = ChaCha12Rng::seed_from_u64(28);
        let mut albedo = Pixmap::zeros(4, 4, 3);
        for v in albedo.data.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let ones = Pixmap::filled(4, 4, 3, 1.0);
        assert_eq!(render(&albedo, &ones).unwrap(), albedo);

        let zeros = Pixmap::zeros(4, 4, 3);
        assert!(render(&zeros, &albedo).unwrap().data.iter().all(|&v| v == 0.0));

        let mut shading = Pixmap::zeros(4, 4, 3);
        for v in shading.data.iter_mut() {
            *v = rng.random_range(0.2..1.5);
        }
        let s = 3.7;
        let base = render(&albedo, &shading).unwrap();
        let scaled = render(&albedo.scaled(1.0 / s), &shading.scaled(s)).unwrap();
        assert!(base.max_abs_diff(&scaled) < 1e-12);
    }

    #[test]
    fn sh_serializes_as_bare_3x9_array() {
        let sh = ShCoeffs::constant_shading(1.0);
        let json = serde_json::to_string(&sh).unwrap();
        assert!(json.starts_with("[["));
        let back: ShCoeffs = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sh);
        let rows: Vec<Vec<f64>> = serde_json::from_str(&json).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].len(), 9);
    }
}
