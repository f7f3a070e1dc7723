//! Whitened PCA model over UV albedo maps, and the procedural subject
//! library it is trained on.
//!
//! The library paints d×d facial reflectance maps in Lab space: a per-type
//! base tone (jittered around a centroid whose ITA sits mid-bucket), smooth
//! low-frequency tone variation, and darker lip/brow/eye regions at fixed UV
//! positions. The skin mask excludes those features plus everything outside
//! the face oval, so masked ITA statistics measure skin tone only. Building
//! with `per_type` ≥ 5 yields a training set whose mean ITAs cover all six
//! skin-type buckets, which is the balance property the benchmark relies on.

use crate::colorimetry::{self, ita_degrees, lab_to_rgb, Lab, SkinType};
use crate::error::{Error, Result};
use crate::image::{Mask, Pixmap};
use crate::parallel::{map_indexed, mix_seed, Parallelism};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// PCA texture model. `basis` holds `n_components` orthonormal columns of
/// length `d·d·3`, stored component-major; `eigenvalues` are the matching
/// sample-covariance variances (Bessel-corrected), descending. Coefficients
/// are whitened: synthesis scales component k by √eigenvalue[k], projection
/// divides by it, so α is in units of standard deviations.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub d: usize,
    pub mean: Vec<f64>,
    pub basis: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn map_len(&self) -> usize {
        self.d * self.d * 3
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.map_len();
        &self.basis[k * n..(k + 1) * n]
    }

    /// mean + Σ_k α_k √λ_k u_k. Components with zero variance contribute
    /// nothing regardless of α.
    pub fn synthesize(&self, alpha: &[f64]) -> Result<Pixmap> {
        if alpha.len() != self.n_components() {
            return Err(Error::invalid(format!(
                "alpha length {} != {} components",
                alpha.len(),
                self.n_components()
            )));
        }
        let mut data = self.mean.clone();
        for (k, &a) in alpha.iter().enumerate() {
            let s = a * self.eigenvalues[k].sqrt();
            if s == 0.0 {
                continue;
            }
            for (o, &b) in data.iter_mut().zip(self.component(k)) {
                *o += s * b;
            }
        }
        Pixmap::from_data(self.d, self.d, 3, data)
    }

    /// Whitened coefficients of the least-squares fit of `map` in the basis.
    /// Zero-variance components get coefficient 0.
    pub fn project(&self, map: &Pixmap) -> Result<Vec<f64>> {
        if map.h != self.d || map.w != self.d || map.c != 3 {
            return Err(Error::shape(format!(
                "project: map {}x{}x{} vs model d={}",
                map.h, map.w, map.c, self.d
            )));
        }
        let mut alpha = vec![0.0; self.n_components()];
        for k in 0..self.n_components() {
            let lam = self.eigenvalues[k];
            if lam == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for ((&m, &mu), &b) in map.data.iter().zip(&self.mean).zip(self.component(k)) {
                dot += (m - mu) * b;
            }
            alpha[k] = dot / lam.sqrt();
        }
        Ok(alpha)
    }

    /// Max |uᵀu − I| entry over component pairs (zero-variance columns are
    /// excluded; they are all-zero by construction).
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_components() {
            if self.eigenvalues[i] == 0.0 {
                continue;
            }
            for j in i..self.n_components() {
                if self.eigenvalues[j] == 0.0 {
                    continue;
                }
                let dot: f64 = self
                    .component(i)
                    .iter()
                    .zip(self.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Modified Gram-Schmidt pass. File storage quantizes the basis to f32,
    /// which costs ~1e-7 of orthonormality; loading runs this to restore it
    /// so projection/synthesis round-trips stay at f64 precision.
    pub fn reorthonormalize(&mut self) {
        let n = self.map_len();
        let k = self.n_components();
        for i in 0..k {
            if self.eigenvalues[i] == 0.0 {
                continue;
            }
            for j in 0..i {
                if self.eigenvalues[j] == 0.0 {
                    continue;
                }
                let dot: f64 = self
                    .component(i)
                    .iter()
                    .zip(self.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let (head, tail) = self.basis.split_at_mut(i * n);
                let uj = &head[j * n..(j + 1) * n];
                for (a, &b) in tail[..n].iter_mut().zip(uj) {
                    *a -= dot * b;
                }
            }
            let col = &mut self.basis[i * n..(i + 1) * n];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in col.iter_mut() {
                    *v /= norm;
                }
            }
        }
    }
}

/// PCA by eigendecomposition of the n×n Gram matrix of centered samples
/// (n ≪ d·d·3 here, so this is the cheap route). Keeps exactly
/// `n_components` components; directions beyond the sample rank get zero
/// eigenvalue and a zero column. Basis signs are canonicalized so the
/// largest-magnitude entry of each column is positive.
pub fn fit_pca(samples: &[Pixmap], n_components: usize) -> Result<PcaModel> {
    if n_components == 0 {
        return Err(Error::invalid("n_components must be ≥ 1"));
    }
    if samples.len() <= n_components {
        return Err(Error::invalid(format!(
            "need more samples ({}) than components ({})",
            samples.len(),
            n_components
        )));
    }
    let first = &samples[0];
    if first.c != 3 || first.h != first.w {
        return Err(Error::shape("fit_pca expects square 3-channel maps".to_string()));
    }
    for s in samples {
        s.require_same_shape(first, "fit_pca samples")?;
    }
    let d = first.h;
    let n = samples.len();
    let len = d * d * 3;

    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(&s.data) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.data.iter().zip(&mean).map(|(&v, &m)| v - m).collect())
        .collect();

    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[(i, j)] = dot;
            gram[(j, i)] = dot;
        }
    }

    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lam_max = eig.eigenvalues[order[0]].max(0.0);
    let tol = (lam_max * 1e-12).max(1e-10);

    let mut basis = vec![0.0; n_components * len];
    let mut eigenvalues = vec![0.0; n_components];
    for k in 0..n_components {
        let idx = order[k];
        let lam_g = eig.eigenvalues[idx];
        if lam_g <= tol {
            continue; // zero column, zero eigenvalue
        }
        let col = &mut basis[k * len..(k + 1) * len];
        for (i, row) in centered.iter().enumerate() {
            let w = eig.eigenvectors[(i, idx)];
            if w == 0.0 {
                continue;
            }
            for (o, &v) in col.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in col.iter_mut() {
            *v /= norm;
        }
        // Canonical sign: largest-|entry| positive.
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            for v in col.iter_mut() {
                *v = -*v;
            }
        }
        eigenvalues[k] = lam_g / (n as f64 - 1.0);
    }

    Ok(PcaModel {
        d,
        mean,
        basis,
        eigenvalues,
    })
}

/// UV-space face layout shared by the albedo painter, the skin mask and the
/// head mesh parametrization (u = azimuth with the face centered at 0.5,
/// v = height with 1 at the crown). Ellipses are (center, radii) in UV.
pub mod layout {
    pub const FACE: ([f64; 2], [f64; 2]) = ([0.5, 0.52], [0.32, 0.36]);
    pub const EYE_LEFT: ([f64; 2], [f64; 2]) = ([0.41, 0.60], [0.055, 0.032]);
    pub const EYE_RIGHT: ([f64; 2], [f64; 2]) = ([0.59, 0.60], [0.055, 0.032]);
    pub const BROW_LEFT: ([f64; 2], [f64; 2]) = ([0.41, 0.665], [0.068, 0.020]);
    pub const BROW_RIGHT: ([f64; 2], [f64; 2]) = ([0.59, 0.665], [0.068, 0.020]);
    pub const LIPS: ([f64; 2], [f64; 2]) = ([0.5, 0.40], [0.085, 0.036]);

    pub const FEATURES: [([f64; 2], [f64; 2]); 5] =
        [EYE_LEFT, EYE_RIGHT, BROW_LEFT, BROW_RIGHT, LIPS];

    /// Normalized elliptic radius: 0 at the center, 1 on the boundary.
    pub fn radius(uv: [f64; 2], ellipse: ([f64; 2], [f64; 2])) -> f64 {
        let du = (uv[0] - ellipse.0[0]) / ellipse.1[0];
        let dv = (uv[1] - ellipse.0[1]) / ellipse.1[1];
        (du * du + dv * dv).sqrt()
    }

    /// UV coordinates of a texel center; texel row 0 is the top of the map.
    pub fn texel_uv(tx: usize, ty: usize, d: usize) -> [f64; 2] {
        [
            (tx as f64 + 0.5) / d as f64,
            1.0 - (ty as f64 + 0.5) / d as f64,
        ]
    }
}

/// Skin mask matching [`layout`]: the face oval minus eye/brow/lip regions
/// (grown by a small margin so feature edges do not leak into skin stats).
pub fn skin_mask(d: usize) -> Mask {
    let mut mask = Mask::new(d, d, false);
    for ty in 0..d {
        for tx in 0..d {
            let uv = layout::texel_uv(tx, ty, d);
            if layout::radius(uv, layout::FACE) > 1.0 {
                continue;
            }
            let on_feature = layout::FEATURES
                .iter()
                .any(|&f| layout::radius(uv, f) < 1.15);
            mask.set(ty, tx, !on_feature);
        }
    }
    mask
}

/// Lab centroid per skin type; chosen so the centroid ITA sits comfortably
/// inside each type's bucket (cf. `SkinType::ita_range`).
pub fn tone_centroid(t: SkinType) -> Lab {
    let (l, a, b) = match t {
        SkinType::I => (66.0, 12.0, 8.5),     // ITA ≈ 62°
        SkinType::II => (64.0, 13.0, 12.6),   // ≈ 48°
        SkinType::III => (60.0, 14.5, 14.6),  // ≈ 34°
        SkinType::IV => (55.5, 16.0, 16.0),   // ≈ 19°
        SkinType::V => (47.0, 17.0, 17.0),    // ≈ −10°
        SkinType::VI => (33.0, 15.0, 17.0),   // ≈ −45°
    };
    Lab { l, a, b }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Paints one subject map of the requested type. Deterministic in `rng`.
pub fn synthesize_subject(d: usize, t: SkinType, rng: &mut ChaCha12Rng) -> Pixmap {
    // Base tone: jitter around the centroid, rejected back into the bucket
    // (with margin) so the masked mean ITA stays classifiable.
    let centroid = tone_centroid(t);
    let (lo, hi) = t.ita_range();
    let mut base = centroid;
    for _ in 0..64 {
        let cand = Lab {
            l: centroid.l + rng.random_range(-2.2..2.2),
            a: centroid.a + rng.random_range(-1.5..1.5),
            b: centroid.b + rng.random_range(-1.5..1.5),
        };
        let ita = ita_degrees(cand);
        if ita > lo + 0.75 && ita <= hi - 0.75 {
            base = cand;
            break;
        }
    }

    // Low-frequency tone variation: three cosine waves per Lab axis.
    let mut waves = Vec::with_capacity(9);
    for axis in 0..3usize {
        for _ in 0..3 {
            let amp = match axis {
                0 => rng.random_range(0.4..1.4),
                _ => rng.random_range(0.15..0.55),
            };
            waves.push((
                axis,
                amp,
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            ));
        }
    }

    let lip_tint = rng.random_range(0.8..1.2);
    let brow_dark = rng.random_range(0.85..1.15);

    let mut map = Pixmap::zeros(d, d, 3);
    for ty in 0..d {
        for tx in 0..d {
            let uv = layout::texel_uv(tx, ty, d);
            let mut lab = base;
            for &(axis, amp, fu, fv, phase) in &waves {
                let v = amp * (std::f64::consts::TAU * (fu * uv[0] + fv * uv[1]) + phase).cos();
                match axis {
                    0 => lab.l += v,
                    1 => lab.a += v,
                    _ => lab.b += v,
                }
            }
            // Features: weight 1 inside, fading out at the ellipse boundary.
            let lips = 1.0 - smoothstep(0.8, 1.0, layout::radius(uv, layout::LIPS));
            if lips > 0.0 {
                lab.l -= 12.0 * lip_tint * lips;
                lab.a += 8.0 * lip_tint * lips;
                lab.b -= 2.0 * lips;
            }
            for brow in [layout::BROW_LEFT, layout::BROW_RIGHT] {
                let wgt = 1.0 - smoothstep(0.8, 1.0, layout::radius(uv, brow));
                if wgt > 0.0 {
                    lab.l -= 18.0 * brow_dark * wgt;
                    lab.b -= 6.0 * wgt;
                }
            }
            for eye in [layout::EYE_LEFT, layout::EYE_RIGHT] {
                let wgt = 1.0 - smoothstep(0.8, 1.0, layout::radius(uv, eye));
                if wgt > 0.0 {
                    lab.l -= 10.0 * wgt;
                    lab.a -= 4.0 * wgt;
                }
            }
            let rgb = lab_to_rgb(lab);
            let px = map.pixel_mut(ty, tx);
            for c in 0..3 {
                px[c] = rgb[c].clamp(1e-4, 0.98);
            }
        }
    }
    map
}

#[derive(Debug, Clone)]
pub struct LibraryConfig {
    pub d: usize,
    pub per_type: usize,
    pub seed: u64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig {
            d: 256,
            per_type: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LibrarySample {
    pub skin_type: SkinType,
    pub mean_ita: f64,
    pub map: Pixmap,
}

/// Deterministic per-subject seed, independent of build parallelism.
fn subject_seed(base: u64, type_idx: usize, sample_idx: usize) -> u64 {
    mix_seed(base, type_idx as u64 + 1, sample_idx as u64 + 1)
}

/// Builds the balanced subject library: `per_type` subjects for each of the
/// six types, in type-major order.
pub fn build_library(cfg: &LibraryConfig, par: Parallelism) -> Result<Vec<LibrarySample>> {
    if cfg.per_type == 0 || cfg.d < 16 {
        return Err(Error::invalid("library needs per_type ≥ 1 and d ≥ 16"));
    }
    let mask = skin_mask(cfg.d);
    let total = 6 * cfg.per_type;
    let samples = map_indexed(total, par, |i| {
        let type_idx = i / cfg.per_type;
        let sample_idx = i % cfg.per_type;
        let t = SkinType::from_index(type_idx).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(subject_seed(cfg.seed, type_idx, sample_idx));
        let map = synthesize_subject(cfg.d, t, &mut rng);
        let mean_ita = colorimetry::mean_ita(&map, &mask).expect("library mask nonempty");
        LibrarySample {
            skin_type: t,
            mean_ita,
            map,
        }
    });
    Ok(samples)
}

/// Coverage of a sample set: counts and ITAs per type, classified by each
/// sample's masked mean ITA (not by its label).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    pub per_type: [usize; 6],
    pub mean_ita_by_type: [Vec<f64>; 6],
}

impl BalanceReport {
    pub fn covers_all_types(&self, min_per_type: usize) -> bool {
        self.per_type.iter().all(|&n| n >= min_per_type)
    }
}

pub fn balance_report(samples: &[LibrarySample]) -> BalanceReport {
    let mut per_type = [0usize; 6];
    let mut itas: [Vec<f64>; 6] = Default::default();
    for s in samples {
        let t = colorimetry::classify_skin_type(s.mean_ita);
        per_type[t.index()] += 1;
        itas[t.index()].push(s.mean_ita);
    }
    BalanceReport {
        per_type,
        mean_ita_by_type: itas,
    }
}

/// Whitened coefficients of known-type subjects, bucketed by measured mean
/// ITA. The benchmark's type-then-subject sampler draws around these.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TypeAnchors(pub [Vec<Vec<f64>>; 6]);

impl TypeAnchors {
    pub fn counts(&self) -> [usize; 6] {
        std::array::from_fn(|i| self.0[i].len())
    }

    pub fn missing_types(&self) -> Vec<SkinType> {
        SkinType::ALL
            .iter()
            .copied()
            .filter(|t| self.0[t.index()].is_empty())
            .collect()
    }
}

/// Projects every library sample into the model and buckets the resulting
/// coefficients by the sample's measured type.
pub fn project_library(model: &PcaModel, samples: &[LibrarySample]) -> Result<TypeAnchors> {
    let mut anchors = TypeAnchors::default();
    for s in samples {
        let t = colorimetry::classify_skin_type(s.mean_ita);
        anchors.0[t.index()].push(model.project(&s.map)?);
    }
    Ok(anchors)
}

/// Builds the library, fits the PCA model, and projects the library back
/// into it, in one step.
pub fn build_model(
    cfg: &LibraryConfig,
    n_components: usize,
    par: Parallelism,
) -> Result<(PcaModel, BalanceReport, TypeAnchors)> {
    let samples = build_library(cfg, par)?;
    let report = balance_report(&samples);
    let model = {
        let maps: Vec<Pixmap> = samples.iter().map(|s| s.map.clone()).collect();
        fit_pca(&maps, n_components)?
    };
    let anchors = project_library(&model, &samples)?;
    Ok((model, report, anchors))
}
