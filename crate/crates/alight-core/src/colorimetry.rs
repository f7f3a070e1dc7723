//! Linear sRGB ↔ CIE L*a*b* conversion and the individual typology angle
//! (ITA) used to bucket skin tones into six types.
//!
//! Albedo maps in this crate hold linear-light reflectance, so `rgb_to_lab`
//! takes linear RGB directly; the sRGB transfer functions exist for 8-bit
//! image import/export. The XYZ matrix is derived from the sRGB primaries
//! with a D65 white point (2° observer), and the Lab white is the matrix row
//! sum, so neutral gray maps to a = b = 0 exactly.

use crate::error::{Error, Result};
use crate::image::{Mask, Pixmap};
use serde::{Deserialize, Serialize};

/// Linear sRGB → CIE XYZ (D65, 2° observer), rows X, Y, Z.
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4123907992659594, 0.35758433938387796, 0.1804807884018343],
    [0.2126390058715103, 0.7151686787677559, 0.07219231536073371],
    [0.01933081871559182, 0.11919477979462596, 0.9505321522496607],
];

/// Inverse of [`SRGB_TO_XYZ`].
pub const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2409699419045213, -1.5373831775700932, -0.4986107602930032],
    [-0.9692436362808794, 1.8759675015077202, 0.04155505740717556],
    [0.05563007969699359, -0.20397695888897646, 1.0569715142428784],
];

/// Reference white: image of (1,1,1), i.e. the row sums of [`SRGB_TO_XYZ`].
pub const D65_WHITE: [f64; 3] = [
    SRGB_TO_XYZ[0][0] + SRGB_TO_XYZ[0][1] + SRGB_TO_XYZ[0][2],
    SRGB_TO_XYZ[1][0] + SRGB_TO_XYZ[1][1] + SRGB_TO_XYZ[1][2],
    SRGB_TO_XYZ[2][0] + SRGB_TO_XYZ[2][1] + SRGB_TO_XYZ[2][2],
];

/// sRGB decoding (IEC 61966-2-1 piecewise EOTF), display value → linear.
pub fn srgb_to_linear(u: f64) -> f64 {
    if u <= 0.04045 {
        u / 12.92
    } else {
        ((u + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB encoding, linear → display value. Inverse of [`srgb_to_linear`].
pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        // Algebraically 1.055·v^(1/2.4) − 0.055, arranged so 1 maps to 1
        // exactly.
        1.055 * (v.powf(1.0 / 2.4) - 1.0) + 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

const LAB_DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > LAB_DELTA * LAB_DELTA * LAB_DELTA {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > LAB_DELTA {
        t * t * t
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (t - 4.0 / 29.0)
    }
}

/// Linear RGB → Lab. Input is not clamped; out-of-gamut values pass through
/// the same formulas.
pub fn rgb_to_lab(rgb: [f64; 3]) -> Lab {
    let mut xyz = [0.0; 3];
    for (i, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[i] = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
    }
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Lab → linear RGB. May return components outside [0,1] for out-of-gamut
/// colors; callers clamp where needed.
pub fn lab_to_rgb(lab: Lab) -> [f64; 3] {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let xyz = [
        lab_f_inv(fx) * D65_WHITE[0],
        lab_f_inv(fy) * D65_WHITE[1],
        lab_f_inv(fz) * D65_WHITE[2],
    ];
    let mut rgb = [0.0; 3];
    for (i, row) in XYZ_TO_SRGB.iter().enumerate() {
        rgb[i] = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
    }
    rgb
}

/// Individual typology angle in degrees: atan2(L−50, b), folded into
/// (−90, 90] (angles are taken modulo 180 so b ≤ 0 stays well defined; the
/// degenerate point L = 50, b = 0 returns 0).
pub fn ita_degrees(lab: Lab) -> f64 {
    let mut deg = (lab.l - 50.0).atan2(lab.b).to_degrees();
    if deg > 90.0 {
        deg -= 180.0;
    }
    if deg <= -90.0 {
        deg += 180.0;
    }
    deg
}

/// Skin-type bucket by ITA, type I lightest to type VI darkest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SkinType {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl SkinType {
    pub const ALL: [SkinType; 6] = [
        SkinType::I,
        SkinType::II,
        SkinType::III,
        SkinType::IV,
        SkinType::V,
        SkinType::VI,
    ];

    pub fn index(self) -> usize {
        match self {
            SkinType::I => 0,
            SkinType::II => 1,
            SkinType::III => 2,
            SkinType::IV => 3,
            SkinType::V => 4,
            SkinType::VI => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<SkinType> {
        SkinType::ALL.get(i).copied()
    }

    /// ITA interval (lo, hi] for this type; type I is open above, type VI
    /// open below.
    pub fn ita_range(self) -> (f64, f64) {
        match self {
            SkinType::I => (55.0, 90.0),
            SkinType::II => (41.0, 55.0),
            SkinType::III => (28.0, 41.0),
            SkinType::IV => (10.0, 28.0),
            SkinType::V => (-30.0, 10.0),
            SkinType::VI => (-90.0, -30.0),
        }
    }
}

impl std::fmt::Display for SkinType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SkinType::I => "I",
            SkinType::II => "II",
            SkinType::III => "III",
            SkinType::IV => "IV",
            SkinType::V => "V",
            SkinType::VI => "VI",
        };
        f.write_str(s)
    }
}

/// Buckets an ITA in degrees. Thresholds: I > 55 ≥ II > 41 ≥ III > 28 ≥
/// IV > 10 ≥ V > −30 ≥ VI. Total over (−90, 90].
pub fn classify_skin_type(ita: f64) -> SkinType {
    if ita > 55.0 {
        SkinType::I
    } else if ita > 41.0 {
        SkinType::II
    } else if ita > 28.0 {
        SkinType::III
    } else if ita > 10.0 {
        SkinType::IV
    } else if ita > -30.0 {
        SkinType::V
    } else {
        SkinType::VI
    }
}

/// Mean of per-pixel ITA over the masked pixels of a linear RGB map.
pub fn mean_ita(map: &Pixmap, mask: &Mask) -> Result<f64> {
    if map.c != 3 {
        return Err(Error::shape(format!("mean_ita needs 3 channels, got {}", map.c)));
    }
    if !mask.matches_image(map) {
        return Err(Error::shape(format!(
            "mask {}x{} vs map {}x{}",
            mask.h, mask.w, map.h, map.w
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..map.h {
        for x in 0..map.w {
            if mask.get(y, x) {
                let p = map.pixel(y, x);
                sum += ita_degrees(rgb_to_lab([p[0], p[1], p[2]]));
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("mean_ita"));
    }
    Ok(sum / n as f64)
}

/// How the per-face ITA error is reduced over the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItaErrorMode {
    /// |mean ITA(prediction) − mean ITA(ground truth)|. The default; this is
    /// the quantity the benchmark aggregates.
    DifferenceOfMeans,
    /// Mean over masked pixels of |ITA(prediction) − ITA(ground truth)|.
    PerPixel,
}

/// ITA error in degrees between a predicted and a ground-truth map.
pub fn ita_error(pred: &Pixmap, gt: &Pixmap, mask: &Mask, mode: ItaErrorMode) -> Result<f64> {
    pred.require_same_shape(gt, "ita_error")?;
    match mode {
        ItaErrorMode::DifferenceOfMeans => Ok((mean_ita(pred, mask)? - mean_ita(gt, mask)?).abs()),
        ItaErrorMode::PerPixel => {
            if pred.c != 3 {
                return Err(Error::shape("ita_error needs 3 channels".to_string()));
            }
            if !mask.matches_image(pred) {
                return Err(Error::shape("ita_error mask shape".to_string()));
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for y in 0..pred.h {
                for x in 0..pred.w {
                    if mask.get(y, x) {
                        let p = pred.pixel(y, x);
                        let g = gt.pixel(y, x);
                        let ip = ita_degrees(rgb_to_lab([p[0], p[1], p[2]]));
                        let ig = ita_degrees(rgb_to_lab([g[0], g[1], g[2]]));
                        sum += (ip - ig).abs();
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(Error::EmptyMask("ita_error"));
            }
            Ok(sum / n as f64)
        }
    }
}
