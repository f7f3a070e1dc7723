//! On-disk formats.
//!
//! Float images travel as raw little-endian f32 (`.f32`, row-major,
//! channel-interleaved) with a `<name>.f32.json` sidecar recording shape
//! and kind; 8-bit PNGs are used for viewable sRGB crops and for 0/255
//! masks. Geometry buffers pack into one 7-channel .f32 map (normal ×3,
//! uv ×2, depth, mask). PCA models use a small binary container: magic,
//! u64 header length, JSON header (side, component count, eigenvalues as
//! exact f64), then f32 blobs for mean and basis. Basis vectors are
//! re-orthonormalized after every load so that quantization cannot break
//! projection idempotence.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::albedo::PcaModel;
use crate::colorimetry::{linear_to_srgb, srgb_to_linear};
use crate::error::{Error, Result};
use crate::image::{Mask, Pixmap};
use crate::raster::GBuffer;
use crate::sh::ShCoeffs;

/// Shape and provenance of a raw .f32 map.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sidecar {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

pub fn save_f32(path: &Path, map: &Pixmap, kind: &str) -> Result<()> {
    save_f32_with_meta(path, map, kind, serde_json::Map::new())
}

pub fn save_f32_with_meta(
    path: &Path,
    map: &Pixmap,
    kind: &str,
    meta: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(map.data.len() * 4);
    for &v in &map.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let sidecar = Sidecar {
        height: map.h,
        width: map.w,
        channels: map.c,
        kind: kind.to_string(),
        meta,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_f32(path: &Path) -> Result<(Pixmap, Sidecar)> {
    let sc_path = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(&sc_path).map_err(|e| {
        Error::Format {
            path: sc_path.display().to_string(),
            reason: format!("missing sidecar: {e}"),
        }
    })?)?;
    let bytes = fs::read(path)?;
    let expect = sidecar.height * sidecar.width * sidecar.channels * 4;
    if bytes.len() != expect {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected {expect} bytes, found {}", bytes.len()),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let map = Pixmap::from_data(sidecar.height, sidecar.width, sidecar.channels, data)?;
    Ok((map, sidecar))
}

/// Writes a linear-RGB map as an 8-bit sRGB PNG (values clamped to [0, 1]).
pub fn save_srgb_png(path: &Path, linear: &Pixmap) -> Result<()> {
    if linear.c != 3 {
        return Err(Error::shape("sRGB PNG export needs 3 channels".to_string()));
    }
    let mut buf = Vec::with_capacity(linear.data.len());
    for &v in &linear.data {
        let s = linear_to_srgb(v.clamp(0.0, 1.0));
        buf.push((s * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    let img = image::RgbImage::from_raw(linear.w as u32, linear.h as u32, buf)
        .expect("buffer sized from the pixmap");
    img.save(path)?;
    Ok(())
}

/// Reads an 8-bit sRGB PNG into a linear-RGB map.
pub fn load_srgb_png(path: &Path) -> Result<Pixmap> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| srgb_to_linear(b as f64 / 255.0))
        .collect();
    Pixmap::from_data(h, w, 3, data)
}

pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let buf: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.w as u32, mask.h as u32, buf)
        .expect("buffer sized from the mask");
    img.save(path)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut mask = Mask::new(h, w, false);
    for (i, p) in img.into_raw().into_iter().enumerate() {
        mask.data[i] = p >= 128;
    }
    Ok(mask)
}

/// G-buffer plane order inside the packed 7-channel map.
const GB_KIND: &str = "gbuffer";

pub fn save_gbuffer(path: &Path, gb: &GBuffer) -> Result<()> {
    let (h, w) = (gb.normal.h, gb.normal.w);
    let mut packed = Pixmap::zeros(h, w, 7);
    for i in 0..h * w {
        let o = i * 7;
        packed.data[o] = gb.normal.data[i * 3];
        packed.data[o + 1] = gb.normal.data[i * 3 + 1];
        packed.data[o + 2] = gb.normal.data[i * 3 + 2];
        packed.data[o + 3] = gb.uv.data[i * 2];
        packed.data[o + 4] = gb.uv.data[i * 2 + 1];
        // Uncovered depth is −∞ in memory; store a finite sentinel so the
        // f32 file round-trips exactly.
        packed.data[o + 5] = if gb.mask.data[i] { gb.depth.data[i] } else { 0.0 };
        packed.data[o + 6] = if gb.mask.data[i] { 1.0 } else { 0.0 };
    }
    let mut meta = serde_json::Map::new();
    meta.insert(
        "planes".to_string(),
        serde_json::json!(["normal", "uv", "depth", "mask"]),
    );
    meta.insert(
        "degenerate_tris".to_string(),
        serde_json::json!(gb.degenerate_tris),
    );
    save_f32_with_meta(path, &packed, GB_KIND, meta)
}

pub fn load_gbuffer(path: &Path) -> Result<GBuffer> {
    let (packed, sidecar) = load_f32(path)?;
    if sidecar.kind != GB_KIND || packed.c != 7 {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("not a gbuffer (kind '{}', {} channels)", sidecar.kind, packed.c),
        });
    }
    let (h, w) = (packed.h, packed.w);
    let mut gb = GBuffer {
        normal: Pixmap::zeros(h, w, 3),
        uv: Pixmap::zeros(h, w, 2),
        depth: Pixmap::filled(h, w, 1, f64::NEG_INFINITY),
        mask: Mask::new(h, w, false),
        degenerate_tris: sidecar
            .meta
            .get("degenerate_tris")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as usize,
    };
    for i in 0..h * w {
        let o = i * 7;
        gb.normal.data[i * 3] = packed.data[o];
        gb.normal.data[i * 3 + 1] = packed.data[o + 1];
        gb.normal.data[i * 3 + 2] = packed.data[o + 2];
        gb.uv.data[i * 2] = packed.data[o + 3];
        gb.uv.data[i * 2 + 1] = packed.data[o + 4];
        if packed.data[o + 6] >= 0.5 {
            gb.mask.data[i] = true;
            gb.depth.data[i] = packed.data[o + 5];
        }
    }
    Ok(gb)
}

const MODEL_MAGIC: &[u8; 8] = b"ALIGHTM1";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    side: usize,
    components: usize,
    eigenvalues: Vec<f64>,
}

pub fn save_model(path: &Path, model: &PcaModel) -> Result<()> {
    let header = ModelHeader {
        side: model.d,
        components: model.n_components(),
        eigenvalues: model.eigenvalues.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut f = fs::File::create(path)?;
    f.write_all(MODEL_MAGIC)?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    let mut blob =
        Vec::with_capacity((model.mean.len() + model.basis.len()) * 4);
    for &v in model.mean.iter().chain(model.basis.iter()) {
        blob.extend_from_slice(&(v as f32).to_le_bytes());
    }
    f.write_all(&blob)?;
    Ok(())
}

/// Loads a PCA model and re-orthonormalizes the basis, repairing f32
/// quantization so projection idempotence holds on the loaded model.
pub fn load_model(path: &Path) -> Result<PcaModel> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "bad magic".to_string(),
        });
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: ModelHeader = serde_json::from_slice(&header_json)?;
    if header.eigenvalues.len() != header.components {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "eigenvalue count disagrees with component count".to_string(),
        });
    }
    let dim = header.side * header.side * 3;
    let mut blob = Vec::new();
    f.read_to_end(&mut blob)?;
    let expect = (dim + header.components * dim) * 4;
    if blob.len() != expect {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected {expect} blob bytes, found {}", blob.len()),
        });
    }
    let floats: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut model = PcaModel {
        d: header.side,
        mean: floats[..dim].to_vec(),
        basis: floats[dim..].to_vec(),
        eigenvalues: header.eigenvalues,
    };
    model.reorthonormalize();
    Ok(model)
}

/// Type anchors live beside the model as plain JSON; they are sampling
/// metadata, not part of the PCA container.
pub fn save_anchors(path: &Path, anchors: &crate::albedo::TypeAnchors) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(anchors)?)?;
    Ok(())
}

pub fn load_anchors(path: &Path) -> Result<crate::albedo::TypeAnchors> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn save_sh_json(path: &Path, sh: &ShCoeffs) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(sh)?)?;
    Ok(())
}

pub fn load_sh_json(path: &Path) -> Result<ShCoeffs> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
