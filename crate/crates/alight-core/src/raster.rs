//! Triangle-mesh rasterization into a geometry buffer, and bilinear warping
//! of UV maps into image space.
//!
//! The camera is weak-perspective: rotate into camera space, scale the x/y
//! coordinates, add a 2-D translation. Camera space has +z toward the
//! viewer and +y up; screen rows grow downward. Rasterization z-buffers with
//! "larger z wins" and breaks exact depth ties toward the lower triangle
//! index, interpolates vertex normals (renormalized) and UVs
//! barycentrically, and skips zero-area triangles, reporting their count.
//! Nothing here is differentiable through visibility; the fit treats
//! coverage and sampling locations as fixed.

use crate::error::{Error, Result};
use crate::image::{Mask, Pixmap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corner {
    pub v: usize,
    pub vt: usize,
    pub vn: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub positions: Vec<[f64; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 3]>,
    pub faces: Vec<[Corner; 3]>,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl Mesh {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.faces.iter().enumerate() {
            for c in f {
                if c.v >= self.positions.len()
                    || c.vt >= self.uvs.len()
                    || c.vn >= self.normals.len()
                {
                    return Err(Error::invalid(format!("face {i} references missing data")));
                }
            }
        }
        Ok(())
    }

    /// Area-weighted vertex normals from face geometry; used when an OBJ
    /// carries no vn records.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.positions.len()];
        for f in &self.faces {
            let [a, b, c] = [
                self.positions[f[0].v],
                self.positions[f[1].v],
                self.positions[f[2].v],
            ];
            let n = cross(sub(b, a), sub(c, a)); // length ∝ area
            for corner in f {
                for k in 0..3 {
                    acc[corner.v][k] += n[k];
                }
            }
        }
        for n in acc.iter_mut() {
            let l = norm(*n);
            if l > 0.0 {
                for k in 0..3 {
                    n[k] /= l;
                }
            } else {
                *n = [0.0, 0.0, 1.0];
            }
        }
        self.normals = acc;
        for f in self.faces.iter_mut() {
            for c in f.iter_mut() {
                c.vn = c.v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub scale: f64,
    pub translation: [f64; 2],
    pub rotation: [[f64; 3]; 3],
}

impl Camera {
    /// Checks scale > 0 and RᵀR = I (to 1e-9).
    pub fn new(scale: f64, translation: [f64; 2], rotation: [[f64; 3]; 3]) -> Result<Camera> {
        if scale <= 0.0 || scale.is_nan() {
            return Err(Error::invalid("camera scale must be positive"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-9 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(Camera {
            scale,
            translation,
            rotation,
        })
    }

    /// Identity rotation (head facing the viewer).
    pub fn front(scale: f64, translation: [f64; 2]) -> Camera {
        Camera {
            scale,
            translation,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// R = Rz(roll)·Rx(pitch)·Ry(yaw), angles in radians.
    pub fn from_angles(scale: f64, translation: [f64; 2], yaw: f64, pitch: f64, roll: f64) -> Camera {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
        let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            m
        };
        Camera {
            scale,
            translation,
            rotation: mul(rz, mul(rx, ry)),
        }
    }

    pub fn to_camera_space(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    /// Screen position (x right, y down) and depth (larger = nearer).
    pub fn project(&self, p: [f64; 3]) -> ([f64; 2], f64) {
        let c = self.to_camera_space(p);
        (
            [
                self.scale * c[0] + self.translation[0],
                -self.scale * c[1] + self.translation[1],
            ],
            c[2],
        )
    }
}

/// Per-pixel geometry: camera-space unit normals (3ch), UV (2ch), depth
/// (1ch), coverage mask, plus the count of degenerate triangles the
/// rasterizer skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub normal: Pixmap,
    pub uv: Pixmap,
    pub depth: Pixmap,
    pub mask: Mask,
    pub degenerate_tris: usize,
}

pub fn rasterize(mesh: &Mesh, cam: &Camera, h: usize, w: usize) -> Result<GBuffer> {
    mesh.validate()?;
    let mut gb = GBuffer {
        normal: Pixmap::zeros(h, w, 3),
        uv: Pixmap::zeros(h, w, 2),
        depth: Pixmap::filled(h, w, 1, f64::NEG_INFINITY),
        mask: Mask::new(h, w, false),
        degenerate_tris: 0,
    };
    let mut winner = vec![usize::MAX; h * w];

    let projected: Vec<([f64; 2], f64)> = mesh.positions.iter().map(|&p| cam.project(p)).collect();
    let cam_normals: Vec<[f64; 3]> = mesh.normals.iter().map(|&n| cam.to_camera_space(n)).collect();

    for (ti, face) in mesh.faces.iter().enumerate() {
        let (pa, za) = projected[face[0].v];
        let (pb, zb) = projected[face[1].v];
        let (pc, zc) = projected[face[2].v];
        let area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
        if area.abs() < 1e-12 {
            gb.degenerate_tris += 1;
            continue;
        }
        let min_x = pa[0].min(pb[0]).min(pc[0]).floor().max(0.0) as usize;
        let max_x = (pa[0].max(pb[0]).max(pc[0]).ceil() as isize).min(w as isize - 1);
        let min_y = pa[1].min(pb[1]).min(pc[1]).floor().max(0.0) as usize;
        let max_y = (pa[1].max(pb[1]).max(pc[1]).ceil() as isize).min(h as isize - 1);
        if max_x < 0 || max_y < 0 {
            continue;
        }
        let (max_x, max_y) = (max_x as usize, max_y as usize);

        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                // Signed sub-areas over the signed full area: inside iff all
                // barycentrics are non-negative, independent of winding.
                let lb = ((px - pa[0]) * (pc[1] - pa[1]) - (py - pa[1]) * (pc[0] - pa[0])) / area;
                let lc = ((pb[0] - pa[0]) * (py - pa[1]) - (pb[1] - pa[1]) * (px - pa[0])) / area;
                let la = 1.0 - lb - lc;
                if la < 0.0 || lb < 0.0 || lc < 0.0 {
                    continue;
                }
                let z = la * za + lb * zb + lc * zc;
                let pi = y * w + x;
                let old = gb.depth.data[pi];
                if z < old || (z == old && ti >= winner[pi]) {
                    continue;
                }
                let na = cam_normals[face[0].vn];
                let nb = cam_normals[face[1].vn];
                let nc = cam_normals[face[2].vn];
                let mut n = [
                    la * na[0] + lb * nb[0] + lc * nc[0],
                    la * na[1] + lb * nb[1] + lc * nc[1],
                    la * na[2] + lb * nb[2] + lc * nc[2],
                ];
                let len = norm(n);
                if len < 1e-12 {
                    // Opposed normals cancelled; no meaningful surface here.
                    continue;
                }
                for k in 0..3 {
                    n[k] /= len;
                }
                let ta = mesh.uvs[face[0].vt];
                let tb = mesh.uvs[face[1].vt];
                let tc = mesh.uvs[face[2].vt];
                gb.depth.data[pi] = z;
                winner[pi] = ti;
                gb.mask.data[pi] = true;
                gb.normal.pixel_mut(y, x).copy_from_slice(&n);
                gb.uv.pixel_mut(y, x).copy_from_slice(&[
                    la * ta[0] + lb * tb[0] + lc * tc[0],
                    la * ta[1] + lb * tb[1] + lc * tc[1],
                ]);
            }
        }
    }
    Ok(gb)
}

/// One covered pixel's bilinear footprint in a d×d UV map: four texel
/// indices (row-major, not channel-expanded) and their weights.
#[derive(Debug, Clone, Copy)]
pub struct WarpTap {
    pub y: usize,
    pub x: usize,
    pub texel: [usize; 4],
    pub weight: [f64; 4],
}

/// Bilinear sampling footprints for every covered pixel, in row-major pixel
/// order. UVs are clamped to the map; v = 1 is the top texel row.
pub fn warp_taps(gb: &GBuffer, d: usize) -> Vec<WarpTap> {
    assert!(d >= 2, "UV map side must be ≥ 2");
    let mut taps = Vec::with_capacity(gb.mask.count());
    let dm1 = (d - 1) as f64;
    for y in 0..gb.uv.h {
        for x in 0..gb.uv.w {
            if !gb.mask.get(y, x) {
                continue;
            }
            let uv = gb.uv.pixel(y, x);
            let fx = (uv[0].clamp(0.0, 1.0)) * dm1;
            let fy = (1.0 - uv[1].clamp(0.0, 1.0)) * dm1;
            let x0 = fx.floor().min(dm1) as usize;
            let y0 = fy.floor().min(dm1) as usize;
            let x1 = (x0 + 1).min(d - 1);
            let y1 = (y0 + 1).min(d - 1);
            let wx = fx - x0 as f64;
            let wy = fy - y0 as f64;
            taps.push(WarpTap {
                y,
                x,
                texel: [y0 * d + x0, y0 * d + x1, y1 * d + x0, y1 * d + x1],
                weight: [
                    (1.0 - wx) * (1.0 - wy),
                    wx * (1.0 - wy),
                    (1.0 - wx) * wy,
                    wx * wy,
                ],
            });
        }
    }
    taps
}

/// Warps a square UV map into image space through the geometry buffer.
/// Linear in the map values; uncovered pixels are 0.
pub fn warp(map: &Pixmap, gb: &GBuffer) -> Result<Pixmap> {
    if map.h != map.w {
        return Err(Error::shape("warp expects a square UV map".to_string()));
    }
    let taps = warp_taps(gb, map.h);
    let mut out = Pixmap::zeros(gb.uv.h, gb.uv.w, map.c);
    for t in &taps {
        let o = out.pixel_mut(t.y, t.x);
        for k in 0..4 {
            let src = &map.data[t.texel[k] * map.c..t.texel[k] * map.c + map.c];
            for c in 0..map.c {
                o[c] += t.weight[k] * src[c];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`warp`]: scatters an image-space gradient back onto UV
/// texels. `⟨warp(M), G⟩ = ⟨M, warp_adjoint(G)⟩` for all M, G.
pub fn warp_adjoint(grad: &Pixmap, gb: &GBuffer, d: usize) -> Result<Pixmap> {
    if grad.h != gb.uv.h || grad.w != gb.uv.w {
        return Err(Error::shape("warp_adjoint gradient shape".to_string()));
    }
    let taps = warp_taps(gb, d);
    let mut out = Pixmap::zeros(d, d, grad.c);
    for t in &taps {
        let g = grad.pixel(t.y, t.x);
        for k in 0..4 {
            let dst_base = t.texel[k] * grad.c;
            for c in 0..grad.c {
                out.data[dst_base + c] += t.weight[k] * g[c];
            }
        }
    }
    Ok(out)
}

/// Projects a square UV-space mask into image space through the geometry
/// buffer by nearest-texel lookup; uncovered pixels stay false.
pub fn project_uv_mask(gb: &GBuffer, uv_mask: &Mask) -> Mask {
    let d = uv_mask.h;
    let dm1 = (d - 1) as f64;
    let mut out = Mask::new(gb.uv.h, gb.uv.w, false);
    for y in 0..gb.uv.h {
        for x in 0..gb.uv.w {
            if !gb.mask.get(y, x) {
                continue;
            }
            let uv = gb.uv.pixel(y, x);
            let tx = (uv[0].clamp(0.0, 1.0) * dm1).round() as usize;
            let ty = ((1.0 - uv[1].clamp(0.0, 1.0)) * dm1).round() as usize;
            out.set(y, x, uv_mask.get(ty.min(d - 1), tx.min(d - 1)));
        }
    }
    out
}

/// Lat-long unit sphere with seam-duplicated UV column; normals are exact.
pub fn uv_sphere(lat: usize, lon: usize) -> Mesh {
    latlong_mesh(lat, lon, |_, _, p| p)
}

/// Low-poly parametric head: an ellipsoid with a nose bump, sharing the
/// sphere's lat-long UV layout (face centered at u = 0.5, crown at v = 1),
/// which is the layout `albedo::layout` paints into. Normals come from face
/// averaging since the surface is deformed.
pub fn head_mesh(lat: usize, lon: usize) -> Mesh {
    let mut mesh = latlong_mesh(lat, lon, |u, v, p| {
        let mut q = [0.78 * p[0], 1.02 * p[1], 0.92 * p[2]];
        // Nose: forward bump near the face center.
        let du = (u - 0.5) / 0.06;
        let dv = (v - 0.50) / 0.09;
        q[2] += 0.11 * (-du * du - dv * dv).exp() * p[2].max(0.0);
        // Slight jaw narrowing toward the chin.
        let taper = 1.0 - 0.12 * (1.0 - (v / 0.35).min(1.0));
        q[0] *= taper;
        q
    });
    mesh.compute_vertex_normals();
    mesh
}

fn latlong_mesh(lat: usize, lon: usize, shape: impl Fn(f64, f64, [f64; 3]) -> [f64; 3]) -> Mesh {
    assert!(lat >= 3 && lon >= 3);
    let mut mesh = Mesh::default();
    for i in 0..=lat {
        let v = 1.0 - i as f64 / lat as f64;
        let theta = std::f64::consts::PI * (1.0 - v);
        for j in 0..=lon {
            let u = j as f64 / lon as f64;
            let a = std::f64::consts::TAU * (u - 0.5);
            let p = [theta.sin() * a.sin(), theta.cos(), theta.sin() * a.cos()];
            mesh.positions.push(shape(u, v, p));
            mesh.normals.push(p);
            mesh.uvs.push([u, v]);
        }
    }
    let idx = |i: usize, j: usize| i * (lon + 1) + j;
    let corner = |k: usize| Corner { v: k, vt: k, vn: k };
    for i in 0..lat {
        for j in 0..lon {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            if i > 0 {
                mesh.faces.push([corner(a), corner(b), corner(c)]);
            }
            if i + 1 < lat {
                mesh.faces.push([corner(c), corner(b), corner(d)]);
            }
        }
    }
    mesh
}

/// OBJ subset: v / vt / vn / f records, 1-based or negative indices,
/// `v`, `v/t`, `v//n`, `v/t/n` corner forms, polygons fan-triangulated.
/// Missing normals are computed; missing UVs are an error (warping needs
/// them).
pub mod obj {
    use super::{Corner, Mesh};
    use crate::error::{Error, Result};

    pub fn parse(text: &str) -> Result<Mesh> {
        let mut mesh = Mesh::default();
        let mut corners_missing_vn = false;
        let mut raw_faces: Vec<Vec<RawCorner>> = Vec::new();

        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let tag = it.next().unwrap();
            let nums = |it: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
                let vals: Vec<f64> = it
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::ObjParse {
                        line: ln + 1,
                        reason: e.to_string(),
                    })?;
                if vals.len() < n {
                    return Err(Error::ObjParse {
                        line: ln + 1,
                        reason: format!("expected {n} numbers"),
                    });
                }
                Ok(vals)
            };
            match tag {
                "v" => {
                    let v = nums(it, 3)?;
                    mesh.positions.push([v[0], v[1], v[2]]);
                }
                "vt" => {
                    let v = nums(it, 2)?;
                    mesh.uvs.push([v[0], v[1]]);
                }
                "vn" => {
                    let v = nums(it, 3)?;
                    mesh.normals.push([v[0], v[1], v[2]]);
                }
                "f" => {
                    let mut poly = Vec::new();
                    for tok in it {
                        poly.push(parse_corner(tok, ln + 1, &mesh)?);
                    }
                    if poly.len() < 3 {
                        return Err(Error::ObjParse {
                            line: ln + 1,
                            reason: "face needs ≥ 3 corners".to_string(),
                        });
                    }
                    for c in &poly {
                        if c.2.is_none() {
                            corners_missing_vn = true;
                        }
                        if c.1.is_none() {
                            return Err(Error::ObjParse {
                                line: ln + 1,
                                reason: "face corner has no texture coordinate".to_string(),
                            });
                        }
                    }
                    raw_faces.push(poly);
                }
                // Grouping/material records are outside the subset; skip.
                "g" | "o" | "s" | "usemtl" | "mtllib" => {}
                other => {
                    return Err(Error::ObjParse {
                        line: ln + 1,
                        reason: format!("unsupported record '{other}'"),
                    })
                }
            }
        }

        for poly in &raw_faces {
            for k in 1..poly.len() - 1 {
                let tri = [poly[0], poly[k], poly[k + 1]];
                mesh.faces.push([
                    Corner {
                        v: tri[0].0,
                        vt: tri[0].1.unwrap(),
                        vn: tri[0].2.unwrap_or(0),
                    },
                    Corner {
                        v: tri[1].0,
                        vt: tri[1].1.unwrap(),
                        vn: tri[1].2.unwrap_or(0),
                    },
                    Corner {
                        v: tri[2].0,
                        vt: tri[2].1.unwrap(),
                        vn: tri[2].2.unwrap_or(0),
                    },
                ]);
            }
        }
        if corners_missing_vn || mesh.normals.is_empty() {
            mesh.compute_vertex_normals();
        }
        mesh.validate()?;
        Ok(mesh)
    }

    type RawCorner = (usize, Option<usize>, Option<usize>);

    fn parse_corner(tok: &str, line: usize, mesh: &Mesh) -> Result<RawCorner> {
        let resolve = |s: &str, len: usize| -> Result<Option<usize>> {
            if s.is_empty() {
                return Ok(None);
            }
            let i: i64 = s.parse().map_err(|_| Error::ObjParse {
                line,
                reason: format!("bad index '{s}'"),
            })?;
            let idx = if i < 0 { len as i64 + i } else { i - 1 };
            if idx < 0 || idx as usize >= len {
                return Err(Error::ObjParse {
                    line,
                    reason: format!("index {i} out of range"),
                });
            }
            Ok(Some(idx as usize))
        };
        let mut parts = tok.split('/');
        let v = resolve(parts.next().unwrap_or(""), mesh.positions.len())?.ok_or(
            Error::ObjParse {
                line,
                reason: "missing vertex index".to_string(),
            },
        )?;
        let vt = resolve(parts.next().unwrap_or(""), mesh.uvs.len())?;
        let vn = resolve(parts.next().unwrap_or(""), mesh.normals.len())?;
        Ok((v, vt, vn))
    }

    pub fn write(mesh: &Mesh) -> String {
        let mut s = String::new();
        for p in &mesh.positions {
            s.push_str(&format!("v {:?} {:?} {:?}\n", p[0], p[1], p[2]));
        }
        for t in &mesh.uvs {
            s.push_str(&format!("vt {:?} {:?}\n", t[0], t[1]));
        }
        for n in &mesh.normals {
            s.push_str(&format!("vn {:?} {:?} {:?}\n", n[0], n[1], n[2]));
        }
        for f in &mesh.faces {
            s.push_str(&format!(
                "f {}/{}/{} {}/{}/{} {}/{}/{}\n",
                f[0].v + 1,
                f[0].vt + 1,
                f[0].vn + 1,
                f[1].v + 1,
                f[1].vt + 1,
                f[1].vn + 1,
                f[2].v + 1,
                f[2].vt + 1,
                f[2].vn + 1,
            ));
        }
        s
    }
}
