use crate::camera::{Extrinsics, Intrinsics};
use crate::mesh::{Mesh, Vec2, Vec3};
use crate::Exec;

const BAND: usize = 16;

/// Nearest camera-space depth per pixel and the triangle that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    /// `+inf` where no triangle covers the pixel center.
    pub depth: Vec<f64>,
    pub triangle: Vec<Option<usize>>,
}

impl DepthBuffer {
    pub fn at(&self, x: usize, y: usize) -> (f64, Option<usize>) {
        let i = y * self.width + x;
        (self.depth[i], self.triangle[i])
    }

    /// Finite depth range, or `None` for an empty buffer.
    pub fn depth_range(&self) -> Option<(f64, f64)> {
        let finite = self.depth.iter().copied().filter(|d| d.is_finite());
        finite.fold(None, |acc, d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
    }
}

/// Texel-to-face lookup of a mesh's UV layout.
#[derive(Debug, Clone, PartialEq)]
pub struct UvCoverage {
    pub width: usize,
    pub height: usize,
    pub hits: Vec<Option<(usize, [f64; 3])>>,
}

struct Hit {
    tri: usize,
    bary: [f64; 3],
    key: f64,
}

/// Scan-converts screen-space triangles at pixel centers. Where several
/// cover a pixel the smallest `key` wins, ties going to the lower index.
fn scan(
    width: usize,
    height: usize,
    tris: &[Option<[Vec2; 3]>],
    exec: Exec,
    key: impl Fn(usize, &[f64; 3]) -> f64 + Sync + Send,
) -> Vec<Option<Hit>> {
    let bands = height.div_ceil(BAND);
    let mut binned: Vec<Vec<usize>> = vec![Vec::new(); bands];
    for (t, tri) in tris.iter().enumerate() {
        let Some(p) = tri else { continue };
        let ymin = p.iter().map(|q| q.y).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max);
        if !(ymax >= 0.5 && ymin <= height as f64 - 0.5) {
            continue;
        }
        let lo = ((ymin - 0.5).ceil().max(0.0) as usize).min(height - 1);
        let hi = ((ymax - 0.5).floor().min(height as f64 - 1.0)).max(0.0) as usize;
        for bin in &mut binned[lo / BAND..=hi / BAND] {
            bin.push(t);
        }
    }
    let mut out: Vec<Option<Hit>> = (0..width * height).map(|_| None).collect();
    exec.for_each_chunk_mut(&mut out, BAND * width.max(1), |band, chunk| {
        let y0 = band * BAND;
        for &t in &binned[band] {
            let [a, b, c] = tris[t].expect("binned triangles are visible");
            let area = (b - a).perp(&(c - a));
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            let xmin = a.x.min(b.x).min(c.x);
            let xmax = a.x.max(b.x).max(c.x);
            let ymin = a.y.min(b.y).min(c.y);
            let ymax = a.y.max(b.y).max(c.y);
            let x_lo = ((xmin - 0.5).ceil().max(0.0)) as usize;
            let x_hi = ((xmax - 0.5).floor().min(width as f64 - 1.0)) as i64;
            let y_lo = ((ymin - 0.5).ceil().max(y0 as f64)) as usize;
            let y_hi = ((ymax - 0.5).floor().min((y0 + BAND).min(height) as f64 - 1.0)) as i64;
            if x_hi < 0 || y_hi < y_lo as i64 {
                continue;
            }
            for y in y_lo..=y_hi as usize {
                for x in x_lo..=x_hi.max(0) as usize {
                    if x as i64 > x_hi {
                        break;
                    }
                    let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let w0 = (c - b).perp(&(p - b)) / area;
                    let w1 = (a - c).perp(&(p - c)) / area;
                    let w2 = 1.0 - w0 - w1;
                    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                        continue;
                    }
                    let bary = [w0, w1, w2];
                    let k = key(t, &bary);
                    let slot = &mut chunk[(y - y0) * width + x];
                    if slot.as_ref().is_none_or(|h| k < h.key) {
                        *slot = Some(Hit { tri: t, bary, key: k });
                    }
                }
            }
        }
    });
    out
}

/// Z-buffer of `mesh` under the camera; pixel centers at `+0.5`. Triangles
/// with a vertex at or behind the camera plane are skipped.
pub fn rasterize_depth(
    mesh: &Mesh,
    extr: &Extrinsics,
    intr: &Intrinsics,
    width: usize,
    height: usize,
    exec: Exec,
) -> DepthBuffer {
    let cam: Vec<Vec3> = mesh.vertices().iter().map(|p| extr.transform(p)).collect();
    let f = intr.effective_focal();
    let screen: Vec<Option<Vec2>> = cam
        .iter()
        .map(|y| (y.z > 0.0).then(|| Vec2::new(f * y.x / y.z + intr.cx, f * y.y / y.z + intr.cy)))
        .collect();
    let tris: Vec<Option<[Vec2; 3]>> = mesh
        .faces()
        .iter()
        .map(|&[a, b, c]| Some([screen[a]?, screen[b]?, screen[c]?]))
        .collect();
    let faces = mesh.faces();
    let hits = scan(width, height, &tris, exec, |t, w| {
        let [a, b, c] = faces[t];
        // screen-space barycentrics interpolate 1/z linearly
        1.0 / (w[0] / cam[a].z + w[1] / cam[b].z + w[2] / cam[c].z)
    });
    DepthBuffer {
        width,
        height,
        depth: hits
            .iter()
            .map(|h| h.as_ref().map_or(f64::INFINITY, |h| h.key))
            .collect(),
        triangle: hits.iter().map(|h| h.as_ref().map(|h| h.tri)).collect(),
    }
}

/// Face and barycentrics under every texel center of a `width x height`
/// texture; row 0 is `v = 1`.
pub fn rasterize_uv(mesh: &Mesh, width: usize, height: usize, exec: Exec) -> Option<UvCoverage> {
    let uv = mesh.uv()?;
    let to_px = |t: &Vec2| Vec2::new(t.x * width as f64, (1.0 - t.y) * height as f64);
    let tris: Vec<Option<[Vec2; 3]>> = mesh
        .faces()
        .iter()
        .map(|&[a, b, c]| Some([to_px(&uv[a]), to_px(&uv[b]), to_px(&uv[c])]))
        .collect();
    let hits = scan(width, height, &tris, exec, |_, _| 0.0);
    Some(UvCoverage {
        width,
        height,
        hits: hits.into_iter().map(|h| h.map(|h| (h.tri, h.bary))).collect(),
    })
}

/// Two-sided ray/triangle intersection: `(t, [w_a, w_b, w_c])` with `t > 0`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, [f64; 3])> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some((t, [1.0 - u - v, u, v]))
}
