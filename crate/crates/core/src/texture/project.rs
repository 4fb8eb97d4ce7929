use super::raster::{rasterize_depth, rasterize_uv, ray_triangle, DepthBuffer};
use super::{TexelState, UvTexture};
use crate::camera::{Extrinsics, Intrinsics};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec2, Vec3};
use crate::Exec;

/// Posed mesh, fitted camera, source photograph and its depth buffer.
#[derive(Debug, Clone)]
pub struct ProjectionContext {
    pub mesh: Mesh,
    pub extrinsics: Extrinsics,
    pub intrinsics: Intrinsics,
    pub image: UvTexture,
    pub depth: DepthBuffer,
    /// UV-space polygons (e.g. eyes) never taken from the photograph.
    pub exclude: Vec<Vec<Vec2>>,
}

impl ProjectionContext {
    pub fn new(mesh: Mesh, extrinsics: Extrinsics, intrinsics: Intrinsics, image: UvTexture, exec: Exec) -> Self {
        let depth = rasterize_depth(&mesh, &extrinsics, &intrinsics, image.width(), image.height(), exec);
        ProjectionContext {
            mesh,
            extrinsics,
            intrinsics,
            image,
            depth,
            exclude: Vec::new(),
        }
    }

    /// Visibility tolerance: `1e-3` of the depth range of the buffer, but
    /// never below `1e-6` of the far depth (flat scenes have no range).
    pub fn epsilon(&self) -> f64 {
        match self.depth.depth_range() {
            Some((lo, hi)) => (1e-3 * (hi - lo)).max(1e-6 * hi),
            None => 0.0,
        }
    }
}

/// Where one texel lands in the photograph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelHit {
    pub face: usize,
    /// Surface point in camera coordinates.
    pub camera_point: Vec3,
    pub pixel: Vec2,
    pub front_facing: bool,
    pub visible: bool,
}

fn inside_polygon(p: &Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
    }
    inside
}

fn texel_hit(ctx: &ProjectionContext, cam: &[Vec3], face: usize, bary: &[f64; 3], eps: f64) -> Option<TexelHit> {
    let [a, b, c] = ctx.mesh.faces()[face];
    let y = cam[a] * bary[0] + cam[b] * bary[1] + cam[c] * bary[2];
    if !(y.z > 0.0) {
        return None;
    }
    let normal = (cam[b] - cam[a]).cross(&(cam[c] - cam[a]));
    let front_facing = normal.dot(&cam[a]) < 0.0;
    let f = ctx.intrinsics.effective_focal();
    let pixel = Vec2::new(f * y.x / y.z + ctx.intrinsics.cx, f * y.y / y.z + ctx.intrinsics.cy);
    let (w, h) = (ctx.depth.width as f64, ctx.depth.height as f64);
    let in_image = pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < w && pixel.y < h;
    let mut visible = front_facing && in_image;
    if visible {
        // occluders are looked up in the depth buffer around the pixel and
        // tested against the exact ray to the surface point
        let (px, py) = (pixel.x as usize, pixel.y as usize);
        let mut seen: [Option<usize>; 9] = [None; 9];
        'search: for (k, (dx, dy)) in (-1i64..=1)
            .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
            .enumerate()
        {
            let (qx, qy) = (px as i64 + dx, py as i64 + dy);
            if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                continue;
            }
            let Some(t) = ctx.depth.at(qx as usize, qy as usize).1 else {
                continue;
            };
            if t == face || seen[..k].contains(&Some(t)) {
                continue;
            }
            seen[k] = Some(t);
            let [ta, tb, tc] = ctx.mesh.faces()[t];
            if let Some((s, _)) = ray_triangle(&Vec3::zeros(), &y, &cam[ta], &cam[tb], &cam[tc]) {
                if s * y.z < y.z - eps {
                    visible = false;
                    break 'search;
                }
            }
        }
    }
    Some(TexelHit {
        face,
        camera_point: y,
        pixel,
        front_facing,
        visible,
    })
}

/// Per-texel projection data, `None` for texels outside the UV layout or
/// behind the camera.
pub fn texel_hits(ctx: &ProjectionContext, width: usize, height: usize, exec: Exec) -> Result<Vec<Option<TexelHit>>> {
    let cov = rasterize_uv(&ctx.mesh, width, height, exec)
        .ok_or_else(|| Error::Missing("mesh has no UV coordinates".into()))?;
    let cam: Vec<Vec3> = ctx
        .mesh
        .vertices()
        .iter()
        .map(|p| ctx.extrinsics.transform(p))
        .collect();
    let eps = ctx.epsilon();
    Ok(exec.map_slice(&cov.hits, |h| {
        h.and_then(|(face, bary)| texel_hit(ctx, &cam, face, &bary, eps))
    }))
}

/// Samples the photograph into UV space. Texels whose surface point is
/// visible, front-facing and outside the excluded polygons are marked
/// projected; all others are background (black).
pub fn project_texture(ctx: &ProjectionContext, width: usize, height: usize, exec: Exec) -> Result<UvTexture> {
    let hits = texel_hits(ctx, width, height, exec)?;
    let mut out = UvTexture::new(width, height);
    out.bit_depth = ctx.image.bit_depth;
    for (i, hit) in hits.iter().enumerate() {
        let Some(hit) = hit.filter(|h| h.visible) else { continue };
        let (x, y) = (i % width, i / width);
        let uv = Vec2::new((x as f64 + 0.5) / width as f64, 1.0 - (y as f64 + 0.5) / height as f64);
        if ctx.exclude.iter().any(|poly| inside_polygon(&uv, poly)) {
            continue;
        }
        out.pixels[i] = ctx.image.bilinear(hit.pixel.x, hit.pixel.y);
        out.mask[i] = TexelState::Projected;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::init_intrinsics;
    use crate::synth;
    use nalgebra::UnitQuaternion;

    fn frontal_plane() -> (Mesh, Extrinsics, Intrinsics) {
        // 100 mm plane facing the camera along -z in camera coordinates
        let plane = synth::plane_grid(8, 8, 100.0);
        let verts = plane
            .vertices()
            .iter()
            .map(|p| Vec3::new(p.x - 50.0, p.y - 50.0, 0.0))
            .collect();
        let mesh = plane.with_vertices(verts).unwrap();
        let extr = Extrinsics::new(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, 400.0));
        (mesh, extr, init_intrinsics(128, 128).unwrap())
    }

    fn checker() -> UvTexture {
        UvTexture::from_fn(128, 128, |x, y| {
            let c = if (x / 8 + y / 8) % 2 == 0 { 0.9 } else { 0.1 };
            [c, x as f64 / 127.0, y as f64 / 127.0]
        })
    }

    #[test]
    fn frontal_plane_matches_direct_lookup() {
        let (mesh, extr, intr) = frontal_plane();
        let facing = {
            let cam: Vec<Vec3> = mesh.vertices().iter().map(|p| extr.transform(p)).collect();
            let [a, b, c] = mesh.faces()[0];
            (cam[b] - cam[a]).cross(&(cam[c] - cam[a])).dot(&cam[a]) < 0.0
        };
        // flip the plane if the grid winds away from the camera
        let mesh = if facing {
            mesh
        } else {
            let faces = mesh.faces().iter().map(|&[a, b, c]| [a, c, b]).collect();
            Mesh::new(mesh.vertices().to_vec(), faces)
                .unwrap()
                .with_uv(mesh.uv().unwrap().to_vec())
                .unwrap()
        };
        let ctx = ProjectionContext::new(mesh.clone(), extr, intr, checker(), Exec::Sequential);
        let tex = project_texture(&ctx, 32, 32, Exec::Sequential).unwrap();
        let cov = rasterize_uv(&mesh, 32, 32, Exec::Sequential).unwrap();
        let mut checked = 0;
        for (i, hit) in cov.hits.iter().enumerate() {
            let Some((face, bary)) = hit else { continue };
            assert_eq!(tex.mask[i], TexelState::Projected);
            let [a, b, c] = mesh.faces()[*face];
            let p = mesh.vertices()[a] * bary[0] + mesh.vertices()[b] * bary[1] + mesh.vertices()[c] * bary[2];
            let px = crate::camera::project(&p, &extr, &intr).unwrap();
            let expect = ctx.image.bilinear(px.x, px.y);
            for (got, want) in tex.pixels[i].iter().zip(expect) {
                assert!((got - want).abs() < 1e-12);
            }
            checked += 1;
        }
        assert_eq!(checked, 32 * 32);
    }

    #[test]
    fn back_facing_triangles_are_background() {
        let (mesh, extr, intr) = frontal_plane();
        let flipped = Extrinsics::new(
            UnitQuaternion::from_euler_angles(0.0, std::f64::consts::PI, 0.0),
            extr.translation,
        );
        for e in [extr, flipped] {
            let ctx = ProjectionContext::new(mesh.clone(), e, intr, checker(), Exec::Sequential);
            let hits = texel_hits(&ctx, 16, 16, Exec::Sequential).unwrap();
            for h in hits.iter().flatten() {
                if !h.front_facing {
                    assert!(!h.visible);
                }
            }
            let tex = project_texture(&ctx, 16, 16, Exec::Sequential).unwrap();
            let projected = tex.mask.iter().filter(|m| **m == TexelState::Projected).count();
            let front = hits.iter().flatten().filter(|h| h.front_facing).count();
            assert_eq!(projected, front);
        }
    }

    #[test]
    fn excluded_polygons_stay_background() {
        let (mesh, extr, intr) = frontal_plane();
        let mut ctx = ProjectionContext::new(mesh, extr, intr, checker(), Exec::Sequential);
        let before = project_texture(&ctx, 16, 16, Exec::Sequential).unwrap();
        ctx.exclude.push(vec![
            Vec2::new(0.25, 0.25),
            Vec2::new(0.75, 0.25),
            Vec2::new(0.75, 0.75),
            Vec2::new(0.25, 0.75),
        ]);
        let after = project_texture(&ctx, 16, 16, Exec::Sequential).unwrap();
        let lost = before.mask.iter().zip(&after.mask).filter(|(a, b)| a != b).count();
        if before.mask.contains(&TexelState::Projected) {
            assert_eq!(lost, 64);
        }
    }
}
