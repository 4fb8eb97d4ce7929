//! Procedural test geometry: spheres, planar grids and a low-poly head with
//! UVs, labels, landmark anchors, contour strips and expression blendshapes.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{BarycentricAnchor, Mesh, Vec2, Vec3, FACIAL_AREA_RADIUS, NOSE_TIP};
use crate::solver::{AnchorTable, BlendshapeBasis, LandmarkAnchor};

/// Subdivided icosahedron projected onto a sphere.
pub fn sphere(level: usize, radius: f64) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| v * radius).collect();
    Mesh::new(verts, faces).expect("icosphere is valid")
}

/// `nx x ny` vertex grid spanning `[0, size]^2` in the z = 0 plane, with UVs.
pub fn plane_grid(nx: usize, ny: usize, size: f64) -> Mesh {
    let mut verts = Vec::with_capacity(nx * ny);
    let mut uv = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (u, v) = (i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64);
            verts.push(Vec3::new(u * size, v * size, 0.0));
            uv.push(Vec2::new(u, v));
        }
    }
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            faces.push([a, a + 1, a + nx + 1]);
            faces.push([a, a + nx + 1, a + nx]);
        }
    }
    Mesh::new(verts, faces).unwrap().with_uv(uv).unwrap()
}

/// Random low-frequency warp plus a random rotation, amplitude relative to the
/// bounding-box diagonal.
pub fn smooth_deformation(mesh: &Mesh, seed: u64, amplitude: f64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = mesh.bbox_diagonal();
    let center = mesh.centroid();
    let mut dir = || {
        Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    };
    let waves: Vec<(Vec3, Vec3, f64)> = (0..3)
        .map(|_| {
            let k = dir() * (PI / diag);
            let disp = dir() * (amplitude * diag);
            (k, disp, 0.0)
        })
        .collect();
    let axis = dir();
    let rot = Rotation3::from_scaled_axis(axis * 0.6).into_inner();
    let shift = dir() * diag;
    mesh.map_vertices(|p| {
        let rel = p - center;
        let warped = waves
            .iter()
            .fold(rel, |acc, (k, d, phase)| acc + d * (k.dot(&rel) + phase).sin());
        rot * warped + center + shift
    })
}

/// Shape of the procedural head (millimeters). Canonical frame: y up, the
/// face looks down +z.
#[derive(Debug, Clone, Copy)]
pub struct HeadSpec {
    pub rings: usize,
    pub segments: usize,
    pub radii: Vector3<f64>,
    pub nose_height: f64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            rings: 20,
            segments: 24,
            radii: Vector3::new(75.0, 105.0, 90.0),
            nose_height: 22.0,
        }
    }
}

/// Polar-angle range covered by the rings (the neck opening sits below).
const THETA_MAX: f64 = 0.82 * PI;

fn head_point(spec: &HeadSpec, theta: f64, phi: f64) -> Vec3 {
    let dir = Vec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos());
    let base = dir.component_mul(&spec.radii);
    let nose = spec.nose_height * (-(phi / 0.16).powi(2) - ((theta - 0.56 * PI) / 0.12).powi(2)).exp();
    let brow = 6.0 * (-(phi / 0.5).powi(2) - ((theta - 0.40 * PI) / 0.05).powi(2)).exp();
    let chin = 8.0 * (-(phi / 0.35).powi(2) - ((theta - 0.72 * PI) / 0.07).powi(2)).exp();
    base + dir * (nose + brow + chin)
}

/// Vertex index of grid cell `(ring, column)`; column `segments` is the seam copy.
fn grid_index(spec: &HeadSpec, ring: usize, col: usize) -> usize {
    1 + (ring - 1) * (spec.segments + 1) + col
}

fn ring_theta(spec: &HeadSpec, ring: usize) -> f64 {
    THETA_MAX * ring as f64 / spec.rings as f64
}

fn col_phi(spec: &HeadSpec, col: usize) -> f64 {
    -PI + 2.0 * PI * col as f64 / spec.segments as f64
}

/// Procedural head mesh with UVs and a nose-tip label.
pub fn head_mesh(spec: &HeadSpec) -> Mesh {
    let mut verts = vec![head_point(spec, 0.0, 0.0)];
    let mut uv = vec![Vec2::new(0.5, 0.0)];
    for ring in 1..=spec.rings {
        for col in 0..=spec.segments {
            let (theta, phi) = (ring_theta(spec, ring), col_phi(spec, col));
            verts.push(head_point(spec, theta, phi));
            uv.push(Vec2::new(
                col as f64 / spec.segments as f64,
                ring as f64 / spec.rings as f64,
            ));
        }
    }
    let mut faces = Vec::new();
    for col in 0..spec.segments {
        faces.push([0, grid_index(spec, 1, col), grid_index(spec, 1, col + 1)]);
    }
    for ring in 1..spec.rings {
        for col in 0..spec.segments {
            let a = grid_index(spec, ring, col);
            let b = grid_index(spec, ring, col + 1);
            let c = grid_index(spec, ring + 1, col);
            let d = grid_index(spec, ring + 1, col + 1);
            faces.push([a, d, b]);
            faces.push([a, c, d]);
        }
    }
    let mut mesh = Mesh::new(verts, faces).unwrap().with_uv(uv).unwrap();
    let tip = nearest_vertex(&mesh, &head_point(spec, 0.56 * PI, 0.0));
    mesh.set_label(NOSE_TIP, vec![tip]).unwrap();
    mesh.ensure_facial_area(FACIAL_AREA_RADIUS);
    mesh
}

fn nearest_vertex(mesh: &Mesh, p: &Vec3) -> usize {
    mesh.vertices()
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - p).norm_squared().total_cmp(&(b.1 - p).norm_squared()))
        .unwrap()
        .0
}

/// Anchor for the surface point at `(theta, phi)` on the head grid.
pub fn head_anchor(spec: &HeadSpec, theta: f64, phi: f64) -> BarycentricAnchor {
    let rt = (theta / THETA_MAX * spec.rings as f64).clamp(1.0, spec.rings as f64 - 1e-9);
    let ct = ((phi + PI) / (2.0 * PI) * spec.segments as f64).clamp(0.0, spec.segments as f64 - 1e-9);
    let (ring, col) = (rt.floor() as usize, ct.floor() as usize);
    let (s, t) = (ct - col as f64, rt - ring as f64);
    // quads are split along a -> d; see head_mesh
    let quad = 2 * ((ring - 1) * spec.segments + col);
    let base = spec.segments;
    if s >= t {
        // face [a, d, b]
        BarycentricAnchor {
            face: base + quad,
            bary: [1.0 - s, t, s - t],
        }
    } else {
        // face [a, c, d]
        BarycentricAnchor {
            face: base + quad + 1,
            bary: [1.0 - t, t - s, s],
        }
    }
}

/// Landmark layout on the head: `(theta, phi)` per landmark in the 68-point
/// order (17 contour, 10 brow, 9 nose, 12 eye, 20 mouth).
pub fn head_landmark_angles() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(68);
    for k in 0..17 {
        let s = k as f64 / 16.0 * 2.0 - 1.0;
        let phi = s * 0.95;
        let theta = (0.50 + 0.24 * (1.0 - s * s).sqrt()) * PI;
        pts.push((theta, phi));
    }
    for k in 0..10 {
        let side = if k < 5 { -1.0 } else { 1.0 };
        let j = if k < 5 { k } else { 9 - k } as f64;
        pts.push((0.39 * PI - 0.01 * (2.0 - (j - 2.0).abs()), side * (0.55 - 0.09 * j)));
    }
    for k in 0..4 {
        pts.push(((0.46 + 0.03 * k as f64) * PI, 0.0));
    }
    for k in 0..5 {
        pts.push((0.58 * PI, (k as f64 - 2.0) * 0.07));
    }
    for side in [-1.0, 1.0] {
        let outer = if side < 0.0 { -0.48 } else { 0.16 };
        for k in 0..6 {
            let a = k as f64 / 6.0 * 2.0 * PI;
            pts.push((0.45 * PI - 0.015 * a.sin(), outer + 0.16 * (1.0 - a.cos())));
        }
    }
    for k in 0..12 {
        let a = k as f64 / 12.0 * 2.0 * PI;
        pts.push((0.655 * PI - 0.035 * a.sin(), -0.3 * a.cos()));
    }
    for k in 0..8 {
        let a = k as f64 / 8.0 * 2.0 * PI;
        pts.push((0.655 * PI - 0.015 * a.sin(), -0.2 * a.cos()));
    }
    pts
}

/// Anchor table for [`head_landmark_angles`], with a sliding strip per contour landmark.
pub fn head_anchor_table(spec: &HeadSpec) -> AnchorTable {
    let angles = head_landmark_angles();
    let mut anchors = Vec::with_capacity(angles.len());
    let mut strips = Vec::new();
    for (k, &(theta, phi)) in angles.iter().enumerate() {
        let contour = k < 17;
        let strip = if contour {
            let dir = if phi < 0.0 { -1.0 } else { 1.0 };
            let samples: Vec<BarycentricAnchor> = (0..=48)
                .map(|s| {
                    let off = -0.5 + s as f64 / 48.0;
                    head_anchor(spec, theta, (phi + dir * off).clamp(-PI + 1e-6, PI - 1e-6))
                })
                .collect();
            strips.push(samples);
            Some(strips.len() - 1)
        } else {
            None
        };
        anchors.push(LandmarkAnchor {
            anchor: head_anchor(spec, theta, phi),
            contour,
            strip,
        });
    }
    AnchorTable {
        anchors,
        strips,
        eye_corners: (36, 45),
    }
}

/// Localized expression blendshapes (displacements in mm per unit weight).
pub fn head_blendshapes(spec: &HeadSpec, mesh: &Mesh) -> BlendshapeBasis {
    let bumps: [(f64, f64, f64, f64, Vec3); 6] = [
        (0.70 * PI, 0.0, 0.10, 0.45, Vec3::new(0.0, -8.0, 0.0)),
        (0.655 * PI, -0.3, 0.06, 0.15, Vec3::new(-3.0, 4.0, -2.0)),
        (0.655 * PI, 0.3, 0.06, 0.15, Vec3::new(3.0, 4.0, -2.0)),
        (0.39 * PI, 0.0, 0.05, 0.6, Vec3::new(0.0, 5.0, 1.0)),
        (0.60 * PI, -0.5, 0.08, 0.25, Vec3::new(-4.0, 0.0, 3.0)),
        (0.60 * PI, 0.5, 0.08, 0.25, Vec3::new(4.0, 0.0, 3.0)),
    ];
    let n = mesh.vertex_count();
    let mut shapes = Vec::new();
    for (theta0, phi0, st, sp, d) in bumps {
        let mut field = vec![Vec3::zeros(); n];
        field[0] = Vec3::zeros();
        for ring in 1..=spec.rings {
            for col in 0..=spec.segments {
                let (theta, phi) = (ring_theta(spec, ring), col_phi(spec, col));
                let w = (-((theta - theta0) / st).powi(2) - ((phi - phi0) / sp).powi(2)).exp();
                field[grid_index(spec, ring, col)] = d * w;
            }
        }
        shapes.push(field);
    }
    BlendshapeBasis::new(shapes, vec![1.0, 0.8, 0.8, 0.6, 0.5, 0.5]).unwrap()
}

/// Seven alignment vertices: eye corners (4), nose tip, mouth corners (2).
pub fn head_alignment_vertices(spec: &HeadSpec, mesh: &Mesh) -> [usize; 7] {
    let at = |theta: f64, phi: f64| nearest_vertex(mesh, &head_point(spec, theta, phi));
    [
        at(0.45 * PI, -0.48),
        at(0.45 * PI, -0.16),
        at(0.45 * PI, 0.16),
        at(0.45 * PI, 0.48),
        mesh.label(NOSE_TIP).unwrap()[0],
        at(0.655 * PI, -0.3),
        at(0.655 * PI, 0.3),
    ]
}

/// Everything needed to run a synthetic fit.
pub struct HeadAssets {
    pub spec: HeadSpec,
    pub mesh: Mesh,
    pub anchors: AnchorTable,
    pub basis: BlendshapeBasis,
    pub alignment: [usize; 7],
}

pub fn head_assets(spec: HeadSpec) -> HeadAssets {
    let mesh = head_mesh(&spec);
    HeadAssets {
        anchors: head_anchor_table(&spec),
        basis: head_blendshapes(&spec, &mesh),
        alignment: head_alignment_vertices(&spec, &mesh),
        mesh,
        spec,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cotangent_weights, sample_surface};

    #[test]
    fn sphere_counts() {
        assert_eq!(sphere(0, 1.0).vertex_count(), 12);
        assert_eq!(sphere(2, 1.0).vertex_count(), 162);
        assert!(cotangent_weights(&sphere(2, 1.0)).is_ok());
    }

    #[test]
    fn head_is_manifold_with_outward_faces() {
        let spec = HeadSpec::default();
        let m = head_mesh(&spec);
        assert_eq!(m.vertex_count(), 1 + spec.rings * (spec.segments + 1));
        assert!(cotangent_weights(&m).is_ok());
        let c = m.centroid();
        let outward = m
            .faces()
            .iter()
            .filter(|f| {
                let [a, b, cc] = [m.vertices()[f[0]], m.vertices()[f[1]], m.vertices()[f[2]]];
                (b - a).cross(&(cc - a)).dot(&((a + b + cc) / 3.0 - c)) > 0.0
            })
            .count();
        assert_eq!(outward, m.face_count());
    }

    #[test]
    fn anchors_hit_requested_points() {
        let spec = HeadSpec::default();
        let m = head_mesh(&spec);
        for &(theta, phi) in &head_landmark_angles() {
            let a = head_anchor(&spec, theta, phi);
            assert!(a.bary.iter().all(|&b| (-1e-12..=1.0 + 1e-12).contains(&b)));
            let p = sample_surface(&m, &a).unwrap();
            // the mesh is a piecewise-linear approximation
            assert!((p - head_point(&spec, theta, phi)).norm() < 8.0);
        }
        assert_eq!(head_landmark_angles().len(), 68);
    }
}
