//! Bounding-volume hierarchy for exact closest-point queries on triangles.

use crate::mesh::{Mesh, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vec3::zeros());
        d.norm_squared()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Closest surface point found by a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub distance: f64,
    pub face: usize,
    pub point: Vec3,
}

/// Median-split BVH over the faces of a mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    triangles: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn new(mesh: &Mesh) -> Self {
        let triangles: Vec<[Vec3; 3]> = (0..mesh.face_count()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::new();
        if !triangles.is_empty() {
            build(&triangles, &centroids, &mut order, 0, triangles.len(), &mut nodes);
        }
        Bvh {
            triangles,
            order,
            nodes,
        }
    }

    /// Nearest-point structure over a point set; `face` in query results is
    /// the point index.
    pub fn from_points(points: &[Vec3]) -> Self {
        let triangles: Vec<[Vec3; 3]> = points.iter().map(|p| [*p; 3]).collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::new();
        if !triangles.is_empty() {
            build(&triangles, points, &mut order, 0, triangles.len(), &mut nodes);
        }
        Bvh {
            triangles,
            order,
            nodes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Exact closest point on any triangle; `None` for an empty mesh.
    pub fn closest(&self, p: &Vec3) -> Option<ClosestPoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX, Vec3::zeros());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().distance_sq(p) > best.0 {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let [a, b, c] = &self.triangles[f];
                        let q = closest_point_on_triangle(p, a, b, c);
                        let d = (q - p).norm_squared();
                        if d < best.0 || (d == best.0 && f < best.1) {
                            best = (d, f, q);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let (dl, dr) = (
                        self.nodes[left].bounds().distance_sq(p),
                        self.nodes[right].bounds().distance_sq(p),
                    );
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some(ClosestPoint {
            distance: best.0.sqrt(),
            face: best.1,
            point: best.2,
        })
    }
}

fn build(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        tris[f].iter().for_each(|v| bounds.grow(v));
        cbounds.grow(&centroids[f]);
    }
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return id;
    }
    let axis = (cbounds.max - cbounds.min).imax();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build(tris, centroids, order, start, mid, nodes);
    let right = build(tris, centroids, order, mid, end, nodes);
    nodes[id] = Node::Inner { bounds, left, right };
    id
}

/// Closest point of triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Distance from `p` to the closest triangle of `mesh` by exhaustive search.
pub fn brute_force_distance(p: &Vec3, mesh: &Mesh) -> f64 {
    (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
        })
        .fold(f64::INFINITY, f64::min)
}
