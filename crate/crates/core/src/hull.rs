//! Concave hull of a planar point cloud.
//!
//! Starts from the Delaunay triangulation and peels boundary triangles whose
//! exposed edge is longer than a length threshold, as long as the peel keeps the
//! boundary a simple polygon (the vertex opposite the edge must not already lie
//! on the boundary).

use std::collections::{BinaryHeap, HashMap};

use delaunator::{next_halfedge, prev_halfedge, triangulate, Point, EMPTY};
use serde::{Deserialize, Serialize};

/// Membership tolerance for clouds without area.
pub const DEGENERATE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConcaveHull {
    /// Counter-clockwise simple polygon; `vertices[i]` is the index of the cloud point.
    Polygon { ring: Vec<[f64; 2]>, vertices: Vec<usize> },
    /// Cloud with no area: a segment between its two extreme points (or a single point).
    Degenerate { a: [f64; 2], b: [f64; 2], vertices: Vec<usize> },
    Empty,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance from `p` to segment `ab`.
pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Twice the signed area of a closed ring (positive when counter-clockwise).
fn signed_area2(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (p, q) = (ring[i], ring[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum()
}

#[derive(PartialEq)]
struct EdgeLen(f64, usize);

impl Eq for EdgeLen {}

impl PartialOrd for EdgeLen {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EdgeLen {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

/// Median over points of the shortest incident Delaunay edge.
pub fn median_nn_spacing(points: &[[f64; 2]]) -> Option<f64> {
    let pts: Vec<Point> = points.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
    let tri = triangulate(&pts);
    if tri.triangles.is_empty() {
        return None;
    }
    let mut nn = vec![f64::INFINITY; points.len()];
    for e in 0..tri.triangles.len() {
        let (a, b) = (tri.triangles[e], tri.triangles[next_halfedge(e)]);
        let l = dist(points[a], points[b]);
        nn[a] = nn[a].min(l);
        nn[b] = nn[b].min(l);
    }
    let mut v: Vec<f64> = nn.into_iter().filter(|d| d.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// Default peel threshold: twice the median nearest-neighbor spacing.
pub fn default_threshold(points: &[[f64; 2]]) -> Option<f64> {
    median_nn_spacing(points).map(|d| 2.0 * d)
}

impl ConcaveHull {
    /// Build the hull; `threshold = None` uses [`default_threshold`].
    pub fn build(points: &[[f64; 2]], threshold: Option<f64>) -> Self {
        if points.is_empty() {
            return ConcaveHull::Empty;
        }
        let pts: Vec<Point> = points.iter().map(|p| Point { x: p[0], y: p[1] }).collect();
        let tri = triangulate(&pts);
        if tri.triangles.is_empty() {
            return Self::degenerate(points);
        }
        let threshold = threshold.or_else(|| default_threshold(points)).unwrap_or(f64::INFINITY);
        let n_tri = tri.triangles.len() / 3;
        let mut alive = vec![true; n_tri];
        let mut on_boundary = vec![false; points.len()];
        let mut heap = BinaryHeap::new();
        let edge_len = |e: usize| dist(points[tri.triangles[e]], points[tri.triangles[next_halfedge(e)]]);
        for e in 0..tri.triangles.len() {
            if tri.halfedges[e] == EMPTY {
                on_boundary[tri.triangles[e]] = true;
                heap.push(EdgeLen(edge_len(e), e));
            }
        }
        let is_boundary = |e: usize, alive: &[bool]| {
            alive[e / 3] && (tri.halfedges[e] == EMPTY || !alive[tri.halfedges[e] / 3])
        };
        let mut remaining = n_tri;
        while let Some(EdgeLen(len, e)) = heap.pop() {
            if len <= threshold {
                break;
            }
            if !is_boundary(e, &alive) || remaining <= 1 {
                continue;
            }
            let opposite = tri.triangles[prev_halfedge(e)];
            if on_boundary[opposite] {
                continue;
            }
            alive[e / 3] = false;
            remaining -= 1;
            on_boundary[opposite] = true;
            for f in [next_halfedge(e), prev_halfedge(e)] {
                let twin = tri.halfedges[f];
                if twin != EMPTY && alive[twin / 3] {
                    heap.push(EdgeLen(edge_len(twin), twin));
                }
            }
        }
        // walk the boundary halfedges into a ring
        let mut next: HashMap<usize, usize> = HashMap::new();
        let mut start = None;
        for e in 0..tri.triangles.len() {
            if is_boundary(e, &alive) {
                let a = tri.triangles[e];
                next.insert(a, tri.triangles[next_halfedge(e)]);
                start.get_or_insert(a);
            }
        }
        let Some(start) = start else {
            return Self::degenerate(points);
        };
        let mut vertices = vec![start];
        let mut cur = next[&start];
        while cur != start && vertices.len() <= next.len() {
            vertices.push(cur);
            cur = next[&cur];
        }
        let mut ring: Vec<[f64; 2]> = vertices.iter().map(|&i| points[i]).collect();
        if signed_area2(&ring) < 0.0 {
            ring.reverse();
            vertices.reverse();
        }
        ConcaveHull::Polygon { ring, vertices }
    }

    fn degenerate(points: &[[f64; 2]]) -> Self {
        // two farthest-point sweeps find the ends of a collinear cloud
        let far = |from: usize| {
            (0..points.len()).fold((from, 0.0), |(bi, bd), j| {
                let d = dist(points[from], points[j]);
                if d > bd { (j, d) } else { (bi, bd) }
            })
        };
        let (ia, _) = far(0);
        let (ib, _) = far(ia);
        ConcaveHull::Degenerate { a: points[ia], b: points[ib], vertices: vec![ia, ib] }
    }

    /// Indices (into the input cloud) of points on the hull boundary.
    pub fn boundary_indices(&self) -> &[usize] {
        match self {
            ConcaveHull::Polygon { vertices, .. } | ConcaveHull::Degenerate { vertices, .. } => vertices,
            ConcaveHull::Empty => &[],
        }
    }

    pub fn ring(&self) -> Vec<[f64; 2]> {
        match self {
            ConcaveHull::Polygon { ring, .. } => ring.clone(),
            ConcaveHull::Degenerate { a, b, .. } => vec![*a, *b],
            ConcaveHull::Empty => Vec::new(),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            ConcaveHull::Polygon { ring, .. } => 0.5 * signed_area2(ring),
            _ => 0.0,
        }
    }

    /// Distance from `y` to the polygon boundary.
    pub fn boundary_distance(&self, y: [f64; 2]) -> f64 {
        match self {
            ConcaveHull::Polygon { ring, .. } => {
                let n = ring.len();
                (0..n).map(|i| segment_distance(y, ring[i], ring[(i + 1) % n])).fold(f64::INFINITY, f64::min)
            }
            ConcaveHull::Degenerate { a, b, .. } => segment_distance(y, *a, *b),
            ConcaveHull::Empty => f64::INFINITY,
        }
    }

    /// Edge-inclusive point-in-polygon test by crossing number.
    pub fn contains(&self, y: [f64; 2]) -> bool {
        match self {
            ConcaveHull::Polygon { ring, .. } => {
                let n = ring.len();
                let scale = ring.iter().fold(1.0_f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
                if self.boundary_distance(y) <= 1e-12 * scale {
                    return true;
                }
                let mut inside = false;
                for i in 0..n {
                    let (p, q) = (ring[i], ring[(i + 1) % n]);
                    if (p[1] > y[1]) != (q[1] > y[1]) {
                        let x = p[0] + (y[1] - p[1]) / (q[1] - p[1]) * (q[0] - p[0]);
                        if y[0] < x {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
            ConcaveHull::Degenerate { a, b, .. } => segment_distance(y, *a, *b) <= DEGENERATE_TOL,
            ConcaveHull::Empty => false,
        }
    }

    /// Distance to the boundary, positive inside and negative outside.
    pub fn signed_distance(&self, y: [f64; 2]) -> f64 {
        let d = self.boundary_distance(y);
        if self.contains(y) { d } else { -d }
    }
}
