//! Oriented triangulations of planar polygonal domains.
//!
//! Conventions:
//! - triangles are CCW-ordered vertex triples; local edge `k` of triangle
//!   `(a,b,c)` is the edge opposite vertex `k`, so edge 0 = (b,c),
//!   edge 1 = (c,a), edge 2 = (a,b), each traversed in the CCW direction;
//! - global edges store their endpoints with the smaller vertex index first,
//!   which fixes the global edge orientation used by edge degrees of freedom;
//! - a *boundary* edge has exactly one incident triangle; the endpoint-based
//!   interior classification (edges with at least one interior endpoint) is
//!   exposed separately as [`Mesh::is_e0_edge`].

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::{Error, Result};

/// One edge of the triangulation.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoint vertex indices, `v[0] < v[1]` (global orientation v0 -> v1).
    pub v: [usize; 2],
    /// Incident (triangle, local edge index) pairs; `nsides` of them are valid.
    pub sides: [(usize, usize); 2],
    pub nsides: usize,
}

/// Oriented triangulation of a planar polygonal domain.
///
/// Immutable after construction; cheap to share behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    /// Per triangle: `(edge id, forward)` for local edges 0,1,2, where
    /// `forward` means the CCW traversal direction agrees with the global
    /// edge orientation.
    tri_edges: Vec<[(usize, bool); 3]>,
    vertex_on_boundary: Vec<bool>,
    edge_on_boundary: Vec<bool>,
    /// Ordered triangle fans around each vertex (CCW; closed for interior
    /// vertices, boundary-to-boundary for boundary vertices).
    stars: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct MeshJson {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

fn signed_area(p: [[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

impl Mesh {
    /// Builds a mesh from raw vertices and CCW triangles, deriving edges,
    /// boundary flags and vertex stars.  Rejects non-CCW triangles,
    /// non-manifold edges, disconnected meshes and domains with holes
    /// (Euler characteristic V - E + F must equal 1).
    pub fn from_parts(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::Mesh("empty triangle list".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(Error::Mesh(format!("triangle {t} references vertex {v}")));
                }
            }
            let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            if signed_area(p) <= 0.0 {
                return Err(Error::Mesh(format!(
                    "triangle {t} has non-positive area {:.3e} (must be CCW)",
                    signed_area(p)
                )));
            }
        }

        // Edge table.
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = vec![[(0usize, false); 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(Edge { v: [key.0, key.1], sides: [(0, 0); 2], nsides: 0 });
                    edges.len() - 1
                });
                let e = &mut edges[id];
                if e.nsides == 2 {
                    return Err(Error::Mesh(format!(
                        "edge ({},{}) has more than two incident triangles",
                        key.0, key.1
                    )));
                }
                e.sides[e.nsides] = (t, k);
                e.nsides += 1;
                tri_edges[t][k] = (id, a < b);
            }
        }

        let edge_on_boundary: Vec<bool> = edges.iter().map(|e| e.nsides == 1).collect();
        let mut vertex_on_boundary = vec![false; vertices.len()];
        for (e, edge) in edges.iter().enumerate() {
            if edge_on_boundary[e] {
                vertex_on_boundary[edge.v[0]] = true;
                vertex_on_boundary[edge.v[1]] = true;
            }
        }

        // Euler relation: a triangulated polygon without holes has V-E+F = 1.
        let euler = vertices.len() as i64 - edges.len() as i64 + triangles.len() as i64;
        if euler != 1 {
            return Err(Error::Mesh(format!(
                "V - E + F = {euler}, expected 1 (holes or disconnected pieces are not supported)"
            )));
        }

        let mut mesh = Mesh {
            vertices,
            triangles,
            edges,
            tri_edges,
            vertex_on_boundary,
            edge_on_boundary,
            stars: Vec::new(),
        };
        mesh.build_stars()?;
        Ok(mesh)
    }

    /// Walks the CCW fan around each vertex.  From a triangle `(a,b,c)` seen
    /// at `z = a`, the CCW-next triangle shares the edge `(z, c)`.
    fn build_stars(&mut self) -> Result<()> {
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                incident[v].push(t);
            }
        }
        let mut stars = Vec::with_capacity(self.vertices.len());
        for z in 0..self.vertices.len() {
            if incident[z].is_empty() {
                return Err(Error::Mesh(format!("vertex {z} has no incident triangle")));
            }
            // For boundary vertices start at the CW-most triangle: the one
            // whose edge (next(z), z)-side, i.e. (z, b) with b = next of z,
            // is a boundary edge.
            let start = if self.vertex_on_boundary[z] {
                incident[z]
                    .iter()
                    .copied()
                    .find(|&t| {
                        let pos = self.triangles[t].iter().position(|&v| v == z).unwrap();
                        // edge (z, next(z)) is local edge prev(pos) = (pos+2)%3
                        let (e, _) = self.tri_edges[t][(pos + 2) % 3];
                        self.edge_on_boundary[e]
                    })
                    .ok_or_else(|| Error::Mesh(format!("broken fan at boundary vertex {z}")))?
            } else {
                incident[z][0]
            };
            let mut fan = vec![start];
            loop {
                let t = *fan.last().unwrap();
                let pos = self.triangles[t].iter().position(|&v| v == z).unwrap();
                // CCW-next triangle is across the edge (z, prev-vertex),
                // which is local edge next(pos) = (pos+1)%3.
                let (e, _) = self.tri_edges[t][(pos + 1) % 3];
                if self.edge_on_boundary[e] {
                    break; // open fan
                }
                let edge = &self.edges[e];
                let other = if edge.sides[0].0 == t { edge.sides[1].0 } else { edge.sides[0].0 };
                if other == start {
                    break; // closed fan
                }
                if fan.contains(&other) {
                    return Err(Error::Mesh(format!("non-manifold fan at vertex {z}")));
                }
                fan.push(other);
            }
            if fan.len() != incident[z].len() {
                return Err(Error::Mesh(format!(
                    "vertex {z} has a disconnected star ({} of {} triangles reached)",
                    fan.len(),
                    incident[z].len()
                )));
            }
            stars.push(fan);
        }
        self.stars = stars;
        Ok(())
    }

    /// Diagonal triangulation of an axis-aligned rectangle with `n`
    /// subdivisions per side (2n^2 triangles).  Cell diagonals follow the
    /// alternating parity pattern, overridden where needed so that for n >= 2
    /// every 2-triangle edge has at least one interior endpoint.
    pub fn structured(rect: [f64; 4], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Mesh("n = 0 subdivisions rejected".into()));
        }
        let [x0, y0, x1, y1] = rect;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::Mesh("degenerate rectangle".into()));
        }
        let nv = n + 1;
        let mut vertices = Vec::with_capacity(nv * nv);
        for j in 0..nv {
            for i in 0..nv {
                vertices.push([
                    x0 + (x1 - x0) * i as f64 / n as f64,
                    y0 + (y1 - y0) * j as f64 / n as f64,
                ]);
            }
        }
        let vid = |i: usize, j: usize| j * nv + i;
        let interior = |i: usize, j: usize| i > 0 && i < n && j > 0 && j < n;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                // d1: BL-TR diagonal; d2: BR-TL diagonal.
                let mut use_d1 = (i + j) % 2 == 0;
                let d1_ok = interior(i, j) || interior(i + 1, j + 1);
                let d2_ok = interior(i + 1, j) || interior(i, j + 1);
                if use_d1 && !d1_ok && d2_ok {
                    use_d1 = false;
                } else if !use_d1 && !d2_ok && d1_ok {
                    use_d1 = true;
                }
                let (bl, br, tr, tl) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                if use_d1 {
                    triangles.push([bl, br, tr]);
                    triangles.push([bl, tr, tl]);
                } else {
                    triangles.push([bl, br, tl]);
                    triangles.push([br, tr, tl]);
                }
            }
        }
        Self::from_parts(vertices, triangles)
    }

    /// Uniform red refinement: every triangle splits into 4 via edge
    /// midpoints; h halves, triangle count quadruples.
    pub fn refine(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut mid = vec![0usize; self.edges.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            let p0 = self.vertices[edge.v[0]];
            let p1 = self.vertices[edge.v[1]];
            mid[e] = vertices.len();
            vertices.push([0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1])]);
        }
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = *tri;
            let mbc = mid[self.tri_edges[t][0].0];
            let mca = mid[self.tri_edges[t][1].0];
            let mab = mid[self.tri_edges[t][2].0];
            triangles.push([a, mab, mca]);
            triangles.push([b, mbc, mab]);
            triangles.push([c, mca, mbc]);
            triangles.push([mab, mbc, mca]);
        }
        Mesh::from_parts(vertices, triangles).expect("red refinement of a valid mesh is valid")
    }

    // -- queries -----------------------------------------------------------

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }
    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }
    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }
    /// `(edge id, forward)` for local edge `k` (opposite vertex `k`) of
    /// triangle `t`; `forward` = CCW traversal agrees with global orientation.
    pub fn tri_edge(&self, t: usize, k: usize) -> (usize, bool) {
        self.tri_edges[t][k]
    }
    pub fn vertex_is_boundary(&self, v: usize) -> bool {
        self.vertex_on_boundary[v]
    }
    pub fn edge_is_boundary(&self, e: usize) -> bool {
        self.edge_on_boundary[e]
    }
    /// Paper-style interior edge flag: at least one endpoint is an interior
    /// vertex.
    pub fn is_e0_edge(&self, e: usize) -> bool {
        let [a, b] = self.edges[e].v;
        !self.vertex_on_boundary[a] || !self.vertex_on_boundary[b]
    }
    /// Interior vertices (not on the domain boundary).
    pub fn interior_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(|&v| !self.vertex_on_boundary[v])
    }
    /// Edges shared by two triangles.
    pub fn interior_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| !self.edge_on_boundary[e])
    }
    /// True when the two interior-edge notions (two incident triangles vs.
    /// at least one interior endpoint) coincide, as the curvature and finite
    /// element constructions require.
    pub fn edge_classes_agree(&self) -> bool {
        (0..self.edges.len()).all(|e| self.edge_on_boundary[e] != self.is_e0_edge(e))
    }
    /// Ordered triangle fan around vertex `z`.
    pub fn star(&self, z: usize) -> &[usize] {
        &self.stars[z]
    }

    pub fn tri_verts(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
    pub fn tri_area(&self, t: usize) -> f64 {
        signed_area(self.tri_verts(t))
    }
    /// Triangle diameter (longest edge).
    pub fn tri_diam(&self, t: usize) -> f64 {
        let p = self.tri_verts(t);
        let mut h: f64 = 0.0;
        for k in 0..3 {
            let q = p[(k + 1) % 3];
            let r = p[(k + 2) % 3];
            h = h.max(((q[0] - r[0]).powi(2) + (q[1] - r[1]).powi(2)).sqrt());
        }
        h
    }
    /// Mesh size h = max triangle diameter.
    pub fn h_max(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.tri_diam(t)).fold(0.0, f64::max)
    }
    pub fn edge_len(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].v;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
    }
    /// Edge vector in the global orientation (v0 -> v1).
    pub fn edge_vec(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e].v;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        [q[0] - p[0], q[1] - p[1]]
    }
    /// Physical point of barycentric coordinates in triangle `t`.
    pub fn bary_to_phys(&self, t: usize, bary: [f64; 3]) -> [f64; 2] {
        let p = self.tri_verts(t);
        [
            bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
            bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
        ]
    }
    /// Barycentric coordinates of a physical point within triangle `t`.
    pub fn phys_to_bary(&self, t: usize, x: [f64; 2]) -> [f64; 3] {
        let p = self.tri_verts(t);
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (x[1] - p[0][1])) / det;
        let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1]) - (x[0] - p[0][0]) * (p[1][1] - p[0][1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }
    /// Jacobian of the affine map from the reference triangle
    /// {(0,0),(1,0),(0,1)} to triangle `t` (columns p1-p0, p2-p0).
    pub fn jacobian(&self, t: usize) -> [[f64; 2]; 2] {
        let p = self.tri_verts(t);
        [
            [p[1][0] - p[0][0], p[2][0] - p[0][0]],
            [p[1][1] - p[0][1], p[2][1] - p[0][1]],
        ]
    }
    /// CCW traversal vector of local edge `k` of triangle `t` (not unit).
    pub fn ccw_edge_vec(&self, t: usize, k: usize) -> [f64; 2] {
        let tri = self.triangles[t];
        let a = self.vertices[tri[(k + 1) % 3]];
        let b = self.vertices[tri[(k + 2) % 3]];
        [b[0] - a[0], b[1] - a[1]]
    }
    /// Start point of the CCW traversal of local edge `k` of triangle `t`.
    pub fn ccw_edge_start(&self, t: usize, k: usize) -> [f64; 2] {
        self.vertices[self.triangles[t][(k + 1) % 3]]
    }
    /// Barycentric coordinates of the point at parameter `s` (in [0,1]) along
    /// the CCW traversal of local edge `k`.
    pub fn ccw_edge_bary(&self, _t: usize, k: usize, s: f64) -> [f64; 3] {
        let mut b = [0.0; 3];
        b[(k + 1) % 3] = 1.0 - s;
        b[(k + 2) % 3] = s;
        b
    }

    // -- serialization ------------------------------------------------------

    /// JSON export: vertices and triangles only; edges and flags are derived.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MeshJson {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
        })
        .expect("mesh serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MeshJson =
            serde_json::from_str(s).map_err(|e| Error::Mesh(format!("bad mesh JSON: {e}")))?;
        Self::from_parts(raw.vertices, raw.triangles)
    }

    /// Full invariant suite; used by tests and after refinement.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            if self.tri_area(t) <= 0.0 {
                return Err(Error::Mesh(format!("triangle {t} not CCW")));
            }
        }
        for e in 0..self.edges.len() {
            let ns = self.edges[e].nsides;
            if ns == 0 || ns > 2 {
                return Err(Error::Mesh(format!("edge {e} has {ns} sides")));
            }
        }
        let euler =
            self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64;
        if euler != 1 {
            return Err(Error::Mesh(format!("Euler relation violated: {euler}")));
        }
        // Fans: consecutive triangles share an edge containing z.
        for z in 0..self.vertices.len() {
            let fan = &self.stars[z];
            let closed = !self.vertex_on_boundary[z];
            let m = fan.len();
            let pairs = if closed { m } else { m - 1 };
            for i in 0..pairs {
                let (t1, t2) = (fan[i], fan[(i + 1) % m]);
                let share = (0..3).any(|k| {
                    let (e, _) = self.tri_edges[t1][k];
                    let edge = &self.edges[e];
                    edge.v.contains(&z)
                        && edge.nsides == 2
                        && (edge.sides[0].0 == t2 || edge.sides[1].0 == t2)
                });
                if !share {
                    return Err(Error::Mesh(format!("fan at vertex {z} broken at slot {i}")));
                }
            }
        }
        Ok(())
    }
}
