//! Conforming triangulations of polygonal domains.
//!
//! A [`TriangleMesh`] stores vertices, counterclockwise triangles and a
//! derived edge structure with a globally consistent orientation: every
//! edge runs from its lower to its higher vertex index. That convention
//! makes the sign bookkeeping of Raviart-Thomas degrees of freedom a pure
//! function of the connectivity, stable under refinement.
//!
//! Meshes are immutable after construction; refinement, deformation and
//! translation all return new meshes.

use nalgebra::Vector2;

use crate::{Error, Result};

/// Minimum-angle floor (radians) below which a deformed mesh counts as
/// degenerate. Two degrees; conservative and overridable per call.
pub const DEFAULT_MIN_ANGLE_FLOOR: f64 = 2.0 * std::f64::consts::PI / 180.0;

/// Optional boundary-geometry marker consulted only during refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryGeometry {
    /// Boundary vertices lie on the circle `|x - center| = radius`;
    /// refinement projects new boundary midpoints onto it.
    Circle { center: Vector2<f64>, radius: f64 },
}

/// One triangle's local edge: global edge index plus the orientation sign
/// relating the global edge normal to this triangle's outward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRef {
    pub edge: usize,
    /// `+1.0` if the global normal of the edge points out of the triangle.
    pub sign: f64,
}

/// A conforming triangulation of a polygonal domain.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    /// Vertex coordinates.
    pub vertices: Vec<Vector2<f64>>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    /// Global edges as `(low, high)` vertex index pairs.
    pub edges: Vec<[usize; 2]>,
    /// Per triangle, the edge opposite each local vertex with its sign.
    pub triangle_edges: Vec<[EdgeRef; 3]>,
    /// Edge indices that lie on the boundary, each in exactly one triangle.
    pub boundary_edges: Vec<BoundaryEdge>,
    /// For each edge, the 1 or 2 adjacent triangles.
    pub edge_triangles: Vec<(usize, Option<usize>)>,
    /// Marks boundary vertices.
    pub is_boundary_vertex: Vec<bool>,
    /// Boundary-geometry marker used by [`refine_uniform`].
    pub boundary_geometry: Option<BoundaryGeometry>,
}

/// A boundary edge together with its domain-outward orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub edge: usize,
    /// `+1.0` if the global normal of the edge points out of the domain.
    pub sign: f64,
    /// The unique adjacent triangle.
    pub triangle: usize,
    /// The edge directed as its triangle traverses it (counterclockwise
    /// around the domain).
    pub directed: [usize; 2],
}

/// Scalar quality summary of a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    /// Smallest interior angle over all triangles, radians.
    pub min_angle: f64,
    /// Smallest signed triangle area; positive for a valid mesh.
    pub min_signed_area: f64,
    /// Largest ratio of longest edge to inradius-scaled height.
    pub max_aspect_ratio: f64,
}

/// Returned by [`TriangleMesh::deform`] when the displaced mesh would be
/// invalid. Not an error: callers backtrack on it.
#[derive(Debug, Clone, Copy)]
pub struct DegeneracyReport {
    /// Triangle that violates the floor worst.
    pub worst_triangle: usize,
    pub min_signed_area: f64,
    pub min_angle: f64,
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn signed_area(p0: Vector2<f64>, p1: Vector2<f64>, p2: Vector2<f64>) -> f64 {
    0.5 * cross2(p1 - p0, p2 - p0)
}

fn triangle_angles(p: [Vector2<f64>; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let a = p[(i + 1) % 3] - p[i];
        let b = p[(i + 2) % 3] - p[i];
        out[i] = cross2(a, b).atan2(a.dot(&b)).abs();
    }
    out
}

impl TriangleMesh {
    /// Builds a mesh from raw vertices and counterclockwise triangles,
    /// deriving the edge and boundary structure.
    pub fn from_cells(
        vertices: Vec<Vector2<f64>>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<TriangleMesh> {
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(Error::InvalidMesh(format!(
                        "triangle {t} references vertex {v} of {nv}"
                    )));
                }
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area {a}"
                )));
            }
        }

        // Global edges keyed by (low, high); deterministic indices in order
        // of first appearance over the triangle list.
        let mut edge_index: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut edge_triangles: Vec<(usize, Option<usize>)> = Vec::new();
        let mut triangle_edges: Vec<[EdgeRef; 3]> = Vec::with_capacity(triangles.len());
        let mut directed: Vec<[usize; 2]> = Vec::new();

        for (t, tri) in triangles.iter().enumerate() {
            let mut refs = [EdgeRef { edge: 0, sign: 0.0 }; 3];
            for l in 0..3 {
                // Local edge l is opposite local vertex l.
                let a = tri[(l + 1) % 3];
                let b = tri[(l + 2) % 3];
                let key = (a.min(b), a.max(b));
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_triangles.push((t, None));
                    directed.push([a, b]);
                    edges.len() - 1
                });
                if edge_triangles[e].0 != t {
                    if edge_triangles[e].1.is_some() {
                        return Err(Error::InvalidMesh(format!(
                            "edge ({},{}) shared by more than two triangles",
                            key.0, key.1
                        )));
                    }
                    edge_triangles[e].1 = Some(t);
                }
                // The triangle traverses this edge a -> b; the global edge
                // normal (for low -> high) is outward iff a < b.
                refs[l] = EdgeRef {
                    edge: e,
                    sign: if a < b { 1.0 } else { -1.0 },
                };
            }
            triangle_edges.push(refs);
        }

        let mut is_boundary_vertex = vec![false; nv];
        let mut boundary_edges = Vec::new();
        for (e, &(t0, t1)) in edge_triangles.iter().enumerate() {
            if t1.is_none() {
                let [a, b] = directed[e];
                is_boundary_vertex[a] = true;
                is_boundary_vertex[b] = true;
                let sign = if a < b { 1.0 } else { -1.0 };
                boundary_edges.push(BoundaryEdge {
                    edge: e,
                    sign,
                    triangle: t0,
                    directed: [a, b],
                });
            }
        }

        let mesh = TriangleMesh {
            vertices,
            triangles,
            edges,
            triangle_edges,
            boundary_edges,
            edge_triangles,
            is_boundary_vertex,
            boundary_geometry: None,
        };
        mesh.check_boundary_loops()?;
        Ok(mesh)
    }

    /// Every boundary vertex must have exactly two incident boundary edges,
    /// so the boundary decomposes into closed loops.
    fn check_boundary_loops(&self) -> Result<()> {
        let mut degree = vec![0usize; self.vertices.len()];
        for be in &self.boundary_edges {
            degree[be.directed[0]] += 1;
            degree[be.directed[1]] += 1;
        }
        for (v, &d) in degree.iter().enumerate() {
            if self.is_boundary_vertex[v] && d != 2 {
                return Err(Error::InvalidMesh(format!(
                    "boundary vertex {v} has {d} incident boundary edges"
                )));
            }
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Corner coordinates of a triangle.
    pub fn triangle_points(&self, t: usize) -> [Vector2<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area of a triangle (positive by the CCW invariant).
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_points(t);
        signed_area(p0, p1, p2)
    }

    /// Length of a global edge.
    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        (self.vertices[b] - self.vertices[a]).norm()
    }

    /// Unit normal of a boundary edge pointing out of the domain.
    pub fn boundary_outward_normal(&self, be: &BoundaryEdge) -> Vector2<f64> {
        let [a, b] = be.directed;
        let t = self.vertices[b] - self.vertices[a];
        Vector2::new(t.y, -t.x) / t.norm()
    }

    /// Total mesh area.
    pub fn area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted centroid of the mesh.
    pub fn barycenter(&self) -> Vector2<f64> {
        let mut num = Vector2::zeros();
        let mut den = 0.0;
        for t in 0..self.n_triangles() {
            let [p0, p1, p2] = self.triangle_points(t);
            let a = signed_area(p0, p1, p2);
            num += a * (p0 + p1 + p2) / 3.0;
            den += a;
        }
        num / den
    }

    /// Quality metrics over all triangles.
    pub fn quality(&self) -> MeshQuality {
        let mut min_angle = f64::INFINITY;
        let mut min_signed_area = f64::INFINITY;
        let mut max_aspect_ratio: f64 = 0.0;
        for t in 0..self.n_triangles() {
            let p = self.triangle_points(t);
            let area = signed_area(p[0], p[1], p[2]);
            min_signed_area = min_signed_area.min(area);
            for a in triangle_angles(p) {
                min_angle = min_angle.min(a);
            }
            let lmax = (0..3)
                .map(|i| (p[(i + 1) % 3] - p[i]).norm())
                .fold(0.0f64, f64::max);
            // Longest edge over inradius, a standard shape measure.
            let per: f64 = (0..3).map(|i| (p[(i + 1) % 3] - p[i]).norm()).sum();
            let inradius = 2.0 * area.abs() / per;
            max_aspect_ratio = max_aspect_ratio.max(lmax / inradius.max(1e-300));
        }
        MeshQuality {
            min_angle,
            min_signed_area,
            max_aspect_ratio,
        }
    }

    /// Splits every triangle into 4 congruent children via edge midpoints.
    /// New boundary midpoints are projected when a [`BoundaryGeometry`]
    /// marker is present. New vertex `nv + e` is the midpoint of edge `e`.
    pub fn refine_uniform(&self) -> TriangleMesh {
        let nv = self.n_vertices();
        let mut vertices = self.vertices.clone();
        let boundary: std::collections::HashSet<usize> =
            self.boundary_edges.iter().map(|be| be.edge).collect();
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            let mut m = 0.5 * (self.vertices[a] + self.vertices[b]);
            if boundary.contains(&e) {
                if let Some(BoundaryGeometry::Circle { center, radius }) = self.boundary_geometry {
                    m = center + (m - center).normalize() * radius;
                }
            }
            debug_assert_eq!(vertices.len(), nv + e);
            vertices.push(m);
        }
        let mut triangles = Vec::with_capacity(4 * self.n_triangles());
        for (t, tri) in self.triangles.iter().enumerate() {
            let [v0, v1, v2] = *tri;
            let m0 = nv + self.triangle_edges[t][0].edge; // midpoint of (v1,v2)
            let m1 = nv + self.triangle_edges[t][1].edge; // midpoint of (v2,v0)
            let m2 = nv + self.triangle_edges[t][2].edge; // midpoint of (v0,v1)
            triangles.push([v0, m2, m1]);
            triangles.push([m2, v1, m0]);
            triangles.push([m1, m0, v2]);
            triangles.push([m2, m0, m1]);
        }
        let mut mesh = TriangleMesh::from_cells(vertices, triangles)
            .expect("uniform refinement preserves validity");
        mesh.boundary_geometry = self.boundary_geometry;
        mesh
    }

    /// Moves every vertex to `x + alpha * displacement(x)`. Returns the
    /// deformed mesh, or a [`DegeneracyReport`] if any triangle inverts or
    /// falls below the angle floor. The boundary-geometry marker does not
    /// survive deformation.
    pub fn deform(
        &self,
        displacement: &[Vector2<f64>],
        alpha: f64,
        min_angle_floor: f64,
    ) -> std::result::Result<TriangleMesh, DegeneracyReport> {
        assert_eq!(
            displacement.len(),
            self.n_vertices(),
            "one displacement vector per vertex"
        );
        let vertices: Vec<Vector2<f64>> = self
            .vertices
            .iter()
            .zip(displacement)
            .map(|(x, d)| x + alpha * d)
            .collect();

        let mut worst = DegeneracyReport {
            worst_triangle: 0,
            min_signed_area: f64::INFINITY,
            min_angle: f64::INFINITY,
        };
        for (t, tri) in self.triangles.iter().enumerate() {
            let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let area = signed_area(p[0], p[1], p[2]);
            let angle = if area > 0.0 {
                triangle_angles(p).into_iter().fold(f64::INFINITY, f64::min)
            } else {
                0.0
            };
            if area < worst.min_signed_area || angle < worst.min_angle {
                worst.worst_triangle = t;
            }
            worst.min_signed_area = worst.min_signed_area.min(area);
            worst.min_angle = worst.min_angle.min(angle);
        }
        if worst.min_signed_area <= 0.0 || worst.min_angle < min_angle_floor {
            return Err(worst);
        }

        // Connectivity is untouched, so reuse the derived structure.
        let mut mesh = self.clone();
        mesh.vertices = vertices;
        mesh.boundary_geometry = None;
        Ok(mesh)
    }

    /// Rigid translation by `offset`; the circle marker, when present,
    /// moves with the mesh.
    pub fn translate(&self, offset: Vector2<f64>) -> TriangleMesh {
        let mut mesh = self.clone();
        for v in &mut mesh.vertices {
            *v += offset;
        }
        if let Some(BoundaryGeometry::Circle { center, radius }) = mesh.boundary_geometry {
            mesh.boundary_geometry = Some(BoundaryGeometry::Circle {
                center: center + offset,
                radius,
            });
        }
        mesh
    }

    /// Euler characteristic `V - E + T`; 1 for simply connected meshes.
    pub fn euler_characteristic(&self) -> isize {
        self.n_vertices() as isize - self.n_edges() as isize + self.n_triangles() as isize
    }
}

/// Fan triangulation of the regular `n_sides`-gon centered at the origin,
/// scaled to `target_area`, with one vertex on the positive x-axis.
///
/// Layout: vertex 0 is the center; vertex `2k + 1` is polygon corner `k`
/// (corner 0 on the positive x-axis) and vertex `2k + 2` the midpoint of
/// side `k`, giving `2 n_sides` boundary triangles.
pub fn build_regular_polygon(n_sides: usize, target_area: f64) -> Result<TriangleMesh> {
    if n_sides < 3 {
        return Err(Error::InvalidParameter(format!(
            "regular polygon needs at least 3 sides, got {n_sides}"
        )));
    }
    if !(target_area > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target area must be positive, got {target_area}"
        )));
    }
    let n = n_sides;
    // Area of the regular n-gon with circumradius r: (n/2) r^2 sin(2π/n).
    let r = (target_area / (0.5 * n as f64 * (2.0 * std::f64::consts::PI / n as f64).sin())).sqrt();
    let corner = |k: usize| {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        Vector2::new(r * phi.cos(), r * phi.sin())
    };
    let mut vertices = vec![Vector2::zeros()];
    for k in 0..n {
        vertices.push(corner(k));
        vertices.push(0.5 * (corner(k) + corner(k + 1)));
    }
    let mut triangles = Vec::with_capacity(2 * n);
    for j in 0..(2 * n) {
        let b0 = 1 + j;
        let b1 = 1 + (j + 1) % (2 * n);
        triangles.push([0, b0, b1]);
    }
    TriangleMesh::from_cells(vertices, triangles)
}

/// Inscribed polygonal approximation of the disk of given radius centered
/// at the origin: the level-0 mesh is a fan over 8 boundary vertices on
/// the circle, and each level applies one uniform refinement with its new
/// boundary midpoints projected back onto the circle.
pub fn build_disk_approximation(radius: f64, level: usize) -> Result<TriangleMesh> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "disk radius must be positive, got {radius}"
        )));
    }
    // Base: square fan with side midpoints, all boundary vertices pushed
    // onto the circle, i.e. a regular octagon with 8 triangles.
    let mut mesh = build_regular_polygon(4, 2.0)?;
    for v in &mut mesh.vertices {
        if v.norm() > 0.0 {
            *v = v.normalize() * radius;
        }
    }
    mesh.boundary_geometry = Some(BoundaryGeometry::Circle {
        center: Vector2::zeros(),
        radius,
    });
    for _ in 0..level {
        mesh = mesh.refine_uniform();
    }
    Ok(mesh)
}
