//! P1 conforming finite elements for the state and adjoint Dirichlet
//! problems, and evaluation of the shape functional.
//!
//! Stiffness entries are assembled exactly; every integral involving the
//! source, the objective integrand or its derivative uses the shared
//! degree-4 rule from [`crate::quadrature`].

use nalgebra::Vector2;

use crate::linsolve::{solve_spd, SparseSystem};
use crate::mesh::TriangleMesh;
use crate::problems::ProblemSpec;
use crate::quadrature::TRI6;
use crate::Result;

/// A continuous piecewise linear scalar field: one value per vertex.
#[derive(Debug, Clone)]
pub struct ScalarP1Field {
    pub values: Vec<f64>,
}

impl ScalarP1Field {
    pub fn zeros(mesh: &TriangleMesh) -> Self {
        ScalarP1Field {
            values: vec![0.0; mesh.n_vertices()],
        }
    }

    /// Value at barycentric coordinates `l` of triangle `t`.
    pub fn eval_bary(&self, mesh: &TriangleMesh, t: usize, l: [f64; 3]) -> f64 {
        let [a, b, c] = mesh.triangles[t];
        self.values[a] * l[0] + self.values[b] * l[1] + self.values[c] * l[2]
    }
}

/// Gradients of the three barycentric (hat) functions on triangle `t`;
/// constant over the triangle.
pub fn hat_gradients(mesh: &TriangleMesh, t: usize) -> [Vector2<f64>; 3] {
    let p = mesh.triangle_points(t);
    let two_a = 2.0 * mesh.triangle_area(t);
    let rot = |v: Vector2<f64>| Vector2::new(-v.y, v.x);
    [
        rot(p[2] - p[1]) / two_a,
        rot(p[0] - p[2]) / two_a,
        rot(p[1] - p[0]) / two_a,
    ]
}

/// Per-triangle constant gradient of a P1 field.
pub fn gradient_p0(mesh: &TriangleMesh, field: &ScalarP1Field) -> Vec<Vector2<f64>> {
    debug_assert_eq!(field.values.len(), mesh.n_vertices());
    (0..mesh.n_triangles())
        .map(|t| {
            let g = hat_gradients(mesh, t);
            let [a, b, c] = mesh.triangles[t];
            field.values[a] * g[0] + field.values[b] * g[1] + field.values[c] * g[2]
        })
        .collect()
}

/// Solves the homogeneous Dirichlet problem `(∇u, ∇v) = (load, v)` for all
/// interior P1 hats `v`. The load is evaluated per quadrature point and
/// receives the hosting triangle and barycentric coordinates so callers
/// can interpolate discrete data.
fn solve_dirichlet(
    mesh: &TriangleMesh,
    load: impl Fn(usize, Vector2<f64>, [f64; 3]) -> f64,
) -> Result<ScalarP1Field> {
    let nv = mesh.n_vertices();
    let mut dof = vec![usize::MAX; nv];
    let mut n_dof = 0;
    for v in 0..nv {
        if !mesh.is_boundary_vertex[v] {
            dof[v] = n_dof;
            n_dof += 1;
        }
    }
    let mut sys = SparseSystem::new(n_dof, true);
    let mut rhs = vec![0.0; n_dof];
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        let g = hat_gradients(mesh, t);
        let tri = mesh.triangles[t];
        for i in 0..3 {
            if dof[tri[i]] == usize::MAX {
                continue;
            }
            for j in 0..3 {
                if dof[tri[j]] != usize::MAX {
                    sys.add(dof[tri[i]], dof[tri[j]], area * g[i].dot(&g[j]));
                }
            }
        }
        let p = mesh.triangle_points(t);
        for (l, w) in TRI6 {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
            let fval = load(t, x, l);
            // Hat values at a point are its barycentric coordinates.
            for i in 0..3 {
                if dof[tri[i]] != usize::MAX {
                    rhs[dof[tri[i]]] += w * area * fval * l[i];
                }
            }
        }
    }
    let sol = solve_spd(&sys, &rhs)?;
    let mut values = vec![0.0; nv];
    for v in 0..nv {
        if dof[v] != usize::MAX {
            values[v] = sol[dof[v]];
        }
    }
    Ok(ScalarP1Field { values })
}

/// State problem: `(∇u_h, ∇v) = (f, v)`, `u_h = 0` on the boundary.
pub fn solve_state(mesh: &TriangleMesh, spec: &ProblemSpec) -> Result<ScalarP1Field> {
    solve_dirichlet(mesh, |_, x, _| spec.f(x))
}

/// Adjoint problem: `(∇y_h, ∇z) = -(j'(u_h), z)`, `y_h = 0` on the boundary.
pub fn solve_adjoint(
    mesh: &TriangleMesh,
    spec: &ProblemSpec,
    u_h: &ScalarP1Field,
) -> Result<ScalarP1Field> {
    debug_assert_eq!(u_h.values.len(), mesh.n_vertices());
    solve_dirichlet(mesh, |t, _, l| -spec.j_prime(u_h.eval_bary(mesh, t, l)))
}

/// Shape functional `J = ∫ j(u_h) dx` by the shared quadrature rule.
pub fn evaluate_j(mesh: &TriangleMesh, spec: &ProblemSpec, u_h: &ScalarP1Field) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        for (l, w) in TRI6 {
            total += w * area * spec.j(u_h.eval_bary(mesh, t, l));
        }
    }
    total
}
