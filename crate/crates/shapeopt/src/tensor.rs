//! Shape-tensor algebra and the volume form of the shape derivative.
//!
//! The Sturm-Laurain shape tensor of a state/adjoint pair is
//! `K(u, y) = (∇u · ∇y) I - ∇y ⊗ ∇u - ∇u ⊗ ∇y`, equivalently the image of
//! the rank-one matrix `∇u ⊗ ∇y` under the linear map
//! `𝒜(M) = tr(M) I - M - Mᵀ`. Pairing `K` with `∇χ` gives the leading term
//! of the shape derivative in volume form.

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::mesh::TriangleMesh;
use crate::poisson::{gradient_p0, hat_gradients, ScalarP1Field};
use crate::problems::ProblemSpec;
use crate::quadrature::TRI6;

/// `𝒜(M) = tr(M) I - M - Mᵀ` for 2×2 matrices (the pipeline case).
pub fn amap(m: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::identity() * m.trace() - m - m.transpose()
}

/// `𝒜` for arbitrary square dimension; used by the algebra property tests.
pub fn amap_generic(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(m.nrows(), m.ncols(), "amap needs a square matrix");
    DMatrix::identity(m.nrows(), m.ncols()) * m.trace() - m - m.transpose()
}

/// The shape tensor of a pair of gradients.
pub fn shape_tensor(grad_u: Vector2<f64>, grad_y: Vector2<f64>) -> Matrix2<f64> {
    Matrix2::identity() * grad_u.dot(&grad_y)
        - grad_y * grad_u.transpose()
        - grad_u * grad_y.transpose()
}

/// Per-triangle shape tensor of two P1 fields; constant on each triangle
/// because P1 gradients are.
pub fn assemble_shape_tensor_field(
    mesh: &TriangleMesh,
    u_h: &ScalarP1Field,
    y_h: &ScalarP1Field,
) -> Vec<Matrix2<f64>> {
    let gu = gradient_p0(mesh, u_h);
    let gy = gradient_p0(mesh, y_h);
    gu.iter()
        .zip(&gy)
        .map(|(a, b)| shape_tensor(*a, *b))
        .collect()
}

/// Row-wise gradient of a P1 vector field on triangle `t`: row `r` is the
/// gradient of component `r`.
pub fn vector_field_gradient(mesh: &TriangleMesh, chi: &[Vector2<f64>], t: usize) -> Matrix2<f64> {
    let g = hat_gradients(mesh, t);
    let tri = mesh.triangles[t];
    let mut a = Matrix2::zeros();
    for i in 0..3 {
        a += chi[tri[i]] * g[i].transpose();
    }
    a
}

/// Volume form of the shape derivative in direction of the continuous
/// piecewise linear field `chi`:
/// `J'(Ω)[χ] = (K, ∇χ) + (f ∇y_h, χ) + (j(u_h), div χ)`.
pub fn shape_derivative(
    mesh: &TriangleMesh,
    spec: &ProblemSpec,
    u_h: &ScalarP1Field,
    y_h: &ScalarP1Field,
    chi: &[Vector2<f64>],
) -> f64 {
    assert_eq!(chi.len(), mesh.n_vertices(), "chi is a per-vertex field");
    let k_field = assemble_shape_tensor_field(mesh, u_h, y_h);
    let gy = gradient_p0(mesh, y_h);
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        let grad_chi = vector_field_gradient(mesh, chi, t);
        total += area * (k_field[t].transpose() * grad_chi).trace();
        let div_chi = grad_chi.trace();
        let tri = mesh.triangles[t];
        let p = mesh.triangle_points(t);
        for (l, w) in TRI6 {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
            let chi_x = chi[tri[0]] * l[0] + chi[tri[1]] * l[1] + chi[tri[2]] * l[2];
            total += w * area * spec.f(x) * gy[t].dot(&chi_x);
            total += w * area * spec.j(u_h.eval_bary(mesh, t, l)) * div_chi;
        }
    }
    total
}

/// The two translation derivatives `( ∫ f ∂₁y_h , ∫ f ∂₂y_h )`; both vanish
/// exactly when the shape derivative is compatible with translations.
pub fn compatibility_residual(
    mesh: &TriangleMesh,
    spec: &ProblemSpec,
    y_h: &ScalarP1Field,
) -> Vector2<f64> {
    let gy = gradient_p0(mesh, y_h);
    let mut r = Vector2::zeros();
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        let p = mesh.triangle_points(t);
        let mut f_int = 0.0;
        for (l, w) in TRI6 {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
            f_int += w * area * spec.f(x);
        }
        r += f_int * gy[t];
    }
    r
}
