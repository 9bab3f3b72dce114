//! Local reconstruction of a continuous deformation from the piecewise
//! constant multiplier.
//!
//! Three local steps per element: fit a constant matrix to the weighted
//! misfit `|S_h - K|^{p-2}(S_h - K)` in the element `L^{p*}` norm (the
//! gradient), anchor an affine function with that gradient to the
//! multiplier value at the centroid, then average the per-element affine
//! functions at the vertices. For `p* = 2` step one reduces to the
//! quadrature mean and the procedure is the classical lowest-order
//! flux-reconstruction averaging.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use crate::lms::{misfit_weight_floor, LmsSolution, VecP0Field};
use crate::mesh::TriangleMesh;
use crate::quadrature::TRI6;

/// Continuous piecewise linear vector field: one vector per vertex.
#[derive(Debug, Clone)]
pub struct VecP1Field {
    pub values: Vec<Vector2<f64>>,
}

impl VecP1Field {
    /// Exact integral of the P1 field over the mesh.
    pub fn integral(&self, mesh: &TriangleMesh) -> Vector2<f64> {
        let mut total = Vector2::zeros();
        for t in 0..mesh.n_triangles() {
            let [a, b, c] = mesh.triangles[t];
            total +=
                mesh.triangle_area(t) * (self.values[a] + self.values[b] + self.values[c]) / 3.0;
        }
        total
    }
}

/// Affine function on one triangle: `x ↦ grad (x - centroid) + value`.
#[derive(Debug, Clone, Copy)]
pub struct LocalAffine {
    pub grad: Matrix2<f64>,
    pub centroid: Vector2<f64>,
    pub value: Vector2<f64>,
}

impl LocalAffine {
    pub fn eval(&self, x: Vector2<f64>) -> Vector2<f64> {
        self.grad * (x - self.centroid) + self.value
    }
}

fn vec4(m: &Matrix2<f64>) -> Vector4<f64> {
    Vector4::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn mat2(v: &Vector4<f64>) -> Matrix2<f64> {
    Matrix2::new(v[0], v[1], v[2], v[3])
}

/// Weighted misfit targets at the six quadrature points of triangle `t`,
/// paired with the quadrature weights.
fn gradient_targets(
    mesh: &TriangleMesh,
    t: usize,
    solution: &LmsSolution,
    k_field: &[Matrix2<f64>],
    p: f64,
    eps: f64,
) -> [(Matrix2<f64>, f64); 6] {
    let pts = mesh.triangle_points(t);
    std::array::from_fn(|q| {
        let (l, w) = TRI6[q];
        let x = pts[0] * l[0] + pts[1] * l[1] + pts[2] * l[2];
        let misfit = solution.s.eval(mesh, t, x) - k_field[t];
        let weight = (misfit.norm_squared() + eps * eps).powf(0.5 * (p - 2.0));
        (weight * misfit, w)
    })
}

/// Objective of the step-1 fit: `Σ_q ω_q (|A - G_q|² + δ²)^{p*/2}`.
fn fit_objective(
    a: &Matrix2<f64>,
    targets: &[(Matrix2<f64>, f64); 6],
    p_star: f64,
    delta: f64,
) -> f64 {
    targets
        .iter()
        .map(|(g, w)| w * ((a - g).norm_squared() + delta * delta).powf(0.5 * p_star))
        .sum()
}

/// Best constant approximation of the targets in the element `L^{p*}`
/// norm. Returns the minimizer and whether the Newton iteration fell back
/// to the quadrature mean.
pub fn local_gradient_fit(
    targets: &[(Matrix2<f64>, f64); 6],
    p: f64,
    delta: f64,
) -> (Matrix2<f64>, bool) {
    let mean: Matrix2<f64> = targets.iter().map(|(g, w)| *w * g).sum();
    if p == 2.0 {
        return (mean, false);
    }
    let p_star = p / (p - 1.0);

    let gradient = |a: &Matrix2<f64>| -> Matrix2<f64> {
        let mut g = Matrix2::zeros();
        for (gq, w) in targets {
            let d = a - gq;
            g += *w * p_star * (d.norm_squared() + delta * delta).powf(0.5 * p_star - 1.0) * d;
        }
        g
    };

    let mut a = mean;
    let mut f_a = fit_objective(&a, targets, p_star, delta);
    let scale = 1.0 + gradient(&mean).norm();
    let mut fell_back = false;
    let mut converged = false;
    for _ in 0..50 {
        let g = gradient(&a);
        if g.norm() <= 1e-10 * scale {
            converged = true;
            break;
        }
        // 4x4 Hessian of the strictly convex objective.
        let mut h = Matrix4::zeros();
        for (gq, w) in targets {
            let d = a - gq;
            let r2 = d.norm_squared() + delta * delta;
            let base = *w * p_star * r2.powf(0.5 * p_star - 1.0);
            h += base * Matrix4::identity();
            let dv = vec4(&d);
            h += *w * p_star * (p_star - 2.0) * r2.powf(0.5 * p_star - 2.0) * dv * dv.transpose();
        }
        let step = match h.lu().solve(&(-vec4(&g))) {
            Some(s) => s,
            None => break,
        };
        // Backtrack until the objective decreases.
        let mut accepted = false;
        let mut tau = 1.0;
        for _ in 0..40 {
            let cand = a + tau * mat2(&step);
            let f_cand = fit_objective(&cand, targets, p_star, delta);
            if f_cand < f_a {
                a = cand;
                f_a = f_cand;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            // No decrease along the Newton direction; the current iterate
            // is numerically optimal.
            converged = true;
            break;
        }
    }
    if !converged && gradient(&a).norm() > 1e-10 * scale {
        // Diverged or stalled: keep whichever of the mean and the last
        // iterate has the smaller objective. Accepted steps only ever
        // decrease it, so this is the last iterate unless nothing moved.
        if fit_objective(&mean, targets, p_star, delta) < f_a {
            a = mean;
        }
        fell_back = true;
    }
    (a, fell_back)
}

/// Step 2: the affine function with the fitted gradient whose centroid
/// value matches the multiplier on the element.
pub fn local_value_fit(
    mesh: &TriangleMesh,
    t: usize,
    gradient: Matrix2<f64>,
    theta: &VecP0Field,
) -> LocalAffine {
    let p = mesh.triangle_points(t);
    LocalAffine {
        grad: gradient,
        centroid: (p[0] + p[1] + p[2]) / 3.0,
        value: theta.values[t],
    }
}

/// Step 3: plain arithmetic averaging of the per-element affine functions
/// at each vertex over the triangles containing it.
pub fn vertex_average(mesh: &TriangleMesh, affines: &[LocalAffine]) -> VecP1Field {
    let mut sums = vec![Vector2::zeros(); mesh.n_vertices()];
    let mut counts = vec![0usize; mesh.n_vertices()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &v in tri {
            sums[v] += affines[t].eval(mesh.vertices[v]);
            counts[v] += 1;
        }
    }
    VecP1Field {
        values: sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| s / c as f64)
            .collect(),
    }
}

/// Outcome of the full reconstruction.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: VecP1Field,
    /// Elements whose step-1 Newton iteration fell back to the mean.
    pub fallback_elements: usize,
}

/// Chains the three local steps and normalizes the result to
/// area-weighted mean zero.
pub fn reconstruct_deformation(
    mesh: &TriangleMesh,
    solution: &LmsSolution,
    k_field: &[Matrix2<f64>],
    p: f64,
    eps_rel: f64,
) -> Reconstruction {
    let eps = misfit_weight_floor(k_field, eps_rel);
    let mut affines = Vec::with_capacity(mesh.n_triangles());
    let mut fallback_elements = 0;
    for t in 0..mesh.n_triangles() {
        let targets = gradient_targets(mesh, t, solution, k_field, p, eps);
        let (grad, fell_back) = local_gradient_fit(&targets, p, eps);
        if fell_back {
            fallback_elements += 1;
        }
        affines.push(local_value_fit(mesh, t, grad, &solution.theta));
    }
    let mut field = vertex_average(mesh, &affines);
    let mean = field.integral(mesh) / mesh.area();
    for v in &mut field.values {
        *v -= mean;
    }
    Reconstruction {
        field,
        fallback_elements,
    }
}
