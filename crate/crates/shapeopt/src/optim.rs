//! The outer shape-gradient iteration.
//!
//! Each step solves state and adjoint, computes the least-mean solution
//! and its stationarity value, reconstructs the continuous deformation,
//! and walks a logarithmic step-size grid `α = 2^k` accepting the best
//! functional decrease. Problems whose optimal barycenter is unknown run
//! a translation half-step first, moving the mesh until translations stop
//! reducing the functional.

use nalgebra::{Matrix2, Vector2};

use crate::lms::{assemble_constraint_rhs, solve_p, SolverControls};
use crate::mesh::{TriangleMesh, DEFAULT_MIN_ANGLE_FLOOR};
use crate::poisson::{evaluate_j, solve_adjoint, solve_state};
use crate::problems::ProblemSpec;
use crate::quadrature::TRI6;
use crate::reconstruct::reconstruct_deformation;
use crate::tensor::{assemble_shape_tensor_field, compatibility_residual};
use crate::{Error, Result};

/// Knobs of the outer iteration.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Norm index of the least-mean problem, in `(1, 2]`.
    pub p: f64,
    pub max_outer_iters: usize,
    /// Inclusive exponent range of the step-size grid `α = 2^k`.
    pub k_min: i32,
    pub k_max: i32,
    /// Declare convergence once the relative change of η stays below this
    /// over three consecutive iterations.
    pub eta_rel_stop: f64,
    pub translation_tol: f64,
    pub min_angle_floor: f64,
    pub enable_translation_step: bool,
    pub lms: SolverControls,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            p: 2.0,
            max_outer_iters: 200,
            k_min: -20,
            k_max: 4,
            eta_rel_stop: 1e-4,
            translation_tol: 1e-8,
            min_angle_floor: DEFAULT_MIN_ANGLE_FLOOR,
            enable_translation_step: false,
            lms: SolverControls::default(),
        }
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    DegenerateMesh,
    MaxIters,
    LineSearchFailed,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Converged => "converged",
            Termination::DegenerateMesh => "degenerate_mesh",
            Termination::MaxIters => "max_iters",
            Termination::LineSearchFailed => "line_search_failed",
        };
        f.write_str(s)
    }
}

/// Snapshot of one outer iteration before its step is taken.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub eta: f64,
    /// Step size taken from this shape; zero on terminal records.
    pub alpha: f64,
    pub min_angle: f64,
    pub barycenter: Vector2<f64>,
}

/// Full run record.
#[derive(Debug, Clone)]
pub struct IterationReport {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    /// Recoverable incidents (translation failures, non-converged inner
    /// iterations), one line each.
    pub notes: Vec<String>,
}

impl IterationReport {
    pub fn final_j(&self) -> Option<f64> {
        self.records.last().map(|r| r.j)
    }
    pub fn final_eta(&self) -> Option<f64> {
        self.records.last().map(|r| r.eta)
    }
}

/// Result of scanning the step-size grid.
pub enum LineSearchOutcome {
    Accepted {
        alpha: f64,
        j_new: f64,
        mesh: TriangleMesh,
    },
    /// Valid candidates existed but none improved the functional.
    NoImprovement,
    /// Every candidate deformation degenerated the mesh.
    AllDegenerate,
}

/// Walks `α = 2^k` for `k ∈ [k_min, k_max]`, re-solving the state problem
/// on each non-degenerate deformed mesh, and returns the best strict
/// improvement over `j_current`.
pub fn line_search(
    mesh: &TriangleMesh,
    spec: &ProblemSpec,
    theta: &[Vector2<f64>],
    k_range: (i32, i32),
    j_current: f64,
    min_angle_floor: f64,
) -> Result<LineSearchOutcome> {
    let mut best: Option<(f64, f64, TriangleMesh)> = None;
    let mut any_valid = false;
    for k in k_range.0..=k_range.1 {
        let alpha = 2.0f64.powi(k);
        let candidate = match mesh.deform(theta, alpha, min_angle_floor) {
            Ok(m) => m,
            Err(_) => continue, // inverted or below the floor: skip, never solve
        };
        any_valid = true;
        let u = solve_state(&candidate, spec)?;
        let j = evaluate_j(&candidate, spec, &u);
        if j < best.as_ref().map_or(j_current, |(jb, _, _)| *jb) {
            best = Some((j, alpha, candidate));
        }
    }
    match best {
        Some((j_new, alpha, mesh)) => Ok(LineSearchOutcome::Accepted { alpha, j_new, mesh }),
        None if any_valid => Ok(LineSearchOutcome::NoImprovement),
        None => Ok(LineSearchOutcome::AllDegenerate),
    }
}

/// Magnitude against which the translation residual is measured:
/// `∫ |f| |∇y_h| dx`.
fn translation_scale(
    mesh: &TriangleMesh,
    spec: &ProblemSpec,
    y: &crate::poisson::ScalarP1Field,
) -> f64 {
    let gy = crate::poisson::gradient_p0(mesh, y);
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let p = mesh.triangle_points(t);
        let area = mesh.triangle_area(t);
        for (l, w) in TRI6 {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
            total += w * area * spec.f(x).abs() * gy[t].norm();
        }
    }
    total.max(1e-300)
}

/// Rigidly translates the mesh until the translation derivative of the
/// functional vanishes: `(f ∇y, e) = 0` for all constant `e`. Solved by a
/// Broyden secant iteration on the 2-vector residual, each evaluation
/// re-solving state and adjoint on the shifted mesh; at most 30 solves.
pub fn translation_step(
    mesh: &TriangleMesh,
    spec: &ProblemSpec,
    tol: f64,
) -> Result<(TriangleMesh, Vector2<f64>)> {
    const MAX_EVALS: usize = 30;
    let residual_at = |e: Vector2<f64>| -> Result<(Vector2<f64>, f64)> {
        let shifted = mesh.translate(e);
        let u = solve_state(&shifted, spec)?;
        let y = solve_adjoint(&shifted, spec, &u)?;
        let scale = translation_scale(&shifted, spec, &y);
        Ok((compatibility_residual(&shifted, spec, &y), scale))
    };

    let mut e = Vector2::zeros();
    let (mut r, scale) = residual_at(e)?;
    let mut evals = 1;
    if r.norm() <= tol * scale {
        return Ok((mesh.translate(e), e));
    }

    // Finite-difference seed for the Jacobian.
    let diam = {
        let (mut lo, mut hi) = (
            Vector2::repeat(f64::INFINITY),
            Vector2::repeat(f64::NEG_INFINITY),
        );
        for v in &mesh.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    };
    let h = 1e-4 * diam;
    let (r_x, _) = residual_at(e + Vector2::new(h, 0.0))?;
    let (r_y, _) = residual_at(e + Vector2::new(0.0, h))?;
    evals += 2;
    let mut jac = Matrix2::from_columns(&[(r_x - r) / h, (r_y - r) / h]);

    while evals < MAX_EVALS {
        let step = jac
            .lu()
            .solve(&(-r))
            .ok_or_else(|| Error::Solver("singular translation Jacobian".into()))?;
        let e_new = e + step;
        let (r_new, _) = residual_at(e_new)?;
        evals += 1;
        // Broyden update.
        let dr = r_new - r;
        let de = e_new - e;
        let denom = de.norm_squared();
        if denom > 0.0 {
            jac += (dr - jac * de) * de.transpose() / denom;
        }
        e = e_new;
        r = r_new;
        if r.norm() <= tol * scale {
            return Ok((mesh.translate(e), e));
        }
    }
    Err(Error::Solver(format!(
        "translation step did not converge in {MAX_EVALS} solves; last residual {:.3e}",
        r.norm()
    )))
}

/// Interior angle of the boundary at `vertex`, measured between its two
/// adjacent boundary edges.
pub fn corner_angle(mesh: &TriangleMesh, vertex: usize) -> Result<f64> {
    if vertex >= mesh.n_vertices() || !mesh.is_boundary_vertex[vertex] {
        return Err(Error::InvalidParameter(format!(
            "vertex {vertex} is not a boundary vertex"
        )));
    }
    let mut prev = None;
    let mut next = None;
    for be in &mesh.boundary_edges {
        if be.directed[1] == vertex {
            prev = Some(be.directed[0]);
        }
        if be.directed[0] == vertex {
            next = Some(be.directed[1]);
        }
    }
    let (p, n) = (prev.expect("boundary loop"), next.expect("boundary loop"));
    let vp = mesh.vertices[p] - mesh.vertices[vertex];
    let vn = mesh.vertices[n] - mesh.vertices[vertex];
    // Interior lies to the left of the CCW traversal p -> vertex -> n.
    let cross = vn.x * vp.y - vn.y * vp.x;
    let angle = cross.atan2(vn.dot(&vp));
    Ok(if angle < 0.0 {
        angle + 2.0 * std::f64::consts::PI
    } else {
        angle
    })
}

/// Runs the descent until convergence, mesh degeneracy, line-search
/// failure or the iteration cap. Recoverable incidents are noted in the
/// report; hard solver failures abort with an error.
pub fn optimize(
    initial: &TriangleMesh,
    spec: &ProblemSpec,
    config: &OptimizerConfig,
) -> Result<(IterationReport, TriangleMesh)> {
    let mut mesh = initial.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut notes = Vec::new();
    let mut termination = Termination::MaxIters;
    let mut eta_history: Vec<f64> = Vec::new();

    for iter in 0..config.max_outer_iters {
        let quality = mesh.quality();
        if quality.min_signed_area <= 0.0 || quality.min_angle < config.min_angle_floor {
            termination = Termination::DegenerateMesh;
            break;
        }
        if config.enable_translation_step {
            match translation_step(&mesh, spec, config.translation_tol) {
                Ok((shifted, offset)) => {
                    if offset.norm() > 0.0 {
                        mesh = shifted;
                    }
                }
                Err(err) => notes.push(format!("iteration {iter}: translation step: {err}")),
            }
        }

        let u = solve_state(&mesh, spec)?;
        let y = solve_adjoint(&mesh, spec, &u)?;
        let j = evaluate_j(&mesh, spec, &u);
        let k_field = assemble_shape_tensor_field(&mesh, &u, &y);
        let rhs = assemble_constraint_rhs(&mesh, spec, &u, &y);
        let sol = solve_p(&mesh, &k_field, &rhs, config.p, &config.lms)?;
        if !sol.converged {
            notes.push(format!(
                "iteration {iter}: inner iteration stopped at {} steps without meeting tolerance",
                sol.iterations
            ));
        }
        let rec = reconstruct_deformation(&mesh, &sol, &k_field, config.p, config.lms.eps_rel);
        if rec.fallback_elements > 0 {
            notes.push(format!(
                "iteration {iter}: gradient fit fell back to the mean on {} elements",
                rec.fallback_elements
            ));
        }
        eta_history.push(sol.eta);
        let mut record = IterationRecord {
            iter,
            j,
            eta: sol.eta,
            alpha: 0.0,
            min_angle: quality.min_angle,
            barycenter: mesh.barycenter(),
        };

        let n = eta_history.len();
        let stagnated = n >= 4
            && (1..=3).all(|i| {
                let (a, b) = (eta_history[n - i - 1], eta_history[n - i]);
                (a - b).abs() <= config.eta_rel_stop * b.max(1e-300)
            });
        if stagnated {
            records.push(record);
            termination = Termination::Converged;
            break;
        }

        match line_search(
            &mesh,
            spec,
            &rec.field.values,
            (config.k_min, config.k_max),
            j,
            config.min_angle_floor,
        )? {
            LineSearchOutcome::Accepted {
                alpha,
                j_new: _,
                mesh: next,
            } => {
                record.alpha = alpha;
                records.push(record);
                mesh = next;
            }
            LineSearchOutcome::NoImprovement => {
                records.push(record);
                // No step helps: converged when the estimator has already
                // dropped well below its starting value, otherwise the
                // search genuinely failed.
                termination = if sol.eta <= 0.5 * eta_history[0] {
                    Termination::Converged
                } else {
                    Termination::LineSearchFailed
                };
                break;
            }
            LineSearchOutcome::AllDegenerate => {
                records.push(record);
                termination = Termination::DegenerateMesh;
                break;
            }
        }
    }

    Ok((
        IterationReport {
            records,
            termination,
            notes,
        },
        mesh,
    ))
}
