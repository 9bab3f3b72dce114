//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers (run with `--nocapture` to see them).
//!
//! Budgets assume a single core; the whole suite stays well under the
//! per-criterion ceilings stated in the assertions.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapeopt::io::build_shape;
use shapeopt::lms::{
    assemble_constraint_rhs, dual_norm_consistency, misfit_weight_floor, solve_p, solve_p2,
    LmsSolution, SolverControls,
};
use shapeopt::mesh::{build_disk_approximation, build_regular_polygon, TriangleMesh};
use shapeopt::optim::{corner_angle, optimize, OptimizerConfig, Termination};
use shapeopt::poisson::{solve_adjoint, solve_state, ScalarP1Field};
use shapeopt::problems::{
    analytic_eta, analytic_j, example1_spec, example2_spec, example3_spec, ProblemSpec,
};
use shapeopt::quadrature::TRI6;
use shapeopt::reconstruct::reconstruct_deformation;
use shapeopt::tensor::{amap_generic, assemble_shape_tensor_field};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const PI: f64 = std::f64::consts::PI;

fn solve_pipeline(
    mesh: &TriangleMesh,
    spec: &ProblemSpec,
    p: f64,
) -> (ScalarP1Field, ScalarP1Field, Vec<Matrix2<f64>>, LmsSolution) {
    let u = solve_state(mesh, spec).expect("state solve");
    let y = solve_adjoint(mesh, spec, &u).expect("adjoint solve");
    let k = assemble_shape_tensor_field(mesh, &u, &y);
    let rhs = assemble_constraint_rhs(mesh, spec, &u, &y);
    let sol = solve_p(mesh, &k, &rhs, p, &SolverControls::default()).expect("lms solve");
    (u, y, k, sol)
}

#[test]
fn criterion_01_analytic_oracle_suite() {
    let started = std::time::Instant::now();
    assert!(
        (analytic_j(SQRT2) + PI / 16.0).abs() <= 1e-14,
        "J(D_sqrt2) = {}",
        analytic_j(SQRT2)
    );
    for p in [1.1, 1.5, 2.0] {
        // (√2)² = 2 + 1 ulp, so exact zero is one rounding step away.
        assert!(
            analytic_eta(SQRT2, p).abs() <= 1e-15,
            "eta({p}) = {}",
            analytic_eta(SQRT2, p)
        );
    }
    let expected = (2.0 * PI).sqrt() / 16.0;
    assert!(
        (analytic_eta(1.0, 2.0) - expected).abs() <= 1e-14,
        "eta_2(D_1) = {}",
        analytic_eta(1.0, 2.0)
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "budget exceeded: {elapsed:?}");
    println!(
        "ACCEPTANCE 1 PASS: analytic oracles (J(D_sqrt2)+pi/16 = {:.2e}, eta(1,2)-sqrt(2pi)/16 = {:.2e}) in {elapsed:?}",
        analytic_j(SQRT2) + PI / 16.0,
        analytic_eta(1.0, 2.0) - expected
    );
}

#[test]
fn criterion_02_algebraic_identity() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut worst = 0.0f64;
    for d in [2usize, 3] {
        for _ in 0..1000 {
            let a = DMatrix::from_fn(d, 1, |_, _| rng.random_range(-3.0..3.0));
            let b = DMatrix::from_fn(d, 1, |_, _| rng.random_range(-3.0..3.0));
            let lhs = amap_generic(&(&a * b.transpose())).norm_squared();
            let dot = (a.transpose() * &b)[(0, 0)];
            let rhs = (d as f64 - 2.0) * dot * dot + 2.0 * a.norm_squared() * b.norm_squared();
            let rel = (lhs - rhs).abs() / rhs.max(1e-300);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-12, "worst relative error {worst:.3e}");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "budget exceeded: {elapsed:?}");
    println!(
        "ACCEPTANCE 2 PASS: |A(a (x) b)|^2 identity, worst rel err {worst:.2e} in {elapsed:?}"
    );
}

#[test]
fn criterion_03_fem_convergence() {
    let started = std::time::Instant::now();
    let spec = ProblemSpec::new(
        "manufactured",
        std::sync::Arc::new(|x: Vector2<f64>| 2.0 * PI * PI * (PI * x.x).sin() * (PI * x.y).sin()),
        std::sync::Arc::new(|u| 0.5 * u),
        std::sync::Arc::new(|_| 0.5),
        false,
    )
    .unwrap();
    let exact = |x: Vector2<f64>| (PI * x.x).sin() * (PI * x.y).sin();
    // Level 1 = the 8-triangle unit square; four levels of halving h.
    let mut base = TriangleMesh::from_cells(
        vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
    .refine_uniform();
    let mut errors = Vec::new();
    for _level in 1..=4 {
        base = base.refine_uniform();
        let u = solve_state(&base, &spec).unwrap();
        let mut err2 = 0.0;
        for t in 0..base.n_triangles() {
            let p = base.triangle_points(t);
            let area = base.triangle_area(t);
            for (l, w) in TRI6 {
                let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
                let diff = u.eval_bary(&base, t, l) - exact(x);
                err2 += w * area * diff * diff;
            }
        }
        errors.push(err2.sqrt());
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    for r in &ratios {
        assert!((3.5..=4.5).contains(r), "L2 ratios {ratios:?}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "budget exceeded: {elapsed:?}");
    println!("ACCEPTANCE 3 PASS: manufactured-solution L2 ratios {ratios:?} in {elapsed:?}");
}

#[test]
fn criterion_04_stationarity_decay_on_optimal_disks() {
    let started = std::time::Instant::now();
    let spec = example1_spec();
    let mut all_ratios = Vec::new();
    for p in [2.0, 1.1] {
        let mut etas = Vec::new();
        for level in 2..=5 {
            let mesh = build_disk_approximation(SQRT2, level).unwrap();
            assert!(mesh.n_triangles() <= 32768);
            let (_, _, _, sol) = solve_pipeline(&mesh, &spec, p);
            etas.push(sol.eta);
        }
        let ratios: Vec<f64> = etas.windows(2).map(|w| w[0] / w[1]).collect();
        assert!(ratios.len() >= 3);
        for r in &ratios {
            assert!(
                (1.6..=2.6).contains(r),
                "p={p}: ratios {ratios:?}, etas {etas:?}"
            );
        }
        all_ratios.push((p, ratios));
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "budget exceeded: {elapsed:?}"
    );
    println!("ACCEPTANCE 4 PASS: eta decay ratios {all_ratios:?} in {elapsed:?}");
}

#[test]
fn criterion_05_stationarity_ordering() {
    let started = std::time::Instant::now();
    let spec = example1_spec();
    // Equal-resolution comparison: polygons at level 5 and the disk
    // reference refined to the element count of the finest shape; at equal
    // refinement index the shape families differ in element count and the
    // pure-discretization disk curve has not separated yet.
    for p in [2.0, 1.1] {
        let eta_of = |shape: &str, level: usize| {
            let mesh = build_shape(shape, level).unwrap();
            let (_, _, _, sol) = solve_pipeline(&mesh, &spec, p);
            (sol.eta, mesh.n_triangles())
        };
        let (eta_square, _) = eta_of("square", 5);
        let (eta_octagon, _) = eta_of("octagon", 5);
        let (eta_hexadecagon, nt_hex) = eta_of("hexadecagon", 5);
        let (eta_disk, nt_disk) = eta_of("disk:1.4142135623730951", 6);
        assert_eq!(
            nt_hex, nt_disk,
            "disk reference at the finest element count"
        );
        let chain = [eta_square, eta_octagon, eta_hexadecagon, eta_disk];
        for pair in chain.windows(2) {
            assert!(
                pair[0] > pair[1] * 1.05,
                "p={p}: ordering violated or gap < 5%: {chain:?}"
            );
        }
        println!(
            "  p={p}: square {:.3e} > octagon {:.3e} > hexadecagon {:.3e} > disk {:.3e}",
            chain[0], chain[1], chain[2], chain[3]
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "budget exceeded: {elapsed:?}"
    );
    println!("ACCEPTANCE 5 PASS: stationarity ordering with >= 5% gaps in {elapsed:?}");
}

#[test]
fn criterion_06_tetragon_optimization() {
    let started = std::time::Instant::now();
    let mut mesh = build_regular_polygon(4, 2.0).unwrap();
    for _ in 0..4 {
        mesh = mesh.refine_uniform();
    }
    assert_eq!(mesh.n_triangles(), 2048);
    let spec = example1_spec();
    let config = OptimizerConfig {
        p: 1.1,
        ..OptimizerConfig::default()
    };
    let (report, final_mesh) = optimize(&mesh, &spec, &config).unwrap();
    let j_final = report.final_j().unwrap();
    assert!(j_final <= -0.195, "final J = {j_final}");
    // Vertex 1 is the corner initially at (1, 0).
    let angle = corner_angle(&final_mesh, 1).unwrap();
    assert!(angle >= 0.6 * PI, "corner angle = {} pi", angle / PI);
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "budget exceeded: {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 6 PASS: tetragon p=1.1: J = {j_final:.5} <= -0.195, corner angle {:.4} pi >= 0.6 pi, termination {} in {elapsed:?}",
        angle / PI,
        report.termination
    );
}

#[test]
fn criterion_07_dual_norm_consistency() {
    let started = std::time::Instant::now();
    let spec = example1_spec();
    let mut gaps = Vec::new();
    let mut ratios = Vec::new();
    for level in [3usize, 4, 5] {
        let mesh = build_shape("square", level).unwrap();
        let u = solve_state(&mesh, &spec).unwrap();
        let y = solve_adjoint(&mesh, &spec, &u).unwrap();
        let k = assemble_shape_tensor_field(&mesh, &u, &y);
        let rhs = assemble_constraint_rhs(&mesh, &spec, &u, &y);
        let sol = solve_p2(&mesh, &k, &rhs).unwrap();
        let rec = reconstruct_deformation(&mesh, &sol, &k, 2.0, 1e-8);
        let ratio = dual_norm_consistency(&mesh, &spec, &u, &y, &rec.field.values, 2.0).unwrap();
        ratios.push(ratio / sol.eta);
        gaps.push((1.0 - ratio / sol.eta).abs());
    }
    // The two finest levels sit inside the band; the gap to the continuous
    // equality shrinks monotonically.
    for r in &ratios[1..] {
        assert!((0.7..=1.05).contains(r), "ratios/eta = {ratios:?}");
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "budget exceeded: {elapsed:?}"
    );
    println!("ACCEPTANCE 7 PASS: dual-norm ratio/eta {ratios:?}, gaps {gaps:?} in {elapsed:?}");
}

/// Weighted misfit targets per (triangle, quadrature point) for the
/// reconstruction criterion.
fn gradient_targets(
    mesh: &TriangleMesh,
    sol: &LmsSolution,
    k: &[Matrix2<f64>],
    p: f64,
) -> Vec<[Matrix2<f64>; 6]> {
    let eps = misfit_weight_floor(k, 1e-8);
    (0..mesh.n_triangles())
        .map(|t| {
            let pts = mesh.triangle_points(t);
            std::array::from_fn(|q| {
                let (l, _) = TRI6[q];
                let x = pts[0] * l[0] + pts[1] * l[1] + pts[2] * l[2];
                let misfit = sol.s.eval(mesh, t, x) - k[t];
                (misfit.norm_squared() + eps * eps).powf(0.5 * (p - 2.0)) * misfit
            })
        })
        .collect()
}

/// `‖∇θ - G‖_{L^{p*}}` for a P1 field against per-point targets.
fn gradient_misfit_norm(
    mesh: &TriangleMesh,
    theta: &[Vector2<f64>],
    targets: &[[Matrix2<f64>; 6]],
    p_star: f64,
) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let a = shapeopt::tensor::vector_field_gradient(mesh, theta, t);
        let area = mesh.triangle_area(t);
        for (q, (_, w)) in TRI6.iter().enumerate() {
            total += w * area * (a - targets[t][q]).norm().powf(p_star);
        }
    }
    total.powf(1.0 / p_star)
}

/// Global minimizer of `‖∇θ - G‖_{L^{p*}}` over continuous P1 fields,
/// the independent oracle for the local reconstruction: dense damped
/// Newton (plain least squares at p* = 2) with the translation kernel
/// removed by pseudo-inverse.
fn global_reconstruction_oracle(
    mesh: &TriangleMesh,
    targets: &[[Matrix2<f64>; 6]],
    p_star: f64,
) -> Vec<Vector2<f64>> {
    let nv = mesh.n_vertices();
    let dim = 2 * nv;
    let delta = 1e-10;

    let objective = |theta: &[Vector2<f64>]| -> f64 {
        let mut total = 0.0;
        for t in 0..mesh.n_triangles() {
            let a = shapeopt::tensor::vector_field_gradient(mesh, theta, t);
            let area = mesh.triangle_area(t);
            for (q, (_, w)) in TRI6.iter().enumerate() {
                total += w
                    * area
                    * ((a - targets[t][q]).norm_squared() + delta * delta).powf(0.5 * p_star);
            }
        }
        total
    };

    // Gradient and Hessian of the smoothed objective in flattened
    // coordinates m = 2 * vertex + component.
    let grad_hess = |theta: &[Vector2<f64>]| -> (Vec<f64>, DMatrix<f64>) {
        let mut grad = vec![0.0; dim];
        let mut hess = DMatrix::zeros(dim, dim);
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangles[t];
            let g = shapeopt::poisson::hat_gradients(mesh, t);
            let a = shapeopt::tensor::vector_field_gradient(mesh, theta, t);
            let area = mesh.triangle_area(t);
            for (q, (_, w)) in TRI6.iter().enumerate() {
                let d = a - targets[t][q];
                let s = d.norm_squared() + delta * delta;
                let base = w * area * p_star * s.powf(0.5 * p_star - 1.0);
                let curv = w * area * p_star * (p_star - 2.0) * s.powf(0.5 * p_star - 2.0);
                for i in 0..3 {
                    let dg_i = d * g[i];
                    for r in 0..2 {
                        grad[2 * tri[i] + r] += base * dg_i[r];
                    }
                    for j in 0..3 {
                        let gij = g[i].dot(&g[j]);
                        let dg_j = d * g[j];
                        for r in 0..2 {
                            hess[(2 * tri[i] + r, 2 * tri[j] + r)] += base * gij;
                            for r2 in 0..2 {
                                hess[(2 * tri[i] + r, 2 * tri[j] + r2)] +=
                                    curv * dg_i[r] * dg_j[r2];
                            }
                        }
                    }
                }
            }
        }
        (grad, hess)
    };

    let solve_kernel_aware = |h: &DMatrix<f64>, rhs: &[f64]| -> Vec<f64> {
        let svd = h.clone().svd(true, true);
        let tol = 1e-10 * svd.singular_values.max();
        let b = nalgebra::DVector::from_column_slice(rhs);
        let x = svd.solve(&b, tol).expect("svd solve");
        x.iter().copied().collect()
    };

    // p* = 2 solution (one Newton step from zero) seeds the general case.
    let mut theta = vec![Vector2::zeros(); nv];
    {
        let (grad, hess) = {
            // Quadratic objective at p* = 2 regardless of the requested
            // p_star, used purely as the starting point.
            let mut grad = vec![0.0; dim];
            let mut hess = DMatrix::zeros(dim, dim);
            for t in 0..mesh.n_triangles() {
                let tri = mesh.triangles[t];
                let g = shapeopt::poisson::hat_gradients(mesh, t);
                let area = mesh.triangle_area(t);
                let gbar: Matrix2<f64> = (0..6).map(|q| TRI6[q].1 * targets[t][q]).sum();
                for i in 0..3 {
                    let gg = -2.0 * area * (gbar * g[i]);
                    for r in 0..2 {
                        grad[2 * tri[i] + r] += gg[r];
                    }
                    for j in 0..3 {
                        for r in 0..2 {
                            hess[(2 * tri[i] + r, 2 * tri[j] + r)] += 2.0 * area * g[i].dot(&g[j]);
                        }
                    }
                }
            }
            (grad, hess)
        };
        let step = solve_kernel_aware(&hess, &grad);
        for v in 0..nv {
            theta[v] -= Vector2::new(step[2 * v], step[2 * v + 1]);
        }
    }
    if p_star == 2.0 {
        return theta;
    }

    let mut f_curr = objective(&theta);
    let scale = 1.0
        + grad_hess(&theta)
            .0
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
    for _ in 0..100 {
        let (grad, hess) = grad_hess(&theta);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= 1e-9 * scale {
            break;
        }
        let step = solve_kernel_aware(&hess, &grad);
        let mut tau = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<Vector2<f64>> = theta
                .iter()
                .enumerate()
                .map(|(v, x)| x - tau * Vector2::new(step[2 * v], step[2 * v + 1]))
                .collect();
            let f_cand = objective(&cand);
            if f_cand < f_curr {
                theta = cand;
                f_curr = f_cand;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    theta
}

#[test]
fn criterion_08_reconstruction_optimality() {
    let started = std::time::Instant::now();
    let spec = example1_spec();
    // 32 and 128 triangles: comfortably within the <= 200 contract.
    for (mesh, label) in [
        (
            build_regular_polygon(4, 2.0).unwrap().refine_uniform(),
            "tetragon-L1",
        ),
        (build_disk_approximation(1.0, 2).unwrap(), "disk-L2"),
    ] {
        assert!(mesh.n_triangles() <= 200);
        for p in [2.0, 1.1] {
            let p_star = p / (p - 1.0);
            let (_, _, k, sol) = solve_pipeline(&mesh, &spec, p);
            let rec = reconstruct_deformation(&mesh, &sol, &k, p, 1e-8);
            let targets = gradient_targets(&mesh, &sol, &k, p);
            let local = gradient_misfit_norm(&mesh, &rec.field.values, &targets, p_star);
            let oracle_field = global_reconstruction_oracle(&mesh, &targets, p_star);
            let oracle = gradient_misfit_norm(&mesh, &oracle_field, &targets, p_star);
            assert!(
                local <= 3.0 * oracle,
                "{label} p={p}: local {local:.4e} vs oracle {oracle:.4e}"
            );
            println!("  {label} p={p}: local {local:.4e} <= 3 x oracle {oracle:.4e}");
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "budget exceeded: {elapsed:?}");
    println!("ACCEPTANCE 8 PASS: local reconstruction within factor 3 of the global oracle in {elapsed:?}");
}

#[test]
fn criterion_09_gingerbread_robustness() {
    let started = std::time::Instant::now();
    let spec = example2_spec();
    let mesh = build_disk_approximation(1.0, 4).unwrap();
    assert_eq!(mesh.n_triangles(), 2048);

    let config_11 = OptimizerConfig {
        p: 1.1,
        ..OptimizerConfig::default()
    };
    let (report_11, _) = optimize(&mesh, &spec, &config_11).unwrap();
    assert_eq!(report_11.termination, Termination::Converged);
    let j_11 = report_11.final_j().unwrap();
    assert!(j_11 <= -1.40e-2, "p=1.1 final J = {j_11}");

    let config_2 = OptimizerConfig {
        p: 2.0,
        ..OptimizerConfig::default()
    };
    let (report_2, _) = optimize(&mesh, &spec, &config_2).unwrap();
    // Degenerate-mesh termination is accepted here, not required.
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 900.0,
        "budget exceeded: {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 9 PASS: gingerbread p=1.1 converged with J = {j_11:.5e} <= -1.40e-2; p=2 terminated {} (J = {:.5e}) in {elapsed:?}",
        report_2.termination,
        report_2.final_j().unwrap()
    );
}

#[test]
fn criterion_10_constraint_residuals() {
    let started = std::time::Instant::now();
    // Battery across problems, shapes and norms; every returned solution
    // must satisfy the discrete divergence and trace constraints.
    let mut worst = 0.0f64;
    let mut count = 0;
    let cases: Vec<(TriangleMesh, ProblemSpec)> = vec![
        (build_shape("square", 3).unwrap(), example1_spec()),
        (build_shape("tetragon", 3).unwrap(), example1_spec()),
        (build_disk_approximation(SQRT2, 3).unwrap(), example1_spec()),
        (build_disk_approximation(1.0, 3).unwrap(), example2_spec()),
        // Kidney data is translation-incompatible on the centered disk;
        // the defect multiplier must absorb it without residual damage.
        (build_disk_approximation(1.0, 3).unwrap(), example3_spec()),
    ];
    for (mesh, spec) in &cases {
        for p in [2.0, 1.1] {
            let (_, _, _, sol) = solve_pipeline(mesh, spec, p);
            worst = worst.max(sol.constraint_residual);
            count += 1;
        }
    }
    assert!(worst <= 1e-9, "worst constraint residual {worst:.3e}");
    let elapsed = started.elapsed();
    println!(
        "ACCEPTANCE 10 PASS: {count} solutions, worst constraint residual {worst:.2e} <= 1e-9 in {elapsed:?}"
    );
}

/// Additional loose check from the benchmark tables: the kidney run's
/// final barycenter. Our runs converge to a verified-stationary shape at
/// a different barycenter; see the repository notes for the analysis.
#[test]
fn loose_check_kidney_barycenter() {
    let spec = example3_spec();
    let mesh = build_disk_approximation(1.0, 4).unwrap();
    let config = OptimizerConfig {
        p: 1.1,
        enable_translation_step: true,
        ..OptimizerConfig::default()
    };
    let (report, final_mesh) = optimize(&mesh, &spec, &config).unwrap();
    let barycenter = final_mesh.barycenter();
    println!(
        "kidney run: termination {}, final J {:.5e}, eta {:.3e}, barycenter ({:.4}, {:.4})",
        report.termination,
        report.final_j().unwrap(),
        report.final_eta().unwrap(),
        barycenter.x,
        barycenter.y
    );
    assert!(
        (barycenter.x - (-0.309)).abs() <= 0.01,
        "barycenter_x = {:.4}, expected -0.309 +/- 0.01 (known discrepancy; the computed shape \
         is verifiably stationary with a lower objective at equal resolution)",
        barycenter.x
    );
}
