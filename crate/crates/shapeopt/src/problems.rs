//! Benchmark problem definitions and the closed-form disk solutions used
//! as oracles throughout the test suite.
//!
//! All three benchmarks share the objective integrand `j(u) = u/2`. The
//! first has a known optimal shape, the disk of radius √2, on which the
//! state, adjoint, shape tensor, functional value and stationarity
//! distance are all available in closed form.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

use crate::{Error, Result};

type PointFn = Arc<dyn Fn(Vector2<f64>) -> f64 + Send + Sync>;
type ValueFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A shape-optimization problem instance: the source term of the state
/// equation and the objective integrand with its derivative.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    f: PointFn,
    j: ValueFn,
    j_prime: ValueFn,
    /// True when the concentric-disk closed forms apply to this problem.
    pub has_analytic_disk: bool,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("has_analytic_disk", &self.has_analytic_disk)
            .finish()
    }
}

impl ProblemSpec {
    /// Builds a spec, verifying by central differences that `j_prime`
    /// matches the derivative of `j` at a few sample values.
    pub fn new(
        name: impl Into<String>,
        f: PointFn,
        j: ValueFn,
        j_prime: ValueFn,
        has_analytic_disk: bool,
    ) -> Result<Self> {
        let spec = ProblemSpec {
            name: name.into(),
            f,
            j,
            j_prime,
            has_analytic_disk,
        };
        let h = 1e-5;
        for u in [-2.0, -0.3, 0.0, 0.7, 1.9] {
            let fd = ((spec.j)(u + h) - (spec.j)(u - h)) / (2.0 * h);
            let scale = 1.0 + fd.abs();
            if ((spec.j_prime)(u) - fd).abs() > 1e-6 * scale {
                return Err(Error::InvalidParameter(format!(
                    "j_prime inconsistent with j at u = {u}"
                )));
            }
        }
        Ok(spec)
    }

    pub fn f(&self, x: Vector2<f64>) -> f64 {
        (self.f)(x)
    }

    pub fn j(&self, u: f64) -> f64 {
        (self.j)(u)
    }

    pub fn j_prime(&self, u: f64) -> f64 {
        (self.j_prime)(u)
    }

    /// The same problem posed on a translated domain: the new source is
    /// `x ↦ f(x - offset)`.
    pub fn translated(&self, offset: Vector2<f64>) -> ProblemSpec {
        let f = self.f.clone();
        ProblemSpec {
            name: format!("{}+offset", self.name),
            f: Arc::new(move |x| f(x - offset)),
            j: self.j.clone(),
            j_prime: self.j_prime.clone(),
            has_analytic_disk: false,
        }
    }
}

fn half_u() -> (ValueFn, ValueFn) {
    (Arc::new(|u| 0.5 * u), Arc::new(|_| 0.5))
}

/// Source `f = 1/2 - 1_D` (indicator of the open unit disk); the optimal
/// shape is the disk of radius √2 centered at the origin.
pub fn example1_spec() -> ProblemSpec {
    let (j, jp) = half_u();
    ProblemSpec::new(
        "example1",
        Arc::new(|x: Vector2<f64>| if x.norm() < 1.0 { -0.5 } else { 0.5 }),
        j,
        jp,
        true,
    )
    .expect("consistent by construction")
}

/// Ten Gaussian bumps arranged on two rings; the optimal shape is a
/// non-convex "gingerbread man".
pub fn example2_spec() -> ProblemSpec {
    let (j, jp) = half_u();
    let yk: Vec<Vector2<f64>> = (1..=5)
        .map(|i| {
            let phi = (2.0 * i as f64 + 1.0) * std::f64::consts::PI / 5.0;
            Vector2::new(phi.sin(), phi.cos())
        })
        .collect();
    let zk: Vec<Vector2<f64>> = (1..=5)
        .map(|i| {
            let phi = 2.0 * i as f64 * std::f64::consts::PI / 5.0;
            Vector2::new(1.2 * phi.sin(), 1.2 * phi.cos())
        })
        .collect();
    ProblemSpec::new(
        "gingerbread",
        Arc::new(move |x: Vector2<f64>| {
            let mut v = -0.5 + 0.8 * x.norm_squared();
            for y in &yk {
                v += 2.0 * (-8.0 * (x - y).norm_squared()).exp();
            }
            for z in &zk {
                v -= (-8.0 * (x - z).norm_squared()).exp();
            }
            v
        }),
        j,
        jp,
        false,
    )
    .expect("consistent by construction")
}

/// A quartic source whose optimal shape is kidney-like with an unknown
/// barycenter, exercising the translation half-step.
pub fn example3_spec() -> ProblemSpec {
    let (j, jp) = half_u();
    ProblemSpec::new(
        "kidney",
        Arc::new(|x: Vector2<f64>| {
            let t = x.x + 0.4 - x.y * x.y;
            2.5 * t * t + x.norm_squared() - 1.0
        }),
        j,
        jp,
        false,
    )
    .expect("consistent by construction")
}

/// Looks a problem up by registry name.
pub fn problem_by_name(name: &str) -> Result<ProblemSpec> {
    match name {
        // "polygon" is the stationarity study on polygonal shapes; it uses
        // the same source as example1.
        "example1" | "polygon" => Ok(example1_spec()),
        "gingerbread" | "example2" => Ok(example2_spec()),
        "kidney" | "example3" => Ok(example3_spec()),
        other => Err(Error::InvalidParameter(format!(
            "unknown problem '{other}' (expected example1 | gingerbread | kidney | polygon)"
        ))),
    }
}

/// Closed-form quantities on the concentric disk `D_R` for the example-1
/// source, valid for `R > 1` and `|x| < R`.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticDiskSolution {
    pub radius: f64,
}

impl AnalyticDiskSolution {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "disk formulas require R > 1, got {radius}"
            )));
        }
        Ok(AnalyticDiskSolution { radius })
    }

    fn check_inside(&self, x: Vector2<f64>) -> Result<()> {
        if x.norm() >= self.radius {
            return Err(Error::OutsideDomain(format!(
                "|x| = {} outside disk of radius {}",
                x.norm(),
                self.radius
            )));
        }
        Ok(())
    }

    /// State solution; two radial branches meeting at `|x| = 1`, the inner
    /// branch used for `|x| < 1`.
    pub fn u(&self, x: Vector2<f64>) -> Result<f64> {
        self.check_inside(x)?;
        let r2 = x.norm_squared();
        let rr = self.radius * self.radius;
        Ok(if r2 < 1.0 {
            (rr + r2) / 8.0 - 0.25 - 0.5 * self.radius.ln()
        } else {
            (rr - r2) / 8.0 + 0.5 * (x.norm().ln() - self.radius.ln())
        })
    }

    /// Adjoint solution `(|x|^2 - R^2)/8`.
    pub fn y(&self, x: Vector2<f64>) -> Result<f64> {
        self.check_inside(x)?;
        Ok((x.norm_squared() - self.radius * self.radius) / 8.0)
    }

    pub fn grad_u(&self, x: Vector2<f64>) -> Result<Vector2<f64>> {
        self.check_inside(x)?;
        Ok(if x.norm_squared() < 1.0 {
            0.25 * x
        } else {
            -0.25 * x + 0.5 * x / x.norm_squared()
        })
    }

    pub fn grad_y(&self, x: Vector2<f64>) -> Result<Vector2<f64>> {
        self.check_inside(x)?;
        Ok(0.25 * x)
    }

    /// The shape tensor of the two closed-form solutions.
    pub fn shape_tensor(&self, x: Vector2<f64>) -> Result<Matrix2<f64>> {
        self.check_inside(x)?;
        let r2 = x.norm_squared();
        let id = Matrix2::identity();
        let outer = x * x.transpose();
        Ok(if r2 < 1.0 {
            r2 / 16.0 * id - outer / 8.0
        } else {
            (0.125 - r2 / 16.0) * id - (0.25 / r2 - 0.125) * outer
        })
    }
}

/// `J(D_R) = (π/32) (R^4 - 4 R^2 + 2)`, minimized at `R = √2`.
pub fn analytic_j(radius: f64) -> f64 {
    let r2 = radius * radius;
    std::f64::consts::PI / 32.0 * (r2 * r2 - 4.0 * r2 + 2.0)
}

/// Stationarity distance of the disk:
/// `η_p(D_R) = |2 - R^2|/16 · √2 · (π R^2)^{1/p}`.
pub fn analytic_eta(radius: f64, p: f64) -> f64 {
    let r2 = radius * radius;
    (2.0 - r2).abs() / 16.0 * 2.0f64.sqrt() * (std::f64::consts::PI * r2).powf(1.0 / p)
}

/// Derivative of `J(D_R)` along the radial dilation field `χ = id`,
/// equal to `R · dJ/dR = (π/8) R^2 (R^2 - 2)`.
pub fn analytic_dilation_derivative(radius: f64) -> f64 {
    let r2 = radius * radius;
    std::f64::consts::PI / 8.0 * r2 * (r2 - 2.0)
}

/// Example-1 source evaluated through the branch rule used everywhere
/// (points with `|x| = 1` take the outer value).
pub fn example1_source(x: Vector2<f64>) -> f64 {
    if x.norm() < 1.0 {
        -0.5
    } else {
        0.5
    }
}
