//! Shared quadrature rules.
//!
//! All area integrals in the crate use one fixed symmetric 6-point rule,
//! exact for polynomials up to total degree 4. Boundary integrals use the
//! edge midpoint rule.

/// Barycentric coordinates and normalized weights of the symmetric 6-point
/// degree-4 triangle rule. Weights sum to 1; multiply by the triangle area.
pub const TRI6: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.445_948_490_915_964_89;
    const A2: f64 = 0.091_576_213_509_770_743;
    const W1: f64 = 0.223_381_589_678_011_47;
    const W2: f64 = 0.109_951_743_655_321_87;
    [
        ([1.0 - 2.0 * A1, A1, A1], W1),
        ([A1, 1.0 - 2.0 * A1, A1], W1),
        ([A1, A1, 1.0 - 2.0 * A1], W1),
        ([1.0 - 2.0 * A2, A2, A2], W2),
        ([A2, 1.0 - 2.0 * A2, A2], W2),
        ([A2, A2, 1.0 - 2.0 * A2], W2),
    ]
};

/// Physical quadrature points of [`TRI6`] on the triangle `(p0, p1, p2)`.
pub fn tri6_points(
    p0: nalgebra::Vector2<f64>,
    p1: nalgebra::Vector2<f64>,
    p2: nalgebra::Vector2<f64>,
) -> [(nalgebra::Vector2<f64>, f64); 6] {
    TRI6.map(|(l, w)| (p0 * l[0] + p1 * l[1] + p2 * l[2], w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn monomial_integral_unit_triangle(i: u32, j: u32) -> f64 {
        // ∫_T x^i y^j over the reference triangle {x,y ≥ 0, x+y ≤ 1}
        // equals i! j! / (i+j+2)!.
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>().max(1.0);
        fact(i) * fact(j) / fact(i + j + 2)
    }

    #[test]
    fn tri6_exact_to_degree_four() {
        let (p0, p1, p2) = (
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        );
        let area = 0.5;
        for i in 0..=4u32 {
            for j in 0..=(4 - i) {
                let approx: f64 = tri6_points(p0, p1, p2)
                    .iter()
                    .map(|(x, w)| w * area * x[0].powi(i as i32) * x[1].powi(j as i32))
                    .sum();
                let exact = monomial_integral_unit_triangle(i, j);
                assert!(
                    (approx - exact).abs() <= 1e-15,
                    "monomial x^{i} y^{j}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn tri6_not_exact_beyond_degree_four() {
        let (p0, p1, p2) = (
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        );
        let approx: f64 = tri6_points(p0, p1, p2)
            .iter()
            .map(|(x, w)| w * 0.5 * x[0].powi(5))
            .sum();
        let exact = monomial_integral_unit_triangle(5, 0);
        assert!((approx - exact).abs() > 1e-6);
    }

    #[test]
    fn tri6_weights_sum_to_one() {
        let total: f64 = TRI6.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
