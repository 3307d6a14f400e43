//! Quadrature rules on triangles (barycentric points, weights summing to one)
//! and on edges (parameter in `[0, 1]`, weights summing to one).

const A1: f64 = 0.445_948_490_915_965;
const B1: f64 = 1.0 - 2.0 * A1;
const W1: f64 = 0.223_381_589_678_011;
const A2: f64 = 0.091_576_213_509_771;
const B2: f64 = 1.0 - 2.0 * A2;
const W2: f64 = 0.109_951_743_655_322;

/// Six-point rule, exact for polynomials of degree four.
pub const TRI6: [([f64; 3], f64); 6] = [
    ([A1, A1, B1], W1),
    ([A1, B1, A1], W1),
    ([B1, A1, A1], W1),
    ([A2, A2, B2], W2),
    ([A2, B2, A2], W2),
    ([B2, A2, A2], W2),
];

/// Edge-midpoint rule, exact for quadratics.
pub const TRI_MID: [([f64; 3], f64); 3] = [
    ([0.0, 0.5, 0.5], 1.0 / 3.0),
    ([0.5, 0.0, 0.5], 1.0 / 3.0),
    ([0.5, 0.5, 0.0], 1.0 / 3.0),
];

const G2: f64 = 0.211_324_865_405_187_1; // (1 - 1/√3)/2

/// Two-point Gauss rule on `[0, 1]`, exact for cubics.
pub const GAUSS2: [(f64, f64); 2] = [(G2, 0.5), (1.0 - G2, 0.5)];

const G3: f64 = 0.112_701_665_379_258_3; // (1 - √(3/5))/2

/// Three-point Gauss rule on `[0, 1]`, exact for quintics.
pub const GAUSS3: [(f64, f64); 3] = [(G3, 5.0 / 18.0), (0.5, 8.0 / 18.0), (1.0 - G3, 5.0 / 18.0)];

#[cfg(test)]
mod tests {
    use super::*;

    // ∫_T λ0^a λ1^b λ2^c = 2|T| a! b! c! / (a+b+c+2)!
    fn exact_monomial(a: u32, b: u32, c: u32) -> f64 {
        let f = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        2.0 * f(a) * f(b) * f(c) / f(a + b + c + 2)
    }

    #[test]
    fn tri6_exact_to_degree_four() {
        for a in 0..=4 {
            for b in 0..=(4 - a) {
                for c in 0..=(4 - a - b) {
                    let q: f64 = TRI6
                        .iter()
                        .map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32))
                        .sum();
                    assert!((q - exact_monomial(a, b, c)).abs() < 1e-13, "{a} {b} {c}");
                }
            }
        }
        let s: f64 = TRI6.iter().map(|(_, w)| w).sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn midpoint_rule_exact_for_quadratics() {
        for (a, b, c) in [(2, 0, 0), (1, 1, 0), (0, 1, 1), (1, 0, 0)] {
            let q: f64 = TRI_MID
                .iter()
                .map(|(l, w)| w * l[0].powi(a) * l[1].powi(b) * l[2].powi(c))
                .sum();
            assert!((q - exact_monomial(a as u32, b as u32, c as u32)).abs() < 1e-15);
        }
    }

    #[test]
    fn gauss_rules() {
        for p in 0..=5 {
            let exact = 1.0 / (p as f64 + 1.0);
            let q3: f64 = GAUSS3.iter().map(|(t, w)| w * t.powi(p)).sum();
            assert!((q3 - exact).abs() < 1e-14);
            if p <= 3 {
                let q2: f64 = GAUSS2.iter().map(|(t, w)| w * t.powi(p)).sum();
                assert!((q2 - exact).abs() < 1e-14);
            }
        }
    }
}
