//! Gauss rules on the unit interval and collapsed rules on the reference
//! triangle `(0,0), (1,0), (0,1)`.

use std::f64::consts::PI;

/// Rule on `[0, 1]`; weights sum to 1.
#[derive(Clone, Debug)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Rule on the reference triangle; weights sum to 1/2.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// the Legendre recurrence.
fn gauss_legendre_symmetric(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Jacobi rule for weight `(1 - x)` on `[-1, 1]`, computed from the
/// Golub-Welsch free Newton iteration on the Jacobi polynomial `P_n^(1,0)`.
fn gauss_jacobi_10(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Jacobi polynomials with alpha = 1, beta = 0 via the three-term recurrence.
    let eval = |z: f64| -> (f64, f64) {
        let (a, b) = (1.0f64, 0.0f64);
        let mut p0 = 1.0;
        let mut p1 = 0.5 * (a - b + (a + b + 2.0) * z);
        if n == 0 {
            return (1.0, 0.0);
        }
        let mut d0 = 0.0;
        let mut d1 = 0.5 * (a + b + 2.0);
        for j in 2..=n {
            let jf = j as f64;
            let c = 2.0 * jf + a + b;
            let a1 = 2.0 * jf * (jf + a + b) * (c - 2.0);
            let a2 = (c - 1.0) * (a * a - b * b);
            let a3 = (c - 2.0) * (c - 1.0) * c;
            let a4 = 2.0 * (jf + a - 1.0) * (jf + b - 1.0) * c;
            let p2 = ((a2 + a3 * z) * p1 - a4 * p0) / a1;
            let d2 = ((a2 + a3 * z) * d1 + a3 * p1 - a4 * d0) / a1;
            p0 = p1;
            p1 = p2;
            d0 = d1;
            d1 = d2;
        }
        (p1, d1)
    };
    let mut x: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess, deflated against found roots.
        let mut z = -(PI * (2.0 * i as f64 + 1.0) / (2.0 * n as f64)).cos();
        for _ in 0..200 {
            let (p, d) = eval(z);
            let defl: f64 = x.iter().map(|&r| 1.0 / (z - r)).sum();
            let dz = p / (d - p * defl);
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x.push(z);
    }
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Weights from the exactness conditions: solve the small Vandermonde
    // system in Legendre moments of (1 - x).
    let w = weights_from_moments(&x, |m| {
        // integral of (1 - x) x^m over [-1, 1]
        let mf = m as f64;
        let even = if m % 2 == 0 { 2.0 / (mf + 1.0) } else { 0.0 };
        let odd = if m % 2 == 1 { 2.0 / (mf + 2.0) } else { 0.0 };
        even - odd
    });
    (x, w)
}

fn weights_from_moments(x: &[f64], moment: impl Fn(usize) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut v = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut rhs = nalgebra::DVector::<f64>::zeros(n);
    for m in 0..n {
        // Legendre rows keep the system well conditioned.
        for (j, &xj) in x.iter().enumerate() {
            v[(m, j)] = legendre_with_derivative(m, xj).0;
        }
        // moment of (1-x) P_m from monomial moments
        let coeffs = legendre_monomial_coeffs(m);
        rhs[m] = coeffs.iter().enumerate().map(|(p, c)| c * moment(p)).sum();
    }
    let sol = v.lu().solve(&rhs).expect("nonsingular Vandermonde system");
    sol.iter().copied().collect()
}

fn legendre_monomial_coeffs(m: usize) -> Vec<f64> {
    let mut p0 = vec![1.0];
    if m == 0 {
        return p0;
    }
    let mut p1 = vec![0.0, 1.0];
    for j in 2..=m {
        let mut p2 = vec![0.0; j + 1];
        for (i, c) in p1.iter().enumerate() {
            p2[i + 1] += (2 * j - 1) as f64 * c / j as f64;
        }
        for (i, c) in p0.iter().enumerate() {
            p2[i] -= (j - 1) as f64 * c / j as f64;
        }
        p0 = p1;
        p1 = p2;
    }
    p1
}

impl LineRule {
    /// Gauss rule exact for polynomials of degree `degree`.
    pub fn gauss(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let (x, w) = gauss_legendre_symmetric(n);
        Self {
            points: x.iter().map(|&z| 0.5 * (z + 1.0)).collect(),
            weights: w.iter().map(|&wi| 0.5 * wi).collect(),
            degree: 2 * n - 1,
        }
    }
}

impl QuadratureRule {
    /// Collapsed (Duffy) rule exact for polynomials of total degree `degree`;
    /// all weights are positive.
    pub fn triangle(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let (xa, wa) = gauss_jacobi_10(n);
        let (xb, wb) = gauss_legendre_symmetric(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (i, &a) in xa.iter().enumerate() {
            // a runs along the collapsed direction carrying the (1 - a) Jacobian.
            let r = 0.5 * (1.0 + a);
            for (j, &b) in xb.iter().enumerate() {
                let s = 0.5 * (1.0 + b);
                points.push([r, (1.0 - r) * s]);
                weights.push(wa[i] * wb[j] / 8.0);
            }
        }
        Self {
            points,
            weights,
            degree: 2 * n - 1,
        }
    }
}

/// Shifted Legendre polynomial `L_m` on `[0, 1]` with `L_m(1) = 1`.
pub fn shifted_legendre(m: usize, s: f64) -> f64 {
    legendre_with_derivative(m, 2.0 * s - 1.0).0
}

/// All `L_0..=L_n` at `s`.
pub fn shifted_legendre_all(n: usize, s: f64) -> Vec<f64> {
    let z = 2.0 * s - 1.0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(z);
    }
    for j in 2..=n {
        let v = ((2 * j - 1) as f64 * z * out[j - 1] - (j - 1) as f64 * out[j - 2]) / j as f64;
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    #[test]
    fn line_rules_are_exact() {
        for deg in 0..=25 {
            let r = LineRule::gauss(deg);
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for p in 0..=deg {
                let q: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "deg {deg} p {p}");
            }
        }
    }

    #[test]
    fn triangle_rules_are_exact_on_monomials() {
        for deg in 0..=22 {
            let r = QuadratureRule::triangle(deg);
            assert!(r.degree >= deg);
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for a in 0..=deg {
                for b in 0..=deg - a {
                    let q: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    assert!((q - exact).abs() < 1e-14 * (1.0 + exact.abs()), "deg {deg} a {a} b {b}");
                }
            }
        }
    }

    #[test]
    fn shifted_legendre_orthogonality() {
        let r = LineRule::gauss(20);
        for m in 0..6 {
            for n in 0..6 {
                let q: f64 = r
                    .points
                    .iter()
                    .zip(&r.weights)
                    .map(|(&s, w)| w * shifted_legendre(m, s) * shifted_legendre(n, s))
                    .sum();
                let exact = if m == n { 1.0 / (2 * m + 1) as f64 } else { 0.0 };
                assert!((q - exact).abs() < 1e-14);
            }
            let all = shifted_legendre_all(5, 0.3);
            assert!((all[m] - shifted_legendre(m, 0.3)).abs() < 1e-15);
        }
    }
}
