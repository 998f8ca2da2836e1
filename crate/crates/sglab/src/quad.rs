//! Gauss–Legendre quadrature helpers.

use std::f64::consts::PI;

/// Nodes and weights of the n-point Gauss–Legendre rule on [−1, 1]
/// (Newton iteration on P_n from the Chebyshev initial guesses).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
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
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A reusable composite rule: `panels` equal sub-intervals of [a, b], each
/// with an `order`-point Gauss–Legendre rule.
pub fn composite_nodes(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

/// ∫_a^b f by a composite Gauss–Legendre rule.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    composite_nodes(a, b, panels, order)
        .into_iter()
        .map(|(x, w)| w * f(x))
        .sum()
}

/// ∫_a^b f on a geometrically graded mesh clustered at `a` (for integrable
/// endpoint singularities). `levels` dyadic shells down to (b−a)·2^{−levels}.
pub fn integrate_graded(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    levels: usize,
    order: usize,
) -> f64 {
    let (x, w) = gauss_legendre(order);
    let len = b - a;
    let mut total = 0.0;
    let mut hi = len;
    for _ in 0..levels {
        let lo = hi * 0.5;
        let h = hi - lo;
        for (xi, wi) in x.iter().zip(&w) {
            total += 0.5 * h * wi * f(a + lo + 0.5 * h * (xi + 1.0));
        }
        hi = lo;
    }
    // innermost cell [a, a + hi]
    for (xi, wi) in x.iter().zip(&w) {
        total += 0.5 * hi * wi * f(a + 0.5 * hi * (xi + 1.0));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn graded_rule_handles_endpoint_singularity() {
        // the only loss is the innermost cell, of width 2^-levels, whose
        // share 2·2^{-levels/2} is integrated to a few per cent
        let err = |levels| (integrate_graded(|x| x.powf(-0.5), 0.0, 1.0, levels, 12) - 2.0).abs();
        let (e40, e60) = (err(40), err(60));
        assert!(e40 < 1e-7, "{e40}");
        assert!(e60 < 1e-10, "{e60}");
        assert!(e40 / e60 > 500.0, "{e40} vs {e60}");
    }
}
