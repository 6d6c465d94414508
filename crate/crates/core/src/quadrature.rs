//! Quadrature rules on the reference triangle and on edges.

use crate::scalar::Real;

/// Rule on a triangle in barycentric coordinates. Weights sum to one and are
/// multiplied by the triangle area at use sites.
#[derive(Debug, Clone)]
pub struct TriangleRule<T> {
    pub points: Vec<[T; 3]>,
    pub weights: Vec<T>,
}

impl<T: Real> TriangleRule<T> {
    /// Seven-point symmetric rule, exact for polynomials of total degree 5.
    pub fn degree5() -> Self {
        let s15 = T::lit(15.0).sqrt();
        let one = T::one();
        let two = T::lit(2.0);
        let third = one / T::lit(3.0);
        let a1 = (T::lit(6.0) - s15) / T::lit(21.0);
        let a2 = (T::lit(6.0) + s15) / T::lit(21.0);
        let w1 = (T::lit(155.0) - s15) / T::lit(1200.0);
        let w2 = (T::lit(155.0) + s15) / T::lit(1200.0);
        let b1 = one - two * a1;
        let b2 = one - two * a2;
        Self {
            points: vec![
                [third, third, third],
                [a1, a1, b1],
                [a1, b1, a1],
                [b1, a1, a1],
                [a2, a2, b2],
                [a2, b2, a2],
                [b2, a2, a2],
            ],
            weights: vec![T::lit(9.0) / T::lit(40.0), w1, w1, w1, w2, w2, w2],
        }
    }

    /// Collapsed Gauss (Duffy) rule with `n` points per direction, exact for
    /// degree `2n - 2` or better. Used as an independent high-order oracle.
    pub fn collapsed_gauss(n: usize) -> Self {
        let (x, w) = gauss_legendre_unit::<T>(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        let two = T::lit(2.0);
        for i in 0..n {
            for j in 0..n {
                // (u, v) in the unit square mapped to the triangle by s = u, t = v(1 - u).
                let s = x[i];
                let t = x[j] * (T::one() - x[i]);
                points.push([T::one() - s - t, s, t]);
                // Jacobian (1 - u), normalized by the reference area 1/2.
                weights.push(two * w[i] * w[j] * (T::one() - x[i]));
            }
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1);
    // Newton iteration on the Legendre polynomial in f64, then lifted.
    let mut x = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = T::lit(0.5 * (1.0 - z));
        w[i] = T::lit(0.5 * wi);
    }
    (x, w)
}

/// Three-point Gauss rule on `[0, 1]`, exact for degree 5.
pub fn edge_rule<T: Real>() -> (Vec<T>, Vec<T>) {
    let half = T::lit(0.5);
    let d = (T::lit(3.0) / T::lit(5.0)).sqrt() * half;
    (
        vec![half - d, half, half + d],
        vec![T::lit(5.0 / 18.0), T::lit(8.0 / 18.0), T::lit(5.0 / 18.0)],
    )
}
