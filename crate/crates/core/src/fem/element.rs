//! P2 and P1 Lagrange shape functions on affine triangles.

use crate::mesh::signed_area;
use crate::scalar::Real;

/// Local P2 node order: the three vertices, then the midpoints of edges
/// `(0,1)`, `(1,2)`, `(2,0)`.
pub const P2_LOCAL_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry<T> {
    pub vertices: [[T; 2]; 3],
    pub area: T,
    /// Constant gradients of the barycentric coordinates.
    pub grad_lambda: [[T; 2]; 3],
}

impl<T: Real> ElementGeometry<T> {
    pub fn new(vertices: [[T; 2]; 3]) -> Self {
        let area = signed_area(vertices);
        let two_a = area + area;
        let [a, b, c] = vertices;
        let grad_lambda = [
            [(b[1] - c[1]) / two_a, (c[0] - b[0]) / two_a],
            [(c[1] - a[1]) / two_a, (a[0] - c[0]) / two_a],
            [(a[1] - b[1]) / two_a, (b[0] - a[0]) / two_a],
        ];
        Self {
            vertices,
            area,
            grad_lambda,
        }
    }

    /// Physical point for barycentric coordinates `l`.
    pub fn point(&self, l: [T; 3]) -> [T; 2] {
        let [a, b, c] = self.vertices;
        [
            l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
            l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
        ]
    }

    /// Barycentric coordinates of a physical point.
    pub fn barycentric(&self, p: [T; 2]) -> [T; 3] {
        let [a, b, c] = self.vertices;
        let l1 = signed_area([a, p, c]) / self.area;
        let l2 = signed_area([a, b, p]) / self.area;
        [T::one() - l1 - l2, l1, l2]
    }

    /// Gradients of the six P2 shape functions at barycentric point `l`.
    pub fn p2_gradients(&self, l: [T; 3]) -> [[T; 2]; 6] {
        let g = &self.grad_lambda;
        let four = T::lit(4.0);
        let mut out = [[T::zero(); 2]; 6];
        for i in 0..3 {
            let s = four * l[i] - T::one();
            out[i] = [s * g[i][0], s * g[i][1]];
        }
        for (k, [i, j]) in P2_LOCAL_EDGES.into_iter().enumerate() {
            out[3 + k] = [
                four * (l[i] * g[j][0] + l[j] * g[i][0]),
                four * (l[i] * g[j][1] + l[j] * g[i][1]),
            ];
        }
        out
    }
}

/// Values of the six P2 shape functions at barycentric point `l`.
pub fn p2_values<T: Real>(l: [T; 3]) -> [T; 6] {
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    [
        l[0] * (two * l[0] - T::one()),
        l[1] * (two * l[1] - T::one()),
        l[2] * (two * l[2] - T::one()),
        four * l[0] * l[1],
        four * l[1] * l[2],
        four * l[2] * l[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes() -> [[f64; 3]; 6] {
        [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ]
    }

    #[test]
    fn p2_basis_is_nodal_and_partitions_unity() {
        for (i, l) in nodes().into_iter().enumerate() {
            let v = p2_values(l);
            for (j, &vj) in v.iter().enumerate() {
                assert!((vj - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
        let v = p2_values([0.2, 0.3, 0.5]);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn p2_gradients_match_finite_differences() {
        let geom = ElementGeometry::<f64>::new([[0.1, 0.2], [1.3, 0.1], [0.4, 0.9]]);
        let p = geom.point([0.2, 0.3, 0.5]);
        let grads = geom.p2_gradients([0.2, 0.3, 0.5]);
        let h = 1e-6;
        for d in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[d] += h;
            pm[d] -= h;
            let vp = p2_values(geom.barycentric(pp));
            let vm = p2_values(geom.barycentric(pm));
            for i in 0..6 {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - grads[i][d]).abs() < 1e-8, "shape {i} dir {d}");
            }
        }
    }
}
