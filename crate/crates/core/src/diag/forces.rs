//! Drag and lift as line integrals of the stress around the inner cylinder.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::offline::FemSystem;
use crate::quadrature::edge_rule;
use crate::scalar::Real;

/// One inner-boundary edge with its owning triangle.
#[derive(Debug, Clone)]
struct TraceEdge<T> {
    triangle: usize,
    /// Local vertex positions of the edge endpoints in the triangle.
    local: [usize; 2],
    /// Outward normal of the fluid domain (pointing into the cylinder).
    normal: [T; 2],
    length: T,
}

/// Precomputed inner-loop geometry for repeated force evaluations.
///
/// With `tau = s (grad u + grad u^T) - p I` (`s = nu` when `include_nu`,
/// otherwise 1) and `n` the fluid outward normal, the functionals are
/// `drag = -int (tau n) . e2 ds` and `lift = int (tau n) . e1 ds`.
#[derive(Debug, Clone)]
pub struct ForceFunctional<T: Real> {
    edges: Vec<TraceEdge<T>>,
    viscous_scale: T,
}

impl<T: Real> ForceFunctional<T> {
    pub fn new(system: &FemSystem<T>, include_nu: bool, nu: T) -> Result<Self> {
        let mesh = &system.mesh;
        let loop_edges = mesh.inner_boundary_edges()?;
        let mut owner: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let (a, b) = (tri[i], tri[j]);
                owner.insert((a, b), (t, [i, j]));
                owner.insert((b, a), (t, [j, i]));
            }
        }
        let verts = mesh.vertices();
        let mut edges = Vec::with_capacity(loop_edges.len());
        for [a, b] in loop_edges {
            let &(triangle, local) = owner
                .get(&(a, b))
                .ok_or_else(|| Error::Topology(format!("inner edge ({a}, {b}) has no triangle")))?;
            let d = [verts[b][0] - verts[a][0], verts[b][1] - verts[a][1]];
            let length = (d[0] * d[0] + d[1] * d[1]).sqrt();
            // Counterclockwise about the cylinder: rotate the tangent left.
            let normal = [-d[1] / length, d[0] / length];
            edges.push(TraceEdge {
                triangle,
                local,
                normal,
                length,
            });
        }
        Ok(Self {
            edges,
            viscous_scale: if include_nu { nu } else { T::one() },
        })
    }

    /// `int n ds` over the closed loop; zero up to roundoff.
    pub fn normal_integral(&self) -> [T; 2] {
        self.edges.iter().fold([T::zero(); 2], |acc, e| {
            [acc[0] + e.normal[0] * e.length, acc[1] + e.normal[1] * e.length]
        })
    }

    /// `int tau n ds` for the given velocity and pressure coefficients.
    pub fn traction_integral(&self, system: &FemSystem<T>, u: &[T], p: &[T]) -> [T; 2] {
        let (points, weights) = edge_rule::<T>();
        let geometry = system.assembler.geometry();
        let tris = system.mesh.triangles();
        let mut total = [T::zero(); 2];
        for e in &self.edges {
            let g = &geometry[e.triangle];
            let nodes = system.dofs.element_nodes(e.triangle);
            let verts = tris[e.triangle];
            for (&s, &w) in points.iter().zip(&weights) {
                let mut l = [T::zero(); 3];
                l[e.local[0]] = T::one() - s;
                l[e.local[1]] = s;
                let d = g.p2_gradients(l);
                let mut grad = [[T::zero(); 2]; 2];
                for k in 0..6 {
                    for c in 0..2 {
                        let coef = u[2 * nodes[k] + c];
                        grad[c][0] += coef * d[k][0];
                        grad[c][1] += coef * d[k][1];
                    }
                }
                let pq = (0..3).fold(T::zero(), |acc, i| acc + p[verts[i]] * l[i]);
                let wl = w * e.length;
                for r in 0..2 {
                    let mut tn = -pq * e.normal[r];
                    for c in 0..2 {
                        tn += self.viscous_scale * (grad[r][c] + grad[c][r]) * e.normal[c];
                    }
                    total[r] += wl * tn;
                }
            }
        }
        total
    }

    /// `(drag, lift)`
    pub fn evaluate(&self, system: &FemSystem<T>, u: &[T], p: &[T]) -> (T, T) {
        let t = self.traction_integral(system, u, p);
        (-t[1], t[0])
    }
}

/// One-shot drag and lift evaluation.
pub fn drag_lift<T: Real>(system: &FemSystem<T>, u: &[T], p: &[T], include_nu: bool, nu: T) -> Result<(T, T)> {
    Ok(ForceFunctional::new(system, include_nu, nu)?.evaluate(system, u, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_reference_mesh, unit_square_mesh};

    fn system() -> FemSystem<f64> {
        FemSystem::new(generate_reference_mesh::<f64>(0.05).unwrap())
    }

    /// Interpolates on the affine geometry (edge nodes at straight-edge
    /// midpoints) so that quadratics are reproduced exactly.
    fn affine_interpolant(sys: &FemSystem<f64>, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let nv = sys.mesh.n_vertices();
        let verts = sys.mesh.vertices();
        let mut u = vec![0.0; sys.n_u()];
        for (k, p) in verts.iter().enumerate() {
            let v = f(p[0], p[1]);
            u[2 * k] = v[0];
            u[2 * k + 1] = v[1];
        }
        for (e, &[a, b]) in sys.dofs.edges().iter().enumerate() {
            let m = [(verts[a][0] + verts[b][0]) / 2.0, (verts[a][1] + verts[b][1]) / 2.0];
            let v = f(m[0], m[1]);
            u[2 * (nv + e)] = v[0];
            u[2 * (nv + e) + 1] = v[1];
        }
        u
    }

    fn inner_polygon_area(sys: &FemSystem<f64>) -> f64 {
        let v = sys.mesh.vertices();
        sys.mesh
            .inner_boundary_edges()
            .unwrap()
            .iter()
            .map(|&[a, b]| 0.5 * (v[a][0] * v[b][1] - v[b][0] * v[a][1]))
            .sum()
    }

    #[test]
    fn normals_close_and_constant_pressure_is_forceless() {
        let sys = system();
        let f = ForceFunctional::new(&sys, false, 0.01).unwrap();
        let n = f.normal_integral();
        assert!(n[0].abs() < 1e-12 && n[1].abs() < 1e-12);
        let (drag, lift) = f.evaluate(&sys, &vec![0.0; sys.n_u()], &vec![2.5; sys.n_p()]);
        assert!(drag.abs() < 1e-12 && lift.abs() < 1e-12);
    }

    #[test]
    fn rigid_rotation_has_no_viscous_force() {
        let sys = system();
        let u = affine_interpolant(&sys, |x, y| [-y, x - 0.5]);
        let (drag, lift) = drag_lift(&sys, &u, &vec![0.0; sys.n_p()], false, 0.01).unwrap();
        assert!(drag.abs() < 1e-12 && lift.abs() < 1e-12);
    }

    #[test]
    fn closed_form_values_on_the_polygonal_cylinder() {
        let sys = system();
        let area = inner_polygon_area(&sys);
        assert!((area - std::f64::consts::PI * 0.01).abs() < 1e-3);
        let f = ForceFunctional::new(&sys, false, 0.01).unwrap();
        // grad u + grad u^T = diag(4 (x - c1), 0): lift = -4 |D|, drag = 0.
        let u = affine_interpolant(&sys, |x, _| [(x - 0.5) * (x - 0.5), 0.0]);
        let (drag, lift) = f.evaluate(&sys, &u, &vec![0.0; sys.n_p()]);
        assert!(drag.abs() < 1e-12);
        assert!((lift + 4.0 * area).abs() < 1e-12, "{lift} vs {}", -4.0 * area);
        // Linear pressures: p = x gives lift |D|, p = y gives drag -|D|.
        let zero = vec![0.0; sys.n_u()];
        let (_, lift) = f.evaluate(&sys, &zero, &sys.dofs.interpolate_pressure(|x, _| x));
        assert!((lift - area).abs() < 1e-12);
        let (drag, _) = f.evaluate(&sys, &zero, &sys.dofs.interpolate_pressure(|_, y| y));
        assert!((drag + area).abs() < 1e-12);
        // The viscosity flag scales the viscous part only.
        let fnu = ForceFunctional::new(&sys, true, 0.01).unwrap();
        let (_, lift) = fnu.evaluate(&sys, &u, &vec![0.0; sys.n_p()]);
        assert!((lift + 0.04 * area).abs() < 1e-13);
    }

    #[test]
    fn missing_inner_boundary_is_an_error() {
        let sys = FemSystem::new(unit_square_mesh::<f64>());
        assert!(matches!(
            ForceFunctional::new(&sys, false, 0.01),
            Err(Error::Topology(_))
        ));
    }
}
