//! Field-level diagnostics: kinetic energy, divergence, trajectory errors.

use crate::error::{Error, Result};
use crate::offline::FemSystem;
use crate::scalar::Real;
use crate::solver::SparseLu;
use crate::sparse::SparseOperator;

/// `1/2 u^T M u`
pub fn kinetic_energy<T: Real>(system: &FemSystem<T>, u: &[T]) -> T {
    T::lit(0.5) * system.mass.quadratic(u)
}

/// Repeated P1 projections of velocity divergences with one factorization
/// of the pressure mass matrix.
#[derive(Debug, Clone)]
pub struct DivergenceProjector<'a, T: Real> {
    system: &'a FemSystem<T>,
    lu: SparseLu<T>,
}

impl<'a, T: Real> DivergenceProjector<'a, T> {
    pub fn new(system: &'a FemSystem<T>) -> Result<Self> {
        Ok(Self {
            system,
            lu: SparseLu::new(&system.pressure_mass)?,
        })
    }

    /// `Mp^{-1} B u`
    pub fn apply(&self, u: &[T]) -> Result<Vec<T>> {
        self.system.mass.check_len("divergence input", u)?;
        self.lu.solve(&self.system.divergence.mul_vec(u))
    }

    /// `Mp` norm of the projected divergence.
    pub fn norm(&self, u: &[T]) -> Result<T> {
        Ok(divergence_norm(self.system, &self.apply(u)?))
    }
}

/// P1 field `d` with `(d, q) = (div u, q)` for every P1 `q`.
pub fn divergence_field<T: Real>(system: &FemSystem<T>, u: &[T]) -> Result<Vec<T>> {
    DivergenceProjector::new(system)?.apply(u)
}

/// `sqrt(d^T Mp d)`
pub fn divergence_norm<T: Real>(system: &FemSystem<T>, d: &[T]) -> T {
    system.pressure_mass.quadratic(d).max(T::zero()).sqrt()
}

/// Relative error with a flag for a vanishing reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError<T> {
    pub value: T,
    /// The reference has zero norm; `value` is then infinite (or zero when
    /// both trajectories vanish).
    pub degenerate: bool,
}

fn time_tol<T: Real>(t: T) -> T {
    T::lit(1e-9) * t.abs().max(T::one())
}

/// Relative discrete `l2(L2_W)` error of `a` against the reference `b`,
/// `sqrt(sum dt ||a - b||_W^2) / sqrt(sum dt ||b||_W^2)`, summed over the
/// coarser of the two grids, whose times must appear in the finer one.
pub fn l2l2_relative_error<T: Real>(
    times_a: &[T],
    a: &[Vec<T>],
    times_b: &[T],
    b: &[Vec<T>],
    weight: &SparseOperator<T>,
) -> Result<RelativeError<T>> {
    if times_a.len() != a.len() || times_b.len() != b.len() {
        return Err(Error::MisalignedGrids("time and state counts differ".into()));
    }
    let a_is_coarse = times_a.len() <= times_b.len();
    let (coarse, fine) = if a_is_coarse {
        (times_a, times_b)
    } else {
        (times_b, times_a)
    };
    if coarse.is_empty() {
        return Err(Error::MisalignedGrids("empty trajectory".into()));
    }
    let mut num = T::zero();
    let mut den = T::zero();
    let mut j = 0;
    for (n, &t) in coarse.iter().enumerate() {
        while j < fine.len() && fine[j] < t - time_tol(t) {
            j += 1;
        }
        if j == fine.len() || (fine[j] - t).abs() > time_tol(t) {
            return Err(Error::MisalignedGrids(format!(
                "time {t} is missing from the finer grid"
            )));
        }
        let dt = match (n, coarse.len()) {
            (_, 1) => T::one(),
            (0, _) => coarse[1] - coarse[0],
            _ => coarse[n] - coarse[n - 1],
        };
        let (sa, sb) = if a_is_coarse { (&a[n], &b[j]) } else { (&a[j], &b[n]) };
        weight.check_len("error trajectory", sa)?;
        weight.check_len("error trajectory", sb)?;
        let diff: Vec<T> = sa.iter().zip(sb.iter()).map(|(&x, &y)| x - y).collect();
        num += dt * weight.quadratic(&diff);
        den += dt * weight.quadratic(sb);
    }
    if den == T::zero() {
        let value = if num == T::zero() {
            T::zero()
        } else {
            T::lit(f64::INFINITY)
        };
        return Ok(RelativeError {
            value,
            degenerate: true,
        });
    }
    Ok(RelativeError {
        value: (num / den).sqrt(),
        degenerate: false,
    })
}

/// Least-squares slope of `ln e` against `ln dt`; `None` with fewer than two
/// usable points or a degenerate step set.
pub fn fit_order(dts: &[f64], errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = dts
        .iter()
        .zip(errors)
        .filter(|(&d, &e)| d > 0.0 && e > 0.0 && e.is_finite())
        .map(|(&d, &e)| (d.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Errors of a time-step refinement study.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub dts: Vec<f64>,
    pub velocity_errors: Vec<f64>,
    pub pressure_errors: Vec<f64>,
    pub velocity_order: Option<f64>,
    pub pressure_order: Option<f64>,
}

impl ErrorReport {
    pub fn new(dts: Vec<f64>, velocity_errors: Vec<f64>, pressure_errors: Vec<f64>) -> Self {
        Self {
            velocity_order: fit_order(&dts, &velocity_errors),
            pressure_order: fit_order(&dts, &pressure_errors),
            dts,
            velocity_errors,
            pressure_errors,
        }
    }

    pub const CSV_COLUMNS: [&'static str; 3] = ["dt", "velocity_error", "pressure_error"];

    /// CSV rows matching [`ErrorReport::CSV_COLUMNS`].
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dts.len())
            .map(|i| vec![self.dts[i], self.velocity_errors[i], self.pressure_errors[i]])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::p2_values;
    use crate::mesh::{generate_reference_mesh, structured_square_mesh};
    use crate::quadrature::TriangleRule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn divergence_of_affine_fields() {
        let sys = FemSystem::new(structured_square_mesh::<f64>(5));
        let proj = DivergenceProjector::new(&sys).unwrap();
        let d = proj.apply(&sys.dofs.interpolate_velocity(|_, _| [0.3, -1.2])).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        let d = proj.apply(&sys.dofs.interpolate_velocity(|x, _| [x, 0.0])).unwrap();
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((proj.norm(&sys.dofs.interpolate_velocity(|x, y| [x, y])).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kinetic_energy_matches_oversampled_quadrature() {
        let sys = FemSystem::new(generate_reference_mesh::<f64>(0.09).unwrap());
        assert_eq!(kinetic_energy(&sys, &vec![0.0; sys.n_u()]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..sys.n_u()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let rule = TriangleRule::<f64>::collapsed_gauss(6);
        let mut direct = 0.0;
        for (t, g) in sys.assembler.geometry().iter().enumerate() {
            let nodes = sys.dofs.element_nodes(t);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let phi = p2_values(*l);
                let mut v = [0.0; 2];
                for k in 0..6 {
                    v[0] += u[2 * nodes[k]] * phi[k];
                    v[1] += u[2 * nodes[k] + 1] * phi[k];
                }
                direct += 0.5 * w * g.area * (v[0] * v[0] + v[1] * v[1]);
            }
        }
        assert!((kinetic_energy(&sys, &u) - direct).abs() < 1e-10 * direct);
    }

    fn identity(n: usize) -> SparseOperator<f64> {
        SparseOperator::identity(n)
    }

    #[test]
    fn relative_error_cases() {
        let w = identity(2);
        let t = vec![0.0, 0.1, 0.2];
        let b = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]];
        let same = l2l2_relative_error(&t, &b, &t, &b, &w).unwrap();
        assert_eq!(same.value, 0.0);
        let a: Vec<Vec<f64>> = b.iter().map(|s| s.iter().map(|v| 1.1 * v).collect()).collect();
        let r = l2l2_relative_error(&t, &a, &t, &b, &w).unwrap();
        assert!((r.value - 0.1).abs() < 1e-12 && !r.degenerate);
        let zero = vec![vec![0.0; 2]; 3];
        let r = l2l2_relative_error(&t, &b, &t, &zero, &w).unwrap();
        assert!(r.degenerate && r.value.is_infinite());
    }

    #[test]
    fn coarse_grid_is_matched_inside_fine_grid() {
        let w = identity(1);
        let fine_t: Vec<f64> = (0..9).map(|k| 0.025 * k as f64).collect();
        let fine: Vec<Vec<f64>> = fine_t.iter().map(|&t| vec![1.0 + t]).collect();
        let coarse_t: Vec<f64> = (0..3).map(|k| 0.1 * k as f64).collect();
        let coarse: Vec<Vec<f64>> = coarse_t.iter().map(|&t| vec![2.0 * (1.0 + t)]).collect();
        let r = l2l2_relative_error(&coarse_t, &coarse, &fine_t, &fine, &w).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = coarse_t.iter().map(|t| t + 0.01).collect();
        assert!(matches!(
            l2l2_relative_error(&shifted, &coarse, &fine_t, &fine, &w),
            Err(Error::MisalignedGrids(_))
        ));
    }

    #[test]
    fn order_fit() {
        let dts = [8e-3, 4e-3, 2e-3, 1e-3];
        let errs: Vec<f64> = dts.iter().map(|d| 3.0 * d * d).collect();
        assert!((fit_order(&dts, &errs).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_order(&dts[..1], &errs[..1]), None);
        assert_eq!(fit_order(&[1e-3, 1e-3], &[1.0, 2.0]), None);
        let rep = ErrorReport::new(dts.to_vec(), dts.to_vec(), errs);
        assert!((rep.velocity_order.unwrap() - 1.0).abs() < 1e-12);
    }
}
