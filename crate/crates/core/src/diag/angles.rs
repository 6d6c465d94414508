//! First principal angle between the divergence image of the velocity modes
//! and the pressure modes, and the reduced inf-sup constant.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::offline::FemSystem;
use crate::pod::{Field, PodBasis};
use crate::scalar::Real;
use crate::solver::SparseLu;
use crate::sparse::SparseOperator;

/// Columns whose norm drops below this fraction during orthogonalization are
/// treated as linearly dependent.
pub const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AngleReport<T> {
    pub r: usize,
    pub m: usize,
    /// `cos theta_1`, the largest singular value of the cross Gram matrix.
    pub alpha: T,
    pub theta1: T,
    /// Descending singular values of the cross Gram matrix.
    pub singular_values: Vec<T>,
    pub infsup_beta: T,
    /// Numerical dimension of `span{div phi_i}`.
    pub divergence_rank: usize,
}

/// `W`-orthonormal basis of the column span of `x`, dropping dependent
/// columns. Two Gram-Schmidt sweeps per column.
pub fn orthonormal_span<T: Real>(x: &DMatrix<T>, weight: &SparseOperator<T>) -> DMatrix<T> {
    let mut kept: Vec<nalgebra::DVector<T>> = Vec::new();
    let mut kept_w: Vec<nalgebra::DVector<T>> = Vec::new();
    for j in 0..x.ncols() {
        let mut v = x.column(j).clone_owned();
        let start = weight.quadratic(v.as_slice()).max(T::zero()).sqrt();
        if start == T::zero() {
            continue;
        }
        for _ in 0..2 {
            for (q, wq) in kept.iter().zip(&kept_w) {
                let c = wq.dot(&v);
                v.axpy(-c, q, T::one());
            }
        }
        let norm = weight.quadratic(v.as_slice()).max(T::zero()).sqrt();
        if norm <= T::lit(DEPENDENCE_TOL) * start {
            continue;
        }
        v /= norm;
        kept_w.push(nalgebra::DVector::from_vec(weight.mul_vec(v.as_slice())));
        kept.push(v);
    }
    if kept.is_empty() {
        DMatrix::zeros(x.nrows(), 0)
    } else {
        DMatrix::from_columns(&kept)
    }
}

fn descending_singular_values<T: Real>(g: DMatrix<T>) -> Vec<T> {
    if g.nrows() == 0 || g.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<T> = g.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    s
}

/// Cosines of the principal angles between `span(x)` and `span(y)` under
/// `weight`, descending.
pub fn subspace_cosines<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, weight: &SparseOperator<T>) -> Vec<T> {
    let qx = orthonormal_span(x, weight);
    let qy = orthonormal_span(y, weight);
    descending_singular_values(qy.transpose() * weight.mul_dense(&qx))
}

fn check_pair<T: Real>(u_basis: &PodBasis<T>, p_basis: &PodBasis<T>, system: &FemSystem<T>) -> Result<()> {
    if u_basis.field != Field::Velocity || p_basis.field != Field::Pressure {
        return Err(Error::BasisMismatch("expected a velocity and a pressure basis".into()));
    }
    if u_basis.n_dofs() != system.n_u() || p_basis.n_dofs() != system.n_p() {
        return Err(Error::BasisMismatch(format!(
            "bases have {}/{} dofs, mesh has {}/{}",
            u_basis.n_dofs(),
            p_basis.n_dofs(),
            system.n_u(),
            system.n_p()
        )));
    }
    Ok(())
}

/// `Mp^{-1} B Phi`: P1 projections of the mode divergences.
pub fn mode_divergences<T: Real>(u_basis: &PodBasis<T>, system: &FemSystem<T>) -> Result<DMatrix<T>> {
    let bphi = system.divergence.mul_dense(&u_basis.modes);
    let lu = SparseLu::new(&system.pressure_mass)?;
    let mut out = DMatrix::zeros(system.n_p(), u_basis.r());
    for j in 0..u_basis.r() {
        let d = lu.solve(bphi.column(j).as_slice())?;
        out.column_mut(j).copy_from_slice(&d);
    }
    Ok(out)
}

/// First principal angle between `span{div phi_i}` and the pressure modes in
/// the `Mp` inner product, together with the inf-sup constant of the pair.
pub fn principal_angle<T: Real>(
    u_basis: &PodBasis<T>,
    p_basis: &PodBasis<T>,
    system: &FemSystem<T>,
) -> Result<AngleReport<T>> {
    check_pair(u_basis, p_basis, system)?;
    let mp = &system.pressure_mass;
    let x = orthonormal_span(&mode_divergences(u_basis, system)?, mp);
    let singular_values = descending_singular_values(p_basis.modes.transpose() * mp.mul_dense(&x));
    let alpha = singular_values.first().copied().unwrap_or_else(T::zero);
    let theta1 = alpha.max(T::zero()).min(T::one()).acos();
    Ok(AngleReport {
        r: u_basis.r(),
        m: p_basis.r(),
        alpha,
        theta1,
        singular_values,
        infsup_beta: infsup_constant(u_basis, p_basis, system)?,
        divergence_rank: x.ncols(),
    })
}

/// `inf_q sup_v (q^T G v) / (|q| sqrt(v^T S v))` for reduced matrices
/// `G` (`M x R`) and SPD `S` (`R x R`), with an identity pressure Gram.
pub fn reduced_infsup<T: Real>(g: &DMatrix<T>, s: &DMatrix<T>) -> Result<T> {
    let (m, r) = g.shape();
    if s.shape() != (r, r) {
        return Err(Error::DimensionMismatch {
            context: "reduced stiffness",
            expected: r,
            actual: s.nrows(),
        });
    }
    if m == 0 || r == 0 {
        return Err(Error::Rank {
            requested: m.min(r),
            admissible: 0,
        });
    }
    if m > r {
        return Ok(T::zero());
    }
    let sym = (s + s.transpose()) * T::lit(0.5);
    let chol =
        Cholesky::new(sym).ok_or_else(|| Error::Factorization("reduced stiffness is not positive definite".into()))?;
    // H^T = L^{-1} G^T, so H = G L^{-T}.
    let ht = chol
        .l()
        .solve_lower_triangular(&g.transpose())
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
    let s = descending_singular_values(ht.transpose());
    Ok(s[m - 1])
}

/// Discrete inf-sup constant between the velocity and pressure modes.
pub fn infsup_constant<T: Real>(u_basis: &PodBasis<T>, p_basis: &PodBasis<T>, system: &FemSystem<T>) -> Result<T> {
    check_pair(u_basis, p_basis, system)?;
    let phi = &u_basis.modes;
    let g = p_basis.modes.transpose() * system.divergence.mul_dense(phi);
    let s = phi.transpose() * system.stiffness.mul_dense(phi);
    reduced_infsup(&g, &s)
}
