//! POD bases from mass-weighted snapshot correlation matrices.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::{self, ArtifactKind};
use crate::offline::{FemSystem, SnapshotSet};
use crate::scalar::Real;
use crate::sparse::SparseOperator;

/// Eigenvalues below `RANK_TOL * lambda_1` are numerically zero.
pub const RANK_TOL: f64 = 1e-14;
/// Eigenvalues below `-NEGATIVE_TOL * lambda_1` are an error.
pub const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Velocity,
    Pressure,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Velocity => "velocity",
            Field::Pressure => "pressure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "velocity" => Some(Field::Velocity),
            "pressure" => Some(Field::Pressure),
            _ => None,
        }
    }
}

impl<T: Real> FemSystem<T> {
    /// Mass matrix weighting a field's `L^2` inner product.
    pub fn weight(&self, field: Field) -> &SparseOperator<T> {
        match field {
            Field::Velocity => &self.mass,
            Field::Pressure => &self.pressure_mass,
        }
    }
}

/// Orthonormal POD modes of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis<T: Real> {
    pub field: Field,
    /// Retained modes as columns (`n x R`).
    pub modes: DMatrix<T>,
    /// Full descending, clamped spectrum of the correlation matrix.
    pub eigenvalues: Vec<T>,
    /// Eigenvectors of the correlation matrix in spectrum order (`N x N`).
    pub coefficients: DMatrix<T>,
    /// Number of eigenvalues above the rank tolerance.
    pub rank: usize,
    pub weight: SparseOperator<T>,
    /// Hash of the snapshot source, empty if unknown.
    pub source_hash: String,
}

fn weighted_gram<T: Real>(a: &DMatrix<T>, weight: &SparseOperator<T>) -> DMatrix<T> {
    let wa = weight.mul_dense(a);
    let c = a.transpose() * wa;
    (&c + c.transpose()) * T::lit(0.5)
}

/// Computes `R` modes from snapshot columns `a` under `weight`.
pub fn pod_from_matrix<T: Real>(
    a: &DMatrix<T>,
    weight: &SparseOperator<T>,
    field: Field,
    r: usize,
) -> Result<PodBasis<T>> {
    let n_snap = a.ncols();
    if n_snap == 0 {
        return Err(Error::Rank {
            requested: r,
            admissible: 0,
        });
    }
    if weight.shape() != (a.nrows(), a.nrows()) {
        return Err(Error::DimensionMismatch {
            context: "POD weight",
            expected: a.nrows(),
            actual: weight.nrows(),
        });
    }
    let eig = SymmetricEigen::new(weighted_gram(a, weight));
    let mut order: Vec<usize> = (0..n_snap).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let largest = eig.eigenvalues[order[0]].max(T::zero());
    let mut eigenvalues = Vec::with_capacity(n_snap);
    for &i in &order {
        let v = eig.eigenvalues[i];
        if v < -T::lit(NEGATIVE_TOL) * largest {
            return Err(Error::NegativeEigenvalue {
                value: v.as_f64(),
                largest: largest.as_f64(),
            });
        }
        eigenvalues.push(v.max(T::zero()));
    }
    let coefficients = DMatrix::from_fn(n_snap, n_snap, |i, j| eig.eigenvectors[(i, order[j])]);
    let rank = if largest > T::zero() {
        eigenvalues.iter().filter(|&&l| l > T::lit(RANK_TOL) * largest).count()
    } else {
        0
    };
    if r > rank {
        return Err(Error::Rank {
            requested: r,
            admissible: rank,
        });
    }

    let scaled = DMatrix::from_fn(n_snap, r, |i, j| coefficients[(i, j)] / eigenvalues[j].sqrt());
    let mut modes = a * scaled;
    modified_gram_schmidt(&mut modes, weight);
    Ok(PodBasis {
        field,
        modes,
        eigenvalues,
        coefficients,
        rank,
        weight: weight.clone(),
        source_hash: String::new(),
    })
}

/// One modified Gram-Schmidt pass over the columns under `weight`.
pub fn modified_gram_schmidt<T: Real>(modes: &mut DMatrix<T>, weight: &SparseOperator<T>) {
    for i in 0..modes.ncols() {
        for j in 0..i {
            let wj = weight.mul_vec(modes.column(j).as_slice());
            let proj = modes.column(i).dot(&DVector::from_vec(wj));
            let cj = modes.column(j).clone_owned();
            modes.column_mut(i).axpy(-proj, &cj, T::one());
        }
        let norm = weight.quadratic(modes.column(i).as_slice()).sqrt();
        modes.column_mut(i).scale_mut(T::one() / norm);
    }
}

/// POD of one field of a snapshot set.
pub fn compute_pod<T: Real>(
    set: &SnapshotSet<T>,
    system: &FemSystem<T>,
    field: Field,
    r: usize,
) -> Result<PodBasis<T>> {
    let a = match field {
        Field::Velocity => set.velocity_matrix(),
        Field::Pressure => set.pressure_matrix(),
    };
    pod_from_matrix(&a, system.weight(field), field, r)
}

impl<T: Real> PodBasis<T> {
    /// Wraps externally built `weight`-orthonormal modes (no spectrum).
    pub fn from_modes(field: Field, modes: DMatrix<T>, weight: &SparseOperator<T>) -> Self {
        let r = modes.ncols();
        Self {
            field,
            modes,
            eigenvalues: Vec::new(),
            coefficients: DMatrix::zeros(0, 0),
            rank: r,
            weight: weight.clone(),
            source_hash: String::new(),
        }
    }

    pub fn r(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n_dofs(&self) -> usize {
        self.modes.nrows()
    }

    pub fn mode(&self, i: usize) -> Vec<T> {
        self.modes.column(i).iter().copied().collect()
    }

    /// First `r` modes of this basis.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r > self.r() {
            return Err(Error::Rank {
                requested: r,
                admissible: self.r(),
            });
        }
        Ok(Self {
            modes: self.modes.columns(0, r).into_owned(),
            ..self.clone()
        })
    }

    /// Smallest number of modes whose eigenvalues capture `fraction` of the
    /// total.
    pub fn modes_for_energy(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().map(|l| l.as_f64()).sum();
        let mut acc = 0.0;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            acc += l.as_f64();
            if acc >= fraction * total {
                return i + 1;
            }
        }
        self.eigenvalues.len()
    }

    /// `Phi^T W Phi`
    pub fn gram(&self) -> DMatrix<T> {
        self.modes.transpose() * self.weight.mul_dense(&self.modes)
    }

    /// Largest `|(phi_i, phi_j)_W - delta_ij|`.
    pub fn orthonormality_defect(&self) -> T {
        let g = self.gram();
        let mut worst = T::zero();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Reconstruction `Phi c`.
    pub fn reconstruct(&self, c: &[T]) -> Vec<T> {
        (&self.modes * DVector::from_column_slice(c)).as_slice().to_vec()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("field".into(), self.field.as_str().into());
        meta.insert("n_dofs".into(), self.n_dofs().to_string());
        meta.insert("r".into(), self.r().to_string());
        meta.insert("n_snapshots".into(), self.eigenvalues.len().to_string());
        meta.insert("rank".into(), self.rank.to_string());
        meta.insert("weight".into(), format!("{}_mass", self.field.as_str()));
        meta.insert("source_hash".into(), self.source_hash.clone());
        let mut payload: Vec<f64> = self.eigenvalues.iter().map(|v| v.as_f64()).collect();
        payload.extend(self.coefficients.iter().map(|v| v.as_f64()));
        payload.extend(self.modes.iter().map(|v| v.as_f64()));
        io::write_artifact(path, ArtifactKind::Basis, &meta, &payload)
    }

    /// Loads a basis and attaches the matching weight of `system`.
    pub fn load(path: impl AsRef<Path>, system: &FemSystem<T>) -> Result<Self> {
        let path = path.as_ref();
        let (h, payload) = io::read_artifact(path)?;
        h.expect_kind(ArtifactKind::Basis, path)?;
        let field = h
            .get("field")
            .and_then(Field::parse)
            .ok_or_else(|| Error::format(path, "missing field"))?;
        let n: usize = h.parse("n_dofs", path)?;
        let r: usize = h.parse("r", path)?;
        let ns: usize = h.parse("n_snapshots", path)?;
        if payload.len() != ns + ns * ns + n * r {
            return Err(Error::format(path, "payload length disagrees with header counts"));
        }
        let weight = system.weight(field);
        if weight.nrows() != n {
            return Err(Error::BasisMismatch(format!(
                "{} basis has {n} dofs but the mesh has {}",
                field.as_str(),
                weight.nrows()
            )));
        }
        let v: Vec<T> = payload.into_iter().map(T::lit).collect();
        Ok(Self {
            field,
            eigenvalues: v[..ns].to_vec(),
            coefficients: DMatrix::from_column_slice(ns, ns, &v[ns..ns + ns * ns]),
            modes: DMatrix::from_column_slice(n, r, &v[ns + ns * ns..]),
            rank: h.parse("rank", path)?,
            weight: weight.clone(),
            source_hash: h.get("source_hash").unwrap_or_default().to_string(),
        })
    }
}

/// Coordinates `c_i = phi_i^T W v` of the `W`-orthogonal projection.
pub fn l2_project<T: Real>(basis: &PodBasis<T>, v: &[T]) -> Result<Vec<T>> {
    basis.weight.check_len("L2 projection input", v)?;
    let wv = DVector::from_vec(basis.weight.mul_vec(v));
    Ok((basis.modes.transpose() * wv).as_slice().to_vec())
}

/// Measured projection errors against the eigenvalue tails.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport<T> {
    pub r: usize,
    /// `||v^n - P_R v^n||_W^2` per snapshot.
    pub l2_errors: Vec<T>,
    /// `||grad(v^n - P_R v^n)||^2` per snapshot (velocity only).
    pub h1_errors: Option<Vec<T>>,
    /// `sum_{i>R} lambda_i`
    pub l2_tail: T,
    /// `sum_{i>R} ||grad phi_i||^2 lambda_i`
    pub h1_tail: Option<T>,
    /// `sum_i lambda_i`
    pub eigen_total: T,
    /// `sum_i ||grad phi_i||^2 lambda_i`
    pub h1_total: Option<T>,
}

impl<T: Real> ProjectionReport<T> {
    pub fn l2_measured(&self) -> T {
        self.l2_errors.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn h1_measured(&self) -> Option<T> {
        self.h1_errors.as_ref().map(|e| e.iter().fold(T::zero(), |a, &b| a + b))
    }

    /// `|measured - tail| / tail`, or relative to the eigenvalue total when
    /// the tail vanishes.
    pub fn l2_mismatch(&self) -> T {
        mismatch(self.l2_measured(), self.l2_tail, self.eigen_total)
    }

    pub fn h1_mismatch(&self) -> Option<T> {
        let total = self.h1_total?;
        Some(mismatch(self.h1_measured()?, self.h1_tail?, total))
    }

    /// Mismatches relative to the totals, meaningful for complete bases.
    pub fn l2_mismatch_vs_total(&self) -> T {
        (self.l2_measured() - self.l2_tail).abs() / self.eigen_total
    }
}

fn mismatch<T: Real>(measured: T, tail: T, total: T) -> T {
    let floor = T::lit(1e-12) * total;
    (measured - tail).abs() / tail.max(floor)
}

/// Projection-error identities for `basis` over the snapshot columns it was
/// built from. `stiffness` enables the `H^1` variant.
pub fn projection_error_report<T: Real>(
    basis: &PodBasis<T>,
    snapshots: &DMatrix<T>,
    stiffness: Option<&SparseOperator<T>>,
) -> Result<ProjectionReport<T>> {
    let n_snap = snapshots.ncols();
    if n_snap != basis.eigenvalues.len() || snapshots.nrows() != basis.n_dofs() {
        return Err(Error::BasisMismatch("snapshots differ from the basis source".into()));
    }
    let r = basis.r();
    let wa = basis.weight.mul_dense(snapshots);
    let coords = basis.modes.transpose() * &wa;
    let residual = snapshots - &basis.modes * coords;
    let w_res = basis.weight.mul_dense(&residual);
    let l2_errors = (0..n_snap).map(|n| residual.column(n).dot(&w_res.column(n))).collect();
    let eigen_total = basis.eigenvalues.iter().fold(T::zero(), |a, &b| a + b);
    let l2_tail = basis.eigenvalues[r..].iter().fold(T::zero(), |a, &b| a + b);

    let (h1_errors, h1_tail, h1_total) = match stiffness {
        Some(k) => {
            let k_res = k.mul_dense(&residual);
            let errs = (0..n_snap).map(|n| residual.column(n).dot(&k_res.column(n))).collect();
            // a_i^T (A^T K A) a_i equals ||grad phi_i||^2 lambda_i.
            let g = weighted_gram(snapshots, k);
            let ga = &g * &basis.coefficients;
            let per_mode: Vec<T> = (0..n_snap)
                .map(|i| basis.coefficients.column(i).dot(&ga.column(i)))
                .collect();
            let tail = per_mode[r..].iter().fold(T::zero(), |a, &b| a + b);
            let total = per_mode.iter().fold(T::zero(), |a, &b| a + b);
            (Some(errs), Some(tail), Some(total))
        }
        None => (None, None, None),
    };
    Ok(ProjectionReport {
        r,
        l2_errors,
        h1_errors,
        l2_tail,
        h1_tail,
        eigen_total,
        h1_total,
    })
}

/// Spectral norm of the reduced stiffness `S_R = Phi^T K Phi`.
pub fn pod_inverse_constant<T: Real>(basis: &PodBasis<T>, stiffness: &SparseOperator<T>) -> T {
    if basis.r() == 0 {
        return T::zero();
    }
    let s = basis.modes.transpose() * stiffness.mul_dense(&basis.modes);
    let s = (&s + s.transpose()) * T::lit(0.5);
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .fold(T::zero(), |m, &v| m.max(v))
}
