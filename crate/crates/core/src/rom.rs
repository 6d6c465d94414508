//! Reduced operators and the online AC-ROM integrator.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::diag::energy::{energy_step, EnergyNorms, EnergyParams};
use crate::diag::forces::ForceFunctional;
use crate::diag::{l2l2_relative_error, ErrorReport};
use crate::error::{Error, Result};
use crate::io::{self, ArtifactKind};
use crate::offline::{FemSystem, FlowState, Forcing, SnapshotSet, SolvePath, DEFAULT_EPS, DEFAULT_NU};
use crate::pod::{l2_project, Field, PodBasis};
use crate::scalar::Real;

/// Online parameters of a reduced model.
#[derive(Debug, Clone, PartialEq)]
pub struct RomConfig {
    pub nu: f64,
    pub eps: f64,
    pub dt: f64,
    pub forcing: Forcing,
    pub solve_path: SolvePath,
    /// Multiply the viscous part of the stress by `nu` in drag and lift.
    pub include_nu: bool,
}

impl RomConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            nu: DEFAULT_NU,
            eps: DEFAULT_EPS,
            dt,
            forcing: Forcing::Reference,
            solve_path: SolvePath::Eliminated,
            include_nu: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nu", self.nu), ("eps", self.eps), ("dt", self.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("rom.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Drag and lift of every velocity and pressure mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeForces<T> {
    pub drag_u: Vec<T>,
    pub lift_u: Vec<T>,
    pub drag_p: Vec<T>,
    pub lift_p: Vec<T>,
}

impl<T: Real> ModeForces<T> {
    fn truncate(&self, r: usize, m: usize) -> Self {
        Self {
            drag_u: self.drag_u[..r].to_vec(),
            lift_u: self.lift_u[..r].to_vec(),
            drag_p: self.drag_p[..m].to_vec(),
            lift_p: self.lift_p[..m].to_vec(),
        }
    }
}

/// Galerkin-projected operators of the AC scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel<T: Real> {
    /// `Phi^T K Phi`
    pub k_r: DMatrix<T>,
    /// `Psi^T B Phi`, `M x R`.
    pub d_r: DMatrix<T>,
    /// `tensor[k][(i, j)] = b*(phi_k, phi_j, phi_i)`.
    pub tensor: Vec<DMatrix<T>>,
    pub f_r: DVector<T>,
    pub nu: T,
    pub eps: T,
    pub dt: T,
    pub solve_path: SolvePath,
    /// `None` when the mesh has no inner cylinder.
    pub forces: Option<ModeForces<T>>,
    /// Largest `|T[k] + T[k]^T|` relative to the largest tensor entry.
    pub skew_defect: T,
    /// `f_r^T K_r^{-1} f_r`
    dual: T,
}

fn build_tol<T: Real>(floor: f64) -> T {
    T::lit(floor).max(T::lit(1e3) * T::eps())
}

fn identity_defect<T: Real>(g: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, &v| a.max(v.abs()))
}

impl<T: Real> ReducedModel<T> {
    /// Assembles a model from reduced matrices and checks the structural
    /// invariants (skew tensor, symmetric semidefinite stiffness).
    pub fn from_operators(
        k_r: DMatrix<T>,
        d_r: DMatrix<T>,
        tensor: Vec<DMatrix<T>>,
        f_r: DVector<T>,
        config: &RomConfig,
    ) -> Result<Self> {
        config.validate()?;
        let r = k_r.nrows();
        let shape_ok = k_r.ncols() == r
            && d_r.ncols() == r
            && f_r.len() == r
            && tensor.len() == r
            && tensor.iter().all(|t| t.shape() == (r, r));
        if !shape_ok {
            return Err(Error::DimensionMismatch {
                context: "reduced operators",
                expected: r,
                actual: d_r.ncols(),
            });
        }
        let scale = tensor.iter().fold(T::zero(), |a, t| a.max(max_abs(t)));
        let skew = tensor
            .iter()
            .fold(T::zero(), |a, t| a.max(max_abs(&(t + t.transpose()))));
        let skew_defect = if scale > T::zero() { skew / scale } else { T::zero() };
        if skew_defect > build_tol(1e-12) {
            return Err(Error::BasisMismatch(format!(
                "reduced convection is not skew-symmetric (defect {skew_defect:e})"
            )));
        }
        let k_scale = max_abs(&k_r);
        if max_abs(&(&k_r - k_r.transpose())) > build_tol::<T>(1e-10) * k_scale {
            return Err(Error::BasisMismatch("reduced stiffness is not symmetric".into()));
        }
        let dual = if r == 0 {
            T::zero()
        } else {
            let sym = (&k_r + k_r.transpose()) * T::lit(0.5);
            let eig = sym.clone().symmetric_eigen();
            let lowest = eig.eigenvalues.iter().fold(T::lit(f64::INFINITY), |a, &v| a.min(v));
            if lowest < -build_tol::<T>(1e-10) * k_scale {
                return Err(Error::BasisMismatch(format!(
                    "reduced stiffness has eigenvalue {lowest:e}"
                )));
            }
            match sym.cholesky() {
                Some(c) => f_r.dot(&c.solve(&f_r)),
                None => T::lit(f64::INFINITY),
            }
        };
        Ok(Self {
            k_r,
            d_r,
            tensor,
            f_r,
            nu: T::lit(config.nu),
            eps: T::lit(config.eps),
            dt: T::lit(config.dt),
            solve_path: config.solve_path,
            forces: None,
            skew_defect,
            dual,
        })
    }

    pub fn r(&self) -> usize {
        self.k_r.nrows()
    }

    pub fn m(&self) -> usize {
        self.d_r.nrows()
    }

    pub fn with_dt(&self, dt: T) -> Self {
        Self { dt, ..self.clone() }
    }

    pub fn with_solve_path(&self, solve_path: SolvePath) -> Self {
        Self {
            solve_path,
            ..self.clone()
        }
    }

    /// The model on the leading `r` velocity and `m` pressure modes.
    pub fn truncate(&self, r: usize, m: usize) -> Result<Self> {
        if r > self.r() || m > self.m() {
            return Err(Error::Rank {
                requested: r.max(m),
                admissible: if r > self.r() { self.r() } else { self.m() },
            });
        }
        let k_r = self.k_r.view((0, 0), (r, r)).into_owned();
        let f_r = self.f_r.rows(0, r).into_owned();
        let dual = if r == 0 {
            T::zero()
        } else {
            match k_r.clone().cholesky() {
                Some(c) => f_r.dot(&c.solve(&f_r)),
                None => T::lit(f64::INFINITY),
            }
        };
        Ok(Self {
            d_r: self.d_r.view((0, 0), (m, r)).into_owned(),
            tensor: self.tensor[..r]
                .iter()
                .map(|t| t.view((0, 0), (r, r)).into_owned())
                .collect(),
            forces: self.forces.as_ref().map(|f| f.truncate(r, m)),
            k_r,
            f_r,
            dual,
            ..self.clone()
        })
    }

    /// `N_r(a) = sum_k a_k T[k]`
    pub fn convection(&self, a: &[T]) -> DMatrix<T> {
        let r = self.r();
        let mut n = DMatrix::zeros(r, r);
        for (t, &ak) in self.tensor.iter().zip(a) {
            n += t * ak;
        }
        n
    }

    fn check_coords(&self, a_u: &[T], a_p: &[T]) -> Result<()> {
        if a_u.len() != self.r() || a_p.len() != self.m() {
            return Err(Error::DimensionMismatch {
                context: "reduced coordinates",
                expected: self.r() + self.m(),
                actual: a_u.len() + a_p.len(),
            });
        }
        Ok(())
    }

    /// Advances `(a_u^n, a_p^n)` by one step.
    pub fn step(&self, a_u: &[T], a_p: &[T]) -> Result<(Vec<T>, Vec<T>, RomStepReport<T>)> {
        self.check_coords(a_u, a_p)?;
        let r = self.r();
        let inv_dt = T::one() / self.dt;
        let c = self.eps * inv_dt;
        let a = DMatrix::identity(r, r) * inv_dt + &self.k_r * self.nu + self.convection(a_u);
        let u0 = DVector::from_column_slice(a_u);
        let p0 = DVector::from_column_slice(a_p);
        let g = &self.f_r + &u0 * inv_dt;
        let h = &p0 * c;
        let (u, p) = match self.solve_path {
            SolvePath::Eliminated => eliminated(&a, &self.d_r, c, &g, &h)?,
            SolvePath::Monolithic => monolithic(&a, &self.d_r, c, &g, &h)?,
        };
        let linear_residual = coupled_residual(&a, &self.d_r, c, &u, &p, &g, &h);
        let (u, p) = (u.as_slice().to_vec(), p.as_slice().to_vec());
        let params = EnergyParams {
            nu: self.nu,
            eps: self.eps,
            dt: self.dt,
        };
        let energy = energy_step(self, &params, (a_u, a_p), (&u, &p));
        Ok((
            u,
            p,
            RomStepReport {
                linear_residual,
                energy_residual: energy.relative_residual(),
            },
        ))
    }

    /// `1/2 |a_u|^2`, the kinetic energy of `Phi a_u`.
    pub fn kinetic_energy(&self, a_u: &[T]) -> T {
        T::lit(0.5) * a_u.iter().fold(T::zero(), |s, &v| s + v * v)
    }

    /// `(drag, lift)` of the reconstructed fields, if available.
    pub fn drag_lift(&self, a_u: &[T], a_p: &[T]) -> Option<(T, T)> {
        let f = self.forces.as_ref()?;
        let dot = |x: &[T], y: &[T]| x.iter().zip(y).fold(T::zero(), |s, (&a, &b)| s + a * b);
        Some((
            dot(&f.drag_u, a_u) + dot(&f.drag_p, a_p),
            dot(&f.lift_u, a_u) + dot(&f.lift_p, a_p),
        ))
    }
}

impl<T: Real> EnergyNorms<T> for ReducedModel<T> {
    fn velocity_norm2(&self, u: &[T]) -> T {
        u.iter().fold(T::zero(), |s, &v| s + v * v)
    }

    fn pressure_norm2(&self, p: &[T]) -> T {
        p.iter().fold(T::zero(), |s, &v| s + v * v)
    }

    fn gradient_norm2(&self, u: &[T]) -> T {
        let v = DVector::from_column_slice(u);
        v.dot(&(&self.k_r * &v))
    }

    fn work(&self, u: &[T]) -> T {
        self.f_r.iter().zip(u).fold(T::zero(), |s, (&f, &v)| s + f * v)
    }

    fn forcing_dual_norm2(&self) -> T {
        self.dual
    }
}

/// `[[A, -D^T], [D, c I]] [u; p] = [g; h]` by elimination of `p`, with one
/// refinement round.
fn eliminated<T: Real>(
    a: &DMatrix<T>,
    d: &DMatrix<T>,
    c: T,
    g: &DVector<T>,
    h: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let lu = (a + d.transpose() * d / c).lu();
    let solve = |g: &DVector<T>, h: &DVector<T>| -> Result<(DVector<T>, DVector<T>)> {
        let u = lu
            .solve(&(g + d.transpose() * h / c))
            .ok_or_else(|| Error::Factorization("reduced momentum matrix is singular".into()))?;
        let p = (h - d * &u) / c;
        Ok((u, p))
    };
    let (mut u, mut p) = solve(g, h)?;
    let (ru, rp) = residual_vectors(a, d, c, &u, &p, g, h);
    let (du, dp) = solve(&ru, &rp)?;
    u += du;
    p += dp;
    Ok((u, p))
}

fn monolithic<T: Real>(
    a: &DMatrix<T>,
    d: &DMatrix<T>,
    c: T,
    g: &DVector<T>,
    h: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let (r, m) = (a.nrows(), d.nrows());
    let mut k = DMatrix::zeros(r + m, r + m);
    k.view_mut((0, 0), (r, r)).copy_from(a);
    k.view_mut((0, r), (r, m)).copy_from(&(-d.transpose()));
    k.view_mut((r, 0), (m, r)).copy_from(d);
    k.view_mut((r, r), (m, m)).copy_from(&(DMatrix::identity(m, m) * c));
    let lu = k.lu();
    let solve = |g: &DVector<T>, h: &DVector<T>| -> Result<(DVector<T>, DVector<T>)> {
        let rhs = DVector::from_iterator(r + m, g.iter().chain(h.iter()).copied());
        let x = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Factorization("reduced coupled matrix is singular".into()))?;
        Ok((x.rows(0, r).into_owned(), x.rows(r, m).into_owned()))
    };
    let (mut u, mut p) = solve(g, h)?;
    let (ru, rp) = residual_vectors(a, d, c, &u, &p, g, h);
    let (du, dp) = solve(&ru, &rp)?;
    u += du;
    p += dp;
    Ok((u, p))
}

fn residual_vectors<T: Real>(
    a: &DMatrix<T>,
    d: &DMatrix<T>,
    c: T,
    u: &DVector<T>,
    p: &DVector<T>,
    g: &DVector<T>,
    h: &DVector<T>,
) -> (DVector<T>, DVector<T>) {
    (g - (a * u - d.transpose() * p), h - (d * u + p * c))
}

/// `||K x - rhs|| / ||rhs||` (absolute when the right side vanishes).
fn coupled_residual<T: Real>(
    a: &DMatrix<T>,
    d: &DMatrix<T>,
    c: T,
    u: &DVector<T>,
    p: &DVector<T>,
    g: &DVector<T>,
    h: &DVector<T>,
) -> T {
    let (ru, rp) = residual_vectors(a, d, c, u, p, g, h);
    let num = (ru.norm_squared() + rp.norm_squared()).sqrt();
    let den = (g.norm_squared() + h.norm_squared()).sqrt();
    if den == T::zero() {
        num
    } else {
        num / den
    }
}

/// Diagnostics of one reduced step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomStepReport<T> {
    pub linear_residual: T,
    pub energy_residual: T,
}

/// Builds the reduced model of a velocity/pressure basis pair.
pub fn build_reduced_model<T: Real>(
    u_basis: &PodBasis<T>,
    p_basis: &PodBasis<T>,
    system: &FemSystem<T>,
    config: &RomConfig,
) -> Result<ReducedModel<T>> {
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
    let phi = &u_basis.modes;
    let psi = &p_basis.modes;
    let tol = build_tol::<T>(1e-10);
    for (name, basis, weight) in [
        ("velocity", u_basis, &system.mass),
        ("pressure", p_basis, &system.pressure_mass),
    ] {
        let defect = identity_defect(&(basis.modes.transpose() * weight.mul_dense(&basis.modes)));
        if defect > tol {
            return Err(Error::BasisMismatch(format!(
                "reduced {name} mass differs from the identity by {defect:e}"
            )));
        }
    }
    let k_r = phi.transpose() * system.stiffness.mul_dense(phi);
    let d_r = psi.transpose() * system.divergence.mul_dense(phi);
    let f_r = phi.transpose() * DVector::from_vec(system.load(config.forcing));
    let tensor = (0..u_basis.r())
        .into_par_iter()
        .map(|k| {
            let n = system.assembler.convection(phi.column(k).as_slice())?;
            Ok(phi.transpose() * n.mul_dense(phi))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = ReducedModel::from_operators(k_r, d_r, tensor, f_r, config)?;
    model.forces = match ForceFunctional::new(system, config.include_nu, T::lit(config.nu)) {
        Ok(f) => {
            let zu = vec![T::zero(); system.n_u()];
            let zp = vec![T::zero(); system.n_p()];
            let mut out = ModeForces {
                drag_u: Vec::new(),
                lift_u: Vec::new(),
                drag_p: Vec::new(),
                lift_p: Vec::new(),
            };
            for i in 0..u_basis.r() {
                let (d, l) = f.evaluate(system, phi.column(i).as_slice(), &zp);
                out.drag_u.push(d);
                out.lift_u.push(l);
            }
            for k in 0..p_basis.r() {
                let (d, l) = f.evaluate(system, &zu, psi.column(k).as_slice());
                out.drag_p.push(d);
                out.lift_p.push(l);
            }
            Some(out)
        }
        Err(Error::Topology(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(model)
}

/// `L^2` projections of a full-order state onto the two bases.
pub fn project_state<T: Real>(
    u_basis: &PodBasis<T>,
    p_basis: &PodBasis<T>,
    state: &FlowState<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    Ok((l2_project(u_basis, &state.u)?, l2_project(p_basis, &state.p)?))
}

/// Reduced trajectory with its diagnostics. Index 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTrajectory<T> {
    pub times: Vec<T>,
    pub a_u: Vec<Vec<T>>,
    pub a_p: Vec<Vec<T>>,
    /// Per-step energy-equality residual (`len = times.len() - 1`).
    pub energy_residuals: Vec<T>,
    pub linear_residuals: Vec<T>,
    pub energy: Vec<T>,
    /// Empty when the model carries no mode forces.
    pub drag: Vec<T>,
    pub lift: Vec<T>,
}

impl<T: Real> RomTrajectory<T> {
    pub const CSV_COLUMNS: [&'static str; 5] = ["time", "energy", "drag", "lift", "energy_residual"];

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_energy_residual(&self) -> T {
        self.energy_residuals.iter().fold(T::zero(), |m, &v| m.max(v))
    }

    pub fn max_linear_residual(&self) -> T {
        self.linear_residuals.iter().fold(T::zero(), |m, &v| m.max(v))
    }

    /// Rows for [`RomTrajectory::CSV_COLUMNS`]; missing forces are NaN and
    /// the initial row has residual 0.
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|n| {
                vec![
                    self.times[n].as_f64(),
                    self.energy[n].as_f64(),
                    self.drag.get(n).map_or(f64::NAN, |v| v.as_f64()),
                    self.lift.get(n).map_or(f64::NAN, |v| v.as_f64()),
                    if n == 0 {
                        0.0
                    } else {
                        self.energy_residuals[n - 1].as_f64()
                    },
                ]
            })
            .collect()
    }

    pub fn reconstruct_velocity(&self, basis: &PodBasis<T>) -> Vec<Vec<T>> {
        self.a_u.iter().map(|a| basis.reconstruct(a)).collect()
    }

    pub fn reconstruct_pressure(&self, basis: &PodBasis<T>) -> Vec<Vec<T>> {
        self.a_p.iter().map(|a| basis.reconstruct(a)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let r = self.a_u.first().map_or(0, Vec::len);
        let m = self.a_p.first().map_or(0, Vec::len);
        let mut meta = BTreeMap::new();
        meta.insert("n_times".into(), self.len().to_string());
        meta.insert("r".into(), r.to_string());
        meta.insert("m".into(), m.to_string());
        meta.insert("has_forces".into(), (!self.drag.is_empty()).to_string());
        let mut payload: Vec<f64> = self.times.iter().map(|v| v.as_f64()).collect();
        for v in self.a_u.iter().chain(&self.a_p) {
            payload.extend(v.iter().map(|x| x.as_f64()));
        }
        for s in [
            &self.energy_residuals,
            &self.linear_residuals,
            &self.energy,
            &self.drag,
            &self.lift,
        ] {
            payload.extend(s.iter().map(|x| x.as_f64()));
        }
        io::write_artifact(path, ArtifactKind::Trajectory, &meta, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (h, payload) = io::read_artifact(path)?;
        h.expect_kind(ArtifactKind::Trajectory, path)?;
        let n: usize = h.parse("n_times", path)?;
        let r: usize = h.parse("r", path)?;
        let m: usize = h.parse("m", path)?;
        let forces: bool = h.parse("has_forces", path)?;
        let steps = n.saturating_sub(1);
        let nf = if forces { n } else { 0 };
        if payload.len() != n + n * (r + m) + 2 * steps + n + 2 * nf {
            return Err(Error::format(path, "payload length disagrees with header counts"));
        }
        let mut it = payload.into_iter().map(T::lit);
        let mut take = |k: usize| -> Vec<T> { it.by_ref().take(k).collect() };
        let times = take(n);
        let a_u = (0..n).map(|_| take(r)).collect();
        let a_p = (0..n).map(|_| take(m)).collect();
        Ok(Self {
            times,
            a_u,
            a_p,
            energy_residuals: take(steps),
            linear_residuals: take(steps),
            energy: take(n),
            drag: take(nf),
            lift: take(nf),
        })
    }
}

/// Runs `n_steps` reduced steps from `(a_u, a_p)` at time `t_start`.
pub fn run_rom<T: Real>(
    model: &ReducedModel<T>,
    a_u: Vec<T>,
    a_p: Vec<T>,
    t_start: f64,
    n_steps: usize,
) -> Result<RomTrajectory<T>> {
    model.check_coords(&a_u, &a_p)?;
    let dt = model.dt.as_f64();
    let mut traj = RomTrajectory {
        times: Vec::with_capacity(n_steps + 1),
        a_u: Vec::with_capacity(n_steps + 1),
        a_p: Vec::with_capacity(n_steps + 1),
        energy_residuals: Vec::with_capacity(n_steps),
        linear_residuals: Vec::with_capacity(n_steps),
        energy: Vec::with_capacity(n_steps + 1),
        drag: Vec::new(),
        lift: Vec::new(),
    };
    let record = |traj: &mut RomTrajectory<T>, t: f64, u: Vec<T>, p: Vec<T>| {
        traj.times.push(T::lit(t));
        traj.energy.push(model.kinetic_energy(&u));
        if let Some((d, l)) = model.drag_lift(&u, &p) {
            traj.drag.push(d);
            traj.lift.push(l);
        }
        traj.a_u.push(u);
        traj.a_p.push(p);
    };
    record(&mut traj, t_start, a_u, a_p);
    for n in 1..=n_steps {
        let t = t_start + n as f64 * dt;
        let (u, p, rep) = {
            let (u0, p0) = (&traj.a_u[n - 1], &traj.a_p[n - 1]);
            model.step(u0, p0).map_err(|e| Error::SolverFailure {
                time: t,
                reason: e.to_string(),
            })?
        };
        if !u.iter().chain(&p).all(|v| v.is_finite()) {
            return Err(Error::SolverFailure {
                time: t,
                reason: "non-finite reduced coordinates".into(),
            });
        }
        traj.energy_residuals.push(rep.energy_residual);
        traj.linear_residuals.push(rep.linear_residual);
        record(&mut traj, t, u, p);
    }
    Ok(traj)
}

/// Full-order fields on a time grid, used as the error reference.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceFields<'a, T> {
    pub times: &'a [T],
    pub velocity: &'a [Vec<T>],
    pub pressure: &'a [Vec<T>],
}

impl<'a, T: Real> ReferenceFields<'a, T> {
    /// Index of the reference time closest to `t`, if within roundoff.
    fn index_of(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&s| (s.as_f64() - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

impl<'a, T: Real> From<&'a SnapshotSet<T>> for ReferenceFields<'a, T> {
    fn from(set: &'a SnapshotSet<T>) -> Self {
        Self {
            times: &set.times,
            velocity: &set.velocity,
            pressure: &set.pressure,
        }
    }
}

/// Number of steps of size `dt` spanning `[t_start, t_end]` exactly.
pub fn steps_in_window(t_start: f64, t_end: f64, dt: f64) -> Result<usize> {
    let n = (t_end - t_start) / dt;
    let k = n.round();
    if k < 1.0 || (n - k).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "dt = {dt} does not divide the window [{t_start}, {t_end}]"
        )));
    }
    Ok(k as usize)
}

/// Runs the model from the projected reference state at `t_start` to
/// `t_end` for every `dt` and measures relative `l2(L2)` errors of the
/// reconstructed velocity and pressure against the reference.
pub fn dt_refinement_study<T: Real>(
    model: &ReducedModel<T>,
    u_basis: &PodBasis<T>,
    p_basis: &PodBasis<T>,
    reference: ReferenceFields<'_, T>,
    window: (f64, f64),
    dts: &[f64],
) -> Result<ErrorReport> {
    let (t_start, t_end) = window;
    let start = reference
        .index_of(t_start)
        .ok_or_else(|| Error::MisalignedGrids(format!("reference has no state at t = {t_start}")))?;
    let end = reference
        .index_of(t_end)
        .ok_or_else(|| Error::MisalignedGrids(format!("reference has no state at t = {t_end}")))?;
    let state = FlowState {
        u: reference.velocity[start].clone(),
        p: reference.pressure[start].clone(),
    };
    let (a_u, a_p) = project_state(u_basis, p_basis, &state)?;
    let rng = start..end + 1;
    let errors = dts
        .par_iter()
        .map(|&dt| -> Result<(f64, f64)> {
            let n = steps_in_window(t_start, t_end, dt)?;
            let traj = run_rom(&model.with_dt(T::lit(dt)), a_u.clone(), a_p.clone(), t_start, n)?;
            let eu = l2l2_relative_error(
                &traj.times,
                &traj.reconstruct_velocity(u_basis),
                &reference.times[rng.clone()],
                &reference.velocity[rng.clone()],
                &u_basis.weight,
            )?;
            let ep = l2l2_relative_error(
                &traj.times,
                &traj.reconstruct_pressure(p_basis),
                &reference.times[rng.clone()],
                &reference.pressure[rng.clone()],
                &p_basis.weight,
            )?;
            Ok((eu.value.as_f64(), ep.value.as_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport::new(
        dts.to_vec(),
        errors.iter().map(|e| e.0).collect(),
        errors.iter().map(|e| e.1).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_reference_mesh, structured_square_mesh};
    use crate::pod::modified_gram_schmidt;
    use crate::quadrature::TriangleRule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() - 0.5)
    }

    fn random_model(r: usize, m: usize, rng: &mut ChaCha8Rng, config: &RomConfig) -> ReducedModel<f64> {
        let a = random(r, r, rng);
        let k = a.transpose() * &a + DMatrix::identity(r, r);
        let tensor = (0..r)
            .map(|_| {
                let t = random(r, r, rng);
                &t - t.transpose()
            })
            .collect();
        let f = DVector::from_fn(r, |_, _| rng.gen::<f64>());
        ReducedModel::from_operators(k, random(m, r, rng), tensor, f, config).unwrap()
    }

    fn basis_pair(sys: &FemSystem<f64>, r: usize, m: usize, rng: &mut ChaCha8Rng) -> (PodBasis<f64>, PodBasis<f64>) {
        let mut u = random(sys.n_u(), r, rng);
        for j in 0..r {
            let mut c: Vec<f64> = u.column(j).iter().copied().collect();
            sys.dofs.zero_dirichlet(&mut c);
            u.column_mut(j).copy_from_slice(&c);
        }
        modified_gram_schmidt(&mut u, &sys.mass);
        let mut p = random(sys.n_p(), m, rng);
        modified_gram_schmidt(&mut p, &sys.pressure_mass);
        (
            PodBasis::from_modes(Field::Velocity, u, &sys.mass),
            PodBasis::from_modes(Field::Pressure, p, &sys.pressure_mass),
        )
    }

    #[test]
    fn zero_state_without_forcing_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut config = RomConfig::new(1e-2);
        config.forcing = Forcing::Zero;
        let mut model = random_model(4, 3, &mut rng, &config);
        model.f_r = DVector::zeros(4);
        let (u, p, _) = model.step(&[0.0; 4], &[0.0; 3]).unwrap();
        assert!(u.iter().chain(&p).all(|&v| v == 0.0));
    }

    #[test]
    fn one_mode_step_matches_hand_solution() {
        let config = RomConfig {
            nu: 0.1,
            eps: 0.01,
            dt: 0.05,
            ..RomConfig::new(0.05)
        };
        let (k, d, f) = (2.0f64, 0.7f64, 1.5f64);
        let model = ReducedModel::from_operators(
            DMatrix::from_element(1, 1, k),
            DMatrix::from_element(1, 1, d),
            vec![DMatrix::zeros(1, 1)],
            DVector::from_element(1, f),
            &config,
        )
        .unwrap();
        let (u0, p0) = (0.3f64, -0.2f64);
        let (nu, eps, dt) = (0.1, 0.01, 0.05);
        let u = (f + u0 / dt + d * p0) / (1.0 / dt + nu * k + dt * d * d / eps);
        let p = p0 - dt / eps * d * u;
        for path in [SolvePath::Eliminated, SolvePath::Monolithic] {
            let (a, b, rep) = model.with_solve_path(path).step(&[u0], &[p0]).unwrap();
            assert!((a[0] - u).abs() < 1e-13 && (b[0] - p).abs() < 1e-13);
            assert!(rep.linear_residual < 1e-14);
        }
    }

    #[test]
    fn solve_paths_agree_and_energy_balances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = RomConfig::new(1e-3);
        let model = random_model(6, 4, &mut rng, &config);
        let u0: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
        let p0: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let (ue, pe, rep) = model.step(&u0, &p0).unwrap();
        let (um, pm, _) = model.with_solve_path(SolvePath::Monolithic).step(&u0, &p0).unwrap();
        let scale = ue.iter().chain(&pe).fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in ue.iter().chain(&pe).zip(um.iter().chain(&pm)) {
            assert!((a - b).abs() < 1e-11 * scale);
        }
        assert!(rep.linear_residual < 1e-11);
        let traj = run_rom(&model, u0, p0, 0.0, 50).unwrap();
        assert!(traj.max_energy_residual() < 1e-10);
        assert_eq!(traj.len(), 51);
        assert!((traj.times[50] - 0.05).abs() < 1e-14);
    }

    #[test]
    fn reduced_convection_is_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = FemSystem::new(generate_reference_mesh::<f64>(0.09).unwrap());
        let (u, p) = basis_pair(&sys, 5, 3, &mut rng);
        let model = build_reduced_model(&u, &p, &sys, &RomConfig::new(1e-2)).unwrap();
        assert!(model.skew_defect < 1e-12);
        for _ in 0..20 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            let w: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            let n = model.convection(&w);
            let v = DVector::from_vec(a);
            assert!(v.dot(&(&n * &v)).abs() < 1e-12 * n.abs().max() * v.norm_squared());
        }
        assert!(model.forces.is_some());
    }

    #[test]
    fn reduced_stiffness_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = FemSystem::new(structured_square_mesh::<f64>(3));
        let (u, p) = basis_pair(&sys, 3, 2, &mut rng);
        let model = build_reduced_model(&u, &p, &sys, &RomConfig::new(1e-2)).unwrap();
        assert!(model.forces.is_none());
        let rule = TriangleRule::<f64>::collapsed_gauss(4);
        let mut k = DMatrix::<f64>::zeros(3, 3);
        for (t, g) in sys.assembler.geometry().iter().enumerate() {
            let nodes = sys.dofs.element_nodes(t);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let d = g.p2_gradients(*l);
                // grad phi_i as a 2x2 matrix per mode.
                let grads: Vec<[[f64; 2]; 2]> = (0..3)
                    .map(|i| {
                        let mut m = [[0.0; 2]; 2];
                        for a in 0..6 {
                            for c in 0..2 {
                                let coef = u.modes[(2 * nodes[a] + c, i)];
                                m[c][0] += coef * d[a][0];
                                m[c][1] += coef * d[a][1];
                            }
                        }
                        m
                    })
                    .collect();
                for i in 0..3 {
                    for j in 0..3 {
                        let mut s = 0.0;
                        for c in 0..2 {
                            for e in 0..2 {
                                s += grads[i][c][e] * grads[j][c][e];
                            }
                        }
                        k[(i, j)] += w * g.area * s;
                    }
                }
            }
        }
        assert!((&model.k_r - &k).abs().max() < 1e-10 * k.abs().max());
    }

    #[test]
    fn truncation_and_bad_bases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = FemSystem::new(structured_square_mesh::<f64>(3));
        let (u, p) = basis_pair(&sys, 4, 3, &mut rng);
        let config = RomConfig::new(1e-2);
        let full = build_reduced_model(&u, &p, &sys, &config).unwrap();
        let small = build_reduced_model(&u.truncate(2).unwrap(), &p.truncate(1).unwrap(), &sys, &config).unwrap();
        let cut = full.truncate(2, 1).unwrap();
        assert!((&cut.k_r - &small.k_r).abs().max() < 1e-14);
        assert!((&cut.d_r - &small.d_r).abs().max() < 1e-14);
        assert!((cut.forcing_dual_norm2() - small.forcing_dual_norm2()).abs() < 1e-12);
        let skewed = PodBasis::from_modes(Field::Velocity, &u.modes * 2.0, &sys.mass);
        assert!(matches!(
            build_reduced_model(&skewed, &p, &sys, &config),
            Err(Error::BasisMismatch(_))
        ));
    }

    #[test]
    fn trajectory_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = random_model(3, 2, &mut rng, &RomConfig::new(1e-2));
        let traj = run_rom(&model, vec![0.1, 0.2, 0.3], vec![0.0, 0.1], 1.0, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.bin");
        traj.save(&path).unwrap();
        assert_eq!(RomTrajectory::<f64>::load(&path).unwrap(), traj);
        let rows = traj.csv_rows();
        assert_eq!(rows.len(), 6);
        assert!(rows[0][2].is_nan());
    }
}
