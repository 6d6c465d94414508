//! Full-order backward-Euler artificial-compression integrator and snapshot
//! generation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{debug, info};
use nalgebra::DMatrix;

use crate::diag::energy::{energy_step, EnergyNorms, EnergyParams};
use crate::error::{Error, Result};
use crate::fem::{apply_dirichlet, Assembler, DofMap};
use crate::io::{self, ArtifactKind};
use crate::mesh::{mesh_to_string, Mesh};
use crate::scalar::{dot, Real};
use crate::solver::SparseLu;
use crate::sparse::SparseOperator;

/// Body force driving the offset-cylinder flow.
pub fn reference_forcing<T: Real>(x: T, y: T) -> [T; 2] {
    let four = T::lit(4.0);
    let s = T::one() - x * x - y * y;
    [-four * y * s, four * x * s]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Forcing {
    #[default]
    Reference,
    Zero,
}

impl Forcing {
    pub fn as_str(self) -> &'static str {
        match self {
            Forcing::Reference => "reference",
            Forcing::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reference" => Some(Forcing::Reference),
            "zero" => Some(Forcing::Zero),
            _ => None,
        }
    }
}

/// How the coupled velocity-pressure system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolvePath {
    /// Sparse LU of the full `(n_u + n_p)` saddle-point matrix.
    #[default]
    Monolithic,
    /// Pressure eliminated through `Mp^{-1}`; dense, for small meshes only.
    Eliminated,
}

impl SolvePath {
    pub fn as_str(self) -> &'static str {
        match self {
            SolvePath::Monolithic => "monolithic",
            SolvePath::Eliminated => "eliminated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "monolithic" => Some(SolvePath::Monolithic),
            "eliminated" => Some(SolvePath::Eliminated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialState {
    #[default]
    Rest,
    /// Final state stored in a snapshot or checkpoint artifact.
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineConfig {
    pub nu: f64,
    pub dt: f64,
    pub eps: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub snapshot_every: usize,
    /// Snapshots are recorded from this time on (default: `t_start`).
    pub snapshot_from: Option<f64>,
    pub initial_state: InitialState,
    pub forcing: Forcing,
    pub solve_path: SolvePath,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
}

pub const DEFAULT_NU: f64 = 0.01;
pub const DEFAULT_EPS: f64 = 1e-6;

impl OfflineConfig {
    /// Config over `[0, t_end]` with the default viscosity and `eps`.
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            nu: DEFAULT_NU,
            dt,
            eps: DEFAULT_EPS,
            t_start: 0.0,
            t_end,
            snapshot_every: 1,
            snapshot_from: None,
            initial_state: InitialState::Rest,
            forcing: Forcing::Reference,
            solve_path: SolvePath::Monolithic,
            checkpoint: None,
            checkpoint_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive");
        }
        if !(self.t_end > self.t_start) {
            return bad("t_end must exceed t_start");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1");
        }
        Ok(())
    }

    /// Number of time steps covering the window.
    pub fn n_steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round().max(1.0) as usize
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t_start + step as f64 * self.dt
    }

    fn first_snapshot_step(&self) -> usize {
        match self.snapshot_from {
            Some(t) if t > self.t_start => ((t - self.t_start) / self.dt - 1e-9).ceil() as usize,
            _ => 0,
        }
    }

    /// Whether step `n` (0 = initial state) is stored as a snapshot.
    pub fn is_snapshot_step(&self, n: usize) -> bool {
        let first = self.first_snapshot_step();
        n >= first && (n - first).is_multiple_of(self.snapshot_every)
    }

    /// Key-value echo stored in artifact headers.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("nu".into(), format!("{:e}", self.nu));
        m.insert("dt".into(), format!("{:e}", self.dt));
        m.insert("eps".into(), format!("{:e}", self.eps));
        m.insert("t_start".into(), format!("{:e}", self.t_start));
        m.insert("t_end".into(), format!("{:e}", self.t_end));
        m.insert("snapshot_every".into(), self.snapshot_every.to_string());
        m.insert("first_snapshot_step".into(), self.first_snapshot_step().to_string());
        m.insert("forcing".into(), self.forcing.as_str().into());
        m.insert("solve_path".into(), self.solve_path.as_str().into());
        m
    }
}

/// Velocity and pressure coefficient vectors at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState<T> {
    pub u: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Real> FlowState<T> {
    pub fn zeros(n_u: usize, n_p: usize) -> Self {
        Self {
            u: vec![T::zero(); n_u],
            p: vec![T::zero(); n_p],
        }
    }
}

/// Mesh, spaces and every assembled operator of the full-order model.
#[derive(Debug, Clone)]
pub struct FemSystem<T: Real> {
    pub mesh: Mesh<T>,
    pub dofs: DofMap<T>,
    pub assembler: Assembler<T>,
    pub mass: SparseOperator<T>,
    pub stiffness: SparseOperator<T>,
    pub divergence: SparseOperator<T>,
    pub pressure_mass: SparseOperator<T>,
    /// Load vector of [`reference_forcing`].
    pub reference_load: Vec<T>,
    pub mesh_hash: String,
    area: T,
}

impl<T: Real> FemSystem<T> {
    pub fn new(mesh: Mesh<T>) -> Self {
        let dofs = DofMap::new(&mesh);
        let assembler = Assembler::new(&mesh, &dofs);
        let mass = assembler.velocity_mass();
        let stiffness = assembler.velocity_stiffness();
        let divergence = assembler.divergence();
        let pressure_mass = assembler.pressure_mass();
        let reference_load = assembler.forcing(|x, y, _| reference_forcing(x, y), T::zero());
        let ones = vec![T::one(); dofs.n_p()];
        let area = pressure_mass.quadratic(&ones);
        let mesh_hash = io::hash_bytes(mesh_to_string(&mesh).as_bytes());
        Self {
            mesh,
            dofs,
            assembler,
            mass,
            stiffness,
            divergence,
            pressure_mass,
            reference_load,
            mesh_hash,
            area,
        }
    }

    pub fn n_u(&self) -> usize {
        self.dofs.n_u()
    }

    pub fn n_p(&self) -> usize {
        self.dofs.n_p()
    }

    pub fn load(&self, forcing: Forcing) -> Vec<T> {
        match forcing {
            Forcing::Reference => self.reference_load.clone(),
            Forcing::Zero => vec![T::zero(); self.n_u()],
        }
    }

    /// `(p, 1) / |Omega|`
    pub fn pressure_mean(&self, p: &[T]) -> T {
        let ones = vec![T::one(); self.n_p()];
        self.pressure_mass.bilinear(&ones, p) / self.area
    }

    pub fn remove_pressure_mean(&self, p: &mut [T]) {
        let m = self.pressure_mean(p);
        for v in p.iter_mut() {
            *v -= m;
        }
    }

    /// Divergence with Dirichlet columns zeroed.
    pub fn constrained_divergence(&self) -> SparseOperator<T> {
        apply_dirichlet(&self.divergence, &vec![T::zero(); self.n_p()], &self.dofs).0
    }

    /// Discrete dual norm squared of a load vector over the constrained
    /// velocity space: `F_f^T K_ff^{-1} F_f`.
    pub fn dual_norm2(&self, load: &[T]) -> Result<T> {
        let free = self.dofs.free_dofs();
        if free.is_empty() {
            return Ok(T::zero());
        }
        let k = self.stiffness.submatrix(&free, &free);
        let f: Vec<T> = free.iter().map(|&i| load[i]).collect();
        let x = SparseLu::new(&k)?.solve(&f)?;
        Ok(dot(&f, &x))
    }

    /// Energy norms of the full-order model for a given load.
    pub fn energy_norms(&self, forcing: Forcing) -> Result<FullOrderNorms<'_, T>> {
        let load = self.load(forcing);
        let dual = self.dual_norm2(&load)?;
        Ok(FullOrderNorms {
            system: self,
            load,
            dual,
        })
    }
}

/// [`EnergyNorms`] realized with the finite element mass and stiffness.
#[derive(Debug, Clone)]
pub struct FullOrderNorms<'a, T: Real> {
    system: &'a FemSystem<T>,
    load: Vec<T>,
    dual: T,
}

impl<T: Real> EnergyNorms<T> for FullOrderNorms<'_, T> {
    fn velocity_norm2(&self, u: &[T]) -> T {
        self.system.mass.quadratic(u)
    }

    fn pressure_norm2(&self, p: &[T]) -> T {
        self.system.pressure_mass.quadratic(p)
    }

    fn gradient_norm2(&self, u: &[T]) -> T {
        self.system.stiffness.quadratic(u)
    }

    fn work(&self, u: &[T]) -> T {
        dot(&self.load, u)
    }

    fn forcing_dual_norm2(&self) -> T {
        self.dual
    }
}

/// Blocks of the saddle-point system
/// `[[A, -B^T], [B, c Mp]] [u; p] = [r_u; r_p]`.
#[derive(Debug, Clone, Copy)]
pub struct CoupledBlocks<'a, T> {
    pub a: &'a SparseOperator<T>,
    pub b: &'a SparseOperator<T>,
    pub mp: &'a SparseOperator<T>,
    /// `c`, equal to `eps / dt` for the AC scheme.
    pub pressure_scale: T,
}

/// Slot maps from the four blocks into one monolithic pattern.
#[derive(Debug, Clone)]
struct MonolithicLayout<T> {
    pattern: SparseOperator<T>,
    a_slots: Vec<usize>,
    b_slots: Vec<usize>,
    bt_slots: Vec<usize>,
    mp_slots: Vec<usize>,
}

impl<T: Real> MonolithicLayout<T> {
    fn new(blocks: &CoupledBlocks<'_, T>) -> Self {
        let (n_p, n_u) = blocks.b.shape();
        let n = n_u + n_p;
        let mut triplets = Vec::with_capacity(blocks.a.nnz() + 2 * blocks.b.nnz() + blocks.mp.nnz());
        for r in 0..n_u {
            triplets.extend(blocks.a.row(r).map(|(c, _)| (r, c, T::zero())));
        }
        for q in 0..n_p {
            for (c, _) in blocks.b.row(q) {
                triplets.push((n_u + q, c, T::zero()));
                triplets.push((c, n_u + q, T::zero()));
            }
            triplets.extend(blocks.mp.row(q).map(|(c, _)| (n_u + q, n_u + c, T::zero())));
        }
        let pattern = SparseOperator::from_triplets(n, n, &triplets);
        let slot = |r, c| pattern.slot(r, c).expect("monolithic slot");
        let mut a_slots = Vec::with_capacity(blocks.a.nnz());
        for r in 0..n_u {
            a_slots.extend(blocks.a.row(r).map(|(c, _)| slot(r, c)));
        }
        let (mut b_slots, mut bt_slots, mut mp_slots) = (Vec::new(), Vec::new(), Vec::new());
        for q in 0..n_p {
            for (c, _) in blocks.b.row(q) {
                b_slots.push(slot(n_u + q, c));
                bt_slots.push(slot(c, n_u + q));
            }
            mp_slots.extend(blocks.mp.row(q).map(|(c, _)| slot(n_u + q, n_u + c)));
        }
        Self {
            pattern,
            a_slots,
            b_slots,
            bt_slots,
            mp_slots,
        }
    }

    fn fill(&self, blocks: &CoupledBlocks<'_, T>) -> SparseOperator<T> {
        let mut values = vec![T::zero(); self.pattern.nnz()];
        for (&s, &v) in self.a_slots.iter().zip(blocks.a.values()) {
            values[s] += v;
        }
        for ((&s, &st), &v) in self.b_slots.iter().zip(&self.bt_slots).zip(blocks.b.values()) {
            values[s] += v;
            values[st] -= v;
        }
        for (&s, &v) in self.mp_slots.iter().zip(blocks.mp.values()) {
            values[s] += blocks.pressure_scale * v;
        }
        self.pattern.with_values(values)
    }
}

fn norm<T: Real>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// Relative residual `||K x - r|| / ||r||` of the coupled system.
pub fn coupled_residual<T: Real>(blocks: &CoupledBlocks<'_, T>, u: &[T], p: &[T], rhs_u: &[T], rhs_p: &[T]) -> T {
    let (ru, rp) = coupled_apply(blocks, u, p);
    let mut num = T::zero();
    for (a, b) in ru.iter().zip(rhs_u).chain(rp.iter().zip(rhs_p)) {
        num += (*a - *b) * (*a - *b);
    }
    let den = (dot(rhs_u, rhs_u) + dot(rhs_p, rhs_p)).sqrt();
    if den == T::zero() {
        num.sqrt()
    } else {
        num.sqrt() / den
    }
}

fn coupled_apply<T: Real>(blocks: &CoupledBlocks<'_, T>, u: &[T], p: &[T]) -> (Vec<T>, Vec<T>) {
    let mut ru = blocks.a.mul_vec(u);
    for (r, v) in ru.iter_mut().zip(blocks.b.mul_vec_transpose(p)) {
        *r -= v;
    }
    let mut rp = blocks.b.mul_vec(u);
    for (r, v) in rp.iter_mut().zip(blocks.mp.mul_vec(p)) {
        *r += blocks.pressure_scale * v;
    }
    (ru, rp)
}

/// Solves with an existing factorization of the monolithic matrix, followed
/// by up to two rounds of iterative refinement.
fn monolithic_solve<T: Real>(
    lu: &SparseLu<T>,
    blocks: &CoupledBlocks<'_, T>,
    rhs_u: &[T],
    rhs_p: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let n_u = rhs_u.len();
    let rhs: Vec<T> = rhs_u.iter().chain(rhs_p).copied().collect();
    let mut x = lu.solve(&rhs)?;
    let rhs_norm = norm(&rhs);
    for _ in 0..2 {
        let (ru, rp) = coupled_apply(blocks, &x[..n_u], &x[n_u..]);
        let res: Vec<T> = rhs.iter().zip(ru.iter().chain(&rp)).map(|(&b, &k)| b - k).collect();
        if norm(&res) <= T::lit(1e-14) * rhs_norm {
            break;
        }
        let dx = lu.solve(&res)?;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    let p = x.split_off(n_u);
    Ok((x, p))
}

/// Pressure-eliminated dense solve: `p = Mp^{-1} (r_p - B u) / c` and
/// `(A + B^T Mp^{-1} B / c) u = r_u + B^T Mp^{-1} r_p / c`.
fn eliminated_solve<T: Real>(blocks: &CoupledBlocks<'_, T>, rhs_u: &[T], rhs_p: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let c = blocks.pressure_scale;
    let mp = blocks
        .mp
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::Factorization("pressure mass is not positive definite".into()))?;
    let b = blocks.b.to_dense();
    let mp_inv_b = mp.solve(&b);
    let schur = blocks.a.to_dense() + b.transpose() * &mp_inv_b / c;
    let mp_inv_rp = mp.solve(&nalgebra::DVector::from_column_slice(rhs_p));
    let rhs = nalgebra::DVector::from_column_slice(rhs_u) + b.transpose() * &mp_inv_rp / c;
    let u = schur
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Factorization("eliminated momentum matrix is singular".into()))?;
    let p = (mp_inv_rp - &mp_inv_b * &u) / c;
    Ok((u.as_slice().to_vec(), p.as_slice().to_vec()))
}

/// One linear solve of the coupled system by the chosen path.
pub fn solve_coupled_system<T: Real>(
    blocks: &CoupledBlocks<'_, T>,
    rhs_u: &[T],
    rhs_p: &[T],
    path: SolvePath,
) -> Result<(Vec<T>, Vec<T>)> {
    let (n_p, n_u) = blocks.b.shape();
    if rhs_u.len() != n_u || rhs_p.len() != n_p || blocks.a.shape() != (n_u, n_u) || blocks.mp.shape() != (n_p, n_p) {
        return Err(Error::DimensionMismatch {
            context: "coupled system blocks",
            expected: n_u + n_p,
            actual: rhs_u.len() + rhs_p.len(),
        });
    }
    match path {
        SolvePath::Monolithic => {
            let layout = MonolithicLayout::new(blocks);
            let lu = SparseLu::new(&layout.fill(blocks))?;
            monolithic_solve(&lu, blocks, rhs_u, rhs_p)
        }
        SolvePath::Eliminated => eliminated_solve(blocks, rhs_u, rhs_p),
    }
}

/// Diagnostics of one full-order step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport<T> {
    pub linear_residual: T,
    pub energy_residual: T,
}

/// Time stepper reusing the monolithic pattern and symbolic factorization.
#[derive(Debug)]
pub struct AcFemStepper<'a, T: Real> {
    system: &'a FemSystem<T>,
    params: EnergyParams<T>,
    path: SolvePath,
    /// `M / dt + nu K` on the shared velocity pattern.
    base: SparseOperator<T>,
    b: SparseOperator<T>,
    load: Vec<T>,
    norms: FullOrderNorms<'a, T>,
    layout: Option<MonolithicLayout<T>>,
    lu: Option<SparseLu<T>>,
}

impl<'a, T: Real> AcFemStepper<'a, T> {
    pub fn new(system: &'a FemSystem<T>, nu: T, dt: T, eps: T, forcing: Forcing, path: SolvePath) -> Result<Self> {
        let base = system.mass.linear_combination(T::one() / dt, &system.stiffness, nu);
        let load = system.load(forcing);
        let (_, load) = apply_dirichlet(&base, &load, &system.dofs);
        Ok(Self {
            system,
            params: EnergyParams { nu, eps, dt },
            path,
            base,
            b: system.constrained_divergence(),
            load,
            norms: system.energy_norms(forcing)?,
            layout: None,
            lu: None,
        })
    }

    pub fn from_config(system: &'a FemSystem<T>, config: &OfflineConfig) -> Result<Self> {
        Self::new(
            system,
            T::lit(config.nu),
            T::lit(config.dt),
            T::lit(config.eps),
            config.forcing,
            config.solve_path,
        )
    }

    pub fn norms(&self) -> &FullOrderNorms<'a, T> {
        &self.norms
    }

    /// Advances `(u^n, p^n)` by one step.
    pub fn step(&mut self, state: &FlowState<T>) -> Result<(FlowState<T>, StepReport<T>)> {
        let sys = self.system;
        let EnergyParams { dt, eps, .. } = self.params;
        if state.u.len() != sys.n_u() || state.p.len() != sys.n_p() {
            return Err(Error::DimensionMismatch {
                context: "full-order state",
                expected: sys.n_u() + sys.n_p(),
                actual: state.u.len() + state.p.len(),
            });
        }
        let conv = sys.assembler.convection(&state.u)?;
        let a = self.base.linear_combination(T::one(), &conv, T::one());
        let mut rhs_u = sys.mass.mul_vec(&state.u);
        for (r, &f) in rhs_u.iter_mut().zip(&self.load) {
            *r = *r / dt + f;
        }
        let (a, rhs_u) = apply_dirichlet(&a, &rhs_u, &sys.dofs);
        let scale = eps / dt;
        let rhs_p: Vec<T> = sys
            .pressure_mass
            .mul_vec(&state.p)
            .into_iter()
            .map(|v| scale * v)
            .collect();
        let blocks = CoupledBlocks {
            a: &a,
            b: &self.b,
            mp: &sys.pressure_mass,
            pressure_scale: scale,
        };

        let (u, mut p) = match self.path {
            SolvePath::Monolithic => {
                let layout = self.layout.get_or_insert_with(|| MonolithicLayout::new(&blocks));
                let k = layout.fill(&blocks);
                let lu = match self.lu.as_mut() {
                    Some(lu) => lu,
                    None => self.lu.insert(SparseLu::analyze(&k)?),
                };
                lu.factor(&k)?;
                monolithic_solve(lu, &blocks, &rhs_u, &rhs_p)?
            }
            SolvePath::Eliminated => eliminated_solve(&blocks, &rhs_u, &rhs_p)?,
        };
        let linear_residual = coupled_residual(&blocks, &u, &p, &rhs_u, &rhs_p);
        sys.remove_pressure_mean(&mut p);
        let next = FlowState { u, p };
        let energy = energy_step(&self.norms, &self.params, (&state.u, &state.p), (&next.u, &next.p));
        Ok((
            next,
            StepReport {
                linear_residual,
                energy_residual: energy.relative_residual(),
            },
        ))
    }
}

/// One step of the scheme from scratch (no factorization reuse).
pub fn ac_fem_step<T: Real>(
    system: &FemSystem<T>,
    state: &FlowState<T>,
    config: &OfflineConfig,
) -> Result<FlowState<T>> {
    Ok(AcFemStepper::from_config(system, config)?.step(state)?.0)
}

/// Snapshots of one offline run.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet<T> {
    pub times: Vec<T>,
    /// Velocity columns, one per time.
    pub velocity: Vec<Vec<T>>,
    pub pressure: Vec<Vec<T>>,
    /// Relative energy-equality residual of every step taken.
    pub energy_residuals: Vec<T>,
    /// State after the last completed step.
    pub final_state: FlowState<T>,
    pub steps_done: usize,
    pub config: OfflineConfig,
    pub mesh_hash: String,
}

impl<T: Real> SnapshotSet<T> {
    pub fn n_snapshots(&self) -> usize {
        self.times.len()
    }

    pub fn n_u(&self) -> usize {
        self.final_state.u.len()
    }

    pub fn n_p(&self) -> usize {
        self.final_state.p.len()
    }

    pub fn velocity_matrix(&self) -> DMatrix<T> {
        columns_to_matrix(&self.velocity, self.n_u())
    }

    pub fn pressure_matrix(&self) -> DMatrix<T> {
        columns_to_matrix(&self.pressure, self.n_p())
    }

    pub fn final_time(&self) -> f64 {
        self.config.time(self.steps_done)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(path.as_ref(), ArtifactKind::Snapshots)
    }

    fn write(&self, path: &Path, kind: ArtifactKind) -> Result<()> {
        let mut meta = self.config.echo();
        meta.insert("n_u".into(), self.n_u().to_string());
        meta.insert("n_p".into(), self.n_p().to_string());
        meta.insert("n_snapshots".into(), self.n_snapshots().to_string());
        meta.insert("n_residuals".into(), self.energy_residuals.len().to_string());
        meta.insert("steps_done".into(), self.steps_done.to_string());
        meta.insert("mesh_hash".into(), self.mesh_hash.clone());
        let mut payload: Vec<f64> = self.times.iter().map(|t| t.as_f64()).collect();
        for col in self.velocity.iter().chain(&self.pressure) {
            payload.extend(col.iter().map(|v| v.as_f64()));
        }
        payload.extend(self.energy_residuals.iter().map(|v| v.as_f64()));
        payload.extend(self.final_state.u.iter().chain(&self.final_state.p).map(|v| v.as_f64()));
        io::write_artifact(path, kind, &meta, &payload)
    }

    /// Loads a snapshot or checkpoint artifact. The config echo restores the
    /// numerical parameters; file paths are not stored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (h, payload) = io::read_artifact(path)?;
        if h.kind != ArtifactKind::Snapshots && h.kind != ArtifactKind::Checkpoint {
            h.expect_kind(ArtifactKind::Snapshots, path)?;
        }
        let n_u: usize = h.parse("n_u", path)?;
        let n_p: usize = h.parse("n_p", path)?;
        let ns: usize = h.parse("n_snapshots", path)?;
        let nr: usize = h.parse("n_residuals", path)?;
        let expected = ns + ns * (n_u + n_p) + nr + n_u + n_p;
        if payload.len() != expected {
            return Err(Error::format(path, "payload length disagrees with header counts"));
        }
        let mut it = payload.into_iter().map(T::lit);
        let mut take = |n: usize| -> Vec<T> { it.by_ref().take(n).collect() };
        let times = take(ns);
        let velocity = (0..ns).map(|_| take(n_u)).collect();
        let pressure = (0..ns).map(|_| take(n_p)).collect();
        let energy_residuals = take(nr);
        let u = take(n_u);
        let p = take(n_p);
        let mut config = OfflineConfig::new(h.parse("dt", path)?, h.parse("t_end", path)?);
        config.nu = h.parse("nu", path)?;
        config.eps = h.parse("eps", path)?;
        config.t_start = h.parse("t_start", path)?;
        config.snapshot_every = h.parse("snapshot_every", path)?;
        let first: usize = h.parse("first_snapshot_step", path)?;
        if first > 0 {
            config.snapshot_from = Some(config.time(first));
        }
        config.forcing = h
            .get("forcing")
            .and_then(Forcing::parse)
            .ok_or_else(|| Error::format(path, "missing forcing"))?;
        config.solve_path = h
            .get("solve_path")
            .and_then(SolvePath::parse)
            .ok_or_else(|| Error::format(path, "missing solve_path"))?;
        Ok(Self {
            times,
            velocity,
            pressure,
            energy_residuals,
            final_state: FlowState { u, p },
            steps_done: h.parse("steps_done", path)?,
            config,
            mesh_hash: h.get("mesh_hash").unwrap_or_default().to_string(),
        })
    }
}

pub(crate) fn columns_to_matrix<T: Real>(cols: &[Vec<T>], rows: usize) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Reads the final state stored in a snapshot or checkpoint artifact.
pub fn load_state<T: Real>(path: impl AsRef<Path>) -> Result<FlowState<T>> {
    Ok(SnapshotSet::<T>::load(path)?.final_state)
}

fn resumable<T: Real>(cp: &SnapshotSet<T>, config: &OfflineConfig, mesh_hash: &str, n_steps: usize) -> bool {
    let a = cp.config.echo();
    let b = config.echo();
    let same = [
        "nu",
        "dt",
        "eps",
        "t_start",
        "snapshot_every",
        "first_snapshot_step",
        "forcing",
        "solve_path",
    ]
    .iter()
    .all(|k| a.get(*k) == b.get(*k));
    same && cp.mesh_hash == mesh_hash && cp.steps_done <= n_steps
}

/// Runs the scheme on a mesh, resolving the configured initial state.
pub fn run_offline<T: Real>(config: &OfflineConfig, mesh: Mesh<T>) -> Result<SnapshotSet<T>> {
    let system = FemSystem::new(mesh);
    let initial = match &config.initial_state {
        InitialState::Rest => None,
        InitialState::FromFile(path) => Some(load_state(path)?),
    };
    run_offline_with(&system, config, initial)
}

/// Runs the scheme from `initial` (rest if `None`). With a checkpoint path
/// configured, a compatible existing checkpoint is resumed and progress is
/// saved every `checkpoint_every` steps and on failure.
pub fn run_offline_with<T: Real>(
    system: &FemSystem<T>,
    config: &OfflineConfig,
    initial: Option<FlowState<T>>,
) -> Result<SnapshotSet<T>> {
    config.validate()?;
    let n_steps = config.n_steps();
    let mut state = initial.unwrap_or_else(|| FlowState::zeros(system.n_u(), system.n_p()));
    if state.u.len() != system.n_u() || state.p.len() != system.n_p() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: system.n_u() + system.n_p(),
            actual: state.u.len() + state.p.len(),
        });
    }
    system.dofs.zero_dirichlet(&mut state.u);

    let mut set = SnapshotSet {
        times: Vec::new(),
        velocity: Vec::new(),
        pressure: Vec::new(),
        energy_residuals: Vec::new(),
        final_state: state.clone(),
        steps_done: 0,
        config: config.clone(),
        mesh_hash: system.mesh_hash.clone(),
    };
    if let Some(path) = config.checkpoint.as_ref().filter(|p| p.exists()) {
        let cp = SnapshotSet::<T>::load(path)?;
        if resumable(&cp, config, &system.mesh_hash, n_steps) {
            info!("resuming from checkpoint {} at step {}", path.display(), cp.steps_done);
            set = SnapshotSet {
                config: config.clone(),
                ..cp
            };
            state = set.final_state.clone();
        } else {
            info!("ignoring incompatible checkpoint {}", path.display());
        }
    }
    if set.steps_done == 0 && set.times.is_empty() && config.is_snapshot_step(0) {
        set.times.push(T::lit(config.time(0)));
        set.velocity.push(state.u.clone());
        set.pressure.push(state.p.clone());
    }

    let mut stepper = AcFemStepper::from_config(system, config)?;
    let checkpoint = |set: &SnapshotSet<T>| -> Result<()> {
        match &config.checkpoint {
            Some(path) => set.write(path, ArtifactKind::Checkpoint),
            None => Ok(()),
        }
    };
    for n in set.steps_done..n_steps {
        let (next, report) = match stepper.step(&state) {
            Ok(r) => r,
            Err(e) => {
                checkpoint(&set)?;
                return Err(Error::SolverFailure {
                    time: config.time(n),
                    reason: e.to_string(),
                });
            }
        };
        let healthy = next.u.iter().chain(&next.p).all(|v| v.is_finite());
        if !healthy {
            checkpoint(&set)?;
            return Err(Error::SolverFailure {
                time: config.time(n),
                reason: "non-finite state".into(),
            });
        }
        state = next;
        set.energy_residuals.push(report.energy_residual);
        set.steps_done = n + 1;
        if config.is_snapshot_step(n + 1) {
            set.times.push(T::lit(config.time(n + 1)));
            set.velocity.push(state.u.clone());
            set.pressure.push(state.p.clone());
        }
        set.final_state = state.clone();
        if (n + 1) % 100 == 0 || n + 1 == n_steps {
            debug!(
                "step {}/{} t={:.6} linear residual {:e} energy residual {:e}",
                n + 1,
                n_steps,
                config.time(n + 1),
                report.linear_residual,
                report.energy_residual
            );
        }
        if (n + 1) % config.checkpoint_every == 0 && n + 1 < n_steps {
            checkpoint(&set)?;
        }
    }
    checkpoint(&set)?;
    Ok(set)
}
