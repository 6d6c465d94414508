//! Element integration and global assembly for the Taylor-Hood pair.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::dofmap::DofMap;
use crate::fem::element::{p2_values, ElementGeometry};
use crate::mesh::Mesh;
use crate::quadrature::TriangleRule;
use crate::scalar::Real;
use crate::sparse::SparseOperator;

/// How element contributions are computed. Scattering into the global
/// operator is always sequential in triangle order, so both modes produce
/// bitwise-identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

type Local6<T> = [[T; 6]; 6];

/// Precomputed element geometry, quadrature and the shared P2 velocity
/// sparsity pattern.
#[derive(Debug, Clone)]
pub struct Assembler<T> {
    geometry: Vec<ElementGeometry<T>>,
    element_nodes: Vec<[usize; 6]>,
    vertex_nodes: Vec<[usize; 3]>,
    rule: TriangleRule<T>,
    /// `P2` shape values at each quadrature point.
    shape: Vec<[T; 6]>,
    pattern: SparseOperator<T>,
    /// Value slot of `(triangle, i, j)` for the x-component block; the
    /// y-component slot is stored right after it.
    slots: Vec<[[[usize; 2]; 6]; 6]>,
    n_u: usize,
    n_p: usize,
    execution: Execution,
}

impl<T: Real> Assembler<T> {
    pub fn new(mesh: &Mesh<T>, dofs: &DofMap<T>) -> Self {
        let geometry: Vec<_> = (0..mesh.n_triangles())
            .map(|t| ElementGeometry::new(mesh.triangle_coords(t)))
            .collect();
        let element_nodes: Vec<_> = (0..mesh.n_triangles()).map(|t| dofs.element_nodes(t)).collect();
        let vertex_nodes = mesh.triangles().to_vec();
        let rule = TriangleRule::degree5();
        let shape = rule.points.iter().map(|&l| p2_values(l)).collect();

        let n_u = dofs.n_u();
        let mut triplets = Vec::with_capacity(element_nodes.len() * 72);
        for nodes in &element_nodes {
            for &ni in nodes {
                for &nj in nodes {
                    for c in 0..2 {
                        triplets.push((2 * ni + c, 2 * nj + c, T::zero()));
                    }
                }
            }
        }
        let pattern = SparseOperator::from_triplets(n_u, n_u, &triplets);
        let slots = element_nodes
            .iter()
            .map(|nodes| {
                let mut s = [[[0usize; 2]; 6]; 6];
                for (i, &ni) in nodes.iter().enumerate() {
                    for (j, &nj) in nodes.iter().enumerate() {
                        for c in 0..2 {
                            s[i][j][c] = pattern.slot(2 * ni + c, 2 * nj + c).expect("pattern slot");
                        }
                    }
                }
                s
            })
            .collect();

        Self {
            geometry,
            element_nodes,
            vertex_nodes,
            rule,
            shape,
            pattern,
            slots,
            n_u,
            n_p: dofs.n_p(),
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn geometry(&self) -> &[ElementGeometry<T>] {
        &self.geometry
    }

    /// Sparsity pattern shared by every velocity-velocity operator.
    pub fn velocity_pattern(&self) -> &SparseOperator<T> {
        &self.pattern
    }

    fn map_elements<L: Send>(&self, f: impl Fn(usize) -> L + Sync + Send) -> Vec<L> {
        match self.execution {
            Execution::Serial => (0..self.geometry.len()).map(f).collect(),
            Execution::Parallel => (0..self.geometry.len()).into_par_iter().map(f).collect(),
        }
    }

    /// Assembles a component-block-diagonal velocity operator from scalar
    /// element matrices (row = test function, column = trial function).
    fn assemble_blocks(&self, local: impl Fn(usize) -> Local6<T> + Sync + Send) -> SparseOperator<T> {
        let locals = self.map_elements(local);
        let mut values = vec![T::zero(); self.pattern.nnz()];
        for (slots, m) in self.slots.iter().zip(&locals) {
            for i in 0..6 {
                for j in 0..6 {
                    for c in 0..2 {
                        values[slots[i][j][c]] += m[i][j];
                    }
                }
            }
        }
        self.pattern.with_values(values)
    }

    pub fn velocity_mass(&self) -> SparseOperator<T> {
        self.assemble_blocks(|t| {
            let g = &self.geometry[t];
            let mut m = [[T::zero(); 6]; 6];
            for (q, &w) in self.rule.weights.iter().enumerate() {
                let n = &self.shape[q];
                let wa = w * g.area;
                for i in 0..6 {
                    for j in 0..6 {
                        m[i][j] += wa * n[i] * n[j];
                    }
                }
            }
            m
        })
    }

    pub fn velocity_stiffness(&self) -> SparseOperator<T> {
        self.assemble_blocks(|t| {
            let g = &self.geometry[t];
            let mut m = [[T::zero(); 6]; 6];
            for (q, &w) in self.rule.weights.iter().enumerate() {
                let d = g.p2_gradients(self.rule.points[q]);
                let wa = w * g.area;
                for i in 0..6 {
                    for j in 0..6 {
                        m[i][j] += wa * (d[i][0] * d[j][0] + d[i][1] * d[j][1]);
                    }
                }
            }
            m
        })
    }

    /// Skew-symmetrized convection operator `N(w)` with entries
    /// `N[v][u] = 1/2 (w . grad u, v) - 1/2 (w . grad v, u)`.
    pub fn convection(&self, w: &[T]) -> Result<SparseOperator<T>> {
        if w.len() != self.n_u {
            return Err(Error::DimensionMismatch {
                context: "convection advecting field",
                expected: self.n_u,
                actual: w.len(),
            });
        }
        let half = T::lit(0.5);
        Ok(self.assemble_blocks(|t| {
            let g = &self.geometry[t];
            let nodes = &self.element_nodes[t];
            let mut a = [[T::zero(); 6]; 6];
            for (q, &wq) in self.rule.weights.iter().enumerate() {
                let n = &self.shape[q];
                let d = g.p2_gradients(self.rule.points[q]);
                let (mut wx, mut wy) = (T::zero(), T::zero());
                for k in 0..6 {
                    wx += w[2 * nodes[k]] * n[k];
                    wy += w[2 * nodes[k] + 1] * n[k];
                }
                let wa = wq * g.area;
                for j in 0..6 {
                    let adv = wa * (wx * d[j][0] + wy * d[j][1]);
                    for i in 0..6 {
                        a[i][j] += adv * n[i];
                    }
                }
            }
            let mut m = [[T::zero(); 6]; 6];
            for i in 0..6 {
                for j in 0..6 {
                    m[i][j] = half * (a[i][j] - a[j][i]);
                }
            }
            m
        }))
    }

    /// Divergence operator `B[q][v] = (div phi_v, psi_q)`, shape `n_p x n_u`.
    pub fn divergence(&self) -> SparseOperator<T> {
        let locals = self.map_elements(|t| {
            let g = &self.geometry[t];
            let mut m = [[[T::zero(); 2]; 6]; 3];
            for (q, &w) in self.rule.weights.iter().enumerate() {
                let l = self.rule.points[q];
                let d = g.p2_gradients(l);
                let wa = w * g.area;
                for i in 0..3 {
                    for j in 0..6 {
                        for c in 0..2 {
                            m[i][j][c] += wa * l[i] * d[j][c];
                        }
                    }
                }
            }
            m
        });
        let mut triplets = Vec::with_capacity(locals.len() * 36);
        for (t, m) in locals.iter().enumerate() {
            let verts = &self.vertex_nodes[t];
            let nodes = &self.element_nodes[t];
            for i in 0..3 {
                for j in 0..6 {
                    for c in 0..2 {
                        triplets.push((verts[i], 2 * nodes[j] + c, m[i][j][c]));
                    }
                }
            }
        }
        SparseOperator::from_triplets(self.n_p, self.n_u, &triplets)
    }

    /// P1 mass matrix, integrated exactly: `area / 12 * (1 + delta_ij)`.
    pub fn pressure_mass(&self) -> SparseOperator<T> {
        let twelfth = T::one() / T::lit(12.0);
        let mut triplets = Vec::with_capacity(self.geometry.len() * 9);
        for (t, g) in self.geometry.iter().enumerate() {
            let verts = &self.vertex_nodes[t];
            for i in 0..3 {
                for j in 0..3 {
                    let factor = if i == j { T::lit(2.0) } else { T::one() };
                    triplets.push((verts[i], verts[j], g.area * twelfth * factor));
                }
            }
        }
        SparseOperator::from_triplets(self.n_p, self.n_p, &triplets)
    }

    /// Load vector `(f(., t), phi_v)` for a body force `f(x, y, t)`.
    pub fn forcing(&self, f: impl Fn(T, T, T) -> [T; 2] + Sync + Send, time: T) -> Vec<T> {
        let locals = self.map_elements(|t| {
            let g = &self.geometry[t];
            let mut m = [[T::zero(); 2]; 6];
            for (q, &w) in self.rule.weights.iter().enumerate() {
                let p = g.point(self.rule.points[q]);
                let fq = f(p[0], p[1], time);
                let n = &self.shape[q];
                let wa = w * g.area;
                for i in 0..6 {
                    for c in 0..2 {
                        m[i][c] += wa * fq[c] * n[i];
                    }
                }
            }
            m
        });
        let mut out = vec![T::zero(); self.n_u];
        for (t, m) in locals.iter().enumerate() {
            for (i, &node) in self.element_nodes[t].iter().enumerate() {
                for c in 0..2 {
                    out[2 * node + c] += m[i][c];
                }
            }
        }
        out
    }
}

pub fn assemble_velocity_mass<T: Real>(mesh: &Mesh<T>, dofs: &DofMap<T>) -> SparseOperator<T> {
    Assembler::new(mesh, dofs).velocity_mass()
}

pub fn assemble_velocity_stiffness<T: Real>(mesh: &Mesh<T>, dofs: &DofMap<T>) -> SparseOperator<T> {
    Assembler::new(mesh, dofs).velocity_stiffness()
}

pub fn assemble_divergence<T: Real>(mesh: &Mesh<T>, dofs: &DofMap<T>) -> SparseOperator<T> {
    Assembler::new(mesh, dofs).divergence()
}

pub fn assemble_pressure_mass<T: Real>(mesh: &Mesh<T>, dofs: &DofMap<T>) -> SparseOperator<T> {
    Assembler::new(mesh, dofs).pressure_mass()
}

pub fn assemble_convection_skew<T: Real>(mesh: &Mesh<T>, dofs: &DofMap<T>, w: &[T]) -> Result<SparseOperator<T>> {
    Assembler::new(mesh, dofs).convection(w)
}

pub fn assemble_forcing<T: Real>(
    mesh: &Mesh<T>,
    dofs: &DofMap<T>,
    f: impl Fn(T, T, T) -> [T; 2] + Sync + Send,
    time: T,
) -> Vec<T> {
    Assembler::new(mesh, dofs).forcing(f, time)
}

/// Imposes homogeneous Dirichlet conditions by symmetric elimination.
///
/// * square velocity operators: constrained rows and columns are zeroed, the
///   diagonal set to one and the matching right-hand side entries to zero;
/// * `n_p x n_u` operators: constrained columns are zeroed;
/// * `n_u x n_p` operators: constrained rows are zeroed.
///
/// The sparsity pattern is preserved. `rhs` must have one entry per row.
pub fn apply_dirichlet<T: Real>(op: &SparseOperator<T>, rhs: &[T], dofs: &DofMap<T>) -> (SparseOperator<T>, Vec<T>) {
    let (rows, cols) = op.shape();
    let n_u = dofs.n_u();
    assert_eq!(rhs.len(), rows, "right-hand side length");
    let mask = dofs.dirichlet_mask();
    let constrain_rows = rows == n_u;
    let constrain_cols = cols == n_u;
    let square = constrain_rows && constrain_cols;

    let mut values = op.values().to_vec();
    let mut rhs = rhs.to_vec();
    for r in 0..rows {
        let row_fixed = constrain_rows && mask[r];
        for k in op.row_ptr()[r]..op.row_ptr()[r + 1] {
            let c = op.col_idx()[k];
            let col_fixed = constrain_cols && mask[c];
            if row_fixed || col_fixed {
                values[k] = if square && r == c { T::one() } else { T::zero() };
            }
        }
        if row_fixed {
            rhs[r] = T::zero();
        }
    }
    (op.with_values(values), rhs)
}
