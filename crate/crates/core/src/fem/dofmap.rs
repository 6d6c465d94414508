use std::collections::HashMap;

use crate::fem::element::P2_LOCAL_EDGES;
use crate::mesh::{BoundaryTag, Mesh};
use crate::scalar::Real;

/// Degree-of-freedom numbering for the Taylor-Hood P2-P1 pair.
///
/// P2 nodes are the mesh vertices followed by one midpoint per edge. Velocity
/// dofs interleave components: node `k` owns dofs `2k` (x) and `2k + 1` (y).
/// Pressure dofs coincide with vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap<T> {
    /// Global P2 node of each local node, per triangle.
    element_nodes: Vec<[usize; 6]>,
    /// Vertex endpoints of every edge, in numbering order.
    edges: Vec<[usize; 2]>,
    node_coords: Vec<[T; 2]>,
    node_tag: Vec<Option<BoundaryTag>>,
    dirichlet_mask: Vec<bool>,
    n_vertices: usize,
}

impl<T: Real> DofMap<T> {
    pub fn new(mesh: &Mesh<T>) -> Self {
        let nv = mesh.n_vertices();
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut element_nodes = Vec::with_capacity(mesh.n_triangles());
        for tri in mesh.triangles() {
            let mut nodes = [tri[0], tri[1], tri[2], 0, 0, 0];
            for (k, [i, j]) in P2_LOCAL_EDGES.into_iter().enumerate() {
                let (a, b) = (tri[i], tri[j]);
                let key = (a.min(b), a.max(b));
                let next = edges.len();
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    next
                });
                nodes[3 + k] = nv + e;
            }
            element_nodes.push(nodes);
        }

        let verts = mesh.vertices();
        let half = T::lit(0.5);
        let mut node_coords: Vec<[T; 2]> = verts.to_vec();
        node_coords.extend(
            edges
                .iter()
                .map(|&[a, b]| [half * (verts[a][0] + verts[b][0]), half * (verts[a][1] + verts[b][1])]),
        );

        let n_nodes = nv + edges.len();
        let mut node_tag = vec![None; n_nodes];
        for be in mesh.boundary_edges() {
            let [a, b] = be.vertices;
            let e = edge_index[&(a.min(b), a.max(b))];
            for node in [a, b, nv + e] {
                node_tag[node] = Some(be.tag);
            }
            if let Some(domain) = mesh.domain() {
                node_coords[nv + e] = domain.snap(be.tag, node_coords[nv + e]);
            }
        }
        let dirichlet_mask = node_tag.iter().flat_map(|t| [t.is_some(), t.is_some()]).collect();

        Self {
            element_nodes,
            edges,
            node_coords,
            node_tag,
            dirichlet_mask,
            n_vertices: nv,
        }
    }

    pub fn n_u(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn n_p(&self) -> usize {
        self.n_vertices
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn element_nodes(&self, t: usize) -> [usize; 6] {
        self.element_nodes[t]
    }

    /// Global velocity dof of `(triangle, local P2 node, component)`.
    pub fn velocity_dof(&self, t: usize, local: usize, comp: usize) -> usize {
        2 * self.element_nodes[t][local] + comp
    }

    /// Global pressure dof of `(triangle, local P1 node)`.
    pub fn pressure_dof(&self, t: usize, local: usize) -> usize {
        self.element_nodes[t][local]
    }

    /// P2 node coordinates; boundary midpoints lie on their circle.
    pub fn node_coords(&self) -> &[[T; 2]] {
        &self.node_coords
    }

    pub fn node_tag(&self, node: usize) -> Option<BoundaryTag> {
        self.node_tag[node]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet_mask
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet_mask[dof]
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.n_u()).filter(|&d| !self.dirichlet_mask[d]).collect()
    }

    /// Zeroes a velocity vector on every Dirichlet dof.
    pub fn zero_dirichlet(&self, u: &mut [T]) {
        for (ui, &fixed) in u.iter_mut().zip(&self.dirichlet_mask) {
            if fixed {
                *ui = T::zero();
            }
        }
    }

    /// Nodal interpolant of a vector field (no boundary constraint applied).
    pub fn interpolate_velocity(&self, f: impl Fn(T, T) -> [T; 2]) -> Vec<T> {
        self.node_coords.iter().flat_map(|p| f(p[0], p[1])).collect()
    }

    /// Nodal P1 interpolant of a scalar field.
    pub fn interpolate_pressure(&self, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.node_coords[..self.n_vertices]
            .iter()
            .map(|p| f(p[0], p[1]))
            .collect()
    }
}
