//! Incomplete adaptive k-d trees: refinement, balancing, carving, surrogate
//! boundary extraction, and node numbering with hanging constraints.

mod nodes;
mod tree;
mod vtk;

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::expr::EvalError;
use crate::geometry::{classify_element_all, ElementClass, Geometry};
use crate::problem::ProblemSpec;

pub use nodes::{NodeTable, Weights};
pub use tree::{balance_2to1, build_tree, find_covering, max_face_level_jump, morton_sort, TreeKey, MAX_DEPTH};
pub use vtk::{write_vtk, PointField};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("refinement would exceed the maximum tree depth {0}")]
    DepthExceeded(u32),
    #[error("refine_where: {0}")]
    Refinement(#[source] EvalError),
    #[error("no interior elements remain after carving; check that the geometry overlaps the domain box")]
    EmptyKeptSet,
    #[error("hanging-node constraints do not resolve at node {0}")]
    HangingCycle(usize),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaceKind {
    /// Borders a dropped (exterior or intercepted) region.
    Geometry,
    /// Lies on the domain box.
    Wall,
}

/// A kept-element face on the surrogate boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFace {
    /// Index into [`IncompleteMesh::elements`].
    pub owner: usize,
    pub axis: usize,
    /// Outward normal points along +axis.
    pub positive: bool,
    /// Face box; `lo[axis] == hi[axis]`.
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub kind: FaceKind,
}

impl SurrogateFace {
    pub fn normal(&self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis] = if self.positive { 1.0 } else { -1.0 };
        n
    }

    pub fn area(&self, dim: usize) -> f64 {
        (0..dim).filter(|&k| k != self.axis).map(|k| self.hi[k] - self.lo[k]).product()
    }
}

#[derive(Debug, Clone)]
pub struct IncompleteMesh {
    pub dimension: usize,
    pub domain_min: [f64; 3],
    pub domain_max: [f64; 3],
    /// Kept leaves in Morton order.
    pub elements: Vec<TreeKey>,
    /// Corner node ids per element, corner `c` at offset bit k of `c` on axis k.
    pub element_nodes: Vec<[u32; 8]>,
    pub nodes: NodeTable,
    pub faces: Vec<SurrogateFace>,
    /// Leaves of the full balanced tree (kept or not).
    pub leaf_count: usize,
}

impl IncompleteMesh {
    pub fn corners_per_element(&self) -> usize {
        1 << self.dimension
    }

    pub fn element_bounds(&self, e: usize) -> ([f64; 3], [f64; 3]) {
        self.elements[e].bounds(self.domain_min, self.domain_max, self.dimension)
    }

    /// Corner node ids of element `e`.
    pub fn corners(&self, e: usize) -> &[u32] {
        &self.element_nodes[e][..self.corners_per_element()]
    }

    pub fn ndof(&self) -> usize {
        self.nodes.ndof
    }

    pub fn hanging_count(&self) -> usize {
        self.nodes.hanging_count()
    }

    /// Total measure of the kept elements.
    pub fn volume(&self) -> f64 {
        (0..self.elements.len())
            .map(|e| {
                let (lo, hi) = self.element_bounds(e);
                (0..self.dimension).map(|k| hi[k] - lo[k]).product::<f64>()
            })
            .sum()
    }

    /// Elements owning at least one surrogate face.
    pub fn boundary_owners(&self) -> Vec<bool> {
        let mut owner = vec![false; self.elements.len()];
        for f in &self.faces {
            owner[f.owner] = true;
        }
        owner
    }

    /// Maximum edge length of element `e`.
    pub fn element_diameter(&self, e: usize) -> f64 {
        let (lo, hi) = self.element_bounds(e);
        (0..self.dimension).map(|k| hi[k] - lo[k]).fold(0.0, f64::max)
    }
}

/// Keep the interior leaves and extract the surrogate boundary.
pub fn carve(
    leaves: &[TreeKey],
    geoms: &[Geometry],
    dim: usize,
    min: [f64; 3],
    max: [f64; 3],
) -> Result<IncompleteMesh, MeshError> {
    let leaf_set: HashSet<TreeKey> = leaves.iter().copied().collect();
    let mut elements = Vec::new();
    let mut kept: HashMap<TreeKey, usize> = HashMap::new();
    for key in leaves {
        let (lo, hi) = key.bounds(min, max, dim);
        if classify_element_all(geoms, lo, hi, dim) == ElementClass::Interior {
            kept.insert(*key, elements.len());
            elements.push(*key);
        }
    }
    if elements.is_empty() {
        return Err(MeshError::EmptyKeptSet);
    }

    let mut faces = Vec::new();
    for (e, key) in elements.iter().enumerate() {
        let (lo, hi) = key.bounds(min, max, dim);
        for axis in 0..dim {
            for positive in [false, true] {
                let mut flo = lo;
                let mut fhi = hi;
                if positive {
                    flo[axis] = hi[axis];
                } else {
                    fhi[axis] = lo[axis];
                }
                let face = |flo, fhi, kind| SurrogateFace {
                    owner: e,
                    axis,
                    positive,
                    lo: flo,
                    hi: fhi,
                    kind,
                };
                let Some(probe) = key.face_neighbor(axis, positive) else {
                    faces.push(face(flo, fhi, FaceKind::Wall));
                    continue;
                };
                if let Some(cover) = find_covering(&leaf_set, probe) {
                    if !kept.contains_key(&cover) {
                        faces.push(face(flo, fhi, FaceKind::Geometry));
                    }
                    continue;
                }
                // Finer neighbors: the children of `probe` touching this face.
                for child in probe.children(dim) {
                    let on_face = child.anchor[axis] % 2 == if positive { 0 } else { 1 };
                    if !on_face || kept.contains_key(&child) {
                        continue;
                    }
                    let (clo, chi) = child.bounds(min, max, dim);
                    let mut slo = clo;
                    let mut shi = chi;
                    slo[axis] = flo[axis];
                    shi[axis] = flo[axis];
                    faces.push(face(slo, shi, FaceKind::Geometry));
                }
            }
        }
    }

    let (element_nodes, nodes) = nodes::enumerate(&elements, dim, min, max)?;
    Ok(IncompleteMesh {
        dimension: dim,
        domain_min: min,
        domain_max: max,
        elements,
        element_nodes,
        nodes,
        faces,
        leaf_count: leaves.len(),
    })
}

/// Full mesh pipeline for a problem: refine, balance, carve, number.
pub fn build_mesh(spec: &ProblemSpec, geoms: &[Geometry]) -> Result<IncompleteMesh, MeshError> {
    let leaves = build_tree(spec, geoms)?;
    let leaves = balance_2to1(leaves, spec.dimension)?;
    carve(&leaves, geoms, spec.dimension, spec.domain_min, spec.domain_max)
}
