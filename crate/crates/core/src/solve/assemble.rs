use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;

use crate::expr::{Env, Expr};
use crate::fem::{
    eval_surface, eval_volume, face_points, gauss_rule, CompiledKernel, ElementGeometry, ElementMatrix, QuadratureRule,
    SurfaceQp,
};
use crate::geometry::{closest_point_all, Geometry, SurfacePointData};
use crate::mesh::{FaceKind, IncompleteMesh};
use crate::problem::{BoundaryKind, ProblemSpec};

use super::{AssemblyError, CsrMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
}

/// Ordered region predicates and the unknown's condition on each region.
#[derive(Debug, Clone)]
pub struct BoundaryRouting {
    regions: Vec<(u32, Expr)>,
    conditions: HashMap<u32, (BoundaryKind, Expr)>,
    constants: BTreeMap<String, f64>,
}

impl BoundaryRouting {
    pub fn from_problem(spec: &ProblemSpec) -> Self {
        let unknown = spec.unknown();
        BoundaryRouting {
            regions: spec.boundary_regions.iter().map(|r| (r.id, r.predicate.clone())).collect(),
            conditions: spec
                .boundary_conditions
                .iter()
                .filter(|((var, _), _)| var == unknown)
                .map(|((_, id), bc)| (*id, (bc.kind, bc.value.clone())))
                .collect(),
            constants: spec.constants(),
        }
    }

    /// Condition kind and prescribed value at a true boundary point, or
    /// `None` where no region with a condition matches.
    pub fn route(&self, point: [f64; 3], t: f64) -> Result<Option<(BoundaryKind, f64)>, crate::expr::EvalError> {
        let env = Env::at(point, t).with_constants(&self.constants);
        for (id, pred) in &self.regions {
            if pred.eval_bool(&env)? {
                return match self.conditions.get(id) {
                    Some((kind, value)) => Ok(Some((*kind, value.eval_number(&env)?))),
                    None => Ok(None),
                };
            }
        }
        Ok(None)
    }
}

#[derive(Debug, Clone)]
struct FaceQp {
    point: [f64; 3],
    weight: f64,
    data: SurfacePointData,
}

/// Mesh-dependent assembly state: quadrature, boundary projections, and
/// the sparsity pattern over independent nodes.
pub struct Assembler<'m> {
    pub mesh: &'m IncompleteMesh,
    rule: QuadratureRule,
    /// Surface points grouped by owner element.
    face_qps: Vec<Vec<FaceQp>>,
    routing: BoundaryRouting,
    pattern: CsrMatrix,
    pub parallel: bool,
}

impl<'m> Assembler<'m> {
    pub fn new(
        mesh: &'m IncompleteMesh,
        geoms: &[Geometry],
        spec: &ProblemSpec,
        points_per_axis: usize,
    ) -> Result<Self, AssemblyError> {
        let dim = mesh.dimension;
        let rule = gauss_rule(points_per_axis, dim)?;
        let face_rule = gauss_rule(points_per_axis, dim - 1)?;
        let mut face_qps: Vec<Vec<FaceQp>> = vec![Vec::new(); mesh.elements.len()];
        for f in &mesh.faces {
            let normal = f.normal();
            for (point, weight) in face_points(&face_rule, f.lo, f.hi, f.axis, dim) {
                let projection = match f.kind {
                    FaceKind::Geometry => closest_point_all(geoms, point),
                    FaceKind::Wall => None,
                };
                let data = match projection {
                    Some(p) => SurfacePointData::new(point, normal, &p),
                    None => SurfacePointData::on_wall(point, normal),
                };
                face_qps[f.owner].push(FaceQp { point, weight, data });
            }
        }
        let routing = BoundaryRouting::from_problem(spec);
        let mut unmatched = 0usize;
        for q in face_qps.iter().flatten() {
            if routing.route(q.data.true_point, 0.0).map_err(AssemblyError::Boundary)?.is_none() {
                unmatched += 1;
            }
        }
        if unmatched > 0 {
            log::warn!("{unmatched} surface quadrature points match no boundary condition; they contribute nothing");
        }

        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); mesh.ndof()];
        for e in 0..mesh.elements.len() {
            let dofs: BTreeSet<u32> = mesh
                .corners(e)
                .iter()
                .flat_map(|&n| mesh.nodes.expansion[n as usize].iter().map(|w| w.0))
                .collect();
            for &r in &dofs {
                rows[r as usize].extend(dofs.iter().copied());
            }
        }
        Ok(Assembler {
            mesh,
            rule,
            face_qps,
            routing,
            pattern: CsrMatrix::from_pattern(rows),
            parallel: true,
        })
    }

    pub fn surface_point_count(&self) -> usize {
        self.face_qps.iter().map(Vec::len).sum()
    }

    /// Surrogate and true boundary data at every surface quadrature point.
    pub fn surface_points(&self) -> impl Iterator<Item = &SurfacePointData> {
        self.face_qps.iter().flatten().map(|q| &q.data)
    }

    fn element(
        &self,
        kernel: &CompiledKernel,
        e: usize,
        history: &[Vec<f64>; 2],
        t: f64,
        dt: f64,
    ) -> Result<ElementMatrix, AssemblyError> {
        let mesh = self.mesh;
        let (lo, hi) = mesh.element_bounds(e);
        let geom = ElementGeometry::new(lo, hi, mesh.dimension);
        let corners = mesh.corners(e);
        let mut h = [[0.0; 8]; 2];
        for (slot, hist) in h.iter_mut().zip(history) {
            if !hist.is_empty() {
                for (c, &n) in corners.iter().enumerate() {
                    slot[c] = hist[n as usize];
                }
            }
        }
        let mut m = eval_volume(kernel, &geom, &self.rule, &h, t, dt);
        let qps = &self.face_qps[e];
        if !qps.is_empty() {
            let diameter = geom.diameter();
            let mut routed = Vec::with_capacity(qps.len());
            for q in qps {
                let Some((kind, g)) = self.routing.route(q.data.true_point, t).map_err(AssemblyError::Boundary)? else {
                    continue;
                };
                let prog = match kind {
                    BoundaryKind::Dirichlet => &kernel.dirichlet,
                    BoundaryKind::Neumann => &kernel.neumann,
                };
                routed.push((
                    prog,
                    q.point,
                    q.weight,
                    SurfaceQp {
                        data: q.data,
                        h: diameter,
                        g,
                    },
                ));
            }
            m.add(&eval_surface(kernel, &geom, routed, &h, t, dt));
        }
        if !m.is_finite() {
            return Err(AssemblyError::NonFinite {
                element: mesh.elements[e],
            });
        }
        Ok(m)
    }

    /// Elemental matrices (volume plus owned surrogate faces) for every
    /// element, indexed like `mesh.elements`.
    pub fn elemental(
        &self,
        kernel: &CompiledKernel,
        history: &[Vec<f64>; 2],
        t: f64,
        dt: f64,
    ) -> Result<Vec<ElementMatrix>, AssemblyError> {
        if kernel.dimension != self.mesh.dimension {
            return Err(AssemblyError::Fem(crate::fem::FemError::DimensionMismatch {
                kernel: kernel.dimension,
                mesh: self.mesh.dimension,
            }));
        }
        let n = self.mesh.elements.len();
        if self.parallel {
            (0..n).into_par_iter().map(|e| self.element(kernel, e, history, t, dt)).collect()
        } else {
            (0..n).map(|e| self.element(kernel, e, history, t, dt)).collect()
        }
    }

    /// Scatter elemental contributions through the hanging-node expansion,
    /// visiting elements in `order`.
    pub fn scatter(&self, elemental: &[ElementMatrix], order: impl IntoIterator<Item = usize>) -> SparseSystem {
        let mesh = self.mesh;
        let mut a = self.pattern.clone();
        let mut b = vec![0.0; mesh.ndof()];
        let exp = &mesh.nodes.expansion;
        for e in order {
            let m = &elemental[e];
            let corners = mesh.corners(e);
            for (r, &nr) in corners.iter().enumerate() {
                for &(dr, wr) in &exp[nr as usize] {
                    b[dr as usize] += wr * m.b[r];
                    for (c, &nc) in corners.iter().enumerate() {
                        let v = m.a[r][c];
                        if v == 0.0 {
                            continue;
                        }
                        for &(dc, wc) in &exp[nc as usize] {
                            a.add(dr, dc, wr * wc * v);
                        }
                    }
                }
            }
        }
        SparseSystem { a, b }
    }

    /// Global system over independent nodes. `history` holds full nodal
    /// vectors one and two steps back (empty when unused).
    pub fn assemble(
        &self,
        kernel: &CompiledKernel,
        history: &[Vec<f64>; 2],
        t: f64,
        dt: f64,
    ) -> Result<SparseSystem, AssemblyError> {
        let elemental = self.elemental(kernel, history, t, dt)?;
        Ok(self.scatter(&elemental, 0..elemental.len()))
    }
}
