//! Immersed geometry: analytic circles and spheres, Gmsh boundary loops,
//! and STL triangle surfaces. All queries are read-only.

mod bvh;
mod polyline;
mod trimesh;
pub mod vec3;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::problem::{GeometrySource, GeometrySpec};

pub use bvh::Aabb;
pub use polyline::{read_gmsh, write_gmsh_loop, Polyline};
pub use trimesh::{icosphere, TriMesh};
use vec3::V3;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: boundary polyline is open near ({}, {})", point[0], point[1])]
    OpenPolyline { path: PathBuf, point: V3 },
    #[error("empty geometry: {0}")]
    Empty(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    AnalyticCircle,
    AnalyticSphere,
    Polyline2d,
    TriMesh3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inside,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementClass {
    Interior,
    Exterior,
    Intercepted,
}

/// Nearest point of the boundary with its unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: V3,
    pub normal: V3,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Shape {
    Ball { center: V3, radius: f64, dim: usize },
    Polyline(Polyline),
    TriMesh(TriMesh),
}

/// Boundary data at one surrogate quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePointData {
    pub surrogate_point: V3,
    pub surrogate_normal: V3,
    pub true_point: V3,
    /// `true_point - surrogate_point`.
    pub displacement: V3,
    pub true_normal: V3,
}

impl SurfacePointData {
    pub fn new(surrogate_point: V3, surrogate_normal: V3, projection: &Projection) -> Self {
        SurfacePointData {
            surrogate_point,
            surrogate_normal,
            true_point: projection.point,
            displacement: vec3::sub(projection.point, surrogate_point),
            true_normal: projection.normal,
        }
    }

    /// Flat wall: the surrogate is the true boundary.
    pub fn on_wall(point: V3, normal: V3) -> Self {
        SurfacePointData {
            surrogate_point: point,
            surrogate_normal: normal,
            true_point: point,
            displacement: [0.0; 3],
            true_normal: normal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Geometry {
    pub name: String,
    shape: Shape,
    /// The physical domain lies outside the solid.
    pub outer_boundary: bool,
    pub refine_level: u32,
}

impl Geometry {
    fn with_shape(shape: Shape) -> Self {
        Geometry {
            name: String::new(),
            shape,
            outer_boundary: false,
            refine_level: 0,
        }
    }

    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        Self::with_shape(Shape::Ball {
            center: [center[0], center[1], 0.0],
            radius,
            dim: 2,
        })
    }

    pub fn sphere(center: V3, radius: f64) -> Self {
        Self::with_shape(Shape::Ball { center, radius, dim: 3 })
    }

    pub fn from_polyline(p: Polyline) -> Self {
        Self::with_shape(Shape::Polyline(p))
    }

    pub fn from_trimesh(m: TriMesh) -> Self {
        Self::with_shape(Shape::TriMesh(m))
    }

    pub fn outer(mut self) -> Self {
        self.outer_boundary = true;
        self
    }

    /// Load and position a geometry described in a problem script.
    pub fn load(spec: &GeometrySpec, dimension: usize) -> Result<Self, GeometryError> {
        let mut shape = match &spec.source {
            GeometrySource::Circle { center, radius } => Shape::Ball {
                center: [center[0], center[1], 0.0],
                radius: *radius,
                dim: 2,
            },
            GeometrySource::Sphere { center, radius } => Shape::Ball {
                center: *center,
                radius: *radius,
                dim: 3,
            },
            GeometrySource::MeshFile(path) => load_mesh_file(path, dimension)?,
        };
        let offset = spec.position;
        if offset != [0.0; 3] {
            match &mut shape {
                Shape::Ball { center, .. } => *center = vec3::add(*center, offset),
                Shape::Polyline(p) => p.translate(offset),
                Shape::TriMesh(m) => m.translate(offset),
            }
        }
        Ok(Geometry {
            name: spec.name.clone(),
            shape,
            outer_boundary: spec.outer_boundary,
            refine_level: spec.refine_level,
        })
    }

    pub fn kind(&self) -> GeometryKind {
        match &self.shape {
            Shape::Ball { dim: 2, .. } => GeometryKind::AnalyticCircle,
            Shape::Ball { .. } => GeometryKind::AnalyticSphere,
            Shape::Polyline(_) => GeometryKind::Polyline2d,
            Shape::TriMesh(_) => GeometryKind::TriMesh3d,
        }
    }

    pub fn trimesh(&self) -> Option<&TriMesh> {
        match &self.shape {
            Shape::TriMesh(m) => Some(m),
            _ => None,
        }
    }

    pub fn polyline(&self) -> Option<&Polyline> {
        match &self.shape {
            Shape::Polyline(p) => Some(p),
            _ => None,
        }
    }

    fn solid_contains(&self, p: V3) -> bool {
        match &self.shape {
            Shape::Ball { center, radius, dim } => {
                let d = vec3::sub(p, *center);
                let r2: f64 = d[..*dim].iter().map(|x| x * x).sum();
                r2.sqrt() <= *radius * (1.0 + 1e-14)
            }
            Shape::Polyline(pl) => pl.contains(p),
            Shape::TriMesh(m) => m.contains(p),
        }
    }

    fn on_surface(&self, p: V3) -> bool {
        match &self.shape {
            Shape::Ball { center, radius, dim } => {
                let d = vec3::sub(p, *center);
                let r: f64 = d[..*dim].iter().map(|x| x * x).sum::<f64>().sqrt();
                (r - radius).abs() <= 1e-14 * radius
            }
            // Polyline and trimesh tests already treat the surface as inside.
            _ => false,
        }
    }

    /// Whether `p` belongs to the physical domain described by this geometry.
    /// Boundary points are inside either way.
    pub fn classify_point(&self, p: V3) -> Side {
        let inside = if self.outer_boundary {
            !self.solid_contains(p) || self.on_surface(p) || self.project_solid(p).distance <= self.surface_tolerance()
        } else {
            self.solid_contains(p)
        };
        if inside {
            Side::Inside
        } else {
            Side::Outside
        }
    }

    fn surface_tolerance(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => 1e-14 * radius,
            Shape::Polyline(p) => 1e-12 * p.bounds().diagonal(),
            Shape::TriMesh(m) => 1e-12 * m.bounds().diagonal(),
        }
    }

    /// Classify an axis-aligned box by its corners.
    pub fn classify_element(&self, lo: V3, hi: V3, dimension: usize) -> ElementClass {
        let n = 1usize << dimension;
        let mut inside = 0;
        for c in 0..n {
            let p: V3 = std::array::from_fn(|k| {
                if k >= dimension {
                    lo[k]
                } else if c >> k & 1 == 1 {
                    hi[k]
                } else {
                    lo[k]
                }
            });
            if self.classify_point(p) == Side::Inside {
                inside += 1;
            }
        }
        match inside {
            0 => ElementClass::Exterior,
            i if i == n => ElementClass::Interior,
            _ => ElementClass::Intercepted,
        }
    }

    fn project_solid(&self, p: V3) -> Projection {
        match &self.shape {
            Shape::Ball { center, radius, dim } => {
                let mut d = vec3::sub(p, *center);
                for x in d.iter_mut().skip(*dim) {
                    *x = 0.0;
                }
                let r = vec3::norm(d);
                let normal = vec3::normalize_or(d, [1.0, 0.0, 0.0]);
                let mut point = vec3::add(*center, vec3::scale(normal, *radius));
                for k in *dim..3 {
                    point[k] = p[k];
                }
                Projection {
                    point,
                    normal,
                    distance: (r - radius).abs(),
                }
            }
            Shape::Polyline(pl) => {
                let mut pr = pl.closest_point(p);
                pr.point[2] = p[2];
                pr
            }
            Shape::TriMesh(m) => m.closest_point(p),
        }
    }

    /// Nearest boundary point, with the normal pointing out of the physical
    /// domain.
    pub fn closest_point(&self, p: V3) -> Projection {
        let mut pr = self.project_solid(p);
        if self.outer_boundary {
            pr.normal = vec3::scale(pr.normal, -1.0);
        }
        pr
    }

    pub fn bounds(&self) -> Aabb {
        match &self.shape {
            Shape::Ball { center, radius, dim } => {
                let mut lo = *center;
                let mut hi = *center;
                for k in 0..*dim {
                    lo[k] -= radius;
                    hi[k] += radius;
                }
                Aabb { lo, hi }
            }
            Shape::Polyline(p) => p.bounds(),
            Shape::TriMesh(m) => m.bounds(),
        }
    }
}

fn load_mesh_file(path: &Path, dimension: usize) -> Result<Shape, GeometryError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match (ext.as_deref(), dimension) {
        (Some("msh"), 2) => {
            let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(Shape::Polyline(read_gmsh(&text, path)?))
        }
        (Some("stl"), 3) => Ok(Shape::TriMesh(TriMesh::read_stl(path)?)),
        (Some("msh"), _) => Err(GeometryError::Invalid(format!(
            "{}: Gmsh boundary loops need a 2-D domain",
            path.display()
        ))),
        (Some("stl"), _) => Err(GeometryError::Invalid(format!(
            "{}: STL surfaces need a 3-D domain",
            path.display()
        ))),
        _ => Err(GeometryError::Invalid(format!(
            "{}: unrecognized mesh file type (expected .msh or .stl)",
            path.display()
        ))),
    }
}

/// Every geometry agrees the point is in the domain.
pub fn in_domain(geoms: &[Geometry], p: V3) -> bool {
    geoms.iter().all(|g| g.classify_point(p) == Side::Inside)
}

/// Combined element class: interior only if interior for every geometry,
/// exterior if exterior for any.
pub fn classify_element_all(geoms: &[Geometry], lo: V3, hi: V3, dimension: usize) -> ElementClass {
    let mut out = ElementClass::Interior;
    for g in geoms {
        match g.classify_element(lo, hi, dimension) {
            ElementClass::Exterior => return ElementClass::Exterior,
            ElementClass::Intercepted => out = ElementClass::Intercepted,
            ElementClass::Interior => {}
        }
    }
    out
}

/// Projection onto the nearest of several geometries.
pub fn closest_point_all(geoms: &[Geometry], p: V3) -> Option<Projection> {
    geoms
        .iter()
        .map(|g| g.closest_point(p))
        .min_by(|a, b| a.distance.total_cmp(&b.distance))
}
