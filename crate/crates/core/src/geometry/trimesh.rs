//! Closed triangle surfaces read from STL.

use std::collections::HashMap;
use std::path::Path;

use super::bvh::{Aabb, Bvh};
use super::vec3::{self, V3};
use super::{GeometryError, Projection};

/// Generic ray directions for parity voting; chosen to avoid lattice
/// alignment with axis-aligned tree corners.
const RAY_DIRECTIONS: [V3; 3] = [
    [0.5773502691896258, 0.5773502691896257, 0.5773502691896259],
    [-0.2672612419124244, 0.8017837257372732, -0.5345224838248488],
    [0.8164965809277261, -0.4082482904638631, -0.4082482904638630],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Feature {
    Face,
    Edge(u8),
    Vertex(u8),
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<V3>,
    triangles: Vec<[u32; 3]>,
    face_normals: Vec<V3>,
    /// Angle-weighted pseudonormals per vertex.
    vertex_normals: Vec<V3>,
    /// Normal for edge `k` (from corner k to k+1) of each triangle.
    edge_normals: Vec<[V3; 3]>,
    bvh: Bvh,
    closed: bool,
    tolerance: f64,
}

fn angle_at(a: V3, b: V3, c: V3) -> f64 {
    let u = vec3::normalize_or(vec3::sub(b, a), [0.0; 3]);
    let v = vec3::normalize_or(vec3::sub(c, a), [0.0; 3]);
    vec3::dot(u, v).clamp(-1.0, 1.0).acos()
}

/// Closest point on triangle `abc` to `p` and the feature it lies on.
fn closest_on_triangle(p: V3, a: V3, b: V3, c: V3) -> (V3, Feature) {
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    let ap = vec3::sub(p, a);
    let d1 = vec3::dot(ab, ap);
    let d2 = vec3::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, Feature::Vertex(0));
    }
    let bp = vec3::sub(p, b);
    let d3 = vec3::dot(ab, bp);
    let d4 = vec3::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (vec3::add(a, vec3::scale(ab, v)), Feature::Edge(0));
    }
    let cp = vec3::sub(p, c);
    let d5 = vec3::dot(ab, cp);
    let d6 = vec3::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (vec3::add(a, vec3::scale(ac, w)), Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (vec3::add(b, vec3::scale(vec3::sub(c, b), w)), Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (
        vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w))),
        Feature::Face,
    )
}

/// Möller–Trumbore; returns whether the ray hits the triangle at t > 0.
fn ray_hits(origin: V3, dir: V3, a: V3, b: V3, c: V3) -> bool {
    let e1 = vec3::sub(b, a);
    let e2 = vec3::sub(c, a);
    let pv = vec3::cross(dir, e2);
    let det = vec3::dot(e1, pv);
    if det.abs() < 1e-300 {
        return false;
    }
    let inv = 1.0 / det;
    let tv = vec3::sub(origin, a);
    let u = vec3::dot(tv, pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = vec3::cross(tv, e1);
    let v = vec3::dot(dir, qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    vec3::dot(e2, qv) * inv > 0.0
}

impl TriMesh {
    /// Build from welded vertices and triangles; orientation is flipped if
    /// the enclosed signed volume is negative.
    pub fn new(vertices: Vec<V3>, mut triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        triangles.retain(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
        if triangles.is_empty() {
            return Err(GeometryError::Empty("triangle mesh has no faces".into()));
        }
        let signed_volume: f64 = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum();
        if signed_volume < 0.0 {
            for t in &mut triangles {
                t.swap(1, 2);
            }
        }

        let mut edge_faces: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for (ti, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(ti as u32);
            }
        }
        let closed = edge_faces.values().all(|f| f.len() == 2);

        let face_normals: Vec<V3> = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                vec3::normalize_or(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)), [0.0, 0.0, 1.0])
            })
            .collect();
        let mut vertex_normals = vec![[0.0; 3]; vertices.len()];
        for (t, n) in triangles.iter().zip(&face_normals) {
            let p = t.map(|i| vertices[i as usize]);
            for k in 0..3 {
                let w = angle_at(p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                let vn = &mut vertex_normals[t[k] as usize];
                *vn = vec3::add(*vn, vec3::scale(*n, w));
            }
        }
        for vn in &mut vertex_normals {
            *vn = vec3::normalize_or(*vn, [0.0, 0.0, 1.0]);
        }
        let edge_normals = triangles
            .iter()
            .map(|t| {
                std::array::from_fn(|k| {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    let sum = edge_faces[&(a.min(b), a.max(b))]
                        .iter()
                        .fold([0.0; 3], |acc, f| vec3::add(acc, face_normals[*f as usize]));
                    vec3::normalize_or(sum, [0.0, 0.0, 1.0])
                })
            })
            .collect();

        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| Aabb::of_points(&t.map(|i| vertices[i as usize])))
            .collect();
        let bvh = Bvh::build(&boxes);
        let tolerance = 1e-12 * bvh.bounds().diagonal().max(1e-300);
        Ok(TriMesh {
            vertices,
            triangles,
            face_normals,
            vertex_normals,
            edge_normals,
            bvh,
            closed,
            tolerance,
        })
    }

    /// Read binary or ASCII STL. Coincident vertices are welded by the reader.
    pub fn read_stl(path: &Path) -> Result<Self, GeometryError> {
        let mut file = std::fs::File::open(path).map_err(|source| GeometryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mesh = stl_io::read_stl(&mut file).map_err(|e| GeometryError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let vertices = mesh.vertices.iter().map(|v| v.0.map(f64::from)).collect();
        let triangles = mesh.faces.iter().map(|f| f.vertices.map(|i| i as u32)).collect();
        let tm = TriMesh::new(vertices, triangles).map_err(|e| match e {
            GeometryError::Empty(_) => GeometryError::Empty(format!("{}: no triangles", path.display())),
            other => other,
        })?;
        if !tm.closed {
            log::warn!(
                "{}: surface is not closed (some edge is not shared by exactly two triangles); inside tests use ray-parity voting",
                path.display()
            );
        }
        Ok(tm)
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    pub fn translate(&mut self, offset: V3) {
        let vertices = self.vertices.iter().map(|v| vec3::add(*v, offset)).collect();
        let triangles = std::mem::take(&mut self.triangles);
        *self = TriMesh::new(vertices, triangles).expect("translation keeps faces");
    }

    fn corners(&self, i: u32) -> [V3; 3] {
        self.triangles[i as usize].map(|v| self.vertices[v as usize])
    }

    fn project(&self, i: u32, p: V3) -> (V3, Feature) {
        let [a, b, c] = self.corners(i);
        closest_on_triangle(p, a, b, c)
    }

    pub fn closest_point(&self, p: V3) -> Projection {
        let (i, d2) = self
            .bvh
            .nearest(p, |i| vec3::dist2(self.project(i, p).0, p))
            .expect("mesh has triangles");
        let (q, feature) = self.project(i, p);
        let t = &self.triangles[i as usize];
        let normal = match feature {
            Feature::Face => self.face_normals[i as usize],
            Feature::Edge(k) => self.edge_normals[i as usize][k as usize],
            Feature::Vertex(k) => self.vertex_normals[t[k as usize] as usize],
        };
        Projection {
            point: q,
            normal,
            distance: d2.sqrt(),
        }
    }

    pub fn distance_brute_force(&self, p: V3) -> f64 {
        (0..self.triangles.len() as u32)
            .map(|i| vec3::dist2(self.project(i, p).0, p))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    fn parity(&self, p: V3, dir: V3) -> bool {
        let mut inside = false;
        self.bvh.visit_ray(p, dir, |i| {
            let [a, b, c] = self.corners(i);
            if ray_hits(p, dir, a, b, c) {
                inside = !inside;
            }
        });
        inside
    }

    /// Majority of three ray-parity tests; surface points count as inside.
    pub fn contains(&self, p: V3) -> bool {
        let b = self.bounds();
        if (0..3).any(|k| p[k] < b.lo[k] || p[k] > b.hi[k]) {
            return false;
        }
        if self.closest_point(p).distance <= self.tolerance {
            return true;
        }
        RAY_DIRECTIONS.iter().filter(|d| self.parity(p, **d)).count() >= 2
    }

    /// Enclosed volume by the divergence theorem.
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len() as u32)
            .map(|i| {
                let [a, b, c] = self.corners(i);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Write as binary STL.
    pub fn write_stl(&self, path: &Path) -> Result<(), GeometryError> {
        let io = |source| GeometryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tris: Vec<stl_io::Triangle> = (0..self.triangles.len())
            .map(|i| stl_io::Triangle {
                normal: stl_io::Vector::new(self.face_normals[i].map(|x| x as f32)),
                vertices: self.corners(i as u32).map(|v| stl_io::Vector::new(v.map(|x| x as f32))),
            })
            .collect();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        stl_io::write_stl(&mut file, tris.iter()).map_err(io)
    }
}

/// Triangulated unit-radius sphere by recursive icosahedron subdivision,
/// then displaced radially by `radius(direction)`.
pub fn icosphere(subdivisions: u32, radius: impl Fn(V3) -> f64) -> (Vec<V3>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<V3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| vec3::normalize_or(*v, [1.0, 0.0, 0.0]))
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<V3>| -> u32 {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = vec3::scale(vec3::add(verts[a as usize], verts[b as usize]), 0.5);
                verts.push(vec3::normalize_or(m, [1.0, 0.0, 0.0]));
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| vec3::scale(v, radius(v))).collect();
    (verts, faces)
}
