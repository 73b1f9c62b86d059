//! Closed 2-D boundary loops, read from Gmsh ASCII v2.2 line elements.

use std::collections::HashMap;
use std::path::Path;

use super::bvh::{Aabb, Bvh};
use super::vec3::{self, V3};
use super::{GeometryError, Projection};

/// Closed loops of segments, oriented so the solid lies to the left
/// (outer loops counter-clockwise, holes clockwise).
#[derive(Debug, Clone)]
pub struct Polyline {
    vertices: Vec<V3>,
    /// Each loop as a vertex index cycle (first vertex not repeated).
    loops: Vec<Vec<u32>>,
    segments: Vec<[u32; 2]>,
    seg_normals: Vec<V3>,
    vertex_normals: Vec<V3>,
    bvh: Bvh,
    tolerance: f64,
}

fn signed_area(vertices: &[V3], cycle: &[u32]) -> f64 {
    let n = cycle.len();
    (0..n)
        .map(|i| {
            let a = vertices[cycle[i] as usize];
            let b = vertices[cycle[(i + 1) % n] as usize];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

fn crosses(a: V3, b: V3, p: V3) -> bool {
    (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0])
}

fn point_in_cycle(vertices: &[V3], cycle: &[u32], p: V3) -> bool {
    let n = cycle.len();
    (0..n)
        .filter(|&i| crosses(vertices[cycle[i] as usize], vertices[cycle[(i + 1) % n] as usize], p))
        .count()
        % 2
        == 1
}

impl Polyline {
    /// Build from vertex loops. Each loop is a vertex cycle; a repeated
    /// closing vertex is dropped. Orientation is normalized.
    pub fn from_loops(loops: Vec<Vec<V3>>) -> Result<Self, GeometryError> {
        let mut vertices = Vec::new();
        let mut cycles = Vec::new();
        for mut lp in loops {
            if lp.len() > 1 && lp.first() == lp.last() {
                lp.pop();
            }
            if lp.len() < 3 {
                return Err(GeometryError::Invalid("a boundary loop needs at least 3 vertices".into()));
            }
            let base = vertices.len() as u32;
            cycles.push((0..lp.len() as u32).map(|i| base + i).collect::<Vec<u32>>());
            vertices.extend(lp.into_iter().map(|p| [p[0], p[1], 0.0]));
        }
        if cycles.is_empty() {
            return Err(GeometryError::Empty("no boundary loops".into()));
        }
        Ok(Self::assemble(vertices, cycles))
    }

    fn assemble(vertices: Vec<V3>, mut loops: Vec<Vec<u32>>) -> Self {
        // A loop nested inside an odd number of others bounds a hole.
        for i in 0..loops.len() {
            let probe = vertices[loops[i][0] as usize];
            let depth = (0..loops.len())
                .filter(|&j| j != i && point_in_cycle(&vertices, &loops[j], probe))
                .count();
            let ccw = signed_area(&vertices, &loops[i]) > 0.0;
            if ccw == (depth % 2 == 1) {
                loops[i].reverse();
            }
        }
        let mut segments = Vec::new();
        for lp in &loops {
            for i in 0..lp.len() {
                segments.push([lp[i], lp[(i + 1) % lp.len()]]);
            }
        }
        let seg_normals: Vec<V3> = segments
            .iter()
            .map(|&[a, b]| {
                let d = vec3::sub(vertices[b as usize], vertices[a as usize]);
                vec3::normalize_or([d[1], -d[0], 0.0], [1.0, 0.0, 0.0])
            })
            .collect();
        let mut vertex_normals = vec![[0.0; 3]; vertices.len()];
        for (s, n) in segments.iter().zip(&seg_normals) {
            for &v in s {
                vertex_normals[v as usize] = vec3::add(vertex_normals[v as usize], *n);
            }
        }
        for (v, n) in vertex_normals.iter_mut().zip(&seg_normals) {
            *v = vec3::normalize_or(*v, *n);
        }
        let boxes: Vec<Aabb> = segments
            .iter()
            .map(|&[a, b]| Aabb::of_points(&[vertices[a as usize], vertices[b as usize]]))
            .collect();
        let bvh = Bvh::build(&boxes);
        let tolerance = 1e-12 * bvh.bounds().diagonal().max(1e-300);
        Polyline {
            vertices,
            loops,
            segments,
            seg_normals,
            vertex_normals,
            bvh,
            tolerance,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn loop_count(&self) -> usize {
        self.loops.len()
    }

    pub fn vertices(&self) -> &[V3] {
        &self.vertices
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    pub fn translate(&mut self, offset: V3) {
        let loops = std::mem::take(&mut self.loops);
        let vertices = self.vertices.iter().map(|v| vec3::add(*v, [offset[0], offset[1], 0.0])).collect();
        *self = Self::assemble(vertices, loops);
    }

    /// Signed area enclosed by all loops (holes subtract).
    pub fn area(&self) -> f64 {
        self.loops.iter().map(|l| signed_area(&self.vertices, l)).sum()
    }

    fn segment_projection(&self, i: u32, p: V3) -> (V3, f64, f64) {
        let [a, b] = self.segments[i as usize];
        let (a, b) = (self.vertices[a as usize], self.vertices[b as usize]);
        let ab = vec3::sub(b, a);
        let len2 = vec3::dot(ab, ab);
        let t = if len2 > 0.0 {
            (vec3::dot(vec3::sub(p, a), ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = vec3::lerp(a, b, t);
        (q, t, vec3::dist2(p, q))
    }

    pub fn closest_point(&self, p: V3) -> Projection {
        let p = [p[0], p[1], 0.0];
        let (i, d2) = self
            .bvh
            .nearest(p, |i| self.segment_projection(i, p).2)
            .expect("polyline has segments");
        let (q, t, _) = self.segment_projection(i, p);
        let [a, b] = self.segments[i as usize];
        let normal = if t <= 0.0 {
            self.vertex_normals[a as usize]
        } else if t >= 1.0 {
            self.vertex_normals[b as usize]
        } else {
            self.seg_normals[i as usize]
        };
        Projection {
            point: q,
            normal,
            distance: d2.sqrt(),
        }
    }

    /// Even-odd parity of a +x ray; points within tolerance of a segment
    /// count as inside.
    pub fn contains(&self, p: V3) -> bool {
        let p = [p[0], p[1], 0.0];
        if self.closest_point(p).distance <= self.tolerance {
            return true;
        }
        let mut inside = false;
        self.bvh.visit_ray(p, [1.0, 0.0, 0.0], |i| {
            let [a, b] = self.segments[i as usize];
            if crosses(self.vertices[a as usize], self.vertices[b as usize], p) {
                inside = !inside;
            }
        });
        inside
    }

    /// Brute-force nearest distance over every segment.
    pub fn distance_brute_force(&self, p: V3) -> f64 {
        let p = [p[0], p[1], 0.0];
        (0..self.segments.len() as u32)
            .map(|i| self.segment_projection(i, p).2)
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Read the boundary loops of a Gmsh ASCII v2.2 mesh from its 2-node line
/// elements. Other element types are ignored.
pub fn read_gmsh(text: &str, path: &Path) -> Result<Polyline, GeometryError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut nodes: HashMap<u64, V3> = HashMap::new();
    let mut edges: Vec<[u64; 2]> = Vec::new();
    let mut saw_format = false;

    let mut next = |what: &str| -> Result<(usize, &str), GeometryError> {
        lines
            .next()
            .ok_or_else(|| parse_err(path, text.lines().count(), format!("unexpected end of file, expected {what}")))
    };
    let num = |line: usize, tok: Option<&str>| -> Result<f64, GeometryError> {
        tok.and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, line, "expected a number"))
    };

    loop {
        let (ln, header) = match next("a section") {
            Ok(l) => l,
            Err(_) => break,
        };
        match header {
            "" => continue,
            "$MeshFormat" => {
                let (ln, fmt) = next("format line")?;
                let mut tok = fmt.split_whitespace();
                let version = tok.next().unwrap_or("");
                if !version.starts_with("2.") {
                    return Err(parse_err(path, ln, format!("unsupported Gmsh version {version}; need ASCII 2.2")));
                }
                if tok.next() != Some("0") {
                    return Err(parse_err(path, ln, "binary Gmsh files are not supported"));
                }
                saw_format = true;
            }
            "$Nodes" => {
                let (ln, count) = next("node count")?;
                let count = num(ln, Some(count))? as usize;
                for _ in 0..count {
                    let (ln, l) = next("node")?;
                    let mut tok = l.split_whitespace();
                    let id = num(ln, tok.next())? as u64;
                    let p = [num(ln, tok.next())?, num(ln, tok.next())?, num(ln, tok.next())?];
                    nodes.insert(id, p);
                }
            }
            "$Elements" => {
                let (ln, count) = next("element count")?;
                let count = num(ln, Some(count))? as usize;
                for _ in 0..count {
                    let (ln, l) = next("element")?;
                    let tok: Vec<&str> = l.split_whitespace().collect();
                    if tok.len() < 3 {
                        return Err(parse_err(path, ln, "truncated element record"));
                    }
                    let etype = num(ln, Some(tok[1]))? as u32;
                    let ntags = num(ln, Some(tok[2]))? as usize;
                    if etype != 1 {
                        continue;
                    }
                    let at = 3 + ntags;
                    if tok.len() < at + 2 {
                        return Err(parse_err(path, ln, "line element needs two nodes"));
                    }
                    edges.push([num(ln, Some(tok[at]))? as u64, num(ln, Some(tok[at + 1]))? as u64]);
                }
            }
            h if h.starts_with('$') && !h.starts_with("$End") => {
                // Skip unknown sections.
                let end = format!("$End{}", &h[1..]);
                loop {
                    let (_, l) = next(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            h if h.starts_with("$End") => {}
            other => return Err(parse_err(path, ln, format!("unexpected line `{other}`"))),
        }
    }
    if !saw_format {
        return Err(parse_err(path, 1, "missing $MeshFormat section"));
    }
    if edges.is_empty() {
        return Err(GeometryError::Empty(format!("{}: no line elements", path.display())));
    }
    loops_from_edges(&nodes, &edges, path)
}

/// Weld nodes with identical coordinates (up to a relative tolerance) and
/// trace closed loops.
fn loops_from_edges(nodes: &HashMap<u64, V3>, edges: &[[u64; 2]], path: &Path) -> Result<Polyline, GeometryError> {
    let mut bounds = Aabb::empty();
    for e in edges {
        for id in e {
            let p = nodes
                .get(id)
                .ok_or_else(|| GeometryError::Invalid(format!("{}: element refers to missing node {id}", path.display())))?;
            bounds.grow(*p);
        }
    }
    let tol = 1e-9 * bounds.diagonal().max(1e-300);
    let key = |p: V3| ((p[0] / tol).round() as i64, (p[1] / tol).round() as i64);
    let mut welded: HashMap<(i64, i64), u32> = HashMap::new();
    let mut vertices: Vec<V3> = Vec::new();
    let mut index = |id: u64| -> u32 {
        let p = nodes[&id];
        *welded.entry(key(p)).or_insert_with(|| {
            vertices.push([p[0], p[1], 0.0]);
            vertices.len() as u32 - 1
        })
    };
    let mut adjacency: HashMap<u32, Vec<(u32, usize)>> = HashMap::new();
    let mut segs = Vec::new();
    for e in edges {
        let (a, b) = (index(e[0]), index(e[1]));
        if a == b {
            continue;
        }
        let s = segs.len();
        segs.push([a, b]);
        adjacency.entry(a).or_default().push((b, s));
        adjacency.entry(b).or_default().push((a, s));
    }
    let mut open: Vec<u32> = adjacency.iter().filter(|(_, v)| v.len() != 2).map(|(k, _)| *k).collect();
    open.sort_unstable();
    if let Some(&v) = open.first() {
        return Err(GeometryError::OpenPolyline {
            path: path.to_path_buf(),
            point: vertices[v as usize],
        });
    }
    let mut used = vec![false; segs.len()];
    let mut loops = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let first = segs[start][0];
        let mut cycle = vec![first];
        let mut cur = segs[start][1];
        while cur != first {
            cycle.push(cur);
            let &(nb, s) = adjacency[&cur]
                .iter()
                .find(|(_, s)| !used[*s])
                .expect("every welded vertex has degree two");
            used[s] = true;
            cur = nb;
        }
        loops.push(cycle);
    }
    Ok(Polyline::assemble(vertices, loops))
}

/// Gmsh v2.2 text for one closed loop through `points`.
pub fn write_gmsh_loop(points: &[V3]) -> String {
    let mut s = String::from("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    s += &format!("{}\n", points.len());
    for (i, p) in points.iter().enumerate() {
        s += &format!("{} {:.17e} {:.17e} {:.17e}\n", i + 1, p[0], p[1], p[2]);
    }
    s += &format!("$EndNodes\n$Elements\n{}\n", points.len());
    for i in 0..points.len() {
        s += &format!("{} 1 2 1 1 {} {}\n", i + 1, i + 1, (i + 1) % points.len() + 1);
    }
    s += "$EndElements\n";
    s
}
