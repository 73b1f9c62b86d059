//! Legacy ASCII VTK unstructured-grid output.

use std::fmt::Write as _;
use std::path::Path;

use super::{IncompleteMesh, MeshError};

/// Point-data scalar field, one value per mesh node.
pub struct PointField<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// Corner order mapping from bit-indexed corners to VTK's winding.
const QUAD_ORDER: [usize; 4] = [0, 1, 3, 2];
const HEX_ORDER: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render the mesh with optional point fields.
pub fn vtk_text(mesh: &IncompleteMesh, title: &str, fields: &[PointField]) -> String {
    let dim = mesh.dimension;
    let n = mesh.nodes.len();
    let mut s = String::with_capacity(64 * n);
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {n} double");
    for p in &mesh.nodes.coords {
        let _ = writeln!(s, "{} {} {}", num(p[0]), num(p[1]), num(p[2]));
    }
    let (order, cell_type): (&[usize], u32) = if dim == 2 { (&QUAD_ORDER, 9) } else { (&HEX_ORDER, 12) };
    let ne = mesh.elements.len();
    let _ = writeln!(s, "CELLS {ne} {}", ne * (order.len() + 1));
    for e in 0..ne {
        let c = mesh.corners(e);
        s += &order.len().to_string();
        for &i in order {
            let _ = write!(s, " {}", c[i]);
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        let _ = writeln!(s, "{cell_type}");
    }
    let _ = writeln!(s, "CELL_DATA {ne}\nSCALARS level int 1\nLOOKUP_TABLE default");
    for k in &mesh.elements {
        let _ = writeln!(s, "{}", k.level);
    }
    let _ = writeln!(s, "SCALARS is_boundary_owner int 1\nLOOKUP_TABLE default");
    for b in mesh.boundary_owners() {
        let _ = writeln!(s, "{}", b as u8);
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {n}");
        for f in fields {
            assert_eq!(f.values.len(), n, "field `{}` must have one value per node", f.name);
            let _ = writeln!(s, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name);
            for v in f.values {
                let _ = writeln!(s, "{}", num(*v));
            }
        }
    }
    s
}

pub fn write_vtk(mesh: &IncompleteMesh, path: &Path, title: &str, fields: &[PointField]) -> Result<(), MeshError> {
    std::fs::write(path, vtk_text(mesh, title, fields)).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}
