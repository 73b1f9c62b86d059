//! Regenerate the geometry files used by `problems/`:
//! `circle.msh` (unit circle polyline) and `blob.stl` (a smooth
//! closed surface standing in for a scanned part).
//!
//! cargo run -p sbmgen --example make_assets -- problems

use std::f64::consts::TAU;
use std::path::PathBuf;

use sbmgen::geometry::{icosphere, write_gmsh_loop, TriMesh};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "problems".into()));
    let n = 1024;
    let circle: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let a = TAU * i as f64 / n as f64;
            [a.cos(), a.sin(), 0.0]
        })
        .collect();
    std::fs::write(dir.join("circle.msh"), write_gmsh_loop(&circle))?;

    let (verts, tris) = icosphere(4, |d| 0.28 * (1.0 + 0.18 * d[0] * d[1] + 0.12 * d[2] * d[2] * d[2]));
    let mut blob = TriMesh::new(verts, tris)?;
    blob.translate([0.5, 0.5, 0.5]);
    blob.write_stl(&dir.join("blob.stl"))?;
    println!("wrote {} and {} ({} triangles)", dir.join("circle.msh").display(), dir.join("blob.stl").display(), blob.triangle_count());
    Ok(())
}
