mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sbmgen::codegen::{parse_ir, serialize_ir};
use sbmgen::fem::{CoefficientTable, CompiledKernel, ElementMatrix};
use sbmgen::geometry::Geometry;
use sbmgen::mesh::{build_mesh, IncompleteMesh};
use sbmgen::problem::ProblemSpec;
use sbmgen::solve::{l2_error, load_geometries, Assembler};
use sbmgen::symbolic::compile;

struct Setup {
    spec: ProblemSpec,
    geoms: Vec<Geometry>,
    mesh: IncompleteMesh,
}

fn setup(text: &str) -> Setup {
    let spec = common::spec(text);
    let geoms = load_geometries(&spec).unwrap();
    let mesh = build_mesh(&spec, &geoms).unwrap();
    Setup { spec, geoms, mesh }
}

fn kernel(spec: &ProblemSpec) -> CompiledKernel {
    let ir = compile(spec).unwrap().ir;
    CompiledKernel::new(&ir, &CoefficientTable::from_problem(spec)).unwrap()
}

fn elemental(s: &Setup) -> (Assembler<'_>, Vec<ElementMatrix>) {
    let asm = Assembler::new(&s.mesh, &s.geoms, &s.spec, 2).unwrap();
    let k = kernel(&s.spec);
    let el = asm.elemental(&k, &[Vec::new(), Vec::new()], 0.0, 0.0).unwrap();
    (asm, el)
}

fn small_circle() -> Setup {
    setup(&common::sbm_poisson(2, 2, 3, 0.4, "1 + x", "x*y", 1e-12))
}

#[test]
fn hanging_elimination_equals_dense_projection() {
    let s = small_circle();
    let mesh = &s.mesh;
    assert!(mesh.ndof() <= 50, "{} dofs", mesh.ndof());
    assert!(mesh.hanging_count() > 0);
    let (asm, el) = elemental(&s);
    let sys = asm.scatter(&el, 0..el.len());
    let gap = common::projection_gap(mesh, &el, &sys);
    assert!(gap <= 1e-12, "{gap:e}");
}

#[test]
fn mass_matrix_sums_to_area() {
    let text = common::with_weak_form(&common::sbm_poisson(2, 3, 5, 0.4, "0", "0", 1e-10), "u*v - f*v");
    let s = setup(&text);
    assert!(s.mesh.hanging_count() > 0);
    let (asm, el) = elemental(&s);
    let sys = asm.scatter(&el, 0..el.len());
    let total: f64 = (0..sys.a.n).flat_map(|r| sys.a.row(r).map(|(_, v)| v).collect::<Vec<_>>()).sum();
    let area = s.mesh.volume();
    assert!((total - area).abs() < 1e-12, "{total} vs {area}");
}

#[test]
fn element_stiffness_is_symmetric_with_constant_null_space() {
    let s = setup(&common::with_weak_form(
        &common::sbm_poisson(3, 2, 3, 0.3, "0", "0", 1e-10),
        "dot(grad(u), grad(v)) - f*v",
    ));
    let (_, el) = elemental(&s);
    for m in &el {
        let scale = (0..m.nbf).map(|i| m.a[i][i]).fold(0.0, f64::max);
        for i in 0..m.nbf {
            let row: f64 = m.a[i][..m.nbf].iter().sum();
            assert!(row.abs() <= 1e-13 * scale);
            for j in 0..m.nbf {
                assert!((m.a[i][j] - m.a[j][i]).abs() <= 1e-14 * scale);
            }
        }
    }
}

/// 2-point Gauss on the unit interval, written out by hand.
fn gauss2() -> Vec<(f64, f64)> {
    let a = 0.5 - 0.5 / 3f64.sqrt();
    vec![(a, 0.5), (1.0 - a, 0.5)]
}

#[test]
fn nitsche_system_on_four_squares_matches_hand_assembly() {
    let text = r#"
[domain]
dimension = 2
min = [0.0, 0.0]
max = [2.0, 2.0]
base_refine_level = 1

[equation]
variables = ["u"]
test = "v"
weak_form = """
dot(grad(u), grad(v)) - f*v
+ dirichletBoundary(
    -dot(grad(u), normal()) * v
    - dot(grad(v), normal()) * (u - dirichletValue())
    + alpha / elementDiameter() * (u - dirichletValue()) * v)
"""

[coefficients]
f = 2.0
alpha = 10.0

[[region]]
id = 1
where = "true"

[[boundary]]
variable = "u"
region = 1
kind = "DIRICHLET"
value = "x + 3*y"
"#;
    let s = setup(text);
    assert_eq!(s.mesh.elements.len(), 4);
    let (asm, el) = elemental(&s);
    let sys = asm.scatter(&el, 0..el.len());

    // Unit squares with lower-left corner (ex, ey); global node (i, j) is 3*j + i.
    let g = |x: f64, y: f64| x + 3.0 * y;
    let (f, alpha, h) = (2.0, 10.0, 1.0);
    let mut a = [[0.0; 9]; 9];
    let mut b = [0.0; 9];
    for ey in 0..2 {
        for ex in 0..2 {
            let node = |c: usize| 3 * (ey + (c >> 1 & 1)) + ex + (c & 1);
            let phi = |c: usize, x: f64, y: f64| {
                let (lx, ly) = (x - ex as f64, y - ey as f64);
                let (cx, cy) = ((c & 1) as f64, (c >> 1 & 1) as f64);
                let fx = if cx == 1.0 { lx } else { 1.0 - lx };
                let fy = if cy == 1.0 { ly } else { 1.0 - ly };
                (fx * fy, [(2.0 * cx - 1.0) * fy, (2.0 * cy - 1.0) * fx])
            };
            for &(qx, wx) in &gauss2() {
                for &(qy, wy) in &gauss2() {
                    let (x, y, w) = (ex as f64 + qx, ey as f64 + qy, wx * wy);
                    for i in 0..4 {
                        let (ni, gi) = phi(i, x, y);
                        b[node(i)] += w * f * ni;
                        for j in 0..4 {
                            let (_, gj) = phi(j, x, y);
                            a[node(i)][node(j)] += w * (gi[0] * gj[0] + gi[1] * gj[1]);
                        }
                    }
                }
            }
            let (x0, y0) = (ex as f64, ey as f64);
            let mut faces: Vec<(Box<dyn Fn(f64) -> (f64, f64)>, [f64; 2])> = Vec::new();
            if ey == 0 {
                faces.push((Box::new(move |t| (x0 + t, 0.0)), [0.0, -1.0]));
            }
            if ey == 1 {
                faces.push((Box::new(move |t| (x0 + t, 2.0)), [0.0, 1.0]));
            }
            if ex == 0 {
                faces.push((Box::new(move |t| (0.0, y0 + t)), [-1.0, 0.0]));
            }
            if ex == 1 {
                faces.push((Box::new(move |t| (2.0, y0 + t)), [1.0, 0.0]));
            }
            for (param, n) in &faces {
                for &(t, w) in &gauss2() {
                    let (x, y) = param(t);
                    for i in 0..4 {
                        let (ni, gi) = phi(i, x, y);
                        let dni = gi[0] * n[0] + gi[1] * n[1];
                        b[node(i)] += w * (-dni * g(x, y) + alpha / h * g(x, y) * ni);
                        for j in 0..4 {
                            let (nj, gj) = phi(j, x, y);
                            let dnj = gj[0] * n[0] + gj[1] * n[1];
                            a[node(i)][node(j)] += w * (-dnj * ni - dni * nj + alpha / h * nj * ni);
                        }
                    }
                }
            }
        }
    }
    let dof_of = |gi: usize| {
        let (i, j) = (gi % 3, gi / 3);
        let node = s
            .mesh
            .nodes
            .coords
            .iter()
            .position(|p| p[0] == i as f64 && p[1] == j as f64)
            .expect("lattice node");
        s.mesh.nodes.dof[node].unwrap() as usize
    };
    let got = sys.a.to_dense();
    for i in 0..9 {
        let di = dof_of(i);
        assert!((sys.b[di] - b[i]).abs() < 1e-13, "b[{i}] {} vs {}", sys.b[di], b[i]);
        for j in 0..9 {
            let dj = dof_of(j);
            assert!((got[di][dj] - a[i][j]).abs() < 1e-13, "a[{i}][{j}] {} vs {}", got[di][dj], a[i][j]);
        }
    }
}

#[test]
fn wall_faces_reduce_sbm_terms_to_nitsche() {
    // With d = 0 on walls the shifted form and the plain Nitsche form agree.
    let box_only = |form: &str| {
        format!(
            r#"
[domain]
dimension = 2
min = [0.0, 0.0]
max = [1.0, 1.0]
base_refine_level = 3

[equation]
variables = ["u"]
test = "v"
weak_form = """{form}"""

[coefficients]
alpha = 25.0

[[region]]
id = 1
where = "true"

[[boundary]]
variable = "u"
region = 1
kind = "DIRICHLET"
value = "sin(x) * y"
"#
        )
    };
    let sbm = box_only(
        "dot(grad(u), grad(v)) + dirichletBoundary(-dot(grad(u), normal()) * v \
         - dot(grad(v), normal()) * (u + dot(grad(u), distanceToBoundary()) - dirichletValue()) \
         + alpha / elementDiameter() * (u + dot(grad(u), distanceToBoundary()) - dirichletValue()) \
         * (v + dot(grad(v), distanceToBoundary())))",
    );
    let plain = box_only(
        "dot(grad(u), grad(v)) + dirichletBoundary(-dot(grad(u), trueNormal()) * v \
         - dot(grad(v), trueNormal()) * (u - dirichletValue()) + alpha / elementDiameter() * (u - dirichletValue()) * v)",
    );
    let (s1, s2) = (setup(&sbm), setup(&plain));
    let (a1, e1) = elemental(&s1);
    let (a2, e2) = elemental(&s2);
    let (m1, m2) = (a1.scatter(&e1, 0..e1.len()), a2.scatter(&e2, 0..e2.len()));
    assert!(common::max_abs_diff(&m1.a.values, &m2.a.values) < 1e-13);
    assert!(common::max_abs_diff(&m1.b, &m2.b) < 1e-13);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn scatter_order_does_not_change_entries(seed in any::<u64>()) {
        let s = setup(&common::sbm_poisson(2, 3, 5, 0.37, "1 + x*y", "x - y", 1e-10));
        let (asm, el) = elemental(&s);
        let base = asm.scatter(&el, 0..el.len());
        let mut order: Vec<usize> = (0..el.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = asm.scatter(&el, order);
        let scale = base.a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(common::max_abs_diff(&base.a.values, &shuffled.a.values) <= 1e-12 * scale);
        prop_assert!(common::max_abs_diff(&base.b, &shuffled.b) <= 1e-12 * scale);
        let reversed = asm.scatter(&el, (0..el.len()).rev());
        prop_assert!(common::max_abs_diff(&base.a.values, &reversed.a.values) <= 1e-12 * scale);
    }

    #[test]
    fn l2_error_agrees_with_five_point_rule(seed in any::<u64>()) {
        let s = small_circle();
        let mesh = &s.mesh;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..mesh.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nodal = mesh.nodes.expand(&free);
        let exact = |p: [f64; 3]| (3.0 * p[0]).sin() * p[1];
        let got = l2_error(mesh, &nodal, exact);
        let want = five_point_l2(mesh, &nodal, exact);
        prop_assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

/// Tensor 5-point Gauss-Legendre L2 norm of `u_h - exact`, bilinear
/// interpolation written out independently of the library's basis.
fn five_point_l2(mesh: &IncompleteMesh, nodal: &[f64], exact: impl Fn([f64; 3]) -> f64) -> f64 {
    let r = (10.0f64 / 7.0).sqrt();
    let xs = [
        -(5.0 + 2.0 * r).sqrt() / 3.0,
        -(5.0 - 2.0 * r).sqrt() / 3.0,
        0.0,
        (5.0 - 2.0 * r).sqrt() / 3.0,
        (5.0 + 2.0 * r).sqrt() / 3.0,
    ];
    let s = 13.0 * 70f64.sqrt();
    let ws = [(322.0 - s) / 900.0, (322.0 + s) / 900.0, 128.0 / 225.0, (322.0 + s) / 900.0, (322.0 - s) / 900.0];
    let mut sum = 0.0;
    for e in 0..mesh.elements.len() {
        let (lo, hi) = mesh.element_bounds(e);
        let c = mesh.corners(e);
        let (hx, hy) = (hi[0] - lo[0], hi[1] - lo[1]);
        for (i, xi) in xs.iter().enumerate() {
            for (j, eta) in xs.iter().enumerate() {
                let (sx, sy) = (0.5 * (xi + 1.0), 0.5 * (eta + 1.0));
                let uh = nodal[c[0] as usize] * (1.0 - sx) * (1.0 - sy)
                    + nodal[c[1] as usize] * sx * (1.0 - sy)
                    + nodal[c[2] as usize] * (1.0 - sx) * sy
                    + nodal[c[3] as usize] * sx * sy;
                let p = [lo[0] + sx * hx, lo[1] + sy * hy, 0.0];
                sum += ws[i] * ws[j] * hx * hy / 4.0 * (uh - exact(p)).powi(2);
            }
        }
    }
    sum.sqrt()
}

#[test]
fn ir_round_trip_gives_identical_matrices() {
    let s = setup(&common::sbm_poisson(2, 3, 5, 0.4, "1 + x", "x*y", 1e-10));
    let ir = compile(&s.spec).unwrap().ir;
    let again = parse_ir(&serialize_ir(&ir)).unwrap();
    assert_eq!(ir, again);
    let coefs = CoefficientTable::from_problem(&s.spec);
    let asm = Assembler::new(&s.mesh, &s.geoms, &s.spec, 2).unwrap();
    let none = [Vec::new(), Vec::new()];
    let a = asm.assemble(&CompiledKernel::new(&ir, &coefs).unwrap(), &none, 0.0, 0.0).unwrap();
    let b = asm.assemble(&CompiledKernel::new(&again, &coefs).unwrap(), &none, 0.0, 0.0).unwrap();
    assert_eq!(a.a.values, b.a.values);
    assert_eq!(a.b, b.b);
}

#[test]
fn parallel_and_serial_elementals_agree() {
    let s = setup(&common::sbm_poisson(3, 3, 4, 0.3, "1", "z", 1e-10));
    let mut asm = Assembler::new(&s.mesh, &s.geoms, &s.spec, 2).unwrap();
    let k = kernel(&s.spec);
    let none = [Vec::new(), Vec::new()];
    asm.parallel = true;
    let p = asm.assemble(&k, &none, 0.0, 0.0).unwrap();
    asm.parallel = false;
    let q = asm.assemble(&k, &none, 0.0, 0.0).unwrap();
    assert_eq!(p.a.values, q.a.values);
    assert_eq!(p.b, q.b);
}
