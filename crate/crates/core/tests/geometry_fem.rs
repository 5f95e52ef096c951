use std::collections::HashSet;

use num_complex::Complex64;
use proptest::prelude::*;

use prrbc::fem::{assemble_affine_operators, assemble_load_vector, lame_parameters, LoadedBoundary, Material, MovingLoad};
use prrbc::mesh::{generate_component_mesh, ComponentGeometry, ComponentKind, ComponentMesh, Crack, Side};
use prrbc::newmark::{newmark_displacements, DenseStructure};
use prrbc::sparse::LdltFactor;
use prrbc::Error;

fn vertex_edge_count(m: &ComponentMesh) -> (usize, usize) {
    let mut verts = HashSet::new();
    let mut edges = HashSet::new();
    for t in &m.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            verts.insert(a);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    (verts.len(), edges.len())
}

#[test]
fn unit_square_counts() {
    let m = generate_component_mesh(&ComponentGeometry::new(ComponentKind::Rect, 1.0, 1.0), 1.0).unwrap();
    assert_eq!(m.triangles.len(), 2);
    assert_eq!(m.n_nodes(), 9);
}

#[test]
fn rect_counts_match_edge_enumeration() {
    let m = generate_component_mesh(&ComponentGeometry::new(ComponentKind::Rect, 5.0, 1.0), 0.25).unwrap();
    assert_eq!(m.triangles.len(), 160);
    let (v, e) = vertex_edge_count(&m);
    assert_eq!(v, 21 * 5);
    assert_eq!(m.n_nodes(), v + e);
}

#[test]
fn crack_faces_share_coordinates() {
    let mut g = ComponentGeometry::new(ComponentKind::RectLoadedCracked, 5.0, 1.0);
    g.crack = Some(Crack { center_x: 2.5, depth: 0.3, opening: 0.0 });
    let m = generate_component_mesh(&g, 0.1).unwrap();
    let mut pairs = 0;
    for i in 0..m.n_nodes() {
        for j in i + 1..m.n_nodes() {
            if m.nodes[i] == m.nodes[j] {
                assert!((m.nodes[i][0] - 2.5).abs() < 1e-12 && m.nodes[i][1] > 0.7 - 1e-12);
                pairs += 1;
            }
        }
    }
    assert_eq!(pairs, 6);
}

#[test]
fn port_dof_lists() {
    let g = ComponentGeometry::new(ComponentKind::Rect, 5.0, 1.0);
    let m = generate_component_mesh(&g, 0.25).unwrap();
    assert_eq!(m.port_nodes(Side::Left).len(), 9);
    assert_eq!(m.port_dofs(Side::Left).len(), 18);
    assert_eq!(m.port_dofs(Side::Right), m.port_dofs(Side::Right));
    let end = generate_component_mesh(&ComponentGeometry::new(ComponentKind::Rect15L, 5.0, 1.0), 0.25).unwrap();
    assert!(end.port_dofs(Side::Left).is_empty());
}

#[test]
fn mass_integrates_unit_field() {
    let m = generate_component_mesh(&ComponentGeometry::new(ComponentKind::Rect, 1.0, 1.0), 0.5).unwrap();
    let ops = assemble_affine_operators(&m, Material { density: 1.0, poisson: 0.15 }).unwrap();
    let one = vec![1.0; ops.n_dofs()];
    assert!((ops.mass.bilinear(&one, &one) - 2.0).abs() < 1e-12);
}

#[test]
fn rigid_translation_has_no_strain_energy() {
    let m = generate_component_mesh(&ComponentGeometry::new(ComponentKind::Rect, 5.0, 1.0), 0.5).unwrap();
    let ops = assemble_affine_operators(&m, Material::default()).unwrap();
    for c in 0..2 {
        let mut u = vec![0.0; ops.n_dofs()];
        for n in 0..m.n_nodes() {
            if let Some(d) = m.dofs.dof(n, c) {
                u[d] = 1.0;
            }
        }
        let r = ops.stiffness.mul_vec(&u);
        assert!(r.iter().all(|x| x.abs() < 1e-12), "direction {c}");
    }
}

#[test]
fn lame_arithmetic() {
    let (lambda, mu) = lame_parameters(30e9, 0.15);
    let e = 30e9f64;
    assert!((lambda - e * 0.15 / (1.15 * 0.7)).abs() < 1.0);
    assert!((lambda - 5.590e9).abs() / 5.590e9 < 1e-3);
    assert!((mu - 13.043e9).abs() / 13.043e9 < 1e-4);
}

#[test]
fn gaussian_load_integral_on_fine_mesh() {
    let g = ComponentGeometry::new(ComponentKind::RectLoaded, 5.0, 1.0);
    let mesh = generate_component_mesh(&g, 0.025).unwrap();
    let b = LoadedBoundary::new(&mesh).unwrap();
    let load = MovingLoad { magnitude: 1.5e6, width: 0.03, friction: 0.6, d1: 0.1, d2: 0.1 };
    let f = assemble_load_vector(&b, mesh.n_free_dofs(), &load, 0.05).unwrap();
    let sx: f64 = b.dofs.iter().map(|d| f[d[0]]).sum();
    let sy: f64 = b.dofs.iter().map(|d| f[d[1]]).sum();
    assert!((sx - 7.976e4).abs() / 7.976e4 < 1e-3);
    assert!((sy + 0.6 * sx).abs() <= 1e-12 * sx);
    let off = assemble_load_vector(&b, mesh.n_free_dofs(), &load, -2.0).unwrap();
    assert!(off.iter().all(|&v| v == 0.0));
}

#[test]
fn static_solve_at_zero_frequency() {
    let m = generate_component_mesh(&ComponentGeometry::new(ComponentKind::Rect15L, 5.0, 1.0), 0.5).unwrap();
    let ops = assemble_affine_operators(&m, Material::default()).unwrap();
    let e = 33e9;
    let f: Vec<f64> = (0..ops.n_dofs()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    let ustat = LdltFactor::factor(&ops.stiffness.map(|v| e * v)).unwrap().solve(&f);
    let a = ops.frequency_operator(0.0, e, 1.0, 0.01).unwrap();
    let fc: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let u = LdltFactor::factor(&a).unwrap().solve(&fc);
    let scale = ustat.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (z, s) in u.iter().zip(&ustat) {
        assert!((z.re - s).abs() <= 1e-10 * scale && z.im.abs() <= 1e-10 * scale);
    }
}

#[test]
fn frequency_residual_on_bridge_scale_component() {
    let m = generate_component_mesh(&ComponentGeometry::new(ComponentKind::TShape, 5.0, 1.0), 0.25).unwrap();
    let ops = assemble_affine_operators(&m, Material::default()).unwrap();
    let a = ops.frequency_operator(300.0, 33e9, 2.0, 0.015).unwrap();
    let f: Vec<Complex64> = (0..ops.n_dofs()).map(|i| Complex64::new((i % 5) as f64, -((i % 3) as f64))).collect();
    let u = LdltFactor::factor(&a).unwrap().solve(&f);
    let r = a.mul_vec(&u);
    let num: f64 = r.iter().zip(&f).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = f.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    assert!(num / den <= 1e-10, "{}", num / den);
}

#[test]
fn single_dof_frequency_closed_form() {
    let (m, c, k, w) = (2.0, 0.3, 50.0, 4.0);
    let f = Complex64::new(1.0, 0.5);
    let mut a = prrbc::sparse::TripletBuilder::new(1, 1);
    a.push(0, 0, Complex64::new(-w * w * m + k, w * c));
    let u = LdltFactor::factor(&a.build()).unwrap().solve(&[f])[0];
    let exact = f / Complex64::new(-w * w * m + k, w * c);
    assert!((u - exact).norm() < 1e-14);
}

fn oscillator() -> DenseStructure {
    DenseStructure {
        mass: nalgebra::DMatrix::from_element(1, 1, 1.0),
        damping: nalgebra::DMatrix::zeros(1, 1),
        stiffness: nalgebra::DMatrix::from_element(1, 1, 1.0),
    }
}

fn step_error(n: usize) -> f64 {
    let t_final = 10.0;
    let u = newmark_displacements(&oscillator(), t_final, n, |_, _, f| {
        f[0] = 1.0;
        Ok(())
    })
    .unwrap();
    let dt = t_final / n as f64;
    u.iter().enumerate().map(|(j, u)| (u[0] - (1.0 - (j as f64 * dt).cos())).abs()).fold(0.0, f64::max)
}

#[test]
fn step_response_matches_analytic() {
    let t_final = std::f64::consts::PI;
    let n = 3142;
    let u = newmark_displacements(&oscillator(), t_final, n, |_, _, f| {
        f[0] = 1.0;
        Ok(())
    })
    .unwrap();
    assert!((u[n][0] - 2.0).abs() <= 1e-5);
}

#[test]
fn halving_the_step_quarters_the_error() {
    let e: Vec<f64> = [200, 400, 800, 1600].iter().map(|&n| step_error(n)).collect();
    for w in e.windows(2) {
        let r = w[0] / w[1];
        assert!((r - 4.0).abs() <= 0.6, "ratio {r}");
    }
}

#[test]
fn zero_load_stays_at_rest() {
    let u = newmark_displacements(&oscillator(), 1.0, 50, |_, _, _| Ok(())).unwrap();
    assert!(u.iter().all(|v| v[0] == 0.0));
}

#[test]
fn misaligned_crack_is_an_error() {
    let mut g = ComponentGeometry::new(ComponentKind::RectLoadedCracked, 5.0, 1.0);
    g.crack = Some(Crack { center_x: 2.5, depth: 0.3, opening: 0.0 });
    assert!(matches!(generate_component_mesh(&g, 0.25), Err(Error::CrackMisaligned(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn p2_nodes_are_vertices_plus_edges(nx in 1usize..12, ny in 1usize..6, kind in 0usize..3) {
        let kind = [ComponentKind::Rect, ComponentKind::RectLoaded, ComponentKind::Rect15L][kind];
        let h = 1.0 / ny as f64;
        let g = ComponentGeometry::new(kind, nx as f64 * h * 2.0, 1.0);
        let m = generate_component_mesh(&g, h).unwrap();
        let (v, e) = vertex_edge_count(&m);
        prop_assert_eq!(m.n_nodes(), v + e);
        prop_assert!((m.total_area() - g.area()).abs() < 1e-10 * g.area());
    }

    #[test]
    fn mass_is_symmetric_positive(seed in 0u64..1000) {
        let m = generate_component_mesh(&ComponentGeometry::new(ComponentKind::TShape, 5.0, 1.0), 0.5).unwrap();
        let ops = assemble_affine_operators(&m, Material::default()).unwrap();
        let x: Vec<f64> = (0..ops.n_dofs()).map(|i| (((i as u64 + 1) * (seed + 7)) % 13) as f64 - 6.0).collect();
        prop_assert!(ops.mass.asymmetry() < 1e-12);
        prop_assert!(ops.stiffness.asymmetry() < 1e-12);
        prop_assert!(ops.mass.bilinear(&x, &x) > 0.0);
        prop_assert!(ops.stiffness.bilinear(&x, &x) >= -1e-9);
    }
}
