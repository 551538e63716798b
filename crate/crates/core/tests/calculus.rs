//! Lift/average calculus between plane and graph functions, checked on
//! random inputs.

use std::sync::OnceLock;

use proptest::prelude::*;
use reebflow::hamiltonian::HamiltonianField;
use reebflow::reeb::{ReebConfig, ReebGraph};
use reebflow::spaces::{
    duality_check, norm_hbar_gamma, norm_hgamma, GraphFunction, GraphMeasure, Grid2D, GridFunction2D, GridProjection,
    PlaneMeasure, Weight,
};

struct Setup {
    graph: ReebGraph,
    grid: Grid2D,
    projection: GridProjection,
    plane: PlaneMeasure,
    measure: GraphMeasure,
}

fn setup(field: HamiltonianField, half: f64) -> Setup {
    let graph = ReebGraph::build(&field, &ReebConfig { grid_resolution: 128, ..ReebConfig::default() }).unwrap();
    let grid = Grid2D::square(half, 400);
    let projection = graph.project_grid(grid);
    let plane = PlaneMeasure::new(&field, Weight::default(), grid);
    let measure = GraphMeasure::new(&graph, Weight::default());
    Setup { graph, grid, projection, plane, measure }
}

fn quadratic() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(HamiltonianField::quadratic(), 3.6))
}

fn double_well() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(HamiltonianField::double_well(), 3.6))
}

fn setups() -> [&'static Setup; 2] {
    [quadratic(), double_well()]
}

/// Smooth plane function from a handful of random coefficients.
fn plane_fn(s: &Setup, c: &[f64; 6]) -> GridFunction2D {
    GridFunction2D::from_fn(s.grid, |p| {
        c[0] + c[1] * (c[2] * p[0] + 0.7 * p[1]).sin() + c[3] * (0.5 * c[4] * p[0] * p[1]).cos() + c[5] * p[0]
    })
}

/// Smooth graph function, different on each edge.
fn graph_fn(s: &Setup, c: &[f64; 6]) -> GraphFunction {
    GraphFunction::from_fn(&s.graph, |z, k| {
        c[0] + c[1 + k % 3] * (0.5 * c[4] * z + k as f64).sin() + c[5] * (-0.3 * z).exp()
    })
}

fn resolved_nodes(s: &Setup, k: usize) -> Vec<usize> {
    s.graph.resolved_nodes(k, s.grid.dx(), 3.0)
}

fn coeffs() -> impl Strategy<Value = [f64; 6]> {
    proptest::array::uniform6(-2.0f64..2.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lift_is_an_isometry(c in coeffs()) {
        for s in setups() {
            let f = graph_fn(s, &c);
            let lifted = s.graph.lift(&f, &s.projection);
            let plane = norm_hgamma(&s.plane, &lifted).unwrap();
            let graph = norm_hbar_gamma(&s.measure, &f);
            prop_assert!((plane - graph).abs() <= 0.01 * graph.max(1e-3), "{} vs {}", plane, graph);
        }
    }

    #[test]
    fn averaging_is_a_contraction(c in coeffs()) {
        for s in setups() {
            let u = plane_fn(s, &c);
            let avg = s.graph.project_grid_function(&u).unwrap();
            prop_assert!(norm_hbar_gamma(&s.measure, &avg) <= norm_hgamma(&s.plane, &u).unwrap() * 1.01);
        }
    }

    #[test]
    fn duality_pairings_agree(c in coeffs(), d in coeffs()) {
        for s in setups() {
            let u = plane_fn(s, &c);
            let f = graph_fn(s, &d);
            let (g, p) = duality_check(&s.graph, &s.plane, &s.measure, &s.projection, &f, &u).unwrap();
            let scale = norm_hbar_gamma(&s.measure, &f) * norm_hgamma(&s.plane, &u).unwrap();
            prop_assert!((g - p).abs() <= 0.01 * scale.max(1e-3), "{} vs {}", g, p);
        }
    }

    #[test]
    fn averaging_pulls_out_lifted_factors(c in coeffs(), d in coeffs()) {
        for s in setups() {
            let u = plane_fn(s, &c);
            let f = graph_fn(s, &d);
            let lhs = s.graph.project_grid_function(&s.graph.lift(&f, &s.projection).mul(&u).unwrap()).unwrap();
            let rhs = f.zip_with(&s.graph.project_grid_function(&u).unwrap(), |a, b| a * b);
            let scale = f.max_abs() * u.max_abs();
            for k in 0..s.graph.edges().len() {
                for j in resolved_nodes(s, k) {
                    prop_assert!((lhs.edges[k][j] - rhs.edges[k][j]).abs() <= 0.02 * scale, "edge {} node {}", k, j);
                }
            }
        }
    }

    #[test]
    fn cauchy_schwarz(c in coeffs(), d in coeffs()) {
        let s = quadratic();
        let u = plane_fn(s, &c);
        let v = plane_fn(s, &d);
        let i = s.plane.inner(&u, &v).unwrap();
        prop_assert!(i * i <= s.plane.inner(&u, &u).unwrap() * s.plane.inner(&v, &v).unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn trivial_pairings() {
    for s in setups() {
        let one = GridFunction2D::constant(s.grid, 1.0);
        let f1 = GraphFunction::constant(&s.graph, 1.0);
        let (g, p) = duality_check(&s.graph, &s.plane, &s.measure, &s.projection, &f1, &one).unwrap();
        let mass = s.plane.total_mass();
        assert!((g - mass).abs() < 0.01 * mass && (p - mass).abs() < 0.01 * mass);
        let f0 = GraphFunction::zeros(&s.graph);
        assert_eq!(duality_check(&s.graph, &s.plane, &s.measure, &s.projection, &f0, &one).unwrap(), (0.0, 0.0));
        assert_eq!(norm_hbar_gamma(&s.measure, &f0), 0.0);
    }
}

#[test]
fn lift_examples() {
    let s = quadratic();
    let c = s.graph.lift(&GraphFunction::constant(&s.graph, 2.5), &s.projection);
    assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    let z = s.graph.lift(&GraphFunction::from_fn(&s.graph, |z, _| z), &s.projection);
    let r2 = GridFunction2D::from_fn(s.grid, |p| (p[0] * p[0] + p[1] * p[1]).min(s.graph.z_max()));
    assert!(z.sub(&r2).unwrap().max_abs() < 1e-6);
}

#[test]
fn average_of_lift_is_identity_at_nodes() {
    for s in setups() {
        let f = graph_fn(s, &[0.3, 1.0, -0.5, 0.8, 1.3, 0.4]);
        let back = s.graph.project_grid_function(&s.graph.lift(&f, &s.projection)).unwrap();
        for k in 0..s.graph.edges().len() {
            for j in resolved_nodes(s, k) {
                assert!(
                    (back.edges[k][j] - f.edges[k][j]).abs() < 1e-2,
                    "edge {k} node {j}: {} vs {}",
                    back.edges[k][j],
                    f.edges[k][j]
                );
            }
        }
    }
}

#[test]
fn coarea_identity() {
    // int_{z1 < H < z2} u dx = sum_k int_{z1}^{z2} T_k(z) u^wedge(z, k) dz
    let (z1, z2) = (0.2, 3.0);
    for s in setups() {
        let u = plane_fn(s, &[1.0, 0.5, 1.1, -0.4, 0.9, 0.2]);
        let field = s.graph.field();
        let lhs: f64 = s
            .grid
            .centers()
            .zip(&u.values)
            .filter(|(p, _)| (z1..z2).contains(&field.value(*p)))
            .map(|(_, v)| v * s.grid.cell_area())
            .sum();
        let avg = s.graph.project_grid_function(&u).unwrap();
        let splines = s.graph.interpolant(&avg);
        let mut rhs = 0.0;
        for e in s.graph.edges() {
            let (a, b) = (z1.max(e.z_lo), z2.min(e.z_hi));
            if a >= b {
                continue;
            }
            let n = 4000;
            let h = (b - a) / n as f64;
            for i in 0..n {
                let z = a + (i as f64 + 0.5) * h;
                rhs += h * e.coefficients(z).period * splines[e.id].eval(z);
            }
        }
        assert!((lhs - rhs).abs() < 0.01 * lhs.abs(), "{lhs} vs {rhs}");
    }
}

#[test]
fn weight_tail_beyond_cap_is_negligible() {
    let field = HamiltonianField::quadratic();
    let g = ReebGraph::build(&field, &ReebConfig { z_max: Some(16.0), grid_resolution: 96, ..ReebConfig::default() })
        .unwrap();
    let w = Weight::default();
    let total = w.admissibility_integral(&g);
    let exact = std::f64::consts::PI * (1.0 - (-g.z_max()).exp());
    assert!((total - exact).abs() < 1e-3 * exact);
    // tail: int_{z_max}^inf e^{-z} T dz with T continued at its cap value
    let tail = w.h(g.z_max()) * g.coefficients(0, g.z_max()).period;
    assert!(tail < 1e-6 * total);
}
