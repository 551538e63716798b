//! One function per catalog id. Each returns its table plus plot data;
//! nothing here touches the file system.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::graphdiff::{
    assemble_coefficients, graph_endpoints, semigroup_bar_series, GluingWeights, GraphDiffError, GraphMesh,
    MeshFunction, PathConfig,
};
use crate::graphspde::{CoupledSystem, GraphSolver, GraphSpdeConfig, GraphSpdeError};
use crate::hamiltonian::{HamiltonianField, HamiltonianKind, Point, Rect};
use crate::noise::{HomogeneousFieldSampler, NoiseError, NoiseSpec};
use crate::numerics::{ks_critical, ks_statistic, linear_fit, mean_se, mix_seed, quantile, CubicSpline};
use crate::pde2d::{encode_snapshot, Pde2dError, PlaneSolver, SpdeConfig};
use crate::reeb::{EdgeInterpolant, ReebConfig, ReebError, ReebGraph};
use crate::sde::{
    endpoints, kernel_bound, kernel_constants, kernel_histogram, path_rng, simulate_path, IntegratorConfig,
};
use crate::spaces::{
    duality_check, norm_hbar_gamma, norm_hgamma, GraphFunction, GraphMeasure, Grid2D, GridFunction2D, PlaneMeasure,
    SpacesError, Weight,
};

use super::config::{ConfigError, ExperimentSpec};
use super::table::{ConvergenceTable, Row};

/// `|dT/dz|` below this fraction of `max T / edge length` counts as flat.
pub const ASSUMPTION2_TOL: f64 = 1e-4;

/// Product-rule nodes must keep their cycle this many grid cells away from
/// the critical levels of the edge.
pub const RESOLVED_CELLS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(
        "{hamiltonian}: the period is flat on edge {edge} (min |dT/dz| = {slope:e}); pointwise-in-time \
         convergence is not expected, run weak_time_avg instead"
    )]
    Assumption2Violated { hamiltonian: String, edge: usize, slope: f64 },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Reeb(#[from] ReebError),
    #[error(transparent)]
    GraphDiff(#[from] GraphDiffError),
    #[error(transparent)]
    Pde2d(#[from] Pde2dError),
    #[error(transparent)]
    GraphSpde(#[from] GraphSpdeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Spaces(#[from] SpacesError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub table: ConvergenceTable,
    pub artifacts: Vec<Artifact>,
    /// Diagnostics recorded in the manifest.
    pub notes: BTreeMap<String, Value>,
}

impl ExperimentOutput {
    fn new(id: &str) -> Self {
        Self { table: ConvergenceTable::new(id), artifacts: vec![], notes: BTreeMap::new() }
    }

    fn csv(&mut self, name: &str, text: String) {
        self.artifacts.push(Artifact { name: name.into(), bytes: text.into_bytes() });
    }

    fn note(&mut self, key: &str, v: Value) {
        self.notes.insert(key.into(), v);
    }
}

pub fn run_experiment(id: &str, spec: &ExperimentSpec, seed: u64) -> Result<ExperimentOutput, ExperimentError> {
    match id {
        "period_oracle" => period_oracle(spec),
        "radial_exactness" => radial_exactness(spec, seed),
        "projection_calculus" => projection_calculus(spec, seed),
        "kernel_bound" => kernel_bound_fit(spec, seed),
        "hs_scaling" => hs_scaling(spec, seed),
        "semigroup_strong" => semigroup_strong(spec),
        "weak_time_avg" => weak_time_avg(spec, seed),
        "spde_convergence" => coupled_spde(spec, seed, "spde_convergence", false),
        "linear_weak" => coupled_spde(spec, seed, "linear_weak", true),
        other => Err(ExperimentError::Unsupported(format!("no experiment `{other}`"))),
    }
}

fn build_graph(field: &HamiltonianField, spec: &ExperimentSpec) -> Result<ReebGraph, ReebError> {
    ReebGraph::build(field, &ReebConfig { z_max: spec.z_max, ..ReebConfig::default() })
}

fn is_quadratic(field: &HamiltonianField) -> bool {
    matches!(field.kind(), HamiltonianKind::Quadratic)
}

/// Refuses graphs with an edge on which the period does not vary.
pub fn check_assumption2(graph: &ReebGraph) -> Result<(), ExperimentError> {
    for e in graph.edges() {
        let zs: Vec<f64> = e.nodes.iter().map(|n| n.z).collect();
        let ts: Vec<f64> = e.nodes.iter().map(|n| n.period).collect();
        let spline = CubicSpline::new(zs.clone(), ts.clone());
        let scale = ts.iter().fold(0.0f64, |a, t| a.max(t.abs())) / e.length();
        let slope = zs.iter().map(|&z| spline.derivative(z).abs()).fold(f64::INFINITY, f64::min);
        if slope < ASSUMPTION2_TOL * scale {
            return Err(ExperimentError::Assumption2Violated { hamiltonian: graph.field().name(), edge: e.id, slope });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn period_oracle(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let field = spec.field()?;
    if !is_quadratic(&field) {
        return Err(ExperimentError::Unsupported(
            "the period oracle T = pi holds for the quadratic Hamiltonian only".into(),
        ));
    }
    let graph = build_graph(&field, spec)?;
    let (mut period_err, mut flux_err, mut nodes) = (0.0f64, 0.0f64, 0usize);
    for e in graph.edges() {
        for n in &e.nodes {
            period_err = period_err.max((n.period - PI).abs());
            flux_err = flux_err.max((n.flux - 4.0 * PI * n.z).abs() / (4.0 * PI * n.z));
            nodes += 1;
        }
    }
    let mut out = ExperimentOutput::new("period_oracle");
    out.table.push(Row::check("period_max_error", None, period_err, None, spec.tolerance));
    out.table.push(Row::check("flux_max_rel_error", None, flux_err, None, spec.tolerance));
    out.table.push(Row::info("nodes", None, nodes as f64, 0.0));
    out.csv("coefficients.csv", assemble_coefficients(&graph).to_csv());
    Ok(out)
}

fn radial_exactness(spec: &ExperimentSpec, seed: u64) -> Result<ExperimentOutput, ExperimentError> {
    let field = spec.field()?;
    if !field.is_radial() {
        return Err(ExperimentError::Unsupported(
            "the energy law is eps-independent only for radial Hamiltonians".into(),
        ));
    }
    let graph = build_graph(&field, spec)?;
    let gluing = GluingWeights::new(&graph);
    let (x0, t, n) = (spec.start, spec.horizon, spec.paths);
    let h0 = field.value(x0);
    let mean_exact = h0 + 2.0 * t;
    let start = graph.project(x0)?;
    let ends = graph_endpoints(&graph, &gluing, start, t, &PathConfig::new(spec.graph_dt), n, mix_seed(seed, u64::MAX));
    let graph_z: Vec<f64> = ends.iter().map(|s| s.point.z).collect();
    let mut out = ExperimentOutput::new("radial_exactness");
    out.note("graph_capped", json!(ends.iter().filter(|s| s.capped).count()));
    let quadratic = is_quadratic(&field);
    if quadratic {
        let (m, se) = mean_se(&graph_z);
        out.table
            .push(Row { std_error: se, ..Row::check("graph_mean_gap", None, (m - mean_exact).abs(), None, 3.0 * se) });
    }
    let qs: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    let mut columns = vec![qs.iter().map(|&q| quantile(&graph_z, q)).collect::<Vec<_>>()];
    for (i, &eps) in spec.eps.iter().enumerate() {
        let cfg = IntegratorConfig::strang(eps, spec.dt);
        let hz: Vec<f64> =
            endpoints(&field, &cfg, x0, t, n, mix_seed(seed, i as u64)).iter().map(|s| field.value(s.x)).collect();
        let d = ks_statistic(&hz, &graph_z);
        out.table.push(Row::check("ks", Some(eps), d, None, ks_critical(hz.len(), graph_z.len(), spec.alpha)));
        if quadratic {
            let (m, se) = mean_se(&hz);
            out.table.push(Row {
                std_error: se,
                ..Row::check("mean_gap", Some(eps), (m - mean_exact).abs(), None, 3.0 * se)
            });
        }
        columns.push(qs.iter().map(|&q| quantile(&hz, q)).collect());
    }
    let mut text = String::from("q,graph");
    for eps in &spec.eps {
        write!(text, ",eps_{eps}").unwrap();
    }
    text.push('\n');
    for (j, q) in qs.iter().enumerate() {
        write!(text, "{q}").unwrap();
        for c in &columns {
            write!(text, ",{}", c[j]).unwrap();
        }
        text.push('\n');
    }
    out.csv("energy_quantiles.csv", text);
    Ok(out)
}

/// Smooth plane function from six coefficients.
fn plane_fn(grid: Grid2D, c: &[f64; 6]) -> GridFunction2D {
    GridFunction2D::from_fn(grid, |p| {
        c[0] + c[1] * (c[2] * p[0] + 0.7 * p[1]).sin() + c[3] * (0.5 * c[4] * p[0] * p[1]).cos() + c[5] * p[0]
    })
}

/// Smooth graph function, different on each edge.
fn graph_fn(graph: &ReebGraph, c: &[f64; 6]) -> GraphFunction {
    GraphFunction::from_fn(graph, |z, k| {
        c[0] + c[1 + k % 3] * (0.5 * c[4] * z + k as f64).sin() + c[5] * (-0.3 * z).exp()
    })
}

fn projection_calculus(spec: &ExperimentSpec, seed: u64) -> Result<ExperimentOutput, ExperimentError> {
    let mut out = ExperimentOutput::new("projection_calculus");
    let mut text = String::from("hamiltonian,pair,contraction,isometry,duality,product,product_all_nodes\n");
    for (fi, field) in spec.fields()?.iter().enumerate() {
        let graph =
            ReebGraph::build(field, &ReebConfig { z_max: spec.z_max, grid_resolution: 128, ..ReebConfig::default() })?;
        let grid = Grid2D::square(spec.half_width, spec.grid);
        let projection = graph.project_grid(grid);
        let plane = PlaneMeasure::new(field, Weight::default(), grid);
        let measure = GraphMeasure::new(&graph, Weight::default());
        let sub = mix_seed(seed, fi as u64);
        let resolved: Vec<Vec<usize>> =
            (0..graph.edges().len()).map(|k| graph.resolved_nodes(k, grid.dx(), RESOLVED_CELLS)).collect();
        let errs: Vec<[f64; 5]> = (0..spec.pairs)
            .into_par_iter()
            .map(|p| -> Result<[f64; 5], SpacesError> {
                let mut rng = path_rng(sub, p as u64);
                let mut draw = || -> [f64; 6] { std::array::from_fn(|_| rng.random_range(-2.0..2.0)) };
                let u = plane_fn(grid, &draw());
                let f = graph_fn(&graph, &draw());
                let u_norm = norm_hgamma(&plane, &u)?;
                let f_norm = norm_hbar_gamma(&measure, &f);
                let u_hat = graph.project_grid_function(&u)?;
                let contraction = norm_hbar_gamma(&measure, &u_hat) / u_norm - 1.0;
                let lifted = graph.lift(&f, &projection);
                let isometry = (norm_hgamma(&plane, &lifted)? - f_norm).abs() / f_norm;
                let (g, pl) = duality_check(&graph, &plane, &measure, &projection, &f, &u)?;
                let duality = (g - pl).abs() / (f_norm * u_norm);
                let lhs = graph.project_grid_function(&lifted.mul(&u)?)?;
                let rhs = f.zip_with(&u_hat, |a, b| a * b);
                let scale = f.max_abs() * u.max_abs();
                let (mut product, mut product_all) = (0.0f64, 0.0f64);
                for (k, resolved) in resolved.iter().enumerate() {
                    for (j, (a, b)) in lhs.edges[k].iter().zip(&rhs.edges[k]).enumerate() {
                        let d = (a - b).abs() / scale;
                        product_all = product_all.max(d);
                        if resolved.contains(&j) {
                            product = product.max(d);
                        }
                    }
                }
                Ok([contraction, isometry, duality, product, product_all])
            })
            .collect::<Result<_, _>>()?;
        let name = field.name();
        for (p, e) in errs.iter().enumerate() {
            writeln!(text, "\"{name}\",{p},{},{},{},{},{}", e[0], e[1], e[2], e[3], e[4]).unwrap();
        }
        for (j, rel) in ["contraction", "isometry", "duality", "product"].iter().enumerate() {
            let worst = errs.iter().map(|e| e[j]).fold(f64::NEG_INFINITY, f64::max);
            out.table.push(Row::check(format!("{name}:{rel}"), None, worst, None, spec.tolerance));
        }
        let all = errs.iter().map(|e| e[4]).fold(0.0f64, f64::max);
        out.table.push(Row::info(format!("{name}:product_all_nodes"), None, all, 0.0));
    }
    out.csv("pairs.csv", text);
    Ok(out)
}

/// Smallest value `c` of `values` with at least a fraction `q` of them `<= c`.
pub fn covering_constant(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len().max(1));
    v.get(k - 1).copied().unwrap_or(f64::NAN)
}

fn kernel_bound_fit(spec: &ExperimentSpec, seed: u64) -> Result<ExperimentOutput, ExperimentError> {
    let field = spec.field()?;
    let bbox = Rect::centered(spec.half_width);
    let bins = (spec.bins, spec.bins);
    let hx = field.value(spec.start);
    let mut out = ExperimentOutput::new("kernel_bound");
    let mut kernels = vec![];
    let mut fitted = vec![];
    for (i, &eps) in spec.eps.iter().enumerate() {
        let cfg = IntegratorConfig::strang(eps, spec.dt);
        let mut all = vec![];
        let mut deficit = 0.0f64;
        for (j, &t) in spec.times.iter().enumerate() {
            let k = kernel_histogram(
                &field,
                &cfg,
                spec.start,
                t,
                spec.paths,
                bbox,
                bins,
                mix_seed(seed, (i * 64 + j) as u64),
            );
            let cs = kernel_constants(&field, &k, spec.count_floor);
            deficit = deficit.max(k.total_mass().1);
            all.push(cs);
            kernels.push((eps, k));
        }
        let flat: Vec<f64> = all.iter().flatten().copied().collect();
        let c = covering_constant(&flat, 1.0 - spec.tolerance);
        out.table.push(Row::info("C_fit", Some(eps), c, 0.0));
        out.table.push(Row::info("bins_above_floor", Some(eps), flat.len() as f64, 0.0));
        out.table.push(Row::info("mass_outside", Some(eps), deficit, 0.0));
        fitted.push((eps, c, flat));
    }
    let common = fitted.iter().map(|f| f.1).fold(0.0f64, f64::max);
    let smallest = fitted.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
    for (eps, _, flat) in &fitted {
        let frac = flat.iter().filter(|&&c| c > common).count() as f64 / flat.len().max(1) as f64;
        out.table.push(Row::check("violations", Some(*eps), frac, None, spec.tolerance));
    }
    out.table.push(Row::info("C_common", None, common, 0.0));
    out.table.push(Row::check("stability", None, common / smallest, None, 2.0));
    let mut text = String::from("eps,t,x1,x2,count,density,bound\n");
    for (eps, k) in &kernels {
        for idx in 0..k.counts.len() {
            if k.counts[idx] == 0 {
                continue;
            }
            let p = k.bin_center(idx);
            let b = kernel_bound(common, k.t, hx, field.value(p));
            writeln!(text, "{eps},{},{},{},{},{},{b}", k.t, p[0], p[1], k.counts[idx], k.density(idx)).unwrap();
        }
    }
    out.csv("kernel_bins.csv", text);
    Ok(out)
}

fn hs_scaling(spec: &ExperimentSpec, seed: u64) -> Result<ExperimentOutput, ExperimentError> {
    let field = spec.field()?;
    let grid = Grid2D::square(spec.half_width, spec.grid);
    let measure = PlaneMeasure::new(&field, Weight::default(), grid);
    let noise = NoiseSpec::new(spec.noise.density(), spec.noise.k_max, seed);
    let modes = HomogeneousFieldSampler::new(grid, &noise, 0)?.real_modes();
    let psi = GridFunction2D::from_fn(grid, |p| spec.u.eval(&field, p));
    let marks: Vec<usize> = spec.times.iter().map(|t| (t / spec.dt).round().max(1.0) as usize).collect();
    let last = *marks.last().unwrap_or(&0);
    let shell = 0.8 * spec.noise.k_max;
    let p = spec.noise.p;
    let mut out = ExperimentOutput::new("hs_scaling");
    out.note("modes", json!(modes.len()));
    let mut text = String::from("eps,t,hs_sum,outer_shell\n");
    for &eps in &spec.eps {
        let solver = PlaneSolver::new(&field, &SpdeConfig::deterministic(eps, grid, spec.dt, last as f64 * spec.dt));
        let per_mode: Vec<Vec<f64>> = modes
            .par_iter()
            .map(|m| -> Result<Vec<f64>, SpacesError> {
                let mut v = psi.mul(&m.on_grid(grid))?;
                let mut norms = Vec::with_capacity(marks.len());
                for n in 1..=last {
                    solver.linear_step(&mut v);
                    for _ in marks.iter().filter(|&&k| k == n) {
                        norms.push(norm_hgamma(&measure, &v)?.powi(2));
                    }
                }
                Ok(norms)
            })
            .collect::<Result<_, _>>()?;
        let mut sums = vec![0.0; marks.len()];
        let mut outer = vec![0.0; marks.len()];
        for (m, norms) in modes.iter().zip(&per_mode) {
            let in_shell = m.xi[0].abs().max(m.xi[1].abs()) > shell;
            for (i, v) in norms.iter().enumerate() {
                sums[i] += v;
                if in_shell {
                    outer[i] += v;
                }
            }
        }
        let lt: Vec<f64> = spec.times.iter().map(|t| t.ln()).collect();
        let ls: Vec<f64> = sums.iter().map(|s| s.ln()).collect();
        let (slope, _) = linear_fit(&lt, &ls);
        let tail = outer.iter().zip(&sums).map(|(o, s)| o / s).fold(0.0f64, f64::max);
        out.table.push(Row::check("slope", Some(eps), slope, Some(-(p - 1.0) / p - 0.15), 0.0));
        out.table.push(Row::check("tail", Some(eps), tail, None, spec.tolerance));
        for (i, t) in spec.times.iter().enumerate() {
            writeln!(text, "{eps},{t},{},{}", sums[i], outer[i]).unwrap();
        }
        out.table.push(Row::info("hs_sum_last_over_first", Some(eps), sums[sums.len() - 1] / sums[0], 0.0));
    }
    out.csv("hs_sums.csv", text);
    Ok(out)
}

/// Plane/graph setup shared by the semigroup and SPDE experiments.
struct Setup {
    field: HamiltonianField,
    graph: ReebGraph,
    mesh: GraphMesh,
    grid: Grid2D,
    projection: crate::spaces::GridProjection,
    plane: PlaneMeasure,
}

impl Setup {
    fn new(spec: &ExperimentSpec) -> Result<Self, ExperimentError> {
        let field = spec.field()?;
        let graph = build_graph(&field, spec)?;
        let mesh = GraphMesh::new(&graph, spec.mesh_cells);
        let grid = Grid2D::square(spec.half_width, spec.grid);
        let projection = graph.project_grid(grid);
        let plane = PlaneMeasure::new(&field, Weight::default(), grid);
        Ok(Self { field, graph, mesh, grid, projection, plane })
    }

    fn lift(&self, m: &MeshFunction) -> GridFunction2D {
        self.mesh.lift(&self.graph, m, &self.projection)
    }

    /// `u` on the grid and `u^wedge` on the mesh.
    fn initial(&self, spec: &ExperimentSpec) -> (GridFunction2D, GraphFunction, MeshFunction) {
        let u = GridFunction2D::from_fn(self.grid, |p| spec.u.eval(&self.field, p));
        let u_hat = self.graph.project_fn(|p| spec.u.eval(&self.field, p));
        let m = self.mesh.sample(&self.graph, &u_hat);
        (u, u_hat, m)
    }
}

fn step_index(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

fn semigroup_strong(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let s = Setup::new(spec)?;
    check_assumption2(&s.graph)?;
    let measure = GraphMeasure::new(&s.graph, Weight::default());
    let times = spec.probe_times();
    let marks: Vec<usize> = times.iter().map(|&t| step_index(t, spec.dt)).collect();
    let steps = *marks.last().unwrap_or(&0);
    let (u, _, u_bar0) = s.initial(spec);
    let bars = semigroup_bar_series(&s.graph, &s.mesh, &u_bar0, &times, spec.dt)?;
    let lifts: Vec<GridFunction2D> = bars.iter().map(|m| s.lift(m)).collect();
    let bar_fns: Vec<GraphFunction> = bars.iter().map(|m| s.mesh.to_graph_function(&s.graph, m)).collect();
    let u_control = s.lift(&u_bar0);
    let one = GridFunction2D::constant(s.grid, 1.0);

    // squared distances at the probes for each starting function
    let run = |eps: f64,
               start: &GridFunction2D,
               graph_side: bool|
     -> Result<(Vec<f64>, Vec<f64>, GridFunction2D), ExperimentError> {
        let solver =
            PlaneSolver::new(&s.field, &SpdeConfig::deterministic(eps, s.grid, spec.dt, steps as f64 * spec.dt));
        let mut v = start.clone();
        let (mut plane_d, mut graph_d) = (vec![], vec![]);
        for n in 1..=steps {
            solver.linear_step(&mut v);
            for (i, _) in marks.iter().enumerate().filter(|(_, &k)| k == n) {
                plane_d.push(norm_hgamma(&s.plane, &v.sub(&lifts[i])?)?.powi(2));
                if graph_side {
                    let v_hat = s.graph.project_grid_function(&v)?;
                    graph_d.push(norm_hbar_gamma(&measure, &v_hat.zip_with(&bar_fns[i], |a, b| a - b)).powi(2));
                }
            }
        }
        Ok((plane_d, graph_d, v))
    };
    let results: Vec<_> = spec
        .eps
        .par_iter()
        .map(|&eps| -> Result<_, ExperimentError> {
            let (d, g, last) = run(eps, &u, true)?;
            let (c, _, _) = run(eps, &u_control, false)?;
            Ok((eps, d, g, c, last))
        })
        .collect::<Result<_, _>>()?;
    let mut out = ExperimentOutput::new("semigroup_strong");
    let mut text = String::from("eps,t,plane,graph,control\n");
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, &b| a.max(b));
    for (eps, d, g, c, last) in &results {
        out.table.push(Row::series(*eps, sup(d), 0.0, Some(sup(c))));
        out.table.push(Row::info("graph_metric", Some(*eps), sup(g), 0.0));
        out.table.push(Row::info("control", Some(*eps), sup(c), 0.0));
        for (i, t) in times.iter().enumerate() {
            writeln!(text, "{eps},{t},{},{},{}", d[i], g[i], c[i]).unwrap();
        }
        let t_end = steps as f64 * spec.dt;
        out.artifacts.push(Artifact { name: format!("u_eps_{eps}.snap"), bytes: encode_snapshot(last, t_end) });
    }
    if let Some(last) = lifts.last() {
        out.artifacts
            .push(Artifact { name: "u_bar_lifted.snap".into(), bytes: encode_snapshot(last, steps as f64 * spec.dt) });
    }
    // both semigroups fix constants
    let (_, _, v) = run(spec.eps[0], &one, false)?;
    let lifted_one = s.lift(&s.mesh.sample_fn(&s.graph, |_, _| 1.0));
    let drift = norm_hgamma(&s.plane, &v.sub(&lifted_one)?)?.powi(2);
    out.table.push(Row::check("constant_u", Some(spec.eps[0]), drift, None, 1e-12));
    out.csv("probe_distances.csv", text);
    Ok(out)
}

/// `u^wedge(Pi x)` from the node spline.
fn lifted_value(graph: &ReebGraph, interp: &[EdgeInterpolant], f: &GraphFunction, x: Point) -> f64 {
    match graph.project(x) {
        Ok(p) => interp[p.k].eval(p.z),
        Err(ReebError::NearVertex { vertex, .. }) => f.vertices[vertex],
        Err(_) => {
            let z = graph.field().value(x).min(graph.z_max());
            interp[graph.outer_edge()].eval(z)
        }
    }
}

fn weak_time_avg(spec: &ExperimentSpec, seed: u64) -> Result<ExperimentOutput, ExperimentError> {
    let field = spec.field()?;
    let graph = build_graph(&field, spec)?;
    let mesh = GraphMesh::new(&graph, spec.mesh_cells);
    let radial = field.is_radial();
    let n = ((spec.horizon - spec.tau) / spec.dt).round() as usize;
    let n = n + n % 2;
    let h = (spec.horizon - spec.tau) / n as f64;
    let ts: Vec<f64> = (0..=n).map(|i| spec.tau + h * i as f64).collect();
    let trap = |i: usize, step: f64, last: usize| if i == 0 || i == last { 0.5 * step } else { step };
    let theta: Vec<f64> = ts.iter().map(|&t| spec.theta.eval(t, spec.tau, spec.horizon)).collect();
    let w_fine: Vec<f64> = (0..=n).map(|i| trap(i, h, n) * theta[i]).collect();
    let w_coarse: Vec<f64> =
        (0..=n).map(|i| if i % 2 == 0 { trap(i / 2, 2.0 * h, n / 2) * theta[i] } else { 0.0 }).collect();
    let w_flat: Vec<f64> = (0..=n).map(|i| trap(i, h, n)).collect();
    let points: Vec<Point> = (0..spec.points)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / spec.points as f64;
            [spec.ring_radius * a.cos(), spec.ring_radius * a.sin()]
        })
        .collect();

    let u_hat = graph.project_fn(|p| spec.u.eval(&field, p));
    let interp = graph.interpolant(&u_hat);
    let bars = semigroup_bar_series(&graph, &mesh, &mesh.sample(&graph, &u_hat), &ts, h)?;
    let graph_side: Vec<(f64, f64)> = points
        .iter()
        .map(|&x| {
            let p = graph.project(x)?;
            let vals: Vec<f64> = bars.iter().map(|m| mesh.eval(&graph, m, p)).collect();
            let dot = |w: &[f64]| w.iter().zip(&vals).map(|(a, b)| a * b).sum::<f64>();
            Ok((dot(&w_fine), dot(&w_flat)))
        })
        .collect::<Result<_, ReebError>>()?;

    let mut out = ExperimentOutput::new("weak_time_avg");
    out.note("control_variate", json!(radial));
    let mut text = String::from("eps,point,estimate,std_error,graph,control_mean,control_se\n");
    for &eps in &spec.eps {
        let cfg = IntegratorConfig::strang(eps, h);
        let (mut metric, mut se_max, mut quad, mut flat, mut flat_se, mut ctrl, mut ctrl_se) =
            (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (j, &x) in points.iter().enumerate() {
            let (g_fine, g_flat) = graph_side[j];
            // common random numbers: the stream depends on the point and path only
            let stream = mix_seed(seed, j as u64);
            let samples: Vec<[f64; 4]> = (0..spec.paths)
                .into_par_iter()
                .map(|i| {
                    let states = simulate_path(&field, &cfg, x, &ts, &mut path_rng(stream, i as u64));
                    let (mut fine, mut coarse, mut fl, mut c) = (0.0, 0.0, 0.0, 0.0);
                    for (k, s) in states.iter().enumerate() {
                        let u = spec.u.eval(&field, s.x);
                        let uc = lifted_value(&graph, &interp, &u_hat, s.x);
                        let y = if radial { u - uc } else { u };
                        fine += w_fine[k] * y;
                        coarse += w_coarse[k] * y;
                        fl += w_flat[k] * y;
                        c += w_fine[k] * uc;
                    }
                    [fine, coarse, fl, c]
                })
                .collect();
            let col = |k: usize| samples.iter().map(|s| s[k]).collect::<Vec<f64>>();
            let (m_fine, se_fine) = mean_se(&col(0));
            let (m_coarse, _) = mean_se(&col(1));
            let (m_flat, se_f) = mean_se(&col(2));
            let (m_c, se_c) = mean_se(&col(3));
            // with the control variate E u_c(X) is the graph value itself
            let (est, est_flat) = if radial { (m_fine, m_flat) } else { (m_fine - g_fine, m_flat - g_flat) };
            let quad_err = (m_fine - m_coarse).abs() / 3.0;
            metric = metric.max(est.abs());
            se_max = se_max.max(se_fine);
            quad = quad.max(quad_err);
            flat = flat.max(est_flat.abs());
            flat_se = flat_se.max(se_f);
            ctrl = ctrl.max((m_c - g_fine).abs());
            ctrl_se = ctrl_se.max(se_c);
            writeln!(text, "{eps},{j},{est},{se_fine},{g_fine},{m_c},{se_c}").unwrap();
        }
        out.table.push(Row::series(eps, metric, se_max, Some(se_max + quad)));
        out.table.push(Row::info("quadrature_error", Some(eps), quad, 0.0));
        out.table.push(Row::info("control", Some(eps), ctrl, ctrl_se));
        out.table.push(Row::info("flat_weight", Some(eps), flat, flat_se));
    }
    out.csv("point_estimates.csv", text);
    Ok(out)
}

fn coupled_spde(
    spec: &ExperimentSpec,
    seed: u64,
    id: &str,
    integrated: bool,
) -> Result<ExperimentOutput, ExperimentError> {
    let s = Setup::new(spec)?;
    if !integrated {
        check_assumption2(&s.graph)?;
    }
    let steps = step_index(spec.horizon, spec.dt);
    let dt = spec.horizon / steps as f64;
    let tau = if integrated { 0.0 } else { spec.tau };
    let probe_steps: Vec<usize> =
        if integrated { vec![] } else { spec.probe_times().iter().map(|&t| step_index(t, dt)).collect() };
    let theta = integrated.then(|| (1..=steps).map(|n| spec.theta.eval(n as f64 * dt, tau, spec.horizon)).collect());
    let noise = NoiseSpec::new(spec.noise.density(), spec.noise.k_max, seed);
    let planes: Vec<PlaneSolver> = spec
        .eps
        .iter()
        .map(|&eps| {
            let mut cfg = SpdeConfig::deterministic(eps, s.grid, dt, spec.horizon);
            cfg.reaction = spec.reaction;
            cfg.diffusion = spec.diffusion;
            cfg.noise = Some(noise.clone());
            PlaneSolver::new(&s.field, &cfg)
        })
        .collect();
    let mut gcfg = GraphSpdeConfig::deterministic(dt, spec.horizon);
    gcfg.reaction = spec.reaction;
    gcfg.diffusion = spec.diffusion;
    let system = |averaged: bool| CoupledSystem {
        graph: &s.graph,
        mesh: &s.mesh,
        planes: planes.clone(),
        graph_solver: GraphSolver::new(&s.mesh, &gcfg),
        projection: &s.projection,
        measure: &s.plane,
        noise: Some(noise.clone()),
        steps,
        dt,
        probe_steps: probe_steps.clone(),
        theta: theta.clone(),
        averaged_noise: averaged,
    };
    let (phi, _, phi_bar) = s.initial(spec);
    let phi_control = s.lift(&phi_bar);
    let main = system(false);
    let control = system(true);
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|p| -> Result<_, GraphSpdeError> {
            let a = main.run_path(&phi, &phi_bar, p)?;
            let b = control.run_path(&phi_control, &phi_bar, p)?;
            let pick = |c: &crate::graphspde::CoupledPath| -> Vec<f64> {
                if integrated {
                    c.integral_sq.clone()
                } else {
                    c.probe_sq.iter().map(|v| v.iter().fold(0.0f64, |x, &y| x.max(y))).collect()
                }
            };
            Ok((pick(&a), pick(&b)))
        })
        .collect::<Result<_, _>>()?;
    let mut out = ExperimentOutput::new(id);
    let mut text = String::from("eps,path,metric,control\n");
    for (e, &eps) in spec.eps.iter().enumerate() {
        let m: Vec<f64> = runs.iter().map(|r| r.0[e]).collect();
        let c: Vec<f64> = runs.iter().map(|r| r.1[e]).collect();
        let (mm, ms) = mean_se(&m);
        let (cm, cs) = mean_se(&c);
        out.table.push(Row::series(eps, mm, ms, Some(ms + cm)));
        out.table.push(Row::info("control", Some(eps), cm, cs));
        for (p, (a, b)) in m.iter().zip(&c).enumerate() {
            writeln!(text, "{eps},{p},{a},{b}").unwrap();
        }
    }
    out.csv("paths.csv", text);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_constant_covers() {
        let v: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(covering_constant(&v, 0.99), 198.0);
        assert_eq!(v.iter().filter(|&&x| x > 198.0).count(), 2);
        assert_eq!(covering_constant(&v[..7], 0.99), 7.0);
        assert_eq!(covering_constant(&[3.0], 0.5), 3.0);
    }

    #[test]
    fn flat_period_is_refused() {
        let field = HamiltonianField::quadratic();
        let graph = ReebGraph::build(&field, &ReebConfig { z_max: Some(10.0), ..ReebConfig::default() }).unwrap();
        assert!(matches!(check_assumption2(&graph), Err(ExperimentError::Assumption2Violated { .. })));
        let quartic = HamiltonianField::quartic_well(0.5);
        let graph = ReebGraph::build(&quartic, &ReebConfig { z_max: Some(10.0), ..ReebConfig::default() }).unwrap();
        check_assumption2(&graph).unwrap();
    }
}
