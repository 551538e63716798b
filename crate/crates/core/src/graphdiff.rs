//! The averaged diffusion on the graph: coefficients, gluing weights, paths
//! and the semigroup `S_bar(t)` via a finite-volume solve on each edge.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::solve_dense;
use crate::numerics::solve_tridiagonal;
use crate::reeb::{GraphPoint, Projected, ReebGraph, VertexKind};
use crate::sde::{path_rng, EnsembleResult};
use crate::spaces::{GraphFunction, GridFunction2D, GridProjection, Weight};

#[derive(Debug, Error)]
pub enum GraphDiffError {
    #[error("graph solver diverged at t = {t}")]
    SolverDiverged { t: f64 },
    #[error("gluing system at the vertices is singular")]
    SingularGluing,
    #[error("point z = {z} is not on edge {k}")]
    NotOnGraph { z: f64, k: usize },
}

/// Per-edge node tables of the averaged generator `(a/2) f'' + b f'`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EdgeTable {
    pub k: usize,
    pub z: Vec<f64>,
    pub period: Vec<f64>,
    pub flux: Vec<f64>,
    /// Level average of `|grad H|^2`.
    pub a: Vec<f64>,
    /// Level average of `Delta H / 2`.
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CoefficientTable {
    pub edges: Vec<EdgeTable>,
}

/// Averages `|grad H|^2` and `Delta H / 2` directly over the cached cycles.
pub fn assemble_coefficients(graph: &ReebGraph) -> CoefficientTable {
    let field = graph.field();
    let edges = graph
        .edges()
        .iter()
        .map(|e| EdgeTable {
            k: e.id,
            z: e.node_levels(),
            period: e.nodes.iter().map(|n| n.period).collect(),
            flux: e.nodes.iter().map(|n| n.flux).collect(),
            a: e.nodes.iter().map(|n| n.cycle.average(|p| field.grad_norm(p).powi(2))).collect(),
            b: e.nodes.iter().map(|n| n.cycle.average(|p| 0.5 * field.laplacian(p))).collect(),
        })
        .collect();
    CoefficientTable { edges }
}

impl CoefficientTable {
    /// Largest relative defect of `a T = A` over all nodes.
    pub fn consistency_defect(&self) -> f64 {
        self.edges
            .iter()
            .flat_map(|e| {
                (0..e.z.len()).map(move |j| (e.a[j] * e.period[j] - e.flux[j]).abs() / e.flux[j].abs().max(1e-300))
            })
            .fold(0.0, f64::max)
    }

    /// `edge,z,T,A,a,b` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("edge,z,T,A,a,b\n");
        for e in &self.edges {
            for j in 0..e.z.len() {
                let _ = writeln!(s, "{},{},{},{},{},{}", e.k, e.z[j], e.period[j], e.flux[j], e.a[j], e.b[j]);
            }
        }
        s
    }
}

/// Which end of an edge touches a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum End {
    Lo,
    Hi,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GluingArm {
    pub edge: usize,
    pub end: End,
    /// `A_k` at the vertex level.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VertexGluing {
    pub vertex: usize,
    pub value: f64,
    pub arms: Vec<GluingArm>,
}

/// Flux weights at every saddle vertex.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GluingWeights {
    pub vertices: Vec<VertexGluing>,
}

impl GluingWeights {
    pub fn new(graph: &ReebGraph) -> Self {
        let vertices = graph
            .vertices()
            .iter()
            .filter(|v| v.kind == VertexKind::Saddle)
            .map(|v| {
                let arms = graph
                    .incident_edges(v.id)
                    .into_iter()
                    .map(|k| {
                        let e = graph.edge(k);
                        let end = if e.lo_vertex == v.id { End::Lo } else { End::Hi };
                        GluingArm { edge: k, end, weight: e.coefficients(v.value).flux.max(0.0) }
                    })
                    .collect();
                VertexGluing { vertex: v.id, value: v.value, arms }
            })
            .collect();
        Self { vertices }
    }

    pub fn at(&self, vertex: usize) -> Option<&VertexGluing> {
        self.vertices.iter().find(|g| g.vertex == vertex)
    }

    /// Largest relative gap between the flux entering from above and the
    /// flux leaving below a saddle.
    pub fn additivity_defect(&self) -> f64 {
        self.vertices
            .iter()
            .map(|g| {
                let up: f64 = g.arms.iter().filter(|a| a.end == End::Lo).map(|a| a.weight).sum();
                let down: f64 = g.arms.iter().filter(|a| a.end == End::Hi).map(|a| a.weight).sum();
                (up - down).abs() / up.max(down)
            })
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// paths

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathConfig {
    pub dt: f64,
    /// Vertex ball radius; defaults to 1e-2 times the shortest edge.
    pub delta_v: Option<f64>,
}

impl PathConfig {
    pub fn new(dt: f64) -> Self {
        Self { dt, delta_v: None }
    }

    pub fn delta(&self, graph: &ReebGraph) -> f64 {
        self.delta_v.unwrap_or(1e-2 * graph.min_edge_length())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphPathState {
    pub point: GraphPoint,
    pub capped: bool,
}

/// Leave a saddle ball along an arm chosen with probability proportional to
/// its weight; `exits[k]` counts departures along edge `k`.
fn redistribute(g: &VertexGluing, delta: f64, rng: &mut ChaCha8Rng, exits: Option<&mut [u64]>) -> GraphPoint {
    let total: f64 = g.arms.iter().map(|a| a.weight).sum();
    let mut r = rng.random::<f64>() * total;
    let mut arm = g.arms[g.arms.len() - 1];
    for a in &g.arms {
        if r < a.weight {
            arm = *a;
            break;
        }
        r -= a.weight;
    }
    if let Some(ex) = exits {
        ex[arm.edge] += 1;
    }
    let z = match arm.end {
        End::Lo => g.value + delta,
        End::Hi => g.value - delta,
    };
    GraphPoint { z, k: arm.edge }
}

/// One Euler-Maruyama step `dz = b dt + sqrt(a) dW` with vertex handling.
pub fn graph_step(
    graph: &ReebGraph,
    gluing: &GluingWeights,
    state: GraphPathState,
    dt: f64,
    delta: f64,
    rng: &mut ChaCha8Rng,
    exits: Option<&mut [u64]>,
) -> GraphPathState {
    if state.capped {
        return state;
    }
    let GraphPoint { mut z, k } = state.point;
    let e = graph.edge(k);
    let c = graph.coefficients(k, z);
    let n: f64 = rng.sample(StandardNormal);
    z += c.b * dt + c.a.max(0.0).sqrt() * dt.sqrt() * n;
    let vertices = graph.vertices();
    for (end, v) in [(End::Hi, e.hi_vertex), (End::Lo, e.lo_vertex)] {
        let vv = &vertices[v];
        let (beyond, inside_ball) = match end {
            End::Hi => (z >= e.z_hi, z > e.z_hi - delta),
            End::Lo => (z <= e.z_lo, z < e.z_lo + delta),
        };
        match vv.kind {
            VertexKind::Infinity if beyond => {
                return GraphPathState { point: GraphPoint { z: e.z_hi, k }, capped: true };
            }
            VertexKind::Saddle if inside_ball => {
                let g = gluing.at(v).expect("saddle without gluing weights");
                return GraphPathState { point: redistribute(g, delta, rng, exits), capped: false };
            }
            VertexKind::Extremum if beyond => {
                z = match end {
                    End::Hi => 2.0 * e.z_hi - z,
                    End::Lo => 2.0 * e.z_lo - z,
                };
                z = z.clamp(e.z_lo, e.z_hi);
            }
            _ => {}
        }
    }
    GraphPathState { point: GraphPoint { z, k }, capped: false }
}

pub fn simulate_path(
    graph: &ReebGraph,
    gluing: &GluingWeights,
    start: GraphPoint,
    t: f64,
    cfg: &PathConfig,
    rng: &mut ChaCha8Rng,
    mut exits: Option<&mut [u64]>,
) -> GraphPathState {
    let delta = cfg.delta(graph);
    let n = (t / cfg.dt).ceil().max(0.0) as usize;
    let dt = if n > 0 { t / n as f64 } else { 0.0 };
    let mut s = GraphPathState { point: start, capped: start.z >= graph.z_max() };
    for _ in 0..n {
        s = graph_step(graph, gluing, s, dt, delta, rng, exits.as_deref_mut());
        if s.capped {
            break;
        }
    }
    s
}

/// Endpoints of `n_paths` independent paths, in path order.
pub fn graph_endpoints(
    graph: &ReebGraph,
    gluing: &GluingWeights,
    start: GraphPoint,
    t: f64,
    cfg: &PathConfig,
    n_paths: usize,
    seed: u64,
) -> Vec<GraphPathState> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_path(graph, gluing, start, t, cfg, &mut path_rng(seed, i as u64), None))
        .collect()
}

/// `E f(Y_bar(t))` from `start` by Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_bar_mc<F>(
    graph: &ReebGraph,
    gluing: &GluingWeights,
    f: F,
    start: GraphPoint,
    t: f64,
    cfg: &PathConfig,
    n_paths: usize,
    seed: u64,
) -> EnsembleResult
where
    F: Fn(GraphPoint) -> f64 + Sync,
{
    let t0 = Instant::now();
    let ends = graph_endpoints(graph, gluing, start, t, cfg, n_paths, seed);
    let capped = ends.iter().filter(|s| s.capped).count();
    let samples: Vec<f64> = ends.iter().map(|s| f(s.point)).collect();
    EnsembleResult::from_samples(&samples, capped, t0)
}

// ---------------------------------------------------------------------------
// finite volumes

/// Boundary behaviour at an edge end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndKind {
    /// Extremum: zero flux.
    Closed,
    /// Saddle: shared massless vertex value with Kirchhoff balance.
    Glued(usize),
    /// Cap: value held fixed.
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct EdgeMesh {
    pub k: usize,
    pub z_lo: f64,
    pub z_hi: f64,
    pub dz: f64,
    pub centers: Vec<f64>,
    /// Integral of `T` over each cell.
    pub mass: Vec<f64>,
    /// `A / (2 distance)` at faces `0..=n`; faces 0 and n join the vertices.
    pub cond: Vec<f64>,
    pub lo: EndKind,
    pub hi: EndKind,
}

/// Uniform cell-centred mesh on every edge.
#[derive(Debug, Clone)]
pub struct GraphMesh {
    pub edges: Vec<EdgeMesh>,
    pub n_vertices: usize,
    /// Vertices carrying a Kirchhoff unknown.
    pub glued: Vec<usize>,
}

/// Cell values plus one value per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshFunction {
    pub cells: Vec<Vec<f64>>,
    pub vertices: Vec<f64>,
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
];

impl GraphMesh {
    pub fn new(graph: &ReebGraph, cells_per_edge: usize) -> Self {
        let n = cells_per_edge.max(2);
        let role = |v: usize| match graph.vertices()[v].kind {
            VertexKind::Extremum => EndKind::Closed,
            VertexKind::Saddle => EndKind::Glued(v),
            VertexKind::Infinity => EndKind::Fixed(v),
        };
        let edges = graph
            .edges()
            .iter()
            .map(|e| {
                let dz = e.length() / n as f64;
                let centers: Vec<f64> = (0..n).map(|i| e.z_lo + (i as f64 + 0.5) * dz).collect();
                let mass = centers
                    .iter()
                    .map(|&c| GAUSS4.iter().map(|(x, w)| 0.5 * dz * w * e.coefficients(c + 0.5 * dz * x).period).sum())
                    .collect();
                let (lo, hi) = (role(e.lo_vertex), role(e.hi_vertex));
                let cond = (0..=n)
                    .map(|i| {
                        let zf = e.z_lo + i as f64 * dz;
                        let flux = e.coefficients(zf).flux.max(0.0);
                        if i == 0 || i == n {
                            let kind = if i == 0 { lo } else { hi };
                            match kind {
                                EndKind::Closed => 0.0,
                                _ => flux / dz,
                            }
                        } else {
                            0.5 * flux / dz
                        }
                    })
                    .collect();
                EdgeMesh { k: e.id, z_lo: e.z_lo, z_hi: e.z_hi, dz, centers, mass, cond, lo, hi }
            })
            .collect();
        let glued = graph.vertices().iter().filter(|v| v.kind == VertexKind::Saddle).map(|v| v.id).collect();
        Self { edges, n_vertices: graph.vertices().len(), glued }
    }

    /// Kirchhoff-balanced value at a glued vertex given the adjacent cells.
    fn balanced_vertex(&self, cells: &[Vec<f64>], v: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for em in &self.edges {
            let n = em.centers.len();
            if em.lo == EndKind::Glued(v) {
                num += em.cond[0] * cells[em.k][0];
                den += em.cond[0];
            }
            if em.hi == EndKind::Glued(v) {
                num += em.cond[n] * cells[em.k][n - 1];
                den += em.cond[n];
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Rebalance the glued vertex values against the adjacent cells.
    pub fn sync_vertices(&self, f: &mut MeshFunction) {
        for &v in &self.glued {
            f.vertices[v] = self.balanced_vertex(&f.cells, v);
        }
    }

    /// Sample a pointwise graph function; `fixed` supplies the cap value.
    pub fn sample_fn<F: Fn(f64, usize) -> f64>(&self, graph: &ReebGraph, f: F) -> MeshFunction {
        let cells = self.edges.iter().map(|em| em.centers.iter().map(|&z| f(z, em.k)).collect()).collect();
        let vertices = graph
            .vertices()
            .iter()
            .map(|v| match graph.incident_edges(v.id).first() {
                Some(&k) => f(v.value.min(graph.edge(k).z_hi), k),
                None => 0.0,
            })
            .collect();
        let mut m = MeshFunction { cells, vertices };
        self.finish(graph, &mut m);
        m
    }

    /// Sample a node-tabulated graph function through its interpolants.
    pub fn sample(&self, graph: &ReebGraph, f: &GraphFunction) -> MeshFunction {
        let interp = graph.interpolant(f);
        let cells = self.edges.iter().map(|em| em.centers.iter().map(|&z| interp[em.k].eval(z)).collect()).collect();
        let mut m = MeshFunction { cells, vertices: f.vertices.clone() };
        self.finish(graph, &mut m);
        m
    }

    fn finish(&self, graph: &ReebGraph, m: &mut MeshFunction) {
        self.sync_vertices(m);
        self.extrapolate_closed(graph, m);
    }

    /// Extremum vertices take the linear extrapolation of the two end cells.
    pub fn extrapolate_closed(&self, graph: &ReebGraph, m: &mut MeshFunction) {
        for em in &self.edges {
            let e = graph.edge(em.k);
            let c = &m.cells[em.k];
            let n = c.len();
            if em.lo == EndKind::Closed {
                m.vertices[e.lo_vertex] = 1.5 * c[0] - 0.5 * c[1];
            }
            if em.hi == EndKind::Closed {
                m.vertices[e.hi_vertex] = 1.5 * c[n - 1] - 0.5 * c[n - 2];
            }
        }
    }

    fn end_value(&self, graph: &ReebGraph, m: &MeshFunction, k: usize, end: End) -> f64 {
        let e = graph.edge(k);
        match end {
            End::Lo => m.vertices[e.lo_vertex],
            End::Hi => m.vertices[e.hi_vertex],
        }
    }

    /// Piecewise-linear value through the cell centres and the vertex values.
    pub fn eval(&self, graph: &ReebGraph, m: &MeshFunction, p: GraphPoint) -> f64 {
        let em = &self.edges[p.k];
        let v = &m.cells[p.k];
        let n = v.len();
        let z = p.z.clamp(em.z_lo, em.z_hi);
        let s = (z - em.z_lo) / em.dz - 0.5;
        if s < 0.0 {
            let lo = self.end_value(graph, m, p.k, End::Lo);
            let t = (z - em.z_lo) / (0.5 * em.dz);
            return lo + t * (v[0] - lo);
        }
        if s >= (n - 1) as f64 {
            let hi = self.end_value(graph, m, p.k, End::Hi);
            let t = (em.z_hi - z) / (0.5 * em.dz);
            return hi + t * (v[n - 1] - hi);
        }
        let i = s.floor() as usize;
        let t = s - i as f64;
        v[i] + t * (v[i + 1] - v[i])
    }

    /// Values at the graph's tabulation nodes.
    pub fn to_graph_function(&self, graph: &ReebGraph, m: &MeshFunction) -> GraphFunction {
        let edges = graph
            .edges()
            .iter()
            .map(|e| e.nodes.iter().map(|n| self.eval(graph, m, GraphPoint { z: n.z, k: e.id })).collect())
            .collect();
        GraphFunction { edges, vertices: m.vertices.clone() }
    }

    /// `m o Pi` on the grid of `projection`.
    pub fn lift(&self, graph: &ReebGraph, m: &MeshFunction, projection: &GridProjection) -> GridFunction2D {
        let values = projection
            .points
            .iter()
            .map(|p| match *p {
                Projected::Edge(g) => self.eval(graph, m, g),
                Projected::Vertex { vertex, .. } => m.vertices[vertex],
            })
            .collect();
        GridFunction2D { grid: projection.grid, values }
    }

    /// `sum_cells h(z) T dz m^2`, the squared weighted graph norm.
    pub fn norm_sq(&self, weight: &Weight, m: &MeshFunction) -> f64 {
        self.edges
            .iter()
            .map(|em| {
                em.centers
                    .iter()
                    .zip(&em.mass)
                    .zip(&m.cells[em.k])
                    .map(|((&z, &w), &u)| weight.h(z) * w * u * u)
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn max_abs(&self, m: &MeshFunction) -> f64 {
        m.cells.iter().flatten().chain(&m.vertices).fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn map(&self, m: &MeshFunction, f: impl Fn(f64) -> f64) -> MeshFunction {
        MeshFunction {
            cells: m.cells.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect(),
            vertices: m.vertices.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `(K m)_i`: net outflow of cell `i` under the conductances.
    fn apply_operator(&self, graph: &ReebGraph, m: &MeshFunction, k: usize) -> Vec<f64> {
        let em = &self.edges[k];
        let v = &m.cells[k];
        let n = v.len();
        let lo = self.end_value(graph, m, k, End::Lo);
        let hi = self.end_value(graph, m, k, End::Hi);
        (0..n)
            .map(|i| {
                let left = if i == 0 { lo } else { v[i - 1] };
                let right = if i + 1 == n { hi } else { v[i + 1] };
                em.cond[i] * (v[i] - left) + em.cond[i + 1] * (v[i] - right)
            })
            .collect()
    }
}

struct EdgeFactor {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    /// Response of the edge cells to a unit value at a glued lo / hi vertex.
    w_lo: Option<Vec<f64>>,
    w_hi: Option<Vec<f64>>,
}

/// Theta-scheme step `(M + theta dt K) x' = (M - (1 - theta) dt K) x` with
/// the glued vertices eliminated through a small dense system.
pub struct Stepper {
    theta: f64,
    dt: f64,
    factors: Vec<EdgeFactor>,
    schur: Vec<Vec<f64>>,
}

impl Stepper {
    pub fn new(mesh: &GraphMesh, dt: f64, theta: f64) -> Self {
        let factors: Vec<EdgeFactor> = mesh
            .edges
            .iter()
            .map(|em| {
                let n = em.centers.len();
                let sub: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { -theta * dt * em.cond[i] }).collect();
                let sup: Vec<f64> =
                    (0..n).map(|i| if i + 1 == n { 0.0 } else { -theta * dt * em.cond[i + 1] }).collect();
                let diag: Vec<f64> = (0..n).map(|i| em.mass[i] + theta * dt * (em.cond[i] + em.cond[i + 1])).collect();
                let unit = |at: usize, g: f64| {
                    let mut r = vec![0.0; n];
                    r[at] = theta * dt * g;
                    solve_tridiagonal(&sub, &diag, &sup, &r)
                };
                let w_lo = matches!(em.lo, EndKind::Glued(_)).then(|| unit(0, em.cond[0]));
                let w_hi = matches!(em.hi, EndKind::Glued(_)).then(|| unit(n - 1, em.cond[n]));
                EdgeFactor { sub, diag, sup, w_lo, w_hi }
            })
            .collect();
        let ng = mesh.glued.len();
        let idx = |v: usize| mesh.glued.iter().position(|&g| g == v);
        let mut schur = vec![vec![0.0; ng]; ng];
        for (em, fac) in mesh.edges.iter().zip(&factors) {
            let n = em.centers.len();
            for (end, kind, g, cell) in [(End::Lo, em.lo, em.cond[0], 0), (End::Hi, em.hi, em.cond[n], n - 1)] {
                let EndKind::Glued(v) = kind else { continue };
                let _ = end;
                let row = idx(v).unwrap();
                schur[row][row] += g;
                for (other, w) in [(em.lo, &fac.w_lo), (em.hi, &fac.w_hi)] {
                    if let (EndKind::Glued(v2), Some(w)) = (other, w) {
                        schur[row][idx(v2).unwrap()] -= g * w[cell];
                    }
                }
            }
        }
        Self { theta, dt, factors, schur }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, mesh: &GraphMesh, graph: &ReebGraph, m: &mut MeshFunction) -> Result<(), GraphDiffError> {
        let mut ys = Vec::with_capacity(mesh.edges.len());
        for (em, fac) in mesh.edges.iter().zip(&self.factors) {
            let n = em.centers.len();
            let kx = mesh.apply_operator(graph, m, em.k);
            let mut rhs: Vec<f64> =
                (0..n).map(|i| em.mass[i] * m.cells[em.k][i] - (1.0 - self.theta) * self.dt * kx[i]).collect();
            if let EndKind::Fixed(v) = em.lo {
                rhs[0] += self.theta * self.dt * em.cond[0] * m.vertices[v];
            }
            if let EndKind::Fixed(v) = em.hi {
                rhs[n - 1] += self.theta * self.dt * em.cond[n] * m.vertices[v];
            }
            ys.push(solve_tridiagonal(&fac.sub, &fac.diag, &fac.sup, &rhs));
        }
        let ng = mesh.glued.len();
        let fv = if ng > 0 {
            let mut b = vec![0.0; ng];
            for em in &mesh.edges {
                let n = em.centers.len();
                for (kind, g, cell) in [(em.lo, em.cond[0], 0), (em.hi, em.cond[n], n - 1)] {
                    if let EndKind::Glued(v) = kind {
                        let row = mesh.glued.iter().position(|&x| x == v).unwrap();
                        b[row] += g * ys[em.k][cell];
                    }
                }
            }
            solve_dense(self.schur.clone(), b).ok_or(GraphDiffError::SingularGluing)?
        } else {
            Vec::new()
        };
        for (i, &v) in mesh.glued.iter().enumerate() {
            m.vertices[v] = fv[i];
        }
        for ((em, fac), mut y) in mesh.edges.iter().zip(&self.factors).zip(ys) {
            for (kind, w) in [(em.lo, &fac.w_lo), (em.hi, &fac.w_hi)] {
                if let (EndKind::Glued(v), Some(w)) = (kind, w) {
                    let f = m.vertices[v];
                    y.iter_mut().zip(w).for_each(|(a, b)| *a += f * b);
                }
            }
            m.cells[em.k] = y;
        }
        mesh.extrapolate_closed(graph, m);
        Ok(())
    }
}

/// Crank-Nicolson evolution with backward-Euler start-up steps.
pub struct GraphSemigroup {
    startup: Stepper,
    main: Stepper,
}

impl GraphSemigroup {
    pub fn new(mesh: &GraphMesh, dt: f64) -> Self {
        Self { startup: Stepper::new(mesh, 0.5 * dt, 1.0), main: Stepper::new(mesh, dt, 0.5) }
    }

    pub fn dt(&self) -> f64 {
        self.main.dt
    }

    /// Advance by `steps` steps of size `dt`; `first` marks the start of a
    /// run, where the first step is split into two implicit halves.
    pub fn advance(
        &self,
        mesh: &GraphMesh,
        graph: &ReebGraph,
        m: &mut MeshFunction,
        steps: usize,
        first: bool,
    ) -> Result<(), GraphDiffError> {
        for s in 0..steps {
            if first && s < 2 {
                self.startup.step(mesh, graph, m)?;
                self.startup.step(mesh, graph, m)?;
            } else {
                self.main.step(mesh, graph, m)?;
            }
        }
        if m.cells.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(GraphDiffError::SolverDiverged { t: steps as f64 * self.main.dt })
        }
    }
}

/// `S_bar(t) f` with a step close to `dt` that divides `t` evenly.
pub fn semigroup_bar(
    graph: &ReebGraph,
    mesh: &GraphMesh,
    f: &MeshFunction,
    t: f64,
    dt: f64,
) -> Result<MeshFunction, GraphDiffError> {
    let mut m = f.clone();
    if t <= 0.0 {
        return Ok(m);
    }
    let n = (t / dt).ceil().max(1.0) as usize;
    GraphSemigroup::new(mesh, t / n as f64).advance(mesh, graph, &mut m, n, true)?;
    Ok(m)
}

/// `S_bar(t_i) f` at each of the increasing times `ts`.
pub fn semigroup_bar_series(
    graph: &ReebGraph,
    mesh: &GraphMesh,
    f: &MeshFunction,
    ts: &[f64],
    dt: f64,
) -> Result<Vec<MeshFunction>, GraphDiffError> {
    let sg = GraphSemigroup::new(mesh, dt);
    let mut m = f.clone();
    let mut out = Vec::with_capacity(ts.len());
    let mut done = 0usize;
    for &t in ts {
        let target = (t / dt).round() as usize;
        if target > done {
            sg.advance(mesh, graph, &mut m, target - done, done == 0)?;
            done = target;
        }
        out.push(m.clone());
    }
    Ok(out)
}
