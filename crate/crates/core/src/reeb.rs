//! The graph of level-set components of `H`: construction by marching
//! squares, identification of points with graph coordinates `(z, k)`, contour
//! tracing, periods, fluxes, level averages and lifts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::hamiltonian::{
    find_critical_points, rk4, CriticalKind, CriticalPoint, HamiltonianError, HamiltonianField, Point, Rect,
    VALUE_SEP_TOL,
};
use crate::numerics::{chebyshev_lobatto, clenshaw_curtis_weights, CubicSpline};
use crate::spaces::{GraphFunction, Grid2D, GridFunction2D, GridProjection, SpacesError};

/// Level tolerance of traced cycles and the vertex proximity radius in `H`.
pub const CONTOUR_TOL: f64 = 1e-9;
/// Tabulation nodes stay this fraction of the edge length away from vertices.
pub const VERTEX_CLIP: f64 = 1e-3;
const TRACE_KAPPA: f64 = 0.1;
const TRACE_DS_MAX: f64 = 0.05;
const TRACE_MAX_STEPS: usize = 2_000_000;
const TRACE_MAX_POINTS: usize = 400_000;
const CONTINUATION_MAX_STEPS: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReebError {
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error("critical values {0} and {1} collide at a saddle")]
    CriticalValueCollision(f64, f64),
    #[error("component count at level {level} is {coarse} on the base grid but {fine} on the refined grid")]
    ResolutionTooCoarse { level: f64, coarse: usize, fine: usize },
    #[error("level {0} reaches the analysis box boundary")]
    LevelTouchesBoundary(f64),
    #[error("z_max = {z_max} does not exceed the largest critical value {max_critical}")]
    ZMaxTooLow { z_max: f64, max_critical: f64 },
    #[error("inconsistent graph topology: {0}")]
    Topology(String),
    #[error("point lies on the critical level of vertex {vertex} (H = {value})")]
    NearVertex { vertex: usize, value: f64 },
    #[error("cycle on edge {k} at level {z} did not close within {steps} steps")]
    NoReturn { z: f64, k: usize, steps: usize },
    #[error("level {z} is not inside edge {k}")]
    OutsideEdge { z: f64, k: usize },
    #[error("gradient vanishes while moving {from:?} to level {z}")]
    FlatContinuation { from: Point, z: f64 },
    #[error("no edge matches the component through {0:?}")]
    Unresolved(Point),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Extremum,
    Saddle,
    Infinity,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Vertex {
    pub id: usize,
    pub value: f64,
    pub kind: VertexKind,
    pub location: Option<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GraphPoint {
    pub z: f64,
    pub k: usize,
}

/// Result of identifying a plane point with the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projected {
    Edge(GraphPoint),
    Vertex { vertex: usize, z: f64 },
}

impl Projected {
    pub fn z(&self) -> f64 {
        match *self {
            Projected::Edge(p) => p.z,
            Projected::Vertex { z, .. } => z,
        }
    }
}

/// A closed level-set component sampled uniformly in arc length. The last
/// point connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCycle {
    pub z: f64,
    pub k: usize,
    pub points: Vec<Point>,
    pub arc_weights: Vec<f64>,
    pub inv_grad: Vec<f64>,
    pub length: f64,
}

impl LevelCycle {
    /// `oint f dl`
    pub fn contour_integral<F: Fn(Point) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.arc_weights).map(|(&p, w)| w * f(p)).sum()
    }

    /// `T = oint |grad H|^-1 dl`
    pub fn period(&self) -> f64 {
        self.arc_weights.iter().zip(&self.inv_grad).map(|(w, g)| w * g).sum()
    }

    /// Average against the invariant probability measure on the cycle.
    pub fn average<F: Fn(Point) -> f64>(&self, f: F) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&p, w), g) in self.points.iter().zip(&self.arc_weights).zip(&self.inv_grad) {
            num += w * g * f(p);
            den += w * g;
        }
        num / den
    }

    pub fn average_grid(&self, u: &GridFunction2D) -> f64 {
        self.average(|p| u.interpolate(p))
    }

    pub fn max_level_error(&self, field: &HamiltonianField) -> f64 {
        self.points.iter().fold(0.0, |m, &p| m.max((field.value(p) - self.z).abs()))
    }
}

/// Tabulated data at one node of an edge.
#[derive(Debug, Clone)]
pub struct EdgeNode {
    pub z: f64,
    pub period: f64,
    pub flux: f64,
    /// `oint Delta H / |grad H| dl`, the z-derivative of the flux.
    pub flux_slope: f64,
    pub cycle: LevelCycle,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: usize,
    pub z_lo: f64,
    pub z_hi: f64,
    pub lo_vertex: usize,
    pub hi_vertex: usize,
    pub seed: Point,
    pub seed_level: f64,
    /// Indices of the critical points enclosed by every component of the edge.
    pub enclosed: Vec<usize>,
    pub nodes: Vec<EdgeNode>,
    period_spline: CubicSpline,
    flux_spline: CubicSpline,
    slope_spline: CubicSpline,
}

/// A graph function on one edge: cubic spline through the node values,
/// linear across the clipped strips to the vertex values.
#[derive(Debug, Clone)]
pub struct EdgeInterpolant {
    spline: CubicSpline,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl EdgeInterpolant {
    pub fn eval(&self, z: f64) -> f64 {
        let (a, b) = (self.spline.lo(), self.spline.hi());
        if z < a {
            let (z0, v0) = self.lo;
            if z <= z0 || a <= z0 {
                return v0;
            }
            let t = (z - z0) / (a - z0);
            v0 + t * (self.spline.eval(a) - v0)
        } else if z > b {
            let (z1, v1) = self.hi;
            if z >= z1 || z1 <= b {
                return v1;
            }
            let t = (z1 - z) / (z1 - b);
            v1 + t * (self.spline.eval(b) - v1)
        } else {
            self.spline.eval(z)
        }
    }
}

/// Coefficients of the averaged generator at a point of an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCoefficients {
    pub period: f64,
    pub flux: f64,
    /// `A / T`, the level average of `|grad H|^2`.
    pub a: f64,
    /// `A' / (2T)`, the level average of `Delta H / 2`.
    pub b: f64,
}

impl Edge {
    pub fn length(&self) -> f64 {
        self.z_hi - self.z_lo
    }

    pub fn node_levels(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.z).collect()
    }

    pub fn contains(&self, z: f64) -> bool {
        z > self.z_lo && z < self.z_hi
    }

    /// Clenshaw-Curtis weights on the tabulated range with the clipped end
    /// strips added to the end nodes.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let n = self.nodes.len() - 1;
        let a = self.nodes[0].z;
        let b = self.nodes[n].z;
        let mut w = clenshaw_curtis_weights(a, b, n);
        w[0] += a - self.z_lo;
        w[n] += self.z_hi - b;
        w
    }

    pub fn coefficients(&self, z: f64) -> EdgeCoefficients {
        let period = self.period_spline.eval(z).max(f64::MIN_POSITIVE);
        let flux = self.flux_spline.eval(z).max(0.0);
        let slope = self.slope_spline.eval(z);
        EdgeCoefficients { period, flux, a: flux / period, b: slope / (2.0 * period) }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ReebConfig {
    /// Truncation level; defaults to the largest critical value plus 10.
    pub z_max: Option<f64>,
    /// Marching-squares cells per side of the analysis box.
    pub grid_resolution: usize,
    /// Chebyshev intervals per edge (nodes = intervals + 1).
    pub nodes_per_edge: usize,
    /// Minimum points per traced cycle.
    pub cycle_points: usize,
    /// Box searched for critical points.
    pub search_box: Rect,
    /// Compare component counts against a twice finer grid.
    pub check_refinement: bool,
}

impl Default for ReebConfig {
    fn default() -> Self {
        Self {
            z_max: None,
            grid_resolution: 256,
            nodes_per_edge: 32,
            cycle_points: 256,
            search_box: Rect::centered(4.0),
            check_refinement: true,
        }
    }
}

/// Components alive on one open interval between consecutive critical
/// values, with reference curves at the interval midpoint.
#[derive(Debug, Clone)]
struct LevelSlice {
    lo: f64,
    hi: f64,
    mid: f64,
    components: Vec<(usize, Vec<Point>)>,
}

#[derive(Debug, Clone)]
pub struct ReebGraph {
    field: HamiltonianField,
    z_max: f64,
    analysis_box: Rect,
    critical: Vec<CriticalPoint>,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    slices: Vec<LevelSlice>,
    cycle_points: usize,
}

/// `build_graph` with default settings except the two named ones.
/// Edge under construction: key, `z_lo`, `z_hi`, low and high vertex, seed
/// point, reference level, first slice, slice ids.
type BuiltEdge = (Vec<usize>, f64, f64, usize, usize, Point, f64, usize, Vec<usize>);

pub fn build_graph(
    field: &HamiltonianField,
    z_max: Option<f64>,
    grid_resolution: usize,
) -> Result<ReebGraph, ReebError> {
    ReebGraph::build(field, &ReebConfig { z_max, grid_resolution, ..ReebConfig::default() })
}

impl ReebGraph {
    pub fn build(field: &HamiltonianField, cfg: &ReebConfig) -> Result<Self, ReebError> {
        let first = find_critical_points(field, cfg.search_box, 24)?;
        let max_crit = first.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
        let z_max = cfg.z_max.unwrap_or(max_crit + 10.0);
        let analysis_box = sublevel_box(field, z_max, cfg.search_box);
        let critical: Vec<CriticalPoint> = if analysis_box == cfg.search_box {
            first
        } else {
            let res = (24.0 * analysis_box.width() / cfg.search_box.width()).ceil() as usize;
            find_critical_points(field, analysis_box, res.clamp(24, 256))?
        };
        let critical: Vec<CriticalPoint> = critical.into_iter().filter(|c| c.value < z_max).collect();
        let max_crit = critical.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
        if critical.is_empty() || z_max <= max_crit {
            return Err(ReebError::ZMaxTooLow { z_max, max_critical: max_crit });
        }
        check_collisions(&critical)?;

        let mut levels: Vec<f64> = Vec::new();
        for c in &critical {
            if levels.last().is_none_or(|&l| c.value - l > VALUE_SEP_TOL) {
                levels.push(c.value);
            }
        }
        let mut bounds = levels.clone();
        bounds.push(z_max);
        let mids: Vec<f64> = bounds.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

        let n = cfg.grid_resolution.max(16);
        let coarse = SampledGrid::new(field, analysis_box, n);
        let comps: Vec<Vec<Vec<Point>>> = mids.iter().map(|&z| coarse.components(z)).collect::<Result<_, _>>()?;
        if cfg.check_refinement {
            let fine = SampledGrid::new(field, analysis_box, 2 * n);
            for (&z, c) in mids.iter().zip(&comps) {
                let f = fine.components(z)?.len();
                if f != c.len() {
                    return Err(ReebError::ResolutionTooCoarse { level: z, coarse: c.len(), fine: f });
                }
            }
        }

        // Group components of consecutive intervals by enclosed critical set.
        struct Draft {
            key: Vec<usize>,
            first: usize,
            last: usize,
            curves: Vec<(usize, Vec<Point>)>,
        }
        let mut drafts: Vec<Draft> = Vec::new();
        for (i, (curves, &z)) in comps.iter().zip(&mids).enumerate() {
            let mut seen: Vec<Vec<usize>> = Vec::new();
            for curve in curves {
                let curve: Vec<Point> = curve.iter().map(|&p| project_to_level(field, p, z)).collect();
                let key: Vec<usize> =
                    (0..critical.len()).filter(|&j| point_in_polygon(critical[j].location, &curve)).collect();
                if seen.contains(&key) {
                    return Err(ReebError::Topology(format!(
                        "two components at level {z} enclose the same critical set"
                    )));
                }
                seen.push(key.clone());
                match drafts.iter_mut().find(|d| d.key == key && d.last + 1 == i) {
                    Some(d) => {
                        d.last = i;
                        d.curves.push((i, curve));
                    }
                    None => drafts.push(Draft { key, first: i, last: i, curves: vec![(i, curve)] }),
                }
            }
        }
        let top = mids.len() - 1;
        if comps[top].len() != 1 {
            return Err(ReebError::Topology(format!("{} components just below z_max", comps[top].len())));
        }

        // Vertex 0 is the point at infinity; critical point j is vertex j + 1.
        let mut vertices = vec![Vertex { id: 0, value: z_max, kind: VertexKind::Infinity, location: None }];
        for (j, c) in critical.iter().enumerate() {
            let kind = if c.kind == CriticalKind::Saddle { VertexKind::Saddle } else { VertexKind::Extremum };
            vertices.push(Vertex { id: j + 1, value: c.value, kind, location: Some(c.location) });
        }
        let pick = |value: f64, key: &[usize], curve: &[Point]| -> Result<usize, ReebError> {
            let cands: Vec<usize> =
                (0..critical.len()).filter(|&j| (critical[j].value - value).abs() <= VALUE_SEP_TOL).collect();
            match cands.len() {
                0 => Err(ReebError::Topology(format!("no critical point at level {value}"))),
                1 => Ok(cands[0] + 1),
                _ => {
                    if let Some(&j) = cands.iter().find(|j| key.contains(j)) {
                        return Ok(j + 1);
                    }
                    let d =
                        |j: usize| curve.iter().map(|q| dist(*q, critical[j].location)).fold(f64::INFINITY, f64::min);
                    Ok(cands.into_iter().min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap() + 1)
                }
            }
        };

        let mut built: Vec<BuiltEdge> = Vec::new();
        for d in &drafts {
            let z_lo = bounds[d.first];
            let z_hi = bounds[d.last + 1];
            let lo_curve = &d.curves[0].1;
            let hi_curve = &d.curves[d.curves.len() - 1].1;
            let lo_vertex = pick(z_lo, &d.key, lo_curve)?;
            let hi_vertex = if d.last == top { 0 } else { pick(z_hi, &d.key, hi_curve)? };
            let (ref_slice, curve) = d
                .curves
                .iter()
                .max_by(|a, b| (bounds[a.0 + 1] - bounds[a.0]).total_cmp(&(bounds[b.0 + 1] - bounds[b.0])))
                .unwrap();
            let seed = *curve.iter().max_by(|a, b| field.grad_norm(**a).total_cmp(&field.grad_norm(**b))).unwrap();
            let slice_ids: Vec<usize> = d.curves.iter().map(|c| c.0).collect();
            built.push((d.key.clone(), z_lo, z_hi, lo_vertex, hi_vertex, seed, mids[*ref_slice], d.first, slice_ids));
        }
        // The unbounded edge first, the rest by lower level then seed position.
        built.sort_by(|a, b| {
            (a.4 != 0)
                .cmp(&(b.4 != 0))
                .then(a.1.total_cmp(&b.1))
                .then(a.5[0].total_cmp(&b.5[0]))
                .then(a.5[1].total_cmp(&b.5[1]))
        });

        let mut degree = vec![0usize; vertices.len()];
        for b in &built {
            degree[b.3] += 1;
            degree[b.4] += 1;
        }
        for v in &vertices {
            let want = match v.kind {
                VertexKind::Saddle => 3,
                VertexKind::Extremum | VertexKind::Infinity => 1,
            };
            if degree[v.id] != want {
                return Err(ReebError::Topology(format!(
                    "vertex {} ({:?} at {}) has degree {} instead of {want}",
                    v.id, v.kind, v.value, degree[v.id]
                )));
            }
        }

        let mut slices: Vec<LevelSlice> = (0..mids.len())
            .map(|i| LevelSlice { lo: bounds[i], hi: bounds[i + 1], mid: mids[i], components: Vec::new() })
            .collect();
        for (id, b) in built.iter().enumerate() {
            let d = drafts.iter().find(|d| d.key == b.0 && d.first == b.7).unwrap();
            for (i, curve) in &d.curves {
                slices[*i].components.push((id, curve.clone()));
            }
        }

        let mut graph = ReebGraph {
            field: field.clone(),
            z_max,
            analysis_box,
            critical,
            vertices,
            edges: Vec::new(),
            slices,
            cycle_points: cfg.cycle_points.max(16),
        };

        let n_nodes = cfg.nodes_per_edge.max(4);
        let tasks: Vec<(usize, f64, Point, f64)> = built
            .iter()
            .enumerate()
            .flat_map(|(id, b)| {
                let clip = VERTEX_CLIP * (b.2 - b.1);
                chebyshev_lobatto(b.1 + clip, b.2 - clip, n_nodes).into_iter().map(move |z| (id, z, b.5, b.6))
            })
            .collect();
        let traced: Vec<EdgeNode> = tasks
            .par_iter()
            .map(|&(id, z, seed, seed_level)| {
                let start = move_to_level(field, seed, z).map_err(|_| ReebError::NoReturn { z, k: id, steps: 0 })?;
                let _ = seed_level;
                let cycle = trace_from(field, start, z, id, graph.cycle_points)?;
                let flux = cycle.contour_integral(|p| field.grad_norm(p));
                let flux_slope = cycle.contour_integral(|p| field.laplacian(p) / field.grad_norm(p));
                Ok(EdgeNode { z, period: cycle.period(), flux, flux_slope, cycle })
            })
            .collect::<Result<_, ReebError>>()?;
        let mut traced = traced.into_iter();
        for (id, b) in built.into_iter().enumerate() {
            let nodes: Vec<EdgeNode> = traced.by_ref().take(n_nodes + 1).collect();
            let zs: Vec<f64> = nodes.iter().map(|n| n.z).collect();
            let spline = |f: fn(&EdgeNode) -> f64| CubicSpline::new(zs.clone(), nodes.iter().map(f).collect());
            graph.edges.push(Edge {
                id,
                z_lo: b.1,
                z_hi: b.2,
                lo_vertex: b.3,
                hi_vertex: b.4,
                seed: b.5,
                seed_level: b.6,
                enclosed: b.0,
                period_spline: spline(|n| n.period),
                flux_spline: spline(|n| n.flux),
                slope_spline: spline(|n| n.flux_slope),
                nodes,
            });
        }
        log::debug!(
            "graph for {}: {} vertices, {} edges, z_max {}",
            field.name(),
            graph.vertices.len(),
            graph.edges.len(),
            z_max
        );
        Ok(graph)
    }

    pub fn field(&self) -> &HamiltonianField {
        &self.field
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn analysis_box(&self) -> Rect {
        self.analysis_box
    }

    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> &Edge {
        &self.edges[k]
    }

    pub fn outer_edge(&self) -> usize {
        0
    }

    pub fn incident_edges(&self, vertex: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.lo_vertex == vertex || e.hi_vertex == vertex).map(|e| e.id).collect()
    }

    /// Nodes of edge `k` whose cycle stays more than `cells` grid spacings
    /// `h` from the levels bounding the edge; closer in, grid interpolation
    /// mixes values across the kink.
    pub fn resolved_nodes(&self, k: usize, h: f64, cells: f64) -> Vec<usize> {
        let e = &self.edges[k];
        let ends = [self.vertices[e.lo_vertex].value, self.vertices[e.hi_vertex].value];
        (0..e.nodes.len())
            .filter(|&j| {
                let c = &e.nodes[j].cycle;
                c.points.iter().all(|&p| ends.iter().all(|v| (c.z - v).abs() / self.field.grad_norm(p) > cells * h))
            })
            .collect()
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges.iter().map(Edge::length).fold(f64::INFINITY, f64::min)
    }

    /// `Pi(x)`; points on a critical level report the vertex as an error.
    pub fn project(&self, x: Point) -> Result<GraphPoint, ReebError> {
        let z = self.field.value(x);
        if let Some(v) = self.vertex_at_level(x, z) {
            return Err(ReebError::NearVertex { vertex: v, value: self.vertices[v].value });
        }
        if z >= self.slices[self.slices.len() - 1].lo {
            return Ok(GraphPoint { z: z.min(self.z_max), k: self.outer_edge() });
        }
        let slice = self.slices.iter().find(|s| z > s.lo && z < s.hi).ok_or(ReebError::Unresolved(x))?;
        if slice.components.len() == 1 {
            return Ok(GraphPoint { z, k: slice.components[0].0 });
        }
        match move_to_level(&self.field, x, slice.mid) {
            Ok(p) => {
                let k = slice
                    .components
                    .iter()
                    .map(|(k, c)| (*k, polyline_distance(p, c)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k)
                    .unwrap();
                Ok(GraphPoint { z, k })
            }
            Err(_) => self.project_by_tracing(x, z),
        }
    }

    /// Like [`project`](Self::project) but returns vertices as a value.
    pub fn projected(&self, x: Point) -> Projected {
        match self.project(x) {
            Ok(p) => Projected::Edge(p),
            Err(ReebError::NearVertex { vertex, value }) => Projected::Vertex { vertex, z: value },
            Err(e) => {
                log::warn!("projection of {x:?} failed ({e}); using the nearest vertex");
                let z = self.field.value(x);
                let v =
                    self.vertices.iter().min_by(|a, b| (a.value - z).abs().total_cmp(&(b.value - z).abs())).unwrap();
                Projected::Vertex { vertex: v.id, z: v.value }
            }
        }
    }

    fn vertex_at_level(&self, x: Point, z: f64) -> Option<usize> {
        self.vertices
            .iter()
            .filter(|v| v.kind != VertexKind::Infinity && (z - v.value).abs() < CONTOUR_TOL)
            .min_by(|a, b| {
                let da = a.location.map_or(f64::INFINITY, |l| dist(l, x));
                let db = b.location.map_or(f64::INFINITY, |l| dist(l, x));
                da.total_cmp(&db)
            })
            .map(|v| v.id)
    }

    fn project_by_tracing(&self, x: Point, z: f64) -> Result<GraphPoint, ReebError> {
        let start = project_to_level(&self.field, x, z);
        let (_, _, curve) = closure_pass(&self.field, start, z).ok_or(ReebError::Unresolved(x))?;
        let key: Vec<usize> =
            (0..self.critical.len()).filter(|&j| point_in_polygon(self.critical[j].location, &curve)).collect();
        self.edges
            .iter()
            .find(|e| e.enclosed == key && e.contains(z))
            .map(|e| GraphPoint { z, k: e.id })
            .ok_or(ReebError::Unresolved(x))
    }

    /// `Pi` at every cell centre of `grid`.
    pub fn project_grid(&self, grid: Grid2D) -> GridProjection {
        let points = (0..grid.len()).into_par_iter().map(|idx| self.projected(grid.center_of(idx))).collect();
        GridProjection { grid, points }
    }

    /// Closed cycle `C_k(z)`, started from the edge seed moved to level `z`.
    pub fn trace_cycle(&self, z: f64, k: usize, n_points: usize) -> Result<LevelCycle, ReebError> {
        let e = &self.edges[k];
        if !e.contains(z) {
            return Err(ReebError::OutsideEdge { z, k });
        }
        let start = move_to_level(&self.field, e.seed, z)?;
        trace_from(&self.field, start, z, k, n_points)
    }

    /// `T_k(z)` by contour quadrature.
    pub fn period(&self, z: f64, k: usize) -> Result<f64, ReebError> {
        Ok(self.trace_cycle(z, k, self.cycle_points)?.period())
    }

    /// `A_k(z) = oint |grad H| dl` by contour quadrature.
    pub fn edge_flux(&self, z: f64, k: usize) -> Result<f64, ReebError> {
        Ok(self.trace_cycle(z, k, self.cycle_points)?.contour_integral(|p| self.field.grad_norm(p)))
    }

    /// `u^wedge(z, k)`.
    pub fn level_average(&self, u: &GridFunction2D, z: f64, k: usize) -> Result<f64, ReebError> {
        Ok(self.trace_cycle(z, k, self.cycle_points)?.average_grid(u))
    }

    /// Tabulated (spline) coefficients; `z` is clamped to the edge.
    pub fn coefficients(&self, k: usize, z: f64) -> EdgeCoefficients {
        let e = &self.edges[k];
        e.coefficients(z.clamp(e.z_lo, e.z_hi))
    }

    /// `u^wedge` at every tabulation node, using the cached cycles.
    pub fn project_grid_function(&self, u: &GridFunction2D) -> Result<GraphFunction, SpacesError> {
        let edges = self.edges.iter().map(|e| e.nodes.iter().map(|n| n.cycle.average_grid(u)).collect()).collect();
        let mut f = GraphFunction { edges, vertices: vec![0.0; self.vertices.len()] };
        f.refresh_vertices(self);
        Ok(f)
    }

    /// Level average of a plane function given pointwise.
    pub fn project_fn<F: Fn(Point) -> f64 + Sync>(&self, u: F) -> GraphFunction {
        let edges = self.edges.iter().map(|e| e.nodes.iter().map(|n| n.cycle.average(&u)).collect()).collect();
        let mut f = GraphFunction { edges, vertices: vec![0.0; self.vertices.len()] };
        f.refresh_vertices(self);
        f
    }

    /// Interpolants of `f`, one per edge.
    pub fn interpolant(&self, f: &GraphFunction) -> Vec<EdgeInterpolant> {
        self.edges
            .iter()
            .zip(&f.edges)
            .map(|(e, v)| EdgeInterpolant {
                spline: CubicSpline::new(e.node_levels(), v.clone()),
                lo: (e.z_lo, f.vertices[e.lo_vertex]),
                hi: (e.z_hi, f.vertices[e.hi_vertex]),
            })
            .collect()
    }

    /// Node spline of `f` on edge `k`, continued linearly past the nodes.
    pub fn extrapolate_edge(&self, f: &GraphFunction, k: usize, z: f64) -> f64 {
        CubicSpline::new(self.edges[k].node_levels(), f.edges[k].clone()).eval(z)
    }

    /// `f^vee = f o Pi` on the grid of `projection`.
    pub fn lift(&self, f: &GraphFunction, projection: &GridProjection) -> GridFunction2D {
        let interp = self.interpolant(f);
        let values = projection
            .points
            .iter()
            .map(|p| match *p {
                Projected::Edge(g) => interp[g.k].eval(g.z),
                Projected::Vertex { vertex, .. } => f.vertices[vertex],
            })
            .collect();
        GridFunction2D { grid: projection.grid, values }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .map(|e| {
                serde_json::json!({
                    "k": e.id,
                    "z_interval": [e.z_lo, e.z_hi],
                    "endpoints": [e.lo_vertex, e.hi_vertex],
                    "seed": e.seed,
                    "z_nodes": e.node_levels(),
                    "period": e.nodes.iter().map(|n| n.period).collect::<Vec<_>>(),
                    "flux": e.nodes.iter().map(|n| n.flux).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "hamiltonian": self.field.name(),
            "z_max": self.z_max,
            "vertices": self.vertices,
            "edges": edges,
        })
    }
}

fn check_collisions(critical: &[CriticalPoint]) -> Result<(), ReebError> {
    for (i, a) in critical.iter().enumerate() {
        for b in &critical[i + 1..] {
            let involves_saddle = a.kind == CriticalKind::Saddle || b.kind == CriticalKind::Saddle;
            if involves_saddle && (a.value - b.value).abs() <= VALUE_SEP_TOL {
                return Err(ReebError::CriticalValueCollision(a.value, b.value));
            }
        }
    }
    Ok(())
}

/// Square box, at least `start`, whose boundary lies strictly above `z_max`.
fn sublevel_box(field: &HamiltonianField, z_max: f64, start: Rect) -> Rect {
    let mut b = start;
    for _ in 0..60 {
        let m = 512;
        let mut lowest = f64::INFINITY;
        for i in 0..=m {
            let t = i as f64 / m as f64;
            let x = b.lo[0] + t * b.width();
            let y = b.lo[1] + t * b.height();
            for p in [[x, b.lo[1]], [x, b.hi[1]], [b.lo[0], y], [b.hi[0], y]] {
                lowest = lowest.min(field.value(p));
            }
        }
        if lowest > z_max + 0.05 * z_max.abs() + 0.1 {
            return b;
        }
        let c = [0.5 * (b.lo[0] + b.hi[0]), 0.5 * (b.lo[1] + b.hi[1])];
        let h = 0.625 * b.width().max(b.height());
        b = Rect::new([c[0] - h, c[1] - h], [c[0] + h, c[1] + h]);
    }
    b
}

#[inline]
fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn polyline_distance(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let l2 = dot(ab, ab);
            let t = if l2 > 0.0 { (dot([p[0] - a[0], p[1] - a[1]], ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
            dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Newton corrections along `grad H` onto `{H = z}`.
fn project_to_level(field: &HamiltonianField, x: Point, z: f64) -> Point {
    let mut p = x;
    for _ in 0..4 {
        let r = field.value(p) - z;
        if r.abs() <= 1e-14 * (1.0 + z.abs()) {
            break;
        }
        let g = field.grad(p);
        let g2 = dot(g, g);
        if g2 <= 0.0 {
            break;
        }
        p = [p[0] - r * g[0] / g2, p[1] - r * g[1] / g2];
    }
    p
}

#[inline]
fn feature_size(field: &HamiltonianField, x: Point) -> f64 {
    field.grad_norm(x) / field.rate_scale(x).max(1e-300)
}

/// Follow `dx/dH = grad H / |grad H|^2` from `x` to level `z`.
pub fn move_to_level(field: &HamiltonianField, x: Point, z: f64) -> Result<Point, ReebError> {
    let mut p = x;
    let mut h = field.value(p);
    let rhs = |q: Point| {
        let g = field.grad(q);
        let g2 = dot(g, g).max(1e-300);
        [g[0] / g2, g[1] / g2]
    };
    for _ in 0..CONTINUATION_MAX_STEPS {
        if (z - h).abs() <= 1e-13 * (1.0 + z.abs()) {
            return Ok(project_to_level(field, p, z));
        }
        let gn = field.grad_norm(p);
        if gn < 1e-12 {
            return Err(ReebError::FlatContinuation { from: x, z });
        }
        let dh_max = 0.1 * feature_size(field, p) * gn;
        let dh = (z - h).clamp(-dh_max, dh_max);
        p = project_to_level(field, rk4(&rhs, p, dh), h + dh);
        h += dh;
    }
    Err(ReebError::FlatContinuation { from: x, z })
}

#[inline]
fn unit_tangent(field: &HamiltonianField, x: Point) -> [f64; 2] {
    let v = field.perp_grad(x);
    let n = v[0].hypot(v[1]).max(1e-300);
    [v[0] / n, v[1] / n]
}

#[inline]
fn march(field: &HamiltonianField, x: Point, ds: f64, z: f64) -> Point {
    project_to_level(field, rk4(&|q| unit_tangent(field, q), x, ds), z)
}

/// Adaptive first lap: returns the cycle length, the smallest feature size
/// met, and the visited points.
fn closure_pass(field: &HamiltonianField, p0: Point, z: f64) -> Option<(f64, f64, Vec<Point>)> {
    let tau = unit_tangent(field, p0);
    let s = |q: Point| dot([q[0] - p0[0], q[1] - p0[1]], tau);
    let mut x = p0;
    let mut travelled = 0.0;
    let mut fmin = f64::INFINITY;
    let mut s_prev = 0.0;
    let mut pts = vec![p0];
    for _ in 0..TRACE_MAX_STEPS {
        let f = feature_size(field, x);
        fmin = fmin.min(f);
        let ds = (TRACE_KAPPA * f).min(TRACE_DS_MAX);
        let xn = march(field, x, ds, z);
        let s_new = s(xn);
        if s_prev < 0.0 && s_new >= 0.0 && dist(xn, p0) < 2.0 * ds + 1e-12 {
            // regula falsi (Illinois) for the crossing of the start normal
            let (mut a, mut fa, mut b, mut fb) = (0.0, s_prev, ds, s_new);
            let mut side = 0;
            let mut c = b;
            for _ in 0..60 {
                c = (a * fb - b * fa) / (fb - fa);
                let fc = s(march(field, x, c, z));
                if fc.abs() < 1e-15 || (b - a).abs() < 1e-15 {
                    break;
                }
                if fc < 0.0 {
                    a = c;
                    fa = fc;
                    if side == -1 {
                        fb *= 0.5;
                    }
                    side = -1;
                } else {
                    b = c;
                    fb = fc;
                    if side == 1 {
                        fa *= 0.5;
                    }
                    side = 1;
                }
            }
            return Some((travelled + c, fmin, pts));
        }
        travelled += ds;
        x = xn;
        s_prev = s_new;
        pts.push(x);
    }
    None
}

/// Uniform arc-length sampling of the cycle through `p0` on level `z`.
pub fn trace_from(
    field: &HamiltonianField,
    p0: Point,
    z: f64,
    k: usize,
    n_points: usize,
) -> Result<LevelCycle, ReebError> {
    let p0 = project_to_level(field, p0, z);
    let (mut length, fmin, _) =
        closure_pass(field, p0, z).ok_or(ReebError::NoReturn { z, k, steps: TRACE_MAX_STEPS })?;
    let tau = unit_tangent(field, p0);
    let n = n_points.max((length / (TRACE_KAPPA * fmin)).ceil() as usize).min(TRACE_MAX_POINTS);
    let mut points = Vec::with_capacity(n);
    for _ in 0..4 {
        let ds = length / n as f64;
        points.clear();
        let mut x = p0;
        for _ in 0..n {
            points.push(x);
            x = march(field, x, ds, z);
        }
        let gap = dot([x[0] - p0[0], x[1] - p0[1]], tau);
        if gap.abs() < 1e-12 * length {
            break;
        }
        length -= gap;
    }
    let w = length / n as f64;
    let inv_grad = points.iter().map(|&p| 1.0 / field.grad_norm(p)).collect();
    Ok(LevelCycle { z, k, points, arc_weights: vec![w; n], inv_grad, length })
}

/// `H` sampled on the `(n+1)^2` vertices of a uniform grid.
struct SampledGrid {
    bbox: Rect,
    n: usize,
    values: Vec<f64>,
}

impl SampledGrid {
    fn new(field: &HamiltonianField, bbox: Rect, n: usize) -> Self {
        let m = n + 1;
        let values =
            (0..m * m).into_par_iter().map(|idx| field.value(Self::vertex(bbox, n, idx % m, idx / m))).collect();
        Self { bbox, n, values }
    }

    fn vertex(bbox: Rect, n: usize, i: usize, j: usize) -> Point {
        [bbox.lo[0] + bbox.width() * i as f64 / n as f64, bbox.lo[1] + bbox.height() * j as f64 / n as f64]
    }

    /// Closed polylines of `{H = z}` by marching squares; saddle cells are
    /// resolved by the cell-centre average.
    fn components(&self, z: f64) -> Result<Vec<Vec<Point>>, ReebError> {
        let n = self.n;
        let m = n + 1;
        let v = |i: usize, j: usize| self.values[j * m + i];
        let hid = |i: usize, j: usize| 2 * (j * m + i);
        let vid = |i: usize, j: usize| 2 * (j * m + i) + 1;
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut link = |a: usize, b: usize| {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        };
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
                let (sa, sb, sc, sd) = (a >= z, b >= z, c >= z, d >= z);
                let bottom = hid(i, j);
                let right = vid(i + 1, j);
                let top = hid(i, j + 1);
                let left = vid(i, j);
                let mut crossed = Vec::with_capacity(4);
                if sa != sb {
                    crossed.push(bottom);
                }
                if sb != sc {
                    crossed.push(right);
                }
                if sd != sc {
                    crossed.push(top);
                }
                if sa != sd {
                    crossed.push(left);
                }
                match crossed.len() {
                    2 => link(crossed[0], crossed[1]),
                    4 => {
                        if (0.25 * (a + b + c + d) >= z) == sa {
                            link(bottom, right);
                            link(top, left);
                        } else {
                            link(bottom, left);
                            link(right, top);
                        }
                    }
                    _ => {}
                }
            }
        }
        let crossing = |id: usize| -> Point {
            let base = id / 2;
            let (i, j) = (base % m, base / m);
            let (i2, j2) = if id.is_multiple_of(2) { (i + 1, j) } else { (i, j + 1) };
            let (va, vb) = (v(i, j), v(i2, j2));
            let t = ((z - va) / (vb - va)).clamp(0.0, 1.0);
            let pa = Self::vertex(self.bbox, n, i, j);
            let pb = Self::vertex(self.bbox, n, i2, j2);
            [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
        };
        let mut visited: BTreeMap<usize, bool> = adj.keys().map(|&k| (k, false)).collect();
        let mut out = Vec::new();
        for (&start, nb) in &adj {
            if visited[&start] {
                continue;
            }
            if nb.len() != 2 {
                return Err(ReebError::LevelTouchesBoundary(z));
            }
            let mut curve = Vec::new();
            let mut prev = usize::MAX;
            let mut cur = start;
            loop {
                visited.insert(cur, true);
                curve.push(crossing(cur));
                let nbs = &adj[&cur];
                if nbs.len() != 2 {
                    return Err(ReebError::LevelTouchesBoundary(z));
                }
                let next = if nbs[0] != prev { nbs[0] } else { nbs[1] };
                prev = cur;
                cur = next;
                if cur == start {
                    break;
                }
            }
            if curve.len() >= 3 {
                out.push(curve);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn graph(field: HamiltonianField) -> ReebGraph {
        ReebGraph::build(&field, &ReebConfig { grid_resolution: 128, ..ReebConfig::default() }).unwrap()
    }

    #[test]
    fn quadratic_graph_is_a_half_line() {
        let g = graph(HamiltonianField::quadratic());
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.vertices().len(), 2);
        assert!((g.z_max() - 10.0).abs() < 1e-9);
        let e = g.edge(0);
        assert_eq!(e.hi_vertex, 0);
        assert_eq!(g.vertices()[e.lo_vertex].kind, VertexKind::Extremum);
        assert!(e.z_lo.abs() < 1e-12);
    }

    #[test]
    fn quadratic_period_and_flux() {
        let g = graph(HamiltonianField::quadratic());
        for z in [0.01, 0.5, 2.0, 7.5] {
            assert!((g.period(z, 0).unwrap() - PI).abs() < 1e-6, "T({z})");
            assert!((g.edge_flux(z, 0).unwrap() - 4.0 * PI * z).abs() < 1e-6 * z.max(1.0), "A({z})");
        }
        let a2 = g.edge_flux(2.0, 0).unwrap();
        assert!((a2 - 8.0 * PI).abs() < 1e-6 * a2, "{}", a2 - 8.0 * PI);
        for n in &g.edge(0).nodes {
            assert!((n.period - PI).abs() < 1e-8);
            assert!(n.cycle.max_level_error(g.field()) < CONTOUR_TOL);
        }
        let c = g.coefficients(0, 3.0);
        assert!((c.a - 12.0).abs() < 1e-6 && (c.b - 2.0).abs() < 1e-6);
    }

    #[test]
    fn quartic_period_matches_return_time() {
        let field = HamiltonianField::quartic_well(0.5);
        let g = graph(field.clone());
        assert_eq!(g.edges().len(), 1);
        // radial: on the circle of radius r the flow rotates at angular
        // speed |grad H| / r, so the return time is 2 pi r / |grad H|.
        let r2 = (-1.0 + (1.0f64 + 2.0).sqrt()) / 1.0; // r^2 + 0.5 r^4 = 1
        let x = [r2.sqrt(), 0.0];
        assert!((field.value(x) - 1.0).abs() < 1e-12);
        let oracle = return_time(&field, x);
        let t = g.period(1.0, 0).unwrap();
        assert!(((t - oracle) / oracle).abs() < 1e-6, "{t} vs {oracle}");
        assert!((oracle - 2.0 * PI * r2.sqrt() / field.grad_norm(x)).abs() < 1e-6);
    }

    /// Time for `dx/dt = perp grad H` to cross the positive x1 axis again.
    fn return_time(field: &HamiltonianField, x0: Point) -> f64 {
        let f = |q: Point| field.perp_grad(q);
        let h = 1e-4;
        let mut x = x0;
        let mut t = 0.0;
        loop {
            let xn = rk4(&f, x, h);
            if t > 1.0 && x[1] > 0.0 && xn[1] <= 0.0 && xn[0] > 0.0 {
                // linear interpolation in time is enough at this step size
                // after one bisection refinement
                let (mut a, mut b) = (0.0, h);
                for _ in 0..60 {
                    let c = 0.5 * (a + b);
                    if rk4(&f, x, c)[1] > 0.0 {
                        a = c;
                    } else {
                        b = c;
                    }
                }
                return t + 0.5 * (a + b);
            }
            x = xn;
            t += h;
        }
    }

    #[test]
    fn double_well_has_three_edges() {
        let g = graph(HamiltonianField::double_well());
        assert_eq!(g.edges().len(), 3);
        assert_eq!(g.vertices().len(), 4);
        let outer = g.edge(0);
        assert!((outer.z_lo - 1.0).abs() < 1e-9);
        assert_eq!(outer.hi_vertex, 0);
        let saddle = outer.lo_vertex;
        assert_eq!(g.vertices()[saddle].kind, VertexKind::Saddle);
        assert_eq!(g.incident_edges(saddle).len(), 3);
        for k in [1, 2] {
            let e = g.edge(k);
            assert!(e.z_lo.abs() < 1e-9 && (e.z_hi - 1.0).abs() < 1e-9);
            assert_eq!(e.hi_vertex, saddle);
        }
        assert!(g.edge(1).seed[0] < 0.0 && g.edge(2).seed[0] > 0.0);
    }

    #[test]
    fn double_well_saddle_behaviour() {
        let g = graph(HamiltonianField::double_well());
        let mut prev = 0.0;
        for z in [0.9, 0.99, 0.999, 0.9999] {
            let t = g.period(z, 2).unwrap();
            assert!(t > prev);
            prev = t;
        }
        let d = 1e-6;
        let outer = g.edge_flux(1.0 + d, 0).unwrap();
        let wells = g.edge_flux(1.0 - d, 1).unwrap() + g.edge_flux(1.0 - d, 2).unwrap();
        assert!((outer - wells).abs() < 1e-3 * outer, "{outer} vs {wells}");
    }

    #[test]
    fn projection_examples() {
        let q = graph(HamiltonianField::quadratic());
        assert_eq!(q.project([3.0, 4.0]).unwrap(), GraphPoint { z: 10.0, k: 0 });
        let p = q.project([1.0, 2.0]).unwrap();
        assert!((p.z - 5.0).abs() < 1e-12 && p.k == 0);
        assert!(matches!(q.project([0.0, 0.0]), Err(ReebError::NearVertex { .. })));

        let g = graph(HamiltonianField::double_well());
        let p = g.project([1.0, 0.1]).unwrap();
        assert!((p.z - 0.01).abs() < 1e-12);
        assert_eq!(p.k, 2);
        assert_eq!(g.project([-1.0, 0.1]).unwrap().k, 1);
        assert_eq!(g.project([0.0, 2.0]).unwrap(), GraphPoint { z: 5.0, k: 0 });
        assert!(matches!(g.project([0.0, 0.0]), Err(ReebError::NearVertex { .. })));
        // the continuation fallback agrees with the tracer
        let t = g.project_by_tracing([0.6, -0.3], g.field().value([0.6, -0.3])).unwrap();
        assert_eq!(t.k, 2);
    }

    #[test]
    fn quadratic_with_large_cap_projects_beyond_cap_to_outer_edge() {
        let g = graph(HamiltonianField::quadratic());
        assert_eq!(g.project([30.0, 0.0]).unwrap(), GraphPoint { z: g.z_max(), k: 0 });
    }

    #[test]
    fn level_average_examples() {
        let g = graph(HamiltonianField::quadratic());
        let grid = Grid2D::square(4.0, 200);
        let one = GridFunction2D::constant(grid, 1.0);
        let x1 = GridFunction2D::from_fn(grid, |p| p[0]);
        let r2 = GridFunction2D::from_fn(grid, |p| p[0] * p[0] + p[1] * p[1]);
        for z in [0.3, 1.0, 4.0] {
            assert!((g.level_average(&one, z, 0).unwrap() - 1.0).abs() < 1e-12);
            assert!(g.level_average(&x1, z, 0).unwrap().abs() < 1e-9);
            assert!((g.level_average(&r2, z, 0).unwrap() - z).abs() < 2e-3);
        }
    }

    #[test]
    fn flux_slope_matches_spline_derivative() {
        let g = graph(HamiltonianField::double_well());
        for e in g.edges() {
            let zs = e.node_levels();
            let flux: Vec<f64> = e.nodes.iter().map(|n| n.flux).collect();
            let s = CubicSpline::new(zs.clone(), flux);
            for j in zs.len() / 4..3 * zs.len() / 4 {
                let n = &e.nodes[j];
                let fd = s.derivative(n.z);
                assert!((fd - n.flux_slope).abs() < 1e-3 * n.flux_slope.abs().max(1.0), "edge {} z {}", e.id, n.z);
            }
        }
    }

    #[test]
    fn marching_squares_counts() {
        let f = HamiltonianField::double_well();
        let s = SampledGrid::new(&f, Rect::centered(3.0), 64);
        assert_eq!(s.components(0.5).unwrap().len(), 2);
        assert_eq!(s.components(3.0).unwrap().len(), 1);
        let small = SampledGrid::new(&f, Rect::centered(1.0), 32);
        assert!(matches!(small.components(0.5), Err(ReebError::LevelTouchesBoundary(_))));
    }

    #[test]
    fn json_export_has_all_parts() {
        let g = graph(HamiltonianField::double_well());
        let j = g.to_json();
        assert_eq!(j["edges"].as_array().unwrap().len(), 3);
        assert_eq!(j["vertices"].as_array().unwrap().len(), 4);
        assert_eq!(j["vertices"][0]["kind"], "infinity");
    }
}
