//! Discrete carriers for functions on the plane and on the graph, the weight
//! `gamma`, and the weighted norms of `H_gamma` and its graph counterpart.

use thiserror::Error;

use crate::hamiltonian::{HamiltonianField, Point, Rect};
use crate::reeb::{GraphPoint, Projected, ReebGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpacesError {
    #[error("grid mismatch: {0:?} vs {1:?}")]
    GridMismatch(Grid2D, Grid2D),
    #[error("graph function shape does not match the graph tabulation")]
    ShapeMismatch,
}

/// Cell-centred tensor grid on a rectangle. Index `(i, j)` is cell column
/// `i` (x1) and row `j` (x2); storage is row-major, `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Grid2D {
    pub bbox: Rect,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(bbox: Rect, nx: usize, ny: usize) -> Self {
        assert!(nx >= 2 && ny >= 2, "grid needs at least 2x2 cells");
        Self { bbox, nx, ny }
    }

    pub fn square(half: f64, n: usize) -> Self {
        Self::new(Rect::centered(half), n, n)
    }

    pub fn dx(&self) -> f64 {
        self.bbox.width() / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.bbox.height() / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Point {
        [self.bbox.lo[0] + (i as f64 + 0.5) * self.dx(), self.bbox.lo[1] + (j as f64 + 0.5) * self.dy()]
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Point {
        self.center(idx % self.nx, idx / self.nx)
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |idx| self.center_of(idx))
    }

    /// Bilinear stencil `(indices, weights)` for a point; points outside the
    /// cell-centre hull are clamped (zero-flux extension).
    #[inline]
    pub fn stencil(&self, p: Point) -> ([usize; 4], [f64; 4]) {
        let fx = ((p[0] - self.bbox.lo[0]) / self.dx() - 0.5).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p[1] - self.bbox.lo[1]) / self.dy() - 0.5).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(self.nx - 2);
        let j0 = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let base = j0 * self.nx + i0;
        (
            [base, base + 1, base + self.nx, base + self.nx + 1],
            [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
        )
    }
}

/// Values of a plane function at the cell centres of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction2D {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl GridFunction2D {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn<F: Fn(Point) -> f64>(grid: Grid2D, f: F) -> Self {
        Self { grid, values: grid.centers().map(f).collect() }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    #[inline]
    pub fn interpolate(&self, p: Point) -> f64 {
        let (idx, w) = self.grid.stencil(p);
        w[0] * self.values[idx[0]]
            + w[1] * self.values[idx[1]]
            + w[2] * self.values[idx[2]]
            + w[3] * self.values[idx[3]]
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<(), SpacesError> {
        if self.grid != other.grid {
            return Err(SpacesError::GridMismatch(self.grid, other.grid));
        }
        Ok(())
    }

    pub fn mul(&self, other: &Self) -> Result<Self, SpacesError> {
        self.check_same_grid(other)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SpacesError> {
        self.check_same_grid(other)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() })
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A function on the graph sampled at the tabulation nodes of each edge, plus
/// one value per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFunction {
    pub edges: Vec<Vec<f64>>,
    pub vertices: Vec<f64>,
}

impl GraphFunction {
    /// Sample `f(z, k)` at every node; vertex values average the incident
    /// edges' values at the vertex level.
    pub fn from_fn<F: Fn(f64, usize) -> f64>(graph: &ReebGraph, f: F) -> Self {
        let edges = graph.edges().iter().map(|e| e.nodes.iter().map(|n| f(n.z, e.id)).collect()).collect();
        let vertices = graph
            .vertices()
            .iter()
            .map(|v| {
                let inc = graph.incident_edges(v.id);
                if inc.is_empty() {
                    return 0.0;
                }
                inc.iter().map(|&k| f(v.value.min(graph.edge(k).z_hi), k)).sum::<f64>() / inc.len() as f64
            })
            .collect();
        Self { edges, vertices }
    }

    pub fn constant(graph: &ReebGraph, c: f64) -> Self {
        Self::from_fn(graph, |_, _| c)
    }

    pub fn zeros(graph: &ReebGraph) -> Self {
        Self::constant(graph, 0.0)
    }

    pub fn check_shape(&self, graph: &ReebGraph) -> Result<(), SpacesError> {
        let ok = self.edges.len() == graph.edges().len()
            && self.vertices.len() == graph.vertices().len()
            && self.edges.iter().zip(graph.edges()).all(|(v, e)| v.len() == e.nodes.len());
        if ok {
            Ok(())
        } else {
            Err(SpacesError::ShapeMismatch)
        }
    }

    /// Re-derive vertex values by extrapolating incident edges to the vertex.
    pub fn refresh_vertices(&mut self, graph: &ReebGraph) {
        for v in graph.vertices() {
            let inc = graph.incident_edges(v.id);
            if inc.is_empty() {
                continue;
            }
            let s: f64 = inc.iter().map(|&k| graph.extrapolate_edge(self, k, v.value)).sum();
            self.vertices[v.id] = s / inc.len() as f64;
        }
    }

    /// Largest disagreement between incident edge limits at any vertex.
    pub fn continuity_defect(&self, graph: &ReebGraph) -> f64 {
        let mut worst: f64 = 0.0;
        for v in graph.vertices() {
            let inc = graph.incident_edges(v.id);
            let vals: Vec<f64> = inc.iter().map(|&k| graph.extrapolate_edge(self, k, v.value)).collect();
            for a in &vals {
                for b in &vals {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            edges: self.edges.iter().map(|e| e.iter().map(|&v| f(v)).collect()).collect(),
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Self, f: F) -> Self {
        Self {
            edges: self
                .edges
                .iter()
                .zip(&other.edges)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
            vertices: self.vertices.iter().zip(&other.vertices).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.edges.iter().flatten().chain(&self.vertices).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Decreasing positive profile `h`, with `gamma(z, k) = h(z)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Weight {
    /// `h(z) = exp(-rate z)`
    Exponential { rate: f64 },
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Exponential { rate: 1.0 }
    }
}

impl Weight {
    #[inline]
    pub fn h(&self, z: f64) -> f64 {
        match *self {
            Weight::Exponential { rate } => (-rate * z).exp(),
        }
    }

    /// Strict positivity and monotonicity on `n` samples of `[0, z_max]`.
    pub fn is_admissible_profile(&self, z_max: f64, n: usize) -> bool {
        let mut prev = f64::INFINITY;
        (0..=n).all(|i| {
            let v = self.h(z_max * i as f64 / n as f64);
            let ok = v > 0.0 && v <= prev;
            prev = v;
            ok
        })
    }

    /// `sum_k int gamma T_k dz` over the truncated graph.
    pub fn admissibility_integral(&self, graph: &ReebGraph) -> f64 {
        GraphMeasure::new(graph, *self).total_mass()
    }
}

/// `gamma^vee(x) dx` sampled on a grid (tensor midpoint rule).
#[derive(Debug, Clone)]
pub struct PlaneMeasure {
    pub grid: Grid2D,
    pub density: Vec<f64>,
}

impl PlaneMeasure {
    pub fn new(field: &HamiltonianField, weight: Weight, grid: Grid2D) -> Self {
        let area = grid.cell_area();
        Self { grid, density: grid.centers().map(|p| weight.h(field.value(p)) * area).collect() }
    }

    pub fn inner(&self, u: &GridFunction2D, v: &GridFunction2D) -> Result<f64, SpacesError> {
        if u.grid != self.grid {
            return Err(SpacesError::GridMismatch(u.grid, self.grid));
        }
        u.check_same_grid(v)?;
        Ok(u.values.iter().zip(&v.values).zip(&self.density).map(|((a, b), w)| a * b * w).sum())
    }

    pub fn norm(&self, u: &GridFunction2D) -> Result<f64, SpacesError> {
        Ok(self.inner(u, u)?.max(0.0).sqrt())
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum()
    }
}

pub fn norm_hgamma(measure: &PlaneMeasure, u: &GridFunction2D) -> Result<f64, SpacesError> {
    measure.norm(u)
}

pub fn inner_hgamma(measure: &PlaneMeasure, u: &GridFunction2D, v: &GridFunction2D) -> Result<f64, SpacesError> {
    measure.inner(u, v)
}

/// `gamma(z,k) T_k(z) dz` on the graph nodes: Clenshaw-Curtis on each edge's
/// clipped interval, with the clipped end strips folded into the end nodes.
#[derive(Debug, Clone)]
pub struct GraphMeasure {
    pub weights: Vec<Vec<f64>>,
}

impl GraphMeasure {
    pub fn new(graph: &ReebGraph, weight: Weight) -> Self {
        let weights = graph
            .edges()
            .iter()
            .map(|e| {
                let q = e.quadrature_weights();
                e.nodes.iter().zip(q).map(|(n, w)| w * n.period * weight.h(n.z)).collect()
            })
            .collect();
        Self { weights }
    }

    pub fn inner(&self, f: &GraphFunction, g: &GraphFunction) -> f64 {
        self.weights
            .iter()
            .zip(f.edges.iter().zip(&g.edges))
            .map(|(w, (a, b))| w.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum::<f64>())
            .sum()
    }

    pub fn norm(&self, f: &GraphFunction) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }
}

pub fn norm_hbar_gamma(measure: &GraphMeasure, f: &GraphFunction) -> f64 {
    measure.norm(f)
}

/// Both sides of `<f, u^wedge>_graph = <f^vee, u>_plane`.
pub fn duality_check(
    graph: &ReebGraph,
    plane: &PlaneMeasure,
    graph_measure: &GraphMeasure,
    projection: &GridProjection,
    f: &GraphFunction,
    u: &GridFunction2D,
) -> Result<(f64, f64), SpacesError> {
    let u_hat = graph.project_grid_function(u)?;
    let f_vee = graph.lift(f, projection);
    Ok((graph_measure.inner(f, &u_hat), plane.inner(&f_vee, u)?))
}

/// `Pi` evaluated at every cell centre of a grid, computed once and reused
/// by lifts.
#[derive(Debug, Clone)]
pub struct GridProjection {
    pub grid: Grid2D,
    pub points: Vec<Projected>,
}

impl GridProjection {
    pub fn edge_point(&self, idx: usize) -> Option<GraphPoint> {
        match self.points[idx] {
            Projected::Edge(p) => Some(p),
            Projected::Vertex { .. } => None,
        }
    }
}
