//! The averaged SPDE on the graph, driven by level averages of the plane
//! noise, and a runner that advances plane and graph solutions on one
//! shared noise path.

use std::fmt::Write as _;

use thiserror::Error;

use crate::graphdiff::{GraphDiffError, GraphMesh, GraphSemigroup, MeshFunction};
use crate::noise::{HomogeneousFieldSampler, NoiseError, NoiseSpec};
use crate::pde2d::{Nonlinearity, Pde2dError, PlaneSolver};
use crate::reeb::ReebGraph;
use crate::spaces::{GraphFunction, GridFunction2D, GridProjection, PlaneMeasure, SpacesError, Weight};

#[derive(Debug, Error)]
pub enum GraphSpdeError {
    #[error(transparent)]
    Graph(#[from] GraphDiffError),
    #[error(transparent)]
    Plane(#[from] Pde2dError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Spaces(#[from] SpacesError),
    #[error("graph solution exceeded the guard {guard:e} at t = {t}")]
    BlowUp { t: f64, guard: f64 },
    #[error("initial data jumps by {defect:e} across a vertex")]
    Discontinuous { defect: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GraphSpdeConfig {
    pub dt: f64,
    pub horizon: f64,
    pub reaction: Nonlinearity,
    pub diffusion: Nonlinearity,
    pub snapshot_times: Vec<f64>,
    pub blowup_guard: f64,
}

impl GraphSpdeConfig {
    pub fn deterministic(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            reaction: Nonlinearity::Zero,
            diffusion: Nonlinearity::Zero,
            snapshot_times: vec![horizon],
            blowup_guard: 1e8,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Level averages of a plane increment, placed on the mesh cells.
pub fn project_increment_to_mesh(
    graph: &ReebGraph,
    mesh: &GraphMesh,
    increment: &GridFunction2D,
) -> Result<MeshFunction, SpacesError> {
    Ok(mesh.sample(graph, &graph.project_grid_function(increment)?))
}

/// Mesh initial data from node values, rejecting jumps across vertices
/// larger than `tol`.
pub fn initial_data(
    graph: &ReebGraph,
    mesh: &GraphMesh,
    f: &GraphFunction,
    tol: f64,
) -> Result<MeshFunction, GraphSpdeError> {
    let defect = f.continuity_defect(graph);
    if defect > tol {
        return Err(GraphSpdeError::Discontinuous { defect });
    }
    Ok(mesh.sample(graph, f))
}

/// One-step operator on the graph mesh.
pub struct GraphSolver {
    semigroup: GraphSemigroup,
    reaction: Nonlinearity,
    diffusion: Nonlinearity,
}

impl GraphSolver {
    pub fn new(mesh: &GraphMesh, cfg: &GraphSpdeConfig) -> Self {
        Self { semigroup: GraphSemigroup::new(mesh, cfg.dt), reaction: cfg.reaction, diffusion: cfg.diffusion }
    }

    pub fn dt(&self) -> f64 {
        self.semigroup.dt()
    }

    /// Linear step, explicit reaction, then the projected increment; fixed
    /// (cap) vertex values are left alone.
    pub fn step(
        &self,
        graph: &ReebGraph,
        mesh: &GraphMesh,
        m: &mut MeshFunction,
        increment: Option<&MeshFunction>,
        first: bool,
    ) -> Result<(), GraphDiffError> {
        self.semigroup.advance(mesh, graph, m, 1, first)?;
        let dt = self.dt();
        let react = !self.reaction.is_zero();
        let noisy = increment.is_some() && !self.diffusion.is_zero();
        if !react && !noisy {
            return Ok(());
        }
        for (k, cells) in m.cells.iter_mut().enumerate() {
            for (i, v) in cells.iter_mut().enumerate() {
                let u = *v;
                if react {
                    *v += dt * self.reaction.eval(u);
                }
                if let (true, Some(dw)) = (noisy, increment) {
                    *v += self.diffusion.eval(u) * dw.cells[k][i];
                }
            }
        }
        mesh.sync_vertices(m);
        mesh.extrapolate_closed(graph, m);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<MeshFunction>,
    /// `|u|_{H_bar_gamma}` of each snapshot.
    pub norms: Vec<f64>,
}

impl GraphTrajectory {
    /// `edge,z,value` rows of snapshot `i`, vertex rows marked `v<id>`.
    pub fn snapshot_csv(&self, graph: &ReebGraph, mesh: &GraphMesh, i: usize) -> String {
        let m = &self.snapshots[i];
        let mut s = String::from("edge,z,value\n");
        for em in &mesh.edges {
            for (z, v) in em.centers.iter().zip(&m.cells[em.k]) {
                let _ = writeln!(s, "{},{z},{v}", em.k);
            }
        }
        for v in graph.vertices() {
            let _ = writeln!(s, "v{},{},{}", v.id, v.value, m.vertices[v.id]);
        }
        s
    }
}

/// Graph run; `noise` is `(spec, plane grid, path)` for the projected
/// plane increments.
pub fn evolve_graph_spde(
    graph: &ReebGraph,
    mesh: &GraphMesh,
    cfg: &GraphSpdeConfig,
    phi: &MeshFunction,
    noise: Option<(&NoiseSpec, crate::spaces::Grid2D, u64)>,
) -> Result<GraphTrajectory, GraphSpdeError> {
    let solver = GraphSolver::new(mesh, cfg);
    let mut sampler = match noise {
        Some((spec, grid, path)) if !cfg.diffusion.is_zero() => Some(HomogeneousFieldSampler::new(grid, spec, path)?),
        _ => None,
    };
    let marks: Vec<usize> = cfg.snapshot_times.iter().map(|t| (t / cfg.dt).round() as usize).collect();
    let weight = Weight::default();
    let mut traj = GraphTrajectory { times: vec![], snapshots: vec![], norms: vec![] };
    let record = |m: &MeshFunction, n: usize, traj: &mut GraphTrajectory| {
        for _ in marks.iter().filter(|&&s| s == n) {
            traj.times.push(n as f64 * cfg.dt);
            traj.norms.push(mesh.norm_sq(&weight, m).sqrt());
            traj.snapshots.push(m.clone());
        }
    };
    let mut m = phi.clone();
    record(&m, 0, &mut traj);
    for n in 1..=cfg.steps() {
        let inc = match sampler.as_mut() {
            Some(s) => Some(project_increment_to_mesh(graph, mesh, &s.sample_increment(cfg.dt))?),
            None => None,
        };
        solver.step(graph, mesh, &mut m, inc.as_ref(), n == 1)?;
        if !(mesh.max_abs(&m) <= cfg.blowup_guard) {
            return Err(GraphSpdeError::BlowUp { t: n as f64 * cfg.dt, guard: cfg.blowup_guard });
        }
        record(&m, n, &mut traj);
    }
    Ok(traj)
}

/// Plane solvers for several `eps` and one graph solver, advanced on the
/// same noise increments.
pub struct CoupledSystem<'a> {
    pub graph: &'a ReebGraph,
    pub mesh: &'a GraphMesh,
    pub planes: Vec<PlaneSolver>,
    pub graph_solver: GraphSolver,
    pub projection: &'a GridProjection,
    pub measure: &'a PlaneMeasure,
    pub noise: Option<NoiseSpec>,
    pub steps: usize,
    pub dt: f64,
    /// Steps at which the squared distance is recorded.
    pub probe_steps: Vec<usize>,
    /// Time weight `theta` at the end of each step (length `steps`), for the
    /// time-integrated distance; `None` skips it.
    pub theta: Option<Vec<f64>>,
    /// Drive the plane solvers with the lift of the level-averaged
    /// increment instead of the increment itself.
    pub averaged_noise: bool,
}

/// Distances between each plane solution and the lifted graph solution
/// along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    /// `[eps][probe]`: `|u_eps(t) - u_bar(t)^vee|^2_{H_gamma}`.
    pub probe_sq: Vec<Vec<f64>>,
    /// `[eps]`: `|int theta (u_eps - u_bar^vee) dt|^2_{H_gamma}`.
    pub integral_sq: Vec<f64>,
}

impl CoupledSystem<'_> {
    pub fn run_path(
        &self,
        phi: &GridFunction2D,
        phi_bar: &MeshFunction,
        path: u64,
    ) -> Result<CoupledPath, GraphSpdeError> {
        let grid = self.projection.grid;
        let mut sampler = match &self.noise {
            Some(spec) => Some(HomogeneousFieldSampler::new(grid, spec, path)?),
            None => None,
        };
        let ne = self.planes.len();
        let mut us: Vec<GridFunction2D> = vec![phi.clone(); ne];
        let mut ub = phi_bar.clone();
        let mut probe_sq = vec![Vec::with_capacity(self.probe_steps.len()); ne];
        let mut integrals: Vec<GridFunction2D> = vec![GridFunction2D::zeros(grid); ne];
        let mut observe = |n: usize, us: &[GridFunction2D], ub: &MeshFunction| -> Result<(), GraphSpdeError> {
            let probe = self.probe_steps.contains(&n);
            let th = match (&self.theta, n) {
                (Some(t), n) if n > 0 => t[n - 1],
                _ => 0.0,
            };
            if !probe && th == 0.0 {
                return Ok(());
            }
            let lifted = self.mesh.lift(self.graph, ub, self.projection);
            for e in 0..ne {
                let d = us[e].sub(&lifted)?;
                if probe {
                    probe_sq[e].push(self.measure.norm(&d)?.powi(2));
                }
                if th != 0.0 {
                    let w = th * self.dt;
                    integrals[e].values.iter_mut().zip(&d.values).for_each(|(a, b)| *a += w * b);
                }
            }
            Ok(())
        };
        observe(0, &us, &ub)?;
        for n in 1..=self.steps {
            let mut inc = sampler.as_mut().map(|s| s.sample_increment(self.dt));
            let inc_bar = match &inc {
                Some(i) => Some(project_increment_to_mesh(self.graph, self.mesh, i)?),
                None => None,
            };
            if let (true, Some(b)) = (self.averaged_noise, &inc_bar) {
                inc = Some(self.mesh.lift(self.graph, b, self.projection));
            }
            for (solver, u) in self.planes.iter().zip(us.iter_mut()) {
                solver.step(u, inc.as_ref());
            }
            self.graph_solver.step(self.graph, self.mesh, &mut ub, inc_bar.as_ref(), n == 1)?;
            observe(n, &us, &ub)?;
        }
        let integral_sq = integrals.iter().map(|g| self.measure.norm(g).map(|v| v * v)).collect::<Result<_, _>>()?;
        Ok(CoupledPath { probe_sq, integral_sq })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianField;
    use crate::noise::SpectralDensity;
    use crate::reeb::build_graph;
    use crate::reeb::GraphPoint;
    use crate::spaces::Grid2D;

    #[test]
    fn constants_and_first_moment() {
        let g = build_graph(&HamiltonianField::quadratic(), Some(20.0), 96).unwrap();
        let mesh = GraphMesh::new(&g, 300);
        let cfg = GraphSpdeConfig::deterministic(5e-3, 0.5);
        let one = mesh.sample_fn(&g, |_, _| 1.0);
        let out = evolve_graph_spde(&g, &mesh, &cfg, &one, None).unwrap();
        let last = out.snapshots.last().unwrap();
        assert!(mesh.max_abs(&mesh.map(last, |v| v - 1.0)) < 1e-10);
        let z = mesh.sample_fn(&g, |z, _| z);
        let out = evolve_graph_spde(&g, &mesh, &cfg, &z, None).unwrap();
        for z0 in [0.2, 1.0, 3.0] {
            let v = mesh.eval(&g, out.snapshots.last().unwrap(), GraphPoint { z: z0, k: 0 });
            assert!((v - z0 - 1.0).abs() < 1e-3, "{z0}: {v}");
        }
    }

    #[test]
    fn discontinuous_initial_data_is_rejected() {
        let g = build_graph(&HamiltonianField::double_well(), None, 96).unwrap();
        let mesh = GraphMesh::new(&g, 40);
        let smooth = GraphFunction::from_fn(&g, |z, _| z.sin());
        assert!(initial_data(&g, &mesh, &smooth, 1e-3).is_ok());
        let jump = GraphFunction::from_fn(&g, |z, k| z + k as f64);
        assert!(matches!(initial_data(&g, &mesh, &jump, 1e-3), Err(GraphSpdeError::Discontinuous { .. })));
    }

    #[test]
    fn noisy_runs_are_reproducible_and_finite() {
        let field = HamiltonianField::double_well();
        let g = build_graph(&field, None, 96).unwrap();
        let mesh = GraphMesh::new(&g, 80);
        let mut cfg = GraphSpdeConfig::deterministic(0.02, 0.2);
        cfg.reaction = Nonlinearity::Linear { a: -1.0 };
        cfg.diffusion = Nonlinearity::Constant { c: 1.0 };
        cfg.snapshot_times = vec![0.1, 0.2];
        let grid = Grid2D::square(3.0, 32);
        let spec = NoiseSpec::new(SpectralDensity::band_limited(3.0), 3.0, 1);
        let phi = mesh.sample_fn(&g, |_, _| 0.0);
        let a = evolve_graph_spde(&g, &mesh, &cfg, &phi, Some((&spec, grid, 0))).unwrap();
        let b = evolve_graph_spde(&g, &mesh, &cfg, &phi, Some((&spec, grid, 0))).unwrap();
        assert_eq!(a, b);
        assert!(a.norms.iter().all(|n| n.is_finite()) && a.norms[1] > 0.0);
        let csv = a.snapshot_csv(&g, &mesh, 1);
        assert_eq!(csv.lines().count(), 1 + 3 * 80 + g.vertices().len());
    }

    #[test]
    fn radial_coupling_without_noise_matches_lift() {
        // for radial H and radial data the plane and graph semigroups agree
        let field = HamiltonianField::quadratic();
        let g = build_graph(&field, Some(14.0), 96).unwrap();
        let mesh = GraphMesh::new(&g, 300);
        let grid = Grid2D::square(3.5, 96);
        let projection = g.project_grid(grid);
        let measure = PlaneMeasure::new(&field, Weight::default(), grid);
        let dt = 0.01;
        let pcfg = crate::pde2d::SpdeConfig::deterministic(0.1, grid, dt, 0.3);
        let sys = CoupledSystem {
            graph: &g,
            mesh: &mesh,
            planes: vec![PlaneSolver::new(&field, &pcfg)],
            graph_solver: GraphSolver::new(&mesh, &GraphSpdeConfig::deterministic(dt, 0.3)),
            projection: &projection,
            measure: &measure,
            noise: None,
            steps: 30,
            dt,
            probe_steps: vec![10, 30],
            theta: Some(vec![1.0; 30]),
            averaged_noise: false,
        };
        let phi = GridFunction2D::from_fn(grid, |p| (-field.value(p)).exp());
        let phi_bar = mesh.sample_fn(&g, |z, _| (-z).exp());
        let out = sys.run_path(&phi, &phi_bar, 0).unwrap();
        let scale = measure.norm(&phi).unwrap().powi(2);
        assert!(out.probe_sq[0].iter().all(|d| *d < 1e-3 * scale), "{:?} vs {scale}", out.probe_sq);
        assert!(out.integral_sq[0] < 1e-3 * scale * 0.09);
    }
}
