//! Grid solver for `du = L_eps u dt + b(u) dt + sigma(u) dW` on a box with
//! zero-flux walls.
//!
//! One step is Lie-split: semi-Lagrangian advection along the fast flow,
//! Peaceman-Rachford ADI for `Delta / 2`, explicit reaction, then the noise
//! increment.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::hamiltonian::{HamiltonianField, Rect};
use crate::noise::{HomogeneousFieldSampler, NoiseError, NoiseSpec};
use crate::numerics::solve_tridiagonal;
use crate::spaces::{norm_hgamma, Grid2D, GridFunction2D, PlaneMeasure, SpacesError, Weight};

#[derive(Debug, Error)]
pub enum Pde2dError {
    #[error("norm {norm:e} exceeded the guard {guard:e} at t = {t}; reduce dt")]
    BlowUp { t: f64, norm: f64, guard: f64 },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Spaces(#[from] SpacesError),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error("invalid solver setting: {0}")]
    Invalid(String),
}

/// Lipschitz scalar maps used for the reaction `b` and the noise
/// coefficient `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Zero,
    Constant {
        c: f64,
    },
    Linear {
        a: f64,
    },
    Affine {
        a: f64,
        c: f64,
    },
    /// `a u / (1 + |u|) + c`.
    Saturating {
        a: f64,
        c: f64,
    },
}

impl Nonlinearity {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { c } => c,
            Self::Linear { a } => a * u,
            Self::Affine { a, c } => a * u + c,
            Self::Saturating { a, c } => a * u / (1.0 + u.abs()) + c,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Self::Zero | Self::Constant { .. } => 0.0,
            Self::Linear { a } | Self::Affine { a, .. } | Self::Saturating { a, .. } => a.abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero) || matches!(self, Self::Constant { c } if *c == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpdeConfig {
    /// `f64::INFINITY` turns advection off.
    pub eps: f64,
    pub grid: Grid2D,
    pub dt: f64,
    pub horizon: f64,
    pub reaction: Nonlinearity,
    pub diffusion: Nonlinearity,
    pub noise: Option<NoiseSpec>,
    /// Times at which to keep snapshots (rounded to the step grid).
    pub snapshot_times: Vec<f64>,
    /// Largest admissible sup norm.
    pub blowup_guard: f64,
    /// Fast sub-step control for the backtracking flow.
    pub step_scale: f64,
}

impl SpdeConfig {
    pub fn deterministic(eps: f64, grid: Grid2D, dt: f64, horizon: f64) -> Self {
        Self {
            eps,
            grid,
            dt,
            horizon,
            reaction: Nonlinearity::Zero,
            diffusion: Nonlinearity::Zero,
            noise: None,
            snapshot_times: vec![horizon],
            blowup_guard: 1e8,
            step_scale: 0.1,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn validate(&self) -> Result<(), Pde2dError> {
        if !(self.dt > 0.0 && self.horizon >= 0.0) {
            return Err(Pde2dError::Invalid(format!("dt = {}, horizon = {}", self.dt, self.horizon)));
        }
        if !(self.eps > 0.0) {
            return Err(Pde2dError::Invalid(format!("eps = {}", self.eps)));
        }
        for (name, f) in [("reaction", self.reaction), ("diffusion", self.diffusion)] {
            if !f.lipschitz().is_finite() {
                return Err(Pde2dError::Invalid(format!("{name} is not Lipschitz")));
            }
        }
        Ok(())
    }
}

/// Cubic Lagrange weights at offsets `-1, 0, 1, 2` for fractional position `t`.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Tensor cubic interpolation stencil at `p` (clamped into the box), with
/// indices clamped at the walls.
pub fn cubic_stencil(grid: &Grid2D, p: [f64; 2]) -> ([usize; 16], [f64; 16]) {
    let p = grid.bbox.clamp(p);
    let axis = |x: f64, lo: f64, h: f64, n: usize| {
        let s = ((x - lo) / h - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (s.floor() as usize).min(n.saturating_sub(2));
        let w = cubic_weights(s - i0 as f64);
        let idx = [0isize, 1, 2, 3].map(|o| (i0 as isize + o - 1).clamp(0, n as isize - 1) as usize);
        (idx, w)
    };
    let (ix, wx) = axis(p[0], grid.bbox.lo[0], grid.dx(), grid.nx);
    let (iy, wy) = axis(p[1], grid.bbox.lo[1], grid.dy(), grid.ny);
    let mut idx = [0usize; 16];
    let mut w = [0.0; 16];
    for b in 0..4 {
        for a in 0..4 {
            idx[4 * b + a] = iy[b] * grid.nx + ix[a];
            w[4 * b + a] = wy[b] * wx[a];
        }
    }
    (idx, w)
}

/// Semigroup stencils: `u_new(x) = u(Phi_{dt/eps}(x))`, tensor cubic.
#[derive(Debug, Clone)]
pub struct AdvectionStencil {
    idx: Vec<[usize; 16]>,
    w: Vec<[f64; 16]>,
    /// Cells whose foot point left the box and was clamped.
    pub clamped: usize,
}

impl AdvectionStencil {
    pub fn new(field: &HamiltonianField, grid: Grid2D, duration: f64, step_scale: f64) -> Self {
        let feet: Vec<([usize; 16], [f64; 16], bool)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.center_of(i);
                let y = field.flow(x, duration, step_scale);
                let (idx, w) = cubic_stencil(&grid, y);
                (idx, w, !grid.bbox.contains(y))
            })
            .collect();
        let clamped = feet.iter().filter(|f| f.2).count();
        let (idx, w) = feet.into_iter().map(|(i, w, _)| (i, w)).unzip();
        Self { idx, w, clamped }
    }

    pub fn apply(&self, u: &GridFunction2D) -> GridFunction2D {
        let values =
            self.idx.par_iter().zip(&self.w).map(|(i, w)| (0..16).map(|k| w[k] * u.values[i[k]]).sum()).collect();
        GridFunction2D { grid: u.grid, values }
    }
}

/// Peaceman-Rachford half steps for `Delta / 2` with Neumann walls.
#[derive(Debug, Clone)]
struct Adi {
    nx: usize,
    ny: usize,
    rx: f64,
    ry: f64,
    x_sys: (Vec<f64>, Vec<f64>, Vec<f64>),
    y_sys: (Vec<f64>, Vec<f64>, Vec<f64>),
}

/// `(I - r D)` with `D` the Neumann second difference (without `1/h^2`).
fn implicit_system(n: usize, r: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let sub = (0..n).map(|i| if i == 0 { 0.0 } else { -r }).collect();
    let sup = (0..n).map(|i| if i + 1 == n { 0.0 } else { -r }).collect();
    let diag = (0..n).map(|i| 1.0 + r * if i == 0 || i + 1 == n { 1.0 } else { 2.0 }).collect();
    (sub, diag, sup)
}

#[inline]
fn second_diff(v: &[f64], i: usize) -> f64 {
    let n = v.len();
    let l = if i == 0 { v[0] } else { v[i - 1] };
    let r = if i + 1 == n { v[n - 1] } else { v[i + 1] };
    l - 2.0 * v[i] + r
}

impl Adi {
    fn new(grid: Grid2D, dt: f64) -> Self {
        // each half step advances Delta / 2 by dt / 2 implicitly in one axis
        let rx = 0.25 * dt / (grid.dx() * grid.dx());
        let ry = 0.25 * dt / (grid.dy() * grid.dy());
        Self {
            nx: grid.nx,
            ny: grid.ny,
            rx,
            ry,
            x_sys: implicit_system(grid.nx, rx),
            y_sys: implicit_system(grid.ny, ry),
        }
    }

    fn apply(&self, u: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        // explicit in y, implicit in x
        let cols: Vec<Vec<f64>> = (0..nx).map(|i| (0..ny).map(|j| u[j * nx + i]).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..ny)
            .into_par_iter()
            .map(|j| {
                let rhs: Vec<f64> = (0..nx).map(|i| u[j * nx + i] + self.ry * second_diff(&cols[i], j)).collect();
                solve_tridiagonal(&self.x_sys.0, &self.x_sys.1, &self.x_sys.2, &rhs)
            })
            .collect();
        // explicit in x, implicit in y
        let cols: Vec<Vec<f64>> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let rhs: Vec<f64> = (0..ny).map(|j| rows[j][i] + self.rx * second_diff(&rows[j], i)).collect();
                solve_tridiagonal(&self.y_sys.0, &self.y_sys.1, &self.y_sys.2, &rhs)
            })
            .collect();
        for j in 0..ny {
            for i in 0..nx {
                u[j * nx + i] = cols[i][j];
            }
        }
    }
}

/// Precomputed step operator for one `(field, eps, grid, dt)`.
#[derive(Debug, Clone)]
pub struct PlaneSolver {
    pub grid: Grid2D,
    pub dt: f64,
    advection: Option<AdvectionStencil>,
    adi: Adi,
    reaction: Nonlinearity,
    diffusion: Nonlinearity,
}

impl PlaneSolver {
    pub fn new(field: &HamiltonianField, cfg: &SpdeConfig) -> Self {
        let advection =
            cfg.eps.is_finite().then(|| AdvectionStencil::new(field, cfg.grid, cfg.dt / cfg.eps, cfg.step_scale));
        Self {
            grid: cfg.grid,
            dt: cfg.dt,
            advection,
            adi: Adi::new(cfg.grid, cfg.dt),
            reaction: cfg.reaction,
            diffusion: cfg.diffusion,
        }
    }

    pub fn clamped_feet(&self) -> usize {
        self.advection.as_ref().map_or(0, |a| a.clamped)
    }

    /// `u <- P u` with `P` the deterministic linear part.
    pub fn linear_step(&self, u: &mut GridFunction2D) {
        if let Some(a) = &self.advection {
            *u = a.apply(u);
        }
        self.adi.apply(&mut u.values);
    }

    /// One full step; `increment` is `W(t + dt) - W(t)` on the same grid.
    pub fn step(&self, u: &mut GridFunction2D, increment: Option<&GridFunction2D>) {
        self.linear_step(u);
        if !self.reaction.is_zero() {
            let dt = self.dt;
            u.values.iter_mut().for_each(|v| *v += dt * self.reaction.eval(*v));
        }
        if let Some(dw) = increment {
            if !self.diffusion.is_zero() {
                u.values.iter_mut().zip(&dw.values).for_each(|(v, w)| *v += self.diffusion.eval(*v) * w);
            }
        }
    }
}

/// Snapshots, with the weighted norm of each.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridFunction2D>,
    pub norms: Vec<f64>,
    pub seed: Option<u64>,
    pub clamped_feet: usize,
}

impl FieldTrajectory {
    /// Stable digest of every snapshot value.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in &self.snapshots {
            for v in &s.values {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn norms_csv(&self) -> String {
        let mut s = String::from("time,norm_hgamma\n");
        for (t, n) in self.times.iter().zip(&self.norms) {
            s.push_str(&format!("{t},{n}\n"));
        }
        s
    }
}

fn snapshot_steps(cfg: &SpdeConfig) -> Vec<usize> {
    cfg.snapshot_times.iter().map(|t| (t / cfg.dt).round() as usize).collect()
}

/// Shared time loop; `noise` yields one increment per step.
fn evolve_with<N>(
    field: &HamiltonianField,
    cfg: &SpdeConfig,
    phi: &GridFunction2D,
    mut noise: N,
    seed: Option<u64>,
) -> Result<FieldTrajectory, Pde2dError>
where
    N: FnMut() -> Option<GridFunction2D>,
{
    cfg.validate()?;
    phi.check_same_grid(&GridFunction2D::zeros(cfg.grid))?;
    let solver = PlaneSolver::new(field, cfg);
    let measure = PlaneMeasure::new(field, Weight::default(), cfg.grid);
    let marks = snapshot_steps(cfg);
    let mut traj =
        FieldTrajectory { times: vec![], snapshots: vec![], norms: vec![], seed, clamped_feet: solver.clamped_feet() };
    let mut u = phi.clone();
    let record = |u: &GridFunction2D, n: usize, traj: &mut FieldTrajectory| -> Result<(), Pde2dError> {
        for _ in marks.iter().filter(|&&m| m == n) {
            traj.times.push(n as f64 * cfg.dt);
            traj.norms.push(norm_hgamma(&measure, u)?);
            traj.snapshots.push(u.clone());
        }
        Ok(())
    };
    record(&u, 0, &mut traj)?;
    for n in 1..=cfg.steps() {
        let inc = noise();
        solver.step(&mut u, inc.as_ref());
        let m = u.max_abs();
        if !(m <= cfg.blowup_guard) {
            return Err(Pde2dError::BlowUp { t: n as f64 * cfg.dt, norm: m, guard: cfg.blowup_guard });
        }
        record(&u, n, &mut traj)?;
    }
    Ok(traj)
}

/// Deterministic run; the noise settings of `cfg` are ignored.
pub fn evolve_deterministic(
    field: &HamiltonianField,
    cfg: &SpdeConfig,
    phi: &GridFunction2D,
) -> Result<FieldTrajectory, Pde2dError> {
    evolve_with(field, cfg, phi, || None, None)
}

/// Stochastic run for sample path `path`; identical to the deterministic
/// run when `sigma` is zero or noise is off.
pub fn evolve_spde(
    field: &HamiltonianField,
    cfg: &SpdeConfig,
    phi: &GridFunction2D,
    path: u64,
) -> Result<FieldTrajectory, Pde2dError> {
    match &cfg.noise {
        Some(spec) if !cfg.diffusion.is_zero() => {
            let mut sampler = HomogeneousFieldSampler::new(cfg.grid, spec, path)?;
            let dt = cfg.dt;
            evolve_with(field, cfg, phi, move || Some(sampler.sample_increment(dt)), Some(spec.seed))
        }
        _ => evolve_deterministic(field, cfg, phi),
    }
}

/// `S_eps(t) u` on the grid.
pub fn semigroup_action(
    field: &HamiltonianField,
    u: &GridFunction2D,
    t: f64,
    eps: f64,
    dt: f64,
) -> Result<GridFunction2D, Pde2dError> {
    if t <= 0.0 {
        return Ok(u.clone());
    }
    let n = (t / dt).ceil().max(1.0);
    let mut cfg = SpdeConfig::deterministic(eps, u.grid, t / n, t);
    cfg.snapshot_times = vec![t];
    let traj = evolve_deterministic(field, &cfg, u)?;
    Ok(traj.snapshots.into_iter().next_back().expect("final snapshot"))
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"RFSNAP01";

/// Flat little-endian snapshot: magic, `nx`, `ny` (u64), box `lo`, `hi`,
/// time (f64), then row-major values.
pub fn encode_snapshot(u: &GridFunction2D, time: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (8 + u.values.len()));
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(u.grid.nx as u64).to_le_bytes());
    out.extend_from_slice(&(u.grid.ny as u64).to_le_bytes());
    let b = u.grid.bbox;
    for v in [b.lo[0], b.lo[1], b.hi[0], b.hi[1], time].into_iter().chain(u.values.iter().copied()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_snapshot(path: &Path, u: &GridFunction2D, time: f64) -> Result<(), Pde2dError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_snapshot(u, time))?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(GridFunction2D, f64), Pde2dError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Pde2dError::Snapshot("bad magic".into()));
    }
    let mut b8 = [0u8; 8];
    let mut next_u = |r: &mut BufReader<File>| -> Result<u64, std::io::Error> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let nx = next_u(&mut r)? as usize;
    let ny = next_u(&mut r)? as usize;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() != 8 * (5 + nx * ny) {
        return Err(Pde2dError::Snapshot(format!("expected {} values, found {} bytes", 5 + nx * ny, rest.len())));
    }
    let f: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let grid = Grid2D::new(Rect::new([f[0], f[1]], [f[2], f[3]]), nx, ny);
    Ok((GridFunction2D { grid, values: f[5..].to_vec() }, f[4]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Point;
    use crate::noise::SpectralDensity;

    #[test]
    fn cubic_stencil_reproduces_cubics() {
        let grid = Grid2D::new(Rect::new([-1.0, -2.0], [2.0, 1.0]), 13, 17);
        let q = |p: [f64; 2]| 1.0 - p[0] + 0.5 * p[1] * p[1] * p[0] + 0.3 * p[0].powi(3) - p[1].powi(3);
        let u = GridFunction2D::from_fn(grid, q);
        for p in [[0.13, -0.71], [1.2, 0.4], [-0.5, -1.5]] {
            let (idx, w) = cubic_stencil(&grid, p);
            let v: f64 = idx.iter().zip(w).map(|(&i, w)| w * u.values[i]).sum();
            assert!((v - q(p)).abs() < 1e-12, "{p:?}");
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_stay_constant() {
        let f = HamiltonianField::double_well();
        let grid = Grid2D::square(3.0, 48);
        let cfg = SpdeConfig::deterministic(0.05, grid, 0.02, 0.5);
        let out = evolve_deterministic(&f, &cfg, &GridFunction2D::constant(grid, 2.5)).unwrap();
        let last = out.snapshots.last().unwrap();
        assert!(last.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn heat_variance_grows_linearly() {
        let f = HamiltonianField::quadratic();
        let grid = Grid2D::square(5.0, 160);
        let s0 = 0.1;
        let phi = GridFunction2D::from_fn(grid, |p| (-(p[0] * p[0] + p[1] * p[1]) / (2.0 * s0)).exp());
        let t = 0.5;
        let u = semigroup_action(&f, &phi, t, f64::INFINITY, 0.01).unwrap();
        let mass: f64 = u.values.iter().sum();
        for axis in 0..2 {
            let var: f64 = grid.centers().zip(&u.values).map(|(p, v)| p[axis] * p[axis] * v).sum::<f64>() / mass;
            let var0: f64 = grid.centers().zip(&phi.values).map(|(p, v)| p[axis] * p[axis] * v).sum::<f64>()
                / phi.values.iter().sum::<f64>();
            assert!(((var - var0) - t).abs() < 0.01 * t, "axis {axis}: {}", var - var0);
        }
    }

    #[test]
    fn level_set_functions_are_transported_unchanged() {
        let f = HamiltonianField::quartic_well(0.5);
        let grid = Grid2D::square(2.0, 96);
        let phi = GridFunction2D::from_fn(grid, |p| (-f.value(p)).exp());
        let adv = AdvectionStencil::new(&f, grid, 0.3 / 0.01, 0.1);
        let out = adv.apply(&phi);
        let err = out.sub(&phi).unwrap().max_abs();
        assert!(err < grid.dx().powi(3), "{err}");
    }

    #[test]
    fn advection_follows_the_forward_flow() {
        // S(t)u(x) = u(Phi_t(x)) for the generator <grad^perp H, grad>
        let f = HamiltonianField::quartic_well(0.5);
        let grid = Grid2D::square(2.0, 128);
        let u = |p: Point| (-(p[0] - 0.8).powi(2) / 0.2 - p[1].powi(2) / 0.2).exp();
        let adv = AdvectionStencil::new(&f, grid, 0.05, 0.1);
        let out = adv.apply(&GridFunction2D::from_fn(grid, u));
        for p in [[0.5, 0.2], [0.5, -0.2], [0.9, 0.1]] {
            let exact = u(f.flow(p, 0.05, 0.1));
            assert!((out.interpolate(p) - exact).abs() < 5e-3, "{p:?}: {} vs {exact}", out.interpolate(p));
        }
    }

    #[test]
    fn quadratic_mean_energy() {
        let f = HamiltonianField::quadratic();
        let grid = Grid2D::square(5.0, 100);
        let t = 0.5;
        let phi = GridFunction2D::from_fn(grid, |p| f.value(p));
        let u = semigroup_action(&f, &phi, t, 0.1, 0.01).unwrap();
        for p in [[0.0, 0.0], [0.5, -0.3], [1.0, 0.2]] {
            let v = u.interpolate(p);
            assert!((v - f.value(p) - 2.0 * t).abs() < 0.02, "{p:?}: {v}");
        }
    }

    fn noisy_cfg(sigma: Nonlinearity) -> SpdeConfig {
        let grid = Grid2D::square(2.0, 32);
        let mut cfg = SpdeConfig::deterministic(0.1, grid, 0.02, 0.2);
        cfg.reaction = Nonlinearity::Linear { a: -1.0 };
        cfg.diffusion = sigma;
        cfg.noise = Some(NoiseSpec::new(SpectralDensity::band_limited(3.0), 3.0, 5));
        cfg.snapshot_times = vec![0.1, 0.2];
        cfg
    }

    #[test]
    fn zero_sigma_equals_deterministic_bitwise() {
        let f = HamiltonianField::quartic_well(0.5);
        let cfg = noisy_cfg(Nonlinearity::Zero);
        let phi = GridFunction2D::from_fn(cfg.grid, |p| (-p[0] * p[0]).exp());
        let a = evolve_spde(&f, &cfg, &phi, 3).unwrap();
        let b = evolve_deterministic(&f, &cfg, &phi).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
    }

    #[test]
    fn paths_are_reproducible() {
        let f = HamiltonianField::quartic_well(0.5);
        let cfg = noisy_cfg(Nonlinearity::Saturating { a: 0.5, c: 0.1 });
        let phi = GridFunction2D::zeros(cfg.grid);
        let a = evolve_spde(&f, &cfg, &phi, 3).unwrap();
        let b = evolve_spde(&f, &cfg, &phi, 3).unwrap();
        let c = evolve_spde(&f, &cfg, &phi, 4).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert!(a.norms.iter().all(|n| n.is_finite() && *n > 0.0));
    }

    #[test]
    fn blow_up_is_reported() {
        let f = HamiltonianField::quadratic();
        let grid = Grid2D::square(2.0, 16);
        let mut cfg = SpdeConfig::deterministic(1.0, grid, 0.1, 5.0);
        cfg.reaction = Nonlinearity::Linear { a: 50.0 };
        cfg.blowup_guard = 1e6;
        let err = evolve_deterministic(&f, &cfg, &GridFunction2D::constant(grid, 1.0)).unwrap_err();
        assert!(matches!(err, Pde2dError::BlowUp { .. }));
    }

    #[test]
    fn nonlinearities() {
        let s = Nonlinearity::Saturating { a: 0.5, c: 0.1 };
        assert_eq!(s.eval(0.0), 0.1);
        assert!((s.eval(1.0) - 0.35).abs() < 1e-15);
        assert_eq!(s.lipschitz(), 0.5);
        assert!(Nonlinearity::Constant { c: 0.0 }.is_zero());
        let json = serde_json::to_string(&Nonlinearity::Affine { a: -1.0, c: 2.0 }).unwrap();
        assert_eq!(json, r#"{"kind":"affine","a":-1.0,"c":2.0}"#);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid2D::new(Rect::new([-1.0, -2.0], [3.0, 2.0]), 7, 5);
        let u = GridFunction2D::from_fn(grid, |p| p[0] * 10.0 + p[1]);
        let path = dir.path().join("u.bin");
        write_snapshot(&path, &u, 0.75).unwrap();
        let (v, t) = read_snapshot(&path).unwrap();
        assert_eq!((v, t), (u, 0.75));
        std::fs::write(&path, b"nonsense").unwrap();
        assert!(read_snapshot(&path).is_err());
    }
}
