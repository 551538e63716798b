//! Spatially homogeneous Wiener increments by spectral synthesis on a
//! periodic frequency lattice, the covariance form `Q`, and projection of
//! increments onto the graph.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use thiserror::Error;

use crate::hamiltonian::Point;
use crate::numerics::mix_seed;
use crate::reeb::ReebGraph;
use crate::spaces::{GraphFunction, Grid2D, GridFunction2D, SpacesError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("the truncation box contains no lattice modes")]
    EmptyModeSet,
    #[error("grid Nyquist frequency {nyquist} does not exceed the truncation K = {k_max}")]
    NyquistTooLow { k_max: f64, nyquist: f64 },
    #[error("invalid spectral density: {0}")]
    InvalidDensity(String),
}

/// Spectral density `m`, symmetric under `xi -> -xi`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "density", rename_all = "snake_case")]
pub enum DensityKind {
    /// `(1 + |xi|^2)^(-s)`
    Matern { s: f64 },
    /// Indicator of `|xi| <= radius`.
    BandLimited { radius: f64 },
    /// Matern part plus symmetric atoms of the given masses at `+-xi`.
    Mixture { s: f64, atoms: Vec<([f64; 2], f64)> },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralDensity {
    pub kind: DensityKind,
    /// Integrability exponent `p` in `(1, inf)`.
    pub p: f64,
}

impl SpectralDensity {
    pub fn matern(s: f64, p: f64) -> Self {
        Self { kind: DensityKind::Matern { s }, p }
    }

    pub fn band_limited(radius: f64) -> Self {
        Self { kind: DensityKind::BandLimited { radius }, p: 2.0 }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(NoiseError::InvalidDensity(format!("p = {} must lie in (1, inf)", self.p)));
        }
        match &self.kind {
            DensityKind::Matern { s } | DensityKind::Mixture { s, .. } if !(*s > 0.0 && s * self.p > 1.0) => Err(
                NoiseError::InvalidDensity(format!("Matern exponent s = {s} is not in L^{} (need s p > 1)", self.p)),
            ),
            DensityKind::BandLimited { radius } if *radius <= 0.0 => {
                Err(NoiseError::InvalidDensity(format!("band radius {radius} must be positive")))
            }
            DensityKind::Mixture { atoms, .. } if atoms.iter().any(|a| a.1 < 0.0) => {
                Err(NoiseError::InvalidDensity("negative atom mass".into()))
            }
            _ => Ok(()),
        }
    }

    /// Absolutely continuous part of the density.
    #[inline]
    pub fn m(&self, xi: [f64; 2]) -> f64 {
        let r2 = xi[0] * xi[0] + xi[1] * xi[1];
        match &self.kind {
            DensityKind::Matern { s } | DensityKind::Mixture { s, .. } => (1.0 + r2).powf(-s),
            DensityKind::BandLimited { radius } => {
                if r2 <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn atoms(&self) -> &[([f64; 2], f64)] {
        match &self.kind {
            DensityKind::Mixture { atoms, .. } => atoms,
            _ => &[],
        }
    }

    /// Midpoint rule of `g(m(xi))` over `[-k, k]^2` with `n x n` cells.
    fn box_integral<G: Fn(f64) -> f64 + Sync>(&self, k: f64, n: usize, g: G) -> f64 {
        let h = 2.0 * k / n as f64;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let x = -k + (i as f64 + 0.5) * h;
                (0..n).map(|j| g(self.m([x, -k + (j as f64 + 0.5) * h]))).sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum::<f64>()
            * h
            * h
    }

    /// `||m||_{L^p}` restricted to `[-k, k]^2`.
    pub fn lp_norm(&self, k: f64) -> f64 {
        let p = self.p;
        self.box_integral(k, 1024, |v| v.powf(p)).powf(1.0 / p)
    }

    /// Mass of the continuous part over the whole plane, when known in closed
    /// form.
    pub fn total_mass(&self) -> Option<f64> {
        match &self.kind {
            DensityKind::Matern { s } | DensityKind::Mixture { s, .. } if *s > 1.0 => {
                Some(std::f64::consts::PI / (s - 1.0))
            }
            DensityKind::BandLimited { radius } => Some(std::f64::consts::PI * radius * radius),
            _ => None,
        }
    }

    /// Share of the continuous mass outside `[-k, k]^2` (1 if infinite).
    pub fn tail_fraction(&self, k: f64) -> f64 {
        match self.total_mass() {
            Some(total) => ((total - self.box_integral(k, 1024, |v| v)) / total).max(0.0),
            None => 1.0,
        }
    }

    /// `(||m 1_{m >= eta}||_{L^1}, ||m||_p^p / eta^(p-1))` on `[-k, k]^2`.
    pub fn split_mass(&self, eta: f64, k: f64) -> (f64, f64) {
        let p = self.p;
        let large = self.box_integral(k, 1024, |v| if v >= eta { v } else { 0.0 });
        let bound = self.box_integral(k, 1024, |v| v.powf(p)) / eta.powf(p - 1.0);
        (large, bound)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub density: SpectralDensity,
    /// Truncation `Xi = [-K, K]^2`.
    pub k_max: f64,
    pub seed: u64,
    /// Periodic synthesis box side as a multiple of the grid box.
    pub pad: usize,
    /// Keep at most this many real modes (lowest frequencies first).
    pub max_modes: Option<usize>,
}

impl NoiseSpec {
    pub fn new(density: SpectralDensity, k_max: f64, seed: u64) -> Self {
        Self { density, k_max, seed, pad: 2, max_modes: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cos,
    Sin,
}

/// One real mode `e_j(x) = amp * cos(xi . x)` or `amp * sin(xi . x)`; the
/// field is `sum_j e_j beta_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealMode {
    pub xi: [f64; 2],
    pub amp: f64,
    pub phase: Phase,
}

impl RealMode {
    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        let a = self.xi[0] * x[0] + self.xi[1] * x[1];
        self.amp
            * match self.phase {
                Phase::Cos => a.cos(),
                Phase::Sin => a.sin(),
            }
    }

    pub fn on_grid(&self, grid: Grid2D) -> GridFunction2D {
        GridFunction2D::from_fn(grid, |p| self.eval(p))
    }
}

/// Lattice mode in the half plane with FFT slots for `+xi` and `-xi`.
#[derive(Debug, Clone, Copy)]
struct LatticeMode {
    xi: [f64; 2],
    amp: f64,
    plus: usize,
    minus: usize,
    zero: bool,
}

/// Per-path sampler. Each lattice mode owns a ChaCha stream keyed by
/// `(seed, path, mode)`, so draws do not depend on scheduling.
pub struct HomogeneousFieldSampler {
    grid: Grid2D,
    nfx: usize,
    nfy: usize,
    modes: Vec<LatticeMode>,
    rngs: Vec<ChaCha8Rng>,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    cell: [f64; 2],
    dxi: [f64; 2],
    last_imag: f64,
}

impl std::fmt::Debug for HomogeneousFieldSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HomogeneousFieldSampler")
            .field("grid", &self.grid)
            .field("fft", &(self.nfx, self.nfy))
            .field("modes", &self.modes.len())
            .finish()
    }
}

impl HomogeneousFieldSampler {
    pub fn new(grid: Grid2D, spec: &NoiseSpec, path: u64) -> Result<Self, NoiseError> {
        spec.density.validate()?;
        let cell = [grid.dx(), grid.dy()];
        let nyquist = (std::f64::consts::PI / cell[0]).min(std::f64::consts::PI / cell[1]);
        if spec.k_max >= nyquist {
            return Err(NoiseError::NyquistTooLow { k_max: spec.k_max, nyquist });
        }
        let nfx = (spec.pad.max(1) * grid.nx).next_power_of_two();
        let nfy = (spec.pad.max(1) * grid.ny).next_power_of_two();
        let dxi =
            [2.0 * std::f64::consts::PI / (nfx as f64 * cell[0]), 2.0 * std::f64::consts::PI / (nfy as f64 * cell[1])];
        let cell_mass = dxi[0] * dxi[1];
        let n1 = (spec.k_max / dxi[0]).floor() as i64;
        let n2 = (spec.k_max / dxi[1]).floor() as i64;
        let slot = |a: i64, b: i64| -> usize {
            let ia = a.rem_euclid(nfx as i64) as usize;
            let ib = b.rem_euclid(nfy as i64) as usize;
            ib * nfx + ia
        };
        let mut modes = Vec::new();
        for a in 0..=n1 {
            for b in -n2..=n2 {
                if a == 0 && b < 0 {
                    continue;
                }
                let xi = [a as f64 * dxi[0], b as f64 * dxi[1]];
                let zero = a == 0 && b == 0;
                let mut var = spec.density.m(xi) * cell_mass;
                for (atom, mass) in spec.density.atoms() {
                    let snapped = |x: [f64; 2]| ((x[0] / dxi[0]).round() as i64, (x[1] / dxi[1]).round() as i64);
                    let (p, q) = snapped(*atom);
                    if (p, q) == (a, b) || (-p, -q) == (a, b) {
                        var += mass;
                    }
                }
                let amp = if zero { var.sqrt() } else { (2.0 * var).sqrt() };
                if amp > 0.0 {
                    modes.push(LatticeMode { xi, amp, plus: slot(a, b), minus: slot(-a, -b), zero });
                }
            }
        }
        if let Some(cap) = spec.max_modes {
            let key = |m: &LatticeMode| (m.xi[0].abs().max(m.xi[1].abs()), m.xi[0].hypot(m.xi[1]));
            modes.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            let mut kept = Vec::new();
            let mut real = 0;
            for m in modes {
                let r = if m.zero { 1 } else { 2 };
                if real + r > cap {
                    break;
                }
                real += r;
                kept.push(m);
            }
            modes = kept;
        }
        if modes.is_empty() {
            return Err(NoiseError::EmptyModeSet);
        }
        let base = mix_seed(spec.seed, path);
        let rngs = (0..modes.len())
            .map(|j| {
                let mut r = ChaCha8Rng::seed_from_u64(base);
                r.set_stream(j as u64);
                r
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            grid,
            nfx,
            nfy,
            rngs,
            row_fft: planner.plan_fft_inverse(nfx),
            col_fft: planner.plan_fft_inverse(nfy),
            row_fwd: planner.plan_fft_forward(nfx),
            col_fwd: planner.plan_fft_forward(nfy),
            modes,
            cell,
            dxi,
            last_imag: 0.0,
        })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// Number of real modes `J`.
    pub fn mode_count(&self) -> usize {
        self.modes.iter().map(|m| if m.zero { 1 } else { 2 }).sum()
    }

    /// `q(0)`: variance of the field per unit time.
    pub fn variance_rate(&self) -> f64 {
        self.modes.iter().map(|m| m.amp * m.amp).sum()
    }

    /// Largest imaginary part left by the last synthesis.
    pub fn last_imag_residue(&self) -> f64 {
        self.last_imag
    }

    /// The real modes, positioned relative to the centre of cell `(0, 0)`.
    pub fn real_modes(&self) -> Vec<RealMode> {
        let mut out = Vec::new();
        for m in &self.modes {
            out.push(RealMode { xi: m.xi, amp: m.amp, phase: Phase::Cos });
            if !m.zero {
                out.push(RealMode { xi: m.xi, amp: m.amp, phase: Phase::Sin });
            }
        }
        out
    }

    /// Origin used by the synthesis phases.
    pub fn origin(&self) -> Point {
        self.grid.center(0, 0)
    }

    /// Increment `W(t + dt) - W(t)` on the grid; consecutive calls are
    /// independent.
    pub fn sample_increment(&mut self, dt: f64) -> GridFunction2D {
        assert!(dt > 0.0, "time step must be positive");
        let sd = dt.sqrt();
        let draws: Vec<(f64, f64)> = self
            .rngs
            .par_iter_mut()
            .map(|r| (r.sample::<f64, _>(StandardNormal), r.sample::<f64, _>(StandardNormal)))
            .collect();
        let mut spec = vec![Complex64::new(0.0, 0.0); self.nfx * self.nfy];
        for (m, (g1, g2)) in self.modes.iter().zip(draws) {
            if m.zero {
                spec[m.plus] += Complex64::new(m.amp * sd * g1, 0.0);
            } else {
                // Re[(g1 - i g2) e^{i xi x}] = g1 cos + g2 sin
                let c = Complex64::new(g1, -g2) * (0.5 * m.amp * sd);
                spec[m.plus] += c;
                spec[m.minus] += c.conj();
            }
        }
        self.fft2(&mut spec, false);
        let mut imag: f64 = 0.0;
        let mut values = Vec::with_capacity(self.grid.len());
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let v = spec[j * self.nfx + i];
                imag = imag.max(v.im.abs());
                values.push(v.re);
            }
        }
        self.last_imag = imag;
        GridFunction2D { grid: self.grid, values }
    }

    fn fft2(&self, data: &mut [Complex64], forward: bool) {
        let (rows, cols) = if forward { (&self.row_fwd, &self.col_fwd) } else { (&self.row_fft, &self.col_fft) };
        data.par_chunks_mut(self.nfx).for_each(|row| rows.process(row));
        let mut col = vec![Complex64::new(0.0, 0.0); self.nfy];
        for i in 0..self.nfx {
            for j in 0..self.nfy {
                col[j] = data[j * self.nfx + i];
            }
            cols.process(&mut col);
            for j in 0..self.nfy {
                data[j * self.nfx + i] = col[j];
            }
        }
    }

    /// `psi^hat(xi)` at the lattice modes (relative to the synthesis origin).
    fn transform(&self, psi: &GridFunction2D) -> Vec<Complex64> {
        let mut data = vec![Complex64::new(0.0, 0.0); self.nfx * self.nfy];
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                data[j * self.nfx + i] = Complex64::new(psi.at(i, j), 0.0);
            }
        }
        self.fft2(&mut data, true);
        let area = self.cell[0] * self.cell[1];
        self.modes.iter().map(|m| data[m.plus] * area).collect()
    }

    /// `Q(psi, phi) = int psi^hat conj(phi^hat) m dxi` on the truncated lattice.
    pub fn covariance_form(&self, psi: &GridFunction2D, phi: &GridFunction2D) -> Result<f64, SpacesError> {
        psi.check_same_grid(phi)?;
        if psi.grid != self.grid {
            return Err(SpacesError::GridMismatch(psi.grid, self.grid));
        }
        let a = self.transform(psi);
        let b = self.transform(phi);
        Ok(self
            .modes
            .iter()
            .zip(a.iter().zip(&b))
            // amp^2 = 2 m dxi^2 away from zero accounts for both signs of xi
            .map(|(m, (x, y))| m.amp * m.amp * (x * y.conj()).re)
            .sum())
    }

    pub fn lattice_spacing(&self) -> [f64; 2] {
        self.dxi
    }
}

/// Graph increment `W^wedge`: level averages of the plane increment.
pub fn project_increment(graph: &ReebGraph, increment: &GridFunction2D) -> Result<GraphFunction, SpacesError> {
    graph.project_grid_function(increment)
}
