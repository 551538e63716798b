//! Paths of `dX = eps^-1 perp_grad H(X) dt + dB`, Monte Carlo estimates of
//! `S_eps(t) u(x)` and empirical transition kernels.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::hamiltonian::{HamiltonianField, Point, Rect};
use crate::numerics::{mean_se, mix_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Half kick, exact-ish Hamiltonian flow for `dt / eps`, half kick.
    StrangSplitting,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    /// Time-scale separation; `f64::INFINITY` switches advection off.
    pub eps: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Fast sub-step `h` satisfies `h * |Hess H| <= step_scale`.
    pub step_scale: f64,
    /// Absorbing level.
    pub cap: Option<f64>,
}

impl IntegratorConfig {
    pub fn strang(eps: f64, dt: f64) -> Self {
        Self { eps, dt, scheme: Scheme::StrangSplitting, step_scale: 0.1, cap: None }
    }

    pub fn euler(eps: f64, dt: f64) -> Self {
        Self { eps, dt, scheme: Scheme::EulerMaruyama, step_scale: 0.1, cap: None }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.cap = Some(cap);
        self
    }

    /// Number of steps and the step actually used to reach `t`.
    pub fn steps_for(&self, t: f64) -> (usize, f64) {
        if t <= 0.0 {
            return (0, 0.0);
        }
        let n = (t / self.dt).ceil().max(1.0) as usize;
        (n, t / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub x: Point,
    pub capped: bool,
}

/// Relative change of `H` over one fast sub-step of the configured size,
/// at `x`; the fast flow should keep this below the energy tolerance.
pub fn substep_energy_drift(field: &HamiltonianField, cfg: &IntegratorConfig, x: Point) -> f64 {
    let h = cfg.step_scale / field.rate_scale(x).max(1e-3);
    let y = field.flow(x, h, f64::INFINITY);
    (field.value(y) - field.value(x)).abs() / field.value(x).abs().max(1.0)
}

/// One step from `state` driven by four standard normals.
pub fn step(field: &HamiltonianField, cfg: &IntegratorConfig, dt: f64, state: PathState, draw: [f64; 4]) -> PathState {
    if state.capped {
        return state;
    }
    let mut x = state.x;
    match cfg.scheme {
        Scheme::StrangSplitting => {
            let half = (0.5 * dt).sqrt();
            x = [x[0] + half * draw[0], x[1] + half * draw[1]];
            if cfg.eps.is_finite() {
                x = field.flow(x, dt / cfg.eps, cfg.step_scale);
            }
            x = [x[0] + half * draw[2], x[1] + half * draw[3]];
        }
        Scheme::EulerMaruyama => {
            let sd = dt.sqrt();
            let v = if cfg.eps.is_finite() { field.perp_grad(x) } else { [0.0, 0.0] };
            let a = if cfg.eps.is_finite() { dt / cfg.eps } else { 0.0 };
            x = [x[0] + a * v[0] + sd * draw[0], x[1] + a * v[1] + sd * draw[1]];
        }
    }
    let capped = cfg.cap.is_some_and(|c| field.value(x) >= c);
    PathState { x, capped }
}

/// Generator for path `index` of an ensemble with master `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, index))
}

fn draw4(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Positions of one path at the (increasing) `probe_times`.
pub fn simulate_path(
    field: &HamiltonianField,
    cfg: &IntegratorConfig,
    x0: Point,
    probe_times: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<PathState> {
    let mut out = Vec::with_capacity(probe_times.len());
    let mut state = PathState { x: x0, capped: cfg.cap.is_some_and(|c| field.value(x0) >= c) };
    let mut t = 0.0;
    for &target in probe_times {
        let (n, dt) = cfg.steps_for(target - t);
        for _ in 0..n {
            let d = draw4(rng);
            state = step(field, cfg, dt, state, d);
        }
        t = target;
        out.push(state);
    }
    out
}

/// Mean and standard error of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnsembleResult {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Paths absorbed at the cap.
    pub capped: usize,
    pub elapsed: f64,
}

impl EnsembleResult {
    pub fn from_samples(samples: &[f64], capped: usize, start: Instant) -> Self {
        let (estimate, std_error) = mean_se(samples);
        Self { estimate, std_error, n_paths: samples.len(), capped, elapsed: start.elapsed().as_secs_f64() }
    }
}

/// `g` applied to each path's positions at `probe_times`, for `n_paths`
/// paths in parallel; the result is in path order.
pub fn path_functionals<G>(
    field: &HamiltonianField,
    cfg: &IntegratorConfig,
    x0: Point,
    probe_times: &[f64],
    n_paths: usize,
    seed: u64,
    g: G,
) -> (Vec<f64>, usize)
where
    G: Fn(&[PathState]) -> f64 + Sync,
{
    let out: Vec<(f64, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let states = simulate_path(field, cfg, x0, probe_times, &mut rng);
            (g(&states), states.last().is_some_and(|s| s.capped))
        })
        .collect();
    let capped = out.iter().filter(|v| v.1).count();
    (out.into_iter().map(|v| v.0).collect(), capped)
}

/// `S_eps(t) u(x)` by Monte Carlo; capped paths contribute `u` at the
/// absorption point.
pub fn semigroup_mc<U>(
    field: &HamiltonianField,
    cfg: &IntegratorConfig,
    u: U,
    x: Point,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> EnsembleResult
where
    U: Fn(Point) -> f64 + Sync,
{
    let start = Instant::now();
    if t <= 0.0 {
        let v = u(x);
        return EnsembleResult { estimate: v, std_error: 0.0, n_paths, capped: 0, elapsed: 0.0 };
    }
    let (samples, capped) = path_functionals(field, cfg, x, &[t], n_paths, seed, |s| u(s[0].x));
    EnsembleResult::from_samples(&samples, capped, start)
}

/// Endpoints `X(t)` of an ensemble, in path order.
pub fn endpoints(
    field: &HamiltonianField,
    cfg: &IntegratorConfig,
    x: Point,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Vec<PathState> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            simulate_path(field, cfg, x, &[t], &mut rng)[0]
        })
        .collect()
}

/// Density histogram of `X(t)` started at `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalKernel {
    pub source: Point,
    pub t: f64,
    pub bbox: Rect,
    pub bins: (usize, usize),
    pub counts: Vec<u64>,
    pub n_paths: usize,
    /// Paths absorbed at the cap.
    pub capped: usize,
    /// Paths ending outside the histogram box.
    pub outside: usize,
}

impl EmpiricalKernel {
    pub fn bin_area(&self) -> f64 {
        self.bbox.width() * self.bbox.height() / (self.bins.0 * self.bins.1) as f64
    }

    pub fn bin_center(&self, idx: usize) -> Point {
        let (i, j) = (idx % self.bins.0, idx / self.bins.0);
        [
            self.bbox.lo[0] + (i as f64 + 0.5) * self.bbox.width() / self.bins.0 as f64,
            self.bbox.lo[1] + (j as f64 + 0.5) * self.bbox.height() / self.bins.1 as f64,
        ]
    }

    pub fn density(&self, idx: usize) -> f64 {
        self.counts[idx] as f64 / (self.n_paths as f64 * self.bin_area())
    }

    /// Histogram mass plus the capped and escaped fractions.
    pub fn total_mass(&self) -> (f64, f64) {
        let inside: u64 = self.counts.iter().sum();
        let n = self.n_paths as f64;
        (inside as f64 / n, (self.capped + self.outside) as f64 / n)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kernel_histogram(
    field: &HamiltonianField,
    cfg: &IntegratorConfig,
    source: Point,
    t: f64,
    n_paths: usize,
    bbox: Rect,
    bins: (usize, usize),
    seed: u64,
) -> EmpiricalKernel {
    let ends = endpoints(field, cfg, source, t, n_paths, seed);
    let mut counts = vec![0u64; bins.0 * bins.1];
    let (mut capped, mut outside) = (0, 0);
    for s in ends {
        if s.capped {
            capped += 1;
            continue;
        }
        let fx = (s.x[0] - bbox.lo[0]) / bbox.width() * bins.0 as f64;
        let fy = (s.x[1] - bbox.lo[1]) / bbox.height() * bins.1 as f64;
        if fx < 0.0 || fy < 0.0 || fx >= bins.0 as f64 || fy >= bins.1 as f64 {
            outside += 1;
            continue;
        }
        counts[fy as usize * bins.0 + fx as usize] += 1;
    }
    EmpiricalKernel { source, t, bbox, bins, counts, n_paths, capped, outside }
}

/// Right side of the pointwise kernel bound.
#[inline]
pub fn kernel_bound(c: f64, t: f64, hx: f64, hy: f64) -> f64 {
    let d = (hy + 1.0).sqrt() - (hx + 1.0).sqrt();
    c / t * (-(d * d) / (4.0 * c * t)).exp()
}

/// Smallest `C` with `kernel_bound(C, ..) >= g` (the bound increases in `C`).
pub fn minimal_kernel_constant(g: f64, t: f64, hx: f64, hy: f64) -> f64 {
    if g <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while kernel_bound(hi, t, hx, hy) < g {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if kernel_bound(mid, t, hx, hy) >= g {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-10 {
            break;
        }
    }
    hi
}

/// Per-bin minimal constants over the bins holding at least `floor` counts.
pub fn kernel_constants(field: &HamiltonianField, k: &EmpiricalKernel, floor: u64) -> Vec<f64> {
    let hx = field.value(k.source);
    (0..k.counts.len())
        .filter(|&i| k.counts[i] >= floor)
        .map(|i| minimal_kernel_constant(k.density(i), k.t, hx, field.value(k.bin_center(i))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advection_alone_conserves_energy() {
        let f = HamiltonianField::quadratic();
        let x = [1.2, -0.4];
        let y = f.flow(x, 1.0, 0.1);
        assert!((f.value(y) - f.value(x)).abs() < 1e-7);
        let cfg = IntegratorConfig::strang(0.01, 0.01);
        assert!(substep_energy_drift(&f, &cfg, x) < 1e-8);
    }

    #[test]
    fn quadratic_energy_mean_is_ito_exact() {
        let f = HamiltonianField::quadratic();
        let x = [0.8, 0.3];
        let t = 0.5;
        for eps in [0.1, 0.01] {
            let r = semigroup_mc(&f, &IntegratorConfig::strang(eps, 0.05), |p| f.value(p), x, t, 40_000, 11);
            let exact = f.value(x) + 2.0 * t;
            assert!((r.estimate - exact).abs() < 3.0 * r.std_error, "eps {eps}: {} vs {exact}", r.estimate);
        }
    }

    #[test]
    fn trivial_semigroup_values() {
        let f = HamiltonianField::double_well();
        let cfg = IntegratorConfig::strang(0.1, 0.05);
        let one = semigroup_mc(&f, &cfg, |_| 1.0, [0.5, 0.5], 0.3, 500, 1);
        assert_eq!((one.estimate, one.std_error), (1.0, 0.0));
        let at0 = semigroup_mc(&f, &cfg, |p| p[0] * 3.0, [0.5, 0.5], 0.0, 500, 1);
        assert_eq!(at0.estimate, 1.5);
    }

    #[test]
    fn strang_and_euler_agree() {
        let f = HamiltonianField::quartic_well(0.5);
        let u = |p: Point| (p[0] - 0.3 * p[1]).cos();
        let x = [0.7, 0.2];
        let (eps, t) = (0.5, 0.4);
        // the cap keeps the explicit scheme away from the stiff far field
        let s = semigroup_mc(&f, &IntegratorConfig::strang(eps, 0.01).with_cap(12.0), u, x, t, 40_000, 3);
        // explicit scheme has an O(dt) bias from the rotation, so it needs a much finer step
        let e = semigroup_mc(&f, &IntegratorConfig::euler(eps, 1.5625e-4).with_cap(12.0), u, x, t, 20_000, 4);
        let tol = 3.0 * (s.std_error.powi(2) + e.std_error.powi(2)).sqrt();
        assert!((s.estimate - e.estimate).abs() < tol, "{} vs {} (tol {tol})", s.estimate, e.estimate);
    }

    #[test]
    fn kernel_mass_accounts_for_every_path() {
        let f = HamiltonianField::quadratic();
        let cfg = IntegratorConfig::strang(0.1, 0.05).with_cap(4.0);
        let k = kernel_histogram(&f, &cfg, [0.5, 0.0], 1.0, 5000, Rect::centered(1.5), (30, 30), 9);
        let (inside, deficit) = k.total_mass();
        assert!((inside + deficit - 1.0).abs() < 1e-12);
        assert!(k.capped > 0 && k.outside > 0);
    }

    #[test]
    fn minimal_constant_inverts_the_bound() {
        for (g, t, hx, hy) in [(0.3, 0.25, 0.1, 0.5), (0.01, 1.0, 0.0, 4.0), (2.0, 0.25, 1.0, 1.0)] {
            let c = minimal_kernel_constant(g, t, hx, hy);
            assert!((kernel_bound(c, t, hx, hy) - g).abs() < 1e-8 * g);
        }
    }

    #[test]
    fn seeds_reproduce_paths() {
        let f = HamiltonianField::double_well();
        let cfg = IntegratorConfig::strang(0.05, 0.02);
        let a = endpoints(&f, &cfg, [0.0, 1.0], 0.5, 64, 5);
        let b = endpoints(&f, &cfg, [0.0, 1.0], 0.5, 64, 5);
        assert_eq!(a, b);
    }
}
