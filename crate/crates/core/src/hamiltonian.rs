//! Closed-form planar Hamiltonians, their derivatives, critical-point search
//! and growth-condition checks.
//!
//! A Hamiltonian is always supplied as an evaluator bundle (value, gradient,
//! Hessian); nothing in the crate differentiates a black box numerically.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

/// A point of the plane.
pub type Point = [f64; 2];

/// Gradient norm below which a Newton iterate is accepted as a critical point.
pub const NEWTON_TOL: f64 = 1e-12;
/// Critical points closer than this are merged.
pub const DEDUP_RADIUS: f64 = 1e-6;
/// Distinct critical points must have values further apart than this.
pub const VALUE_SEP_TOL: f64 = 1e-9;
/// A critical point is degenerate when `|lambda_min| < DEGENERACY_TOL * max(1, |lambda_max|)`.
pub const DEGENERACY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("degenerate critical point at ({x:.6}, {y:.6}): hessian eigenvalues {eigs:?}")]
    DegenerateCritical { x: f64, y: f64, eigs: (f64, f64) },
    #[error("critical values {0} and {1} are not separated")]
    CriticalValueCollision(f64, f64),
    #[error("unknown hamiltonian `{0}`")]
    UnknownName(String),
    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: String, value: f64 },
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub lo: Point,
    pub hi: Point,
}

impl Rect {
    pub fn new(lo: Point, hi: Point) -> Self {
        assert!(hi[0] > lo[0] && hi[1] > lo[1], "empty rectangle");
        Self { lo, hi }
    }

    /// Square `[-half, half]^2`.
    pub fn centered(half: f64) -> Self {
        Self::new([-half, -half], [half, half])
    }

    pub fn width(&self) -> f64 {
        self.hi[0] - self.lo[0]
    }

    pub fn height(&self) -> f64 {
        self.hi[1] - self.lo[1]
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.lo[0] && p[0] <= self.hi[0] && p[1] >= self.lo[1] && p[1] <= self.hi[1]
    }

    pub fn clamp(&self, p: Point) -> Point {
        [p[0].clamp(self.lo[0], self.hi[0]), p[1].clamp(self.lo[1], self.hi[1])]
    }

    /// Rectangle grown by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> Self {
        Self::new([self.lo[0] - margin, self.lo[1] - margin], [self.hi[0] + margin, self.hi[1] + margin])
    }
}

type ScalarFn = dyn Fn(Point) -> f64 + Send + Sync;
type VectorFn = dyn Fn(Point) -> [f64; 2] + Send + Sync;
type MatrixFn = dyn Fn(Point) -> [[f64; 2]; 2] + Send + Sync;

/// A Hamiltonian given by user closures. The Hessian must be symmetric.
pub struct UserHamiltonian {
    pub name: String,
    pub value: Box<ScalarFn>,
    pub grad: Box<VectorFn>,
    pub hessian: Box<MatrixFn>,
}

#[derive(Clone)]
pub enum HamiltonianKind {
    /// `|x|^2`
    Quadratic,
    /// `|x|^2 + c |x|^4`
    QuarticWell {
        c: f64,
    },
    /// `(x1^2 - 1)^2 + x2^2`
    DoubleWell,
    User(Arc<UserHamiltonian>),
}

/// Energy `H`, its gradient, perpendicular gradient, Hessian and Laplacian.
///
/// User Hamiltonians are shifted by a constant so that their sampled minimum
/// is zero; builtins already satisfy `min H = 0`.
#[derive(Clone)]
pub struct HamiltonianField {
    kind: HamiltonianKind,
    offset: f64,
}

impl fmt::Debug for HamiltonianField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianField").field("name", &self.name()).field("offset", &self.offset).finish()
    }
}

impl HamiltonianField {
    pub fn quadratic() -> Self {
        Self { kind: HamiltonianKind::Quadratic, offset: 0.0 }
    }

    pub fn quartic_well(c: f64) -> Self {
        assert!(c >= 0.0, "quartic coefficient must be non-negative");
        Self { kind: HamiltonianKind::QuarticWell { c }, offset: 0.0 }
    }

    pub fn double_well() -> Self {
        Self { kind: HamiltonianKind::DoubleWell, offset: 0.0 }
    }

    /// Wrap user closures and shift by the minimum sampled over `sample_box`
    /// (polished by Newton when the discrete minimizer converges).
    pub fn user(user: UserHamiltonian, sample_box: Rect) -> Self {
        let kind = HamiltonianKind::User(Arc::new(user));
        let raw = Self { kind, offset: 0.0 };
        let n = 201;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..n {
            for j in 0..n {
                let p = [
                    sample_box.lo[0] + sample_box.width() * i as f64 / (n - 1) as f64,
                    sample_box.lo[1] + sample_box.height() * j as f64 / (n - 1) as f64,
                ];
                let v = raw.value(p);
                if v < best.0 {
                    best = (v, p);
                }
            }
        }
        let mut min = best.0;
        if let Some(p) = newton_critical(&raw, best.1, &sample_box.inflate(1.0)) {
            let v = raw.value(p);
            if v < min {
                min = v;
            }
        }
        Self { offset: -min, ..raw }
    }

    /// Builtin by name: `quadratic`, `quartic_well` (param `c`, default 0.5),
    /// `double_well`.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self, HamiltonianError> {
        match name {
            "quadratic" => Ok(Self::quadratic()),
            "quartic_well" => {
                let c = params.get("c").copied().unwrap_or(0.5);
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(HamiltonianError::InvalidParameter { name: "c".into(), value: c });
                }
                Ok(Self::quartic_well(c))
            }
            "double_well" => Ok(Self::double_well()),
            other => Err(HamiltonianError::UnknownName(other.to_string())),
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["quadratic", "quartic_well", "double_well"]
    }

    pub fn name(&self) -> String {
        match &self.kind {
            HamiltonianKind::Quadratic => "quadratic".into(),
            HamiltonianKind::QuarticWell { c } => format!("quartic_well(c={c})"),
            HamiltonianKind::DoubleWell => "double_well".into(),
            HamiltonianKind::User(u) => u.name.clone(),
        }
    }

    pub fn kind(&self) -> &HamiltonianKind {
        &self.kind
    }

    /// True when `H` depends on `|x|` only.
    pub fn is_radial(&self) -> bool {
        matches!(self.kind, HamiltonianKind::Quadratic | HamiltonianKind::QuarticWell { .. })
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    #[inline]
    pub fn value(&self, x: Point) -> f64 {
        let raw = match &self.kind {
            HamiltonianKind::Quadratic => x[0] * x[0] + x[1] * x[1],
            HamiltonianKind::QuarticWell { c } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                r2 + c * r2 * r2
            }
            HamiltonianKind::DoubleWell => {
                let a = x[0] * x[0] - 1.0;
                a * a + x[1] * x[1]
            }
            HamiltonianKind::User(u) => (u.value)(x),
        };
        raw + self.offset
    }

    #[inline]
    pub fn grad(&self, x: Point) -> [f64; 2] {
        match &self.kind {
            HamiltonianKind::Quadratic => [2.0 * x[0], 2.0 * x[1]],
            HamiltonianKind::QuarticWell { c } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let s = 2.0 + 4.0 * c * r2;
                [s * x[0], s * x[1]]
            }
            HamiltonianKind::DoubleWell => [4.0 * x[0] * (x[0] * x[0] - 1.0), 2.0 * x[1]],
            HamiltonianKind::User(u) => (u.grad)(x),
        }
    }

    /// `(dH/dx2, -dH/dx1)`.
    #[inline]
    pub fn perp_grad(&self, x: Point) -> [f64; 2] {
        let g = self.grad(x);
        [g[1], -g[0]]
    }

    #[inline]
    pub fn hessian(&self, x: Point) -> [[f64; 2]; 2] {
        match &self.kind {
            HamiltonianKind::Quadratic => [[2.0, 0.0], [0.0, 2.0]],
            HamiltonianKind::QuarticWell { c } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let s = 2.0 + 4.0 * c * r2;
                [[s + 8.0 * c * x[0] * x[0], 8.0 * c * x[0] * x[1]], [8.0 * c * x[0] * x[1], s + 8.0 * c * x[1] * x[1]]]
            }
            HamiltonianKind::DoubleWell => [[12.0 * x[0] * x[0] - 4.0, 0.0], [0.0, 2.0]],
            HamiltonianKind::User(u) => (u.hessian)(x),
        }
    }

    #[inline]
    pub fn laplacian(&self, x: Point) -> f64 {
        match &self.kind {
            HamiltonianKind::Quadratic => 4.0,
            HamiltonianKind::QuarticWell { c } => 4.0 + 16.0 * c * (x[0] * x[0] + x[1] * x[1]),
            HamiltonianKind::DoubleWell => 12.0 * x[0] * x[0] - 2.0,
            HamiltonianKind::User(_) => {
                let h = self.hessian(x);
                h[0][0] + h[1][1]
            }
        }
    }

    #[inline]
    pub fn grad_norm(&self, x: Point) -> f64 {
        let g = self.grad(x);
        g[0].hypot(g[1])
    }

    /// Local rotation rate scale of the Hamiltonian flow (Frobenius norm of
    /// the Hessian), used for step control.
    #[inline]
    pub fn rate_scale(&self, x: Point) -> f64 {
        let h = self.hessian(x);
        (h[0][0] * h[0][0] + 2.0 * h[0][1] * h[0][1] + h[1][1] * h[1][1]).sqrt()
    }

    /// Integrate `dx/dt = s * perp_grad(x)` for `|duration|`,
    /// `s = sign(duration)`. Radial builtins rotate in closed form; otherwise
    /// adaptive RK4 with step `step_scale / rate_scale(x)`.
    pub fn flow(&self, x: Point, duration: f64, step_scale: f64) -> Point {
        let c = match self.kind {
            HamiltonianKind::Quadratic => Some(0.0),
            HamiltonianKind::QuarticWell { c } => Some(c),
            _ => None,
        };
        if let Some(c) = c {
            // perp_grad = w (x2, -x1) with w constant on circles
            let w = 2.0 + 4.0 * c * (x[0] * x[0] + x[1] * x[1]);
            let (s, co) = (w * duration).sin_cos();
            return [x[0] * co + x[1] * s, -x[0] * s + x[1] * co];
        }
        let sign = duration.signum();
        let mut remaining = duration.abs();
        let mut p = x;
        let f = |q: Point| {
            let v = self.perp_grad(q);
            [sign * v[0], sign * v[1]]
        };
        while remaining > 0.0 {
            let rate = self.rate_scale(p).max(1e-3);
            let h = (step_scale / rate).min(remaining);
            p = rk4(&f, p, h);
            remaining -= h;
        }
        p
    }
}

/// One classical Runge-Kutta step for an autonomous planar field.
#[inline]
pub fn rk4<F: Fn(Point) -> [f64; 2]>(f: &F, p: Point, h: f64) -> Point {
    let k1 = f(p);
    let k2 = f([p[0] + 0.5 * h * k1[0], p[1] + 0.5 * h * k1[1]]);
    let k3 = f([p[0] + 0.5 * h * k2[0], p[1] + 0.5 * h * k2[1]]);
    let k4 = f([p[0] + h * k3[0], p[1] + h * k3[1]]);
    [
        p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Minimum,
    Saddle,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CriticalPoint {
    pub location: Point,
    pub value: f64,
    pub kind: CriticalKind,
    pub hessian_eigs: (f64, f64),
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym_eigs(h: [[f64; 2]; 2]) -> (f64, f64) {
    let m = 0.5 * (h[0][0] + h[1][1]);
    let d = (0.25 * (h[0][0] - h[1][1]).powi(2) + h[0][1] * h[1][0]).max(0.0).sqrt();
    (m - d, m + d)
}

fn newton_critical(field: &HamiltonianField, seed: Point, bounds: &Rect) -> Option<Point> {
    let mut x = seed;
    for _ in 0..100 {
        let g = field.grad(x);
        if g[0].hypot(g[1]) < NEWTON_TOL {
            return Some(x);
        }
        let h = field.hessian(x);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det.abs() < 1e-300 {
            return None;
        }
        let dx = (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let dy = (-h[1][0] * g[0] + h[0][0] * g[1]) / det;
        x = [x[0] - dx, x[1] - dy];
        if !bounds.contains(x) || !x[0].is_finite() || !x[1].is_finite() {
            return None;
        }
    }
    let g = field.grad(x);
    (g[0].hypot(g[1]) < NEWTON_TOL).then_some(x)
}

/// All Newton-converged zeros of the gradient seeded from a `seed_res x
/// seed_res` grid on `search_box`, deduplicated and sorted by value.
pub fn find_critical_points(
    field: &HamiltonianField,
    search_box: Rect,
    seed_res: usize,
) -> Result<Vec<CriticalPoint>, HamiltonianError> {
    let n = seed_res.max(2);
    let bounds = search_box.inflate(0.05 * search_box.width().max(search_box.height()));
    let seeds: Vec<Point> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx % n, idx / n);
            [
                search_box.lo[0] + search_box.width() * (i as f64 + 0.5) / n as f64,
                search_box.lo[1] + search_box.height() * (j as f64 + 0.5) / n as f64,
            ]
        })
        .collect();
    let found: Vec<Option<Point>> = seeds.par_iter().map(|&s| newton_critical(field, s, &bounds)).collect();

    let mut merged: Vec<Point> = Vec::new();
    for (seed, hit) in seeds.iter().zip(&found) {
        match hit {
            Some(p) if search_box.contains(*p) => {
                if !merged.iter().any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) < DEDUP_RADIUS) {
                    merged.push(*p);
                }
            }
            Some(_) => {}
            None => log::trace!("newton from seed {seed:?} did not converge"),
        }
    }

    let mut out = Vec::with_capacity(merged.len());
    for p in merged {
        let eigs = sym_eigs(field.hessian(p));
        let scale = eigs.0.abs().max(eigs.1.abs()).max(1.0);
        if eigs.0.abs().min(eigs.1.abs()) < DEGENERACY_TOL * scale {
            return Err(HamiltonianError::DegenerateCritical { x: p[0], y: p[1], eigs });
        }
        let kind = if eigs.0 > 0.0 {
            CriticalKind::Minimum
        } else if eigs.1 < 0.0 {
            CriticalKind::Maximum
        } else {
            CriticalKind::Saddle
        };
        out.push(CriticalPoint { location: p, value: field.value(p), kind, hessian_eigs: eigs });
    }
    out.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.location[0].total_cmp(&b.location[0]))
            .then(a.location[1].total_cmp(&b.location[1]))
    });
    Ok(out)
}

/// Fails when two critical values are closer than [`VALUE_SEP_TOL`].
pub fn check_value_separation(points: &[CriticalPoint]) -> Result<(), HamiltonianError> {
    for w in points.windows(2) {
        if (w[1].value - w[0].value).abs() <= VALUE_SEP_TOL {
            return Err(HamiltonianError::CriticalValueCollision(w[0].value, w[1].value));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Assumption1Report {
    pub growth_ok: bool,
    pub gradient_ok: bool,
    pub laplacian_ok: bool,
    /// Largest `a` with `H >= a|x|^2`, `|grad H| >= a|x|`, `lap H >= a` on the
    /// sampled far field; zero when any inequality fails.
    pub margin_a: f64,
}

/// Sample rings `radius_far <= |x| <= r_box` (the largest radius inside
/// `bx`) and report the growth margins.
pub fn verify_assumption1(field: &HamiltonianField, bx: Rect, radius_far: f64) -> Assumption1Report {
    let r_box = [-bx.lo[0], bx.hi[0], -bx.lo[1], bx.hi[1]].into_iter().fold(f64::INFINITY, f64::min);
    let r_hi = r_box.max(radius_far);
    let (nr, na) = (48, 256);
    let mut growth = f64::INFINITY;
    let mut gradient = f64::INFINITY;
    let mut lap = f64::INFINITY;
    for i in 0..nr {
        let r = radius_far + (r_hi - radius_far) * i as f64 / (nr - 1) as f64;
        for j in 0..na {
            let th = std::f64::consts::TAU * j as f64 / na as f64;
            let x = [r * th.cos(), r * th.sin()];
            growth = growth.min(field.value(x) / (r * r));
            gradient = gradient.min(field.grad_norm(x) / r);
            lap = lap.min(field.laplacian(x));
        }
    }
    let a = growth.min(gradient).min(lap);
    Assumption1Report {
        growth_ok: growth > 0.0,
        gradient_ok: gradient > 0.0,
        laplacian_ok: lap > 0.0,
        margin_a: a.max(0.0),
    }
}
