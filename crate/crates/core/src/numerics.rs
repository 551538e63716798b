//! Small numerical building blocks shared by the modules: Chebyshev-Lobatto
//! nodes, Clenshaw-Curtis weights, natural cubic splines and a tridiagonal
//! solver.

use std::f64::consts::PI;

/// `n + 1` Chebyshev-Lobatto nodes on `[a, b]`, ascending.
pub fn chebyshev_lobatto(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    (0..=n)
        .map(|j| {
            if j == 0 {
                a
            } else if j == n {
                b
            } else {
                mid - half * (j as f64 * PI / n as f64).cos()
            }
        })
        .collect()
}

/// Clenshaw-Curtis weights matching [`chebyshev_lobatto`] on `[a, b]`.
pub fn clenshaw_curtis_weights(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1);
    let half = 0.5 * (b - a);
    let nf = n as f64;
    (0..=n)
        .map(|j| {
            let c = if j == 0 || j == n { 1.0 } else { 2.0 };
            let mut s = 1.0;
            for k in 1..=n / 2 {
                let bk = if 2 * k == n { 1.0 } else { 2.0 };
                s -= bk / (4.0 * (k * k) as f64 - 1.0) * (2.0 * k as f64 * j as f64 * PI / nf).cos();
            }
            half * c / nf * s
        })
        .collect()
}

/// Natural cubic spline through `(xs, ys)`, `xs` strictly increasing.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n, "spline needs matching abscissae and values");
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut sub = vec![0.0; k];
            let mut diag = vec![0.0; k];
            let mut sup = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                sub[i - 1] = h0;
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            let inner = solve_tridiagonal(&sub, &diag, &sup, &rhs);
            m[1..n - 1].copy_from_slice(&inner);
        }
        Self { xs, ys, m }
    }

    pub fn lo(&self) -> f64 {
        self.xs[0]
    }

    pub fn hi(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    fn eval_inside(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// Derivative inside the tabulated range.
    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo(), self.hi());
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h - (3.0 * a * a - 1.0) * h / 6.0 * self.m[i]
            + (3.0 * b * b - 1.0) * h / 6.0 * self.m[i + 1]
    }

    /// Spline inside the range, constant beyond the ends.
    pub fn eval_clamped(&self, x: f64) -> f64 {
        self.eval_inside(x.clamp(self.lo(), self.hi()))
    }

    /// Spline inside the range, linear with the end slope beyond it.
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.lo() {
            self.ys[0] + (x - self.lo()) * self.derivative(self.lo())
        } else if x > self.hi() {
            self.ys[self.ys.len() - 1] + (x - self.hi()) * self.derivative(self.hi())
        } else {
            self.eval_inside(x)
        }
    }
}

/// Thomas algorithm; `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / den } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Gaussian elimination with partial pivoting for small dense systems;
/// `None` if the matrix is numerically singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, rest) = a.split_at_mut(row);
            for (x, p) in rest[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Linear-interpolated empirical quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let t = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - t) + v[i + 1] * t
    } else {
        v[i]
    }
}

/// SplitMix64 finaliser of `(a, b)`; derives independent seeds for sub-streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Bessel function `J0` by the integral `(1/pi) int_0^pi cos(x sin t) dt`
/// (trapezoid on a periodic integrand).
pub fn bessel_j0(x: f64) -> f64 {
    let n = 64 + (2.0 * x.abs()) as usize;
    let s: f64 = (0..n).map(|i| (x * (PI * (i as f64 + 0.5) / n as f64).sin()).cos()).sum();
    s / n as f64
}
