//! Experiment ids, their verdict rules and default parameters.

use serde::Serialize;

use super::table::VerdictRule;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentInfo {
    pub id: &'static str,
    pub title: &'static str,
    pub description: &'static str,
    pub rule: VerdictRule,
    /// TOML body of the experiment's section; these are the only keys a
    /// config may set for it (plus `seed`).
    pub defaults: &'static str,
}

pub fn find(id: &str) -> Option<&'static ExperimentInfo> {
    CATALOG.iter().find(|i| i.id == id)
}

pub static CATALOG: &[ExperimentInfo] = &[
    ExperimentInfo {
        id: "period_oracle",
        title: "Period of the quadratic Hamiltonian",
        description: "Tabulates the Reeb graph of |x|^2 and compares the period T(z) at every tabulation node \
                      with pi, and the flux A(z) with 4 pi z.",
        rule: VerdictRule::CHECKS,
        defaults: r#"
hamiltonian = "quadratic"
z_max = 20.0
tolerance = 1e-6
"#,
    },
    ExperimentInfo {
        id: "radial_exactness",
        title: "Energy law of the fast flow against the graph diffusion",
        description: "For a radial H the energy H(X_eps(t)) has the law of the graph diffusion for every eps. \
                      Two-sample KS test of plane endpoints against graph-path endpoints, and the mean of H(X) \
                      against H(x) + 2t.",
        rule: VerdictRule::CHECKS,
        defaults: r#"
hamiltonian = "quadratic"
eps = [0.1, 0.01]
start = [0.8, 0.3]
horizon = 0.5
paths = 100000
dt = 0.05
graph_dt = 1e-3
z_max = 20.0
alpha = 0.01
"#,
    },
    ExperimentInfo {
        id: "projection_calculus",
        title: "Level averages and lifts on randomized functions",
        description: "Contraction of the level average, isometry of the lift, the duality pairing and the \
                      product rule (f^vee u)^wedge = f u^wedge, as relative errors on random smooth pairs \
                      for each builtin Hamiltonian.",
        rule: VerdictRule::CHECKS,
        defaults: r#"
hamiltonian = "builtin"
pairs = 100
grid = 400
half_width = 3.6
tolerance = 1e-2
"#,
    },
    ExperimentInfo {
        id: "kernel_bound",
        title: "Pointwise bound on the transition density",
        description: "Histograms of X_eps(t) fitted to C/t exp(-(sqrt(H(y)+1) - sqrt(H(x)+1))^2 / (4Ct)). \
                      Per-eps C is the 99th percentile of the per-bin minimal constants; the common C is the \
                      largest, and the per-eps constants must agree within a factor 2.",
        rule: VerdictRule::CHECKS,
        defaults: r#"
hamiltonian = "quartic_well"
hamiltonian_params = { c = 0.5 }
eps = [0.1, 0.05, 0.02]
times = [0.25, 1.0]
start = [0.5, 0.0]
paths = 1000000
bins = 80
half_width = 3.0
dt = 0.01
count_floor = 20
tolerance = 0.01
"#,
    },
    ExperimentInfo {
        id: "hs_scaling",
        title: "Hilbert-Schmidt sum of the semigroup against the noise modes",
        description: "log sum_j |S_eps(t)(psi e_j)|^2_{H_gamma} regressed on log t over the real noise modes \
                      e_j with |xi|_inf <= k_max; the slope must lie in [-(p-1)/p - 0.15, 0] and the outermost \
                      shell 0.8 k_max < |xi|_inf may carry at most 5% of the sum.",
        rule: VerdictRule::CHECKS,
        defaults: r#"
hamiltonian = "quadratic"
eps = [0.1, 0.05]
times = [0.05, 0.1, 0.2, 0.4]
u = { kind = "gaussian_bump", center = [0.0, 0.0], width = 1.0 }
noise = { s = 1.2, p = 2.0, k_max = 10.0 }
grid = 64
half_width = 4.0
dt = 0.01
tolerance = 0.05
"#,
    },
    ExperimentInfo {
        id: "semigroup_strong",
        title: "Strong convergence of the semigroup",
        description: "sup over time probes in [tau, T] of |S_eps(t)u - (S_bar(t)u^wedge)^vee|^2_{H_gamma}, plane \
                      solver against the graph solver. The budget is the same distance for the radial control \
                      u_c = (u^wedge)^vee, whose two sides agree exactly in the continuum. Requires dT/dz != 0 \
                      on every edge.",
        rule: VerdictRule::CONVERGENCE,
        defaults: r#"
hamiltonian = "quartic_well"
hamiltonian_params = { c = 0.5 }
eps = [0.2, 0.1, 0.05, 0.025]
tau = 0.35
horizon = 1.0
probes = 8
u = { kind = "gaussian_bump", center = [0.8, 0.0], width = 0.3 }
grid = 128
half_width = 2.5
dt = 0.005
mesh_cells = 400
z_max = 30.0
"#,
    },
    ExperimentInfo {
        id: "weak_time_avg",
        title: "Time-averaged weak convergence",
        description: "sup over ring points x of |int_tau^T [S_eps(t)u(x) - S_bar(t)u^wedge(Pi x)] theta(t) dt|. \
                      Monte Carlo in the plane with the radial control variate u_c = (u^wedge)^vee when H is \
                      radial; the graph side is the finite-volume solver. Budget: standard error plus the \
                      time-quadrature error estimate.",
        rule: VerdictRule::CONVERGENCE,
        defaults: r#"
hamiltonian = "quadratic"
eps = [0.2, 0.1, 0.05, 0.025]
tau = 0.1
horizon = 1.0
u = { kind = "cosine", k = [1.0, 0.0] }
theta = { kind = "sine_bump" }
points = 5
ring_radius = 2.5
paths = 60000
dt = 0.0025
mesh_cells = 400
z_max = 30.0
"#,
    },
    ExperimentInfo {
        id: "spde_convergence",
        title: "Convergence of the semilinear SPDE",
        description: "E sup over time probes of |u_eps(t) - u_bar(t)^vee|^2_{H_gamma}, plane and graph SPDEs \
                      driven by one noise path. Only the decrease in eps is judged; the radial control (averaged \
                      noise, lifted initial data) is reported.",
        rule: VerdictRule::MONOTONE,
        defaults: r#"
hamiltonian = "quartic_well"
hamiltonian_params = { c = 0.5 }
eps = [0.2, 0.1, 0.05]
tau = 0.1
horizon = 1.0
probes = 8
u = { kind = "gaussian_bump", center = [0.8, 0.0], width = 0.3 }
reaction = { kind = "linear", a = -1.0 }
diffusion = { kind = "saturating", a = 0.5, c = 0.1 }
noise = { s = 1.2, p = 2.0, k_max = 6.0 }
paths = 64
grid = 64
half_width = 2.5
dt = 0.01
mesh_cells = 200
z_max = 30.0
"#,
    },
    ExperimentInfo {
        id: "linear_weak",
        title: "Time-integrated convergence of the linear SPDE",
        description: "E |int_0^T [u_eps(t) - u_bar(t)^vee] theta(t) dt|^2_{H_gamma} for additive noise. Budget: \
                      standard error plus the radial control (averaged noise, lifted initial data).",
        rule: VerdictRule::CONVERGENCE,
        defaults: r#"
hamiltonian = "quadratic"
eps = [0.2, 0.1, 0.05, 0.025]
horizon = 1.0
theta = { kind = "constant", c = 1.0 }
u = { kind = "gaussian_bump", center = [0.8, 0.0], width = 0.3 }
diffusion = { kind = "constant", c = 1.0 }
noise = { s = 1.2, p = 2.0, k_max = 6.0 }
paths = 64
grid = 64
half_width = 2.5
dt = 0.005
mesh_cells = 200
z_max = 15.0
"#,
    },
];
