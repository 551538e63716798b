//! Run configuration: a TOML file with a `[run]` table and one table per
//! experiment id. Keys an experiment does not use are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hamiltonian::{HamiltonianField, Point};
use crate::noise::SpectralDensity;
use crate::pde2d::Nonlinearity;

use super::catalog::{self, ExperimentInfo};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

/// Scalar test functions `u` on the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeFunction {
    /// `exp(-|x - center|^2 / (2 width^2))`
    GaussianBump {
        center: Point,
        width: f64,
    },
    /// `cos(k . x)`
    Cosine {
        k: Point,
    },
    /// `exp(-rate H(x))`
    EnergyExp {
        rate: f64,
    },
    Constant {
        c: f64,
    },
}

impl ProbeFunction {
    pub fn eval(&self, field: &HamiltonianField, x: Point) -> f64 {
        match *self {
            Self::GaussianBump { center, width } => {
                let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                (-d2 / (2.0 * width * width)).exp()
            }
            Self::Cosine { k } => (k[0] * x[0] + k[1] * x[1]).cos(),
            Self::EnergyExp { rate } => (-rate * field.value(x)).exp(),
            Self::Constant { c } => c,
        }
    }
}

/// Time weights `theta` on `[tau, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeWeight {
    Constant {
        c: f64,
    },
    /// `sin^2(pi (t - tau) / (T - tau))`, vanishing at both ends.
    SineBump,
}

impl TimeWeight {
    pub fn eval(&self, t: f64, tau: f64, horizon: f64) -> f64 {
        if t < tau || t > horizon {
            return 0.0;
        }
        match *self {
            Self::Constant { c } => c,
            Self::SineBump => (std::f64::consts::PI * (t - tau) / (horizon - tau)).sin().powi(2),
        }
    }
}

/// Spectral density and truncation of the driving noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    /// `m(xi) = (1 + |xi|^2)^-s`.
    pub s: f64,
    /// Integrability exponent of `m`.
    pub p: f64,
    /// Modes with `|xi|_inf <= k_max`.
    pub k_max: f64,
}

impl NoiseSettings {
    pub fn density(&self) -> SpectralDensity {
        SpectralDensity::matern(self.s, self.p)
    }
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self { s: 1.2, p: 2.0, k_max: 6.0 }
    }
}

/// Parameters of one experiment. Each id uses a subset of the fields; the
/// rest keep their defaults and are not accepted from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Builtin name, or `builtin` for every builtin in turn.
    pub hamiltonian: String,
    pub hamiltonian_params: BTreeMap<String, f64>,
    /// Strictly decreasing.
    pub eps: Vec<f64>,
    pub tau: f64,
    pub horizon: f64,
    /// Time probes in `[tau, T]`.
    pub probes: usize,
    pub u: ProbeFunction,
    pub theta: TimeWeight,
    pub noise: NoiseSettings,
    pub paths: usize,
    /// Plane grid cells per side.
    pub grid: usize,
    pub half_width: f64,
    pub dt: f64,
    /// Step of the graph-path ensemble.
    pub graph_dt: f64,
    /// Significance level of two-sample tests.
    pub alpha: f64,
    /// Finite-volume cells per graph edge.
    pub mesh_cells: usize,
    /// Graph truncation level; `None` picks a default per Hamiltonian.
    pub z_max: Option<f64>,
    pub start: Point,
    /// Probe points on a ring around the origin.
    pub points: usize,
    pub ring_radius: f64,
    pub times: Vec<f64>,
    pub reaction: Nonlinearity,
    pub diffusion: Nonlinearity,
    pub bins: usize,
    /// Minimum histogram count for a bin to enter the kernel fit.
    pub count_floor: u64,
    /// Randomized pairs per Hamiltonian.
    pub pairs: usize,
    pub tolerance: f64,
    /// Overrides the seed derived from the run seed.
    pub seed: Option<u64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            hamiltonian: "quadratic".into(),
            hamiltonian_params: BTreeMap::new(),
            eps: vec![],
            tau: 0.1,
            horizon: 1.0,
            probes: 8,
            u: ProbeFunction::GaussianBump { center: [0.8, 0.0], width: 0.3 },
            theta: TimeWeight::Constant { c: 1.0 },
            noise: NoiseSettings::default(),
            paths: 1000,
            grid: 64,
            half_width: 2.5,
            dt: 0.01,
            graph_dt: 1e-3,
            alpha: 0.01,
            mesh_cells: 200,
            z_max: None,
            start: [0.8, 0.3],
            points: 5,
            ring_radius: 1.5,
            times: vec![],
            reaction: Nonlinearity::Zero,
            diffusion: Nonlinearity::Zero,
            bins: 100,
            count_floor: 5,
            pairs: 100,
            tolerance: 1e-2,
            seed: None,
        }
    }
}

impl ExperimentSpec {
    /// Hamiltonians named by `hamiltonian`.
    pub fn fields(&self) -> Result<Vec<HamiltonianField>, ConfigError> {
        let names: Vec<&str> = if self.hamiltonian == "builtin" {
            HamiltonianField::builtin_names().to_vec()
        } else {
            vec![self.hamiltonian.as_str()]
        };
        names
            .into_iter()
            .map(|n| {
                HamiltonianField::from_name(n, &self.hamiltonian_params)
                    .map_err(|e| invalid("hamiltonian", e.to_string()))
            })
            .collect()
    }

    pub fn field(&self) -> Result<HamiltonianField, ConfigError> {
        let mut f = self.fields()?;
        if f.len() != 1 {
            return Err(invalid("hamiltonian", "this experiment takes a single Hamiltonian"));
        }
        Ok(f.remove(0))
    }

    /// `probes` times spread evenly over `[tau, T]`, both ends included.
    pub fn probe_times(&self) -> Vec<f64> {
        let n = self.probes.max(1);
        if n == 1 {
            return vec![self.horizon];
        }
        (0..n).map(|i| self.tau + (self.horizon - self.tau) * i as f64 / (n - 1) as f64).collect()
    }

    /// Checks on the fields present in `keys` (the ones this id uses).
    fn validate(&self, keys: &[String]) -> Result<(), ConfigError> {
        let has = |k: &str| keys.iter().any(|x| x == k);
        if has("hamiltonian") {
            self.fields()?;
        }
        if has("eps") {
            if self.eps.is_empty() {
                return Err(invalid("eps", "empty grid"));
            }
            if self.eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                return Err(invalid("eps", "values must be positive and finite"));
            }
            if self.eps.windows(2).any(|w| w[1] >= w[0]) {
                return Err(invalid("eps", "grid must be strictly decreasing"));
            }
        }
        if has("tau") && has("horizon") && !(self.tau > 0.0 && self.tau < self.horizon) {
            return Err(invalid("tau", format!("need 0 < tau < T, got tau = {} and T = {}", self.tau, self.horizon)));
        }
        if has("horizon") && !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive"));
        }
        for (k, v) in [("paths", self.paths), ("grid", self.grid), ("mesh_cells", self.mesh_cells), ("bins", self.bins)]
        {
            if has(k) && v == 0 {
                return Err(invalid(k, "must be positive"));
            }
        }
        if has("probes") && self.probes < 2 {
            return Err(invalid("probes", "need at least two time probes"));
        }
        if has("dt") && !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if has("half_width") && !(self.half_width > 0.0) {
            return Err(invalid("half_width", "must be positive"));
        }
        if has("times") {
            if self.times.is_empty() || self.times.iter().any(|&t| !(t > 0.0)) {
                return Err(invalid("times", "need positive times"));
            }
            if self.times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("times", "must be increasing"));
            }
        }
        if has("noise") {
            self.noise.density().validate().map_err(|e| invalid("noise", e.to_string()))?;
            if !(self.noise.k_max > 0.0) {
                return Err(invalid("noise.k_max", "must be positive"));
            }
        }
        if has("graph_dt") && !(self.graph_dt > 0.0 && self.graph_dt.is_finite()) {
            return Err(invalid("graph_dt", "must be positive"));
        }
        if has("alpha") && !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", "must lie in (0, 1)"));
        }
        if has("tolerance") && !(self.tolerance > 0.0) {
            return Err(invalid("tolerance", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Ids to run, in order; absent means the whole catalog.
    pub experiments: Option<Vec<String>>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("reebflow-out"), seed: 20240601, experiments: None }
    }
}

/// A validated run: the ids to execute with their merged parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub experiments: Vec<(ExperimentInfo, ExperimentSpec)>,
}

/// Overlay `user` onto `base`, rejecting keys absent from `base`; nested
/// tables merge key by key except tagged unions (tables with a `kind`),
/// which are replaced whole.
fn merge(base: &mut toml::Table, user: &toml::Table, prefix: &str) -> Result<(), ConfigError> {
    for (k, v) in user {
        let path = format!("{prefix}{k}");
        let Some(slot) = base.get_mut(k) else {
            return Err(invalid(path, "unknown key for this experiment"));
        };
        match (slot, v) {
            (toml::Value::Table(b), toml::Value::Table(u)) if !b.contains_key("kind") && !u.contains_key("kind") => {
                merge(b, u, &format!("{path}."))?;
            }
            (slot, v) => *slot = v.clone(),
        }
    }
    Ok(())
}

fn field_key(msg: &str) -> Option<String> {
    // serde messages quote the offending field as `name`
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

/// Default parameters of `info` with `user` overrides applied.
pub fn experiment_spec(info: &ExperimentInfo, user: Option<&toml::Table>) -> Result<ExperimentSpec, ConfigError> {
    let mut table: toml::Table = info.defaults.parse().expect("catalog defaults parse");
    let keys: Vec<String> = table.keys().cloned().collect();
    let mut user = user.cloned().unwrap_or_default();
    let seed = match user.remove("seed") {
        None => None,
        Some(toml::Value::Integer(s)) if s >= 0 => Some(s as u64),
        Some(other) => {
            return Err(invalid(format!("{}.seed", info.id), format!("expected a non-negative integer, got {other}")))
        }
    };
    merge(&mut table, &user, &format!("{}.", info.id))?;
    let mut spec: ExperimentSpec = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        let key = field_key(&msg).unwrap_or_default();
        invalid(format!("{}.{key}", info.id), msg)
    })?;
    spec.seed = seed;
    spec.validate(&keys).map_err(|e| match e {
        ConfigError::Invalid { key, reason } => invalid(format!("{}.{key}", info.id), reason),
        other => other,
    })?;
    Ok(spec)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let run: RunSection = match root.remove("run") {
        Some(v) => v.try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            invalid(format!("run.{}", field_key(&msg).unwrap_or_default()), msg)
        })?,
        None => RunSection::default(),
    };
    for (k, v) in &root {
        if catalog::find(k).is_none() {
            return Err(invalid(k.clone(), "not an experiment id"));
        }
        if !v.is_table() {
            return Err(invalid(k.clone(), "expected a table"));
        }
    }
    let ids: Vec<String> = match &run.experiments {
        Some(list) => list.clone(),
        None => catalog::CATALOG.iter().map(|i| i.id.to_string()).collect(),
    };
    let mut seen = std::collections::BTreeSet::new();
    let mut experiments = vec![];
    for id in &ids {
        let info = catalog::find(id).ok_or_else(|| invalid("run.experiments", format!("unknown experiment `{id}`")))?;
        if !seen.insert(id.clone()) {
            return Err(invalid("run.experiments", format!("`{id}` listed twice")));
        }
        let spec = experiment_spec(info, root.get(id.as_str()).and_then(|v| v.as_table()))?;
        experiments.push((info.clone(), spec));
    }
    // sections for experiments not selected are still checked
    for (k, v) in &root {
        if !seen.contains(k) {
            experiment_spec(catalog::find(k).expect("checked above"), v.as_table())?;
        }
    }
    Ok(RunConfig { output_dir: run.output_dir, seed: run.seed, experiments })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_default_section_validates() {
        for info in catalog::CATALOG {
            let spec = experiment_spec(info, None).unwrap_or_else(|e| panic!("{}: {e}", info.id));
            assert_eq!(spec.seed, None);
        }
    }

    #[test]
    fn user_values_override_defaults() {
        let cfg = parse_config(
            "[run]\nseed = 7\nexperiments = [\"semigroup_strong\"]\n[semigroup_strong]\neps = [0.4, 0.2, 0.1]\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        let (info, spec) = &cfg.experiments[0];
        assert_eq!(info.id, "semigroup_strong");
        assert_eq!(spec.eps, vec![0.4, 0.2, 0.1]);
        assert_eq!(spec.seed, Some(3));
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("[semigroup_strong]\nhamiltonian = \"banana\"\n", "semigroup_strong.hamiltonian"),
            ("[semigroup_strong]\nwidget = 1\n", "semigroup_strong.widget"),
            ("[semigroup_strong]\neps = [0.1, 0.2, 0.05]\n", "semigroup_strong.eps"),
            ("[semigroup_strong]\ntau = 2.0\n", "semigroup_strong.tau"),
            ("[semigroup_strong]\npaths = \"many\"\n", "semigroup_strong.paths"),
            ("[period_oracle]\nbins = 4\n", "period_oracle.bins"),
            ("[run]\nexperiments = [\"nope\"]\n", "run.experiments"),
            ("[run]\ncolour = 1\n", "run.colour"),
            ("[nope]\nx = 1\n", "nope"),
        ];
        for (text, key) in cases {
            match parse_config(text) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(parse_config("[run\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn empty_experiment_list_is_valid() {
        let cfg = parse_config("[run]\nexperiments = []\n").unwrap();
        assert!(cfg.experiments.is_empty());
        let all = parse_config("").unwrap();
        assert_eq!(all.experiments.len(), catalog::CATALOG.len());
    }

    #[test]
    fn probe_functions_and_weights() {
        let f = HamiltonianField::quadratic();
        let u: ProbeFunction = toml::from_str("kind = \"cosine\"\nk = [1.0, 0.0]").unwrap();
        assert_eq!(u.eval(&f, [0.0, 5.0]), 1.0);
        assert!((ProbeFunction::EnergyExp { rate: 1.0 }.eval(&f, [1.0, 0.0]) - (-1.0f64).exp()).abs() < 1e-15);
        let w = TimeWeight::SineBump;
        assert!(w.eval(0.1, 0.1, 1.0).abs() < 1e-15 && (w.eval(0.55, 0.1, 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(TimeWeight::Constant { c: 2.0 }.eval(5.0, 0.1, 1.0), 0.0);
    }
}
