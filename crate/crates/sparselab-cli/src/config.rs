use std::path::Path;

use serde::Deserialize;
use sparselab::dyadic::CubeId;
use sparselab::operators::MultiIndexPair;
use sparselab::space::{SpaceDescriptor, SpaceKind};
use sparselab::verify::CheckSpec;
use sparselab::weights::{random_function, weight_preset, ExponentConfig};
use sparselab::{rng_for, GridFunction};

/// A preset name or inline values.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Values {
    Preset(String),
    Inline(Vec<f64>),
}

impl Values {
    /// Weight presets: `const`, `step`, `power:a`, `random:seed`.
    pub fn weight(&self, n: usize) -> Result<Vec<f64>, String> {
        match self {
            Values::Inline(v) => sized(v.clone(), n),
            Values::Preset(name) => weight_preset(name, n).map_err(|e| e.to_string()),
        }
    }

    /// Function presets add `zero`, `indicator:x` and `gaussian:seed` to the weight presets.
    pub fn function(&self, n: usize) -> Result<GridFunction, String> {
        let Values::Preset(name) = self else { return self.weight(n) };
        if name == "zero" {
            return Ok(vec![0.0; n]);
        }
        if let Some(x) = name.strip_prefix("indicator:") {
            let x: usize = x.parse().map_err(|_| format!("bad point in preset `{name}`"))?;
            if x >= n {
                return Err(format!("indicator point {x} outside 0..{n}"));
            }
            let mut v = vec![0.0; n];
            v[x] = 1.0;
            return Ok(v);
        }
        if let Some(seed) = name.strip_prefix("gaussian:") {
            let seed: u64 = seed.parse().map_err(|_| format!("bad seed in preset `{name}`"))?;
            return Ok(random_function(n, &mut rng_for(seed, 1)));
        }
        self.weight(n)
    }
}

fn sized(v: Vec<f64>, n: usize) -> Result<Vec<f64>, String> {
    if v.len() != n {
        return Err(format!("inline array has {} values, space has {n} points", v.len()));
    }
    Ok(v)
}

/// Single experiment file. Command-line flags override `seed`; everything else comes from here.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_space")]
    pub space: SpaceDescriptor,
    #[serde(default = "default_shifts")]
    pub shifts: usize,
    #[serde(default)]
    pub exponents: Option<ExponentConfig>,
    #[serde(default)]
    pub weights: Vec<Values>,
    #[serde(default)]
    pub u: Option<Values>,
    #[serde(default)]
    pub constants: Option<Vec<String>>,
    #[serde(default)]
    pub functions: Vec<Values>,
    #[serde(default)]
    pub symbols: Vec<Values>,
    #[serde(default)]
    pub k: Option<Vec<u32>>,
    #[serde(default)]
    pub t: Option<Vec<u32>>,
    #[serde(default)]
    pub tau: Option<Vec<usize>>,
    #[serde(default)]
    pub tau_ell: Option<Vec<usize>>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub sparse_cubes: Option<Vec<CubeId>>,
    #[serde(default)]
    pub dilation: Option<f64>,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default)]
    pub checks: Option<Vec<CheckSpec>>,
    #[serde(default)]
    pub bench_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_space() -> SpaceDescriptor {
    SpaceDescriptor { kind: SpaceKind::Grid, n: 16, masses: None, metric: None, a0: None }
}

fn default_shifts() -> usize {
    3
}

fn default_delta() -> f64 {
    0.5
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses")
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn functions(&self, n: usize) -> Result<Vec<GridFunction>, String> {
        self.functions.iter().map(|v| v.function(n)).collect()
    }

    /// Symbols default to zero when omitted.
    pub fn symbols(&self, n: usize, m: usize) -> Result<Vec<GridFunction>, String> {
        if self.symbols.is_empty() {
            return Ok(vec![vec![0.0; n]; m]);
        }
        if self.symbols.len() != m {
            return Err(format!("symbols: {} given, {m} functions", self.symbols.len()));
        }
        self.symbols.iter().map(|v| v.function(n)).collect()
    }

    /// Missing t defaults to 0⃗, τ to {i : t_i > 0}, τ_ℓ to {i : k_i > 0}.
    pub fn pair(&self, m: usize) -> Result<MultiIndexPair, String> {
        let k = self.k.clone().unwrap_or_else(|| vec![0; m]);
        let t = self.t.clone().unwrap_or_else(|| vec![0; m]);
        if k.len() != m || t.len() != m {
            return Err(format!("k and t need {m} entries"));
        }
        let tau = self.tau.clone().unwrap_or_else(|| (0..m).filter(|&i| t[i] > 0).collect());
        let tau_ell = self.tau_ell.clone().unwrap_or_else(|| (0..m).filter(|&i| k[i] > 0).collect());
        MultiIndexPair::new(k, t, tau, tau_ell).map_err(|e| e.to_string())
    }
}
