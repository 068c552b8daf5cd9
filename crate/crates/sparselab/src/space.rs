//! Finite quasi-metric measure spaces, closed balls and doubling constants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{rng_for, Error, Result};

/// Exhaustive triple scans for the quasi-triangle constant stop here.
pub const A0_SCAN_LIMIT: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub enum Metric {
    /// Points k/n on [0,1) with d(x,y) = |x-y|.
    Grid,
    /// Row-major n×n distance matrix.
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSpace {
    masses: Vec<f64>,
    metric: Metric,
    a0: f64,
    a0_declared: bool,
    total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
    pub members: Vec<usize>,
}

fn check_masses(masses: &[f64]) -> Result<()> {
    for (index, &value) in masses.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::BadMass { index, value });
        }
    }
    Ok(())
}

/// Canonical grid of `n = 2^L` points k/n with the given point masses.
pub fn build_grid_space(n: usize, masses: Vec<f64>) -> Result<DiscreteSpace> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    if masses.len() != n {
        return Err(Error::Input(format!("expected {n} masses, got {}", masses.len())));
    }
    check_masses(&masses)?;
    let total = masses.iter().sum();
    Ok(DiscreteSpace { masses, metric: Metric::Grid, a0: 1.0, a0_declared: false, total })
}

/// Uniform grid with unit masses.
pub fn uniform_grid(n: usize) -> Result<DiscreteSpace> {
    build_grid_space(n, vec![1.0; n])
}

fn check_metric(n: usize, d: &[f64]) -> Result<()> {
    if d.len() != n * n {
        return Err(Error::BadMetric(format!("expected {}x{} matrix", n, n)));
    }
    for x in 0..n {
        for y in 0..n {
            let v = d[x * n + y];
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::BadMetric(format!("d({x},{y}) = {v}")));
            }
            if (v == 0.0) != (x == y) {
                return Err(Error::BadMetric(format!("d({x},{y}) = {v} violates d=0 iff x=y")));
            }
            if v != d[y * n + x] {
                return Err(Error::BadMetric(format!("asymmetric at ({x},{y})")));
            }
        }
    }
    Ok(())
}

/// Minimal A₀ with d(x,y) ≤ A₀(d(x,z)+d(z,y)), by exhaustive triple scan.
pub fn quasi_triangle_constant(n: usize, d: &[f64]) -> f64 {
    let mut a0: f64 = 1.0;
    for x in 0..n {
        for y in (x + 1)..n {
            let dxy = d[x * n + y];
            for z in 0..n {
                let s = d[x * n + z] + d[z * n + y];
                a0 = a0.max(dxy / s);
            }
        }
    }
    a0
}

/// Space with an explicit metric; A₀ is computed exhaustively (n ≤ 512).
pub fn build_explicit_space(masses: Vec<f64>, metric: Vec<Vec<f64>>) -> Result<DiscreteSpace> {
    let n = masses.len();
    check_masses(&masses)?;
    if metric.len() != n || metric.iter().any(|r| r.len() != n) {
        return Err(Error::BadMetric(format!("expected {}x{} matrix", n, n)));
    }
    let d: Vec<f64> = metric.into_iter().flatten().collect();
    check_metric(n, &d)?;
    if n > A0_SCAN_LIMIT {
        return Err(Error::BadMetric(format!(
            "n = {n} exceeds the exhaustive scan limit; declare a0 instead"
        )));
    }
    let a0 = quasi_triangle_constant(n, &d);
    let total = masses.iter().sum();
    Ok(DiscreteSpace { masses, metric: Metric::Explicit(d), a0, a0_declared: false, total })
}

/// Space with an explicit metric and a declared A₀, spot-checked on sampled triples.
pub fn build_explicit_space_declared(
    masses: Vec<f64>,
    metric: Vec<Vec<f64>>,
    a0: f64,
    samples: usize,
    seed: u64,
) -> Result<DiscreteSpace> {
    let n = masses.len();
    check_masses(&masses)?;
    if metric.len() != n || metric.iter().any(|r| r.len() != n) {
        return Err(Error::BadMetric(format!("expected {}x{} matrix", n, n)));
    }
    let d: Vec<f64> = metric.into_iter().flatten().collect();
    check_metric(n, &d)?;
    if !(a0 >= 1.0) {
        return Err(Error::BadMetric(format!("declared a0 = {a0} < 1")));
    }
    let mut rng = rng_for(seed, 0);
    for _ in 0..samples {
        let (x, y, z) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
        if d[x * n + y] > a0 * (d[x * n + z] + d[z * n + y]) {
            return Err(Error::BadMetric(format!(
                "declared a0 = {a0} violated at triple ({x},{y},{z})"
            )));
        }
    }
    let total = masses.iter().sum();
    Ok(DiscreteSpace { masses, metric: Metric::Explicit(d), a0, a0_declared: true, total })
}

impl DiscreteSpace {
    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn mass(&self, x: usize) -> f64 {
        self.masses[x]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn a0_declared(&self) -> bool {
        self.a0_declared
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.metric, Metric::Grid)
    }

    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        match &self.metric {
            Metric::Grid => (x as f64 - y as f64).abs() / self.n() as f64,
            Metric::Explicit(d) => d[x * self.n() + y],
        }
    }

    /// μ of a point set.
    pub fn measure(&self, set: &[usize]) -> f64 {
        set.iter().map(|&x| self.masses[x]).sum()
    }

    /// Smallest positive distance.
    pub fn min_distance(&self) -> f64 {
        let n = self.n();
        let mut m = f64::INFINITY;
        for x in 0..n {
            for y in (x + 1)..n {
                m = m.min(self.dist(x, y));
            }
        }
        m
    }

    pub fn diameter(&self) -> f64 {
        let n = self.n();
        let mut m: f64 = 0.0;
        for x in 0..n {
            for y in (x + 1)..n {
                m = m.max(self.dist(x, y));
            }
        }
        m
    }

    /// Distinct distances from `x`, ascending, including 0.
    pub fn radii_from(&self, x: usize) -> Vec<f64> {
        let mut r: Vec<f64> = (0..self.n()).map(|y| self.dist(x, y)).collect();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }

    pub fn descriptor(&self) -> SpaceDescriptor {
        SpaceDescriptor {
            kind: if self.is_grid() { SpaceKind::Grid } else { SpaceKind::Explicit },
            n: self.n(),
            masses: Some(self.masses.iter().map(|m| MassValue::Text(format!("{m}"))).collect()),
            metric: match &self.metric {
                Metric::Grid => None,
                Metric::Explicit(d) => Some(d.chunks(self.n()).map(|r| r.to_vec()).collect()),
            },
            a0: if self.a0_declared { Some(self.a0) } else { None },
        }
    }
}

/// Closed ball B̄(center, radius) = {y : d(center,y) ≤ radius}.
pub fn ball(space: &DiscreteSpace, center: usize, radius: f64) -> Ball {
    let members = (0..space.n()).filter(|&y| space.dist(center, y) <= radius).collect();
    Ball { center, radius, members }
}

/// Smallest C with μ(B̄(x,2r)) ≤ C μ(B̄(x,r)) for every x and every r ≥ 0.
///
/// Both sides are step functions of r, so the supremum is attained on
/// r ∈ {0} ∪ {d(x,y)} ∪ {d(x,y)/2}.
pub fn doubling_constant(space: &DiscreteSpace) -> f64 {
    let n = space.n();
    let mut best: f64 = 1.0;
    for x in 0..n {
        let mut order: Vec<(f64, f64)> = (0..n).map(|y| (space.dist(x, y), space.mass(y))).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &(_, m) in &order {
            acc += m;
            prefix.push(acc);
        }
        let mass_within = |r: f64| {
            let k = order.partition_point(|&(d, _)| d <= r);
            prefix[k - 1]
        };
        let mut candidates = vec![0.0];
        for &(d, _) in &order {
            candidates.push(d);
            candidates.push(d / 2.0);
        }
        for r in candidates {
            best = best.max(mass_within(2.0 * r) / mass_within(r));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Grid,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MassValue {
    Text(String),
    Number(f64),
}

impl MassValue {
    fn value(&self) -> Result<f64> {
        match self {
            MassValue::Number(v) => Ok(*v),
            MassValue::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("mass `{s}` is not a decimal number"))),
        }
    }
}

/// JSON space descriptor. Masses are written as shortest round-trip decimal strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDescriptor {
    pub kind: SpaceKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<MassValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
}

impl SpaceDescriptor {
    pub fn build(&self) -> Result<DiscreteSpace> {
        let masses = match &self.masses {
            None => vec![1.0; self.n],
            Some(ms) => ms.iter().map(MassValue::value).collect::<Result<Vec<_>>>()?,
        };
        if masses.len() != self.n {
            return Err(Error::Input(format!("n = {} but {} masses given", self.n, masses.len())));
        }
        match self.kind {
            SpaceKind::Grid => {
                if self.metric.is_some() {
                    return Err(Error::Input("grid spaces take no metric".into()));
                }
                build_grid_space(self.n, masses)
            }
            SpaceKind::Explicit => {
                let metric = self
                    .metric
                    .clone()
                    .ok_or_else(|| Error::Input("explicit space requires `metric`".into()))?;
                match self.a0 {
                    Some(a0) => build_explicit_space_declared(masses, metric, a0, 4096, 0),
                    None => build_explicit_space(masses, metric),
                }
            }
        }
    }
}
