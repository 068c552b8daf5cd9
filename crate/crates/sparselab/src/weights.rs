//! Exponents, Young functions, Orlicz averages, weight characteristics and BMO norms.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{Cube, CubeId, DyadicLattice};
use crate::space::DiscreteSpace;
use crate::util::pairwise_sum;
use crate::{conj, rng_for, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    pub m: usize,
    pub p: Vec<f64>,
    pub q: f64,
    pub eta: f64,
    #[serde(default = "one")]
    pub p0: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default)]
    pub q0: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl ExponentConfig {
    /// η is derived from p⃗ and q.
    pub fn new(p: Vec<f64>, q: f64) -> Self {
        let eta = p.iter().map(|pi| 1.0 / pi).sum::<f64>() - 1.0 / q;
        ExponentConfig { m: p.len(), p, q, eta, p0: 1.0, gamma: 1.0, r: 1.0, q0: None }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn with_p0(mut self, p0: f64) -> Self {
        self.p0 = p0;
        self
    }

    /// Endpoint exponents p⃗ = 1⃗, q = q₀ = 1/(m − η).
    pub fn endpoint(m: usize, eta: f64) -> Self {
        let q0 = 1.0 / (m as f64 - eta);
        ExponentConfig { m, p: vec![1.0; m], q: q0, eta, p0: 1.0, gamma: 1.0, r: 1.0, q0: Some(q0) }
    }

    fn check_common(&self, p_min_open: bool) -> Result<()> {
        if self.m == 0 || self.p.len() != self.m {
            return Err(Error::Exponents(format!("m = {} with {} exponents", self.m, self.p.len())));
        }
        for &pi in &self.p {
            let ok = if p_min_open { pi > 1.0 } else { pi >= 1.0 };
            if !(ok && pi.is_finite()) {
                return Err(Error::Exponents(format!("p_i = {pi} out of range")));
            }
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::Exponents(format!("q = {} must be positive", self.q)));
        }
        let derived = self.p.iter().map(|pi| 1.0 / pi).sum::<f64>() - 1.0 / self.q;
        if (derived - self.eta).abs() > 1e-12 {
            return Err(Error::Exponents(format!("eta = {} but sum 1/p_i - 1/q = {derived}", self.eta)));
        }
        if !(self.eta >= 0.0 && self.eta < self.m as f64) {
            return Err(Error::Exponents(format!("eta = {} outside [0, m)", self.eta)));
        }
        if !(self.p0 >= 1.0 && self.gamma > 0.0 && self.r >= 1.0) {
            return Err(Error::Exponents("need p0 >= 1, gamma > 0, r >= 1".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_common(true)
    }

    pub fn validate_endpoint(&self) -> Result<()> {
        self.check_common(false)?;
        let want = 1.0 / (self.m as f64 - self.eta);
        match self.q0 {
            Some(q0) if (q0 - want).abs() <= 1e-12 => Ok(()),
            other => Err(Error::Exponents(format!("q0 = {other:?}, endpoint requires {want}"))),
        }
    }

    pub fn p_prime(&self, i: usize) -> f64 {
        conj(self.p[i])
    }

    /// θ = min{q, γ}.
    pub fn theta(&self) -> f64 {
        self.q.min(self.gamma)
    }

    /// β = max{1/θ, p₁′/q, …, p_m′/q}.
    pub fn beta(&self) -> f64 {
        (0..self.m).map(|i| self.p_prime(i) / self.q).fold(1.0 / self.theta(), f64::max)
    }

    /// 1/q + Σ 1/p_i′, which equals m − η.
    pub fn holder_sum(&self) -> f64 {
        1.0 / self.q + (0..self.m).map(|i| 1.0 / self.p_prime(i)).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YoungFunction {
    Identity,
    /// t(1 + log⁺t)^r
    LlogL { r: f64 },
    /// e^{t^s} − 1
    ExpL { s: f64 },
    /// t^r(1 + (log⁺t)^{rℓ})
    PhiRL { r: f64, ell: f64 },
    /// Complementary function of e^t − 1: s log s − s + 1 for s ≥ 1, 0 below.
    ExpConjugate,
}

impl YoungFunction {
    pub fn eval(&self, t: f64) -> f64 {
        let logp = if t > 1.0 { t.ln() } else { 0.0 };
        match *self {
            YoungFunction::Identity => t,
            YoungFunction::LlogL { r } => t * (1.0 + logp).powf(r),
            YoungFunction::ExpL { s } => t.powf(s).exp_m1(),
            YoungFunction::PhiRL { r, ell } => t.powf(r) * (1.0 + logp.powf(r * ell)),
            YoungFunction::ExpConjugate => {
                if t >= 1.0 {
                    t * t.ln() - t + 1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// (μ(Q)⁻¹ Σ_Q |f|^power μ)^{1/power}.
pub fn avg(space: &DiscreteSpace, f: &[f64], q: &Cube, power: f64) -> f64 {
    avg_on(space, f, &q.members, q.mass, power)
}

pub fn avg_on(space: &DiscreteSpace, f: &[f64], members: &[usize], mass: f64, power: f64) -> f64 {
    if power == 1.0 {
        let terms: Vec<f64> = members.iter().map(|&x| f[x].abs() * space.mass(x)).collect();
        return pairwise_sum(&terms) / mass;
    }
    let terms: Vec<f64> = members.iter().map(|&x| f[x].abs().powf(power) * space.mass(x)).collect();
    (pairwise_sum(&terms) / mass).powf(1.0 / power)
}

/// Signed mean b_Q = μ(Q)⁻¹ Σ_Q b μ.
pub fn mean(space: &DiscreteSpace, b: &[f64], q: &Cube) -> f64 {
    let terms: Vec<f64> = q.members.iter().map(|&x| b[x] * space.mass(x)).collect();
    pairwise_sum(&terms) / q.mass
}

/// σ(Q)⁻¹ Σ_Q f σ μ.
pub fn avg_w(space: &DiscreteSpace, f: &[f64], q: &Cube, sigma: &[f64]) -> f64 {
    let num: Vec<f64> = q.members.iter().map(|&x| f[x] * sigma[x] * space.mass(x)).collect();
    pairwise_sum(&num) / weighted_measure(space, sigma, &q.members)
}

/// ν(E) = Σ_E ν μ.
pub fn weighted_measure(space: &DiscreteSpace, nu: &[f64], set: &[usize]) -> f64 {
    let terms: Vec<f64> = set.iter().map(|&x| nu[x] * space.mass(x)).collect();
    pairwise_sum(&terms)
}

/// Luxemburg norm inf{λ > 0 : μ(E)⁻¹ Σ_E Φ(|f|/λ) μ ≤ 1} to relative tolerance 1e−10.
pub fn orlicz_norm(space: &DiscreteSpace, f: &[f64], q: &Cube, phi: YoungFunction) -> Result<f64> {
    orlicz_norm_on(space, f, &q.members, q.mass, phi)
}

pub fn orlicz_norm_on(space: &DiscreteSpace, f: &[f64], members: &[usize], mass: f64, phi: YoungFunction) -> Result<f64> {
    let top = members.iter().map(|&x| f[x].abs()).fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(0.0);
    }
    let level = |lambda: f64| -> f64 {
        let terms: Vec<f64> = members.iter().map(|&x| phi.eval(f[x].abs() / lambda) * space.mass(x)).collect();
        pairwise_sum(&terms) / mass
    };
    let mut hi = top;
    let mut steps = 0;
    while level(hi) > 1.0 {
        hi *= 2.0;
        steps += 1;
        if steps > 2000 {
            return Err(Error::Internal("Orlicz bracket: upper end not found".into()));
        }
    }
    let mut lo = hi;
    steps = 0;
    while level(lo) <= 1.0 {
        lo *= 0.5;
        steps += 1;
        if steps > 2000 {
            return Err(Error::Internal("Orlicz bracket: lower end not found".into()));
        }
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if level(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// σ = ω^{1−p′}.
pub fn dual_weight(omega: &[f64], p: f64) -> Vec<f64> {
    let e = 1.0 - conj(p);
    omega.iter().map(|w| w.powf(e)).collect()
}

pub fn check_weight(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Input(format!("weight has {} values, space has {n} points", w.len())));
    }
    if let Some(i) = w.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Input(format!("weight value {} at point {i} is not positive and finite", w[i])));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// [ω]_{A_p}, p = p₁.
    Ap,
    /// sup ω(Q)⁻¹ Σ_Q M_D(ωχ_Q) μ.
    AInfFujii,
    /// sup ⟨u⟩_Q ∏⟨ω_i^{1−p_i′}⟩_Q^{q/p_i′}.
    ApqStar,
    /// sup μ(Q)^{η−m} ‖uχ_Q‖_{L^q} ∏‖ω_i⁻¹χ_Q‖_{L^{p_i′}}.
    Apq,
    WInf,
    HInf,
    /// Per-index W∞ for σ⃗ with u; 1 when q ≤ γ.
    WInfI(usize),
    /// Per-index H∞ for σ⃗ with u; 1 when q ≤ γ.
    HInfI(usize),
    /// sup ⟨∏ω_i^{q₀}⟩_Q ∏(inf_Q ω_i)^{−q₀}.
    ApqStarEndpoint,
}

impl WeightKind {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let indexed = |prefix: &str| -> Option<usize> { s.strip_prefix(prefix).and_then(|r| r.parse().ok()) };
        Ok(match s {
            "ap" | "a_p" => WeightKind::Ap,
            "a_inf" | "a_inf_fujii" => WeightKind::AInfFujii,
            "a_pq_star" => WeightKind::ApqStar,
            "a_pq" => WeightKind::Apq,
            "w_inf" => WeightKind::WInf,
            "h_inf" => WeightKind::HInf,
            "a_pq_star_endpoint" => WeightKind::ApqStarEndpoint,
            _ => {
                if let Some(i) = indexed("w_inf_") {
                    WeightKind::WInfI(i)
                } else if let Some(i) = indexed("h_inf_") {
                    WeightKind::HInfI(i)
                } else {
                    return Err(Error::Input(format!("unknown weight constant kind `{s}`")));
                }
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            WeightKind::Ap => "a_p".into(),
            WeightKind::AInfFujii => "a_inf_fujii".into(),
            WeightKind::ApqStar => "a_pq_star".into(),
            WeightKind::Apq => "a_pq".into(),
            WeightKind::WInf => "w_inf".into(),
            WeightKind::HInf => "h_inf".into(),
            WeightKind::WInfI(i) => format!("w_inf_{i}"),
            WeightKind::HInfI(i) => format!("h_inf_{i}"),
            WeightKind::ApqStarEndpoint => "a_pq_star_endpoint".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstantValue {
    pub value: f64,
    pub argmax: CubeId,
}

/// Dyadic maximal function of hχ_Q on the points of Q (same order as `Q.members`).
pub fn local_dyadic_maximal(lattice: &DyadicLattice, h: &[f64], q: CubeId) -> Vec<f64> {
    let space = lattice.space();
    let root = lattice.cube(q);
    let mut out = vec![0.0f64; space.n()];
    for r in lattice.subtree(q) {
        let cube = lattice.cube(r);
        let a = avg(space, h, cube, 1.0);
        for &x in &cube.members {
            out[x] = out[x].max(a);
        }
    }
    root.members.iter().map(|&x| out[x]).collect()
}

fn geo_mean_inv(space: &DiscreteSpace, w: &[f64], q: &Cube) -> f64 {
    // exp⟨log w⁻¹⟩_Q
    let terms: Vec<f64> = q.members.iter().map(|&x| -w[x].ln() * space.mass(x)).collect();
    (pairwise_sum(&terms) / q.mass).exp()
}

fn sup_over_cubes(lattice: &DyadicLattice, f: impl Fn(CubeId) -> f64 + Sync) -> ConstantValue {
    (0..lattice.len())
        .into_par_iter()
        .map(|id| ConstantValue { value: f(id), argmax: id })
        .reduce(
            || ConstantValue { value: f64::NEG_INFINITY, argmax: usize::MAX },
            |a, b| {
                if b.value > a.value || (b.value == a.value && b.argmax < a.argmax) {
                    b
                } else {
                    a
                }
            },
        )
}

/// Exact supremum over every cube of `lattice`.
///
/// `weights` holds ω⃗ for every kind except the per-index kinds, which take σ⃗.
pub fn weight_constant(
    kind: WeightKind,
    lattice: &DyadicLattice,
    u: Option<&[f64]>,
    weights: &[Vec<f64>],
    cfg: &ExponentConfig,
) -> Result<ConstantValue> {
    let space = lattice.space();
    let n = space.n();
    for w in weights {
        check_weight(w, n)?;
    }
    if let Some(u) = u {
        check_weight(u, n)?;
    }
    let need_u = || u.ok_or_else(|| Error::Input(format!("{} requires u", kind.name())));
    let need_m = |m: usize| {
        if weights.len() < m {
            Err(Error::Input(format!("{} requires {m} weights, got {}", kind.name(), weights.len())))
        } else {
            Ok(())
        }
    };
    let m = cfg.m;
    Ok(match kind {
        WeightKind::Ap => {
            need_m(1)?;
            let p = cfg.p[0];
            let w = &weights[0];
            let sigma = dual_weight(w, p);
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                avg(space, w, q, 1.0) * avg(space, &sigma, q, 1.0).powf(p - 1.0)
            })
        }
        WeightKind::AInfFujii => {
            need_m(1)?;
            let w = &weights[0];
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                let mx = local_dyadic_maximal(lattice, w, id);
                let terms: Vec<f64> = q.members.iter().zip(&mx).map(|(&x, v)| v * space.mass(x)).collect();
                pairwise_sum(&terms) / weighted_measure(space, w, &q.members)
            })
        }
        WeightKind::ApqStar => {
            need_m(m)?;
            let u = need_u()?;
            let sig: Vec<Vec<f64>> = (0..m).map(|i| dual_weight(&weights[i], cfg.p[i])).collect();
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                (0..m).fold(avg(space, u, q, 1.0), |acc, i| {
                    acc * avg(space, &sig[i], q, 1.0).powf(cfg.q / cfg.p_prime(i))
                })
            })
        }
        WeightKind::Apq => {
            need_m(m)?;
            let u = need_u()?;
            let inv: Vec<Vec<f64>> = weights.iter().take(m).map(|w| w.iter().map(|v| 1.0 / v).collect()).collect();
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                let lq = avg(space, u, q, cfg.q) * q.mass.powf(1.0 / cfg.q);
                (0..m).fold(q.mass.powf(cfg.eta - m as f64) * lq, |acc, i| {
                    let pp = cfg.p_prime(i);
                    acc * avg(space, &inv[i], q, pp) * q.mass.powf(1.0 / pp)
                })
            })
        }
        WeightKind::WInf => {
            need_m(m)?;
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                let mx: Vec<Vec<f64>> = (0..m).map(|i| local_dyadic_maximal(lattice, &weights[i], id)).collect();
                let num: Vec<f64> = (0..q.members.len())
                    .map(|j| {
                        (0..m).map(|i| mx[i][j].powf(cfg.q / cfg.p[i])).product::<f64>() * space.mass(q.members[j])
                    })
                    .collect();
                let den: Vec<f64> = q
                    .members
                    .iter()
                    .map(|&x| (0..m).map(|i| weights[i][x].powf(cfg.q / cfg.p[i])).product::<f64>() * space.mass(x))
                    .collect();
                pairwise_sum(&num) / pairwise_sum(&den)
            })
        }
        WeightKind::HInf => {
            need_m(m)?;
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                (0..m)
                    .map(|i| (avg(space, &weights[i], q, 1.0) * geo_mean_inv(space, &weights[i], q)).powf(cfg.q / cfg.p[i]))
                    .product()
            })
        }
        WeightKind::WInfI(i) => {
            need_m(m)?;
            if i >= m {
                return Err(Error::Input(format!("index {i} out of range for m = {m}")));
            }
            if cfg.q <= cfg.gamma {
                return Ok(ConstantValue { value: 1.0, argmax: lattice.top() });
            }
            let u = need_u()?;
            let t = cfg.q / cfg.gamma;
            let pi_g = conj(cfg.p[i] / cfg.gamma);
            let eu = pi_g / conj(t);
            let ej: Vec<f64> = (0..m).map(|j| pi_g / (cfg.p[j] / cfg.gamma)).collect();
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                let mu = local_dyadic_maximal(lattice, u, id);
                let ms: Vec<Vec<f64>> =
                    (0..m).map(|j| if j == i { Vec::new() } else { local_dyadic_maximal(lattice, &weights[j], id) }).collect();
                let mut num = Vec::with_capacity(q.members.len());
                let mut den = Vec::with_capacity(q.members.len());
                for (k, &x) in q.members.iter().enumerate() {
                    let mut a = mu[k].powf(eu);
                    let mut b = u[x].powf(eu);
                    for j in (0..m).filter(|&j| j != i) {
                        a *= ms[j][k].powf(ej[j]);
                        b *= weights[j][x].powf(ej[j]);
                    }
                    num.push(a * space.mass(x));
                    den.push(b * space.mass(x));
                }
                pairwise_sum(&num) / pairwise_sum(&den)
            })
        }
        WeightKind::HInfI(i) => {
            need_m(m)?;
            if i >= m {
                return Err(Error::Input(format!("index {i} out of range for m = {m}")));
            }
            if cfg.q <= cfg.gamma {
                return Ok(ConstantValue { value: 1.0, argmax: lattice.top() });
            }
            let u = need_u()?;
            let ppi = cfg.p_prime(i);
            let eu = ppi * (1.0 / cfg.gamma - 1.0 / cfg.q);
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                let mut v = (avg(space, u, q, 1.0) * geo_mean_inv(space, u, q)).powf(eu);
                for j in (0..m).filter(|&j| j != i) {
                    v *= (avg(space, &weights[j], q, 1.0) * geo_mean_inv(space, &weights[j], q)).powf(ppi / cfg.p[j]);
                }
                v
            })
        }
        WeightKind::ApqStarEndpoint => {
            need_m(m)?;
            let q0 = cfg.q0.unwrap_or(1.0 / (m as f64 - cfg.eta));
            let prod: Vec<f64> = (0..n).map(|x| (0..m).map(|i| weights[i][x].powf(q0)).product()).collect();
            sup_over_cubes(lattice, |id| {
                let q = lattice.cube(id);
                (0..m).fold(avg(space, &prod, q, 1.0), |acc, i| {
                    let lo = q.members.iter().map(|&x| weights[i][x]).fold(f64::INFINITY, f64::min);
                    acc * lo.powf(-q0)
                })
            })
        }
    })
}

/// sup_Q μ(Q)⁻¹ Σ_Q |b − b_Q| μ.
pub fn bmo_norm(b: &[f64], lattice: &DyadicLattice) -> f64 {
    let space = lattice.space();
    sup_over_cubes(lattice, |id| oscillation(space, b, lattice.cube(id)) / lattice.cube(id).mass).value
}

/// sup_Q ν(Q)⁻¹ Σ_Q |b − b_Q| μ.
pub fn weighted_bmo_norm(b: &[f64], nu: &[f64], lattice: &DyadicLattice) -> f64 {
    let space = lattice.space();
    sup_over_cubes(lattice, |id| {
        let q = lattice.cube(id);
        oscillation(space, b, q) / weighted_measure(space, nu, &q.members)
    })
    .value
}

/// Σ_Q |b − b_Q| μ.
pub fn oscillation(space: &DiscreteSpace, b: &[f64], q: &Cube) -> f64 {
    let bq = mean(space, b, q);
    let terms: Vec<f64> = q.members.iter().map(|&x| (b[x] - bq).abs() * space.mass(x)).collect();
    pairwise_sum(&terms)
}

/// exp(uniform[−a, a]) per point.
pub fn random_weight<R: Rng>(n: usize, a: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-a..=a).exp()).collect()
}

/// |N(0,1)| per point.
pub fn random_function<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| normal.sample(rng).abs()).collect()
}

/// Named presets: `const`, `step`, `power:a`, `random:seed`.
pub fn weight_preset(name: &str, n: usize) -> Result<Vec<f64>> {
    let name = name.trim();
    if name == "const" {
        return Ok(vec![1.0; n]);
    }
    if name == "step" {
        return Ok((0..n).map(|x| if 2 * x < n { 1.0 } else { 2.0 }).collect());
    }
    if let Some(a) = name.strip_prefix("power:") {
        let a: f64 = a.parse().map_err(|_| Error::Input(format!("bad exponent in preset `{name}`")))?;
        return Ok((0..n).map(|x| ((x as f64 + 0.5) / n as f64).powf(a)).collect());
    }
    if let Some(seed) = name.strip_prefix("random:") {
        let seed: u64 = seed.parse().map_err(|_| Error::Input(format!("bad seed in preset `{name}`")))?;
        return Ok(random_weight(n, 1.0, &mut rng_for(seed, 0)));
    }
    Err(Error::Input(format!("unknown weight preset `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_standard_lattice;
    use crate::space::{build_grid_space, uniform_grid};
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn lattice(n: usize) -> DyadicLattice {
        build_standard_lattice(Arc::new(uniform_grid(n).unwrap())).unwrap()
    }

    #[test]
    fn averages() {
        let l = lattice(2);
        let top = l.cube(l.top());
        let s = l.space();
        assert!((avg(s, &[4.0, 4.0], top, 3.0) - 4.0).abs() < 1e-14);
        assert_eq!(avg(s, &[1.0, 3.0], top, 1.0), 2.0);
        assert!((avg(s, &[1.0, 3.0], top, 2.0) - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(avg_w(s, &[1.0, 3.0], top, &[1.0, 3.0]), 2.5);
    }

    #[test]
    fn exponent_config() {
        let c = ExponentConfig::new(vec![2.0, 2.0], 2.0);
        assert_eq!(c.eta, 0.5);
        c.validate().unwrap();
        assert!((c.holder_sum() - (2.0 - c.eta)).abs() < 1e-12);
        assert_eq!(c.theta(), 1.0);
        assert_eq!(c.beta(), 1.0);
        let bad = ExponentConfig { eta: 0.3, ..c.clone() };
        assert!(bad.validate().is_err());
        let e = ExponentConfig::endpoint(2, 0.5);
        e.validate_endpoint().unwrap();
        assert!(e.validate().is_err());
        assert!(serde_json::from_str::<ExponentConfig>(r#"{"m":1,"p":[2],"q":2,"eta":0,"extra":1}"#).is_err());
    }

    /// Oracle: scan λ on a geometric grid, then refine linearly.
    fn grid_search_norm(s: &DiscreteSpace, f: &[f64], q: &Cube, phi: YoungFunction) -> f64 {
        let level = |l: f64| q.members.iter().map(|&x| phi.eval(f[x].abs() / l) * s.mass(x)).sum::<f64>() / q.mass;
        let mut lam = 1e-6;
        while level(lam) > 1.0 {
            lam *= 1.01;
        }
        let (mut a, b) = (lam / 1.01, lam);
        let step = (b - a) / 1e6;
        while level(a) > 1.0 {
            a += step;
        }
        a
    }

    #[test]
    fn orlicz_examples() {
        let l = lattice(4);
        let s = l.space();
        let top = l.cube(l.top());
        let f = [1.0, 2.0, 4.0, 8.0];
        let id = orlicz_norm(s, &f, top, YoungFunction::Identity).unwrap();
        assert!((id - avg(s, &f, top, 1.0)).abs() <= 1e-9 * id);
        for phi in [YoungFunction::Identity, YoungFunction::LlogL { r: 2.0 }, YoungFunction::PhiRL { r: 2.0, ell: 1.0 }] {
            let c = orlicz_norm(s, &[3.0; 4], top, phi).unwrap();
            assert!((c - 3.0).abs() <= 1e-9);
        }
        let v = orlicz_norm(s, &f, top, YoungFunction::LlogL { r: 1.0 }).unwrap();
        let oracle = grid_search_norm(s, &f, top, YoungFunction::LlogL { r: 1.0 });
        assert!((v - oracle).abs() <= 1e-8 * v.max(1.0), "{v} vs {oracle}");
        assert_eq!(orlicz_norm(s, &[0.0; 4], top, YoungFunction::LlogL { r: 1.0 }).unwrap(), 0.0);
    }

    #[test]
    fn young_functions() {
        let fs = [
            YoungFunction::Identity,
            YoungFunction::LlogL { r: 1.5 },
            YoungFunction::ExpL { s: 0.5 },
            YoungFunction::PhiRL { r: 2.0, ell: 1.0 },
            YoungFunction::ExpConjugate,
        ];
        for phi in fs {
            assert_eq!(phi.eval(0.0), 0.0);
            let ts: Vec<f64> = (0..2000).map(|k| k as f64 * 0.01).collect();
            for w in ts.windows(3) {
                assert!(phi.eval(w[0]) <= phi.eval(w[1]));
                // midpoint convexity, skipping the t^{1/2} exponential which is only eventually convex
                if !matches!(phi, YoungFunction::ExpL { .. }) {
                    assert!(phi.eval(w[1]) <= 0.5 * (phi.eval(w[0]) + phi.eval(w[2])) + 1e-12);
                }
            }
        }
        assert_eq!(YoungFunction::LlogL { r: 3.0 }.eval(1.0), 1.0);
    }

    #[test]
    fn dual_weights() {
        assert_eq!(dual_weight(&[1.0; 3], 3.0), vec![1.0; 3]);
        assert_eq!(dual_weight(&[2.0, 4.0], 2.0), vec![0.5, 0.25]);
        let s = dual_weight(&[2.0], 3.0)[0];
        assert!((s - 2f64.powf(-0.5)).abs() < 1e-15);
        // σ^{1−p} = ω for σ = ω^{1−p′}
        let w = [0.3, 1.7, 5.0];
        let back = dual_weight(&dual_weight(&w, 3.0), conj(3.0));
        for (a, b) in back.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_weights_give_one() {
        let l = lattice(8);
        let ones = vec![1.0; 8];
        let cfg = ExponentConfig::new(vec![2.0, 3.0], 2.0).with_gamma(0.5);
        for kind in [
            WeightKind::Ap,
            WeightKind::AInfFujii,
            WeightKind::ApqStar,
            WeightKind::Apq,
            WeightKind::WInf,
            WeightKind::HInf,
            WeightKind::WInfI(0),
            WeightKind::HInfI(1),
        ] {
            let c = weight_constant(kind, &l, Some(&ones), &[ones.clone(), ones.clone()], &cfg).unwrap();
            if kind == WeightKind::Apq {
                // μ(Q)^{η−m} ‖χ_Q‖_q ∏‖χ_Q‖_{p_i′} = μ(Q)^0
                assert!((c.value - 1.0).abs() < 1e-12, "{kind:?}");
            } else {
                assert!((c.value - 1.0).abs() < 1e-12, "{kind:?} {}", c.value);
            }
        }
        let e = ExponentConfig::endpoint(2, 0.5);
        let c = weight_constant(WeightKind::ApqStarEndpoint, &l, None, &[ones.clone(), ones], &e).unwrap();
        assert_eq!(c.value, 1.0);
    }

    #[test]
    fn a2_step_weight() {
        let l = lattice(8);
        let w = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        let cfg = ExponentConfig::new(vec![2.0], 2.0);
        let c = weight_constant(WeightKind::Ap, &l, None, &[w.clone()], &cfg).unwrap();
        // Oracle: whole-space cube gives (3/2)(3/4) = 9/8; every other cube is constant.
        let mut best: f64 = 0.0;
        for q in l.cubes() {
            let a: f64 = q.members.iter().map(|&x| w[x]).sum::<f64>() / q.members.len() as f64;
            let b: f64 = q.members.iter().map(|&x| 1.0 / w[x]).sum::<f64>() / q.members.len() as f64;
            best = best.max(a * b);
        }
        assert_eq!(c.value, best);
        assert_eq!(c.value, 9.0 / 8.0);
        assert_eq!(c.argmax, l.top());
    }

    #[test]
    fn bmo_examples() {
        let l = lattice(2);
        assert_eq!(bmo_norm(&[3.0, 3.0], &l), 0.0);
        let one = build_standard_lattice(Arc::new(uniform_grid(2).unwrap())).unwrap();
        assert_eq!(oscillation(one.space(), &[1.0, 0.0], one.cube(one.top())) / 2.0, 0.5);
        let l16 = lattice(16);
        let b: Vec<f64> = (0..16).map(|x| ((x + 1) as f64).ln()).collect();
        let mut oracle: f64 = 0.0;
        for q in l16.cubes() {
            let k = q.members.len() as f64;
            let bq = q.members.iter().map(|&x| b[x]).sum::<f64>() / k;
            oracle = oracle.max(q.members.iter().map(|&x| (b[x] - bq).abs()).sum::<f64>() / k);
        }
        assert!((bmo_norm(&b, &l16) - oracle).abs() < 1e-14);
        assert!((weighted_bmo_norm(&b, &vec![1.0; 16], &l16) - oracle).abs() < 1e-14);
    }

    #[test]
    fn presets() {
        assert_eq!(weight_preset("const", 4).unwrap(), vec![1.0; 4]);
        assert_eq!(weight_preset("step", 4).unwrap(), vec![1.0, 1.0, 2.0, 2.0]);
        assert_eq!(weight_preset("random:3", 8).unwrap(), weight_preset("random:3", 8).unwrap());
        assert!(weight_preset("power:x", 4).is_err());
        assert!(weight_preset("bogus", 4).is_err());
        assert!(WeightKind::parse("w_inf_1").unwrap() == WeightKind::WInfI(1));
        assert!(WeightKind::parse("nope").is_err());
    }

    proptest! {
        #[test]
        fn astar_matches_apq(seed in any::<u64>(), m in 1usize..4) {
            let l = lattice(8);
            let mut rng = rng_for(seed, 0);
            let p: Vec<f64> = (0..m).map(|_| rng.gen_range(1.2..5.0)).collect();
            let sum: f64 = p.iter().map(|x| 1.0 / x).sum();
            let q = 1.0 / (sum * rng.gen_range(0.2..0.95));
            let cfg = ExponentConfig::new(p.clone(), q);
            prop_assert!(cfg.validate().is_ok());
            let u = random_weight(8, 1.0, &mut rng);
            let ws: Vec<Vec<f64>> = (0..m).map(|_| random_weight(8, 1.0, &mut rng)).collect();
            let star = weight_constant(WeightKind::ApqStar, &l, Some(&u), &ws, &cfg).unwrap().value;
            let u1: Vec<f64> = u.iter().map(|v| v.powf(1.0 / q)).collect();
            let w1: Vec<Vec<f64>> = ws.iter().zip(&p).map(|(w, pi)| w.iter().map(|v| v.powf(1.0 / pi)).collect()).collect();
            let apq = weight_constant(WeightKind::Apq, &l, Some(&u1), &w1, &cfg).unwrap().value.powf(q);
            prop_assert!((star - apq).abs() <= 1e-10 * star, "{} vs {}", star, apq);
            let scaled: Vec<f64> = u.iter().map(|v| 3.0 * v).collect();
            let star3 = weight_constant(WeightKind::ApqStar, &l, Some(&scaled), &ws, &cfg).unwrap().value;
            prop_assert!((star3 - 3.0 * star).abs() <= 1e-12 * star3);
        }

        #[test]
        fn orlicz_properties(seed in any::<u64>(), c in 0.01f64..100.0, r in 0.0f64..3.0) {
            let l = lattice(8);
            let s = l.space();
            let top = l.cube(l.top());
            let mut rng = rng_for(seed, 2);
            let f = random_function(8, &mut rng);
            let g = random_function(8, &mut rng);
            let phi = YoungFunction::LlogL { r };
            let a = orlicz_norm(s, &f, top, phi).unwrap();
            let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
            let b = orlicz_norm(s, &cf, top, phi).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-9 * b);
            prop_assert!(avg(s, &f, top, 1.0) <= a * (1.0 + 1e-10));
            let bigger: Vec<f64> = f.iter().map(|v| v + 0.1).collect();
            prop_assert!(orlicz_norm(s, &bigger, top, phi).unwrap() >= a * (1.0 - 1e-10));
            // generalized Hölder for the exp L / conjugate pair
            let fg: Vec<f64> = f.iter().zip(&g).map(|(x, y)| x * y).collect();
            let lhs = avg(s, &fg, top, 1.0);
            let rhs = 2.0 * orlicz_norm(s, &f, top, YoungFunction::ExpL { s: 1.0 }).unwrap()
                * orlicz_norm(s, &g, top, YoungFunction::ExpConjugate).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-9));
        }

        #[test]
        fn weighted_masses(seed in any::<u64>()) {
            let mut rng = rng_for(seed, 3);
            let masses: Vec<f64> = (0..8).map(|_| rng.gen_range(0.5..3.0)).collect();
            let l = build_standard_lattice(Arc::new(build_grid_space(8, masses).unwrap())).unwrap();
            let w = random_weight(8, 2.0, &mut rng);
            let cfg = ExponentConfig::new(vec![3.0], 3.0);
            let fujii = weight_constant(WeightKind::AInfFujii, &l, None, &[w.clone()], &cfg).unwrap().value;
            prop_assert!(fujii >= 1.0 - 1e-12);
            let h = weight_constant(WeightKind::HInf, &l, None, &[w], &cfg).unwrap().value;
            prop_assert!(h >= 1.0 - 1e-12);
        }
    }
}
