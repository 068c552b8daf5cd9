//! Inequality check registry: exact, explicit-constant and ratio-monitor batteries.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domination::{augment_sparse_multi, augmented_cubes};
use crate::dyadic::{build_standard_lattice, max_feasible_delta, random_sparse_family, select_witnesses, DyadicLattice, SparseFamily};
use crate::operators::{
    dyadic_weighted_maximal, frac_integral, frac_maximal_centered, m_delta, maximal_endpoint, sharp_maximal_dyadic,
    sparse_basic, sparse_first_order, sparse_endpoint, sparse_higher, sparse_plain, sparse_sum, MultiIndexPair,
};
use crate::space::{build_grid_space, uniform_grid, DiscreteSpace};
use crate::util::pairwise_sum;
use crate::weights::{
    avg, avg_w, bmo_norm, dual_weight, mean, orlicz_norm, random_function, random_weight, weight_constant,
    weighted_bmo_norm, weighted_measure, ExponentConfig, WeightKind, YoungFunction,
};
use crate::{conj, rng_for, Error, GridFunction, Result};

pub const SCHEMA: &str = "sparselab-report/1";

const TOL: f64 = 1e-10;
const MAX_RECORDED: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Exact,
    ExplicitConstant,
    RatioMonitor,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegistryEntry {
    pub id: &'static str,
    pub mode: CheckMode,
    /// The inequality being exercised.
    pub display: &'static str,
}

pub const REGISTRY: &[RegistryEntry] = &[
    RegistryEntry {
        id: "holder_eq",
        mode: CheckMode::Exact,
        display: "μ(E) ≤ u(E)^{1/((m−η)q)} ∏ σ_i(E)^{1/((m−η)p_i′)}, u = ∏ω_i^{q/p_i}, σ_i = ω_i^{1−p_i′}",
    },
    RegistryEntry {
        id: "dyadic_maximal",
        mode: CheckMode::ExplicitConstant,
        display: "‖M_D^σ f‖_{L^p(σ)} ≤ p′ ‖f‖_{L^p(σ)}",
    },
    RegistryEntry {
        id: "thm_astar_chain",
        mode: CheckMode::ExplicitConstant,
        display: "‖A_{η,S,1,γ}(f⃗σ⃗)‖^θ_{L^q(u)} ≤ (1/δ)^{(m−η)θ(βq−1)} (q/θ) ∏(p_i′)^θ [w⃗]^{βθ}_{A*} ∏‖f_i‖^θ_{L^{p_i}(σ_i)}",
    },
    RegistryEntry {
        id: "dyadicsum_equiv",
        mode: CheckMode::RatioMonitor,
        display: "‖φ‖_{L^s(σ)} ≈ (Σ_Q α_Q (⟨φ_Q⟩^σ_Q)^{s−1} σ(Q))^{1/s}",
    },
    RegistryEntry {
        id: "kolmogorov_sum",
        mode: CheckMode::RatioMonitor,
        display: "Σ_{Q∈S, Q⊆R} ⟨u⟩_Q^{s₁}⟨v⟩_Q^{s₂} μ(Q) ≤ (δ(1−s₁−s₂))⁻¹ ⟨u⟩_R^{s₁}⟨v⟩_R^{s₂} μ(R)",
    },
    RegistryEntry {
        id: "testing_lemma",
        mode: CheckMode::RatioMonitor,
        display: "‖(Σ μ(Q)^{ηγ}⟨σ₁⟩^γ⟨σ₂⟩^γ χ_Q)^{1/γ}‖_{L^q(u)} vs ‖u,σ⃗‖^{1/q}_{A*} (Σ ⟨σ₁⟩^{q/p₁}⟨σ₂⟩^{q/p₂} μ(Q)^{1+ηq})^{1/q}",
    },
    RegistryEntry {
        id: "endpoint_weak",
        mode: CheckMode::RatioMonitor,
        display: "ω({A^{τᶜ}_{η,S,L log L} f⃗ > λ^m}) vs [w⃗]_{A*_{1⃗,q₀}} ∏(∫Φ_{r,ℓ}(|f_i|/λ) ω_i)^{q₀}; Φ_r∘Φ_r ≤ (r+1)^r t(1+log⁺t)^{2r}",
    },
    RegistryEntry { id: "m_vs_i", mode: CheckMode::ExplicitConstant, display: "M_η f⃗ ≤ m^{m−η} I_η f⃗ (centered balls)" },
    RegistryEntry {
        id: "bmo_lemmas",
        mode: CheckMode::RatioMonitor,
        display: "⟨|f|⟩_Q ≤ ‖f‖_{L log L,Q}; ‖f‖_{L log L,Q} ≲ ⟨|f|^{r+1}⟩^{1/(r+1)}; ⟨|b−b_Q|^r⟩^{1/r} ≲ ‖b‖_BMO; ‖|b−b_Q|^r‖_{exp L^{1/r},Q} ≲ ‖b‖^r_BMO",
    },
    RegistryEntry {
        id: "caopro_norm_transfer",
        mode: CheckMode::RatioMonitor,
        display: "‖A^b_{η,S,τ,r}‖ ≲ [u]^{|τ|}_{A∞} ∏_{τᶜ}[σ_j]_{A∞} ∏‖b_i‖_BMO ‖A_{η,S}‖",
    },
    RegistryEntry {
        id: "bloom_maximal",
        mode: CheckMode::RatioMonitor,
        display: "∫|A^{b,k,t}_{η,S,τ} f⃗| g λ vs ∏‖b_i‖^{k_i−t_i}_{BMO_{η₀}}‖b_i‖^{t_i}_{BMO_{η_i}} Σ_Q μ(Q)^{1+η}⟨A^{k−t}_{S̃,η₀}(gλ)⟩_Q ∏⟨A^{t_i}_{S̃,η_i} f_i⟩_Q",
    },
    RegistryEntry {
        id: "bloom_iterated",
        mode: CheckMode::RatioMonitor,
        display: "same pairing with the iterated weight chain η_{τ(1)} = (ζ/ξ_{τ(1)})^{1/q}, η_{τ(2)} = (ξ_{τ(2)}/λ)^{1/((k−t)q)}",
    },
    RegistryEntry {
        id: "sharp_maximal_commutator",
        mode: CheckMode::RatioMonitor,
        display: "M♯_δ(Δ^b f⃗) ≲ ‖b‖_BMO (M^{τᶜ}_{η,L log L} f⃗ + M_ε(A^{τᶜ}_{η,S,L log L} f⃗)) + M_ε(Δ^{b,inner} f⃗)",
    },
];

pub fn registry_ids() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.id).collect()
}

pub fn registry_entry(id: &str) -> Result<&'static RegistryEntry> {
    REGISTRY
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::UnknownCheck(id.to_string(), registry_ids().join(", ")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub check_id: String,
    #[serde(default)]
    pub config: Option<ExponentConfig>,
    /// Grid size; refinement checks run at n and 4n.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Option<CheckMode>,
}

impl CheckSpec {
    pub fn new(check_id: &str) -> Self {
        CheckSpec { check_id: check_id.to_string(), config: None, n: None, trials: None, seed: 0, mode: None }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = Some(trials);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_config(mut self, cfg: ExponentConfig) -> Self {
        self.config = Some(cfg);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    /// None for battery-level failures such as refinement drift.
    pub trial: Option<u64>,
    pub n: usize,
    pub message: String,
    pub lhs: f64,
    pub rhs: f64,
    pub inputs: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub schema: &'static str,
    pub check_id: String,
    pub mode: CheckMode,
    pub pass: bool,
    pub trials: usize,
    pub seed: u64,
    pub failures: Vec<Failure>,
    pub worst_ratio: f64,
    pub constant: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub runtime: Duration,
}

/// One trial: normalized ratio, failures and metrics.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub ratio: f64,
    pub failures: Vec<Failure>,
    pub metrics: Vec<(String, f64)>,
}

impl Outcome {
    fn metric(&mut self, key: &str, v: f64) {
        self.metrics.push((key.to_string(), v));
    }
}

#[derive(Clone, Debug, Default)]
struct Tally {
    trials: usize,
    worst: f64,
    failures: Vec<Failure>,
    failure_count: usize,
    metrics: BTreeMap<String, f64>,
}

/// `min_*` keys keep the minimum, `count_*` keys add, everything else keeps the maximum.
fn merge_metric(map: &mut BTreeMap<String, f64>, key: &str, v: f64) {
    let e = map.entry(key.to_string());
    use std::collections::btree_map::Entry;
    match e {
        Entry::Vacant(slot) => {
            slot.insert(v);
        }
        Entry::Occupied(mut slot) => {
            let cur = *slot.get();
            *slot.get_mut() = if key.starts_with("min_") {
                cur.min(v)
            } else if key.starts_with("count_") {
                cur + v
            } else {
                cur.max(v)
            };
        }
    }
}

fn tally(outs: Vec<Outcome>) -> Tally {
    let mut t = Tally { trials: outs.len(), ..Tally::default() };
    for o in outs {
        t.worst = if o.ratio.is_nan() { f64::INFINITY } else { t.worst.max(o.ratio) };
        for (k, v) in &o.metrics {
            merge_metric(&mut t.metrics, k, *v);
        }
        t.failure_count += o.failures.len();
        for f in o.failures {
            if t.failures.len() < MAX_RECORDED {
                t.failures.push(f);
            }
        }
    }
    t
}

fn battery<F>(seed: u64, trials: usize, f: F) -> Result<Tally>
where
    F: Fn(u64, &mut ChaCha8Rng) -> Result<Outcome> + Sync,
{
    let outs: Vec<Outcome> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, t);
            f(t, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(tally(outs))
}

fn failure(trial: u64, n: usize, message: impl Into<String>, lhs: f64, rhs: f64, inputs: &[(&str, &[f64])]) -> Failure {
    Failure {
        trial: Some(trial),
        n,
        message: message.into(),
        lhs,
        rhs,
        inputs: inputs.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
    }
}

/// Records a failure unless lhs ≤ c·rhs up to relative TOL.
fn expect_le(out: &mut Outcome, trial: u64, n: usize, what: &str, lhs: f64, rhs: f64, inputs: &[(&str, &[f64])]) {
    if !(lhs <= rhs * (1.0 + TOL)) {
        out.failures.push(failure(trial, n, what, lhs, rhs, inputs));
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.gen_range(0..xs.len())]
}

/// exp(U[−a,a]) with a drawn from {0.5, 1, 2}.
fn weight(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = pick(rng, &[0.5, 1.0, 2.0]);
    random_weight(n, a, rng)
}

fn lp_norm(space: &DiscreteSpace, h: &[f64], p: f64, w: Option<&[f64]>) -> f64 {
    let terms: Vec<f64> = (0..space.n()).map(|x| h[x].abs().powf(p) * w.map_or(1.0, |w| w[x]) * space.mass(x)).collect();
    pairwise_sum(&terms).powf(1.0 / p)
}

fn standard(n: usize) -> Result<Arc<DyadicLattice>> {
    Ok(Arc::new(build_standard_lattice(Arc::new(uniform_grid(n)?))?))
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

/// Runs `f` at n and 4n and fails when a worst ratio is infinite or grows by more than 2×.
///
/// The monitored inequalities are upper bounds with n-independent constants, so only growth counts;
/// the two-sided factor is kept as `drift_two_sided`.
fn refined(n: usize, f: impl Fn(usize) -> Result<Tally>) -> Result<Tally> {
    let coarse = f(n)?;
    let fine = f(4 * n)?;
    let mut t = Tally {
        trials: coarse.trials + fine.trials,
        worst: coarse.worst.max(fine.worst),
        failure_count: coarse.failure_count + fine.failure_count,
        failures: coarse.failures.into_iter().chain(fine.failures).take(MAX_RECORDED).collect(),
        metrics: BTreeMap::new(),
    };
    for (suffix, tl) in [(n, &coarse.metrics), (4 * n, &fine.metrics)] {
        for (k, v) in tl {
            t.metrics.insert(format!("{k}_n{suffix}"), *v);
        }
    }
    t.metrics.insert(format!("worst_n{n}"), coarse.worst);
    t.metrics.insert(format!("worst_n{}", 4 * n), fine.worst);
    let d = growth(coarse.worst, fine.worst);
    t.metrics.insert("drift".into(), d);
    t.metrics.insert("drift_two_sided".into(), drift(coarse.worst, fine.worst));
    if !(coarse.worst.is_finite() && fine.worst.is_finite() && d <= 2.0) {
        t.failure_count += 1;
        t.failures.push(Failure {
            trial: None,
            n: 4 * n,
            message: format!("worst ratio drift {d} under refinement {n} -> {}", 4 * n),
            lhs: fine.worst,
            rhs: coarse.worst,
            inputs: BTreeMap::new(),
        });
    }
    Ok(t)
}

/// b / a, with 0/0 = 1.
fn growth(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        1.0
    } else if a == 0.0 {
        f64::INFINITY
    } else {
        b / a
    }
}

fn drift(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else if a <= 0.0 || b <= 0.0 {
        f64::INFINITY
    } else {
        a.max(b) / a.min(b)
    }
}

pub fn run_check(spec: &CheckSpec) -> Result<CheckReport> {
    let entry = registry_entry(&spec.check_id)?;
    if let Some(mode) = spec.mode {
        if mode != entry.mode {
            return Err(Error::Input(format!("{} runs in {:?} mode, not {mode:?}", entry.id, entry.mode)));
        }
    }
    if let Some(n) = spec.n {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
    }
    if let Some(cfg) = &spec.config {
        cfg.validate()?;
    }
    let start = Instant::now();
    let seed = spec.seed;
    let (t, constant) = match entry.id {
        "holder_eq" => (holder_eq(spec)?, None),
        "dyadic_maximal" => (dyadic_maximal(spec)?, None),
        "thm_astar_chain" => (thm_astar_chain(spec)?, None),
        "dyadicsum_equiv" => (dyadicsum_equiv(spec)?, None),
        "kolmogorov_sum" => (kolmogorov_sum(spec)?, None),
        "testing_lemma" => (testing_lemma(spec)?, None),
        "endpoint_weak" => (endpoint_weak(spec)?, None),
        "m_vs_i" => (m_vs_i(spec)?, None),
        "bmo_lemmas" => (bmo_lemmas(spec)?, None),
        "caopro_norm_transfer" => (caopro_norm_transfer(spec)?, None),
        "bloom_maximal" => (bloom(spec, BloomPath::Maximal)?, None),
        "bloom_iterated" => (bloom(spec, BloomPath::Iterated)?, None),
        "sharp_maximal_commutator" => (sharp_maximal_commutator(spec)?, None),
        other => return Err(Error::Internal(format!("registry entry {other} has no runner"))),
    };
    let constant = constant.or_else(|| t.metrics.get("constant").copied());
    let mut metrics = t.metrics;
    metrics.insert("count_failures".into(), t.failure_count as f64);
    Ok(CheckReport {
        schema: SCHEMA,
        check_id: entry.id.to_string(),
        mode: entry.mode,
        pass: t.failure_count == 0,
        trials: t.trials,
        seed,
        failures: t.failures,
        worst_ratio: t.worst,
        constant,
        metrics,
        runtime: start.elapsed(),
    })
}

/// Every registry entry at n ≤ 32.
pub fn default_battery(seed: u64) -> Vec<CheckSpec> {
    let small = |id: &str, trials: usize| CheckSpec::new(id).with_seed(seed).with_trials(trials);
    vec![
        small("holder_eq", 200),
        small("dyadic_maximal", 200).with_n(32),
        small("thm_astar_chain", 50),
        small("dyadicsum_equiv", 50).with_n(8),
        small("kolmogorov_sum", 50).with_n(8),
        small("testing_lemma", 50),
        small("endpoint_weak", 30).with_n(32),
        small("m_vs_i", 50),
        small("bmo_lemmas", 50).with_n(32),
        small("caopro_norm_transfer", 2),
        small("bloom_maximal", 50).with_n(8),
        small("bloom_iterated", 50).with_n(8),
        small("sharp_maximal_commutator", 50).with_n(8),
    ]
}

fn holder_eq(spec: &CheckSpec) -> Result<Tally> {
    let n = spec.n.unwrap_or(16);
    let space = uniform_grid(n)?;
    battery(spec.seed, spec.trials.unwrap_or(500), |trial, rng| {
        let cfg = match &spec.config {
            Some(c) => c.clone(),
            None => {
                let m = rng.gen_range(1..=3);
                let p: Vec<f64> = (0..m).map(|_| rng.gen_range(1.2..5.0)).collect();
                let s: f64 = p.iter().map(|v| 1.0 / v).sum();
                ExponentConfig::new(p, 1.0 / rng.gen_range(0.05 * s..s))
            }
        };
        let m = cfg.m;
        let omega: Vec<Vec<f64>> = (0..m).map(|_| weight(n, rng)).collect();
        let mut set: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if set.is_empty() {
            set.push(rng.gen_range(0..n));
        }
        holder_instance(&space, &cfg, &omega, &set, trial)
    })
}

fn holder_instance(space: &DiscreteSpace, cfg: &ExponentConfig, omega: &[Vec<f64>], set: &[usize], trial: u64) -> Result<Outcome> {
    let n = space.n();
    let m = cfg.m;
    let scale = m as f64 - cfg.eta;
    let u: Vec<f64> = (0..n).map(|x| (0..m).map(|i| omega[i][x].powf(cfg.q / cfg.p[i])).product()).collect();
    let mut rhs = weighted_measure(space, &u, set).powf(1.0 / (scale * cfg.q));
    for i in 0..m {
        let sigma = dual_weight(&omega[i], cfg.p[i]);
        rhs *= weighted_measure(space, &sigma, set).powf(1.0 / (scale * cfg.p_prime(i)));
    }
    let lhs = space.measure(set);
    let mut out = Outcome { ratio: ratio(lhs, rhs), ..Outcome::default() };
    out.metric("exponent_sum_error", (cfg.holder_sum() / scale - 1.0).abs());
    let set_f: Vec<f64> = set.iter().map(|&x| x as f64).collect();
    let mut inputs: Vec<(&str, &[f64])> = vec![("set", &set_f), ("p", &cfg.p)];
    let names = ["omega_1", "omega_2", "omega_3"];
    for i in 0..m.min(3) {
        inputs.push((names[i], &omega[i]));
    }
    expect_le(&mut out, trial, n, "Hölder witness bound", lhs, rhs, &inputs);
    Ok(out)
}

fn dyadic_maximal(spec: &CheckSpec) -> Result<Tally> {
    let n = spec.n.unwrap_or(32);
    let lattice = standard(n)?;
    let space = lattice.space();
    battery(spec.seed, spec.trials.unwrap_or(500), |trial, rng| {
        let p = match &spec.config {
            Some(c) => c.p[0],
            None => pick(rng, &[1.5, 2.0, 4.0]),
        };
        let sigma = weight(n, rng);
        let f = random_function(n, rng);
        let mf = dyadic_weighted_maximal(&lattice, &f, &sigma);
        let lhs = lp_norm(space, &mf, p, Some(&sigma));
        let rhs = conj(p) * lp_norm(space, &f, p, Some(&sigma));
        let mut out = Outcome { ratio: ratio(lhs, rhs), ..Outcome::default() };
        expect_le(&mut out, trial, n, "dyadic maximal bound", lhs, rhs, &[("f", &f), ("sigma", &sigma), ("p", &[p])]);
        Ok(out)
    })
}

/// Exponent configurations (m, η) ∈ {(1,0), (2,0), (2,1/4), (2,1/2)}.
pub fn astar_configs() -> Vec<ExponentConfig> {
    vec![
        ExponentConfig::new(vec![2.0], 2.0),
        ExponentConfig::new(vec![4.0, 4.0], 2.0),
        ExponentConfig::new(vec![4.0, 4.0], 4.0),
        ExponentConfig::new(vec![2.0, 2.0], 2.0),
    ]
}

/// (1/δ)^{(m−η)θ(βq−1)} (q/θ) ∏(p_i′)^θ.
pub fn astar_explicit_constant(cfg: &ExponentConfig, delta: f64) -> f64 {
    let theta = cfg.theta();
    let e = (cfg.m as f64 - cfg.eta) * theta * (cfg.beta() * cfg.q - 1.0);
    (0..cfg.m).fold((1.0 / delta).powf(e) * cfg.q / theta, |acc, i| acc * cfg.p_prime(i).powf(theta))
}

fn thm_astar_chain(spec: &CheckSpec) -> Result<Tally> {
    let n = spec.n.unwrap_or(16);
    let lattice = standard(n)?;
    let trials = spec.trials.unwrap_or(200);
    let configs = match &spec.config {
        Some(c) => vec![(c.clone(), false)],
        None => astar_configs().into_iter().map(|c| (c, true)).collect(),
    };
    let mut outs = Vec::new();
    for (k, (cfg, random_gamma)) in configs.into_iter().enumerate() {
        let t = battery(spec.seed.wrapping_add(k as u64 * 0x9E37_79B9), trials, |trial, rng| {
            let cfg = if random_gamma { cfg.clone().with_gamma(pick(rng, &[0.5, 1.0, 2.0, 4.0])) } else { cfg.clone() };
            let delta = pick(rng, &[0.25, 0.5]);
            let fam = random_sparse_family(Arc::clone(&lattice), delta, rng);
            let omega: Vec<Vec<f64>> = (0..cfg.m).map(|_| weight(n, rng)).collect();
            let fs: Vec<Vec<f64>> = (0..cfg.m).map(|_| random_function(n, rng)).collect();
            astar_instance(&cfg, &fam, &omega, &fs, trial)
        })?;
        outs.push(t);
    }
    let mut total = Tally::default();
    for t in outs {
        total.trials += t.trials;
        total.worst = total.worst.max(t.worst);
        total.failure_count += t.failure_count;
        total.failures.extend(t.failures);
        for (k, v) in t.metrics {
            merge_metric(&mut total.metrics, &k, v);
        }
    }
    total.failures.truncate(MAX_RECORDED);
    Ok(total)
}

/// Individual steps of the A* chain on one instance.
pub fn astar_instance(cfg: &ExponentConfig, fam: &SparseFamily, omega: &[Vec<f64>], fs: &[Vec<f64>], trial: u64) -> Result<Outcome> {
    let lattice = &fam.lattice;
    let space = lattice.space();
    let n = space.n();
    let m = cfg.m;
    let mut out = Outcome::default();
    if fam.is_empty() {
        return Ok(out);
    }
    let (q, eta, theta, beta, delta) = (cfg.q, cfg.eta, cfg.theta(), cfg.beta(), fam.delta);
    let s = q / theta;
    let u: Vec<f64> = (0..n).map(|x| (0..m).map(|i| omega[i][x].powf(q / cfg.p[i])).product()).collect();
    let sig: Vec<Vec<f64>> = (0..m).map(|i| dual_weight(&omega[i], cfg.p[i])).collect();
    let fsig: Vec<Vec<f64>> = (0..m).map(|i| fs[i].iter().zip(&sig[i]).map(|(a, b)| a * b).collect()).collect();
    let w = weight_constant(WeightKind::ApqStar, lattice, Some(&u), omega, cfg)?.value;
    let e_delta = (m as f64 - eta) * theta * (beta * q - 1.0);
    let k_witness = w.powf(beta * theta) * (1.0 / delta).powf(e_delta);
    let inputs: Vec<(&str, &[f64])> = vec![("u", &u), ("f_1", &fs[0]), ("omega_1", &omega[0])];

    let a: Vec<f64> = fam
        .cubes
        .iter()
        .map(|&id| {
            let qc = lattice.cube(id);
            (0..m).fold(qc.mass.powf(eta), |acc, i| acc * avg(space, &fsig[i], qc, 1.0))
        })
        .collect();
    let a_gamma: Vec<f64> =
        sparse_sum(fam, &a.iter().map(|v| v.powf(cfg.gamma)).collect::<Vec<_>>()).iter().map(|v| v.powf(1.0 / cfg.gamma)).collect();
    let lhs = lp_norm(space, &a_gamma, q, Some(&u)).powf(theta);
    let big_f = sparse_sum(fam, &a.iter().map(|v| v.powf(theta)).collect::<Vec<_>>());
    let step_a = lp_norm(space, &big_f, s, Some(&u));
    expect_le(&mut out, trial, n, "(a) l^theta into l^gamma", lhs, step_a, &inputs);

    let g: Vec<f64> = if s == 1.0 {
        vec![1.0; n]
    } else {
        let h: Vec<f64> = big_f.iter().map(|v| v.powf(s - 1.0)).collect();
        let nh = lp_norm(space, &h, conj(s), Some(&u));
        h.iter().map(|v| if nh > 0.0 { v / nh } else { 0.0 }).collect()
    };
    let mut dual = 0.0;
    let mut wsum = 0.0;
    let mut g_sum = 0.0;
    let mut g_max: f64 = 0.0;
    let mut f_sums = vec![0.0; m];
    let ge = 1.0 - theta / q;
    for (j, &id) in fam.cubes.iter().enumerate() {
        let qc = lattice.cube(id);
        let e = &fam.witnesses[j];
        let u_q = weighted_measure(space, &u, &qc.members);
        let u_e = weighted_measure(space, &u, e);
        let g_avg = avg_w(space, &g, qc, &u);
        dual += a[j].powf(theta) * g_avg * u_q;
        let mut lhs_b = qc.mass.powf(eta * theta) * (u_q / qc.mass) * qc.mass;
        let mut rhs_b = k_witness * u_e.powf(ge);
        let mut fpart = 1.0;
        for i in 0..m {
            let sig_q = weighted_measure(space, &sig[i], &qc.members);
            let sig_e = weighted_measure(space, &sig[i], e);
            lhs_b *= (sig_q / qc.mass).powf(theta);
            rhs_b *= sig_e.powf(theta / cfg.p[i]);
            let f_avg = avg_w(space, &fs[i], qc, &sig[i]);
            fpart *= f_avg.powf(theta) * sig_e.powf(theta / cfg.p[i]);
            f_sums[i] += f_avg.powf(cfg.p[i]) * sig_e;
        }
        expect_le(&mut out, trial, n, &format!("(b) witness step on cube {id}"), lhs_b, rhs_b, &inputs);
        wsum += g_avg * u_e.powf(ge) * fpart;
        if s == 1.0 {
            g_max = g_max.max(g_avg);
        } else {
            g_sum += g_avg.powf(conj(s)) * u_e;
        }
    }
    if (dual - step_a).abs() > 1e-9 * step_a.max(f64::MIN_POSITIVE) {
        out.failures.push(failure(trial, n, "extremal dual function does not attain the norm", dual, step_a, &inputs));
    }
    expect_le(&mut out, trial, n, "(b) summed witness bound", dual, k_witness * wsum, &inputs);
    let g_bracket = if s == 1.0 { g_max } else { g_sum.powf(1.0 / conj(s)) };
    let mut holder = g_bracket;
    let mut f_norms = 1.0;
    for i in 0..m {
        let bracket = f_sums[i].powf(theta / cfg.p[i]);
        holder *= bracket;
        let norm = lp_norm(space, &fs[i], cfg.p[i], Some(&sig[i])).powf(theta);
        f_norms *= norm;
        expect_le(&mut out, trial, n, &format!("(c) maximal step for f_{}", i + 1), bracket, cfg.p_prime(i).powf(theta) * norm, &inputs);
    }
    expect_le(&mut out, trial, n, "Hölder over cubes", wsum, holder, &inputs);
    expect_le(&mut out, trial, n, "(c) maximal step for g", g_bracket, s, &inputs);
    let c_explicit = astar_explicit_constant(cfg, delta);
    let rhs = c_explicit * w.powf(beta * theta) * f_norms;
    expect_le(&mut out, trial, n, "composed bound", lhs, rhs, &inputs);
    out.ratio = ratio(lhs, rhs);
    out.metric("max_explicit_constant", c_explicit);
    Ok(out)
}

fn dyadicsum_equiv(spec: &CheckSpec) -> Result<Tally> {
    let trials = spec.trials.unwrap_or(50);
    refined(spec.n.unwrap_or(16), |n| {
        let lattice = standard(n)?;
        battery(spec.seed, trials, |_, rng| {
            let s = pick(rng, &[1.5, 2.0, 3.0]);
            let sigma = weight(n, rng);
            let alpha: Vec<f64> =
                (0..lattice.len()).map(|_| if rng.gen_bool(0.5) { random_function(1, rng)[0] } else { 0.0 }).collect();
            let r = dyadic_sum_ratio(&lattice, &alpha, &sigma, s);
            let mut out = Outcome { ratio: r, ..Outcome::default() };
            if r > 0.0 {
                out.metric("min_ratio", r);
            }
            Ok(out)
        })
    })
    .map(|mut t| {
        // the lower side of the equivalence may not shrink by more than 2×
        let keys: Vec<String> = t.metrics.keys().filter(|k| k.starts_with("min_ratio_n")).cloned().collect();
        if let [a, b] = &keys[..] {
            let (na, nb): (usize, usize) = (a["min_ratio_n".len()..].parse().unwrap_or(0), b["min_ratio_n".len()..].parse().unwrap_or(0));
            let (coarse, fine) = if na < nb { (t.metrics[a], t.metrics[b]) } else { (t.metrics[b], t.metrics[a]) };
            let d = growth(fine, coarse);
            t.metrics.insert("drift_min".into(), d);
            if !(d <= 2.0) {
                t.failure_count += 1;
                t.failures.push(Failure {
                    trial: None,
                    n: 0,
                    message: format!("inf ratio shrinks by {d} under refinement"),
                    lhs: fine,
                    rhs: coarse,
                    inputs: BTreeMap::new(),
                });
            }
        }
        t
    })
}

/// ‖φ‖_{L^s(σ)} / (Σ_Q α_Q (⟨φ_Q⟩^σ_Q)^{s−1} σ(Q))^{1/s}.
pub fn dyadic_sum_ratio(lattice: &DyadicLattice, alpha: &[f64], sigma: &[f64], s: f64) -> f64 {
    let space = lattice.space();
    let mut phi = vec![0.0; space.n()];
    let sig_q: Vec<f64> = lattice.cubes().iter().map(|q| weighted_measure(space, sigma, &q.members)).collect();
    for (q, &a) in lattice.cubes().iter().zip(alpha) {
        for &x in &q.members {
            phi[x] += a;
        }
    }
    let lhs = lp_norm(space, &phi, s, Some(sigma));
    let mut terms = Vec::new();
    for (id, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let inner: f64 = lattice.subtree(id).into_iter().map(|r| alpha[r] * sig_q[r]).sum();
        terms.push(a * (inner / sig_q[id]).powf(s - 1.0) * sig_q[id]);
    }
    let rhs = pairwise_sum(&terms).powf(1.0 / s);
    ratio(lhs, rhs)
}

/// Best constant over R ∈ D of Σ_{Q∈S,Q⊆R} ⟨u⟩^{s₁}⟨v⟩^{s₂}μ(Q) / (⟨u⟩_R^{s₁}⟨v⟩_R^{s₂}μ(R)).
pub fn kolmogorov_ratio(fam: &SparseFamily, u: &[f64], v: &[f64], s1: f64, s2: f64) -> f64 {
    let lattice = &fam.lattice;
    let space = lattice.space();
    let term = |id: usize| {
        let q = lattice.cube(id);
        avg(space, u, q, 1.0).powf(s1) * avg(space, v, q, 1.0).powf(s2) * q.mass
    };
    let own: Vec<f64> = fam.cubes.iter().map(|&id| term(id)).collect();
    (0..lattice.len())
        .map(|r| {
            let lhs: f64 = fam.cubes.iter().zip(&own).filter(|(&q, _)| lattice.contains(r, q)).map(|(_, t)| t).sum();
            ratio(lhs, term(r))
        })
        .fold(0.0, f64::max)
}

/// (δ(1−s))⁻¹: sparse Carleson packing, weak (1,1) of the local dyadic maximal function and Kolmogorov.
pub fn kolmogorov_constant(delta: f64, s: f64) -> f64 {
    1.0 / (delta * (1.0 - s))
}

fn kolmogorov_sum(spec: &CheckSpec) -> Result<Tally> {
    let trials = spec.trials.unwrap_or(50);
    refined(spec.n.unwrap_or(16), |n| {
        let lattice = standard(n)?;
        battery(spec.seed, trials, |trial, rng| {
            let delta = pick(rng, &[0.25, 0.5]);
            let fam = random_sparse_family(Arc::clone(&lattice), delta, rng);
            let u = weight(n, rng);
            let v = weight(n, rng);
            let s1 = rng.gen_range(0.0..0.9);
            let s2 = rng.gen_range(0.0..(0.95 - s1));
            let r = kolmogorov_ratio(&fam, &u, &v, s1, s2);
            let c = kolmogorov_constant(delta, s1 + s2);
            let mut out = Outcome { ratio: r, ..Outcome::default() };
            out.metric("worst_fraction_of_constant", r / c);
            out.metric("count_geometric_exceedances", if r > 1.0 / (1.0 - delta.powf(1.0 - s1 - s2)) { 1.0 } else { 0.0 });
            expect_le(&mut out, trial, n, "Kolmogorov packing constant", r, c, &[("u", &u), ("v", &v), ("s", &[s1, s2, delta])]);
            Ok(out)
        })
    })
}

/// (LHS, RHS) of the constant-one testing inequality for m = 2.
pub fn testing_sides(fam: &SparseFamily, u: &[f64], sig: [&[f64]; 2], p: [f64; 2], q: f64, gamma: f64) -> (f64, f64) {
    let lattice = &fam.lattice;
    let space = lattice.space();
    let eta = 1.0 / p[0] + 1.0 / p[1] - 1.0 / q;
    let astar = (0..lattice.len())
        .map(|id| {
            let c = lattice.cube(id);
            avg(space, u, c, 1.0) * avg(space, sig[0], c, 1.0).powf(q / conj(p[0])) * avg(space, sig[1], c, 1.0).powf(q / conj(p[1]))
        })
        .fold(0.0, f64::max);
    let mut coeffs = Vec::new();
    let mut rhs_terms = Vec::new();
    for &id in &fam.cubes {
        let c = lattice.cube(id);
        let (a1, a2) = (avg(space, sig[0], c, 1.0), avg(space, sig[1], c, 1.0));
        coeffs.push(c.mass.powf(eta * gamma) * a1.powf(gamma) * a2.powf(gamma));
        rhs_terms.push(a1.powf(q / p[0]) * a2.powf(q / p[1]) * c.mass.powf(1.0 + eta * q));
    }
    let h: Vec<f64> = sparse_sum(fam, &coeffs).into_iter().map(|v| v.powf(1.0 / gamma)).collect();
    let lhs = lp_norm(space, &h, q, Some(u));
    let rhs = astar.powf(1.0 / q) * pairwise_sum(&rhs_terms).powf(1.0 / q);
    (lhs, rhs)
}

/// (LHS, RHS) of the dual testing inequality measured in L^{(p_j/γ)′}(σ_j), j = `which`.
fn dual_testing_sides(fam: &SparseFamily, u: &[f64], sig: [&[f64]; 2], p: [f64; 2], q: f64, gamma: f64, which: usize) -> (f64, f64) {
    let lattice = &fam.lattice;
    let space = lattice.space();
    let other = 1 - which;
    let eta = 1.0 / p[0] + 1.0 / p[1] - 1.0 / q;
    let s = conj(p[which] / gamma);
    let astar = (0..lattice.len())
        .map(|id| {
            let c = lattice.cube(id);
            avg(space, u, c, 1.0) * avg(space, sig[0], c, 1.0).powf(q / conj(p[0])) * avg(space, sig[1], c, 1.0).powf(q / conj(p[1]))
        })
        .fold(0.0, f64::max);
    let mut coeffs = Vec::new();
    let mut rhs_terms = Vec::new();
    for &id in &fam.cubes {
        let c = lattice.cube(id);
        let ao = avg(space, sig[other], c, 1.0);
        let aw = avg(space, sig[which], c, 1.0);
        let au = avg(space, u, c, 1.0);
        coeffs.push(c.mass.powf(eta * gamma) * ao.powf(gamma) * aw.powf(gamma - 1.0) * au);
        rhs_terms.push(ao.powf(gamma * s / p[other]) * au.powf(s * (1.0 - gamma / q)) * c.mass.powf(1.0 + gamma * eta * s));
    }
    let h = sparse_sum(fam, &coeffs);
    let lhs = lp_norm(space, &h, s, Some(sig[which]));
    let rhs = astar.powf(gamma / q) * pairwise_sum(&rhs_terms).powf(1.0 / s);
    (lhs, rhs)
}

fn testing_lemma(spec: &CheckSpec) -> Result<Tally> {
    let trials = spec.trials.unwrap_or(100);
    refined(spec.n.unwrap_or(16), |n| {
        let lattice = standard(n)?;
        battery(spec.seed, trials, |_, rng| {
            let p = [pick(rng, &[2.0, 3.0, 4.0]), pick(rng, &[2.0, 3.0, 4.0])];
            let p_h = 1.0 / (1.0 / p[0] + 1.0 / p[1]);
            let q = rng.gen_range(p_h..8.0);
            let gamma = pick(rng, &[0.5, 1.0, 1.5]);
            let fam = random_sparse_family(Arc::clone(&lattice), 0.5, rng);
            let u = weight(n, rng);
            let s1 = weight(n, rng);
            let s2 = weight(n, rng);
            let (l, r) = testing_sides(&fam, &u, [&s1, &s2], p, q, gamma);
            let mut out = Outcome { ratio: ratio(l, r), ..Outcome::default() };
            out.metric("count_constant_one_exceedances", if l > r * (1.0 + TOL) { 1.0 } else { 0.0 });
            if q > gamma {
                for which in 0..2 {
                    let (dl, dr) = dual_testing_sides(&fam, &u, [&s1, &s2], p, q, gamma, which);
                    out.metric(&format!("worst_dual_{}", which + 1), ratio(dl, dr));
                }
            }
            Ok(out)
        })
    })
}

/// Worst ratios of Φ_r∘Φ_r against t(1+log⁺t)^{2r} (lower) and (r+1)^r t(1+log⁺t)^{2r} (upper) on a log grid.
#[derive(Clone, Debug, Serialize)]
pub struct YoungChainReport {
    pub r: f64,
    pub points: usize,
    pub worst_upper: f64,
    pub worst_lower: f64,
    pub pass: bool,
}

pub fn young_chain(r: f64, points: usize) -> YoungChainReport {
    let phi = YoungFunction::LlogL { r };
    let phi2 = YoungFunction::LlogL { r: 2.0 * r };
    let c = (r + 1.0).powf(r);
    let mut worst_upper: f64 = 0.0;
    let mut worst_lower: f64 = 0.0;
    for j in 0..points {
        let t = 10f64.powf(-3.0 + 9.0 * j as f64 / (points - 1) as f64);
        let comp = phi.eval(phi.eval(t));
        let base = phi2.eval(t);
        worst_upper = worst_upper.max(comp / (c * base));
        worst_lower = worst_lower.max(base / comp);
    }
    YoungChainReport { r, points, worst_upper, worst_lower, pass: worst_upper <= 1.0 + 1e-12 && worst_lower <= 1.0 + 1e-12 }
}

/// Largest ratio of ω({A > λ^m}) to [w⃗]∏(∫Φ_{r,ℓ}(|f_i|/λ)ω_i)^{q₀} over a λ-grid at the quantiles of A.
fn endpoint_battery(n: usize, seed: u64, trials: usize) -> Result<Tally> {
    let lattice = standard(n)?;
    let space = lattice.space();
    let (m, eta, r) = (2usize, 0.5, 1.0);
    let tau = [0usize];
    let ell = (m - tau.len()) as f64;
    let cfg = ExponentConfig::endpoint(m, eta);
    let q0 = cfg.q0.expect("endpoint exponent");
    let phi = YoungFunction::PhiRL { r, ell };
    battery(seed, trials, |_, rng| {
        let omega: Vec<Vec<f64>> = (0..m).map(|_| weight(n, rng)).collect();
        let fs: Vec<Vec<f64>> = (0..m).map(|_| random_function(n, rng)).collect();
        let fam = random_sparse_family(Arc::clone(&lattice), 0.5, rng);
        let w = weight_constant(WeightKind::ApqStarEndpoint, &lattice, None, &omega, &cfg)?.value;
        let big_w: Vec<f64> = (0..n).map(|x| (0..m).map(|i| omega[i][x].powf(q0)).product()).collect();
        let a = sparse_endpoint(&fam, &fs, &tau, eta, r)?;
        let mut levels: Vec<f64> = a.iter().copied().filter(|v| *v > 0.0).collect();
        levels.sort_by(f64::total_cmp);
        let mut out = Outcome::default();
        if levels.is_empty() {
            return Ok(out);
        }
        for frac in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let v = levels[((levels.len() - 1) as f64 * frac).round() as usize] / 1.0001;
            let lambda = v.powf(1.0 / m as f64);
            let set: Vec<usize> = (0..n).filter(|&x| a[x] > v).collect();
            let lhs = weighted_measure(space, &big_w, &set);
            let rhs = (0..m).fold(w, |acc, i| {
                let terms: Vec<f64> = (0..n).map(|x| phi.eval(fs[i][x] / lambda) * omega[i][x] * space.mass(x)).collect();
                acc * pairwise_sum(&terms).powf(q0)
            });
            out.ratio = out.ratio.max(ratio(lhs, rhs));
        }
        Ok(out)
    })
}

fn endpoint_weak(spec: &CheckSpec) -> Result<Tally> {
    let n = spec.n.unwrap_or(32);
    let trials = spec.trials.unwrap_or(30);
    let mut t = Tally::default();
    for r in [1.0, 2.0, 3.0] {
        let y = young_chain(r, 10_000);
        t.metrics.insert(format!("young_upper_r{r}"), y.worst_upper);
        t.metrics.insert(format!("young_lower_r{r}"), y.worst_lower);
        if !y.pass {
            t.failure_count += 1;
            t.failures.push(Failure {
                trial: None,
                n: 0,
                message: format!("Young chain fails for r = {r}"),
                lhs: y.worst_upper,
                rhs: 1.0,
                inputs: BTreeMap::new(),
            });
        }
    }
    let mut worsts = Vec::new();
    for b in 0..3u64 {
        let bt = endpoint_battery(n, spec.seed.wrapping_add(b), trials)?;
        t.trials += bt.trials;
        t.metrics.insert(format!("worst_battery_{b}"), bt.worst);
        worsts.push(bt.worst);
    }
    let again = endpoint_battery(n, spec.seed, trials)?;
    let stable = again.worst.to_bits() == worsts[0].to_bits();
    let hi = worsts.iter().copied().fold(0.0, f64::max);
    let lo = worsts.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = drift(hi, lo);
    t.metrics.insert("battery_spread".into(), spread);
    t.worst = hi;
    if !(stable && hi.is_finite()) {
        t.failure_count += 1;
        t.failures.push(Failure {
            trial: None,
            n,
            message: format!("endpoint ratio not reproducible: rerun identical = {stable}, worst = {hi}"),
            lhs: hi,
            rhs: lo,
            inputs: BTreeMap::new(),
        });
    }
    Ok(t)
}

fn m_vs_i(spec: &CheckSpec) -> Result<Tally> {
    let n = spec.n.unwrap_or(16);
    battery(spec.seed, spec.trials.unwrap_or(100), |trial, rng| {
        let m = rng.gen_range(1..=2usize);
        let eta = rng.gen_range(0.0..m as f64);
        let masses: Vec<f64> = if rng.gen_bool(0.5) { vec![1.0; n] } else { (0..n).map(|_| rng.gen_range(1..=4) as f64).collect() };
        let space = build_grid_space(n, masses.clone())?;
        let fs: Vec<Vec<f64>> = (0..m).map(|_| random_function(n, rng)).collect();
        let c = (m as f64).powf(m as f64 - eta);
        let mx = frac_maximal_centered(&space, &fs, eta)?;
        let ix = frac_integral(&space, &fs, eta)?;
        let mut out = Outcome::default();
        for x in 0..n {
            out.ratio = out.ratio.max(ratio(mx[x], c * ix[x]));
            expect_le(&mut out, trial, n, &format!("M_eta <= m^(m-eta) I_eta at {x}"), mx[x], c * ix[x], &[("masses", &masses), ("f_1", &fs[0])]);
        }
        out.failures.truncate(1);
        Ok(out)
    })
}

fn bmo_lemmas(spec: &CheckSpec) -> Result<Tally> {
    let n = spec.n.unwrap_or(32);
    let lattice = standard(n)?;
    let space = lattice.space();
    battery(spec.seed, spec.trials.unwrap_or(100), |trial, rng| {
        let r = pick(rng, &[1.0, 2.0]);
        let f = random_function(n, rng);
        let b: Vec<f64> = random_function(n, rng).into_iter().map(|v| if rng.gen_bool(0.5) { v } else { -v }).collect();
        let norm = bmo_norm(&b, &lattice);
        let mut out = Outcome::default();
        let (mut w1, mut w2, mut w3) = (0.0f64, 0.0f64, 0.0f64);
        for q in lattice.cubes() {
            let llogl = orlicz_norm(space, &f, q, YoungFunction::LlogL { r: 1.0 })?;
            let lower = avg(space, &f, q, 1.0);
            expect_le(&mut out, trial, n, &format!("<|f|> <= ||f||_LlogL on cube {}", q.id), lower, llogl, &[("f", &f)]);
            w1 = w1.max(ratio(llogl, avg(space, &f, q, r + 1.0)));
            let bq = mean(space, &b, q);
            let dev: Vec<f64> = b.iter().map(|v| (v - bq).abs()).collect();
            w2 = w2.max(ratio(avg(space, &dev, q, r), norm));
            let dev_r: Vec<f64> = dev.iter().map(|v| v.powf(r)).collect();
            w3 = w3.max(ratio(orlicz_norm(space, &dev_r, q, YoungFunction::ExpL { s: 1.0 / r })?, norm.powf(r)));
        }
        out.metric("worst_llogl_upper", w1);
        out.metric("worst_bmo_power", w2);
        out.metric("worst_bmo_exp", w3);
        out.ratio = w1.max(w2).max(w3);
        Ok(out)
    })
}

/// Coordinate ascent of ‖T f⃗‖_{L^q(u)} / ∏‖f_i‖_{L^{p_i}(ω_i)} over nonnegative f⃗ from `starts` random starts.
fn estimate_norm(
    space: &DiscreteSpace,
    op: &dyn Fn(&[GridFunction]) -> Result<GridFunction>,
    p: &[f64],
    q: f64,
    u: &[f64],
    omega: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
    starts: usize,
) -> Result<f64> {
    let n = space.n();
    let m = p.len();
    let value = |fs: &[GridFunction]| -> Result<f64> {
        let den: f64 = (0..m).map(|i| lp_norm(space, &fs[i], p[i], Some(&omega[i]))).product();
        Ok(if den == 0.0 { 0.0 } else { lp_norm(space, &op(fs)?, q, Some(u)) / den })
    };
    let mut best: f64 = 0.0;
    for _ in 0..starts {
        let mut fs: Vec<GridFunction> = (0..m).map(|_| random_function(n, rng).into_iter().map(|v| v + 0.1).collect()).collect();
        let mut cur = value(&fs)?;
        for _ in 0..3 {
            for i in 0..m {
                for x in 0..n {
                    let keep = fs[i][x];
                    for factor in [0.0, 0.5, 2.0, 4.0] {
                        fs[i][x] = keep * factor;
                        let v = value(&fs)?;
                        if v > cur {
                            cur = v;
                            break;
                        }
                        fs[i][x] = keep;
                    }
                }
            }
        }
        best = best.max(cur);
    }
    Ok(best)
}

fn caopro_norm_transfer(spec: &CheckSpec) -> Result<Tally> {
    let n = spec.n.unwrap_or(16);
    let lattice = standard(n)?;
    let space = lattice.space();
    let cfg = spec.config.clone().unwrap_or_else(|| ExponentConfig::new(vec![3.0, 3.0], 3.0));
    let m = cfg.m;
    let r = cfg.r;
    battery(spec.seed, spec.trials.unwrap_or(4), |_, rng| {
        let tau: Vec<usize> = vec![0];
        let tau_ell: Vec<usize> = (0..m).collect();
        let u = weight(n, rng);
        let sig: Vec<Vec<f64>> = (0..m).map(|_| weight(n, rng)).collect();
        let omega: Vec<Vec<f64>> = (0..m).map(|i| sig[i].iter().map(|s| s.powf(1.0 - cfg.p[i] / r)).collect()).collect();
        let bs: Vec<Vec<f64>> = (0..m).map(|_| random_function(n, rng)).collect();
        let fam = random_sparse_family(Arc::clone(&lattice), 0.5, rng);
        let a_inf = |w: &[f64]| -> Result<f64> {
            Ok(weight_constant(WeightKind::AInfFujii, &lattice, None, &[w.to_vec()], &cfg)?.value)
        };
        let mut c0 = a_inf(&u)?.powi(tau.len() as i32);
        for j in (0..m).filter(|j| !tau.contains(j)) {
            c0 *= a_inf(&sig[j])?;
        }
        for b in &bs {
            c0 *= bmo_norm(b, &lattice);
        }
        let eta = cfg.eta;
        let with_b = |fs: &[GridFunction]| sparse_first_order(&fam, &bs, fs, &tau, &tau_ell, eta, r);
        let plain_cfg = ExponentConfig { r: 1.0, p0: r, gamma: 1.0, ..cfg.clone() };
        let without = |fs: &[GridFunction]| sparse_basic(&fam, fs, &plain_cfg);
        let nb = estimate_norm(space, &with_b, &cfg.p, cfg.q, &u, &omega, rng, 2)?;
        let n0 = estimate_norm(space, &without, &cfg.p, cfg.q, &u, &omega, rng, 2)?;
        let mut out = Outcome { ratio: ratio(nb, c0 * n0), ..Outcome::default() };
        out.metric("c0", c0);
        Ok(out)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BloomPath {
    Maximal,
    Iterated,
}

/// Union over the symbols of the stopping cubes, with canonical witnesses at the best δ they admit.
///
/// The pointwise bound |b − b_Q| ≲ ‖b‖ Σ_{P∈S̃, P⊆Q} ⟨η⟩_P χ_P needs only the stopping cubes, not sparseness.
fn augmented_family(fam: &SparseFamily, bs: &[GridFunction]) -> Result<SparseFamily> {
    let mut cubes = std::collections::BTreeSet::new();
    for b in bs {
        cubes.extend(augmented_cubes(fam, b)?);
    }
    let cubes: Vec<usize> = cubes.into_iter().collect();
    let delta = max_feasible_delta(&fam.lattice, &cubes);
    select_witnesses(Arc::clone(&fam.lattice), &cubes, delta)
}

/// h ↦ η · A_S(h), applied `times` times.
fn weighted_sparse_iter(fam: &SparseFamily, eta: &[f64], h: &[f64], times: u32) -> GridFunction {
    let mut cur = h.to_vec();
    for _ in 0..times {
        cur = sparse_plain(fam, &[cur]).into_iter().zip(eta).map(|(a, e)| a * e).collect();
    }
    cur
}

fn bloom(spec: &CheckSpec, path: BloomPath) -> Result<Tally> {
    let trials = spec.trials.unwrap_or(20);
    refined(spec.n.unwrap_or(16), |n| {
        let lattice = standard(n)?;
        let space = lattice.space();
        let (m, p, q) = (2usize, [3.0, 3.0], 3.0);
        let eta = 1.0 / p[0] + 1.0 / p[1] - 1.0 / q;
        let pair = MultiIndexPair::new(vec![2, 2], vec![1, 1], vec![0, 1], vec![0, 1])?;
        battery(spec.seed, trials, |_, rng| {
            let bs: Vec<Vec<f64>> = (0..m).map(|_| random_function(n, rng)).collect();
            let fs: Vec<Vec<f64>> = (0..m).map(|_| random_function(n, rng)).collect();
            let g = random_function(n, rng);
            let lambda = weight(n, rng);
            let fam = random_sparse_family(Arc::clone(&lattice), 0.5, rng);
            let mut out = Outcome::default();
            if fam.is_empty() {
                return Ok(out);
            }
            // inner weights (μ_i / v_i)^{1/(t_i p_i)}
            let inner: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let (mu, v) = (weight(n, rng), weight(n, rng));
                    (0..n).map(|x| (mu[x] / v[x]).powf(1.0 / (pair.t[i] as f64 * p[i]))).collect()
                })
                .collect();
            let aug = augmented_family(&fam, &bs)?;
            out.metric("count_augment_infeasible", if augment_sparse_multi(&fam, &bs).is_err() { 1.0 } else { 0.0 });
            out.metric("min_augmented_delta", aug.delta);
            let gl: Vec<f64> = g.iter().zip(&lambda).map(|(a, b)| a * b).collect();
            let (outer_h, mut coef) = match path {
                BloomPath::Maximal => {
                    let eta0: Vec<f64> = (0..n).map(|x| inner[0][x].max(inner[1][x])).collect();
                    let reps: u32 = (0..m).map(|i| pair.k[i] - pair.t[i]).sum();
                    let c: f64 = (0..m).map(|i| weighted_bmo_norm(&bs[i], &eta0, &lattice).powi((pair.k[i] - pair.t[i]) as i32)).product();
                    (weighted_sparse_iter(&aug, &eta0, &gl, reps), c)
                }
                BloomPath::Iterated => {
                    let (zeta, xi1, xi2) = (weight(n, rng), weight(n, rng), weight(n, rng));
                    let e1: Vec<f64> = (0..n).map(|x| (zeta[x] / xi1[x]).powf(1.0 / q)).collect();
                    let d2 = (pair.k[1] - pair.t[1]) as f64;
                    let e2: Vec<f64> = (0..n).map(|x| (xi2[x] / lambda[x]).powf(1.0 / (d2 * q))).collect();
                    let c = weighted_bmo_norm(&bs[0], &e1, &lattice).powi((pair.k[0] - pair.t[0]) as i32)
                        * weighted_bmo_norm(&bs[1], &e2, &lattice).powi((pair.k[1] - pair.t[1]) as i32);
                    let h = weighted_sparse_iter(&aug, &e2, &gl, pair.k[1] - pair.t[1]);
                    (weighted_sparse_iter(&aug, &e1, &h, pair.k[0] - pair.t[0]), c)
                }
            };
            for i in 0..m {
                coef *= weighted_bmo_norm(&bs[i], &inner[i], &lattice).powi(pair.t[i] as i32);
            }
            let inner_f: Vec<GridFunction> = (0..m).map(|i| weighted_sparse_iter(&aug, &inner[i], &fs[i], pair.t[i])).collect();
            let mut rhs_terms = Vec::with_capacity(fam.len());
            for &id in &fam.cubes {
                let c = lattice.cube(id);
                let v = (0..m).fold(c.mass.powf(1.0 + eta) * avg(space, &outer_h, c, 1.0), |acc, i| acc * avg(space, &inner_f[i], c, 1.0));
                rhs_terms.push(v);
            }
            let rhs = coef * pairwise_sum(&rhs_terms);
            let op = sparse_higher(&fam, &bs, &fs, &pair, eta, 1.0)?;
            let lhs_terms: Vec<f64> = (0..n).map(|x| op[x] * gl[x] * space.mass(x)).collect();
            out.ratio = ratio(pairwise_sum(&lhs_terms), rhs);
            out.metric("max_augmented_size", aug.len() as f64);
            Ok(out)
        })
    })
}

/// Σ_{Q∈S} μ(Q)^η ⟨·⟩ ‖f₂‖_{L log L,Q} χ_Q with |b(x) − b_Q| outside (`inner = false`) or inside the f₁ average.
fn delta_operator(fam: &SparseFamily, b: &[f64], fs: &[GridFunction], eta: f64, inner: bool) -> Result<GridFunction> {
    let lattice = &fam.lattice;
    let space = lattice.space();
    let mut out = vec![0.0; space.n()];
    for &id in &fam.cubes {
        let q = lattice.cube(id);
        let bq = mean(space, b, q);
        let tail = orlicz_norm(space, &fs[1], q, YoungFunction::LlogL { r: 1.0 })?;
        let head = if inner {
            let g: Vec<f64> = fs[0].iter().zip(b).map(|(f, v)| f * (v - bq).abs()).collect();
            avg(space, &g, q, 1.0)
        } else {
            avg(space, &fs[0], q, 1.0)
        };
        let c = q.mass.powf(eta) * head * tail;
        for &x in &q.members {
            out[x] += if inner { c } else { c * (b[x] - bq).abs() };
        }
    }
    Ok(out)
}

fn sharp_maximal_commutator(spec: &CheckSpec) -> Result<Tally> {
    let trials = spec.trials.unwrap_or(20);
    let (delta, eps, eta) = (0.25, 0.5, 0.5);
    refined(spec.n.unwrap_or(16), |n| {
        let lattice = standard(n)?;
        let space = lattice.space();
        battery(spec.seed, trials, |_, rng| {
            let fs: Vec<Vec<f64>> = (0..2).map(|_| random_function(n, rng)).collect();
            let b = random_function(n, rng);
            let fam = random_sparse_family(Arc::clone(&lattice), 0.5, rng);
            let mut out = Outcome::default();
            if fam.is_empty() {
                return Ok(out);
            }
            let tau = [0usize];
            let lhs = sharp_maximal_dyadic(&lattice, &delta_operator(&fam, &b, &fs, eta, false)?, delta);
            let norm = bmo_norm(&b, &lattice);
            let mx = maximal_endpoint(&lattice, &fs, &tau, eta, 1.0)?;
            let sp = m_delta(space, &sparse_endpoint(&fam, &fs, &tau, eta, 1.0)?, eps)?;
            let lower_order = m_delta(space, &delta_operator(&fam, &b, &fs, eta, true)?, eps)?;
            for x in 0..n {
                let rhs = norm * (mx[x] + sp[x]) + lower_order[x];
                out.ratio = out.ratio.max(ratio(lhs[x], rhs));
            }
            Ok(out)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{select_witnesses, verify_sparse};

    #[test]
    fn registry_lookup() {
        assert_eq!(REGISTRY.len(), 13);
        match run_check(&CheckSpec::new("nope")) {
            Err(Error::UnknownCheck(id, list)) => {
                assert_eq!(id, "nope");
                assert!(list.contains("holder_eq") && list.contains("sharp_maximal_commutator"));
            }
            other => panic!("{other:?}"),
        }
        let mut bad = CheckSpec::new("holder_eq");
        bad.mode = Some(CheckMode::RatioMonitor);
        assert!(run_check(&bad).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = CheckSpec::new("m_vs_i").with_trials(3).with_seed(9);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<CheckSpec>(&text).unwrap(), s);
        assert!(serde_json::from_str::<CheckSpec>(r#"{"check_id":"m_vs_i","bogus":1}"#).is_err());
    }

    #[test]
    fn holder_equality_for_constant_weights() {
        let space = uniform_grid(8).unwrap();
        for cfg in [ExponentConfig::new(vec![2.0], 3.0), ExponentConfig::new(vec![3.0, 4.0, 5.0], 2.0)] {
            let omega = vec![vec![1.0; 8]; cfg.m];
            let out = holder_instance(&space, &cfg, &omega, &[1, 4, 6], 0).unwrap();
            assert!((out.ratio - 1.0).abs() <= 1e-12, "{}", out.ratio);
            assert!(out.failures.is_empty());
        }
    }

    #[test]
    fn holder_battery() {
        let rep = run_check(&CheckSpec::new("holder_eq").with_trials(100).with_seed(3)).unwrap();
        assert!(rep.pass, "{:?}", rep.failures);
        assert!(rep.worst_ratio <= 1.0 + 1e-10);
        assert!(rep.metrics["exponent_sum_error"] < 1e-12);
    }

    #[test]
    fn dyadic_maximal_battery() {
        let rep = run_check(&CheckSpec::new("dyadic_maximal").with_n(32).with_trials(500).with_seed(1)).unwrap();
        assert!(rep.pass);
        assert!(rep.worst_ratio < 1.0);
    }

    /// Top cube plus both halves on four unit points, witnesses {1,3}, {0}, {2}.
    fn three_cube_family() -> SparseFamily {
        let l = standard(4).unwrap();
        let top = l.top();
        let kids = l.cube(top).children.clone();
        let fam = SparseFamily { lattice: l, cubes: vec![top, kids[0], kids[1]], witnesses: vec![vec![1, 3], vec![0], vec![2]], delta: 0.5 };
        assert!(verify_sparse(&fam).pass);
        fam
    }

    #[test]
    fn astar_hand_oracle() {
        // m = 1, p = q = 2, γ = 1: θ = 1, β = max{1, p′/q} = 1
        let cfg = ExponentConfig::new(vec![2.0], 2.0);
        assert_eq!((cfg.theta(), cfg.beta(), cfg.eta), (1.0, 1.0, 0.0));
        // (1/δ)^{(1−0)·1·(2−1)} · (q/θ) · p′ = 2 · 2 · 2
        assert_eq!(astar_explicit_constant(&cfg, 0.5), 8.0);
        let fam = three_cube_family();
        let omega = vec![vec![1.0, 4.0, 1.0, 0.25]];
        let f = vec![vec![1.0, 0.0, 2.0, 1.0]];
        // u = ω, σ = ω⁻¹
        let sigma: Vec<f64> = omega[0].iter().map(|w| 1.0 / w).collect();
        let fsig: Vec<f64> = f[0].iter().zip(&sigma).map(|(a, b)| a * b).collect();
        // a_Q = ⟨fσ⟩_Q: top (1+0+2+4)/4, left 1/2, right (2+4)/2
        let a = [7.0 / 4.0, 0.5, 3.0];
        assert_eq!(fsig, vec![1.0, 0.0, 2.0, 4.0]);
        let sum = [a[0] + a[1], a[0] + a[1], a[0] + a[2], a[0] + a[2]];
        let lhs = (0..4).map(|x| sum[x] * sum[x] * omega[0][x]).sum::<f64>().sqrt();
        // [w] = sup ⟨ω⟩⟨ω⁻¹⟩: top (6.25/4)(6.25/4), left (5/2)(1.25/2), right (1.25/2)(5/2)
        let w = (6.25f64 / 4.0 * 6.25 / 4.0).max(5.0 / 2.0 * 1.25 / 2.0);
        let f_norm = (0..4).map(|x| f[0][x] * f[0][x] * sigma[x]).sum::<f64>().sqrt();
        let out = astar_instance(&cfg, &fam, &omega, &f, 0).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let expect = lhs / (8.0 * w * f_norm);
        assert!((out.ratio - expect).abs() <= 1e-12 * expect, "{} vs {expect}", out.ratio);
    }

    #[test]
    fn astar_chain_configs() {
        for (k, cfg) in astar_configs().into_iter().enumerate() {
            let rep = run_check(&CheckSpec::new("thm_astar_chain").with_config(cfg).with_trials(20).with_seed(k as u64)).unwrap();
            assert!(rep.pass, "{:?}", rep.failures);
            assert!(rep.worst_ratio <= 1.0);
        }
    }

    #[test]
    fn testing_lemma_constant_one_counterexample() {
        // chain {0,1} ⊃ {0} with unit weights, p = (2,2), q = 2, γ = 1, so η = 1/2
        let l = standard(2).unwrap();
        let top = l.top();
        let child = l.cube(top).children[0];
        let fam = select_witnesses(l.clone(), &[top, child], 0.5).unwrap();
        let ones = vec![1.0; 2];
        let (lhs, rhs) = testing_sides(&fam, &ones, [&ones, &ones], [2.0, 2.0], 2.0, 1.0);
        // Σ μ(Q)^{1/2} χ_Q = (√2 + 1, √2); RHS² = μ(top)² + μ(child)²
        let want_lhs = ((2f64.sqrt() + 1.0).powi(2) + 2.0).sqrt();
        assert!((lhs - want_lhs).abs() < 1e-12);
        assert!((rhs - 5f64.sqrt()).abs() < 1e-12);
        assert!(lhs > rhs);
    }

    #[test]
    fn kolmogorov_chain_beats_geometric_constant() {
        // nested halves with μ(child) = (3/4) μ(parent): δ = 1/4
        let space = build_grid_space(8, vec![27.0, 9.0, 6.0, 6.0, 4.0, 4.0, 4.0, 4.0]).unwrap();
        let l = Arc::new(build_standard_lattice(Arc::new(space)).unwrap());
        let mut chain = vec![l.top()];
        while let Some(&c) = l.cube(*chain.last().unwrap()).children.first() {
            chain.push(c);
        }
        assert_eq!(chain.len(), 4);
        let fam = select_witnesses(l.clone(), &chain, 0.25).unwrap();
        let mut u = vec![0.0; 8];
        u[0] = 1.0;
        let v = vec![1.0; 8];
        let r = kolmogorov_ratio(&fam, &u, &v, 0.5, 0.0);
        let want: f64 = (0..4).map(|k| 0.75f64.powf(k as f64 * 0.5)).sum();
        assert!((r - want).abs() < 1e-12, "{r} vs {want}");
        assert!(r > 1.0 / (1.0 - 0.25f64.sqrt()));
        assert!(r <= kolmogorov_constant(0.25, 0.5));
    }

    #[test]
    fn young_chain_constants() {
        for r in [1.0, 2.0, 3.0] {
            let y = young_chain(r, 10_000);
            assert!(y.pass, "{y:?}");
        }
    }

    #[test]
    fn m_vs_i_battery() {
        let rep = run_check(&CheckSpec::new("m_vs_i").with_trials(40).with_seed(5)).unwrap();
        assert!(rep.pass, "{:?}", rep.failures);
    }

    #[test]
    fn bmo_lower_bound_exact() {
        let rep = run_check(&CheckSpec::new("bmo_lemmas").with_n(16).with_trials(20).with_seed(2)).unwrap();
        assert!(rep.pass, "{:?}", rep.failures);
        assert!(rep.worst_ratio.is_finite());
    }

    #[test]
    fn ratio_monitors_are_reproducible() {
        for id in ["kolmogorov_sum", "dyadicsum_equiv", "sharp_maximal_commutator"] {
            let spec = CheckSpec::new(id).with_n(8).with_trials(6).with_seed(11);
            let a = run_check(&spec).unwrap();
            let b = run_check(&spec).unwrap();
            assert_eq!(a.worst_ratio.to_bits(), b.worst_ratio.to_bits(), "{id}");
            assert!(a.worst_ratio.is_finite());
            assert!(a.metrics.contains_key("drift"));
        }
    }
}
