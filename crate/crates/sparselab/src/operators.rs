//! Sparse, maximal, fractional and commutator operators on finite spaces.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicLattice, SparseFamily};
use crate::space::{ball, DiscreteSpace};
use crate::util::for_each_box;
use crate::weights::{avg, avg_w, mean, orlicz_norm, ExponentConfig, YoungFunction};
use crate::{Error, GridFunction, Result};

/// (k⃗, t⃗, τ, τ_ℓ) with 0-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiIndexPair {
    pub k: Vec<u32>,
    pub t: Vec<u32>,
    pub tau: Vec<usize>,
    pub tau_ell: Vec<usize>,
}

impl MultiIndexPair {
    pub fn new(k: Vec<u32>, t: Vec<u32>, tau: Vec<usize>, tau_ell: Vec<usize>) -> Result<Self> {
        let pair = MultiIndexPair { k, t, tau, tau_ell };
        pair.validate(pair.k.len())?;
        Ok(pair)
    }

    /// No commutator: k⃗ = t⃗ = 0, τ = τ_ℓ = ∅.
    pub fn plain(m: usize) -> Self {
        MultiIndexPair { k: vec![0; m], t: vec![0; m], tau: Vec::new(), tau_ell: Vec::new() }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.k.len() != m || self.t.len() != m {
            return Err(Error::Input(format!("k and t need {m} entries")));
        }
        if let Some(i) = (0..m).find(|&i| self.t[i] > self.k[i]) {
            return Err(Error::Input(format!("t_{i} = {} exceeds k_{i} = {}", self.t[i], self.k[i])));
        }
        for set in [&self.tau, &self.tau_ell] {
            if set.windows(2).any(|w| w[0] >= w[1]) || set.iter().any(|&i| i >= m) {
                return Err(Error::Input(format!("index set {set:?} must be strictly increasing within 0..{m}")));
            }
        }
        if !self.tau.iter().all(|i| self.tau_ell.contains(i)) {
            return Err(Error::Input("tau must be a subset of tau_ell".into()));
        }
        Ok(())
    }

    /// Exponent β_i of (b_i(x) − b_i(y_i)) in the commutator.
    pub fn beta(&self, i: usize) -> u32 {
        if self.tau_ell.contains(&i) {
            self.k[i]
        } else {
            0
        }
    }
}

fn check_functions(n: usize, fs: &[GridFunction]) -> Result<()> {
    for (i, f) in fs.iter().enumerate() {
        if f.len() != n {
            return Err(Error::Input(format!("function {i} has {} values, space has {n} points", f.len())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("function {i} has non-finite values")));
        }
    }
    Ok(())
}

/// Σ_Q c_Q χ_Q(x), cubes in family order.
pub fn sparse_sum(family: &SparseFamily, coeffs: &[f64]) -> GridFunction {
    let lattice = &family.lattice;
    let mut out = vec![0.0; lattice.space().n()];
    for (&id, &c) in family.cubes.iter().zip(coeffs) {
        for &x in &lattice.cube(id).members {
            out[x] += c;
        }
    }
    out
}

/// Per-cube terms [μ(Q)^η ∏⟨f_i⟩_{Q,p₀}]^γ.
pub fn basic_coefficients(family: &SparseFamily, fs: &[GridFunction], cfg: &ExponentConfig) -> Vec<f64> {
    let lattice = &family.lattice;
    let space = lattice.space();
    family
        .cubes
        .iter()
        .map(|&id| {
            let q = lattice.cube(id);
            let v = fs.iter().fold(q.mass.powf(cfg.eta), |acc, f| acc * avg(space, f, q, cfg.p0));
            v.powf(cfg.gamma)
        })
        .collect()
}

/// (Σ_Q [μ(Q)^η ∏⟨f_i⟩_{Q,p₀}]^γ χ_Q)^{1/γ}.
pub fn sparse_basic(family: &SparseFamily, fs: &[GridFunction], cfg: &ExponentConfig) -> Result<GridFunction> {
    check_functions(family.lattice.space().n(), fs)?;
    let s = sparse_sum(family, &basic_coefficients(family, fs, cfg));
    Ok(if cfg.gamma == 1.0 { s } else { s.into_iter().map(|v| v.powf(1.0 / cfg.gamma)).collect() })
}

/// A_S: η = 0, p₀ = γ = 1.
pub fn sparse_plain(family: &SparseFamily, fs: &[GridFunction]) -> GridFunction {
    let lattice = &family.lattice;
    let space = lattice.space();
    let coeffs: Vec<f64> = family
        .cubes
        .iter()
        .map(|&id| fs.iter().map(|f| avg(space, f, lattice.cube(id), 1.0)).product())
        .collect();
    sparse_sum(family, &coeffs)
}

fn shifted(b: &[f64], c: f64) -> Vec<f64> {
    b.iter().map(|v| v - c).collect()
}

fn times(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// First-order multi-symbol operator; averages carry absolute values.
pub fn sparse_first_order(
    family: &SparseFamily,
    bs: &[GridFunction],
    fs: &[GridFunction],
    tau: &[usize],
    tau_ell: &[usize],
    eta: f64,
    r: f64,
) -> Result<GridFunction> {
    let lattice = &family.lattice;
    let space = lattice.space();
    let m = fs.len();
    check_functions(space.n(), fs)?;
    check_functions(space.n(), bs)?;
    MultiIndexPair { k: vec![1; m], t: vec![0; m], tau: tau.to_vec(), tau_ell: tau_ell.to_vec() }.validate(m)?;
    let mut out = vec![0.0; space.n()];
    for &id in &family.cubes {
        let q = lattice.cube(id);
        let mut coeff = q.mass.powf(eta / r);
        let mut bq = vec![0.0; m];
        for i in 0..m {
            if tau_ell.contains(&i) {
                bq[i] = mean(space, &bs[i], q);
            }
            coeff *= if tau_ell.contains(&i) && !tau.contains(&i) {
                avg(space, &times(&shifted(&bs[i], bq[i]), &fs[i]), q, r)
            } else {
                avg(space, &fs[i], q, r)
            };
        }
        for &x in &q.members {
            out[x] += tau.iter().fold(coeff, |acc, &i| acc * (bs[i][x] - bq[i]).abs());
        }
    }
    Ok(out)
}

/// Higher-order multi-symbol operator A^{b,k,t}_{η,S,τ,r}.
pub fn sparse_higher(
    family: &SparseFamily,
    bs: &[GridFunction],
    fs: &[GridFunction],
    pair: &MultiIndexPair,
    eta: f64,
    r: f64,
) -> Result<GridFunction> {
    let lattice = &family.lattice;
    let space = lattice.space();
    let m = fs.len();
    check_functions(space.n(), fs)?;
    check_functions(space.n(), bs)?;
    pair.validate(m)?;
    let mut out = vec![0.0; space.n()];
    for &id in &family.cubes {
        let q = lattice.cube(id);
        let mut coeff = q.mass.powf(eta / r);
        let mut bq = vec![0.0; m];
        for i in 0..m {
            coeff *= if pair.tau.contains(&i) {
                bq[i] = mean(space, &bs[i], q);
                let g: Vec<f64> = fs[i].iter().zip(&bs[i]).map(|(f, b)| f * (b - bq[i]).powi(pair.t[i] as i32)).collect();
                avg(space, &g, q, r)
            } else {
                avg(space, &fs[i], q, r)
            };
        }
        if coeff == 0.0 {
            continue;
        }
        for &x in &q.members {
            out[x] += pair
                .tau
                .iter()
                .fold(coeff, |acc, &i| acc * (bs[i][x] - bq[i]).abs().powi((pair.k[i] - pair.t[i]) as i32));
        }
    }
    Ok(out)
}

fn endpoint_factor(space: &DiscreteSpace, f: &[f64], q: &crate::dyadic::Cube, r: f64, sparse: bool) -> Result<f64> {
    let phi = YoungFunction::LlogL { r };
    if sparse {
        let fr: Vec<f64> = f.iter().map(|v| v.abs().powf(r)).collect();
        Ok(orlicz_norm(space, &fr, q, phi)?.powf(1.0 / r))
    } else {
        orlicz_norm(space, f, q, phi)
    }
}

/// Σ_Q μ(Q)^{η/r} ∏_{τ}⟨f_i⟩_{Q,r} ∏_{τᶜ}‖f_j^r‖^{1/r}_{L(log L)^r,Q} χ_Q.
pub fn sparse_endpoint(family: &SparseFamily, fs: &[GridFunction], tau: &[usize], eta: f64, r: f64) -> Result<GridFunction> {
    let lattice = &family.lattice;
    let space = lattice.space();
    check_functions(space.n(), fs)?;
    let mut coeffs = Vec::with_capacity(family.len());
    for &id in &family.cubes {
        let q = lattice.cube(id);
        let mut c = q.mass.powf(eta / r);
        for (i, f) in fs.iter().enumerate() {
            c *= if tau.contains(&i) { avg(space, f, q, r) } else { endpoint_factor(space, f, q, r, true)? };
        }
        coeffs.push(c);
    }
    Ok(sparse_sum(family, &coeffs))
}

/// sup_{Q∋x} μ(Q)^{η/r} ∏_{τ}⟨f_i⟩_Q ∏_{τᶜ}‖f_j‖_{L(log L)^r,Q}.
pub fn maximal_endpoint(lattice: &DyadicLattice, fs: &[GridFunction], tau: &[usize], eta: f64, r: f64) -> Result<GridFunction> {
    let space = lattice.space();
    check_functions(space.n(), fs)?;
    let mut out = vec![0.0f64; space.n()];
    for q in lattice.cubes() {
        let mut c = q.mass.powf(eta / r);
        for (i, f) in fs.iter().enumerate() {
            c *= if tau.contains(&i) { avg(space, f, q, 1.0) } else { endpoint_factor(space, f, q, r, false)? };
        }
        for &x in &q.members {
            out[x] = out[x].max(c);
        }
    }
    Ok(out)
}

/// Every distinct closed ball with a realized radius, as (center, radius, members).
pub fn realized_balls(space: &DiscreteSpace) -> Vec<(usize, f64, Vec<usize>)> {
    let mut out = Vec::new();
    for c in 0..space.n() {
        for r in space.radii_from(c) {
            let b = ball(space, c, r);
            out.push((c, r, b.members));
        }
    }
    out
}

fn ball_value(space: &DiscreteSpace, fs: &[GridFunction], members: &[usize], eta: f64) -> f64 {
    let mass = space.measure(members);
    fs.iter().fold(mass.powf(eta), |acc, f| {
        acc * crate::weights::avg_on(space, f, members, mass, 1.0)
    })
}

/// Uncentered M_η: sup over closed balls B ∋ x of μ(B)^η ∏⟨|f_i|⟩_B.
pub fn frac_maximal(space: &DiscreteSpace, fs: &[GridFunction], eta: f64) -> Result<GridFunction> {
    check_functions(space.n(), fs)?;
    let mut out = vec![0.0f64; space.n()];
    for (_, _, members) in realized_balls(space) {
        let v = ball_value(space, fs, &members, eta);
        for &x in &members {
            out[x] = out[x].max(v);
        }
    }
    Ok(out)
}

/// Centered M_η: sup over r of μ(B̄(x,r))^η ∏⟨|f_i|⟩_{B̄(x,r)}.
pub fn frac_maximal_centered(space: &DiscreteSpace, fs: &[GridFunction], eta: f64) -> Result<GridFunction> {
    check_functions(space.n(), fs)?;
    Ok((0..space.n())
        .into_par_iter()
        .map(|x| {
            space
                .radii_from(x)
                .into_iter()
                .map(|r| ball_value(space, fs, &ball(space, x, r).members, eta))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// V[x·n + y] = μ(B̄(x, d(x,y))).
pub fn ball_volumes(space: &DiscreteSpace) -> Vec<f64> {
    let n = space.n();
    let mut v = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            let r = space.dist(x, y);
            v[x * n + y] = (0..n).filter(|&z| space.dist(x, z) <= r).map(|z| space.mass(z)).sum();
        }
    }
    v
}

/// Σ_{y⃗} (Σ_i V(x,y_i))^{η−m} ∏ g_i(y_i) μ(y_i), optionally skipping y⃗ ∈ S^m.
fn kernel_sum(
    space: &DiscreteSpace,
    vol: &[f64],
    x: usize,
    gs: &[&dyn Fn(usize) -> f64],
    eta: f64,
    skip: Option<&[bool]>,
) -> f64 {
    let n = space.n();
    let m = gs.len();
    let hi = vec![(n - 1) as u32; m];
    let mut total = 0.0;
    for_each_box(&hi, |ys| {
        if let Some(inside) = skip {
            if ys.iter().all(|&y| inside[y as usize]) {
                return;
            }
        }
        let mut prod = 1.0;
        let mut s = 0.0;
        for (i, &y) in ys.iter().enumerate() {
            let y = y as usize;
            prod *= gs[i](y) * space.mass(y);
            if prod == 0.0 {
                return;
            }
            s += vol[x * n + y];
        }
        total += s.powf(eta - m as f64) * prod;
    });
    total
}

/// Discrete multilinear fractional integral I_η with closed-ball kernel.
pub fn frac_integral(space: &DiscreteSpace, fs: &[GridFunction], eta: f64) -> Result<GridFunction> {
    check_functions(space.n(), fs)?;
    let vol = ball_volumes(space);
    Ok((0..space.n())
        .into_par_iter()
        .map(|x| {
            let gs: Vec<Box<dyn Fn(usize) -> f64 + '_>> = fs.iter().map(|f| Box::new(move |y: usize| f[y]) as Box<dyn Fn(usize) -> f64>).collect();
            let refs: Vec<&dyn Fn(usize) -> f64> = gs.iter().map(|g| g.as_ref()).collect();
            kernel_sum(space, &vol, x, &refs, eta, None)
        })
        .collect())
}

/// I_η applied to ((b_i(x) − b_i(y_i))^{β_i} f_i(y_i))_i.
pub fn commutator_general(
    space: &DiscreteSpace,
    bs: &[GridFunction],
    fs: &[GridFunction],
    pair: &MultiIndexPair,
    eta: f64,
) -> Result<GridFunction> {
    check_functions(space.n(), fs)?;
    check_functions(space.n(), bs)?;
    pair.validate(fs.len())?;
    let vol = ball_volumes(space);
    Ok((0..space.n())
        .into_par_iter()
        .map(|x| {
            let gs: Vec<Box<dyn Fn(usize) -> f64 + '_>> = (0..fs.len())
                .map(|i| {
                    let beta = pair.beta(i) as i32;
                    let (b, f) = (&bs[i], &fs[i]);
                    Box::new(move |y: usize| (b[x] - b[y]).powi(beta) * f[y]) as Box<dyn Fn(usize) -> f64>
                })
                .collect();
            let refs: Vec<&dyn Fn(usize) -> f64> = gs.iter().map(|g| g.as_ref()).collect();
            kernel_sum(space, &vol, x, &refs, eta, None)
        })
        .collect())
}

/// M_D^σ f(x) = sup_{Q∋x} σ(Q)⁻¹ Σ_Q |f| σ μ.
pub fn dyadic_weighted_maximal(lattice: &DyadicLattice, f: &[f64], sigma: &[f64]) -> GridFunction {
    let space = lattice.space();
    let af: Vec<f64> = f.iter().map(|v| v.abs()).collect();
    let mut out = vec![0.0f64; space.n()];
    for q in lattice.cubes() {
        let a = avg_w(space, &af, q, sigma);
        for &x in &q.members {
            out[x] = out[x].max(a);
        }
    }
    out
}

/// M_δ f = M(|f|^δ)^{1/δ} with the uncentered ball maximal function.
pub fn m_delta(space: &DiscreteSpace, f: &[f64], delta: f64) -> Result<GridFunction> {
    let fd: Vec<f64> = f.iter().map(|v| v.abs().powf(delta)).collect();
    Ok(frac_maximal(space, &[fd], 0.0)?.into_iter().map(|v| v.powf(1.0 / delta)).collect())
}

/// M♯_δ f = M♯(|f|^δ)^{1/δ}, M♯h(x) = sup_{Q∋x} μ(Q)⁻¹ Σ_Q |h − h_Q| μ.
pub fn sharp_maximal_dyadic(lattice: &DyadicLattice, f: &[f64], delta: f64) -> GridFunction {
    let space = lattice.space();
    let h: Vec<f64> = if delta == 1.0 { f.to_vec() } else { f.iter().map(|v| v.abs().powf(delta)).collect() };
    let mut out = vec![0.0f64; space.n()];
    for q in lattice.cubes() {
        let osc = crate::weights::oscillation(space, &h, q) / q.mass;
        for &x in &q.members {
            out[x] = out[x].max(osc);
        }
    }
    if delta == 1.0 {
        out
    } else {
        out.into_iter().map(|v| v.powf(1.0 / delta)).collect()
    }
}

/// T_η(f⃗)(ξ) − T_η(f⃗χ_S)(ξ) for every ξ: the kernel sum over y⃗ ∉ S^m.
pub fn truncated_integral(space: &DiscreteSpace, vol: &[f64], fs: &[GridFunction], eta: f64, inside: &[bool]) -> GridFunction {
    (0..space.n())
        .into_par_iter()
        .map(|x| {
            let gs: Vec<Box<dyn Fn(usize) -> f64 + '_>> = fs.iter().map(|f| Box::new(move |y: usize| f[y]) as Box<dyn Fn(usize) -> f64>).collect();
            let refs: Vec<&dyn Fn(usize) -> f64> = gs.iter().map(|g| g.as_ref()).collect();
            kernel_sum(space, vol, x, &refs, eta, Some(inside)).abs()
        })
        .collect()
}

fn grand_maximal_over(
    space: &DiscreteSpace,
    fs: &[GridFunction],
    eta: f64,
    dilation: f64,
    admissible: impl Fn(&[usize]) -> bool,
) -> GridFunction {
    let n = space.n();
    let vol = ball_volumes(space);
    let mut memo: HashMap<Vec<bool>, GridFunction> = HashMap::new();
    let mut out = vec![0.0f64; n];
    for (c, r, members) in realized_balls(space) {
        if !admissible(&members) {
            continue;
        }
        let big = ball(space, c, dilation * r);
        let mut inside = vec![false; n];
        for &y in &big.members {
            inside[y] = true;
        }
        let t = memo.entry(inside.clone()).or_insert_with(|| truncated_integral(space, &vol, fs, eta, &inside));
        let v = members.iter().map(|&xi| t[xi]).fold(0.0, f64::max);
        for &x in &members {
            out[x] = out[x].max(v);
        }
    }
    out
}

/// Grand maximal truncated operator of T_η = I_η with truncation C·B.
pub fn grand_maximal_truncated(space: &DiscreteSpace, fs: &[GridFunction], eta: f64, dilation: f64) -> Result<GridFunction> {
    check_functions(space.n(), fs)?;
    Ok(grand_maximal_over(space, fs, eta, dilation, |_| true))
}

/// Local variant: only balls contained in `b0`.
pub fn grand_maximal_local(space: &DiscreteSpace, fs: &[GridFunction], eta: f64, dilation: f64, b0: &[usize]) -> Result<GridFunction> {
    check_functions(space.n(), fs)?;
    let mut in_b0 = vec![false; space.n()];
    for &x in b0 {
        in_b0[x] = true;
    }
    let mut out = grand_maximal_over(space, fs, eta, dilation, |members| members.iter().all(|&y| in_b0[y]));
    for (x, v) in out.iter_mut().enumerate() {
        if !in_b0[x] {
            *v = 0.0;
        }
    }
    Ok(out)
}
