//! Stopping-time sparse domination, sparse augmentation and domination checks.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dyadic::{adjacent_cover, select_witnesses_minimal, AdjacentSystems, CubeId, DyadicLattice, SparseFamily};
use crate::operators::{ball_volumes, commutator_general, sparse_higher, MultiIndexPair};
use crate::space::{ball, Ball, DiscreteSpace};
use crate::util::{binomial, for_each_box, safe_ratio, subsets};
use crate::weights::{avg, avg_on, mean};
use crate::{Error, GridFunction, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominationConfig {
    pub jtilde0: i32,
    pub j0: i32,
    /// C_{j̃₀} = 2^{j̃₀+2} A₀.
    pub c_jtilde0: f64,
    /// Replaces C_{j̃₀} as the dilation of B(P) when set.
    #[serde(default)]
    pub dilation: Option<f64>,
    /// Stopping generations below this depth are replaced by the residual bound.
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "default_alpha_cap")]
    pub alpha_cap: f64,
    #[serde(default)]
    pub target_delta: Option<f64>,
    #[serde(default = "default_r")]
    pub r: f64,
}

fn default_alpha_cap() -> f64 {
    (1u64 << 20) as f64
}

fn default_r() -> f64 {
    1.0
}

impl DominationConfig {
    /// j̃₀ minimal with 2^{j̃₀} > max{3A₀, 2A₀C_adj}; j₀ minimal with j₀ > j̃₀ and 2^{j₀} > 4A₀.
    pub fn new(a0: f64, c_adj: f64) -> Self {
        let bound = (3.0 * a0).max(2.0 * a0 * c_adj);
        let mut jtilde0 = 0i32;
        while 2f64.powi(jtilde0) <= bound {
            jtilde0 += 1;
        }
        while jtilde0 > i32::MIN && 2f64.powi(jtilde0 - 1) > bound {
            jtilde0 -= 1;
        }
        let mut j0 = jtilde0 + 1;
        while 2f64.powi(j0) <= 4.0 * a0 {
            j0 += 1;
        }
        DominationConfig {
            jtilde0,
            j0,
            c_jtilde0: 2f64.powi(jtilde0 + 2) * a0,
            dilation: None,
            max_depth: None,
            alpha_cap: default_alpha_cap(),
            target_delta: None,
            r: 1.0,
        }
    }

    pub fn for_systems(systems: &AdjacentSystems) -> Self {
        Self::new(systems.space().a0(), systems.c_adj)
    }

    pub fn with_dilation(mut self, c: f64) -> Self {
        self.dilation = Some(c);
        self
    }

    pub fn with_max_depth(mut self, d: usize) -> Self {
        self.max_depth = Some(d);
        self
    }

    pub fn effective_dilation(&self) -> f64 {
        self.dilation.unwrap_or(self.c_jtilde0)
    }

    pub fn validate(&self, a0: f64, c_adj: f64) -> Result<()> {
        let bound = (3.0 * a0).max(2.0 * a0 * c_adj);
        if !(2f64.powi(self.jtilde0) > bound && 2f64.powi(self.jtilde0 - 1) <= bound) {
            return Err(Error::Input(format!("jtilde0 = {} is not minimal with 2^j > {bound}", self.jtilde0)));
        }
        if !(self.j0 > self.jtilde0 && 2f64.powi(self.j0) > 4.0 * a0) {
            return Err(Error::Input(format!("j0 = {} violates j0 > jtilde0 and 2^j0 > 4 A0", self.j0)));
        }
        if self.c_jtilde0 != 2f64.powi(self.jtilde0 + 2) * a0 {
            return Err(Error::Input("c_jtilde0 must equal 2^(jtilde0+2) A0".into()));
        }
        if !(self.effective_dilation() >= 1.0) {
            return Err(Error::Input("dilation must be at least 1".into()));
        }
        if !(self.alpha_cap >= 1.0 && self.r >= 1.0) {
            return Err(Error::Input("alpha_cap and r must be at least 1".into()));
        }
        Ok(())
    }
}

/// One processed cube P of the stopping tree.
#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub cube: CubeId,
    pub generation: i32,
    pub depth: usize,
    pub mass: f64,
    pub d_mass: f64,
    pub stopping_mass: f64,
    pub stopping: Vec<CubeId>,
    pub alpha: f64,
    pub kappa: f64,
    pub system: usize,
    pub cover: CubeId,
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct DominationCertificate {
    /// One family per adjacent system, possibly empty.
    pub families: Vec<SparseFamily>,
    pub constant: f64,
    pub kappa_max: f64,
    pub multiplicity: usize,
    pub alpha: f64,
    pub dilation: f64,
    pub truncated: bool,
    pub residual_bound: Option<f64>,
    pub stages: Vec<StageRecord>,
    pub pair: MultiIndexPair,
    pub eta: f64,
    pub r: f64,
    pub lhs: GridFunction,
    pub rhs: GridFunction,
    pub max_ratio: f64,
}

/// Σ_{y⃗∈D^m, y⃗∉S^m} K(ξ,y⃗) ∏ gμ(y_i).
fn restricted_sum(n: usize, vol: &[f64], xi: usize, gm: &[Vec<f64>], d: &[usize], s_in: Option<&[bool]>, eta: f64) -> f64 {
    let m = gm.len();
    let hi = vec![(d.len() - 1) as u32; m];
    let mut total = 0.0;
    for_each_box(&hi, |ix| {
        if let Some(inside) = s_in {
            if ix.iter().all(|&j| inside[d[j as usize]]) {
                return;
            }
        }
        let mut prod = 1.0;
        let mut s = 0.0;
        for (i, &j) in ix.iter().enumerate() {
            let y = d[j as usize];
            prod *= gm[i][y];
            if prod == 0.0 {
                return;
            }
            s += vol[xi * n + y];
        }
        total += s.powf(eta - m as f64) * prod;
    });
    total
}

struct Node {
    cube: CubeId,
    d: Vec<usize>,
    depth: usize,
}

fn dilated(space: &DiscreteSpace, lattice: &DyadicLattice, id: CubeId, c: f64, within: &[bool]) -> (Ball, Vec<usize>) {
    let q = lattice.cube(id);
    let b = ball(space, q.center, c * q.containment_ball.radius);
    let members = b.members.iter().copied().filter(|&y| within[y]).collect();
    (b, members)
}

fn mask(n: usize, set: &[usize]) -> Vec<bool> {
    let mut v = vec![false; n];
    for &x in set {
        v[x] = true;
    }
    v
}

/// Multi-indices t with t_i ≤ k_i on τ_ℓ and t_i = 0 elsewhere.
fn t_range(pair: &MultiIndexPair) -> Vec<Vec<u32>> {
    let hi: Vec<u32> = (0..pair.k.len()).map(|i| if pair.tau_ell.contains(&i) { pair.k[i] } else { 0 }).collect();
    let mut out = Vec::new();
    for_each_box(&hi, |t| out.push(t.to_vec()));
    out
}

/// Sparse majorant Σ_𝔨 Σ_{τ⊆τ_ℓ} Σ_{t_i≤k_i, i∈τ} ∏ C(k_i,t_i) A^{b,k,t}_{η,S_𝔨,τ,r}(f⃗).
pub fn dominating_rhs(
    families: &[SparseFamily],
    bs: &[GridFunction],
    fs: &[GridFunction],
    pair: &MultiIndexPair,
    eta: f64,
    r: f64,
) -> Result<GridFunction> {
    let m = fs.len();
    let n = bs.first().map(Vec::len).or(fs.first().map(Vec::len)).unwrap_or(0);
    let mut out = vec![0.0; n];
    for fam in families.iter().filter(|f| !f.is_empty()) {
        for tau in subsets(&pair.tau_ell) {
            let hi: Vec<u32> = (0..m).map(|i| if tau.contains(&i) { pair.k[i] } else { 0 }).collect();
            let mut terms: Vec<(f64, MultiIndexPair)> = Vec::new();
            for_each_box(&hi, |t| {
                let c: f64 = tau.iter().map(|&i| binomial(pair.k[i], t[i])).product();
                let sub = MultiIndexPair { k: hi.clone(), t: t.to_vec(), tau: tau.clone(), tau_ell: tau.clone() };
                terms.push((c, sub));
            });
            for (c, sub) in terms {
                let v = sparse_higher(fam, bs, fs, &sub, eta, r)?;
                for (o, x) in out.iter_mut().zip(v) {
                    *o += c * x;
                }
            }
        }
    }
    Ok(out)
}

/// Calderón–Zygmund stopping-time construction for the commutator of the discrete fractional integral.
pub fn cz_construct(
    systems: &AdjacentSystems,
    fs: &[GridFunction],
    bs: &[GridFunction],
    pair: &MultiIndexPair,
    eta: f64,
    cfg: &DominationConfig,
) -> Result<DominationCertificate> {
    let lattice0 = Arc::clone(&systems.lattices[0]);
    let space = lattice0.space();
    let n = space.n();
    let m = fs.len();
    pair.validate(m)?;
    if bs.len() != m || fs.iter().chain(bs).any(|v| v.len() != n || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Input(format!("need {m} functions and {m} symbols with {n} finite values each")));
    }
    if !(eta >= 0.0 && eta < m as f64) {
        return Err(Error::Input(format!("eta = {eta} outside [0, m)")));
    }
    cfg.validate(space.a0(), systems.c_adj)?;
    let c = cfg.effective_dilation();
    let r = cfg.r;
    let cmu0 = lattice0.c_mu0();
    let mu_min = space.masses().iter().copied().fold(f64::INFINITY, f64::min);
    let vol = ball_volumes(space);
    let ts = t_range(pair);
    let mf = m as f64;

    let mut stages = Vec::new();
    let mut assigned: Vec<BTreeMap<CubeId, Vec<usize>>> = vec![BTreeMap::new(); systems.lattices.len()];
    // cover of each processed cube, for multiplicity along chains
    let mut cover_of: HashMap<CubeId, (usize, CubeId)> = HashMap::new();
    let mut parent_of: HashMap<CubeId, Option<CubeId>> = HashMap::new();
    let mut kappa_max: f64 = 0.0;
    let mut alpha_max: f64 = 0.0;
    let mut truncated = false;
    let mut residual: Option<f64> = None;

    let top = lattice0.top();
    let all = vec![true; n];
    let (_, d_top) = dilated(space, &lattice0, top, c, &all);
    let mut queue = VecDeque::from([(Node { cube: top, d: d_top, depth: 0 }, None::<CubeId>)]);

    while let Some((node, parent)) = queue.pop_front() {
        let p = lattice0.cube(node.cube);
        let d = &node.d;
        let d_mass = space.measure(d);
        let full = dilated(space, &lattice0, node.cube, c, &all).0;
        let cover_ball = Ball { center: full.center, radius: full.radius, members: d.clone() };
        let (sys, rid) = adjacent_cover(systems, &cover_ball)?;
        let rcube = systems.lattices[sys].cube(rid);
        let centers: Vec<f64> = (0..m)
            .map(|i| if pair.tau_ell.contains(&i) { mean(space, &bs[i], rcube) } else { 0.0 })
            .collect();

        // g_{t,i} = (b_i − c_i)^{t_i} f_i and A_t = ∏⟨|g_{t,i}|^r⟩_D^{1/r}
        let gs: Vec<Vec<Vec<f64>>> = ts
            .iter()
            .map(|t| {
                (0..m)
                    .map(|i| (0..n).map(|y| (bs[i][y] - centers[i]).powi(t[i] as i32) * fs[i][y]).collect())
                    .collect()
            })
            .collect();
        let a_t: Vec<f64> = gs.iter().map(|g| g.iter().map(|gi| avg_on(space, gi, d, d_mass, r)).product()).collect();
        if a_t.iter().all(|&a| a == 0.0) {
            continue;
        }

        let ratio = (rcube.mass / d_mass).powf(mf / r);
        let at_limit = cfg.max_depth.is_some_and(|md| node.depth >= md);
        let mut stopping: Vec<CubeId> = Vec::new();
        let mut alpha = 1.0;
        let kappa;
        if at_limit {
            kappa = mf.powf(eta - mf) * (d_mass / mu_min).powf(mf - eta) * d_mass.powf(eta - eta / r) * ratio;
            truncated = true;
            residual = Some(residual.map_or(kappa, |v: f64| v.max(kappa)));
        } else {
            let d_in = mask(n, d);
            let subcubes: Vec<CubeId> = lattice0.subtree(node.cube).into_iter().filter(|&q| q != node.cube).collect();
            let sub_sets: Vec<Vec<bool>> =
                subcubes.iter().map(|&q| mask(n, &dilated(space, &lattice0, q, c, &d_in).1)).collect();
            // per t: pointwise product and restricted grand maximal value on P
            let mut prods: Vec<Vec<f64>> = Vec::with_capacity(ts.len());
            let mut maxes: Vec<Vec<f64>> = Vec::with_capacity(ts.len());
            for g in &gs {
                let gm: Vec<Vec<f64>> = g.iter().map(|gi| (0..n).map(|y| gi[y] * space.mass(y)).collect()).collect();
                let mut mp = vec![0.0f64; n];
                for &x in &p.members {
                    let single = mask(n, &[x]);
                    mp[x] = restricted_sum(n, &vol, x, &gm, d, Some(&single), eta).abs();
                }
                for (q, s_in) in subcubes.iter().zip(&sub_sets) {
                    let members = &lattice0.cube(*q).members;
                    let w = members
                        .iter()
                        .map(|&xi| restricted_sum(n, &vol, xi, &gm, d, Some(s_in), eta).abs())
                        .fold(0.0, f64::max);
                    for &x in members {
                        mp[x] = mp[x].max(w);
                    }
                }
                prods.push((0..n).map(|x| g.iter().map(|gi| gi[x].abs()).product()).collect());
                maxes.push(mp);
            }
            let scale = d_mass.powf(eta / r);
            let budget = p.mass / (4.0 * cmu0);
            let exceptional = |alpha: f64| -> Vec<bool> {
                let mut e = vec![false; n];
                for &x in &p.members {
                    e[x] = (0..ts.len()).any(|j| prods[j][x] > alpha * a_t[j] || maxes[j][x] > alpha * scale * a_t[j]);
                }
                e
            };
            let mut e = exceptional(alpha);
            while space.measure(&p.members.iter().copied().filter(|&x| e[x]).collect::<Vec<_>>()) > budget {
                alpha *= 2.0;
                if alpha > cfg.alpha_cap {
                    return Err(Error::AlphaStuck { cube: node.cube });
                }
                e = exceptional(alpha);
            }
            // maximal proper subcubes with μ(P'∩E) > μ(P')/(2C_{μ,0})
            let mut stack: Vec<CubeId> = p.children.iter().rev().copied().collect();
            while let Some(q) = stack.pop() {
                let cube = lattice0.cube(q);
                let hit: Vec<usize> = cube.members.iter().copied().filter(|&x| e[x]).collect();
                if hit.is_empty() {
                    continue;
                }
                if space.measure(&hit) > cube.mass / (2.0 * cmu0) {
                    stopping.push(q);
                } else {
                    stack.extend(cube.children.iter().rev());
                }
            }
            let peak = p.members.iter().map(|&x| space.mass(x)).fold(0.0, f64::max);
            kappa = alpha * (1.0 + mf.powf(eta - mf) * peak.powf(eta) / scale) * ratio;
        }

        let stopping_mass: f64 = stopping.iter().map(|&q| lattice0.cube(q).mass).sum();
        let covered = mask(n, &stopping.iter().flat_map(|&q| lattice0.cube(q).members.clone()).collect::<Vec<_>>());
        let e_p: Vec<usize> = p.members.iter().copied().filter(|&x| !covered[x]).collect();
        assigned[sys].entry(rid).or_default().extend(e_p);
        cover_of.insert(node.cube, (sys, rid));
        parent_of.insert(node.cube, parent);
        kappa_max = kappa_max.max(kappa);
        alpha_max = alpha_max.max(alpha);
        let d_in = mask(n, d);
        for &q in &stopping {
            let (_, dq) = dilated(space, &lattice0, q, c, &d_in);
            queue.push_back((Node { cube: q, d: dq, depth: node.depth + 1 }, Some(node.cube)));
        }
        stages.push(StageRecord {
            cube: node.cube,
            generation: p.generation,
            depth: node.depth,
            mass: p.mass,
            d_mass,
            stopping_mass,
            stopping,
            alpha,
            kappa,
            system: sys,
            cover: rid,
            truncated: at_limit,
        });
    }

    // multiplicity of P ↦ R along chains of the stopping tree
    let mut multiplicity = 0usize;
    for &cube in cover_of.keys() {
        let mut counts: HashMap<(usize, CubeId), usize> = HashMap::new();
        let mut cur = Some(cube);
        while let Some(q) = cur {
            *counts.entry(cover_of[&q]).or_default() += 1;
            cur = parent_of[&q];
        }
        multiplicity = multiplicity.max(counts.values().copied().max().unwrap_or(0));
    }

    let families: Vec<SparseFamily> = systems
        .lattices
        .iter()
        .zip(assigned)
        .map(|(l, map)| {
            let mut cubes = Vec::new();
            let mut witnesses = Vec::new();
            let mut delta: f64 = 1.0;
            for (id, mut e) in map {
                e.sort_unstable();
                delta = delta.min(safe_ratio(space.measure(&e), l.cube(id).mass));
                cubes.push(id);
                witnesses.push(e);
            }
            SparseFamily { lattice: Arc::clone(l), cubes, witnesses, delta }
        })
        .collect();

    let constant = kappa_max * multiplicity as f64;
    let lhs: GridFunction = commutator_general(space, bs, fs, pair, eta)?.into_iter().map(f64::abs).collect();
    let rhs = dominating_rhs(&families, bs, fs, pair, eta, r)?;
    let max_ratio = lhs
        .iter()
        .zip(&rhs)
        .filter(|(_, &b)| b > 0.0)
        .map(|(a, b)| a / b)
        .fold(0.0, f64::max);
    Ok(DominationCertificate {
        families,
        constant,
        kappa_max,
        multiplicity,
        alpha: alpha_max,
        dilation: c,
        truncated,
        residual_bound: residual,
        stages,
        pair: pair.clone(),
        eta,
        r,
        lhs,
        rhs,
        max_ratio,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PointFailure {
    pub point: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationReport {
    pub pass: bool,
    pub constant: f64,
    pub failures: Vec<PointFailure>,
    pub ratio_min: f64,
    pub ratio_median: f64,
    pub ratio_max: f64,
    /// lhs/rhs per point; NaN where rhs = 0.
    pub ratios: Vec<f64>,
}

/// lhs ≤ C·rhs wherever rhs > 0 (relative slack 1e−10) and lhs = 0 wherever rhs = 0.
pub fn verify_domination(constant: f64, lhs: &[f64], rhs: &[f64]) -> DominationReport {
    let mut failures = Vec::new();
    let mut ratios = Vec::with_capacity(lhs.len());
    for (x, (&a, &b)) in lhs.iter().zip(rhs).enumerate() {
        let ok = if b > 0.0 { a <= constant * b * (1.0 + 1e-10) } else { a == 0.0 };
        if !ok {
            failures.push(PointFailure { point: x, lhs: a, rhs: b });
        }
        ratios.push(if b > 0.0 { a / b } else { f64::NAN });
    }
    let mut finite: Vec<f64> = ratios.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    let (lo, med, hi) = if finite.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (finite[0], finite[finite.len() / 2], finite[finite.len() - 1])
    };
    DominationReport { pass: failures.is_empty(), constant, failures, ratio_min: lo, ratio_median: med, ratio_max: hi, ratios }
}

impl DominationCertificate {
    pub fn verify(&self) -> DominationReport {
        verify_domination(self.constant, &self.lhs, &self.rhs)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AugmentRow {
    pub cube: CubeId,
    pub worst_point: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AugmentReport {
    pub added: usize,
    pub target_delta: f64,
    /// Smallest C with |b − b_Q| ≤ C Σ_{R⊆Q} ⟨|b − b_R|⟩_R χ_R on every Q; None when every lhs is 0.
    pub empirical_c: Option<f64>,
    pub vacuous: bool,
    pub theoretical_c: f64,
    pub rows: Vec<AugmentRow>,
}

/// Cubes of the family plus, for every cube, the non-singleton maximal proper subcubes where
/// ⟨|b − b_Q|⟩_P > 2⟨|b − b_Q|⟩_Q, to a fixpoint. Sorted by id.
pub fn augmented_cubes(family: &SparseFamily, b: &[f64]) -> Result<Vec<CubeId>> {
    let lattice = &family.lattice;
    let space = lattice.space();
    if b.len() != space.n() {
        return Err(Error::Input("symbol length does not match the space".into()));
    }
    let mut in_family = vec![false; lattice.len()];
    let mut queue: VecDeque<CubeId> = VecDeque::new();
    for &q in &family.cubes {
        if !in_family[q] {
            in_family[q] = true;
            queue.push_back(q);
        }
    }
    while let Some(qid) = queue.pop_front() {
        let q = lattice.cube(qid);
        let bq = mean(space, b, q);
        let dev: Vec<f64> = b.iter().map(|v| (v - bq).abs()).collect();
        let level = 2.0 * avg(space, &dev, q, 1.0);
        let mut stack: Vec<CubeId> = q.children.iter().rev().copied().collect();
        while let Some(pid) = stack.pop() {
            let pc = lattice.cube(pid);
            if avg(space, &dev, pc, 1.0) > level {
                // ⟨|b − b_P|⟩_P = 0 on a single point, so a singleton stopping cube adds nothing
                if !in_family[pid] && pc.members.len() > 1 {
                    in_family[pid] = true;
                    queue.push_back(pid);
                }
            } else {
                stack.extend(pc.children.iter().rev());
            }
        }
    }
    Ok((0..lattice.len()).filter(|&q| in_family[q]).collect())
}

/// [`augmented_cubes`] with witnesses reselected at δ̃ = γ/(2(γ+1)), γ = family.delta.
///
/// Fails with [`Error::Starved`] when atoms make δ̃ infeasible.
pub fn augment_sparse(family: &SparseFamily, b: &[f64]) -> Result<(SparseFamily, AugmentReport)> {
    let lattice = Arc::clone(&family.lattice);
    let space = lattice.space();
    let gamma = family.delta;
    let target = gamma / (2.0 * (gamma + 1.0));
    let cubes = augmented_cubes(family, b)?;
    let added = cubes.len() - family.cubes.iter().collect::<std::collections::BTreeSet<_>>().len();
    let out = select_witnesses_minimal(Arc::clone(&lattice), &cubes, target)?;

    let osc: HashMap<CubeId, f64> = cubes
        .iter()
        .map(|&r| {
            let rc = lattice.cube(r);
            let br = mean(space, b, rc);
            let dev: Vec<f64> = b.iter().map(|v| (v - br).abs()).collect();
            (r, avg(space, &dev, rc, 1.0))
        })
        .collect();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut any_positive = false;
    for &qid in &cubes {
        let q = lattice.cube(qid);
        let bq = mean(space, b, q);
        let mut row = AugmentRow { cube: qid, worst_point: q.members[0], lhs: 0.0, rhs: 0.0 };
        let mut row_ratio = -1.0;
        for &x in &q.members {
            let lhs = (b[x] - bq).abs();
            let rhs: f64 = cubes
                .iter()
                .filter(|&&r| lattice.contains(qid, r) && lattice.cube(r).contains_point(x))
                .map(|r| osc[r])
                .sum();
            let ratio = if lhs == 0.0 {
                0.0
            } else if rhs == 0.0 {
                f64::INFINITY
            } else {
                lhs / rhs
            };
            any_positive |= lhs > 0.0;
            if ratio > row_ratio {
                row_ratio = ratio;
                row = AugmentRow { cube: qid, worst_point: x, lhs, rhs };
            }
        }
        worst = worst.max(row_ratio);
        rows.push(row);
    }
    let report = AugmentReport {
        added,
        target_delta: target,
        empirical_c: if any_positive { Some(worst) } else { None },
        vacuous: !any_positive,
        theoretical_c: 2.0 * lattice.c_mu0(),
        rows,
    };
    Ok((out, report))
}

/// Augments for each symbol in turn.
pub fn augment_sparse_multi(family: &SparseFamily, bs: &[GridFunction]) -> Result<(SparseFamily, Vec<AugmentReport>)> {
    let mut cur = family.clone();
    let mut reports = Vec::new();
    for b in bs {
        let (next, rep) = augment_sparse(&cur, b)?;
        cur = next;
        reports.push(rep);
    }
    Ok((cur, reports))
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageAudit {
    /// Smallest j with 2^j B₀ = X.
    pub j_cover: u32,
    /// Largest number of annuli 2^{j+1}B₀ ∖ 2^j B₀ (j ≤ j_cover) meeting any single point.
    pub overlap: usize,
}

/// Annulus bookkeeping around B₀ = B(Q₀).
pub fn coverage_audit(lattice: &DyadicLattice) -> CoverageAudit {
    let space = lattice.space();
    let b0 = &lattice.cube(lattice.top()).containment_ball;
    let mut j = 0u32;
    while ball(space, b0.center, 2f64.powi(j as i32) * b0.radius).members.len() < space.n() {
        j += 1;
    }
    let mut hits = vec![0usize; space.n()];
    let mut prev = mask(space.n(), &ball(space, b0.center, 0.0).members);
    for k in 0..=j {
        let cur = mask(space.n(), &ball(space, b0.center, 2f64.powi(k as i32) * b0.radius).members);
        for x in 0..space.n() {
            if cur[x] && (!prev[x] || k == 0) {
                hits[x] += 1;
            }
        }
        prev = cur;
    }
    CoverageAudit { j_cover: j, overlap: hits.into_iter().max().unwrap_or(0) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{build_shifted_adjacent, build_standard_lattice, random_sparse_family, verify_sparse};
    use crate::rng_for;
    use crate::space::{build_grid_space, uniform_grid};
    use crate::weights::random_function;
    use proptest::prelude::*;

    fn systems(n: usize) -> AdjacentSystems {
        build_shifted_adjacent(Arc::new(uniform_grid(n).unwrap()), 3).unwrap()
    }

    #[test]
    fn config_constants() {
        let c = DominationConfig::new(1.0, 4.0);
        // 2^j̃₀ > max{3, 8} gives j̃₀ = 4; j₀ = 5
        assert_eq!((c.jtilde0, c.j0), (4, 5));
        assert_eq!(c.c_jtilde0, 64.0);
        c.validate(1.0, 4.0).unwrap();
        let bad = DominationConfig { jtilde0: 5, ..c.clone() };
        assert!(bad.validate(1.0, 4.0).is_err());
        let c1 = DominationConfig::new(1.0, 1.0);
        assert_eq!((c1.jtilde0, c1.j0), (2, 3));
    }

    #[test]
    fn zero_input() {
        let sys = systems(16);
        let cfg = DominationConfig::for_systems(&sys);
        let cert = cz_construct(&sys, &[vec![0.0; 16]], &[vec![0.0; 16]], &MultiIndexPair::plain(1), 0.0, &cfg).unwrap();
        assert!(cert.families.iter().all(|f| f.is_empty()));
        assert_eq!(cert.constant, 0.0);
        assert_eq!(cert.max_ratio, 0.0);
        assert!(cert.verify().pass);
    }

    #[test]
    fn point_indicator() {
        let sys = systems(16);
        let mut f = vec![0.0; 16];
        f[5] = 1.0;
        for cfg in [DominationConfig::for_systems(&sys), DominationConfig::for_systems(&sys).with_dilation(2.0)] {
            let cert = cz_construct(&sys, &[f.clone()], &[vec![0.0; 16]], &MultiIndexPair::plain(1), 0.25, &cfg).unwrap();
            let rep = cert.verify();
            assert!(rep.pass, "{:?}", rep.failures);
            assert!(cert.max_ratio <= cert.constant);
            assert_eq!(rep.ratios.len(), 16);
            for fam in &cert.families {
                assert!(verify_sparse(fam).pass);
            }
            for s in &cert.stages {
                assert!(s.stopping_mass <= 0.5 * s.mass);
            }
        }
    }

    #[test]
    fn bilinear_commutator_is_deterministic() {
        let sys = systems(16);
        let mut rng = rng_for(21, 0);
        let fs = vec![random_function(16, &mut rng), random_function(16, &mut rng)];
        let bs = vec![random_function(16, &mut rng), random_function(16, &mut rng)];
        let pair = MultiIndexPair::new(vec![1, 0], vec![0, 0], vec![], vec![0]).unwrap();
        let cfg = DominationConfig::for_systems(&sys).with_dilation(2.0);
        let a = cz_construct(&sys, &fs, &bs, &pair, 0.5, &cfg).unwrap();
        let b = cz_construct(&sys, &fs, &bs, &pair, 0.5, &cfg).unwrap();
        assert!(a.verify().pass);
        assert_eq!(a.lhs, b.lhs);
        assert_eq!(a.rhs, b.rhs);
        assert_eq!(a.constant.to_bits(), b.constant.to_bits());
        assert_eq!(a.families.iter().map(|f| f.cubes.clone()).collect::<Vec<_>>(), b.families.iter().map(|f| f.cubes.clone()).collect::<Vec<_>>());
        for fam in &a.families {
            assert!(verify_sparse(fam).pass);
        }
    }

    #[test]
    fn depth_limit_marks_truncation() {
        let sys = systems(2);
        let mut rng = rng_for(1, 0);
        let fs = vec![random_function(2, &mut rng), random_function(2, &mut rng)];
        let bs = vec![random_function(2, &mut rng), random_function(2, &mut rng)];
        let pair = MultiIndexPair::new(vec![3, 3], vec![0, 0], vec![], vec![0, 1]).unwrap();
        let cfg = DominationConfig::for_systems(&sys).with_max_depth(0);
        let cert = cz_construct(&sys, &fs, &bs, &pair, 0.5, &cfg).unwrap();
        assert!(cert.truncated);
        assert!(cert.residual_bound.is_some());
        assert!(cert.verify().pass);
    }

    #[test]
    fn domination_report_examples() {
        let rhs = vec![1.0, 2.0, 0.0];
        assert!(verify_domination(1.0, &rhs, &rhs).pass);
        let double: Vec<f64> = vec![2.0, 4.0, 0.0];
        let rep = verify_domination(1.0, &double, &rhs);
        assert!(!rep.pass);
        assert_eq!(rep.failures.iter().map(|f| f.point).collect::<Vec<_>>(), vec![0, 1]);
        assert!(!verify_domination(1.0, &[0.0, 0.0, 1.0], &rhs).pass);
    }

    #[test]
    fn augmentation_examples() {
        let l = Arc::new(build_standard_lattice(Arc::new(uniform_grid(2).unwrap())).unwrap());
        let fam = crate::dyadic::select_witnesses(l.clone(), &[l.top()], 1.0).unwrap();
        let (out, rep) = augment_sparse(&fam, &[3.0, 3.0]).unwrap();
        assert_eq!(out.cubes, fam.cubes);
        assert!(rep.vacuous && rep.empirical_c.is_none());
        let (out, rep) = augment_sparse(&fam, &[1.0, 0.0]).unwrap();
        assert_eq!(out.cubes, fam.cubes);
        assert_eq!(rep.empirical_c, Some(1.0));

        let l32 = Arc::new(build_standard_lattice(Arc::new(uniform_grid(32).unwrap())).unwrap());
        let mut rng = rng_for(4, 0);
        let base = random_sparse_family(l32.clone(), 0.5, &mut rng);
        let b = random_function(32, &mut rng);
        let (a1, r1) = augment_sparse(&base, &b).unwrap();
        let (a2, r2) = augment_sparse(&base, &b).unwrap();
        assert!(verify_sparse(&a1).pass);
        assert_eq!(a1.delta, 0.5 / 3.0);
        assert!(base.cubes.iter().all(|q| a1.cubes.contains(q)));
        assert_eq!(r1.empirical_c.map(f64::to_bits), r2.empirical_c.map(f64::to_bits));
        assert_eq!(a1.cubes, a2.cubes);
        assert!(r1.empirical_c.unwrap() <= r1.theoretical_c);
    }

    #[test]
    fn augmentation_starves_on_atoms() {
        // top plus the singletons {0},...,{3}; b = χ_{0,1} makes [0,3] a stopping cube with no free point left
        let l = Arc::new(build_standard_lattice(Arc::new(uniform_grid(16).unwrap())).unwrap());
        let find = |ms: &[usize]| l.cubes().iter().find(|c| c.members == ms).unwrap().id;
        let ids = vec![l.top(), find(&[0]), find(&[1]), find(&[2]), find(&[3])];
        let fam = crate::dyadic::select_witnesses(l.clone(), &ids, 0.5).unwrap();
        assert!(verify_sparse(&fam).pass);
        let mut b = vec![0.0; 16];
        b[0] = 1.0;
        b[1] = 1.0;
        let cubes = augmented_cubes(&fam, &b).unwrap();
        assert_eq!(cubes.len(), 6);
        assert!(cubes.contains(&find(&[0, 1, 2, 3])));
        assert!(matches!(augment_sparse(&fam, &b), Err(Error::Starved { .. })));
    }

    #[test]
    fn coverage() {
        let l = build_standard_lattice(Arc::new(uniform_grid(16).unwrap())).unwrap();
        let a = coverage_audit(&l);
        assert!(a.overlap >= 1);
        assert_eq!(ball(l.space(), l.cube(l.top()).center, 2f64.powi(a.j_cover as i32)).members.len(), 16);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn certificates_dominate(seed in any::<u64>(), m in 1usize..3, k in 0u32..3, weighted in any::<bool>()) {
            let n = 8;
            let mut rng = rng_for(seed, 0);
            let masses: Vec<f64> = (0..n).map(|_| if weighted { rng.gen_range(1..4) as f64 } else { 1.0 }).collect();
            let sys = build_shifted_adjacent(Arc::new(build_grid_space(n, masses).unwrap()), 3).unwrap();
            let fs: Vec<Vec<f64>> = (0..m).map(|_| random_function(n, &mut rng)).collect();
            let bs: Vec<Vec<f64>> = (0..m).map(|_| random_function(n, &mut rng)).collect();
            let ks: Vec<u32> = (0..m).map(|i| if i == 0 { k } else { k.min(1) }).collect();
            let tau_ell: Vec<usize> = (0..m).filter(|&i| ks[i] > 0).collect();
            let pair = MultiIndexPair::new(ks, vec![0; m], vec![], tau_ell).unwrap();
            let eta = rng.gen_range(0.0..(m as f64 - 0.1));
            let cfg = DominationConfig::for_systems(&sys).with_dilation(2.0);
            let cert = cz_construct(&sys, &fs, &bs, &pair, eta, &cfg).unwrap();
            let rep = cert.verify();
            prop_assert!(rep.pass, "{:?}", rep.failures);
            for fam in &cert.families {
                prop_assert!(verify_sparse(fam).pass);
            }
            for s in &cert.stages {
                prop_assert!(s.stopping_mass <= 0.5 * s.mass);
            }
        }
    }

    use rand::Rng;
}
