//! Dyadic lattices, adjacent systems and sparse families.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::space::{ball, Ball, DiscreteSpace};
use crate::util::{pairwise_sum, safe_ratio};
use crate::{Error, Result};

pub type CubeId = usize;

#[derive(Clone, Debug, Serialize)]
pub struct Cube {
    pub id: CubeId,
    pub generation: i32,
    pub index: usize,
    /// Sorted point indices.
    pub members: Vec<usize>,
    pub center: usize,
    pub containment_ball: Ball,
    pub core_ball: Ball,
    pub parent: Option<CubeId>,
    pub children: Vec<CubeId>,
    pub mass: f64,
}

impl Cube {
    pub fn contains_point(&self, x: usize) -> bool {
        self.members.binary_search(&x).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatticeParams {
    pub delta: f64,
    pub a1: f64,
    #[serde(rename = "A1")]
    pub big_a1: f64,
}

#[derive(Clone, Debug)]
pub struct DyadicLattice {
    space: Arc<DiscreteSpace>,
    cubes: Vec<Cube>,
    generations: Vec<Vec<CubeId>>,
    owner: Vec<Vec<CubeId>>,
    k_offset: i32,
    params: LatticeParams,
    containment_violations: Vec<CubeId>,
    core_violations: Vec<CubeId>,
}

/// A generation given as (members, center) pieces.
type Partition = Vec<(Vec<usize>, usize)>;

impl DyadicLattice {
    fn from_partitions(
        space: Arc<DiscreteSpace>,
        parts: Vec<Partition>,
        k_offset: i32,
        params: LatticeParams,
    ) -> Result<Self> {
        let n = space.n();
        let mut cubes: Vec<Cube> = Vec::new();
        let mut generations = Vec::with_capacity(parts.len());
        let mut owner: Vec<Vec<CubeId>> = Vec::with_capacity(parts.len());
        let mut containment_violations = Vec::new();
        let mut core_violations = Vec::new();
        for (g, part) in parts.into_iter().enumerate() {
            let k = k_offset + g as i32;
            let scale = params.delta.powi(k);
            let mut own = vec![usize::MAX; n];
            let mut ids = Vec::with_capacity(part.len());
            for (index, (mut members, center)) in part.into_iter().enumerate() {
                members.sort_unstable();
                if members.is_empty() {
                    return Err(Error::Lattice(format!("empty cube in generation {k}")));
                }
                let id = cubes.len();
                for &x in &members {
                    if own[x] != usize::MAX {
                        return Err(Error::Lattice(format!("point {x} covered twice in generation {k}")));
                    }
                    own[x] = id;
                }
                let parent = if g == 0 {
                    None
                } else {
                    let p = owner[g - 1][members[0]];
                    if members.iter().any(|&x| owner[g - 1][x] != p) {
                        return Err(Error::Lattice(format!(
                            "cube {index} of generation {k} straddles two parents"
                        )));
                    }
                    Some(p)
                };
                let containment_ball = ball(&space, center, params.big_a1 * scale);
                let core_ball = ball(&space, center, params.a1 * scale);
                let inside = |b: &Ball, set: &[usize]| b.members.iter().all(|y| set.binary_search(y).is_ok());
                if !members.iter().all(|y| containment_ball.members.binary_search(y).is_ok()) {
                    containment_violations.push(id);
                }
                if !inside(&core_ball, &members) {
                    core_violations.push(id);
                }
                let mass = pairwise_sum(&members.iter().map(|&x| space.mass(x)).collect::<Vec<_>>());
                if let Some(p) = parent {
                    cubes[p].children.push(id);
                }
                cubes.push(Cube {
                    id,
                    generation: k,
                    index,
                    members,
                    center,
                    containment_ball,
                    core_ball,
                    parent,
                    children: Vec::new(),
                    mass,
                });
                ids.push(id);
            }
            if let Some(x) = own.iter().position(|&o| o == usize::MAX) {
                return Err(Error::Lattice(format!("point {x} uncovered in generation {k}")));
            }
            owner.push(own);
            generations.push(ids);
        }
        Ok(DyadicLattice {
            space,
            cubes,
            generations,
            owner,
            k_offset,
            params,
            containment_violations,
            core_violations,
        })
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn space_arc(&self) -> Arc<DiscreteSpace> {
        Arc::clone(&self.space)
    }

    pub fn params(&self) -> LatticeParams {
        self.params
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn cube(&self, id: CubeId) -> &Cube {
        &self.cubes[id]
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn min_generation(&self) -> i32 {
        self.k_offset
    }

    /// Deepest generation.
    pub fn depth(&self) -> i32 {
        self.k_offset + self.generations.len() as i32 - 1
    }

    pub fn generation(&self, k: i32) -> &[CubeId] {
        &self.generations[(k - self.k_offset) as usize]
    }

    /// Generation-k cube containing x.
    pub fn cube_at(&self, k: i32, x: usize) -> CubeId {
        self.owner[(k - self.k_offset) as usize][x]
    }

    /// Top-generation cube (the whole space for every construction here).
    pub fn top(&self) -> CubeId {
        self.generations[0][0]
    }

    /// True iff cube `a` contains cube `b` (a = b allowed).
    pub fn contains(&self, a: CubeId, b: CubeId) -> bool {
        let (ca, cb) = (&self.cubes[a], &self.cubes[b]);
        ca.generation <= cb.generation && self.cube_at(ca.generation, cb.members[0]) == a
    }

    /// `id` and all its descendants, preorder.
    pub fn subtree(&self, id: CubeId) -> Vec<CubeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            out.push(c);
            stack.extend(self.cubes[c].children.iter().rev());
        }
        out
    }

    pub fn containment_violations(&self) -> &[CubeId] {
        &self.containment_violations
    }

    pub fn core_violations(&self) -> &[CubeId] {
        &self.core_violations
    }

    /// C_{μ,0}: largest parent/child mass ratio (1 when there are no children).
    pub fn c_mu0(&self) -> f64 {
        self.cubes
            .iter()
            .filter_map(|c| c.parent.map(|p| self.cubes[p].mass / c.mass))
            .fold(1.0, f64::max)
    }

    /// Exact structural audit.
    pub fn audit(&self) -> LatticeAudit {
        let n = self.space.n();
        let total = self.space.total_mass();
        let mut partition_ok = true;
        let mut max_mass_gap: f64 = 0.0;
        for ids in &self.generations {
            let mut seen = vec![0u32; n];
            for &id in ids {
                for &x in &self.cubes[id].members {
                    seen[x] += 1;
                }
            }
            partition_ok &= seen.iter().all(|&s| s == 1);
            let sum: f64 = ids.iter().map(|&id| self.cubes[id].mass).sum();
            max_mass_gap = max_mass_gap.max((sum - total).abs());
        }
        let mut nesting_ok = true;
        let mut max_telescope_gap: f64 = 0.0;
        for c in &self.cubes {
            if c.children.is_empty() {
                continue;
            }
            let mut union: Vec<usize> = c.children.iter().flat_map(|&ch| self.cubes[ch].members.iter().copied()).collect();
            union.sort_unstable();
            nesting_ok &= union == c.members;
            let sum: f64 = c.children.iter().map(|&ch| self.cubes[ch].mass).sum();
            max_telescope_gap = max_telescope_gap.max((sum - c.mass).abs());
        }
        LatticeAudit {
            cubes: self.cubes.len(),
            generations: self.generations.len(),
            partition_ok,
            nesting_ok,
            max_mass_gap,
            max_telescope_gap,
            c_mu0: self.c_mu0(),
            containment_violations: self.containment_violations.clone(),
            core_violations: self.core_violations.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LatticeAudit {
    pub cubes: usize,
    pub generations: usize,
    pub partition_ok: bool,
    pub nesting_ok: bool,
    /// max over generations of |Σ_Q μ(Q) − μ(X)|
    pub max_mass_gap: f64,
    /// max over cubes of |Σ_children μ − μ(Q)|
    pub max_telescope_gap: f64,
    pub c_mu0: f64,
    pub containment_violations: Vec<CubeId>,
    pub core_violations: Vec<CubeId>,
}

const GRID_PARAMS: LatticeParams = LatticeParams { delta: 0.5, a1: 0.25, big_a1: 1.0 };

fn require_grid(space: &DiscreteSpace) -> Result<u32> {
    if !space.is_grid() {
        return Err(Error::Lattice("standard and shifted lattices require a grid space; use build_hk_lattice".into()));
    }
    Ok(space.n().trailing_zeros())
}

fn shifted_lattice(space: Arc<DiscreteSpace>, shift: usize) -> Result<DyadicLattice> {
    let levels = require_grid(&space)?;
    let n = space.n();
    let mut parts = Vec::with_capacity(levels as usize + 1);
    for k in 0..=levels {
        let w = n >> k;
        let mut cuts = vec![0usize];
        if k > 0 {
            cuts.extend((0..(1usize << k)).map(|j| (shift + j * w) % n));
        }
        cuts.sort_unstable();
        cuts.dedup();
        cuts.push(n);
        let part = cuts
            .windows(2)
            .map(|c| ((c[0]..c[1]).collect::<Vec<_>>(), c[0] + (c[1] - c[0]) / 2))
            .collect();
        parts.push(part);
    }
    DyadicLattice::from_partitions(space, parts, 0, GRID_PARAMS)
}

/// Standard binary lattice: generation k holds 2^k blocks of n/2^k consecutive points.
pub fn build_standard_lattice(space: Arc<DiscreteSpace>) -> Result<DyadicLattice> {
    shifted_lattice(space, 0)
}

#[derive(Clone, Debug)]
pub struct AdjacentSystems {
    pub lattices: Vec<Arc<DyadicLattice>>,
    pub c_adj: f64,
}

impl AdjacentSystems {
    pub fn space(&self) -> &DiscreteSpace {
        self.lattices[0].space()
    }
}

/// Cyclically shifted standard lattices; shift t moves every cut by ⌊n t/shifts⌋ points.
///
/// Cubes that would wrap past the last point are cut at the boundary, so every cube is an interval.
pub fn build_shifted_adjacent(space: Arc<DiscreteSpace>, shifts: usize) -> Result<AdjacentSystems> {
    require_grid(&space)?;
    let n = space.n();
    if n == 1 {
        let l = Arc::new(build_standard_lattice(space)?);
        return Ok(AdjacentSystems { lattices: vec![l], c_adj: 1.0 });
    }
    if shifts < 2 {
        return Err(Error::Input(format!("shifts = {shifts}, need at least 2")));
    }
    let lattices = (0..shifts)
        .map(|t| shifted_lattice(Arc::clone(&space), n * t / shifts).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let c_adj = covering_constant(&lattices);
    Ok(AdjacentSystems { lattices, c_adj })
}

/// Smallest cube of `lattice` containing every point of `b` (deepest on the center's chain).
fn deepest_cover(lattice: &DyadicLattice, b: &Ball) -> CubeId {
    let mut best = lattice.top();
    for k in lattice.min_generation()..=lattice.depth() {
        let id = lattice.cube_at(k, b.center);
        let q = lattice.cube(id);
        if b.members.iter().all(|&y| q.contains_point(y)) {
            best = id;
        } else {
            break;
        }
    }
    best
}

/// max_{y∈Q} d(x,y)/r, with the r = 0 convention 1 if Q = {x} and ∞ otherwise.
fn dilation_needed(space: &DiscreteSpace, q: &Cube, x: usize, r: f64) -> f64 {
    let reach = q.members.iter().map(|&y| space.dist(x, y)).fold(0.0, f64::max);
    if r == 0.0 {
        if reach == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        (reach / r).max(1.0)
    }
}

fn best_dilation(lattices: &[Arc<DyadicLattice>], x: usize, r: f64) -> f64 {
    let space = lattices[0].space();
    let b = ball(space, x, r);
    lattices
        .iter()
        .map(|l| dilation_needed(space, l.cube(deepest_cover(l, &b)), x, r))
        .fold(f64::INFINITY, f64::min)
}

/// Covering constant over every closed ball with a realized radius.
pub fn covering_constant(lattices: &[Arc<DyadicLattice>]) -> f64 {
    let space = lattices[0].space();
    (0..space.n())
        .into_par_iter()
        .map(|x| {
            space
                .radii_from(x)
                .into_iter()
                .map(|r| best_dilation(lattices, x, r))
                .fold(1.0, f64::max)
        })
        .reduce(|| 1.0, f64::max)
}

/// Errors with the first ball (by center, then radius) that needs a dilation above `bound`.
pub fn check_cover_bound(systems: &AdjacentSystems, bound: f64) -> Result<()> {
    let space = systems.space();
    for x in 0..space.n() {
        for r in space.radii_from(x) {
            if best_dilation(&systems.lattices, x, r) > bound {
                return Err(Error::Uncovered { center: x, radius: r });
            }
        }
    }
    Ok(())
}

/// Smallest cube Q (by mass, then system, generation, index) with B ⊆ Q ⊆ B(x, c_adj·r).
pub fn adjacent_cover(systems: &AdjacentSystems, b: &Ball) -> Result<(usize, CubeId)> {
    let space = systems.space();
    let mut best: Option<(f64, usize, i32, usize, CubeId)> = None;
    for (sys, l) in systems.lattices.iter().enumerate() {
        for k in l.min_generation()..=l.depth() {
            let q = l.cube(l.cube_at(k, b.center));
            if !b.members.iter().all(|&y| q.contains_point(y)) {
                break;
            }
            if dilation_needed(space, q, b.center, b.radius) > systems.c_adj {
                continue;
            }
            let key = (q.mass, sys, k, q.index, q.id);
            let better = match &best {
                None => true,
                Some(cur) => (key.0, key.1, key.2, key.3) < (cur.0, cur.1, cur.2, cur.3),
            };
            if better {
                best = Some(key);
            }
        }
    }
    best.map(|(_, sys, _, _, id)| (sys, id)).ok_or(Error::Uncovered { center: b.center, radius: b.radius })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HkMode {
    /// Requires δ ≤ (12 A₀³)⁻¹.
    Faithful,
    /// Any δ in (0,1); containment is checked after construction.
    Permissive,
}

/// Nested greedy nets with nearest-center parents; point 0 is a center in every generation.
pub fn build_hk_lattice(space: Arc<DiscreteSpace>, delta: f64, mode: HkMode) -> Result<DyadicLattice> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Lattice(format!("delta = {delta} outside (0,1)")));
    }
    let a0 = space.a0();
    if mode == HkMode::Faithful && delta > 1.0 / (12.0 * a0.powi(3)) {
        return Err(Error::Lattice(format!("delta = {delta} exceeds (12 A0^3)^-1 in faithful mode")));
    }
    let n = space.n();
    let params = LatticeParams { delta, a1: 1.0 / (3.0 * a0 * a0), big_a1: 2.0 * a0 };
    let diam = space.diameter();
    let min_d = if n > 1 { space.min_distance() } else { 1.0 };
    let mut k_min = 0i32;
    while delta.powi(k_min) <= diam {
        k_min -= 1;
    }
    while delta.powi(k_min + 1) > diam {
        k_min += 1;
    }
    let mut k_max = k_min;
    while delta.powi(k_max) > min_d {
        k_max += 1;
        if k_max - k_min > 64 {
            return Err(Error::Lattice("more than 64 generations required".into()));
        }
    }

    let mut nets: Vec<Vec<usize>> = Vec::new();
    let mut centers = vec![0usize];
    for k in k_min..=k_max {
        let s = delta.powi(k);
        for y in 0..n {
            if !centers.contains(&y) && centers.iter().all(|&c| space.dist(y, c) >= s) {
                centers.push(y);
            }
        }
        let mut sorted = centers.clone();
        sorted.sort_unstable();
        for (i, &a) in sorted.iter().enumerate() {
            if sorted[i + 1..].iter().any(|&b| space.dist(a, b) < s) {
                return Err(Error::Lattice(format!("generation {k}: net not separated")));
            }
        }
        if (0..n).any(|y| sorted.iter().all(|&c| space.dist(y, c) >= s)) {
            return Err(Error::Lattice(format!("generation {k}: net not maximal")));
        }
        nets.push(sorted);
    }
    if nets.last().map(Vec::len) != Some(n) {
        return Err(Error::Lattice(format!("generation {k_max}: finest net misses points")));
    }

    let g = nets.len();
    let mut parts: Vec<Partition> = vec![Vec::new(); g];
    parts[g - 1] = (0..n).map(|x| (vec![x], x)).collect();
    for level in (0..g - 1).rev() {
        let coarse = &nets[level];
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); coarse.len()];
        for (members, c) in &parts[level + 1] {
            let p = (0..coarse.len())
                .min_by(|&i, &j| space.dist(*c, coarse[i]).total_cmp(&space.dist(*c, coarse[j])).then(i.cmp(&j)))
                .expect("nonempty net");
            groups[p].extend(members.iter().copied());
        }
        parts[level] = groups.into_iter().zip(coarse.iter().copied()).collect();
    }
    DyadicLattice::from_partitions(space, parts, k_min, params)
}

#[derive(Clone, Debug)]
pub struct SparseFamily {
    pub lattice: Arc<DyadicLattice>,
    pub cubes: Vec<CubeId>,
    /// Parallel to `cubes`.
    pub witnesses: Vec<Vec<usize>>,
    pub delta: f64,
}

impl SparseFamily {
    pub fn empty(lattice: Arc<DyadicLattice>) -> Self {
        SparseFamily { lattice, cubes: Vec::new(), witnesses: Vec::new(), delta: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn witness_of(&self, id: CubeId) -> Option<&[usize]> {
        self.cubes.iter().position(|&c| c == id).map(|i| self.witnesses[i].as_slice())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SparseViolationKind {
    Duplicate,
    WitnessOutside,
    Overlap { other: CubeId },
    Mass { have: f64, need: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparseViolation {
    pub cube: CubeId,
    pub kind: SparseViolationKind,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparseReport {
    pub pass: bool,
    pub delta: f64,
    pub cubes: usize,
    pub violations: Vec<SparseViolation>,
}

/// Exact check of containment, disjointness and μ(E_Q) ≥ δμ(Q).
pub fn verify_sparse(family: &SparseFamily) -> SparseReport {
    let lattice = &family.lattice;
    let space = lattice.space();
    let mut violations = Vec::new();
    let mut owner: Vec<Option<CubeId>> = vec![None; space.n()];
    let mut seen = std::collections::HashSet::new();
    for (&id, e) in family.cubes.iter().zip(&family.witnesses) {
        if !seen.insert(id) {
            violations.push(SparseViolation { cube: id, kind: SparseViolationKind::Duplicate });
        }
        let q = lattice.cube(id);
        if !e.iter().all(|&x| q.contains_point(x)) {
            violations.push(SparseViolation { cube: id, kind: SparseViolationKind::WitnessOutside });
        }
        let mut first_overlap = None;
        for &x in e {
            match owner[x] {
                Some(other) if first_overlap.is_none() => first_overlap = Some(other),
                Some(_) => {}
                None => owner[x] = Some(id),
            }
        }
        if let Some(other) = first_overlap {
            violations.push(SparseViolation { cube: id, kind: SparseViolationKind::Overlap { other } });
        }
        let have = space.measure(e);
        let need = family.delta * q.mass;
        if !(have >= need) {
            violations.push(SparseViolation { cube: id, kind: SparseViolationKind::Mass { have, need } });
        }
    }
    SparseReport { pass: violations.is_empty(), delta: family.delta, cubes: family.cubes.len(), violations }
}

/// Family cubes sorted deepest generation first, then by index.
fn bottom_up(lattice: &DyadicLattice, cubes: &[CubeId]) -> Vec<CubeId> {
    let mut order: Vec<CubeId> = cubes.to_vec();
    order.sort_unstable();
    order.dedup();
    order.sort_by_key(|&c| (std::cmp::Reverse(lattice.cube(c).generation), lattice.cube(c).index));
    order
}

/// Points of `q` not claimed by witnesses already assigned inside it.
fn free_points(q: &Cube, taken: &[bool]) -> Vec<usize> {
    q.members.iter().copied().filter(|&x| !taken[x]).collect()
}

/// Canonical witnesses E_Q = Q ∖ ∪{E_R : R ⊊ Q in the family}, assigned bottom-up.
fn canonical_witnesses(lattice: &DyadicLattice, order: &[CubeId]) -> Vec<Vec<usize>> {
    let mut taken = vec![false; lattice.space().n()];
    order
        .iter()
        .map(|&id| {
            let e = free_points(lattice.cube(id), &taken);
            for &x in &e {
                taken[x] = true;
            }
            e
        })
        .collect()
}

fn finish(
    lattice: Arc<DyadicLattice>,
    order: Vec<CubeId>,
    witnesses: Vec<Vec<usize>>,
    delta: f64,
) -> Result<SparseFamily> {
    let space = lattice.space();
    let mut starved: Option<(i32, usize, CubeId, f64, f64)> = None;
    for (&id, e) in order.iter().zip(&witnesses) {
        let q = lattice.cube(id);
        let have = space.measure(e);
        let need = delta * q.mass;
        if have < need {
            let key = (q.generation, q.index, id, have, need);
            if starved.map_or(true, |s| (key.0, key.1) < (s.0, s.1)) {
                starved = Some(key);
            }
        }
    }
    if let Some((_, _, cube, have, need)) = starved {
        return Err(Error::Starved { cube, have, need });
    }
    Ok(SparseFamily { lattice, cubes: order, witnesses, delta })
}

/// Canonical witness selection; errors on the first (by generation, index) cube below δμ(Q).
pub fn select_witnesses(lattice: Arc<DyadicLattice>, cubes: &[CubeId], delta: f64) -> Result<SparseFamily> {
    let order = bottom_up(&lattice, cubes);
    let witnesses = canonical_witnesses(&lattice, &order);
    finish(lattice, order, witnesses, delta)
}

/// Largest δ for which [`select_witnesses`] succeeds on `cubes`.
pub fn max_feasible_delta(lattice: &DyadicLattice, cubes: &[CubeId]) -> f64 {
    let order = bottom_up(lattice, cubes);
    let witnesses = canonical_witnesses(lattice, &order);
    order
        .iter()
        .zip(&witnesses)
        .map(|(&id, e)| safe_ratio(lattice.space().measure(e), lattice.cube(id).mass))
        .fold(1.0, f64::min)
}

/// Bottom-up witnesses that take only as much mass as needed (lightest free points first),
/// leaving the rest to ancestors.
pub fn select_witnesses_minimal(lattice: Arc<DyadicLattice>, cubes: &[CubeId], delta: f64) -> Result<SparseFamily> {
    let order = bottom_up(&lattice, cubes);
    let space = lattice.space();
    let mut taken = vec![false; space.n()];
    let mut witnesses = Vec::with_capacity(order.len());
    for &id in &order {
        let q = lattice.cube(id);
        let mut free = free_points(q, &taken);
        free.sort_by(|&a, &b| space.mass(a).total_cmp(&space.mass(b)).then(a.cmp(&b)));
        let need = delta * q.mass;
        let mut e = Vec::new();
        let mut have = 0.0;
        for x in free {
            if have >= need {
                break;
            }
            have += space.mass(x);
            e.push(x);
        }
        if space.measure(&e) < need {
            return Err(Error::Starved { cube: id, have: space.measure(&e), need });
        }
        e.sort_unstable();
        for &x in &e {
            taken[x] = true;
        }
        witnesses.push(e);
    }
    finish(lattice, order, witnesses, delta)
}

/// Each cube kept with probability 1/2; kept cubes whose canonical witness is below δμ(Q) are dropped.
pub fn random_sparse_family<R: Rng>(lattice: Arc<DyadicLattice>, delta: f64, rng: &mut R) -> SparseFamily {
    let picks: Vec<CubeId> = (0..lattice.len()).filter(|_| rng.gen_bool(0.5)).collect();
    let order = bottom_up(&lattice, &picks);
    let space = lattice.space();
    let mut taken = vec![false; space.n()];
    let mut cubes = Vec::new();
    let mut witnesses = Vec::new();
    for id in order {
        let q = lattice.cube(id);
        let e = free_points(q, &taken);
        if space.measure(&e) >= delta * q.mass {
            for &x in &e {
                taken[x] = true;
            }
            cubes.push(id);
            witnesses.push(e);
        }
    }
    SparseFamily { lattice, cubes, witnesses, delta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;
    use crate::space::{build_grid_space, uniform_grid};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(n: usize) -> Arc<DiscreteSpace> {
        Arc::new(uniform_grid(n).unwrap())
    }

    fn members(l: &DyadicLattice, k: i32) -> Vec<Vec<usize>> {
        l.generation(k).iter().map(|&id| l.cube(id).members.clone()).collect()
    }

    #[test]
    fn standard_small() {
        let one = build_standard_lattice(grid(1)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.depth(), 0);

        let l = build_standard_lattice(grid(8)).unwrap();
        assert_eq!(l.len(), 15);
        assert_eq!(members(&l, 2), vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
        assert_eq!(l.c_mu0(), 2.0);
        assert!(l.containment_violations().is_empty());
        assert!(l.core_violations().is_empty());
        let a = l.audit();
        assert!(a.partition_ok && a.nesting_ok);
        assert_eq!(a.max_mass_gap, 0.0);
    }

    #[test]
    fn standard_rejects_explicit() {
        let s = crate::space::build_explicit_space(vec![1.0; 2], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(build_standard_lattice(Arc::new(s)), Err(Error::Lattice(_))));
    }

    /// Oracle: for every ball, the best cube over all cubes of all systems.
    fn brute_c_adj(systems: &AdjacentSystems) -> f64 {
        let space = systems.space();
        let mut worst: f64 = 1.0;
        for x in 0..space.n() {
            for r in space.radii_from(x) {
                let b = ball(space, x, r);
                let mut best = f64::INFINITY;
                for l in &systems.lattices {
                    for q in l.cubes() {
                        if b.members.iter().all(|y| q.members.contains(y)) {
                            best = best.min(dilation_needed(space, q, x, r));
                        }
                    }
                }
                worst = worst.max(best);
            }
        }
        worst
    }

    #[test]
    fn shifted_three_on_eight() {
        let sys = build_shifted_adjacent(grid(8), 3).unwrap();
        assert_eq!(sys.lattices.len(), 3);
        assert_eq!(sys.c_adj, brute_c_adj(&sys));
        assert!(sys.c_adj <= 8.0);
        for l in &sys.lattices {
            let a = l.audit();
            assert!(a.partition_ok && a.nesting_ok);
            assert!(l.containment_violations().is_empty());
        }
        // every interval of at most 4 points sits in a cube of at most 8 points of one system
        for a in 0..8 {
            for b in a..(a + 4).min(8) {
                let ok = sys.lattices.iter().any(|l| {
                    l.cubes().iter().any(|q| q.members.len() <= 8 && (a..=b).all(|y| q.contains_point(y)))
                });
                assert!(ok);
            }
        }
        check_cover_bound(&sys, sys.c_adj).unwrap();
        assert!(matches!(check_cover_bound(&sys, 1.0), Err(Error::Uncovered { .. })));
    }

    #[test]
    fn shifted_degenerate() {
        let two = build_shifted_adjacent(grid(2), 2).unwrap();
        let std = build_standard_lattice(grid(2)).unwrap();
        for l in &two.lattices {
            for k in 0..=1 {
                assert_eq!(members(l, k), members(&std, k));
            }
        }
        assert_eq!(two.c_adj, brute_c_adj(&two));
        let one = build_shifted_adjacent(grid(1), 3).unwrap();
        assert_eq!(one.lattices.len(), 1);
        assert_eq!(one.c_adj, 1.0);
        assert!(build_shifted_adjacent(grid(4), 1).is_err());
    }

    #[test]
    fn covers() {
        let sys = build_shifted_adjacent(grid(8), 3).unwrap();
        let space = sys.space();
        let whole = ball(space, 0, 1.0);
        let (s, q) = adjacent_cover(&sys, &whole).unwrap();
        assert_eq!((s, q), (0, sys.lattices[0].top()));

        let pt = ball(space, 5, 0.0);
        let (s, q) = adjacent_cover(&sys, &pt).unwrap();
        assert_eq!(s, 0);
        assert_eq!(sys.lattices[s].cube(q).members, vec![5]);

        let b = ball(space, 3, 1.0 / 8.0);
        let b = Ball { members: vec![3, 4], ..b };
        let (s, q) = adjacent_cover(&sys, &b).unwrap();
        let cube = sys.lattices[s].cube(q);
        assert!(cube.contains_point(3) && cube.contains_point(4));
        assert!(cube.mass <= 4.0);
    }

    #[test]
    fn hk_constructions() {
        let single = build_hk_lattice(grid(1), 0.5, HkMode::Permissive).unwrap();
        assert!(single.cubes().iter().all(|c| c.members == vec![0]));

        let l = build_hk_lattice(grid(8), 0.5, HkMode::Permissive).unwrap();
        let sizes: Vec<usize> = (l.min_generation()..=l.depth()).map(|k| l.generation(k).len()).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*sizes.last().unwrap(), 8);
        assert!(l.audit().partition_ok && l.audit().nesting_ok);

        let l16 = build_hk_lattice(grid(16), 0.5, HkMode::Permissive).unwrap();
        assert_eq!(l16.params().a1, 1.0 / 3.0);
        assert_eq!(l16.params().big_a1, 2.0);
        assert!(l16.containment_violations().is_empty());
        // Index tie-breaks send equidistant centers left, so some core balls spill over the left edge.
        let spilled: Vec<(i32, usize)> =
            l16.core_violations().iter().map(|&id| (l16.cube(id).generation, l16.cube(id).center)).collect();
        assert_eq!(spilled, vec![(1, 8), (2, 4), (2, 8), (2, 12)]);
        let fine = build_hk_lattice(grid(16), 1.0 / 12.0, HkMode::Faithful).unwrap();
        assert!(fine.containment_violations().is_empty());
        assert!(fine.core_violations().is_empty());
        for c in l16.cubes() {
            let k = c.generation;
            for &y in &c.members {
                assert!(c.containment_ball.members.contains(&y));
                assert!(grid(16).dist(c.center, y) <= 2.0 * 0.5f64.powi(k));
            }
        }

        assert!(build_hk_lattice(grid(8), 0.5, HkMode::Faithful).is_err());
        assert!(build_hk_lattice(grid(8), 1.0 / 12.0, HkMode::Faithful).is_ok());
    }

    #[test]
    fn sparse_basics() {
        let l = Arc::new(build_standard_lattice(grid(8)).unwrap());
        let top = l.top();
        let whole = SparseFamily { lattice: l.clone(), cubes: vec![top], witnesses: vec![(0..8).collect()], delta: 1.0 };
        assert!(verify_sparse(&whole).pass);

        let child = l.generation(1)[0];
        let bad = SparseFamily {
            lattice: l.clone(),
            cubes: vec![top, child],
            witnesses: vec![(0..8).collect(), vec![0, 1, 2, 3]],
            delta: 0.5,
        };
        let rep = verify_sparse(&bad);
        assert!(!rep.pass);
        assert!(rep.violations.iter().any(|v| matches!(v.kind, SparseViolationKind::Overlap { .. })));
    }

    #[test]
    fn witness_examples() {
        let l = Arc::new(build_standard_lattice(grid(8)).unwrap());
        let (q0, q1) = (l.top(), l.generation(1)[0]);
        let f = select_witnesses(l.clone(), &[q0, q1], 0.5).unwrap();
        assert_eq!(f.witness_of(q1).unwrap(), &[0, 1, 2, 3]);
        assert_eq!(f.witness_of(q0).unwrap(), &[4, 5, 6, 7]);
        assert!(verify_sparse(&f).pass);

        let anti: Vec<CubeId> = l.generation(2).to_vec();
        let f = select_witnesses(l.clone(), &anti, 1.0).unwrap();
        for (&id, e) in f.cubes.iter().zip(&f.witnesses) {
            assert_eq!(e, &l.cube(id).members);
        }

        let all: Vec<CubeId> = (0..l.len()).collect();
        assert!(matches!(select_witnesses(l.clone(), &all, 0.5), Err(Error::Starved { .. })));
        assert!(matches!(select_witnesses(l.clone(), &all, 0.25), Err(Error::Starved { .. })));
        // bisection oracle for the largest feasible δ
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if select_witnesses(l.clone(), &all, mid).is_ok() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_eq!(lo, 0.0);
        assert_eq!(max_feasible_delta(&l, &all), 0.0);
    }

    #[test]
    fn minimal_witnesses_leave_room() {
        let l = Arc::new(build_standard_lattice(grid(8)).unwrap());
        let chain = [l.top(), l.generation(1)[0]];
        assert!(select_witnesses(l.clone(), &chain, 0.6).is_err());
        let f = select_witnesses_minimal(l.clone(), &chain, 0.6).unwrap();
        assert!(verify_sparse(&f).pass);
        assert_eq!(f.witness_of(l.generation(1)[0]).unwrap(), &[0, 1, 2]);
    }

    proptest! {
        #[test]
        fn lattice_axioms(levels in 0u32..7, seed in any::<u64>()) {
            let n = 1usize << levels;
            let mut rng = rng_for(seed, 0);
            let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(1..9) as f64).collect();
            let l = build_standard_lattice(Arc::new(build_grid_space(n, masses).unwrap())).unwrap();
            let a = l.audit();
            prop_assert!(a.partition_ok && a.nesting_ok);
            prop_assert_eq!(a.max_mass_gap, 0.0);
            prop_assert_eq!(a.max_telescope_gap, 0.0);
            for c in l.cubes() {
                if let Some(p) = c.parent {
                    prop_assert!(l.contains(p, c.id));
                    prop_assert!(l.cube(p).mass <= a.c_mu0 * c.mass);
                }
            }
        }

        #[test]
        fn selected_families_verify(seed in any::<u64>(), delta in 0.05f64..0.9) {
            let l = Arc::new(build_standard_lattice(grid(16)).unwrap());
            let mut rng = rng_for(seed, 1);
            let f = random_sparse_family(l.clone(), delta, &mut rng);
            prop_assert!(verify_sparse(&f).pass);
            if let Ok(g) = select_witnesses(l.clone(), &f.cubes, delta) {
                prop_assert!(verify_sparse(&g).pass);
            }
            if let Ok(g) = select_witnesses_minimal(l, &f.cubes, delta) {
                prop_assert!(verify_sparse(&g).pass);
            }
        }
    }
}
