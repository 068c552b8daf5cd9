use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hölder conjugate p' = p/(p-1); infinite at p = 1.
pub fn conj(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// Independent RNG stream for trial `trial` of a run seeded with `seed`.
pub fn rng_for(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Pairwise summation; fixed split so results do not depend on thread layout.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Largest float `r <= num/den` with `r * den <= num` in floating point.
pub fn safe_ratio(num: f64, den: f64) -> f64 {
    let mut r = num / den;
    while r > 0.0 && r * den > num {
        r = f64::from_bits(r.to_bits() - 1);
    }
    r
}

pub fn binomial(n: u32, k: u32) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Iterates over all integer vectors `v` with `0 <= v[i] <= hi[i]`.
pub fn for_each_box(hi: &[u32], mut f: impl FnMut(&[u32])) {
    let mut v = vec![0u32; hi.len()];
    loop {
        f(&v);
        let mut i = 0;
        loop {
            if i == v.len() {
                return;
            }
            if v[i] < hi[i] {
                v[i] += 1;
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

/// All subsets of `set` (as sorted vectors), empty set first.
pub fn subsets(set: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(1 << set.len());
    for mask in 0u32..(1u32 << set.len()) {
        out.push(
            set.iter()
                .enumerate()
                .filter(|(j, _)| mask >> j & 1 == 1)
                .map(|(_, &i)| i)
                .collect(),
        );
    }
    out
}
