//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numerical code paths.
#![allow(dead_code)]

use comet_core::memory::MemoryEntry;
use comet_core::rng::SeededRng;

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b|` relative to the larger magnitude, with a floor for coordinates
/// that are zero on both sides.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

/// Entry `[z_short, z_medium, z_long]` distance with plain loops.
pub fn naive_distance(q: &[Vec<f64>; 3], e: &MemoryEntry, weights: [f64; 3]) -> f64 {
    let m = [&e.z_short, &e.z_medium, &e.z_long];
    let mut total = 0.0;
    for c in 0..3 {
        let mut l1 = 0.0;
        for d in 0..q[c].len() {
            l1 += (q[c][d] - m[c][d]).abs();
        }
        total += weights[c] * l1;
    }
    total
}

/// Indices of the `k` nearest entries by full sort on (distance, index).
pub fn brute_topk(
    q: &[Vec<f64>; 3],
    entries: &[MemoryEntry],
    weights: [f64; 3],
    k: usize,
) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (naive_distance(q, e, weights), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|p| p.1).collect()
}

/// Indices of the `k` stored windows of `train` closest to `query` in L1,
/// by full sort. Window `i` covers `train[i..i + len]`.
pub fn brute_knn(train: &[f64], len: usize, k: usize, query: &[f64]) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..train.len() - len)
        .map(|i| {
            let d: f64 = train[i..i + len]
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b).abs())
                .sum();
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|p| p.1).collect()
}

/// Straightforward mixture of neighbour increments: softmax of `-gamma d`,
/// blended 0.7 / 0.3 with the uniform weights.
pub fn naive_alphas(distances: &[f64], gamma: f64) -> Vec<f64> {
    let k = distances.len() as f64;
    let e: Vec<f64> = distances.iter().map(|d| (-gamma * d).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| 0.7 * v / z + 0.3 / k).collect()
}

/// A tiny one-anchor training problem with a fixed memory and neighbour set.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub dim: usize,
    pub lens: [usize; 3],
    pub series: Vec<f64>,
    /// Number of true values visible; the target is `series[anchor]`.
    pub anchor: usize,
    pub entries: Vec<MemoryEntry>,
    pub k: usize,
    pub delta: f64,
    /// Encoders (row-major, short, medium, long), `log_w`, `log_gamma`.
    pub params: Vec<f64>,
}

impl GradInstance {
    pub fn random(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let dim = 1 + (seed % 2) as usize;
        let lens = [2, 3, 4];
        let n_entries = 4 + rng.below(7);
        let k = 1 + rng.below(3);
        let k = k.min(n_entries);
        let series: Vec<f64> = (0..7).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let entry = |rng: &mut SeededRng| {
            let mut v = || {
                (0..dim)
                    .map(|_| rng.uniform_in(-1.0, 1.0))
                    .collect::<Vec<_>>()
            };
            let (z_short, z_medium, z_long, dz) = (v(), v(), v(), v());
            MemoryEntry {
                z_short,
                z_medium,
                z_long,
                dz,
                dx: rng.uniform_in(-1.5, 1.5),
            }
        };
        let entries: Vec<MemoryEntry> = (0..n_entries).map(|_| entry(&mut rng)).collect();
        let mut params: Vec<f64> = Vec::new();
        for len in lens {
            for _ in 0..dim * len {
                params.push(rng.uniform_in(-0.8, 0.8));
            }
        }
        for _ in 0..3 {
            params.push(rng.uniform_in(-0.5, 0.5));
        }
        params.push(rng.uniform_in(-0.5, 1.0));
        Self {
            dim,
            lens,
            series,
            anchor: 5,
            entries,
            k,
            delta: if seed.is_multiple_of(3) { 0.1 } else { 1.0 },
            params,
        }
    }

    pub fn split<'a>(&self, p: &'a [f64]) -> ([&'a [f64]; 3], [f64; 3], f64) {
        let mut off = 0;
        let mut mats: [&[f64]; 3] = [&[], &[], &[]];
        for (c, len) in self.lens.iter().enumerate() {
            mats[c] = &p[off..off + self.dim * len];
            off += self.dim * len;
        }
        (mats, [p[off], p[off + 1], p[off + 2]], p[off + 3])
    }

    pub fn encode(&self, p: &[f64]) -> [Vec<f64>; 3] {
        let (mats, _, _) = self.split(p);
        let mut out: [Vec<f64>; 3] = Default::default();
        for c in 0..3 {
            let len = self.lens[c];
            let window = &self.series[self.anchor - len..self.anchor];
            out[c] = (0..self.dim)
                .map(|d| (0..len).map(|l| mats[c][d * len + l] * window[l]).sum())
                .collect();
        }
        out
    }

    /// Neighbour set at the stored parameters.
    pub fn neighbors(&self) -> Vec<usize> {
        let (_, log_w, _) = self.split(&self.params);
        brute_topk(
            &self.encode(&self.params),
            &self.entries,
            log_w.map(f64::exp),
            self.k,
        )
    }

    /// Loss at parameters `p` with the neighbour set held at `neighbors`.
    pub fn loss(&self, p: &[f64], neighbors: &[usize]) -> f64 {
        let (_, log_w, log_gamma) = self.split(p);
        let q = self.encode(p);
        let w = log_w.map(f64::exp);
        let d: Vec<f64> = neighbors
            .iter()
            .map(|i| naive_distance(&q, &self.entries[*i], w))
            .collect();
        let alphas = naive_alphas(&d, log_gamma.exp());
        let inc: f64 = alphas
            .iter()
            .zip(neighbors)
            .map(|(a, i)| a * self.entries[*i].dx)
            .sum();
        let pred = self.series[self.anchor - 1] + inc;
        huber(pred - self.series[self.anchor], self.delta)
    }
}
