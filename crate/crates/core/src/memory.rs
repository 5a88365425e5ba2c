//! Transition memory: construction from ground truth, weighted-L1 retrieval
//! and soft aggregation of the retrieved increments.

use std::cmp::Ordering;

use crate::encoder::{encode_multiscale, BehaviorEncoding, EncoderParams};
use crate::error::{CometError, Result};
use crate::linalg::l1_distance;
use crate::series::WindowSpec;

/// Weight on the softmax component of the neighbour weights.
pub const MIX_SOFTMAX: f64 = 0.7;
/// Weight on the uniform component; each neighbour receives at least `MIX_UNIFORM / K`.
pub const MIX_UNIFORM: f64 = 0.3;

pub const DEFAULT_K: usize = 8;

/// One stored transition, owned form.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub z_short: Vec<f64>,
    pub z_medium: Vec<f64>,
    pub z_long: Vec<f64>,
    /// `z_short(i) - z_short(i-1)`.
    pub dz: Vec<f64>,
    /// `x_{i+1} - x_i`.
    pub dx: f64,
}

/// Borrowed view of an entry inside a [`MemoryStore`].
#[derive(Debug, Clone, Copy)]
pub struct EntryRef<'a> {
    pub z_short: &'a [f64],
    pub z_medium: &'a [f64],
    pub z_long: &'a [f64],
    pub dz: &'a [f64],
    pub dx: f64,
}

impl EntryRef<'_> {
    pub fn scales(&self) -> [&[f64]; 3] {
        [self.z_short, self.z_medium, self.z_long]
    }

    pub fn to_owned(&self) -> MemoryEntry {
        MemoryEntry {
            z_short: self.z_short.to_vec(),
            z_medium: self.z_medium.to_vec(),
            z_long: self.z_long.to_vec(),
            dz: self.dz.to_vec(),
            dx: self.dx,
        }
    }
}

/// Entries are stored contiguously as `4D + 1` values each, in the order
/// `z_short, z_medium, z_long, dz, dx`, matching the model file layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    dim: usize,
    data: Vec<f64>,
    max_abs_dx: f64,
}

impl MemoryStore {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            max_abs_dx: 0.0,
        }
    }

    pub fn from_entries(dim: usize, entries: &[MemoryEntry]) -> Result<Self> {
        let mut store = Self::empty(dim);
        for e in entries {
            store.push(e)?;
        }
        Ok(store)
    }

    pub(crate) fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        let stride = 4 * dim + 1;
        if !data.len().is_multiple_of(stride) {
            return Err(CometError::DimensionMismatch {
                context: "memory data",
                expected: stride,
                actual: data.len() % stride,
            });
        }
        let max_abs_dx = data
            .chunks_exact(stride)
            .map(|c| c[stride - 1].abs())
            .fold(0.0, f64::max);
        Ok(Self {
            dim,
            data,
            max_abs_dx,
        })
    }

    pub fn push(&mut self, e: &MemoryEntry) -> Result<()> {
        for v in [&e.z_short, &e.z_medium, &e.z_long, &e.dz] {
            if v.len() != self.dim {
                return Err(CometError::DimensionMismatch {
                    context: "memory entry",
                    expected: self.dim,
                    actual: v.len(),
                });
            }
        }
        self.data.extend_from_slice(&e.z_short);
        self.data.extend_from_slice(&e.z_medium);
        self.data.extend_from_slice(&e.z_long);
        self.data.extend_from_slice(&e.dz);
        self.data.push(e.dx);
        self.max_abs_dx = self.max_abs_dx.max(e.dx.abs());
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn stride(&self) -> usize {
        4 * self.dim + 1
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entry(&self, i: usize) -> EntryRef<'_> {
        let d = self.dim;
        let c = &self.data[i * self.stride()..(i + 1) * self.stride()];
        EntryRef {
            z_short: &c[..d],
            z_medium: &c[d..2 * d],
            z_long: &c[2 * d..3 * d],
            dz: &c[3 * d..4 * d],
            dx: c[4 * d],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = EntryRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.entry(i))
    }

    pub(crate) fn flat(&self) -> &[f64] {
        &self.data
    }

    /// Largest `|dx|` over every stored entry; bounds any single predicted increment.
    pub fn max_abs_dx(&self) -> f64 {
        self.max_abs_dx
    }
}

/// Builds one entry per one-based index `i` in `long_len + 1 ..= n - 1`, so
/// the store holds `n - long_len - 1` entries.
pub fn build_memory(
    values: &[f64],
    encoder: &EncoderParams,
    spec: &WindowSpec,
) -> Result<MemoryStore> {
    let n = values.len();
    if n < spec.long_len + 2 {
        return Err(CometError::SeriesTooShort(format!(
            "memory construction needs at least {} values, have {n}",
            spec.long_len + 2
        )));
    }
    let dim = encoder.latent_dim();
    let mut store = MemoryStore::empty(dim);
    store.data.reserve((n - spec.long_len - 1) * store.stride());
    let mut prev = encode_multiscale(values, spec.long_len, encoder, spec)?;
    for i in spec.long_len + 1..n {
        let cur = encode_multiscale(values, i, encoder, spec)?;
        let dz = cur
            .z_short
            .iter()
            .zip(&prev.z_short)
            .map(|(a, b)| a - b)
            .collect();
        let dx = values[i] - values[i - 1];
        let BehaviorEncoding {
            z_short,
            z_medium,
            z_long,
        } = cur.clone();
        store.push(&MemoryEntry {
            z_short,
            z_medium,
            z_long,
            dz,
            dx,
        })?;
        prev = cur;
    }
    Ok(store)
}

/// Learned retrieval parameters. Distance weights and the sharpness are kept
/// as logarithms so that any real value maps to a strictly positive weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalParams {
    pub log_w: [f64; 3],
    pub log_gamma: f64,
    pub k: usize,
}

impl RetrievalParams {
    pub fn new(k: usize) -> Self {
        Self {
            log_w: [0.0; 3],
            log_gamma: 0.0,
            k,
        }
    }

    pub fn from_effective(weights: [f64; 3], gamma: f64, k: usize) -> Self {
        Self {
            log_w: weights.map(f64::ln),
            log_gamma: gamma.ln(),
            k,
        }
    }

    pub fn weights(&self) -> [f64; 3] {
        self.log_w.map(f64::exp)
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHit {
    pub entry_index: usize,
    pub distance: f64,
    /// Mixed weight; zero until [`aggregate`] fills it in.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub dz_mem: Vec<f64>,
    pub dx_mem: f64,
    pub hits: Vec<NeighborHit>,
}

fn check_dim(query: &BehaviorEncoding, dim: usize) -> Result<()> {
    for z in query.scales() {
        if z.len() != dim {
            return Err(CometError::DimensionMismatch {
                context: "query encoding",
                expected: dim,
                actual: z.len(),
            });
        }
    }
    Ok(())
}

#[inline]
fn distance_with(weights: &[f64; 3], query: &BehaviorEncoding, entry: &EntryRef<'_>) -> f64 {
    weights[0] * l1_distance(&query.z_short, entry.z_short)
        + weights[1] * l1_distance(&query.z_medium, entry.z_medium)
        + weights[2] * l1_distance(&query.z_long, entry.z_long)
}

pub fn weighted_l1_distance(
    query: &BehaviorEncoding,
    entry: &EntryRef<'_>,
    params: &RetrievalParams,
) -> Result<f64> {
    check_dim(query, entry.z_short.len())?;
    Ok(distance_with(&params.weights(), query, entry))
}

fn hit_order(a: &NeighborHit, b: &NeighborHit) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.entry_index.cmp(&b.entry_index))
}

/// The `k` entries closest to `query`, ordered by `(distance, entry_index)`.
pub fn topk(
    query: &BehaviorEncoding,
    store: &MemoryStore,
    params: &RetrievalParams,
) -> Result<Vec<NeighborHit>> {
    topk_excluding(query, store, params, None)
}

/// As [`topk`], skipping entry `exclude` if given. Training uses this to keep
/// an anchor from retrieving its own transition.
pub fn topk_excluding(
    query: &BehaviorEncoding,
    store: &MemoryStore,
    params: &RetrievalParams,
    exclude: Option<usize>,
) -> Result<Vec<NeighborHit>> {
    let k = params.k;
    let available = store.len() - usize::from(exclude.is_some_and(|e| e < store.len()));
    if k == 0 || available < k {
        return Err(CometError::MemoryTooSmall {
            count: available,
            k,
        });
    }
    check_dim(query, store.dim())?;
    let weights = params.weights();
    let mut best: Vec<NeighborHit> = Vec::with_capacity(k + 1);
    for (i, entry) in store.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let hit = NeighborHit {
            entry_index: i,
            distance: distance_with(&weights, query, &entry),
            alpha: 0.0,
        };
        if best.len() == k && hit_order(&hit, &best[k - 1]) != Ordering::Less {
            continue;
        }
        let pos = best.partition_point(|b| hit_order(b, &hit) == Ordering::Less);
        best.insert(pos, hit);
        best.truncate(k);
    }
    Ok(best)
}

/// Softmax over `-gamma * d` restricted to the hits, mixed with a uniform
/// distribution, then used to average the stored increments.
pub fn aggregate(
    hits: &[NeighborHit],
    store: &MemoryStore,
    params: &RetrievalParams,
) -> AggregateResult {
    let alphas = mixed_weights(hits.iter().map(|h| h.distance), params.gamma());
    let mut dz_mem = vec![0.0; store.dim()];
    let mut dx_mem = 0.0;
    let mut out_hits = Vec::with_capacity(hits.len());
    for (hit, &alpha) in hits.iter().zip(&alphas) {
        let e = store.entry(hit.entry_index);
        for (acc, v) in dz_mem.iter_mut().zip(e.dz) {
            *acc += alpha * v;
        }
        dx_mem += alpha * e.dx;
        out_hits.push(NeighborHit { alpha, ..*hit });
    }
    AggregateResult {
        dz_mem,
        dx_mem,
        hits: out_hits,
    }
}

/// Plain softmax of `-gamma * d` with max-subtraction.
pub fn softmax_weights(distances: impl Iterator<Item = f64> + Clone, gamma: f64) -> Vec<f64> {
    let d_min = distances.clone().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = distances.map(|d| (-gamma * (d - d_min)).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn mixed_weights(distances: impl Iterator<Item = f64> + Clone, gamma: f64) -> Vec<f64> {
    let soft = softmax_weights(distances, gamma);
    let floor = MIX_UNIFORM / soft.len() as f64;
    soft.into_iter().map(|s| MIX_SOFTMAX * s + floor).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rng::SeededRng;

    fn entry(zs: &[f64], zm: &[f64], zl: &[f64], dx: f64) -> MemoryEntry {
        MemoryEntry {
            z_short: zs.to_vec(),
            z_medium: zm.to_vec(),
            z_long: zl.to_vec(),
            dz: vec![0.0; zs.len()],
            dx,
        }
    }

    fn random_store(rng: &mut SeededRng, n: usize, dim: usize) -> MemoryStore {
        let mut store = MemoryStore::empty(dim);
        for _ in 0..n {
            let v = |rng: &mut SeededRng| (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            store
                .push(&MemoryEntry {
                    z_short: v(rng),
                    z_medium: v(rng),
                    z_long: v(rng),
                    dz: v(rng),
                    dx: rng.uniform_in(-0.1, 0.1),
                })
                .unwrap();
        }
        store
    }

    fn ramp(n: usize) -> Vec<f64> {
        (1..=n).map(|t| t as f64).collect()
    }

    #[test]
    fn memory_size_boundary() {
        let spec = WindowSpec::default();
        let enc = EncoderParams::init(2, &spec, &mut SeededRng::new(0));
        let store = build_memory(&vec![1.0; 62], &enc, &spec).unwrap();
        assert_eq!(store.len(), 1);
        assert!(build_memory(&vec![1.0; 61], &enc, &spec).is_err());
        let store = build_memory(&vec![1.0; 500], &enc, &spec).unwrap();
        assert_eq!(store.len(), 500 - 61);
    }

    #[test]
    fn constant_series_has_zero_increments() {
        let spec = WindowSpec::default();
        let enc = EncoderParams::init(4, &spec, &mut SeededRng::new(3));
        let store = build_memory(&vec![2.5; 100], &enc, &spec).unwrap();
        for e in store.iter() {
            assert_eq!(e.dx, 0.0);
            assert!(e.dz.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn ramp_with_summing_encoder() {
        let spec = WindowSpec::default();
        let enc = EncoderParams {
            short: Matrix::from_vec(1, 12, vec![1.0; 12]).unwrap(),
            medium: Matrix::zeros(1, 24),
            long: Matrix::zeros(1, 60),
        };
        let values = ramp(100);
        let store = build_memory(&values, &enc, &spec).unwrap();
        for (k, e) in store.iter().enumerate() {
            let i = spec.long_len + 1 + k;
            // naive: sum of x_{i-11..i} with x_t = t
            let expected: f64 = (i - 11..=i).map(|t| t as f64).sum();
            assert_eq!(e.z_short[0], expected);
            assert_eq!(e.dx, 1.0);
            assert_eq!(e.dz[0], 12.0);
        }
    }

    #[test]
    fn distance_examples() {
        let params = RetrievalParams::from_effective([1.0, 0.5, 2.0], 1.0, 1);
        let q = BehaviorEncoding {
            z_short: vec![1.0],
            z_medium: vec![2.0],
            z_long: vec![3.0],
        };
        let mut store = MemoryStore::empty(1);
        store.push(&entry(&[0.0], &[0.0], &[0.0], 0.0)).unwrap();
        store.push(&entry(&[1.0], &[2.0], &[3.0], 0.0)).unwrap();
        let d = weighted_l1_distance(&q, &store.entry(0), &params).unwrap();
        assert!((d - 8.0).abs() < 1e-12);
        assert_eq!(
            weighted_l1_distance(&q, &store.entry(1), &params).unwrap(),
            0.0
        );

        let doubled = RetrievalParams::from_effective([2.0, 1.0, 4.0], 1.0, 1);
        let d2 = weighted_l1_distance(&q, &store.entry(0), &doubled).unwrap();
        assert!((d2 - 2.0 * d).abs() < 1e-12);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = SeededRng::new(9);
        let store = random_store(&mut rng, 2, 3);
        let params = RetrievalParams::from_effective([0.3, 1.7, 0.9], 1.0, 1);
        let a = store.entry(0);
        let b = store.entry(1);
        let qa = BehaviorEncoding {
            z_short: a.z_short.to_vec(),
            z_medium: a.z_medium.to_vec(),
            z_long: a.z_long.to_vec(),
        };
        let qb = BehaviorEncoding {
            z_short: b.z_short.to_vec(),
            z_medium: b.z_medium.to_vec(),
            z_long: b.z_long.to_vec(),
        };
        let dab = weighted_l1_distance(&qa, &b, &params).unwrap();
        let dba = weighted_l1_distance(&qb, &a, &params).unwrap();
        assert_eq!(dab, dba);
        assert!(dab > 0.0);
    }

    #[test]
    fn topk_exhaustive_and_exact_match() {
        let mut rng = SeededRng::new(4);
        let store = random_store(&mut rng, 10, 2);
        let params = RetrievalParams::new(10);
        let e = store.entry(6);
        let q = BehaviorEncoding {
            z_short: e.z_short.to_vec(),
            z_medium: e.z_medium.to_vec(),
            z_long: e.z_long.to_vec(),
        };
        let hits = topk(&q, &store, &params).unwrap();
        assert_eq!(hits.len(), 10);
        assert_eq!(hits[0].entry_index, 6);
        assert_eq!(hits[0].distance, 0.0);
        assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));

        let excl = topk_excluding(&q, &store, &RetrievalParams::new(9), Some(6)).unwrap();
        assert!(excl.iter().all(|h| h.entry_index != 6));
        assert!(matches!(
            topk_excluding(&q, &store, &params, Some(6)),
            Err(CometError::MemoryTooSmall { count: 9, k: 10 })
        ));
    }

    #[test]
    fn topk_breaks_ties_by_index() {
        let mut store = MemoryStore::empty(1);
        for dx in [0.1, 0.2, 0.3, 0.4] {
            store.push(&entry(&[1.0], &[1.0], &[1.0], dx)).unwrap();
        }
        let q = BehaviorEncoding::zeros(1);
        let hits = topk(&q, &store, &RetrievalParams::new(2)).unwrap();
        let idx: Vec<usize> = hits.iter().map(|h| h.entry_index).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    fn hits_from(distances: &[f64]) -> Vec<NeighborHit> {
        distances
            .iter()
            .enumerate()
            .map(|(i, &d)| NeighborHit {
                entry_index: i,
                distance: d,
                alpha: 0.0,
            })
            .collect()
    }

    #[test]
    fn aggregate_worked_example() {
        let mut store = MemoryStore::empty(1);
        for dx in [1.0, 2.0, 3.0] {
            store.push(&entry(&[0.0], &[0.0], &[0.0], dx)).unwrap();
        }
        let params = RetrievalParams::new(3);
        let agg = aggregate(&hits_from(&[0.0, 1.0, 2.0]), &store, &params);
        let alphas: Vec<f64> = agg.hits.iter().map(|h| h.alpha).collect();
        for (a, want) in alphas.iter().zip([0.5657, 0.2713, 0.1630]) {
            assert!((a - want).abs() < 1e-4, "{alphas:?}");
        }
        assert!((agg.dx_mem - 1.5973).abs() < 1e-4, "{}", agg.dx_mem);
    }

    #[test]
    fn aggregate_degenerate_cases() {
        let mut store = MemoryStore::empty(1);
        for dx in [0.5, -0.25, 0.75, 1.0] {
            store.push(&entry(&[0.0], &[0.0], &[0.0], dx)).unwrap();
        }
        // equal distances, including all-zero
        for d in [0.0, 3.0] {
            let agg = aggregate(&hits_from(&[d; 4]), &store, &RetrievalParams::new(4));
            for h in &agg.hits {
                assert!((h.alpha - 0.25).abs() < 1e-15);
            }
        }
        // K = 1
        let agg = aggregate(&hits_from(&[5.0]), &store, &RetrievalParams::new(1));
        assert_eq!(agg.hits[0].alpha, 1.0);
        assert_eq!(agg.dx_mem, 0.5);
        // very sharp weighting
        let sharp = RetrievalParams::from_effective([1.0; 3], 1e6, 4);
        let agg = aggregate(&hits_from(&[0.1, 0.2, 0.3, 0.4]), &store, &sharp);
        assert!((agg.hits[0].alpha - (0.7 + 0.3 / 4.0)).abs() < 1e-12);
        for h in &agg.hits[1..] {
            assert!((h.alpha - 0.075).abs() < 1e-12);
        }
        // huge distances do not overflow
        let agg = aggregate(
            &hits_from(&[1e300, 2e300]),
            &store,
            &RetrievalParams::new(2),
        );
        assert!(agg.dx_mem.is_finite());
    }

    #[test]
    fn aggregate_is_convex() {
        let mut rng = SeededRng::new(21);
        for _ in 0..200 {
            let store = random_store(&mut rng, 30, 2);
            let k = 1 + rng.below(10);
            let params = RetrievalParams {
                log_w: [0.0; 3],
                log_gamma: rng.uniform_in(-3.0, 3.0),
                k,
            };
            let q = BehaviorEncoding {
                z_short: vec![rng.uniform_in(-1.0, 1.0), 0.0],
                z_medium: vec![0.0, rng.uniform_in(-1.0, 1.0)],
                z_long: vec![0.0, 0.0],
            };
            let hits = topk(&q, &store, &params).unwrap();
            let agg = aggregate(&hits, &store, &params);
            let dxs: Vec<f64> = hits.iter().map(|h| store.entry(h.entry_index).dx).collect();
            let lo = dxs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = dxs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(agg.dx_mem >= lo - 1e-15 && agg.dx_mem <= hi + 1e-15);
            assert!(agg.dx_mem.abs() <= store.max_abs_dx() + 1e-15);
            let sum: f64 = agg.hits.iter().map(|h| h.alpha).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
