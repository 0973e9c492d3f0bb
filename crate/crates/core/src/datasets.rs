//! Seeded synthetic datasets for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::DenseData;
use crate::error::{Error, Result};
use crate::matrix::DistanceMatrix;
use crate::qcore::SparseSet;

/// `n` points uniform in `[0, 1]^dim`.
pub fn uniform_cube(n: usize, dim: usize, seed: u64) -> DenseData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    DenseData::new(n, dim, values).expect("finite values")
}

/// `n` points drawn around `clusters` centers uniform in the unit cube,
/// each coordinate perturbed by `N(0, spread²)`. Points are assigned to
/// centers uniformly at random.
pub fn gaussian_clusters(n: usize, dim: usize, clusters: usize, spread: f64, seed: u64) -> Result<DenseData> {
    if clusters == 0 {
        return Err(Error::config("need at least one cluster"));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::config(format!("spread {spread}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..clusters * dim).map(|_| rng.random::<f64>()).collect();
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..clusters);
        for k in 0..dim {
            values.push(centers[c * dim + k] + noise.sample(&mut rng));
        }
    }
    DenseData::new(n, dim, values)
}

/// `n` points `t · u` on the unit-length diagonal direction `u` of
/// `R^dim`, with `t` uniform in `[0, 1]`.
pub fn line_fixture(n: usize, dim: usize, seed: u64) -> DenseData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = 1.0 / (dim.max(1) as f64).sqrt();
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let t: f64 = rng.random();
        values.extend(std::iter::repeat_n(t * u, dim));
    }
    DenseData::new(n, dim, values).expect("finite values")
}

/// `n` random sets over ids `0..universe`; each id is included
/// independently with probability `density`, and every set is nonempty.
pub fn random_sparse_sets(n: usize, universe: u32, density: f64, seed: u64) -> Vec<SparseSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut ids: Vec<u32> = (0..universe).filter(|_| rng.random::<f64>() < density).collect();
            if ids.is_empty() && universe > 0 {
                ids.push(rng.random_range(0..universe));
            }
            SparseSet::new(ids).expect("ascending ids")
        })
        .collect()
}

/// Symmetric matrix with off-diagonal entries uniform in `(0, 1]`. Such
/// matrices generally violate every q-triangle inequality.
pub fn random_dissimilarities(n: usize, seed: u64) -> DistanceMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 - rng.random::<f64>();
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    DistanceMatrix::new(n, entries).expect("valid by construction")
}
