//! Affinity construction and normalized spectral clustering.

mod kmeans;

pub use kmeans::{kmeans, kmeans_trace, KMeansOptions};

use crate::error::{Error, Result};
use crate::numeric::{sym_eigen, Matrix};

/// Symmetric, nonnegative, zero-diagonal similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(Matrix);

impl AffinityMatrix {
    /// Validates an existing matrix.
    pub fn new(a: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::invalid(format!("affinity must be square, got {}x{}", a.rows(), a.cols())));
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("affinity".into()));
        }
        if a.max_asymmetry() != 0.0 {
            return Err(Error::invalid("affinity must be exactly symmetric"));
        }
        if a.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("affinity entries must be nonnegative"));
        }
        if a.diagonal().iter().any(|&x| x != 0.0) {
            return Err(Error::invalid("affinity must have a zero diagonal"));
        }
        Ok(Self(a))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    /// Row sums.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.0.row(i).iter().sum()).collect()
    }
}

/// Cluster labels in `0..k`, plus the k-means objective and centroids in
/// the space that was clustered.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
    pub centers: Matrix,
}

/// `A = |C| + |C|^T`.
pub fn build_affinity(c: &Matrix) -> Result<AffinityMatrix> {
    if !c.is_square() {
        return Err(Error::invalid(format!("C must be square, got {}x{}", c.rows(), c.cols())));
    }
    if c.diagonal().iter().any(|&d| d != 0.0) {
        return Err(Error::invalid("C must have a zero diagonal"));
    }
    let n = c.rows();
    // Both triangles from the same sum so the result is exactly symmetric.
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = c.get(i, j).abs() + c.get(j, i).abs();
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    AffinityMatrix::new(a)
}

/// `L = I - D^{-1/2} A D^{-1/2}`; rows of degree zero use `D^{-1/2} = 0`.
pub fn normalized_laplacian(a: &AffinityMatrix) -> Matrix {
    let inv_sqrt: Vec<f64> = a
        .degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let m = a.as_matrix();
    let n = a.len();
    Matrix::from_fn(n, n, |i, j| {
        let off = inv_sqrt[i] * m.get(i, j) * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

/// Row-normalized embedding from the `k` eigenvectors of the smallest
/// Laplacian eigenvalues. Rows of isolated nodes are zero.
pub fn spectral_embedding(a: &AffinityMatrix, k: usize) -> Result<Matrix> {
    let n = a.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("spectral clustering needs 1 <= k <= N (k = {k}, N = {n})")));
    }
    let eig = sym_eigen(&normalized_laplacian(a))?;
    let degrees = a.degrees();
    let mut emb = eig.eigenvectors.select_columns(0, k);
    for (i, &deg) in degrees.iter().enumerate() {
        let row = emb.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if deg == 0.0 || norm == 0.0 {
            row.iter_mut().for_each(|x| *x = 0.0);
        } else {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(emb)
}

/// Spectral clustering into `k` groups. Isolated nodes are left out of
/// k-means and then joined to their nearest centroid.
pub fn spectral_cluster(a: &AffinityMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    spectral_cluster_with(a, k, seed, &KMeansOptions::default())
}

pub fn spectral_cluster_with(a: &AffinityMatrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusterAssignment> {
    let emb = spectral_embedding(a, k)?;
    let degrees = a.degrees();
    let connected: Vec<usize> = (0..a.len()).filter(|&i| degrees[i] > 0.0).collect();
    if connected.len() < k {
        // Too few connected nodes to seed k clusters; cluster everything.
        return kmeans(&emb, k, seed, opts);
    }
    let sub = Matrix::from_fn(connected.len(), k, |i, j| emb.get(connected[i], j));
    let fit = kmeans(&sub, k, seed, opts)?;
    let mut labels = vec![0usize; a.len()];
    let mut inertia = fit.inertia;
    for (&i, &l) in connected.iter().zip(&fit.labels) {
        labels[i] = l;
    }
    for i in (0..a.len()).filter(|&i| degrees[i] == 0.0) {
        let (c, d) = kmeans::nearest(emb.row(i), &fit.centers);
        labels[i] = c;
        inertia += d;
    }
    Ok(ClusterAssignment {
        labels,
        k,
        inertia,
        centers: fit.centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;
    use proptest::prelude::*;

    /// Connected components among nodes with at least one edge.
    fn components_with_edges(a: &Matrix) -> usize {
        let n = a.rows();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] || a.row(s).iter().all(|&w| w == 0.0) {
                continue;
            }
            count += 1;
            let mut queue = std::collections::VecDeque::from([s]);
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if a.get(u, v) > 0.0 && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }

    fn block_affinity(blocks: &[usize]) -> AffinityMatrix {
        let n: usize = blocks.iter().sum();
        let mut owner = Vec::new();
        for (b, &size) in blocks.iter().enumerate() {
            owner.extend(std::iter::repeat_n(b, size));
        }
        AffinityMatrix::new(Matrix::from_fn(n, n, |i, j| {
            if i != j && owner[i] == owner[j] {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    fn random_sparse_affinity(rng: &mut SeededRng, n: usize, density: f64) -> AffinityMatrix {
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.uniform() < density {
                    let w = rng.uniform() + 0.1;
                    a.set(i, j, w);
                    a.set(j, i, w);
                }
            }
        }
        AffinityMatrix::new(a).unwrap()
    }

    #[test]
    fn affinity_examples() {
        assert_eq!(build_affinity(&Matrix::zeros(3, 3)).unwrap().into_matrix(), Matrix::zeros(3, 3));
        let a = build_affinity(&Matrix::from_rows(&[[0.0, -2.0], [1.0, 0.0]])).unwrap();
        assert_eq!(a.as_matrix(), &Matrix::from_rows(&[[0.0, 3.0], [3.0, 0.0]]));
        assert!(build_affinity(&Matrix::identity(2)).is_err());
        assert!(build_affinity(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn laplacian_examples() {
        let l = normalized_laplacian(&AffinityMatrix::new(Matrix::zeros(3, 3)).unwrap());
        assert_eq!(l, Matrix::identity(3));
        let two = AffinityMatrix::new(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        let l = normalized_laplacian(&two);
        assert_eq!(l, Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]));
        let ev = sym_eigen(&l).unwrap().eigenvalues;
        assert!(ev[0].abs() < 1e-14 && (ev[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_eigenvalue_multiplicity_counts_components() {
        let mut rng = SeededRng::new(17);
        for trial in 0..15 {
            let n = 5 + rng.below(40);
            let a = random_sparse_affinity(&mut rng, n, 1.5 / n as f64);
            let ev = sym_eigen(&normalized_laplacian(&a)).unwrap().eigenvalues;
            let zeros = ev.iter().filter(|&&l| l.abs() < 1e-8).count();
            assert_eq!(zeros, components_with_edges(a.as_matrix()), "trial {trial}");
            assert!(ev[0] >= -1e-9);
        }
    }

    #[test]
    fn block_diagonal_recovered() {
        let a = block_affinity(&[10, 10, 10]);
        for seed in 0..10 {
            let out = spectral_cluster(&a, 3, seed).unwrap();
            for b in 0..3 {
                let first = out.labels[b * 10];
                assert!(out.labels[b * 10..(b + 1) * 10].iter().all(|&l| l == first));
            }
            let mut firsts = vec![out.labels[0], out.labels[10], out.labels[20]];
            firsts.sort_unstable();
            firsts.dedup();
            assert_eq!(firsts.len(), 3);
        }
    }

    #[test]
    fn degenerate_k() {
        let a = block_affinity(&[3, 4]);
        let one = spectral_cluster(&a, 1, 0).unwrap();
        assert!(one.labels.iter().all(|&l| l == 0));
        let all = spectral_cluster(&a, 7, 0).unwrap();
        let mut l = all.labels.clone();
        l.sort_unstable();
        assert_eq!(l, (0..7).collect::<Vec<_>>());
        assert!(all.inertia < 1e-20);
        assert!(spectral_cluster(&a, 8, 0).is_err());
    }

    #[test]
    fn isolated_nodes_are_assigned() {
        let mut m = block_affinity(&[4, 4]).into_matrix();
        let n = 9;
        let mut padded = Matrix::zeros(n, n);
        for i in 0..8 {
            for j in 0..8 {
                padded.set(i, j, m.get(i, j));
            }
        }
        m = padded;
        let out = spectral_cluster(&AffinityMatrix::new(m).unwrap(), 2, 0).unwrap();
        assert!(out.labels[8] < 2);
        assert_ne!(out.labels[0], out.labels[4]);
        // Everything isolated still yields labels.
        let empty = AffinityMatrix::new(Matrix::zeros(4, 4)).unwrap();
        assert_eq!(spectral_cluster(&empty, 2, 0).unwrap().labels.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn affinity_is_symmetric_and_nonnegative(seed in 0u64..10_000, n in 1usize..12) {
            let mut c = SeededRng::new(seed).normal_matrix(n, n, 1.0);
            c.zero_diagonal();
            let a = build_affinity(&c).unwrap();
            let m = a.as_matrix();
            prop_assert_eq!(m, &m.transpose());
            prop_assert!(m.as_slice().iter().all(|&x| x >= 0.0));
            prop_assert!(m.diagonal().iter().all(|&x| x == 0.0));
        }

        #[test]
        fn laplacian_is_psd_and_scale_invariant(seed in 0u64..10_000, scale in 0.01f64..100.0) {
            let mut rng = SeededRng::new(seed);
            let mut c = rng.normal_matrix(10, 10, 1.0);
            c.zero_diagonal();
            let a = build_affinity(&c).unwrap();
            let l = normalized_laplacian(&a);
            prop_assert!(sym_eigen(&l).unwrap().eigenvalues[0] >= -1e-9);
            let scaled = AffinityMatrix::new(a.as_matrix().scale(scale)).unwrap();
            prop_assert!(normalized_laplacian(&scaled).max_abs_diff(&l) < 1e-12);
        }
    }
}
