use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{Error, Result};
use crate::numeric::{orthonormal_columns, Matrix, SeededRng};

/// Parameters of a synthetic union-of-subspaces dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_views: usize,
    pub num_clusters: usize,
    pub points_per_cluster: usize,
    pub ambient_dims: Vec<usize>,
    pub subspace_dim: usize,
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_views: 3,
            num_clusters: 4,
            points_per_cluster: 40,
            ambient_dims: vec![30, 25, 20],
            subspace_dim: 4,
            noise_sigma: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_views == 0 || self.ambient_dims.len() != self.num_views {
            return Err(Error::invalid(format!(
                "num_views is {} but {} ambient dims given",
                self.num_views,
                self.ambient_dims.len()
            )));
        }
        if self.num_clusters == 0 || self.points_per_cluster == 0 {
            return Err(Error::invalid("num_clusters and points_per_cluster must be >= 1"));
        }
        if self.subspace_dim == 0 {
            return Err(Error::invalid("subspace_dim must be >= 1"));
        }
        if let Some(&f) = self.ambient_dims.iter().find(|&&f| self.subspace_dim >= f) {
            return Err(Error::invalid(format!(
                "subspace_dim {} must be smaller than every ambient dim (got {f})",
                self.subspace_dim
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.num_clusters * self.points_per_cluster
    }
}

/// Random orthonormal `F x d` basis per (cluster, view).
pub(crate) fn cluster_bases(spec: &SynthSpec, rng: &mut SeededRng) -> Result<Vec<Vec<Matrix>>> {
    (0..spec.num_clusters)
        .map(|_| {
            spec.ambient_dims
                .iter()
                .map(|&f| orthonormal_columns(&rng.normal_matrix(f, spec.subspace_dim, 1.0)))
                .collect()
        })
        .collect()
}

/// Samples are ordered cluster by cluster. Each sample draws one latent
/// coordinate `y ~ N(0, I_d)` shared by all views; view `v` observes
/// `U_c^v y + sigma * noise`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<MultiViewDataset> {
    spec.validate()?;
    let root = SeededRng::new(seed);
    let bases = cluster_bases(spec, &mut root.split(0))?;
    let mut coord_rng = root.split(1);
    let mut noise_rng = root.split(2);

    let n = spec.num_samples();
    let d = spec.subspace_dim;
    let mut views: Vec<Matrix> = spec.ambient_dims.iter().map(|&f| Matrix::zeros(f, n)).collect();
    let mut labels = Vec::with_capacity(n);
    for (c, cluster) in bases.iter().enumerate() {
        for p in 0..spec.points_per_cluster {
            let j = c * spec.points_per_cluster + p;
            let y = coord_rng.normal_matrix(d, 1, 1.0);
            for (x, u) in views.iter_mut().zip(cluster) {
                let clean = u.matmul(&y)?;
                for i in 0..x.rows() {
                    let noise = if spec.noise_sigma > 0.0 {
                        spec.noise_sigma * noise_rng.standard_normal()
                    } else {
                        0.0
                    };
                    x.set(i, j, clean.get(i, 0) + noise);
                }
            }
            labels.push(c as i64);
        }
    }
    MultiViewDataset::new("synthetic", views, labels, spec.num_clusters)
}
