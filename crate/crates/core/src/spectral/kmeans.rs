use rayon::prelude::*;

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves more than this (squared distance).
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-8,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center (lowest index on ties) and its distance.
pub(crate) fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &Matrix, k: usize, rng: &mut SeededRng) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.below(n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            rng.below(n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centers.row(c)));
        }
    }
    centers
}

fn assign(points: &Matrix, centers: &Matrix, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, l) in labels.iter_mut().enumerate() {
        let (c, d) = nearest(points.row(i), centers);
        *l = c;
        inertia += d;
    }
    inertia
}

/// Gives every empty cluster the point farthest from its centroid within
/// the currently largest cluster.
fn repair_empty(points: &Matrix, centers: &mut Matrix, labels: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).expect("k >= 1");
        if sizes[largest] < 2 {
            return;
        }
        let far = (0..labels.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                let da = sq_dist(points.row(a), centers.row(largest));
                let db = sq_dist(points.row(b), centers.row(largest));
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("non-empty cluster");
        labels[far] = empty;
        centers.row_mut(empty).copy_from_slice(points.row(far));
    }
}

fn update_centers(points: &Matrix, labels: &[usize], centers: &Matrix) -> Matrix {
    let (k, dim) = centers.shape();
    let mut sums = Matrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from_slice(centers.row(c));
        } else {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|s| *s *= inv);
        }
    }
    sums
}

fn check_monotone(prev: f64, next: f64) -> Result<()> {
    if next > prev + 1e-9 * prev.max(1.0) {
        return Err(Error::Invariant(format!(
            "k-means inertia increased from {prev:e} to {next:e}"
        )));
    }
    Ok(())
}

/// One k-means++ seeded Lloyd run; also returns the inertia after every
/// assignment step.
pub(crate) fn lloyd(points: &Matrix, k: usize, rng: &mut SeededRng, opts: &KMeansOptions) -> Result<(ClusterAssignment, Vec<f64>)> {
    let mut centers = plus_plus_seeds(points, k, rng);
    let mut labels = vec![0usize; points.rows()];
    let mut trace = Vec::new();
    let mut inertia = assign(points, &centers, &mut labels);
    trace.push(inertia);
    for _ in 0..opts.max_iter {
        repair_empty(points, &mut centers, &mut labels, k);
        let next = update_centers(points, &labels, &centers);
        let shift = (0..k)
            .map(|c| sq_dist(next.row(c), centers.row(c)))
            .fold(0.0, f64::max);
        centers = next;
        let new_inertia = assign(points, &centers, &mut labels);
        check_monotone(inertia, new_inertia)?;
        inertia = new_inertia;
        trace.push(inertia);
        if shift < opts.tol {
            break;
        }
    }
    Ok((
        ClusterAssignment {
            labels,
            k,
            inertia,
            centers,
        },
        trace,
    ))
}

/// A single seeded Lloyd run (no restarts) with its inertia trace.
pub fn kmeans_trace(points: &Matrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<(ClusterAssignment, Vec<f64>)> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= k <= N (k = {k}, N = {n})")));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    lloyd(points, k, &mut SeededRng::new(seed), opts)
}

/// k-means on the rows of `points`. Restarts run in parallel with
/// independent RNG streams; the lowest inertia wins, ties to the earliest
/// restart.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusterAssignment> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= k <= N (k = {k}, N = {n})")));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("k-means needs at least one restart"));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let root = SeededRng::new(seed);
    let runs: Vec<ClusterAssignment> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| lloyd(points, k, &mut root.split(r as u64), opts).map(|(a, _)| a))
        .collect::<Result<_>>()?;
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.inertia.total_cmp(&b.inertia).then(i.cmp(j)))
        .map(|(_, a)| a)
        .expect("restarts >= 1");
    Ok(best)
}
