//! Lloyd's k-means with k-means++ seeding and restarts.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::{self, Purpose};

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<u32>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j as u32, d);
        }
    }
    best
}

fn plus_plus<R: Rng + ?Sized>(x: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for j in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(r, centroids.row(j)));
        }
    }
    centroids
}

/// One seeded run. Empty clusters keep their previous centroid, which keeps
/// the inertia non-increasing.
pub fn lloyd<R: Rng + ?Sized>(x: &Array2<f64>, k: usize, rng: &mut R) -> (Vec<u32>, Array2<f64>, Vec<f64>) {
    let (n, d) = x.dim();
    let mut centroids = plus_plus(x, k, rng);
    let mut assignment = vec![u32::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITER {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, r) in x.rows().into_iter().enumerate() {
            let (j, dist) = nearest(r, &centroids);
            inertia += dist;
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            let j = assignment[i] as usize;
            let mut s = sums.row_mut(j);
            s += &r;
            counts[j] += 1;
        }
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = &sums.row(j) / count as f64;
                centroids.row_mut(j).assign(&mean);
            }
        }
    }
    (assignment, centroids, trace)
}

/// Best of `restarts` runs by final inertia (lowest restart index on ties).
/// Restart `r` seeds its generator from `(seed, r)`, so the result does not
/// depend on the execution mode.
pub fn kmeans_cluster(x: &Array2<f64>, k: usize, seed: u64, restarts: usize, exec: Execution) -> Result<KMeansResult> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds the {n} points")));
    }
    let restarts = restarts.max(1);
    let runs = par::map_range(exec, restarts, |r| {
        let mut g = rng::derive(seed, r as u64, 0, Purpose::KMeans);
        lloyd(x, k, &mut g)
    });
    let (restart, (assignment, centroids, inertia_trace)) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| {
            let ia = *a.1 .2.last().unwrap();
            let ib = *b.1 .2.last().unwrap();
            ia.total_cmp(&ib).then(a.0.cmp(&b.0))
        })
        .expect("at least one restart");
    Ok(KMeansResult {
        assignment,
        centroids,
        inertia: *inertia_trace.last().unwrap(),
        inertia_trace,
        restart,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separated_clouds() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [9.0, 9.0], [9.1, 9.0], [9.0, 9.1]];
        let r = kmeans_cluster(&x, 2, 3, 5, Execution::Sequential).unwrap();
        let a = &r.assignment;
        assert!(a[0] == a[1] && a[1] == a[2]);
        assert!(a[3] == a[4] && a[4] == a[5]);
        assert_ne!(a[0], a[3]);
    }

    #[test]
    fn single_cluster_and_bad_k() {
        let x = array![[1.0], [2.0], [3.0]];
        let r = kmeans_cluster(&x, 1, 0, 2, Execution::Sequential).unwrap();
        assert_eq!(r.assignment, vec![0, 0, 0]);
        assert!((r.centroids[[0, 0]] - 2.0).abs() < 1e-12);
        assert!(kmeans_cluster(&x, 4, 0, 2, Execution::Sequential).is_err());
        assert!(kmeans_cluster(&x, 0, 0, 2, Execution::Sequential).is_err());
    }

    #[test]
    fn deterministic_across_modes() {
        let mut g = rng::derive(5, 0, 0, Purpose::Init);
        let x = Array2::from_shape_fn((80, 3), |_| g.random_range(-1.0..1.0));
        let a = kmeans_cluster(&x, 4, 9, 6, Execution::Sequential).unwrap();
        let b = kmeans_cluster(&x, 4, 9, 6, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.inertia_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
