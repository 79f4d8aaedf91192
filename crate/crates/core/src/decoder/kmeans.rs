use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned center, recorded after every
    /// assignment step.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Clusters that lose all their
/// points are moved onto the point farthest from its current center.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, rng: &mut RngStream, iters: usize) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidK("k must be at least 1".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points have differing dimensions".into()));
    }
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    if k > distinct.len() {
        return Err(Error::InvalidK(format!("k = {k} exceeds the {} distinct points", distinct.len())));
    }

    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.uniform_open() * total;
        let mut pick = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
        for (i, d) in d2.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut assign = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centers);
            changed |= assign[i] != j;
            assign[i] = j;
            dist[i] = d;
            inertia += d;
        }
        history.push(inertia);
        if !changed && history.len() > 1 {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assign) {
            counts[j] += 1;
            sums[j].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                let far = (0..points.len())
                    .max_by(|a, b| dist[*a].total_cmp(&dist[*b]))
                    .expect("points is non-empty");
                centers[j] = points[far].clone();
                dist[far] = 0.0;
                assign[far] = j;
            }
        }
    }
    Ok(KMeansFit {
        centers,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rng: &mut RngStream, center: [f64; 2], n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| vec![center[0] + 0.01 * rng.standard_normal(), center[1] + 0.01 * rng.standard_normal()])
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let fit = kmeans_fit(&pts, 1, &mut RngStream::new(0), 10).unwrap();
        assert!((fit.centers[0][0] - 2.0).abs() < 1e-12);
        assert!((fit.centers[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_separated_clusters() {
        let mut rng = RngStream::new(5);
        let mut pts = cloud(&mut rng, [0.0, 0.0], 30);
        pts.extend(cloud(&mut rng, [10.0, 10.0], 30));
        let fit = kmeans_fit(&pts, 2, &mut RngStream::new(1), 50).unwrap();
        let mut c = fit.centers.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(sq_dist(&c[0], &[0.0, 0.0]).sqrt() < 0.05);
        assert!(sq_dist(&c[1], &[10.0, 10.0]).sqrt() < 0.05);
    }

    #[test]
    fn k_equal_to_n_recovers_points() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![7.5]];
        let fit = kmeans_fit(&pts, 4, &mut RngStream::new(2), 10).unwrap();
        assert_eq!(*fit.inertia_history.last().unwrap(), 0.0);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(kmeans_fit(&pts, 3, &mut RngStream::new(0), 5), Err(Error::InvalidK(_))));
        assert!(matches!(kmeans_fit(&pts, 0, &mut RngStream::new(0), 5), Err(Error::InvalidK(_))));
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = RngStream::new(9);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
        let fit = kmeans_fit(&pts, 12, &mut RngStream::new(3), 100).unwrap();
        for w in fit.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = RngStream::new(4);
        let pts: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
        let a = kmeans_fit(&pts, 5, &mut RngStream::new(8), 30).unwrap();
        let b = kmeans_fit(&pts, 5, &mut RngStream::new(8), 30).unwrap();
        assert_eq!(a, b);
    }
}
