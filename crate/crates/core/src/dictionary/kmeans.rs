//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn wcss(&self) -> f64 {
        self.wcss_trace.last().copied().unwrap_or(0.0)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            if chosen[idx] || d2[idx] <= 0.0 {
                d2.iter().rposition(|&w| w > 0.0).unwrap_or(idx)
            } else {
                idx
            }
        } else {
            // All remaining points coincide with a centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

/// Single k-means run: k-means++ seeding from `seed`, then Lloyd iterations
/// until the assignment is a fixpoint or 300 iterations. Empty clusters are
/// re-seeded with the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kmeans_with_rng(points, k, &mut rng)
}

fn kmeans_with_rng(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidConfig(format!(
            "k-means needs at least k = {k} points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "k-means point",
            expected: d,
            got: p.len(),
        });
    }

    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut wcss_trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, dist) = nearest(p, &centroids);
            dists[i] = dist;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        // Re-seed empty clusters from the worst-served points.
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("more points than clusters");
            assignments[far] = empty;
            dists[far] = 0.0;
            centroids[empty] = points[far].clone();
            changed = true;
        }

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            for (cv, sv) in c.iter_mut().zip(s) {
                *cv = sv / n as f64;
            }
        }
        let wcss = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        wcss_trace.push(wcss);
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        wcss_trace,
        iterations,
    })
}

/// Best of `n_init` independent runs (lowest final WCSS, earliest run on ties).
/// Run `r` draws from `ChaCha8(seed)` stream `r`.
pub fn kmeans_best_of(points: &[Vec<f64>], k: usize, seed: u64, n_init: usize) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for run in 0..n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run as u64);
        let res = kmeans_with_rng(points, k, &mut rng)?;
        if best.as_ref().map_or(true, |b| res.wcss() < b.wcss()) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one run"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(center.iter().map(|x| x + noise.sample(&mut rng)).collect());
                labels.push(c);
            }
        }
        (pts, labels)
    }

    #[test]
    fn k_one_gives_mean() {
        let (pts, _) = blobs(&[vec![1.0, 2.0, 3.0]], 50, 1.0, 1);
        let res = kmeans(&pts, 1, 0).unwrap();
        for j in 0..3 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / 50.0;
            assert!((res.centroids[0][j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_recovered_exactly() {
        let (pts, labels) = blobs(&[vec![0.0, 0.0], vec![10.0, 0.0]], 100, 1.0, 2);
        let res = kmeans(&pts, 2, 5).unwrap();
        let flip = res.assignments[0] != labels[0];
        for (a, l) in res.assignments.iter().zip(&labels) {
            assert_eq!(*a == 1, (*l == 1) != flip);
        }
    }

    #[test]
    fn k_equals_n_is_zero_wcss() {
        let (pts, _) = blobs(&[vec![0.0, 0.0]], 12, 1.0, 3);
        let res = kmeans(&pts, 12, 9).unwrap();
        assert_eq!(res.wcss(), 0.0);
        let mut seen = res.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn wcss_non_increasing_and_deterministic() {
        let centers: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 2.0, (i % 2) as f64]).collect();
        let (pts, _) = blobs(&centers, 60, 1.0, 4);
        let a = kmeans(&pts, 5, 17).unwrap();
        for w in a.wcss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", a.wcss_trace);
        }
        assert_eq!(a, kmeans(&pts, 5, 17).unwrap());
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(kmeans(&[vec![0.0]], 2, 0).is_err());
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let pts = vec![vec![1.0, 1.0]; 6];
        let res = kmeans(&pts, 3, 1).unwrap();
        assert_eq!(res.wcss(), 0.0);
        assert_eq!(res.centroids.len(), 3);
    }
}
