//! Ward-linkage agglomerative clustering with a minimum cluster size cut.
//!
//! The hierarchy is built with the nearest-neighbour-chain algorithm on
//! cluster centroids (Ward is reducible, so the chain yields the same
//! dendrogram as greedy merging). Memory is linear in the number of points.

use super::kmeans::sq_dist;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SubCluster {
    pub members: Vec<Vec<f64>>,
    pub centroid: Vec<f64>,
    /// Set when the parent had fewer than `min_size` members and was kept whole.
    pub undersized: bool,
}

impl SubCluster {
    pub fn from_members(members: Vec<Vec<f64>>, undersized: bool) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("subcluster"))?;
        let mut centroid = vec![0.0; first.len()];
        for m in &members {
            for (c, x) in centroid.iter_mut().zip(m) {
                *c += x;
            }
        }
        let n = members.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= n);
        Ok(Self {
            members,
            centroid,
            undersized,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Merge {
    a: usize,
    b: usize,
    cost: f64,
}

/// Increase in within-cluster sum of squares when merging two clusters.
fn ward_cost(ca: &[f64], na: usize, cb: &[f64], nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    na * nb / (na + nb) * sq_dist(ca, cb)
}

fn ward_merges(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    let mut centroid: Vec<Vec<f64>> = points.to_vec();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut n_active = n;
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();

    while n_active > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("active cluster"));
        }
        let a = *chain.last().unwrap();
        let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
        // Nearest active neighbour; ties prefer the chain predecessor, then the lowest slot.
        let mut best: Option<(f64, usize)> = None;
        for c in 0..n {
            if !active[c] || c == a {
                continue;
            }
            let cost = ward_cost(&centroid[a], size[a], &centroid[c], size[c]);
            let better = match best {
                None => true,
                Some((bc, bi)) => cost < bc || (cost == bc && Some(c) == prev && Some(bi) != prev),
            };
            if better {
                best = Some((cost, c));
            }
        }
        let (cost, b) = best.expect("at least two active clusters");
        if Some(b) == prev {
            chain.pop();
            chain.pop();
            let (keep, drop) = if a < b { (a, b) } else { (b, a) };
            let (nk, nd) = (size[keep] as f64, size[drop] as f64);
            let merged: Vec<f64> = centroid[keep]
                .iter()
                .zip(&centroid[drop])
                .map(|(x, y)| (nk * x + nd * y) / (nk + nd))
                .collect();
            centroid[keep] = merged;
            size[keep] += size[drop];
            active[drop] = false;
            n_active -= 1;
            merges.push(Merge { a: keep, b: drop, cost });
        } else {
            chain.push(b);
        }
    }
    // Replay order: increasing cost (stable, so chain order breaks ties).
    merges.sort_by(|x, y| x.cost.total_cmp(&y.cost));
    merges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Partition after applying the `n - k` cheapest merges, groups ordered by
/// their lowest member index.
fn cut(n: usize, merges: &[Merge], k: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    for m in &merges[..n - k] {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Outcome of [`ward_partition`]: member indices per group.
#[derive(Debug, Clone, PartialEq)]
pub struct WardPartition {
    pub groups: Vec<Vec<usize>>,
    /// True when the input had fewer than `min_size` points.
    pub undersized: bool,
}

/// Cuts the Ward hierarchy at the largest `k <= max_k` whose clusters all
/// have at least `min_size` members. When that `k` is below `min_k` the size
/// constraint wins and `k` clusters are returned anyway.
pub fn ward_partition(points: &[Vec<f64>], min_size: usize, max_k: usize) -> Result<WardPartition> {
    if points.is_empty() {
        return Err(Error::Empty("agglomeration input"));
    }
    let n = points.len();
    if n < min_size.max(1) || n == 1 {
        return Ok(WardPartition {
            groups: vec![(0..n).collect()],
            undersized: n < min_size,
        });
    }
    let merges = ward_merges(points);
    for k in (1..=max_k.max(1).min(n)).rev() {
        let groups = cut(n, &merges, k);
        if groups.iter().all(|g| g.len() >= min_size) {
            return Ok(WardPartition {
                groups,
                undersized: false,
            });
        }
    }
    unreachable!("k = 1 always satisfies the size constraint")
}

/// Ward agglomeration of `members` into between `min_k` and `max_k`
/// subclusters of at least `min_size` members each (see [`ward_partition`]).
pub fn agglomerate(
    members: &[Vec<f64>],
    min_size: usize,
    max_k: usize,
    min_k: usize,
) -> Result<Vec<SubCluster>> {
    if min_k > max_k {
        return Err(Error::InvalidConfig(format!(
            "min_k ({min_k}) exceeds max_k ({max_k})"
        )));
    }
    let part = ward_partition(members, min_size, max_k)?;
    part.groups
        .into_iter()
        .map(|g| {
            SubCluster::from_members(g.into_iter().map(|i| members[i].clone()).collect(), part.undersized)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn planted(k: usize, per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..k {
            let center = [12.0 * (c % 3) as f64, 12.0 * (c / 3) as f64, 0.0];
            for _ in 0..per {
                pts.push(center.iter().map(|x| x + noise.sample(&mut rng)).collect());
                labels.push(c);
            }
        }
        (pts, labels)
    }

    fn groups_match_labels(groups: &[Vec<usize>], labels: &[usize]) -> bool {
        groups.iter().all(|g| g.iter().all(|&i| labels[i] == labels[g[0]]))
    }

    /// Brute-force greedy Ward (recompute every pair each step) as an oracle
    /// for the chain implementation.
    fn greedy_ward_costs(points: &[Vec<f64>]) -> Vec<f64> {
        let mut clusters: Vec<(Vec<f64>, usize)> = points.iter().map(|p| (p.clone(), 1)).collect();
        let mut costs = Vec::new();
        while clusters.len() > 1 {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let c = ward_cost(&clusters[i].0, clusters[i].1, &clusters[j].0, clusters[j].1);
                    if c < best.0 {
                        best = (c, i, j);
                    }
                }
            }
            let (c, i, j) = best;
            let (cj, nj) = clusters.remove(j);
            let (ci, ni) = &mut clusters[i];
            let tot = (*ni + nj) as f64;
            for (x, y) in ci.iter_mut().zip(&cj) {
                *x = (*x * *ni as f64 + y * nj as f64) / tot;
            }
            *ni += nj;
            costs.push(c);
        }
        costs
    }

    #[test]
    fn chain_matches_greedy_merge_heights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| noise.sample(&mut rng)).collect())
            .collect();
        let chain: Vec<f64> = ward_merges(&pts).iter().map(|m| m.cost).collect();
        let mut greedy = greedy_ward_costs(&pts);
        greedy.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in chain.iter().zip(&greedy) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn three_blobs_min_fifty() {
        let (pts, labels) = planted(3, 100, 1);
        let subs = ward_partition(&pts, 50, 9).unwrap();
        assert_eq!(subs.groups.len(), 3);
        assert!(groups_match_labels(&subs.groups, &labels));
    }

    #[test]
    fn hundred_points_min_hundred_is_single() {
        let (pts, _) = planted(3, 34, 2);
        let subs = agglomerate(&pts[..100], 100, 9, 3).unwrap();
        assert_eq!(subs.len(), 1);
        assert!(!subs[0].undersized);
        assert_eq!(subs[0].size(), 100);
    }

    #[test]
    fn nine_blobs_of_hundred() {
        let (pts, labels) = planted(9, 100, 3);
        let part = ward_partition(&pts, 100, 9).unwrap();
        assert_eq!(part.groups.len(), 9);
        assert!(groups_match_labels(&part.groups, &labels));
    }

    #[test]
    fn undersized_input_flagged() {
        let (pts, _) = planted(1, 10, 4);
        let subs = agglomerate(&pts, 20, 9, 3).unwrap();
        assert_eq!(subs.len(), 1);
        assert!(subs[0].undersized);
    }

    #[test]
    fn centroids_are_member_means() {
        let (pts, _) = planted(4, 40, 5);
        for s in agglomerate(&pts, 20, 9, 3).unwrap() {
            for j in 0..3 {
                let mean = s.members.iter().map(|m| m[j]).sum::<f64>() / s.size() as f64;
                assert!((mean - s.centroid[j]).abs() < 1e-9);
            }
            assert!(s.size() >= 20);
        }
    }
}
