//! Lloyd k-means with k-means++ seeding and silhouette-based choice of k.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spatial::dist2;
use crate::Vec3;

const MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vec3>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centers.len()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn nearest_center(p: &Vec3, centers: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_seed(points: &[Vec3], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &[Vec3], mut centers: Vec<Vec3>) -> Clustering {
    let k = centers.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, _) = nearest_center(p, &centers);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        // Offsets from the previous center keep the mean exact for coincident points.
        for (&l, p) in labels.iter().zip(points) {
            sums[l] += p - centers[l];
            counts[l] += 1;
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] > 0 {
                centers[c] += sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| dist2(p, &centers[l]))
        .sum();
    Clustering {
        centers,
        labels,
        inertia,
    }
}

/// Best-of-`restarts` k-means (lowest inertia), deterministic in `seed`.
pub fn kmeans(points: &[Vec3], k: usize, restarts: usize, seed: u64) -> Clustering {
    assert!(!points.is_empty() && k >= 1);
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus_seed(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.unwrap()
}

/// Mean silhouette coefficient. Singleton clusters contribute 0; a clustering
/// with fewer than two non-empty clusters scores 0.
pub fn silhouette(points: &[Vec3], labels: &[usize], k: usize) -> f64 {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for (i, p) in points.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (q, &l) in points.iter().zip(labels) {
            sums[l] += dist2(p, q).sqrt();
        }
        let own = labels[i];
        if counts[own] <= 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / points.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub clustering: Clustering,
    /// Silhouette per k, starting at k = 2.
    pub silhouettes: Vec<f64>,
}

/// Runs k-means for k = 1..=k_max and keeps the k with the highest silhouette,
/// falling back to k = 1 when no k reaches `min_silhouette`.
pub fn select_k(
    points: &[Vec3],
    k_max: usize,
    restarts: usize,
    min_silhouette: f64,
    seed: u64,
) -> KSelection {
    let single = kmeans(points, 1, 1, seed);
    let mut best: Option<(f64, Clustering)> = None;
    let mut silhouettes = Vec::new();
    for k in 2..=k_max.min(points.len()) {
        let c = kmeans(points, k, restarts, seed.wrapping_add(k as u64));
        let s = silhouette(points, &c.labels, k);
        silhouettes.push(s);
        if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
            best = Some((s, c));
        }
    }
    match best {
        Some((s, c)) if s >= min_silhouette => KSelection {
            k: c.centers.len(),
            clustering: c,
            silhouettes,
        },
        _ => KSelection {
            k: 1,
            clustering: single,
            silhouettes,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blob(rng: &mut ChaCha8Rng, center: Vec3, sigma: f64, n: usize) -> Vec<Vec3> {
        let normal = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| center + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
            .collect()
    }

    /// Silhouette reference computed straight from the definition.
    fn silhouette_reference(points: &[Vec3], labels: &[usize]) -> f64 {
        let k = labels.iter().max().unwrap() + 1;
        let mut s = 0.0;
        for i in 0..points.len() {
            let mean_to = |c: usize| {
                let members: Vec<usize> = (0..points.len())
                    .filter(|&j| labels[j] == c && j != i)
                    .collect();
                if members.is_empty() {
                    None
                } else {
                    Some(
                        members.iter().map(|&j| (points[i] - points[j]).norm()).sum::<f64>()
                            / members.len() as f64,
                    )
                }
            };
            let Some(a) = mean_to(labels[i]) else { continue };
            let b = (0..k)
                .filter(|&c| c != labels[i])
                .filter_map(|c| mean_to(c))
                .fold(f64::INFINITY, f64::min);
            s += (b - a) / a.max(b);
        }
        s / points.len() as f64
    }

    #[test]
    fn silhouette_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = blob(&mut rng, Vec3::zeros(), 0.1, 40);
        pts.extend(blob(&mut rng, Vec3::new(1.0, 0.0, 0.0), 0.2, 30));
        let c = kmeans(&pts, 3, 5, 1);
        let fast = silhouette(&pts, &c.labels, 3);
        assert!((fast - silhouette_reference(&pts, &c.labels)).abs() < 1e-12);
    }

    #[test]
    fn two_planted_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(&mut rng, Vec3::new(-0.5, 0.0, 0.0), 0.01, 200);
        pts.extend(blob(&mut rng, Vec3::new(0.5, 0.0, 0.0), 0.01, 200));
        let sel = select_k(&pts, 4, 10, 0.3, 0);
        assert_eq!(sel.k, 2);
        let mut cs = sel.clustering.centers.clone();
        cs.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert!((cs[0] - Vec3::new(-0.5, 0.0, 0.0)).norm() < 0.05);
        assert!((cs[1] - Vec3::new(0.5, 0.0, 0.0)).norm() < 0.05);
    }

    #[test]
    fn single_blob_is_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = blob(&mut rng, Vec3::zeros(), 0.01, 400);
        let sel = select_k(&pts, 4, 10, 0.3, 0);
        assert_eq!(sel.k, 1);
        assert!(sel.clustering.centers[0].norm() < 0.05);
    }

    #[test]
    fn repeated_point_is_one_cluster() {
        let pts = vec![Vec3::new(0.2, 0.3, 0.4); 50];
        let sel = select_k(&pts, 4, 10, 0.3, 0);
        assert_eq!(sel.k, 1);
        assert_eq!(sel.clustering.centers, vec![Vec3::new(0.2, 0.3, 0.4)]);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = blob(&mut rng, Vec3::zeros(), 1.0, 300);
        assert_eq!(kmeans(&pts, 4, 5, 9), kmeans(&pts, 4, 5, 9));
    }
}
