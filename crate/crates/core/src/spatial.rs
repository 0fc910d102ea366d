//! Uniform-grid index for exact nearest-neighbour queries on point sets.
//!
//! Queries return exactly what a brute-force scan returns: candidate squared
//! distances are computed with the same expression and the minimum of a set
//! does not depend on visiting order.

use crate::Vec3;

/// Cells per axis are capped so that sparse, widely spread sets stay cheap.
const MAX_CELLS_PER_AXIS: usize = 128;
const MIN_CELL: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<u32>,
    order: Vec<u32>,
}

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

impl PointIndex {
    /// Builds an index; cell size is `max(0.02, expected nearest-neighbour spacing)`.
    ///
    /// Panics if `points` is empty.
    pub fn new(points: &[Vec3]) -> Self {
        assert!(!points.is_empty(), "PointIndex needs at least one point");
        let (lo, hi) = crate::mesh::bounds_of(points.iter()).unwrap();
        let ext = hi - lo;
        // Expected spacing for points spread over the occupied volume (or area).
        let spacing = {
            let dims_used: Vec<f64> = ext.iter().copied().filter(|e| *e > 1e-9).collect();
            if dims_used.is_empty() {
                MIN_CELL
            } else {
                let measure: f64 = dims_used.iter().product();
                (measure / points.len() as f64).powf(1.0 / dims_used.len() as f64)
            }
        };
        let mut cell = spacing.max(MIN_CELL);
        let max_ext = ext.max();
        if max_ext / cell > MAX_CELLS_PER_AXIS as f64 {
            cell = max_ext / MAX_CELLS_PER_AXIS as f64;
        }
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(MAX_CELLS_PER_AXIS + 1));
        let ncells = dims[0] * dims[1] * dims[2];
        let mut index = PointIndex {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            starts: vec![0; ncells + 1],
            order: Vec::with_capacity(points.len()),
        };
        let cell_ids: Vec<usize> = points.iter().map(|p| index.flat(index.cell_of(p))).collect();
        for &c in &cell_ids {
            index.starts[c + 1] += 1;
        }
        for c in 0..ncells {
            index.starts[c + 1] += index.starts[c];
        }
        let mut fill = index.starts.clone();
        index.order = vec![0; points.len()];
        for (i, &c) in cell_ids.iter().enumerate() {
            index.order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unclamped integer cell coordinate of `p`.
    fn raw_cell(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        let r = self.raw_cell(p);
        [0, 1, 2].map(|a| r[a].clamp(0, self.dims[a] as i64 - 1) as usize)
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn visit_cell(&self, c: [usize; 3], mut f: impl FnMut(u32)) {
        let k = self.flat(c);
        for &i in &self.order[self.starts[k] as usize..self.starts[k + 1] as usize] {
            f(i);
        }
    }

    /// Visits every cell at Chebyshev distance exactly `r` from `center`,
    /// clipped to the grid.
    fn visit_ring(&self, center: [i64; 3], r: i64, mut f: impl FnMut([usize; 3])) {
        let range = |a: usize| {
            let lo = (center[a] - r).max(0);
            let hi = (center[a] + r).min(self.dims[a] as i64 - 1);
            (lo, hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        if x0 > x1 || y0 > y1 || z0 > z1 {
            return;
        }
        for z in z0..=z1 {
            let z_edge = (z - center[2]).abs() == r;
            for y in y0..=y1 {
                let yz_edge = z_edge || (y - center[1]).abs() == r;
                if yz_edge {
                    for x in x0..=x1 {
                        f([x as usize, y as usize, z as usize]);
                    }
                } else {
                    for x in [center[0] - r, center[0] + r] {
                        if x >= x0 && x <= x1 {
                            f([x as usize, y as usize, z as usize]);
                        }
                        if r == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }

    /// Largest ring radius that can still contain grid cells.
    fn max_ring(&self, center: [i64; 3]) -> i64 {
        (0..3)
            .map(|a| {
                let d = self.dims[a] as i64 - 1;
                center[a].abs().max((center[a] - d).abs())
            })
            .max()
            .unwrap()
    }

    /// Index and squared distance of the nearest indexed point. Ties resolve to
    /// the lowest index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let center = self.raw_cell(q);
        let max_ring = self.max_ring(center);
        let mut best = (usize::MAX, f64::INFINITY);
        let mut r = 0i64;
        loop {
            self.visit_ring(center, r, |c| {
                self.visit_cell(c, |i| {
                    let d = dist2(q, &self.points[i as usize]);
                    if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                        best = (i as usize, d);
                    }
                })
            });
            // Cells on ring r + 1 and beyond lie at least r * cell away from q.
            let bound = r as f64 * self.cell;
            if (best.1.is_finite() && best.1 < bound * bound) || r >= max_ring {
                break;
            }
            r += 1;
        }
        best
    }

    /// Whether any indexed point lies within `radius` (inclusive) of `q`.
    pub fn any_within(&self, q: &Vec3, radius: f64) -> bool {
        if radius.is_infinite() {
            return true;
        }
        let r2 = radius * radius;
        let center = self.raw_cell(q);
        let reach = (radius / self.cell).ceil() as i64 + 1;
        let max_ring = self.max_ring(center).min(reach);
        for r in 0..=max_ring {
            let mut found = false;
            self.visit_ring(center, r, |c| {
                if !found {
                    self.visit_cell(c, |i| {
                        if dist2(q, &self.points[i as usize]) <= r2 {
                            found = true;
                        }
                    })
                }
            });
            if found {
                return true;
            }
        }
        false
    }
}

/// Brute-force nearest squared distance; the reference for [`PointIndex::nearest`].
pub fn brute_nearest(q: &Vec3, targets: &[Vec3]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, t) in targets.iter().enumerate() {
        let d = dist2(q, t);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64, offset: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-scale..scale) + offset,
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let n = rng.random_range(1..1500);
            let m = rng.random_range(1..300);
            let scale = [0.01, 0.3, 1.0, 5.0][trial % 4];
            let targets = cloud(&mut rng, n, scale, 0.0);
            let queries = cloud(&mut rng, m, scale * 2.0, (trial % 3) as f64);
            let index = PointIndex::new(&targets);
            for q in &queries {
                let (i, d) = index.nearest(q);
                let (bi, bd) = brute_nearest(q, &targets);
                assert_eq!(d, bd);
                assert_eq!(i, bi);
            }
        }
    }

    #[test]
    fn flat_and_degenerate_sets() {
        let line: Vec<Vec3> = (0..100).map(|i| Vec3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let index = PointIndex::new(&line);
        let q = Vec3::new(0.505, 3.0, -2.0);
        assert_eq!(index.nearest(&q).1, brute_nearest(&q, &line).1);
        let single = [Vec3::new(1.0, 2.0, 3.0)];
        let index = PointIndex::new(&single);
        assert_eq!(index.nearest(&Vec3::zeros()), (0, 14.0));
    }

    #[test]
    fn any_within_agrees_with_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let targets = cloud(&mut rng, 800, 1.0, 0.0);
        let index = PointIndex::new(&targets);
        for _ in 0..500 {
            let q = Vec3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            );
            let radius = rng.random_range(0.0..0.3);
            let expect = targets.iter().any(|t| dist2(&q, t) <= radius * radius);
            assert_eq!(index.any_within(&q, radius), expect);
        }
        assert!(index.any_within(&Vec3::new(100.0, 0.0, 0.0), f64::INFINITY));
    }
}
