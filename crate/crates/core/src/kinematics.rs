//! Joint estimation from contact geometry.
//!
//! The pipeline runs per child/parent pair: sample both parts, keep the mutual
//! near points (the contact region), fit a plane to the region, propose axis
//! directions in that plane, propose pivots by clustering the region, score the
//! candidates, and turn the winner into an unfinalized [`KinematicConstraint`].

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::asset::{KinematicConstraint, KinematicKind, ObjectAsset};
use crate::geometry::{sample_part, PointCloud};
use crate::kmeans::select_k;
use crate::spatial::PointIndex;
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("parts are not in contact at tau = {0}")]
    NoContact(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("unknown part {0}")]
    UnknownPart(u32),
    #[error("kind {0} has no estimable parameters")]
    UnsupportedKind(KinematicKind),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub alignment: f64,
    pub edge_support: f64,
    pub extent: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            alignment: 0.5,
            edge_support: 0.3,
            extent: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicsConfig {
    /// Contact distance threshold in normalized units.
    pub tau: f64,
    /// Number of in-plane axis candidates.
    pub m: usize,
    pub k_max: usize,
    pub kmeans_restarts: usize,
    pub min_silhouette: f64,
    pub seed: u64,
    /// Surface samples per part.
    pub samples: usize,
    /// Region points handed to k-means (deterministic stride subsample).
    pub max_cluster_points: usize,
    /// Radius of the tube around a candidate line that counts as support.
    pub support_radius: f64,
    pub weights: ScoreWeights,
    /// Default range for rotational joints, radians, pending human review.
    pub rotation_range: [f64; 2],
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            tau: 0.02,
            m: 12,
            k_max: 4,
            kmeans_restarts: 50,
            min_silhouette: 0.3,
            seed: 0,
            samples: 10_000,
            max_cluster_points: 1500,
            support_radius: 0.05,
            weights: ScoreWeights::default(),
            rotation_range: [0.0, PI / 2.0],
        }
    }
}

impl KinematicsConfig {
    /// Reads a TOML (`.toml`) or JSON (anything else) config file; missing keys
    /// take their defaults.
    pub fn from_path(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| KinematicsError::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| KinematicsError::Config(e.to_string()))?
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), KinematicsError> {
        if !(self.tau > 0.0) {
            return Err(KinematicsError::Config("tau must be positive".into()));
        }
        if self.m == 0 || self.k_max == 0 || self.samples == 0 {
            return Err(KinematicsError::Config("m, k_max and samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Stable hash of the configuration, used for caching and job manifests.
    pub fn hash(&self) -> String {
        crate::sha256_hex(crate::canonical_json(self).as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactRegion {
    pub child_points: PointCloud,
    pub parent_points: PointCloud,
    pub tau: f64,
}

impl ContactRegion {
    /// Child then parent points.
    pub fn points(&self) -> Vec<Vec3> {
        let mut out = self.child_points.points.clone();
        out.extend_from_slice(&self.parent_points.points);
        out
    }

    pub fn len(&self) -> usize {
        self.child_points.len() + self.parent_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Keeps the child points within `tau` of the parent cloud and vice versa.
pub fn contact_region(
    child: &PointCloud,
    parent: &PointCloud,
    tau: f64,
) -> Result<ContactRegion, KinematicsError> {
    if !(tau > 0.0) {
        return Err(KinematicsError::Config("tau must be positive".into()));
    }
    if child.is_empty() || parent.is_empty() {
        return Err(KinematicsError::DegenerateInput("empty point cloud".into()));
    }
    let filter = |from: &PointCloud, to: &PointCloud| {
        let index = PointIndex::new(&to.points);
        PointCloud::new(
            from.points
                .iter()
                .copied()
                .filter(|p| index.any_within(p, tau))
                .collect(),
            from.source_part,
        )
    };
    let region = ContactRegion {
        child_points: filter(child, parent),
        parent_points: filter(parent, child),
        tau,
    };
    if region.is_empty() {
        return Err(KinematicsError::NoContact(tau));
    }
    Ok(region)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedPlane {
    pub normal: [f64; 3],
    /// The plane is `{x : normal · x = offset}`.
    pub offset: f64,
    pub rms_residual: f64,
    pub centroid: [f64; 3],
    /// Major in-plane principal direction.
    pub principal: [f64; 3],
    /// `normal × principal`, completing a right-handed frame.
    pub secondary: [f64; 3],
    /// Covariance eigenvalues, ascending.
    pub eigenvalues: [f64; 3],
}

impl FittedPlane {
    pub fn normal_vec(&self) -> Vec3 {
        Vec3::from(self.normal)
    }
    pub fn principal_vec(&self) -> Vec3 {
        Vec3::from(self.principal)
    }
    pub fn secondary_vec(&self) -> Vec3 {
        Vec3::from(self.secondary)
    }
    pub fn centroid_vec(&self) -> Vec3 {
        Vec3::from(self.centroid)
    }
}

/// Flips `v` so its largest-magnitude component is positive (first index wins ties).
pub fn canonical_sign(v: Vec3) -> Vec3 {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

/// Total-least-squares plane through `points`.
pub fn fit_plane(points: &[Vec3]) -> Result<FittedPlane, KinematicsError> {
    if points.len() < 3 {
        return Err(KinematicsError::DegenerateInput(format!(
            "plane fit needs 3 points, got {}",
            points.len()
        )));
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.map(|i| eig.eigenvalues[i].max(0.0));
    let scale = vals[2];
    if !(scale > 0.0) || vals[1] <= 1e-12 * scale {
        return Err(KinematicsError::DegenerateInput(
            "points are collinear or coincident".into(),
        ));
    }
    let normal = canonical_sign(eig.eigenvectors.column(order[0]).normalize());
    let principal = canonical_sign(eig.eigenvectors.column(order[2]).normalize());
    let secondary = normal.cross(&principal);
    let offset = normal.dot(&centroid);
    let rms_residual = (points
        .iter()
        .map(|p| (normal.dot(p) - offset).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(FittedPlane {
        normal: normal.into(),
        offset,
        rms_residual,
        centroid: centroid.into(),
        principal: principal.into(),
        secondary: secondary.into(),
        eigenvalues: vals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    PlaneSampled,
    KmeansCenter,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisCandidate {
    pub direction: [f64; 3],
    pub pivot: Option<[f64; 3]>,
    pub score: f64,
    pub provenance: CandidateSource,
}

impl AxisCandidate {
    pub fn direction_vec(&self) -> Vec3 {
        Vec3::from(self.direction)
    }
}

/// `m` in-plane directions spaced π/m apart starting at the plane's principal
/// direction. Prismatic (and screw) joints may slide along the contact normal,
/// so for `B` and `CB` the normal is appended once.
pub fn gen_axis_candidates(plane: &FittedPlane, m: usize, kind: KinematicKind) -> Vec<AxisCandidate> {
    let (u, v) = (plane.principal_vec(), plane.secondary_vec());
    let mut out: Vec<AxisCandidate> = (0..m.max(1))
        .map(|i| {
            let a = PI * i as f64 / m.max(1) as f64;
            let d = canonical_sign((u * a.cos() + v * a.sin()).normalize());
            AxisCandidate {
                direction: d.into(),
                pivot: None,
                score: 0.0,
                provenance: CandidateSource::PlaneSampled,
            }
        })
        .collect();
    if matches!(kind, KinematicKind::B | KinematicKind::CB) {
        out.push(AxisCandidate {
            direction: plane.normal,
            pivot: None,
            score: 0.0,
            provenance: CandidateSource::PlaneSampled,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotCandidates {
    /// Cluster centers, sorted lexicographically.
    pub centers: Vec<Vec3>,
    /// Member count of each center.
    pub sizes: Vec<usize>,
    pub silhouettes: Vec<f64>,
}

impl PivotCandidates {
    /// Center of the largest cluster (lexicographically first on ties).
    pub fn top(&self) -> Vec3 {
        let mut best = 0;
        for i in 1..self.centers.len() {
            if self.sizes[i] > self.sizes[best] {
                best = i;
            }
        }
        self.centers[best]
    }
}

fn subsample(points: &[Vec3], max: usize) -> Vec<Vec3> {
    if points.len() <= max || max == 0 {
        return points.to_vec();
    }
    (0..max).map(|i| points[i * points.len() / max]).collect()
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// k-means pivots over the whole region for k = 1..=k_max, k picked by silhouette.
pub fn pivot_candidates(
    region: &ContactRegion,
    config: &KinematicsConfig,
) -> Result<PivotCandidates, KinematicsError> {
    if region.is_empty() {
        return Err(KinematicsError::DegenerateInput("empty contact region".into()));
    }
    let points = subsample(&region.points(), config.max_cluster_points);
    let sel = select_k(
        &points,
        config.k_max.max(1),
        config.kmeans_restarts,
        config.min_silhouette,
        config.seed,
    );
    let sizes = sel.clustering.sizes();
    let mut pairs: Vec<(Vec3, usize)> = sel.clustering.centers.into_iter().zip(sizes).collect();
    pairs.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    Ok(PivotCandidates {
        centers: pairs.iter().map(|p| p.0).collect(),
        sizes: pairs.iter().map(|p| p.1).collect(),
        silhouettes: sel.silhouettes,
    })
}

/// Principal spreads (max − min projection) of a point set.
fn principal_spread(points: &[Vec3]) -> f64 {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    (0..3)
        .map(|i| {
            let axis = eig.eigenvectors.column(i).into_owned();
            spread_along(points, &axis)
        })
        .fold(0.0, f64::max)
}

fn spread_along(points: &[Vec3], d: &Vec3) -> f64 {
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let t = p.dot(d);
        (lo.min(t), hi.max(t))
    });
    hi - lo
}

fn line_distances(points: &[Vec3], origin: &Vec3, d: &Vec3) -> Vec<f64> {
    points
        .iter()
        .map(|p| {
            let r = p - origin;
            (r - d * r.dot(d)).norm()
        })
        .collect()
}

/// Scores candidates and sorts them best first (stable; ties broken by
/// lexicographic direction).
///
/// Each score is `w_a·alignment + w_s·support + w_e·extent`, all terms in [0, 1]:
/// * alignment: largest |component| of the direction (closeness to a world axis);
/// * support: share of region points within `support_radius` of the candidate
///   line (through its pivot, else the region centroid). For `CB`, whose contact
///   surrounds the axis, it is instead the radial uniformity `1 − std(r)/mean(r)`;
/// * extent: for `B`, region spread along the direction over its largest
///   principal spread; for `C`, `1 − rms distance to the line / largest spread`;
///   for `CB`, `1 − spread along the direction / largest spread`.
pub fn score_candidates(
    cands: &[AxisCandidate],
    region: &ContactRegion,
    kind: KinematicKind,
    config: &KinematicsConfig,
) -> Vec<AxisCandidate> {
    let points = region.points();
    let w = config.weights;
    let mut out: Vec<AxisCandidate> = cands.to_vec();
    if points.is_empty() {
        return out;
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let max_spread = principal_spread(&points).max(1e-12);
    for c in &mut out {
        let d = c.direction_vec().normalize();
        let origin = c.pivot.map(Vec3::from).unwrap_or(centroid);
        let dists = line_distances(&points, &origin, &d);
        let n = dists.len() as f64;
        let alignment = d.amax();
        let support = if kind == KinematicKind::CB {
            let mean = dists.iter().sum::<f64>() / n;
            if mean > 0.0 {
                let var = dists.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
                (1.0 - var.sqrt() / mean).clamp(0.0, 1.0)
            } else {
                0.0
            }
        } else {
            dists.iter().filter(|&&r| r <= config.support_radius).count() as f64 / n
        };
        let extent = match kind {
            KinematicKind::B => spread_along(&points, &d) / max_spread,
            KinematicKind::CB => 1.0 - spread_along(&points, &d) / max_spread,
            _ => {
                let rms = (dists.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
                1.0 - rms / max_spread
            }
        }
        .clamp(0.0, 1.0);
        c.score = w.alignment * alignment + w.edge_support * support + w.extent * extent;
        if !c.score.is_finite() {
            c.score = f64::NEG_INFINITY;
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| lex_cmp(&a.direction_vec(), &b.direction_vec()))
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub constraint: KinematicConstraint,
    /// Scored candidates, best first. Empty for `D`, which only has pivots.
    pub candidates: Vec<AxisCandidate>,
    pub plane: FittedPlane,
    pub pivots: Option<PivotCandidates>,
    pub region_size: usize,
}

/// Samples the two parts with seeds derived from `config.seed` and the part id.
pub fn sample_pair(
    asset: &ObjectAsset,
    child: u32,
    parent: u32,
    config: &KinematicsConfig,
) -> Result<(PointCloud, PointCloud), KinematicsError> {
    let seed_for = |id: u32| config.seed.wrapping_mul(1_000_003).wrapping_add(id as u64);
    let c = sample_part(asset, child, config.samples, seed_for(child))
        .ok_or(KinematicsError::UnknownPart(child))?;
    let p = sample_part(asset, parent, config.samples, seed_for(parent))
        .ok_or(KinematicsError::UnknownPart(parent))?;
    Ok((c, p))
}

/// Region → plane → candidates (+ pivots) → scores, without finalizing ranges.
pub fn candidates_for_pair(
    asset: &ObjectAsset,
    child: u32,
    parent: u32,
    kind: KinematicKind,
    config: &KinematicsConfig,
) -> Result<(ContactRegion, FittedPlane, Option<PivotCandidates>, Vec<AxisCandidate>), KinematicsError>
{
    if !kind.has_parts() {
        return Err(KinematicsError::UnsupportedKind(kind));
    }
    if child == parent {
        return Err(KinematicsError::DegenerateInput("child equals parent".into()));
    }
    config.check()?;
    let (c, p) = sample_pair(asset, child, parent, config)?;
    let region = contact_region(&c, &p, config.tau)?;
    let plane = fit_plane(&region.points())?;
    let pivots = if kind.needs_pivot() {
        Some(pivot_candidates(&region, config)?)
    } else {
        None
    };
    if kind == KinematicKind::D {
        return Ok((region, plane, pivots, Vec::new()));
    }
    let mut cands = gen_axis_candidates(&plane, config.m, kind);
    if let Some(pv) = &pivots {
        if pv.centers.len() >= 2 {
            // The line through the two most distant centers (e.g. two hinge knuckles).
            let mut best = (0, 1, 0.0);
            for i in 0..pv.centers.len() {
                for j in i + 1..pv.centers.len() {
                    let d = (pv.centers[i] - pv.centers[j]).norm();
                    if d > best.2 {
                        best = (i, j, d);
                    }
                }
            }
            if let Some(d) = (pv.centers[best.1] - pv.centers[best.0]).try_normalize(1e-12) {
                cands.push(AxisCandidate {
                    direction: canonical_sign(d).into(),
                    pivot: None,
                    score: 0.0,
                    provenance: CandidateSource::KmeansCenter,
                });
            }
        }
        let mut origins: Vec<Vec3> = vec![plane.centroid_vec()];
        origins.extend(pv.centers.iter().copied());
        cands = cands
            .iter()
            .flat_map(|c| {
                origins.iter().map(move |o| AxisCandidate {
                    pivot: Some((*o).into()),
                    ..c.clone()
                })
            })
            .collect();
    }
    let scored = score_candidates(&cands, &region, kind, config);
    Ok((region, plane, pivots, scored))
}

/// Prismatic travel: the child's extent along `d`, toward the side of the
/// object's bounding box the child sits flush against, capped at the object's
/// extent along `d`.
pub fn prismatic_range(asset: &ObjectAsset, child: u32, d: &Vec3) -> Option<[f64; 2]> {
    let part = asset.part(child)?;
    let project = |pts: &mut dyn Iterator<Item = &Vec3>| {
        pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let t = p.dot(d);
            (lo.min(t), hi.max(t))
        })
    };
    let (cmin, cmax) = project(&mut part.mesh.vertices.iter());
    let (omin, omax) = project(&mut asset.parts.iter().flat_map(|p| p.mesh.vertices.iter()));
    let travel = (cmax - cmin).min(omax - omin);
    if cmin - omin <= omax - cmax {
        Some([-travel, 0.0])
    } else {
        Some([0.0, travel])
    }
}

/// Full automatic estimate for one joint. The result is never finalized.
pub fn estimate_constraint(
    asset: &ObjectAsset,
    child: u32,
    parent: u32,
    kind: KinematicKind,
    config: &KinematicsConfig,
) -> Result<Estimate, KinematicsError> {
    let (region, plane, pivots, candidates) = candidates_for_pair(asset, child, parent, kind, config)?;
    let mut constraint = KinematicConstraint::stub(kind, parent, child);
    match kind {
        KinematicKind::D => {
            let pv = pivots.as_ref().expect("pivots computed for D");
            constraint.pivot = Some(pv.top().into());
            constraint.range = Some(config.rotation_range);
        }
        _ => {
            let top = candidates
                .first()
                .ok_or_else(|| KinematicsError::DegenerateInput("no axis candidates".into()))?;
            constraint.direction = Some(top.direction_vec().normalize().into());
            if kind == KinematicKind::B {
                constraint.range = prismatic_range(asset, child, &top.direction_vec());
            } else {
                constraint.pivot = top.pivot;
                constraint.range = Some(config.rotation_range);
            }
        }
    }
    Ok(Estimate {
        constraint,
        candidates,
        plane,
        pivots,
        region_size: region.len(),
    })
}

/// The list offered to a reviewer. For `D` every pivot cluster becomes one
/// entry (direction = contact-plane normal, score = share of region points),
/// largest first; other kinds return the scored axis candidates.
pub fn review_candidates(
    asset: &ObjectAsset,
    child: u32,
    parent: u32,
    kind: KinematicKind,
    config: &KinematicsConfig,
) -> Result<Vec<AxisCandidate>, KinematicsError> {
    let (_, plane, pivots, candidates) = candidates_for_pair(asset, child, parent, kind, config)?;
    if kind != KinematicKind::D {
        return Ok(candidates);
    }
    let pv = pivots.expect("pivots computed for D");
    let total = pv.sizes.iter().sum::<usize>().max(1) as f64;
    let normal = canonical_sign(plane.normal_vec());
    let mut out: Vec<AxisCandidate> = pv
        .centers
        .iter()
        .zip(&pv.sizes)
        .map(|(c, &n)| AxisCandidate {
            direction: normal.into(),
            pivot: Some((*c).into()),
            score: n as f64 / total,
            provenance: CandidateSource::KmeansCenter,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Applies a chosen candidate to a constraint stub, producing a finalized joint.
pub fn finalize_with_candidate(
    stub: &KinematicConstraint,
    candidate: &AxisCandidate,
    range: Option<[f64; 2]>,
) -> KinematicConstraint {
    let mut c = stub.clone();
    if c.kind.needs_direction() {
        c.direction = Some(candidate.direction);
    }
    if c.kind.needs_pivot() {
        c.pivot = candidate.pivot;
    }
    if range.is_some() {
        c.range = range;
    }
    c.finalized = true;
    c
}

/// Finalizes a reviewer's pick. Without an explicit range, prismatic joints
/// take [`prismatic_range`] along the chosen direction and the rest take the
/// configured rotation range.
pub fn finalize_selection(
    asset: &ObjectAsset,
    stub: &KinematicConstraint,
    candidate: &AxisCandidate,
    range: Option<[f64; 2]>,
    config: &KinematicsConfig,
) -> KinematicConstraint {
    let range = range.or_else(|| match stub.kind {
        KinematicKind::B => stub
            .child_part
            .and_then(|c| prismatic_range(asset, c, &candidate.direction_vec())),
        _ => Some(config.rotation_range),
    });
    finalize_with_candidate(stub, candidate, range)
}

/// Angle between two lines (sign-insensitive), radians.
pub fn line_angle(a: &Vec3, b: &Vec3) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos()
}

/// Distance from `p` to the line through `origin` along `d`.
pub fn point_line_distance(p: &Vec3, origin: &Vec3, d: &Vec3) -> f64 {
    let d = d.normalize();
    let r = p - origin;
    (r - d * r.dot(&d)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::surface_sample;
    use crate::mesh::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn plane_points(n: usize, noise: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..n)
            .map(|_| {
                let z = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z)
            })
            .collect()
    }

    #[test]
    fn exact_plane() {
        let p = fit_plane(&plane_points(500, 0.0, 1)).unwrap();
        assert_eq!(p.normal, [0.0, 0.0, 1.0]);
        assert!(p.offset.abs() < 1e-12);
        assert!(p.rms_residual < 1e-9);
        assert!((p.normal_vec().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line = [Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 2.0, 2.0)];
        assert!(matches!(fit_plane(&line), Err(KinematicsError::DegenerateInput(_))));
        assert!(matches!(
            fit_plane(&line[..2]),
            Err(KinematicsError::DegenerateInput(_))
        ));
        assert!(matches!(
            fit_plane(&[Vec3::zeros(); 10]),
            Err(KinematicsError::DegenerateInput(_))
        ));
    }

    #[test]
    fn residual_invariant_under_rigid_motion() {
        let pts = plane_points(300, 0.02, 4);
        let base = fit_plane(&pts).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let shift = Vec3::new(0.4, -2.0, 7.0);
        let moved: Vec<Vec3> = pts.iter().map(|p| rot * p + shift).collect();
        let fitted = fit_plane(&moved).unwrap();
        assert!((fitted.rms_residual - base.rms_residual).abs() < 1e-9);
        assert!(line_angle(&fitted.normal_vec(), &(rot * base.normal_vec())) < 1e-6);
    }

    #[test]
    fn candidate_spacing() {
        let plane = fit_plane(&plane_points(200, 0.0, 2)).unwrap();
        let two = gen_axis_candidates(&plane, 2, KinematicKind::C);
        assert_eq!(two.len(), 2);
        assert!((line_angle(&two[0].direction_vec(), &two[1].direction_vec()) - PI / 2.0).abs() < 1e-9);
        for c in &two {
            assert!(c.direction_vec().dot(&Vec3::z()).abs() < 1e-9);
        }
        let twelve = gen_axis_candidates(&plane, 12, KinematicKind::C);
        for a in &twelve {
            for b in &twelve {
                let deg = line_angle(&a.direction_vec(), &b.direction_vec()).to_degrees();
                let r = deg / 15.0;
                assert!((r - r.round()).abs() < 1e-6, "{deg}");
            }
        }
        let b = gen_axis_candidates(&plane, 4, KinematicKind::B);
        assert_eq!(b.len(), 5);
        assert_eq!(b[4].direction, [0.0, 0.0, 1.0]);
        assert_eq!(
            b.iter().filter(|c| c.direction == [0.0, 0.0, 1.0]).count(),
            1
        );
    }

    fn cube_cloud(lo: [f64; 3], hi: [f64; 3], n: usize, seed: u64) -> PointCloud {
        surface_sample(&shapes::cuboid(Vec3::from(lo), Vec3::from(hi)), n, seed).unwrap()
    }

    #[test]
    fn contact_of_face_sharing_cubes() {
        let a = cube_cloud([-1.0, 0.0, 0.0], [0.0, 1.0, 1.0], 10_000, 1);
        let b = cube_cloud([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 10_000, 2);
        let r = contact_region(&a, &b, 0.02).unwrap();
        assert!(!r.child_points.is_empty() && !r.parent_points.is_empty());
        for p in r.points() {
            assert!(p.x.abs() <= 0.02 + 1e-12, "{p:?}");
        }
        let far = cube_cloud([2.0, 0.0, 0.0], [3.0, 1.0, 1.0], 2000, 3);
        assert!(matches!(contact_region(&a, &far, 0.02), Err(KinematicsError::NoContact(_))));
        let all = contact_region(&a, &far, f64::INFINITY).unwrap();
        assert_eq!(all.child_points, a);
        assert_eq!(all.parent_points, far);
    }

    #[test]
    fn contact_region_is_monotone_in_tau() {
        let a = cube_cloud([-1.0, 0.0, 0.0], [0.0, 1.0, 1.0], 3000, 5);
        let b = cube_cloud([0.01, 0.2, 0.2], [1.0, 0.8, 0.8], 3000, 6);
        let mut prev: Option<ContactRegion> = None;
        for tau in [0.015, 0.02, 0.05, 0.1, 0.3] {
            let r = contact_region(&a, &b, tau).unwrap();
            if let Some(p) = &prev {
                assert!(p.child_points.points.iter().all(|x| r.child_points.points.contains(x)));
                assert!(p.parent_points.points.iter().all(|x| r.parent_points.points.contains(x)));
            }
            prev = Some(r);
        }
    }

    #[test]
    fn identical_candidates_keep_order() {
        let a = cube_cloud([-1.0, 0.0, 0.0], [0.0, 1.0, 1.0], 2000, 1);
        let b = cube_cloud([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 2000, 2);
        let region = contact_region(&a, &b, 0.05).unwrap();
        let sources = [
            CandidateSource::Manual,
            CandidateSource::PlaneSampled,
            CandidateSource::KmeansCenter,
            CandidateSource::PlaneSampled,
            CandidateSource::Manual,
        ];
        let cands: Vec<AxisCandidate> = sources
            .iter()
            .map(|&provenance| AxisCandidate {
                direction: [0.0, 0.6, 0.8],
                pivot: None,
                score: 0.0,
                provenance,
            })
            .collect();
        let scored = score_candidates(&cands, &region, KinematicKind::C, &KinematicsConfig::default());
        assert!(scored.windows(2).all(|w| w[0].score == w[1].score));
        let order: Vec<CandidateSource> = scored.iter().map(|c| c.provenance).collect();
        assert_eq!(order, sources);
    }

    fn asset_from_boxes(boxes: &[([f64; 3], [f64; 3])]) -> ObjectAsset {
        let mut a = crate::fixtures::hinged_box();
        a.constraints.clear();
        a.parts = boxes
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| {
                crate::fixtures::make_part(
                    i as u32 + 1,
                    "box",
                    shapes::cuboid(Vec3::from(*lo), Vec3::from(*hi)),
                    "wood",
                    1,
                )
            })
            .collect();
        a
    }

    #[test]
    fn prismatic_range_toward_flush_side() {
        // Child flush with the -x face of the object.
        let a = asset_from_boxes(&[
            ([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]),
            ([-1.0, -0.5, -0.5], [0.2, 0.5, 0.5]),
        ]);
        let r = prismatic_range(&a, 2, &Vec3::x()).unwrap();
        assert!((r[0] + 1.2).abs() < 1e-12 && r[1] == 0.0);
        let a = asset_from_boxes(&[
            ([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]),
            ([0.5, -0.5, -0.5], [1.0, 0.5, 0.5]),
        ]);
        let r = prismatic_range(&a, 2, &Vec3::x()).unwrap();
        assert!(r[0] == 0.0 && (r[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_parses_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("k.toml");
        std::fs::write(&t, "tau = 0.03\nm = 6\n[weights]\nalignment = 0.2\n").unwrap();
        let c = KinematicsConfig::from_path(&t).unwrap();
        assert_eq!(c.tau, 0.03);
        assert_eq!(c.m, 6);
        assert_eq!(c.weights.alignment, 0.2);
        assert_eq!(c.weights.extent, 0.2);
        let j = dir.path().join("k.json");
        std::fs::write(&j, r#"{"k_max": 3, "seed": 9}"#).unwrap();
        let c = KinematicsConfig::from_path(&j).unwrap();
        assert_eq!((c.k_max, c.seed, c.tau), (3, 9, 0.02));
        std::fs::write(&j, r#"{"tau": -1}"#).unwrap();
        assert!(KinematicsConfig::from_path(&j).is_err());
        std::fs::write(&j, r#"{"bogus": 1}"#).unwrap();
        assert!(KinematicsConfig::from_path(&j).is_err());
    }

    #[test]
    fn review_list_leads_with_the_estimate() {
        let cfg = KinematicsConfig {
            samples: 3000,
            ..Default::default()
        };
        for asset in [crate::fixtures::laptop(), crate::fixtures::shower()] {
            let gt = asset.constraints.iter().find(|c| c.kind.has_parts()).unwrap();
            let (child, parent) = (gt.child_part.unwrap(), gt.parent_part.unwrap());
            let list = review_candidates(&asset, child, parent, gt.kind, &cfg).unwrap();
            let est = estimate_constraint(&asset, child, parent, gt.kind, &cfg).unwrap().constraint;
            assert!(!list.is_empty());
            if gt.kind == KinematicKind::D {
                assert_eq!(list[0].pivot, est.pivot);
                assert!(list.windows(2).all(|w| w[0].score >= w[1].score));
            } else {
                assert_eq!(Some(list[0].direction), est.direction);
            }
        }
    }
}
