//! Normalization, tiny-part merging, surface sampling and nearest-distance queries.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asset::{validate_asset, KinematicConstraint, KinematicKind, ObjectAsset, Violation};
use crate::mesh::Mesh;
use crate::spatial::{dist2, PointIndex};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("geometry is empty")]
    EmptyGeometry,
    #[error("geometry has zero extent")]
    ZeroExtent,
    #[error("result failed validation: {0:?}")]
    Validation(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub source_part: Option<u32>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, source_part: Option<u32>) -> Self {
        Self {
            points,
            source_part,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len().max(1) as f64
    }
}

/// Uniform scale + translation mapping raw coordinates into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.center)) * self.scale
    }

    /// Maps a constraint expressed in the raw frame into the normalized frame.
    pub fn apply_constraint(&self, c: &KinematicConstraint) -> KinematicConstraint {
        let mut out = c.clone();
        out.pivot = c.pivot.map(|p| self.apply(&Vec3::from(p)).into());
        if c.kind == KinematicKind::B {
            out.range = c.range.map(|[lo, hi]| [lo * self.scale, hi * self.scale]);
        }
        out
    }
}

/// The transform [`normalize_object`] would apply.
pub fn normalization_transform(asset: &ObjectAsset) -> Result<NormalizeTransform, GeometryError> {
    let (lo, hi) = asset.bounds().ok_or(GeometryError::EmptyGeometry)?;
    let half = ((hi - lo) * 0.5).max();
    if !(half > 0.0) || !half.is_finite() {
        return Err(GeometryError::ZeroExtent);
    }
    let center = (lo + hi) * 0.5;
    Ok(NormalizeTransform {
        center: center.into(),
        scale: 1.0 / half,
    })
}

/// Centers the union bounding box at the origin and scales uniformly so the
/// largest half-extent is 1. Pivots and prismatic ranges follow the transform;
/// `absolute_scale` is untouched.
pub fn normalize_object(asset: &ObjectAsset) -> Result<ObjectAsset, GeometryError> {
    let t = normalization_transform(asset)?;
    Ok(apply_transform(asset, &t))
}

pub fn apply_transform(asset: &ObjectAsset, t: &NormalizeTransform) -> ObjectAsset {
    let mut out = asset.clone();
    for part in &mut out.parts {
        part.mesh = part.mesh.transform(|p| t.apply(p));
    }
    out.constraints = asset.constraints.iter().map(|c| t.apply_constraint(c)).collect();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergePolicy {
    pub area_threshold_hard: f64,
    pub face_threshold: usize,
    pub area_threshold_soft: f64,
    /// Parts are adjacent when their sampled clouds come closer than this.
    pub adjacency_distance: f64,
    pub adjacency_samples: usize,
    pub seed: u64,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            area_threshold_hard: 0.2,
            face_threshold: 100,
            area_threshold_soft: 0.06,
            adjacency_distance: 0.01,
            adjacency_samples: 1024,
            seed: 0,
        }
    }
}

impl MergePolicy {
    /// A part is merged when its area is at most the hard threshold, or when it
    /// has at most `face_threshold` faces and an area at most the soft threshold.
    pub fn is_tiny(&self, area: f64, faces: usize) -> bool {
        area <= self.area_threshold_hard
            || (faces <= self.face_threshold && area <= self.area_threshold_soft)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    /// Original id of the absorbed part.
    pub absorbed: u32,
    /// Original id of the absorbing part.
    pub into: u32,
    pub contact_points: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergeReport {
    pub merges: Vec<MergeEvent>,
    /// Original ids of tiny parts with no adjacent part; left unmerged.
    pub isolated: Vec<u32>,
    /// Original part id → id in the merged asset.
    pub id_map: BTreeMap<u32, u32>,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub asset: ObjectAsset,
    pub report: MergeReport,
}

struct Group {
    id: u32,
    mesh: Mesh,
    cloud: Vec<Vec3>,
    index: PointIndex,
    members: Vec<u32>,
}

/// Absorbs tiny parts into their most-touching neighbour until only large or
/// isolated parts remain. Parts are processed smallest-area first; ids are
/// re-issued consecutively and constraints remapped (joints that collapse
/// into a single part are dropped).
pub fn merge_tiny_parts(
    asset: &ObjectAsset,
    policy: &MergePolicy,
) -> Result<MergeOutcome, GeometryError> {
    let mut groups: Vec<Group> = Vec::with_capacity(asset.parts.len());
    for part in &asset.parts {
        let cloud = surface_sample(
            &part.mesh,
            policy.adjacency_samples.max(1),
            policy.seed ^ (part.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?
        .points;
        groups.push(Group {
            id: part.id,
            mesh: part.mesh.clone(),
            index: PointIndex::new(&cloud),
            cloud,
            members: vec![part.id],
        });
    }

    let mut report = MergeReport::default();
    let limit2 = policy.adjacency_distance * policy.adjacency_distance;
    loop {
        let candidate = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| !report.isolated.contains(&g.id))
            .map(|(i, g)| (i, g.mesh.surface_area(), g.mesh.faces.len()))
            .filter(|&(_, area, faces)| policy.is_tiny(area, faces))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(groups[a.0].id.cmp(&groups[b.0].id)));
        let Some((ti, _, _)) = candidate else { break };

        let mut best: Option<(usize, usize)> = None;
        for (gi, g) in groups.iter().enumerate() {
            if gi == ti {
                continue;
            }
            let contact = groups[ti]
                .cloud
                .iter()
                .filter(|p| g.index.nearest(p).1 < limit2)
                .count();
            if contact > 0 && best.is_none_or(|(_, c)| contact > c) {
                best = Some((gi, contact));
            }
        }
        match best {
            None => report.isolated.push(groups[ti].id),
            Some((ai, contact)) => {
                let tiny = groups.remove(ti);
                let ai = if ai > ti { ai - 1 } else { ai };
                let absorber = &mut groups[ai];
                report.merges.push(MergeEvent {
                    absorbed: tiny.id,
                    into: absorber.id,
                    contact_points: contact,
                });
                absorber.mesh.append(&tiny.mesh);
                absorber.cloud.extend_from_slice(&tiny.cloud);
                absorber.index = PointIndex::new(&absorber.cloud);
                absorber.members.extend(tiny.members);
            }
        }
    }

    // Surviving groups keep their original relative order.
    let mut owner: BTreeMap<u32, u32> = BTreeMap::new();
    let mut out = asset.clone();
    out.parts.clear();
    for (new_idx, g) in groups.iter().enumerate() {
        let new_id = new_idx as u32 + 1;
        for &m in &g.members {
            owner.insert(m, new_id);
        }
        let mut part = asset.part(g.id).expect("group id from asset").clone();
        part.id = new_id;
        part.mesh = g.mesh.clone();
        out.parts.push(part);
    }
    report.id_map = owner.clone();

    let mut constraints: Vec<KinematicConstraint> = Vec::new();
    for c in &asset.constraints {
        let mut c = c.clone();
        c.parent_part = c.parent_part.map(|p| owner[&p]);
        c.child_part = c.child_part.map(|p| owner[&p]);
        if c.kind.has_parts() && c.parent_part == c.child_part {
            continue;
        }
        if !constraints.contains(&c) {
            constraints.push(c);
        }
    }
    out.constraints = constraints;

    let violations = validate_asset(&out);
    if !violations.is_empty() {
        return Err(GeometryError::Validation(violations));
    }
    Ok(MergeOutcome { asset: out, report })
}

/// Area-weighted uniform surface samples with the face each came from.
pub fn surface_sample_with_faces(
    mesh: &Mesh,
    n: usize,
    seed: u64,
) -> Result<(Vec<Vec3>, Vec<u32>), GeometryError> {
    let areas = mesh.face_areas();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut total = 0.0;
    for a in &areas {
        total += a;
        cumulative.push(total);
    }
    if mesh.faces.is_empty() || !(total > 0.0) {
        return Err(GeometryError::EmptyGeometry);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let f = cumulative
            .partition_point(|&c| c <= target)
            .min(areas.len() - 1);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = mesh.triangle(f);
        points.push(a + (b - a) * u + (c - a) * v);
        faces.push(f as u32);
    }
    Ok((points, faces))
}

/// `n` area-weighted uniform surface samples, deterministic in `seed`.
pub fn surface_sample(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    Ok(PointCloud::new(surface_sample_with_faces(mesh, n, seed)?.0, None))
}

/// Samples a part and tags the cloud with its id.
pub fn sample_part(asset: &ObjectAsset, part: u32, n: usize, seed: u64) -> Option<PointCloud> {
    let p = asset.part(part)?;
    let mut cloud = surface_sample(&p.mesh, n, seed).ok()?;
    cloud.source_part = Some(part);
    Some(cloud)
}

/// Distance from every query point to its nearest target point.
pub fn nearest_distances(query: &PointCloud, target: &PointCloud) -> Vec<f64> {
    nearest_distances_sq(&query.points, &target.points)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Squared nearest distances; empty when `target` is empty.
pub fn nearest_distances_sq(query: &[Vec3], target: &[Vec3]) -> Vec<f64> {
    if target.is_empty() {
        return vec![f64::INFINITY; query.len()];
    }
    let index = PointIndex::new(target);
    query.iter().map(|q| index.nearest(q).1).collect()
}

/// O(n·m) reference for [`nearest_distances`].
pub fn brute_nearest_distances(query: &PointCloud, target: &PointCloud) -> Vec<f64> {
    query
        .points
        .iter()
        .map(|q| {
            target
                .points
                .iter()
                .map(|t| dist2(q, t))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::{AbsoluteScale, DescriptionSet, MaterialSpec, Part};
    use crate::mesh::shapes;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};

    fn part(id: u32, mesh: Mesh) -> Part {
        Part {
            id,
            name: format!("p{id}"),
            mesh,
            material: MaterialSpec::new("steel", 200.0, 0.3, 7.8),
            affordance_rank: 5,
            descriptions: DescriptionSet::default(),
        }
    }

    fn asset(parts: Vec<Part>) -> ObjectAsset {
        ObjectAsset {
            object_name: "t".into(),
            category: "c".into(),
            absolute_scale: AbsoluteScale::new(10.0, 10.0, 10.0),
            parts,
            constraints: vec![],
            provenance: String::new(),
        }
    }

    fn cube(lo: [f64; 3], hi: [f64; 3]) -> Mesh {
        shapes::cuboid(Vec3::from(lo), Vec3::from(hi))
    }

    #[test]
    fn normalize_cube_to_unit() {
        let a = asset(vec![part(1, cube([0.0; 3], [2.0; 3]))]);
        let n = normalize_object(&a).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert_eq!(lo, Vec3::new(-1.0, -1.0, -1.0));
        assert_eq!(hi, Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(n.absolute_scale, a.absolute_scale);
    }

    #[test]
    fn normalize_preserves_ratios() {
        let a = asset(vec![part(1, cube([-2.0, -1.0, -1.0], [2.0, 1.0, 1.0]))]);
        let n = normalize_object(&a).unwrap();
        let (lo, hi) = n.bounds().unwrap();
        assert_eq!((hi - lo) * 0.5, Vec3::new(1.0, 0.5, 0.5));
    }

    #[test]
    fn normalize_empty_fails() {
        let mut a = asset(vec![part(1, Mesh::default())]);
        assert!(matches!(normalize_object(&a), Err(GeometryError::EmptyGeometry)));
        a.parts[0].mesh.vertices.push(Vec3::new(1.0, 1.0, 1.0));
        assert!(matches!(normalize_object(&a), Err(GeometryError::ZeroExtent)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn normalize_postcondition_and_idempotence(
            coords in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 3..40),
        ) {
            let verts: Vec<Vec3> = coords.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let faces = (1..verts.len() as u32 - 1).map(|i| [0, i, i + 1]).collect();
            let a = asset(vec![part(1, Mesh::new(verts, faces))]);
            let Ok(n) = normalize_object(&a) else { return Ok(()); };
            let (lo, hi) = n.bounds().unwrap();
            let max_abs = lo.abs().sup(&hi.abs()).max();
            prop_assert!((max_abs - 1.0).abs() < 1e-9);
            let axis = (hi - lo).imax();
            prop_assert!((lo[axis] + 1.0).abs() < 1e-9);
            prop_assert!(((lo + hi) * 0.5).amax() < 1e-9);
            let nn = normalize_object(&n).unwrap();
            for (p, q) in n.parts[0].mesh.vertices.iter().zip(&nn.parts[0].mesh.vertices) {
                prop_assert!((p - q).amax() < 1e-12);
            }
        }
    }

    /// Enumerates the 8 sides of the three thresholds with boundary values and
    /// checks the rule against a literal truth table.
    #[test]
    fn merge_predicate_truth_table() {
        let p = MergePolicy::default();
        // (area, faces, expected)
        let cases = [
            // area ≤ 0.06 (so also ≤ 0.2): always merged by the hard rule
            (0.06, 100, true),
            (0.06, 101, true),
            // 0.06 < area ≤ 0.2: hard rule
            (0.2, 100, true),
            (0.2, 101, true),
            // area > 0.2 and > 0.06: never merged
            (0.2000001, 100, false),
            (0.2000001, 101, false),
            (0.25, 10, false),
            (0.05, 150, true),
        ];
        for (area, faces, expected) in cases {
            assert_eq!(p.is_tiny(area, faces), expected, "area {area} faces {faces}");
        }
        // Soft rule on its own, with the hard threshold disabled.
        let soft_only = MergePolicy {
            area_threshold_hard: 0.0,
            ..MergePolicy::default()
        };
        assert!(soft_only.is_tiny(0.05, 60));
        assert!(soft_only.is_tiny(0.06, 100));
        assert!(!soft_only.is_tiny(0.05, 150));
        assert!(!soft_only.is_tiny(0.07, 60));
    }

    #[test]
    fn fragment_absorbed_into_touching_panel() {
        // Large panel and a small fragment resting on it.
        let panel = cube([-1.0, -1.0, -0.1], [1.0, 1.0, 0.0]);
        let frag = cube([0.0, 0.0, 0.0], [0.1, 0.1, 0.05]);
        let far = cube([-1.0, -1.0, 0.5], [1.0, 1.0, 0.6]);
        let a = asset(vec![part(1, panel), part(2, frag), part(3, far)]);
        let out = merge_tiny_parts(&a, &MergePolicy::default()).unwrap();
        assert_eq!(out.asset.parts.len(), 2);
        assert_eq!(out.report.merges.len(), 1);
        assert_eq!(out.report.merges[0].absorbed, 2);
        assert_eq!(out.report.merges[0].into, 1);
        assert_eq!(out.report.id_map, BTreeMap::from([(1, 1), (2, 1), (3, 2)]));
        assert_eq!(out.asset.parts[0].mesh.faces.len(), 24);
    }

    #[test]
    fn large_part_retained_and_isolated_reported() {
        // 0.5 x 0.5 x 0.05 slab: area 0.6 > 0.2, retained.
        let slab = cube([0.0, 0.0, 0.0], [0.5, 0.5, 0.05]);
        let lonely = cube([0.9, 0.9, 0.9], [0.95, 0.95, 0.95]);
        let a = asset(vec![part(1, slab), part(2, lonely)]);
        let out = merge_tiny_parts(&a, &MergePolicy::default()).unwrap();
        assert_eq!(out.asset.parts.len(), 2);
        assert_eq!(out.report.isolated, vec![2]);
    }

    #[test]
    fn merge_remaps_constraints() {
        let base = cube([-1.0, -1.0, -1.0], [1.0, 1.0, 0.0]);
        let knob = cube([0.0, 0.0, 0.0], [0.05, 0.05, 0.05]);
        let lid = cube([-1.0, -1.0, 0.0], [1.0, 1.0, 0.2]);
        let mut a = asset(vec![part(1, base), part(2, knob), part(3, lid)]);
        a.constraints.push(KinematicConstraint {
            kind: KinematicKind::C,
            parent_part: Some(1),
            child_part: Some(3),
            direction: Some([0.0, 1.0, 0.0]),
            pivot: Some([1.0, 0.0, 0.0]),
            range: Some([0.0, 1.0]),
            finalized: true,
        });
        let out = merge_tiny_parts(&a, &MergePolicy::default()).unwrap();
        assert_eq!(out.asset.parts.len(), 2);
        assert_eq!(out.asset.constraints[0].parent_part, Some(1));
        assert_eq!(out.asset.constraints[0].child_part, Some(2));
        assert!(validate_asset(&out.asset).is_empty());
    }

    #[test]
    fn sampling_is_deterministic_and_on_surface() {
        let tri = Mesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        );
        for seed in 0..50 {
            let c = surface_sample(&tri, 1, seed).unwrap();
            assert_eq!(c.len(), 1);
            let p = c.points[0];
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-15 && p.z == 0.0);
        }
        let m = shapes::sphere(Vec3::zeros(), 1.0, 16, 8);
        assert_eq!(surface_sample(&m, 500, 9).unwrap(), surface_sample(&m, 500, 9).unwrap());
        assert!(matches!(
            surface_sample(&Mesh::default(), 5, 0),
            Err(GeometryError::EmptyGeometry)
        ));
    }

    /// Binomial oracle: each triangle of a unit square receives Bin(n, 1/2) samples.
    #[test]
    fn sampling_is_area_weighted() {
        let square = Mesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let n = 10_000;
        let sigma = (n as f64 * 0.25).sqrt();
        for seed in 0..5 {
            let (_, faces) = surface_sample_with_faces(&square, n, seed).unwrap();
            let first = faces.iter().filter(|&&f| f == 0).count() as f64;
            assert!((first - n as f64 / 2.0).abs() < 3.0 * sigma, "seed {seed}: {first}");
        }
        // Unequal areas: 3:1 split.
        let skew = Mesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(1.0, 0.0, 1.0),
                Vec3::new(0.0, 1.0, 1.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        let (_, faces) = surface_sample_with_faces(&skew, n, 1).unwrap();
        let big = faces.iter().filter(|&&f| f == 0).count() as f64;
        let sigma = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((big - 0.75 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn nearest_distance_examples() {
        let q = PointCloud::new(vec![Vec3::zeros()], None);
        let t = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)], None);
        assert_eq!(nearest_distances(&q, &t), vec![1.0]);
        let m = shapes::sphere(Vec3::zeros(), 1.0, 10, 6);
        let c = surface_sample(&m, 300, 2).unwrap();
        assert!(nearest_distances(&c, &c).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn nearest_distances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cloud = |n: usize| {
            PointCloud::new(
                (0..n)
                    .map(|_| {
                        Vec3::new(
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                        )
                    })
                    .collect(),
                None,
            )
        };
        let a = cloud(2000);
        let b = cloud(2000);
        let fast = nearest_distances(&a, &b);
        let slow = brute_nearest_distances(&a, &b);
        assert_eq!(fast, slow);
        for n in [1, 7, 100, 999, 5000] {
            let a = cloud(n);
            let b = cloud(n.max(3) / 3);
            assert_eq!(nearest_distances(&a, &b), brute_nearest_distances(&a, &b));
        }
    }
}
