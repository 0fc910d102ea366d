//! Procedural composition: grafting a jointed component from a donor asset onto
//! a base asset, either within one category or across categories.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::asset::{validate_asset, KinematicKind, ObjectAsset, Part};
use crate::geometry::{normalize_object, sample_part, GeometryError};
use crate::kinematics::{contact_region, fit_plane, KinematicsError};
use crate::mesh::{bounds_of, Mesh};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum ProcgenError {
    #[error("no compatible region: {0}")]
    NoCompatibleRegion(String),
    #[error("scale ratios {0:?} all fall outside the clamp")]
    ScaleOutOfBounds([f64; 2]),
    #[error("component protrudes {0:.3} beyond the base")]
    Protrusion(f64),
    #[error("unknown part {0}")]
    UnknownPart(u32),
    #[error("composed asset is invalid: {}", .0.join("; "))]
    ValidationFailure(Vec<String>),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Intra,
    Cross,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intra" => Ok(Mode::Intra),
            "cross" => Ok(Mode::Cross),
            other => Err(format!("unknown mode {other:?} (expected intra or cross)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcgenConfig {
    pub scale_clamp: [f64; 2],
    pub min_patch_area: f64,
    pub normal_tolerance_deg: f64,
    /// Faces join a patch within this angle of its seed normal...
    pub patch_angle_deg: f64,
    /// ...and this distance of its seed plane.
    pub patch_offset: f64,
    pub protrusion_tolerance: f64,
    /// Part-name substrings that mark cross-category components.
    pub cross_roles: Vec<String>,
    /// Categories taking part in enumeration; empty admits all.
    pub categories: Vec<String>,
    pub contact_tau: f64,
    pub contact_samples: usize,
    pub seed: u64,
}

impl Default for ProcgenConfig {
    fn default() -> Self {
        Self {
            scale_clamp: [0.3, 3.0],
            min_patch_area: 0.05,
            normal_tolerance_deg: 15.0,
            patch_angle_deg: 2.0,
            patch_offset: 0.01,
            protrusion_tolerance: 0.05,
            cross_roles: vec!["drawer".into(), "door".into()],
            categories: [
                "cabinet", "bottle", "faucet", "chair", "oven", "shower", "knife", "table", "laptop",
            ]
            .map(String::from)
            .to_vec(),
            contact_tau: 0.02,
            contact_samples: 4000,
            seed: 0,
        }
    }
}

/// Coplanar faces of one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPatch {
    pub faces: Vec<usize>,
    pub normal: Vec3,
    pub offset: f64,
    pub area: f64,
}

/// Greedy grouping in face order: each unassigned face seeds a patch and
/// collects later faces with a matching normal and plane offset.
pub fn planar_patches(mesh: &Mesh, angle_deg: f64, offset_tol: f64) -> Vec<PlanarPatch> {
    let cos_tol = angle_deg.to_radians().cos();
    let normals: Vec<Option<Vec3>> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
    let mut assigned = vec![false; mesh.faces.len()];
    let mut out = Vec::new();
    for seed in 0..mesh.faces.len() {
        let Some(n) = normals[seed] else { continue };
        if assigned[seed] {
            continue;
        }
        let offset = n.dot(&mesh.face_centroid(seed));
        let mut patch = PlanarPatch {
            faces: Vec::new(),
            normal: n,
            offset,
            area: 0.0,
        };
        for f in seed..mesh.faces.len() {
            if assigned[f] {
                continue;
            }
            let Some(m) = normals[f] else { continue };
            if m.dot(&n) >= cos_tol && (n.dot(&mesh.face_centroid(f)) - offset).abs() <= offset_tol {
                assigned[f] = true;
                patch.faces.push(f);
                patch.area += mesh.face_area(f);
            }
        }
        out.push(patch);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachmentRegion {
    pub base_part_id: u32,
    pub centroid: [f64; 3],
    /// In-plane axes then the outward normal; right-handed.
    pub frame: [[f64; 3]; 3],
    /// Spans along the frame axes (the normal span is 0).
    pub extent: [f64; 3],
    pub area: f64,
}

impl AttachmentRegion {
    pub fn frame_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&self.frame.map(Vec3::from))
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::from(self.frame[2])
    }
}

/// Frame whose first axis is the first world axis not too close to `n`, projected into the plane.
pub fn region_frame(n: &Vec3) -> [Vec3; 3] {
    let axis = [Vec3::x(), Vec3::y(), Vec3::z()]
        .into_iter()
        .find(|e| e.dot(n).abs() < 0.9)
        .expect("a unit vector is within 0.9 of at most one axis");
    let t1 = (axis - n * axis.dot(n)).normalize();
    let t2 = n.cross(&t1);
    [t1, t2, *n]
}

fn region_from_patch(part_id: u32, mesh: &Mesh, patch: &PlanarPatch) -> AttachmentRegion {
    let frame = region_frame(&patch.normal);
    let mut centroid = Vec3::zeros();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &f in &patch.faces {
        centroid += mesh.face_centroid(f) * mesh.face_area(f);
        for &vi in &mesh.faces[f] {
            let p = mesh.vertices[vi as usize];
            for a in 0..2 {
                let c = frame[a].dot(&p);
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
    }
    centroid /= patch.area;
    AttachmentRegion {
        base_part_id: part_id,
        centroid: centroid.into(),
        frame: frame.map(Into::into),
        extent: [hi[0] - lo[0], hi[1] - lo[1], 0.0],
        area: patch.area,
    }
}

/// Largest patch on `part_id` whose normal lies within tolerance of `normal`.
pub fn best_region(
    asset: &ObjectAsset,
    part_id: u32,
    normal: &Vec3,
    cfg: &ProcgenConfig,
) -> Result<AttachmentRegion, ProcgenError> {
    let part = asset.part(part_id).ok_or(ProcgenError::UnknownPart(part_id))?;
    let cos_tol = cfg.normal_tolerance_deg.to_radians().cos();
    let best = planar_patches(&part.mesh, cfg.patch_angle_deg, cfg.patch_offset)
        .into_iter()
        .filter(|p| p.area >= cfg.min_patch_area && p.normal.dot(normal) >= cos_tol)
        .fold(None::<PlanarPatch>, |best, p| match best {
            Some(b) if b.area >= p.area => Some(b),
            _ => Some(p),
        })
        .ok_or_else(|| {
            ProcgenError::NoCompatibleRegion(format!(
                "part {part_id} has no planar patch of area ≥ {} facing {:?}",
                cfg.min_patch_area,
                normal.as_slice()
            ))
        })?;
    Ok(region_from_patch(part_id, &part.mesh, &best))
}

/// A jointed subassembly of a donor: a root part and its joint descendants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub root: u32,
    pub parts: Vec<u32>,
    /// Donor part the root is jointed to.
    pub parent: u32,
    /// Contact-plane normal, pointing from the parent toward the root.
    pub contact_normal: [f64; 3],
    pub contact_centroid: [f64; 3],
    /// Matching region on the donor's parent part.
    pub donor_region: AttachmentRegion,
    /// Outward normal of the donor bounding-box face the component sits on.
    pub opening_axis: [f64; 3],
}

fn descendants(asset: &ObjectAsset, root: u32) -> Vec<u32> {
    let mut out = BTreeSet::from([root]);
    let mut frontier = vec![root];
    while let Some(p) = frontier.pop() {
        for c in &asset.constraints {
            if let (Some(pa), Some(ch)) = (c.parent_part, c.child_part) {
                if pa == p && out.insert(ch) {
                    frontier.push(ch);
                }
            }
        }
    }
    out.into_iter().collect()
}

fn parts_bounds(asset: &ObjectAsset, ids: &[u32]) -> Option<(Vec3, Vec3)> {
    bounds_of(
        asset
            .parts
            .iter()
            .filter(|p| ids.contains(&p.id))
            .flat_map(|p| p.mesh.vertices.iter()),
    )
}

const SIDES: [(usize, f64); 6] = [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)];

fn side_axis(side: (usize, f64)) -> Vec3 {
    let mut v = Vec3::zeros();
    v[side.0] = side.1;
    v
}

/// Analyses the component rooted at `root`, which must be the child of a joint.
pub fn component_of(donor: &ObjectAsset, root: u32, cfg: &ProcgenConfig) -> Result<Component, ProcgenError> {
    let parent = donor
        .constraint_for_child(root)
        .and_then(|c| c.parent_part)
        .ok_or(ProcgenError::UnknownPart(root))?;
    let parts = descendants(donor, root);
    let seed_for = |id: u32| cfg.seed.wrapping_mul(1_000_003).wrapping_add(id as u64);
    let child_cloud = sample_part(donor, root, cfg.contact_samples, seed_for(root)).ok_or(ProcgenError::UnknownPart(root))?;
    let parent_cloud =
        sample_part(donor, parent, cfg.contact_samples, seed_for(parent)).ok_or(ProcgenError::UnknownPart(parent))?;
    let region = contact_region(&child_cloud, &parent_cloud, cfg.contact_tau)?;
    let plane = fit_plane(&region.points())?;
    let mut n = plane.normal_vec();
    let centroid = plane.centroid_vec();
    if (child_cloud.centroid() - centroid).dot(&n) < 0.0 {
        n = -n;
    }
    let donor_region = best_region(donor, parent, &n, cfg)?;
    let (dlo, dhi) = donor.bounds().ok_or(ProcgenError::UnknownPart(root))?;
    let (clo, chi) = parts_bounds(donor, &parts).ok_or(ProcgenError::UnknownPart(root))?;
    let gap = |(a, s): (usize, f64)| if s < 0.0 { clo[a] - dlo[a] } else { dhi[a] - chi[a] };
    let mut opening = SIDES[0];
    for side in SIDES {
        if gap(side) < gap(opening) - 1e-9 {
            opening = side;
        }
    }
    Ok(Component {
        root,
        parts,
        parent,
        contact_normal: n.into(),
        contact_centroid: centroid.into(),
        donor_region,
        opening_axis: side_axis(opening).into(),
    })
}

/// Region on `base` analogous to the component's contact with its donor parent.
/// The base part is the one named like the donor parent, else the largest by area.
pub fn find_attachment_region(
    base: &ObjectAsset,
    donor: &ObjectAsset,
    component: &Component,
    cfg: &ProcgenConfig,
) -> Result<AttachmentRegion, ProcgenError> {
    let parent_name = donor.part(component.parent).map(|p| p.name.as_str()).unwrap_or_default();
    let designated = base
        .parts
        .iter()
        .find(|p| p.name == parent_name)
        .or_else(|| {
            base.parts
                .iter()
                .fold(None::<&Part>, |best, p| match best {
                    Some(b) if b.mesh.surface_area() >= p.mesh.surface_area() => Some(b),
                    _ => Some(p),
                })
        })
        .ok_or_else(|| ProcgenError::NoCompatibleRegion("base has no parts".into()))?;
    best_region(base, designated.id, &Vec3::from(component.contact_normal), cfg)
}

/// `p ↦ c_r + R·F_d·diag(s)·F_dᵀ·(p − c_d)` with `R = F_r·F_dᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Per-axis scale along the donor region frame.
    pub scale: [f64; 3],
    pub donor_frame: [[f64; 3]; 3],
    pub rotation: [[f64; 3]; 3],
    pub donor_centroid: [f64; 3],
    pub region_centroid: [f64; 3],
}

impl Placement {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&self.rotation.map(Vec3::from))
    }

    /// Linear part `R·F_d·diag(s)·F_dᵀ`.
    pub fn linear(&self) -> Matrix3<f64> {
        let fd = Matrix3::from_columns(&self.donor_frame.map(Vec3::from));
        let s = Matrix3::from_diagonal(&Vec3::from(self.scale));
        self.rotation_matrix() * fd * s * fd.transpose()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        Vec3::from(self.region_centroid) + self.linear() * (p - Vec3::from(self.donor_centroid))
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.region_centroid) - self.linear() * Vec3::from(self.donor_centroid)
    }
}

/// Aligns the donor region frame to the target region frame, scaling in-plane
/// by the extent ratios (clamped) and along the normal by the smaller of the two.
pub fn fit_component(
    region: &AttachmentRegion,
    donor_region: &AttachmentRegion,
    cfg: &ProcgenConfig,
) -> Result<Placement, ProcgenError> {
    let [lo, hi] = cfg.scale_clamp;
    let ratios = [0, 1].map(|a| region.extent[a] / donor_region.extent[a]);
    if ratios.iter().all(|r| !(lo..=hi).contains(r)) {
        return Err(ProcgenError::ScaleOutOfBounds(ratios));
    }
    let [s1, s2] = ratios.map(|r| r.clamp(lo, hi));
    let fr = region.frame_matrix();
    let fd = donor_region.frame_matrix();
    let rotation = fr * fd.transpose();
    Ok(Placement {
        scale: [s1, s2, s1.min(s2)],
        donor_frame: donor_region.frame,
        rotation: [0, 1, 2].map(|c| rotation.column(c).into_owned().into()),
        donor_centroid: donor_region.centroid,
        region_centroid: region.centroid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenPlan {
    pub base_asset_id: String,
    pub component_asset_id: String,
    pub component_root_part: u32,
    pub mode: Mode,
    pub region: AttachmentRegion,
    pub transform: Placement,
    /// Base parts dropped to make room (intra mode).
    pub replaced_parts: Vec<u32>,
}

/// How far the placed component leaves the base bounding box on any side
/// other than the opening side.
pub fn protrusion(base: &ObjectAsset, donor: &ObjectAsset, component: &Component, placement: &Placement) -> f64 {
    let Some((blo, bhi)) = base.bounds() else { return f64::INFINITY };
    let moved: Vec<Vec3> = donor
        .parts
        .iter()
        .filter(|p| component.parts.contains(&p.id))
        .flat_map(|p| p.mesh.vertices.iter().map(|v| placement.apply(v)))
        .collect();
    let Some((clo, chi)) = bounds_of(&moved) else { return f64::INFINITY };
    let open = placement.rotation_matrix() * Vec3::from(component.opening_axis);
    let open_axis = open.iamax();
    let open_side = (open_axis, open[open_axis].signum());
    SIDES
        .iter()
        .filter(|&&s| s != open_side)
        .map(|&(a, s)| if s < 0.0 { blo[a] - clo[a] } else { chi[a] - bhi[a] })
        .fold(0.0, f64::max)
}

/// Plans one graft, or says why the pair is incompatible.
pub fn plan_pair(
    (base_id, base): (&str, &ObjectAsset),
    (donor_id, donor): (&str, &ObjectAsset),
    component: &Component,
    mode: Mode,
    cfg: &ProcgenConfig,
) -> Result<GenPlan, ProcgenError> {
    let root_name = donor.part(component.root).map(|p| p.name.clone()).unwrap_or_default();
    let replaced = match mode {
        Mode::Intra => base
            .parts
            .iter()
            .find(|p| p.name == root_name)
            .map(|p| descendants(base, p.id))
            .unwrap_or_default(),
        Mode::Cross => Vec::new(),
    };
    let region = find_attachment_region(base, donor, component, cfg)?;
    if replaced.contains(&region.base_part_id) {
        return Err(ProcgenError::NoCompatibleRegion("region lies on a replaced part".into()));
    }
    let transform = fit_component(&region, &component.donor_region, cfg)?;
    let p = protrusion(base, donor, component, &transform);
    if p > cfg.protrusion_tolerance {
        return Err(ProcgenError::Protrusion(p));
    }
    Ok(GenPlan {
        base_asset_id: base_id.to_string(),
        component_asset_id: donor_id.to_string(),
        component_root_part: component.root,
        mode,
        region,
        transform,
        replaced_parts: replaced,
    })
}

/// Base parts minus replaced ones (renumbered from 1), then the transformed
/// component numbered after them; joints re-targeted and the result renormalized.
pub fn compose(base: &ObjectAsset, donor: &ObjectAsset, plan: &GenPlan) -> Result<ObjectAsset, ProcgenError> {
    let component = descendants(donor, plan.component_root_part);
    let mut out = base.clone();
    out.parts.retain(|p| !plan.replaced_parts.contains(&p.id));
    out.constraints.retain(|c| {
        ![c.parent_part, c.child_part]
            .iter()
            .flatten()
            .any(|id| plan.replaced_parts.contains(id))
    });
    let base_ids: BTreeMap<u32, u32> = out.parts.iter().enumerate().map(|(i, p)| (p.id, i as u32 + 1)).collect();
    for p in &mut out.parts {
        p.id = base_ids[&p.id];
    }
    for c in &mut out.constraints {
        c.parent_part = c.parent_part.map(|id| base_ids[&id]);
        c.child_part = c.child_part.map(|id| base_ids[&id]);
    }
    let anchor = *base_ids
        .get(&plan.region.base_part_id)
        .ok_or(ProcgenError::UnknownPart(plan.region.base_part_id))?;
    let next = out.parts.len() as u32 + 1;
    let ids: BTreeMap<u32, u32> = component.iter().enumerate().map(|(i, &id)| (id, next + i as u32)).collect();
    let m = plan.transform.linear();
    for &old in &component {
        let src = donor.part(old).ok_or(ProcgenError::UnknownPart(old))?;
        let mut part = src.clone();
        part.id = ids[&old];
        part.mesh = src.mesh.transform(|v| plan.transform.apply(v));
        out.parts.push(part);
    }
    for c in &donor.constraints {
        let Some(child) = c.child_part.filter(|ch| ids.contains_key(ch)) else { continue };
        let mut nc = c.clone();
        nc.child_part = Some(ids[&child]);
        nc.parent_part = match c.parent_part {
            Some(p) if ids.contains_key(&p) => Some(ids[&p]),
            _ => Some(anchor),
        };
        if let Some(d) = c.direction_vec() {
            let md = m * d;
            nc.direction = Some(md.normalize().into());
            if c.kind == KinematicKind::B {
                nc.range = c.range.map(|r| r.map(|x| x * md.norm()));
            }
        }
        nc.pivot = c.pivot_vec().map(|p| plan.transform.apply(&p).into());
        out.constraints.push(nc);
    }
    out.object_name = format!("{}+{}", base.object_name, donor.object_name);
    out.provenance = format!(
        "procgen:{}:{}+{}#{}",
        match plan.mode {
            Mode::Intra => "intra",
            Mode::Cross => "cross",
        },
        plan.base_asset_id,
        plan.component_asset_id,
        plan.component_root_part
    );
    let out = normalize_object(&out)?;
    let violations = validate_asset(&out);
    if !violations.is_empty() {
        return Err(ProcgenError::ValidationFailure(
            violations.iter().map(|v| format!("{}: {}", v.path, v.message)).collect(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub base_asset_id: String,
    pub component_asset_id: String,
    pub component_root_part: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub plans: Vec<GenPlan>,
    pub rejected: Vec<Rejection>,
}

impl Enumeration {
    pub fn count(&self) -> usize {
        self.plans.len()
    }
}

fn in_categories(asset: &ObjectAsset, cfg: &ProcgenConfig) -> bool {
    cfg.categories.is_empty() || cfg.categories.iter().any(|c| c.eq_ignore_ascii_case(&asset.category))
}

/// Component roots a donor offers in `mode`.
pub fn component_roots(donor: &ObjectAsset, mode: Mode, cfg: &ProcgenConfig) -> Vec<u32> {
    let mut roots: Vec<u32> = donor
        .constraints
        .iter()
        .filter(|c| c.kind.has_parts())
        .filter_map(|c| c.child_part)
        .filter(|&r| {
            mode == Mode::Intra
                || donor.part(r).is_some_and(|p| {
                    let name = p.name.to_lowercase();
                    cfg.cross_roles.iter().any(|role| name.contains(&role.to_lowercase()))
                })
        })
        .collect();
    roots.sort_unstable();
    roots.dedup();
    roots
}

/// Whether `(base, donor, root)` is even considered in `mode`, before geometry.
pub fn admissible(base: (&str, &ObjectAsset), donor: (&str, &ObjectAsset), root: u32, mode: Mode, cfg: &ProcgenConfig) -> bool {
    if base.0 == donor.0 || !in_categories(base.1, cfg) || !in_categories(donor.1, cfg) {
        return false;
    }
    match mode {
        Mode::Cross => true,
        Mode::Intra => {
            let root_name = donor.1.part(root).map(|p| p.name.as_str()).unwrap_or_default();
            base.1.category.eq_ignore_ascii_case(&donor.1.category) && base.1.parts.iter().any(|p| p.name == root_name)
        }
    }
}

/// Every admissible (base, donor component) pair that yields a plan, base-major.
pub fn enumerate_plans(
    bases: &[(String, ObjectAsset)],
    donors: &[(String, ObjectAsset)],
    mode: Mode,
    cfg: &ProcgenConfig,
) -> Enumeration {
    let mut components: Vec<(usize, Result<Component, String>)> = Vec::new();
    for (di, (_, donor)) in donors.iter().enumerate() {
        for root in component_roots(donor, mode, cfg) {
            components.push((di, component_of(donor, root, cfg).map_err(|e| format!("{root}: {e}"))));
        }
    }
    let mut out = Enumeration {
        plans: Vec::new(),
        rejected: Vec::new(),
    };
    for (base_id, base) in bases {
        for (di, comp) in &components {
            let (donor_id, donor) = &donors[*di];
            let reject = |root: u32, reason: String| Rejection {
                base_asset_id: base_id.clone(),
                component_asset_id: donor_id.clone(),
                component_root_part: root,
                reason,
            };
            let comp = match comp {
                Ok(c) => c,
                Err(e) => {
                    if base_id != donor_id {
                        out.rejected.push(reject(0, e.clone()));
                    }
                    continue;
                }
            };
            if !admissible((base_id, base), (donor_id, donor), comp.root, mode, cfg) {
                continue;
            }
            match plan_pair((base_id, base), (donor_id, donor), comp, mode, cfg) {
                Ok(plan) => out.plans.push(plan),
                Err(e) => out.rejected.push(reject(comp.root, e.to_string())),
            }
        }
    }
    log::info!("{} plans, {} rejected", out.plans.len(), out.rejected.len());
    out
}
