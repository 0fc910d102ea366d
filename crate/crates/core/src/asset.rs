//! Part-level physical asset schema, validation, and the on-disk directory format.
//!
//! An asset directory holds `asset.json` (UTF-8, keys in canonical sorted order)
//! and one `part_<id>.obj` per part. Revolute ranges are stored in radians,
//! translation ranges in normalized object units.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::{Mesh, ObjError};
use crate::Vec3;

pub const ASSET_FILE: &str = "asset.json";
pub const FORMAT_VERSION: u32 = 1;

/// Slack allowed on the `[-1, 1]` coordinate invariant.
pub const COORD_TOLERANCE: f64 = 1e-9;
/// Slack allowed on unit-length joint directions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KinematicKind {
    /// Touching, no movement constraint.
    A,
    /// Prismatic.
    B,
    /// Revolute about an axis.
    C,
    /// Rotation about a point.
    D,
    /// Rigid.
    E,
    /// Combined revolute + prismatic about one axis.
    CB,
}

impl KinematicKind {
    pub const ALL: [KinematicKind; 6] = [
        KinematicKind::A,
        KinematicKind::B,
        KinematicKind::C,
        KinematicKind::D,
        KinematicKind::E,
        KinematicKind::CB,
    ];

    /// Numeric encoding used by feature packing and property renders.
    pub fn code(self) -> u8 {
        match self {
            KinematicKind::A => 0,
            KinematicKind::B => 1,
            KinematicKind::C => 2,
            KinematicKind::D => 3,
            KinematicKind::E => 4,
            KinematicKind::CB => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn has_parts(self) -> bool {
        !matches!(self, KinematicKind::A | KinematicKind::E)
    }

    pub fn needs_direction(self) -> bool {
        matches!(self, KinematicKind::B | KinematicKind::C | KinematicKind::CB)
    }

    pub fn needs_pivot(self) -> bool {
        matches!(self, KinematicKind::C | KinematicKind::D | KinematicKind::CB)
    }

    /// Whether the range is an angle (radians) rather than a translation.
    pub fn is_rotational(self) -> bool {
        matches!(self, KinematicKind::C | KinematicKind::D | KinematicKind::CB)
    }
}

impl fmt::Display for KinematicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for KinematicKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            "E" => Ok(Self::E),
            "CB" => Ok(Self::CB),
            other => Err(format!("unknown kinematic kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsoluteScale {
    pub length_cm: f64,
    pub width_cm: f64,
    pub height_cm: f64,
}

impl AbsoluteScale {
    pub fn new(length_cm: f64, width_cm: f64, height_cm: f64) -> Self {
        Self {
            length_cm,
            width_cm,
            height_cm,
        }
    }

    pub fn max_dimension(&self) -> f64 {
        self.length_cm.max(self.width_cm).max(self.height_cm)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.length_cm, self.width_cm, self.height_cm]
    }
}

/// Material with Young's modulus in GPa and density in g/cm³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub name: String,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl MaterialSpec {
    pub fn new(name: impl Into<String>, youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Self {
        Self {
            name: name.into(),
            youngs_modulus,
            poisson_ratio,
            density,
        }
    }

    /// Handbook values for common materials (name matched case-insensitively).
    pub fn preset(name: &str) -> Option<Self> {
        let key = name.trim().to_ascii_lowercase();
        MATERIAL_PRESETS
            .iter()
            .find(|(n, ..)| *n == key)
            .map(|&(n, e, nu, rho)| Self::new(n, e, nu, rho))
    }
}

/// (name, Young's modulus GPa, Poisson ratio, density g/cm³).
pub const MATERIAL_PRESETS: &[(&str, f64, f64, f64)] = &[
    ("aluminum", 69.0, 0.33, 2.7),
    ("brass", 100.0, 0.34, 8.5),
    ("ceramic", 70.0, 0.22, 2.4),
    ("copper", 117.0, 0.34, 8.96),
    ("fabric", 0.1, 0.3, 0.3),
    ("glass", 70.0, 0.22, 2.5),
    ("leather", 0.05, 0.4, 0.9),
    ("paper", 3.0, 0.3, 0.8),
    ("plastic", 2.5, 0.38, 1.2),
    ("rubber", 0.05, 0.49, 1.1),
    ("steel", 200.0, 0.3, 7.85),
    ("stone", 50.0, 0.25, 2.7),
    ("wood", 11.0, 0.35, 0.6),
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionSet {
    pub basic: String,
    pub functional: String,
    pub kinematic: String,
    pub grasped: String,
}

impl DescriptionSet {
    pub fn is_complete(&self) -> bool {
        [&self.basic, &self.functional, &self.kinematic, &self.grasped]
            .iter()
            .all(|s| !s.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub id: u32,
    pub name: String,
    pub mesh: Mesh,
    pub material: MaterialSpec,
    /// 1 = most likely to be touched, 10 = least.
    pub affordance_rank: u32,
    pub descriptions: DescriptionSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicConstraint {
    pub kind: KinematicKind,
    pub parent_part: Option<u32>,
    pub child_part: Option<u32>,
    pub direction: Option<[f64; 3]>,
    pub pivot: Option<[f64; 3]>,
    pub range: Option<[f64; 2]>,
    /// Human-approved rather than auto-estimated.
    pub finalized: bool,
}

impl KinematicConstraint {
    /// A constraint with only kind and endpoints, awaiting estimation.
    pub fn stub(kind: KinematicKind, parent: u32, child: u32) -> Self {
        Self {
            kind,
            parent_part: Some(parent),
            child_part: Some(child),
            direction: None,
            pivot: None,
            range: None,
            finalized: false,
        }
    }

    pub fn direction_vec(&self) -> Option<Vec3> {
        self.direction.map(Vec3::from)
    }

    pub fn pivot_vec(&self) -> Option<Vec3> {
        self.pivot.map(Vec3::from)
    }

    /// Invariant checks for this constraint alone; `path` prefixes violation paths.
    pub fn violations(&self, path: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let kind = self.kind;
        let mut push = |code, field: &str, message: String| {
            out.push(Violation::new(code, format!("{path}.{field}"), message))
        };
        if !kind.has_parts() {
            for (field, set) in [
                ("parent_part", self.parent_part.is_some()),
                ("child_part", self.child_part.is_some()),
                ("direction", self.direction.is_some()),
                ("pivot", self.pivot.is_some()),
                ("range", self.range.is_some()),
            ] {
                if set {
                    push(
                        ViolationCode::FieldForbiddenForKind,
                        field,
                        format!("kind {kind} carries no {field}"),
                    );
                }
            }
            return out;
        }
        match (self.parent_part, self.child_part) {
            (Some(p), Some(c)) if p == c => push(
                ViolationCode::SelfConstraint,
                "child_part",
                format!("parent and child are both part {p}"),
            ),
            (Some(_), Some(_)) => {}
            _ => push(
                ViolationCode::MissingParentChild,
                "parent_part",
                format!("kind {kind} requires parent and child parts"),
            ),
        }
        match self.direction {
            Some(d) if kind.needs_direction() => {
                let v = Vec3::from(d);
                if !v.iter().all(|c| c.is_finite()) || (v.norm() - 1.0).abs() > UNIT_TOLERANCE {
                    push(
                        ViolationCode::DirectionNotUnit,
                        "direction",
                        format!("direction norm {} is not 1", v.norm()),
                    );
                }
            }
            Some(_) => push(
                ViolationCode::DirectionForbiddenForPointJoint,
                "direction",
                format!("kind {kind} is pivot-only"),
            ),
            None if kind.needs_direction() => push(
                ViolationCode::MissingDirection,
                "direction",
                format!("kind {kind} requires a direction"),
            ),
            None => {}
        }
        match self.pivot {
            Some(_) if kind == KinematicKind::B => push(
                ViolationCode::PivotForbiddenForPrismatic,
                "pivot",
                "prismatic joints carry no pivot".into(),
            ),
            Some(p) if !p.iter().all(|c| c.is_finite()) => push(
                ViolationCode::NonFiniteValue,
                "pivot",
                "pivot is not finite".into(),
            ),
            None if kind.needs_pivot() => push(
                ViolationCode::MissingPivot,
                "pivot",
                format!("kind {kind} requires a pivot"),
            ),
            _ => {}
        }
        if let Some([lo, hi]) = self.range {
            if !lo.is_finite() || !hi.is_finite() {
                push(ViolationCode::NonFiniteValue, "range", "range is not finite".into());
            } else if lo > hi {
                push(
                    ViolationCode::InvertedRange,
                    "range",
                    format!("range lower bound {lo} exceeds upper bound {hi}"),
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAsset {
    pub object_name: String,
    pub category: String,
    pub absolute_scale: AbsoluteScale,
    pub parts: Vec<Part>,
    pub constraints: Vec<KinematicConstraint>,
    pub provenance: String,
}

impl ObjectAsset {
    pub fn part(&self, id: u32) -> Option<&Part> {
        self.parts.iter().find(|p| p.id == id)
    }

    pub fn part_mut(&mut self, id: u32) -> Option<&mut Part> {
        self.parts.iter_mut().find(|p| p.id == id)
    }

    pub fn part_ids(&self) -> Vec<u32> {
        self.parts.iter().map(|p| p.id).collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.parts.iter().map(|p| p.mesh.vertices.len()).sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        crate::mesh::bounds_of(self.parts.iter().flat_map(|p| p.mesh.vertices.iter()))
    }

    /// The constraint in which `part` is the child, if any.
    pub fn constraint_for_child(&self, part: u32) -> Option<&KinematicConstraint> {
        self.constraints
            .iter()
            .find(|c| c.kind.has_parts() && c.child_part == Some(part))
    }

    /// All meshes merged into one, in part order.
    pub fn merged_mesh(&self) -> Mesh {
        let mut out = Mesh::default();
        for p in &self.parts {
            out.append(&p.mesh);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    DuplicatePartId,
    NonConsecutivePartIds,
    EmptyMesh,
    FaceIndexOutOfRange,
    DegenerateFace,
    NonFiniteValue,
    CoordinateOutOfRange,
    NonPositiveScale,
    AffordanceOutOfRange,
    NegativeDensity,
    NegativeYoungsModulus,
    PoissonRatioOutOfRange,
    DanglingPartReference,
    FieldForbiddenForKind,
    MissingParentChild,
    SelfConstraint,
    MissingDirection,
    DirectionNotUnit,
    DirectionForbiddenForPointJoint,
    MissingPivot,
    PivotForbiddenForPrismatic,
    InvertedRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.code, self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Enforce the `[-1, 1]` coordinate invariant. Off only for raw imports
    /// that have not been normalized yet.
    pub require_normalized: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            require_normalized: true,
        }
    }
}

/// Every invariant violation of `asset`, in a deterministic order
/// (object fields, then parts in order, then constraints in order).
pub fn validate_asset(asset: &ObjectAsset) -> Vec<Violation> {
    validate_asset_with(asset, ValidateOptions::default())
}

pub fn validate_asset_with(asset: &ObjectAsset, opts: ValidateOptions) -> Vec<Violation> {
    use ViolationCode as V;
    let mut out = Vec::new();

    let s = &asset.absolute_scale;
    for (field, value) in [
        ("length_cm", s.length_cm),
        ("width_cm", s.width_cm),
        ("height_cm", s.height_cm),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            out.push(Violation::new(
                V::NonPositiveScale,
                format!("absolute_scale.{field}"),
                format!("{value} is not a positive finite length"),
            ));
        }
    }

    let mut seen = BTreeSet::new();
    for (i, part) in asset.parts.iter().enumerate() {
        let path = format!("parts[{i}]");
        if !seen.insert(part.id) {
            out.push(Violation::new(
                V::DuplicatePartId,
                format!("{path}.id"),
                format!("part id {} appears more than once", part.id),
            ));
        }
        if part.id != i as u32 + 1 {
            out.push(Violation::new(
                V::NonConsecutivePartIds,
                format!("{path}.id"),
                format!("expected id {}, found {}", i + 1, part.id),
            ));
        }
        validate_mesh(&part.mesh, &format!("{path}.mesh"), opts, &mut out);
        if !(1..=10).contains(&part.affordance_rank) {
            out.push(Violation::new(
                V::AffordanceOutOfRange,
                format!("{path}.affordance_rank"),
                format!("{} is outside [1, 10]", part.affordance_rank),
            ));
        }
        let m = &part.material;
        if !(m.density >= 0.0 && m.density.is_finite()) {
            out.push(Violation::new(
                V::NegativeDensity,
                format!("{path}.material.density"),
                format!("{} is not a non-negative density", m.density),
            ));
        }
        if !(m.youngs_modulus >= 0.0 && m.youngs_modulus.is_finite()) {
            out.push(Violation::new(
                V::NegativeYoungsModulus,
                format!("{path}.material.youngs_modulus"),
                format!("{} is not a non-negative modulus", m.youngs_modulus),
            ));
        }
        if !(m.poisson_ratio > -1.0 && m.poisson_ratio <= 0.5) {
            out.push(Violation::new(
                V::PoissonRatioOutOfRange,
                format!("{path}.material.poisson_ratio"),
                format!("{} is outside (-1, 0.5]", m.poisson_ratio),
            ));
        }
    }

    for (i, c) in asset.constraints.iter().enumerate() {
        let path = format!("constraints[{i}]");
        out.extend(c.violations(&path));
        for (field, id) in [("parent_part", c.parent_part), ("child_part", c.child_part)] {
            if let Some(id) = id {
                if !seen.contains(&id) {
                    out.push(Violation::new(
                        V::DanglingPartReference,
                        format!("{path}.{field}"),
                        format!("part {id} does not exist"),
                    ));
                }
            }
        }
    }
    out
}

fn validate_mesh(mesh: &Mesh, path: &str, opts: ValidateOptions, out: &mut Vec<Violation>) {
    use ViolationCode as V;
    if mesh.faces.is_empty() {
        out.push(Violation::new(V::EmptyMesh, path, "mesh has no faces"));
    }
    let n = mesh.vertices.len() as u32;
    for (vi, v) in mesh.vertices.iter().enumerate() {
        if !v.iter().all(|c| c.is_finite()) {
            out.push(Violation::new(
                V::NonFiniteValue,
                format!("{path}.vertices[{vi}]"),
                "vertex is not finite",
            ));
            continue;
        }
        if opts.require_normalized && v.amax() > 1.0 + COORD_TOLERANCE {
            out.push(Violation::new(
                V::CoordinateOutOfRange,
                format!("{path}.vertices[{vi}]"),
                format!("vertex {:?} lies outside [-1, 1]", [v.x, v.y, v.z]),
            ));
            // One report per mesh is enough to locate the problem.
            break;
        }
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        if f.iter().any(|&i| i >= n) {
            out.push(Violation::new(
                V::FaceIndexOutOfRange,
                format!("{path}.faces[{fi}]"),
                format!("face {f:?} indexes past {n} vertices"),
            ));
        } else if mesh.face_area(fi) < crate::mesh::DEGENERATE_FACE_AREA {
            out.push(Violation::new(
                V::DegenerateFace,
                format!("{path}.faces[{fi}]"),
                "face has zero area",
            ));
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AssetError {
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error(transparent)]
    MeshParse(#[from] ObjError),
    #[error("asset failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AssetError {
    fn from_violations(v: Vec<Violation>) -> Self {
        let first = &v[0];
        AssetError::SchemaViolation {
            path: first.path.clone(),
            message: format!("{:?}: {}", first.code, first.message),
        }
    }
}

// On-disk records. Field order is irrelevant: the file is written with sorted keys.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssetRecord {
    format_version: u32,
    object_name: String,
    category: String,
    absolute_scale: AbsoluteScale,
    provenance: String,
    parts: Vec<PartRecord>,
    constraints: Vec<KinematicConstraint>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartRecord {
    id: u32,
    name: String,
    mesh: String,
    material: MaterialSpec,
    affordance_rank: u32,
    descriptions: DescriptionSet,
}

pub fn part_mesh_file(id: u32) -> String {
    format!("part_{id}.obj")
}

/// Canonical `asset.json` text (sorted keys, two-space indent, trailing newline).
pub fn asset_json(asset: &ObjectAsset) -> String {
    let record = AssetRecord {
        format_version: FORMAT_VERSION,
        object_name: asset.object_name.clone(),
        category: asset.category.clone(),
        absolute_scale: asset.absolute_scale.clone(),
        provenance: asset.provenance.clone(),
        parts: asset
            .parts
            .iter()
            .map(|p| PartRecord {
                id: p.id,
                name: p.name.clone(),
                mesh: part_mesh_file(p.id),
                material: p.material.clone(),
                affordance_rank: p.affordance_rank,
                descriptions: p.descriptions.clone(),
            })
            .collect(),
        constraints: asset.constraints.clone(),
    };
    crate::canonical_json(&record)
}

/// Loads an asset directory and checks every invariant, including the
/// normalized-coordinate one.
pub fn load_asset(dir: &Path) -> Result<ObjectAsset, AssetError> {
    load_asset_with(dir, ValidateOptions::default())
}

/// Loads an asset that may not be normalized yet.
pub fn load_asset_raw(dir: &Path) -> Result<ObjectAsset, AssetError> {
    load_asset_with(
        dir,
        ValidateOptions {
            require_normalized: false,
        },
    )
}

pub fn load_asset_with(dir: &Path, opts: ValidateOptions) -> Result<ObjectAsset, AssetError> {
    let json_path = dir.join(ASSET_FILE);
    if !json_path.is_file() {
        return Err(AssetError::MissingFile(json_path.display().to_string()));
    }
    let text = std::fs::read_to_string(&json_path).map_err(|source| AssetError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let record: AssetRecord = serde_path_to_error::deserialize(de).map_err(|e| {
        AssetError::SchemaViolation {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        }
    })?;
    if record.format_version != FORMAT_VERSION {
        return Err(AssetError::SchemaViolation {
            path: "format_version".into(),
            message: format!("unsupported format version {}", record.format_version),
        });
    }
    let mut parts = Vec::with_capacity(record.parts.len());
    for (i, p) in record.parts.into_iter().enumerate() {
        if p.mesh.contains('/') || p.mesh.contains('\\') || p.mesh.contains("..") {
            return Err(AssetError::SchemaViolation {
                path: format!("parts[{i}].mesh"),
                message: format!("mesh file `{}` must be a plain file name", p.mesh),
            });
        }
        let mesh_path = dir.join(&p.mesh);
        if !mesh_path.is_file() {
            return Err(AssetError::MissingFile(mesh_path.display().to_string()));
        }
        let mut mesh = Mesh::read_obj(&mesh_path)?;
        let dropped = mesh.drop_degenerate_faces();
        if dropped > 0 {
            log::warn!("{}: dropped {dropped} degenerate faces", mesh_path.display());
        }
        parts.push(Part {
            id: p.id,
            name: p.name,
            mesh,
            material: p.material,
            affordance_rank: p.affordance_rank,
            descriptions: p.descriptions,
        });
    }
    let asset = ObjectAsset {
        object_name: record.object_name,
        category: record.category,
        absolute_scale: record.absolute_scale,
        parts,
        constraints: record.constraints,
        provenance: record.provenance,
    };
    let violations = validate_asset_with(&asset, opts);
    if !violations.is_empty() {
        return Err(AssetError::from_violations(violations));
    }
    Ok(asset)
}

/// Writes `asset` to `dir` (created if needed). Refuses assets that fail validation.
pub fn save_asset(asset: &ObjectAsset, dir: &Path) -> Result<(), AssetError> {
    save_asset_with(asset, dir, ValidateOptions::default())
}

pub fn save_asset_with(
    asset: &ObjectAsset,
    dir: &Path,
    opts: ValidateOptions,
) -> Result<(), AssetError> {
    let violations = validate_asset_with(asset, opts);
    if !violations.is_empty() {
        return Err(AssetError::Validation(violations));
    }
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| AssetError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for part in &asset.parts {
        let path = dir.join(part_mesh_file(part.id));
        std::fs::write(&path, part.mesh.to_obj_string()).map_err(io(&path))?;
    }
    let json_path = dir.join(ASSET_FILE);
    std::fs::write(&json_path, asset_json(asset)).map_err(io(&json_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    pub(crate) fn two_part_asset() -> ObjectAsset {
        let part = |id: u32, lo: f64, hi: f64| Part {
            id,
            name: format!("part{id}"),
            mesh: shapes::cuboid(Vec3::new(lo, -0.5, -0.5), Vec3::new(hi, 0.5, 0.5)),
            material: MaterialSpec::new("wood", 10.0, 0.3, 0.6),
            affordance_rank: id,
            descriptions: DescriptionSet::default(),
        };
        ObjectAsset {
            object_name: "box".into(),
            category: "storage".into(),
            absolute_scale: AbsoluteScale::new(30.0, 20.0, 20.0),
            parts: vec![part(1, -1.0, 0.0), part(2, 0.0, 1.0)],
            constraints: vec![KinematicConstraint {
                kind: KinematicKind::C,
                parent_part: Some(1),
                child_part: Some(2),
                direction: Some([0.0, 1.0, 0.0]),
                pivot: Some([0.0, 0.0, 0.5]),
                range: Some([0.0, 1.5]),
                finalized: true,
            }],
            provenance: "test".into(),
        }
    }

    fn codes(a: &ObjectAsset) -> Vec<ViolationCode> {
        validate_asset(a).into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn valid_fixture_has_no_violations() {
        assert_eq!(validate_asset(&two_part_asset()), vec![]);
    }

    #[test]
    fn affordance_zero_is_out_of_range() {
        let mut a = two_part_asset();
        a.parts[0].affordance_rank = 0;
        assert_eq!(codes(&a), vec![ViolationCode::AffordanceOutOfRange]);
        a.parts[0].affordance_rank = 11;
        assert_eq!(codes(&a), vec![ViolationCode::AffordanceOutOfRange]);
        a.parts[0].affordance_rank = 10;
        assert!(codes(&a).is_empty());
    }

    #[test]
    fn prismatic_with_pivot_is_rejected() {
        let mut a = two_part_asset();
        a.constraints[0].kind = KinematicKind::B;
        a.constraints[0].pivot = Some([0.0; 3]);
        assert_eq!(codes(&a), vec![ViolationCode::PivotForbiddenForPrismatic]);
    }

    #[test]
    fn dangling_reference_reported() {
        let mut a = two_part_asset();
        a.constraints[0].child_part = Some(99);
        let v = validate_asset(&a);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::DanglingPartReference);
        assert_eq!(v[0].path, "constraints[0].child_part");
    }

    /// The kind ↔ field-presence matrix, checked over every combination of
    /// present/absent fields for all six kinds.
    #[test]
    fn kind_field_matrix_is_exact() {
        use KinematicKind::*;
        for kind in KinematicKind::ALL {
            for mask in 0u8..32 {
                let has = |bit: u8| mask & (1 << bit) != 0;
                let c = KinematicConstraint {
                    kind,
                    parent_part: has(0).then_some(1),
                    child_part: has(1).then_some(2),
                    direction: has(2).then_some([0.0, 0.0, 1.0]),
                    pivot: has(3).then_some([0.0; 3]),
                    range: has(4).then_some([0.0, 1.0]),
                    finalized: false,
                };
                let expect_valid = match kind {
                    A | E => mask == 0,
                    B => has(0) && has(1) && has(2) && !has(3),
                    C | CB => has(0) && has(1) && has(2) && has(3),
                    D => has(0) && has(1) && !has(2) && has(3),
                };
                assert_eq!(
                    c.violations("c").is_empty(),
                    expect_valid,
                    "kind {kind} mask {mask:05b}: {:?}",
                    c.violations("c")
                );
            }
        }
    }

    #[test]
    fn direction_must_be_unit() {
        let mut a = two_part_asset();
        a.constraints[0].direction = Some([0.0, 2.0, 0.0]);
        assert_eq!(codes(&a), vec![ViolationCode::DirectionNotUnit]);
        a.constraints[0].direction = Some([0.0, 1.0 + 5e-10, 0.0]);
        assert!(codes(&a).is_empty());
    }

    #[test]
    fn material_and_scale_bounds() {
        let mut a = two_part_asset();
        a.parts[1].material.poisson_ratio = 0.5;
        assert!(codes(&a).is_empty());
        a.parts[1].material.poisson_ratio = -1.0;
        a.parts[1].material.density = -0.1;
        a.absolute_scale.height_cm = 0.0;
        assert_eq!(
            codes(&a),
            vec![
                ViolationCode::NonPositiveScale,
                ViolationCode::NegativeDensity,
                ViolationCode::PoissonRatioOutOfRange
            ]
        );
    }

    #[test]
    fn ids_must_be_consecutive_from_one() {
        let mut a = two_part_asset();
        a.parts[1].id = 1;
        a.constraints.clear();
        assert_eq!(
            codes(&a),
            vec![ViolationCode::DuplicatePartId, ViolationCode::NonConsecutivePartIds]
        );
    }

    #[test]
    fn validate_is_total_on_nan_input() {
        let mut a = two_part_asset();
        a.parts[0].mesh.vertices[0].x = f64::NAN;
        a.constraints[0].direction = Some([f64::NAN; 3]);
        a.constraints[0].range = Some([f64::NAN, 0.0]);
        a.absolute_scale.length_cm = f64::INFINITY;
        let v = validate_asset(&a);
        assert!(v.len() >= 4);
    }

    #[test]
    fn out_of_range_coordinate_only_when_required() {
        let mut a = two_part_asset();
        a.parts[0].mesh.vertices[0].x = -3.0;
        assert_eq!(codes(&a), vec![ViolationCode::CoordinateOutOfRange]);
        let relaxed = validate_asset_with(
            &a,
            ValidateOptions {
                require_normalized: false,
            },
        );
        assert!(relaxed.is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = two_part_asset();
        save_asset(&a, dir.path()).unwrap();
        let b = load_asset(dir.path()).unwrap();
        assert_eq!(a, b);
        let text = std::fs::read_to_string(dir.path().join(ASSET_FILE)).unwrap();
        assert_eq!(text, asset_json(&b));
    }

    #[test]
    fn save_refuses_invalid_asset() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = two_part_asset();
        a.parts[0].affordance_rank = 0;
        assert!(matches!(save_asset(&a, dir.path()), Err(AssetError::Validation(_))));
        assert!(!dir.path().join(ASSET_FILE).exists());
    }

    #[test]
    fn missing_asset_json() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_asset(dir.path()), Err(AssetError::MissingFile(_))));
    }

    #[test]
    fn schema_error_has_field_path() {
        let dir = tempfile::tempdir().unwrap();
        let a = two_part_asset();
        save_asset(&a, dir.path()).unwrap();
        let path = dir.path().join(ASSET_FILE);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"affordance_rank\": 2", "\"affordance_rank\": \"two\"");
        std::fs::write(&path, text).unwrap();
        match load_asset(dir.path()) {
            Err(AssetError::SchemaViolation { path, .. }) => {
                assert_eq!(path, "parts[1].affordance_rank")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
