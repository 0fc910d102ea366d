//! Per-voxel physical features.
//!
//! Each occupied voxel carries a 14-value record:
//! `[scale, affordance, density, child, parent, dir×3, loc×3, range×2, type]`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asset::{DescriptionSet, KinematicKind, ObjectAsset};
use crate::geometry::surface_sample_with_faces;

pub const SCALE_WIDTH: usize = 1;
pub const AFFORDANCE_WIDTH: usize = 1;
pub const DENSITY_WIDTH: usize = 1;
/// child, parent, direction (3), location (3), range (2), type.
pub const KINEMATIC_WIDTH: usize = 1 + 1 + 3 + 3 + 2 + 1;
pub const PHYS_WIDTH: usize = SCALE_WIDTH + AFFORDANCE_WIDTH + DENSITY_WIDTH + KINEMATIC_WIDTH;
const _: () = assert!(KINEMATIC_WIDTH == 11 && PHYS_WIDTH == 14);

pub const EMBED_DIM: usize = 768;
pub const DEFAULT_RESOLUTION: u32 = 64;
pub const DEFAULT_SAMPLES: usize = 64_000;

pub const CHANNEL_NAMES: [&str; PHYS_WIDTH] = [
    "scale",
    "affordance",
    "density",
    "kin_child",
    "kin_parent",
    "kin_dir_x",
    "kin_dir_y",
    "kin_dir_z",
    "kin_loc_x",
    "kin_loc_y",
    "kin_loc_z",
    "kin_range_lo",
    "kin_range_hi",
    "kin_type",
];

const MAGIC: &[u8; 4] = b"PHXV";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PhysError {
    #[error("expected {PHYS_WIDTH} values, got {0}")]
    WrongArity(usize),
    #[error("part {part} is not fully annotated: {reason}")]
    UnannotatedPart { part: u32, reason: String },
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("empty geometry")]
    EmptyGeometry,
    #[error("malformed voxel file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhysRecord {
    pub scale: f64,
    pub affordance: f64,
    pub density: f64,
    pub kin_child: f64,
    pub kin_parent: f64,
    pub kin_direction: [f64; 3],
    pub kin_location: [f64; 3],
    pub kin_range: [f64; 2],
    pub kin_type: f64,
}

pub fn pack_phys(r: &PhysRecord) -> [f64; PHYS_WIDTH] {
    let [dx, dy, dz] = r.kin_direction;
    let [lx, ly, lz] = r.kin_location;
    let [lo, hi] = r.kin_range;
    [
        r.scale,
        r.affordance,
        r.density,
        r.kin_child,
        r.kin_parent,
        dx,
        dy,
        dz,
        lx,
        ly,
        lz,
        lo,
        hi,
        r.kin_type,
    ]
}

pub fn unpack_phys(v: &[f64]) -> Result<PhysRecord, PhysError> {
    if v.len() != PHYS_WIDTH {
        return Err(PhysError::WrongArity(v.len()));
    }
    Ok(PhysRecord {
        scale: v[0],
        affordance: v[1],
        density: v[2],
        kin_child: v[3],
        kin_parent: v[4],
        kin_direction: [v[5], v[6], v[7]],
        kin_location: [v[8], v[9], v[10]],
        kin_range: [v[11], v[12]],
        kin_type: v[13],
    })
}

/// Record for one part: object scale, the part's own properties and the joint
/// in which it is the child (or zeros with type E).
pub fn part_record(asset: &ObjectAsset, part_id: u32) -> Result<PhysRecord, PhysError> {
    let part = asset.part(part_id).ok_or(PhysError::UnannotatedPart {
        part: part_id,
        reason: "no such part".into(),
    })?;
    let mut rec = PhysRecord {
        scale: asset.absolute_scale.max_dimension(),
        affordance: part.affordance_rank as f64,
        density: part.material.density,
        kin_type: KinematicKind::E.code() as f64,
        ..Default::default()
    };
    if let Some(c) = asset.constraint_for_child(part_id) {
        let missing = |what: &str| PhysError::UnannotatedPart {
            part: part_id,
            reason: format!("joint {} lacks {what}", c.kind),
        };
        rec.kin_type = c.kind.code() as f64;
        rec.kin_child = part_id as f64;
        rec.kin_parent = c.parent_part.ok_or_else(|| missing("a parent"))? as f64;
        if c.kind.needs_direction() {
            rec.kin_direction = c.direction.ok_or_else(|| missing("a direction"))?;
        }
        if c.kind.needs_pivot() {
            rec.kin_location = c.pivot.ok_or_else(|| missing("a pivot"))?;
        }
        rec.kin_range = c.range.ok_or_else(|| missing("a range"))?;
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: u32,
    /// Sorted, unique voxel coordinates.
    pub occupied: Vec<[u32; 3]>,
    pub phys: Vec<PhysRecord>,
    /// Owning part per voxel.
    pub owner: Vec<u32>,
    /// Per-voxel description embeddings (basic, functional, kinematic), when attached.
    pub sem: Option<Vec<[Vec<f32>; 3]>>,
    pub normalized: bool,
}

/// Voxel index of a normalized coordinate.
pub fn voxel_of(p: &crate::Vec3, resolution: u32) -> [u32; 3] {
    let r = resolution as f64;
    [0, 1, 2].map(|a| (((p[a] + 1.0) * 0.5 * r).floor()).clamp(0.0, r - 1.0) as u32)
}

/// Occupancy from `samples` surface samples; each voxel takes the record of the
/// part owning most of its samples (lowest part id on ties).
pub fn voxelize_with(
    asset: &ObjectAsset,
    resolution: u32,
    samples: usize,
    seed: u64,
) -> Result<VoxelGrid, PhysError> {
    let mut records = BTreeMap::new();
    for p in &asset.parts {
        records.insert(p.id, part_record(asset, p.id)?);
    }
    // Sample the union so per-part sample counts follow area.
    let mut merged = crate::mesh::Mesh::default();
    let mut face_owner = Vec::new();
    for p in &asset.parts {
        merged.append(&p.mesh);
        face_owner.extend(std::iter::repeat_n(p.id, p.mesh.faces.len()));
    }
    let (points, faces) =
        surface_sample_with_faces(&merged, samples.max(1), seed).map_err(|_| PhysError::EmptyGeometry)?;
    let mut counts: BTreeMap<[u32; 3], BTreeMap<u32, usize>> = BTreeMap::new();
    for (p, f) in points.iter().zip(&faces) {
        *counts
            .entry(voxel_of(p, resolution))
            .or_default()
            .entry(face_owner[*f as usize])
            .or_insert(0) += 1;
    }
    let mut grid = VoxelGrid {
        resolution,
        occupied: Vec::with_capacity(counts.len()),
        phys: Vec::with_capacity(counts.len()),
        owner: Vec::with_capacity(counts.len()),
        sem: None,
        normalized: false,
    };
    for (coord, per_part) in counts {
        let mut best = (0u32, 0usize);
        for (&part, &n) in &per_part {
            if n > best.1 {
                best = (part, n);
            }
        }
        grid.occupied.push(coord);
        grid.owner.push(best.0);
        grid.phys.push(records[&best.0]);
    }
    Ok(grid)
}

pub fn voxelize(asset: &ObjectAsset, resolution: u32) -> Result<VoxelGrid, PhysError> {
    voxelize_with(asset, resolution, DEFAULT_SAMPLES, 0)
}

/// Affine per-channel map into unit-scale ranges. Part ids, directions and
/// locations pass through unchanged.
pub fn normalize_record(r: &PhysRecord) -> PhysRecord {
    PhysRecord {
        scale: r.scale / 1000.0,
        affordance: (r.affordance - 1.0) / 9.0,
        density: r.density / 10.0,
        kin_range: r.kin_range.map(|v| v / PI),
        kin_type: r.kin_type / 5.0,
        ..*r
    }
}

pub fn denormalize_record(r: &PhysRecord) -> PhysRecord {
    PhysRecord {
        scale: r.scale * 1000.0,
        affordance: r.affordance * 9.0 + 1.0,
        density: r.density * 10.0,
        kin_range: r.kin_range.map(|v| v * PI),
        kin_type: r.kin_type * 5.0,
        ..*r
    }
}

pub fn normalize_channels(grid: &VoxelGrid) -> VoxelGrid {
    if grid.normalized {
        return grid.clone();
    }
    VoxelGrid {
        phys: grid.phys.iter().map(normalize_record).collect(),
        normalized: true,
        ..grid.clone()
    }
}

pub fn denormalize_channels(grid: &VoxelGrid) -> VoxelGrid {
    if !grid.normalized {
        return grid.clone();
    }
    VoxelGrid {
        phys: grid.phys.iter().map(denormalize_record).collect(),
        normalized: false,
        ..grid.clone()
    }
}

/// Text → fixed-width vector.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, PhysError>;
}

/// Offline embedder: tokens are hashed into bins, then mixed by a seeded ±1
/// projection and L2-normalized. Carries no semantics; it only lets the feature
/// pipeline run without an external encoder.
pub struct HashingEmbedder {
    seed: u64,
    projection: Vec<f32>,
}

impl HashingEmbedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..EMBED_DIM * EMBED_DIM)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Self { seed, projection }
    }

    fn tokens(text: &str) -> Vec<String> {
        let t: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|s| !s.is_empty())
            .map(str::to_lowercase)
            .collect();
        if t.is_empty() {
            vec![String::new()]
        } else {
            t
        }
    }
}

impl TextEmbedder for HashingEmbedder {
    fn dim(&self) -> usize {
        EMBED_DIM
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, PhysError> {
        use sha2::{Digest, Sha256};
        let mut bins = vec![0f64; EMBED_DIM];
        for tok in Self::tokens(text) {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            h.update(tok.as_bytes());
            let d = h.finalize();
            let idx = u64::from_le_bytes(d[..8].try_into().unwrap()) % EMBED_DIM as u64;
            bins[idx as usize] += if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        let mut out: Vec<f64> = (0..EMBED_DIM)
            .map(|i| {
                let row = &self.projection[i * EMBED_DIM..(i + 1) * EMBED_DIM];
                row.iter().zip(&bins).map(|(&p, &b)| p as f64 * b).sum()
            })
            .collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}

/// Client for an external text encoder speaking
/// `POST {"model": ..., "input": text}` → `{"embedding": [...]}`.
pub struct HttpEmbedder {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
}

impl TextEmbedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, PhysError> {
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f32>,
        }
        let body = serde_json::json!({ "model": self.model, "input": text });
        let reply: Reply = ureq::post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| PhysError::EmbedderUnavailable(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| PhysError::EmbedderUnavailable(e.to_string()))?;
        if reply.embedding.len() != self.dim {
            return Err(PhysError::EmbedderUnavailable(format!(
                "expected {} dimensions, got {}",
                self.dim,
                reply.embedding.len()
            )));
        }
        Ok(reply.embedding)
    }
}

fn l2_normalize(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
    v
}

/// Basic, functional and kinematic description embeddings, each unit length.
pub fn embed_descriptions(embedder: &dyn TextEmbedder, desc: &DescriptionSet) -> Result<[Vec<f32>; 3], PhysError> {
    Ok([
        l2_normalize(embedder.embed(&desc.basic)?),
        l2_normalize(embedder.embed(&desc.functional)?),
        l2_normalize(embedder.embed(&desc.kinematic)?),
    ])
}

/// Fills `grid.sem` from each owning part's descriptions.
pub fn attach_semantics(grid: &mut VoxelGrid, asset: &ObjectAsset, embedder: &dyn TextEmbedder) -> Result<(), PhysError> {
    let mut per_part = BTreeMap::new();
    for p in &asset.parts {
        per_part.insert(p.id, embed_descriptions(embedder, &p.descriptions)?);
    }
    grid.sem = Some(grid.owner.iter().map(|o| per_part[o].clone()).collect());
    Ok(())
}

impl VoxelGrid {
    /// Binary layout, little-endian:
    ///
    /// | field | type |
    /// |---|---|
    /// | magic `PHXV` | 4 bytes |
    /// | version (1) | u32 |
    /// | resolution | u32 |
    /// | voxel count N | u32 |
    /// | channel count C (14) | u32 |
    /// | flags: bit 0 normalized, bit 1 semantics present | u32 |
    /// | C channel names, each u32 length + UTF-8 | |
    /// | N × (x, y, z) | u32 |
    /// | N × owner part id | u32 |
    /// | N × C features | f32 |
    /// | if semantics: N × 3 × 768 | f32 |
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let flags = self.normalized as u32 | (self.sem.is_some() as u32) << 1;
        for v in [
            FORMAT_VERSION,
            self.resolution,
            self.occupied.len() as u32,
            PHYS_WIDTH as u32,
            flags,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for name in CHANNEL_NAMES {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for c in &self.occupied {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for o in &self.owner {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for r in &self.phys {
            for v in pack_phys(r) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        if let Some(sem) = &self.sem {
            for cols in sem {
                for col in cols {
                    for v in col {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    /// Parses [`to_bytes`](Self::to_bytes) output; features come back at f32 precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PhysError> {
        let mut cur = std::io::Cursor::new(bytes);
        let bad = |m: &str| PhysError::Format(m.to_string());
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |cur: &mut std::io::Cursor<&[u8]>| -> Result<u32, PhysError> {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u32_at(&mut cur)?;
        if version != FORMAT_VERSION {
            return Err(bad("unsupported version"));
        }
        let resolution = u32_at(&mut cur)?;
        let n = u32_at(&mut cur)? as usize;
        let c = u32_at(&mut cur)? as usize;
        let flags = u32_at(&mut cur)?;
        if c != PHYS_WIDTH {
            return Err(PhysError::WrongArity(c));
        }
        for expected in CHANNEL_NAMES {
            let len = u32_at(&mut cur)? as usize;
            let mut name = vec![0u8; len];
            cur.read_exact(&mut name).map_err(|_| bad("truncated manifest"))?;
            if name != expected.as_bytes() {
                return Err(bad("unexpected channel manifest"));
            }
        }
        let mut occupied = Vec::with_capacity(n);
        for _ in 0..n {
            occupied.push([u32_at(&mut cur)?, u32_at(&mut cur)?, u32_at(&mut cur)?]);
        }
        let mut owner = Vec::with_capacity(n);
        for _ in 0..n {
            owner.push(u32_at(&mut cur)?);
        }
        let f32_at = |cur: &mut std::io::Cursor<&[u8]>| -> Result<f32, PhysError> {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b).map_err(|_| bad("truncated payload"))?;
            Ok(f32::from_le_bytes(b))
        };
        let mut phys = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = [0f64; PHYS_WIDTH];
            for x in &mut v {
                *x = f32_at(&mut cur)? as f64;
            }
            phys.push(unpack_phys(&v)?);
        }
        let sem = if flags & 2 != 0 {
            let mut s = Vec::with_capacity(n);
            for _ in 0..n {
                let mut col = || -> Result<Vec<f32>, PhysError> {
                    (0..EMBED_DIM).map(|_| f32_at(&mut cur)).collect()
                };
                s.push([col()?, col()?, col()?]);
            }
            Some(s)
        } else {
            None
        };
        if (cur.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            resolution,
            occupied,
            phys,
            owner,
            sem,
            normalized: flags & 1 != 0,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), PhysError> {
        let io = |source| PhysError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, PhysError> {
        let bytes = std::fs::read(path).map_err(|source| PhysError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::{prop, proptest, ProptestConfig};

    fn random_record(rng: &mut ChaCha8Rng) -> PhysRecord {
        let mut v = [0f64; PHYS_WIDTH];
        for x in &mut v {
            *x = f64::from_bits(rng.random::<u64>());
            if x.is_nan() {
                *x = rng.random::<f64>() * 1e3;
            }
        }
        unpack_phys(&v).unwrap()
    }

    #[test]
    fn zero_record_packs_to_zeros() {
        assert_eq!(pack_phys(&PhysRecord::default()), [0.0; PHYS_WIDTH]);
    }

    #[test]
    fn drawer_record_layout() {
        let r = PhysRecord {
            kin_child: 2.0,
            kin_parent: 8.0,
            kin_type: KinematicKind::B.code() as f64,
            ..Default::default()
        };
        let v = pack_phys(&r);
        assert_eq!((v[3], v[4], v[13]), (2.0, 8.0, 1.0));
    }

    #[test]
    fn wrong_arity() {
        assert!(matches!(unpack_phys(&[0.0; 13]), Err(PhysError::WrongArity(13))));
    }

    #[test]
    fn pack_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let r = random_record(&mut rng);
            let v = pack_phys(&r);
            let back = pack_phys(&unpack_phys(&v).unwrap());
            assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn cube_shell_at_res_4() {
        let mut a = fixtures::hidden_part_box();
        a.parts.truncate(1);
        let g = voxelize(&a, 4).unwrap();
        assert_eq!(g.occupied.len(), 56);
        for c in &g.occupied {
            assert!(c.iter().any(|&v| v == 0 || v == 3));
        }
    }

    #[test]
    fn two_part_densities_and_determinism() {
        let a = fixtures::laptop();
        let g = voxelize_with(&a, 16, 20_000, 3).unwrap();
        let d: Vec<f64> = a.parts.iter().map(|p| p.material.density).collect();
        assert!(g.phys.iter().all(|r| d.contains(&r.density)));
        assert_eq!(g, voxelize_with(&a, 16, 20_000, 3).unwrap());
        for (r, o) in g.phys.iter().zip(&g.owner) {
            assert_eq!(*r, part_record(&a, *o).unwrap());
        }
        let lid = part_record(&a, 2).unwrap();
        assert_eq!(lid.kin_type, 2.0);
        assert_eq!((lid.kin_child, lid.kin_parent), (2.0, 1.0));
        let base = part_record(&a, 1).unwrap();
        assert_eq!(base.kin_type, KinematicKind::E.code() as f64);
    }

    #[test]
    fn unannotated_joint_is_rejected() {
        let mut a = fixtures::laptop();
        a.constraints[0].range = None;
        assert!(matches!(voxelize_with(&a, 8, 100, 0), Err(PhysError::UnannotatedPart { part: 2, .. })));
    }

    #[test]
    fn normalization_endpoints() {
        let r = PhysRecord {
            density: 10.0,
            affordance: 1.0,
            ..Default::default()
        };
        let n = normalize_record(&r);
        assert_eq!(n.density, 1.0);
        assert_eq!(n.affordance, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn normalize_round_trip(v in prop::array::uniform14(-1e3f64..1e3)) {
            let r = unpack_phys(&v).unwrap();
            let back = pack_phys(&denormalize_record(&normalize_record(&r)));
            for (a, b) in v.iter().zip(&back) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grid_normalize_round_trip() {
        let g = voxelize_with(&fixtures::drawer_cabinet(), 16, 10_000, 1).unwrap();
        let n = normalize_channels(&g);
        assert!(n.normalized);
        let back = denormalize_channels(&n);
        for (a, b) in g.phys.iter().zip(&back.phys) {
            for (x, y) in pack_phys(a).iter().zip(pack_phys(b)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hashing_embedder_properties() {
        let e = HashingEmbedder::new(7);
        let a = e.embed("a wooden drawer slides out").unwrap();
        assert_eq!(a, e.embed("a wooden drawer slides out").unwrap());
        let b = e.embed("a wooden drawer slides in").unwrap();
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!(cos < 1.0 - 1e-6);
        let set = embed_descriptions(&e, &fixtures::laptop().parts[0].descriptions).unwrap();
        for col in &set {
            assert_eq!(col.len(), EMBED_DIM);
            let n: f64 = col.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn unreachable_http_embedder() {
        let e = HttpEmbedder {
            endpoint: "http://127.0.0.1:9/embed".into(),
            model: "m".into(),
            dim: EMBED_DIM,
        };
        assert!(matches!(e.embed("x"), Err(PhysError::EmbedderUnavailable(_))));
    }

    #[test]
    fn binary_round_trip() {
        let a = fixtures::laptop();
        let mut g = voxelize_with(&a, 8, 2_000, 0).unwrap();
        attach_semantics(&mut g, &a, &HashingEmbedder::new(0)).unwrap();
        let back = VoxelGrid::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back.occupied, g.occupied);
        assert_eq!(back.owner, g.owner);
        assert_eq!(back.sem, g.sem);
        for (x, y) in g.phys.iter().zip(&back.phys) {
            for (p, q) in pack_phys(x).iter().zip(pack_phys(y)) {
                assert_eq!(*p as f32 as f64, q);
            }
        }
        let bytes = g.to_bytes();
        assert!(VoxelGrid::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(VoxelGrid::from_bytes(b"nope").is_err());
    }
}
