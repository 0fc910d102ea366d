//! Physics-grounded asset toolkit: part-level physical annotation schema,
//! kinematic joint estimation from contact geometry, procedural composition,
//! voxel feature packing, rendering-based evaluation, and a toy conditional
//! flow matching trainer.

pub mod annotate;
pub mod asset;
pub mod cfm;
pub mod fixtures;
pub mod geometry;
pub mod kinematics;
pub mod kmeans;
pub mod mesh;
pub mod metrics;
pub mod physfeat;
pub mod procgen;
pub mod render;
pub mod spatial;

pub type Vec3 = nalgebra::Vector3<f64>;

/// Serializes `value` as pretty JSON with object keys sorted at every level,
/// terminated by a newline.
pub fn canonical_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    let mut s = serde_json::to_string_pretty(&sorted(v)).expect("json value");
    s.push('\n');
    s
}

fn sorted(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sorted(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
