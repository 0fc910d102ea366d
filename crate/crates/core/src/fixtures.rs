//! Hand-authored synthetic assets with known joints.
//!
//! Every fixture is built in a convenient raw frame and returned normalized, so
//! ground-truth pivots and prismatic ranges live in normalized coordinates.

use crate::asset::{
    AbsoluteScale, DescriptionSet, KinematicConstraint, KinematicKind, MaterialSpec, ObjectAsset,
    Part,
};
use crate::geometry::normalize_object;
use crate::mesh::{shapes, Mesh};
use crate::Vec3;

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> Mesh {
    shapes::cuboid(Vec3::from(lo), Vec3::from(hi))
}

/// Builds a part with preset material and generated descriptions.
pub fn make_part(id: u32, name: &str, mesh: Mesh, material: &str, affordance_rank: u32) -> Part {
    Part {
        id,
        name: name.to_string(),
        mesh,
        material: MaterialSpec::preset(material).expect("known material preset"),
        affordance_rank,
        descriptions: DescriptionSet {
            basic: format!("The {name} of the object."),
            functional: format!("The {name} serves its role in the assembly."),
            kinematic: format!("The {name} moves as its joint allows."),
            grasped: format!("The {name} is grasped with rank {affordance_rank}."),
        },
    }
}

fn joint(
    kind: KinematicKind,
    parent: u32,
    child: u32,
    direction: Option<[f64; 3]>,
    pivot: Option<[f64; 3]>,
    range: [f64; 2],
) -> KinematicConstraint {
    KinematicConstraint {
        kind,
        parent_part: Some(parent),
        child_part: Some(child),
        direction,
        pivot,
        range: Some(range),
        finalized: true,
    }
}

fn assemble(
    name: &str,
    category: &str,
    scale: [f64; 3],
    parts: Vec<Part>,
    constraints: Vec<KinematicConstraint>,
) -> ObjectAsset {
    let raw = ObjectAsset {
        object_name: name.to_string(),
        category: category.to_string(),
        absolute_scale: AbsoluteScale::new(scale[0], scale[1], scale[2]),
        parts,
        constraints,
        provenance: format!("fixture:{name}"),
    };
    normalize_object(&raw).expect("fixture geometry is non-empty")
}

const QUARTER: f64 = std::f64::consts::FRAC_PI_2;

/// Box whose lid stands open at 90° on the back edge; revolute about y.
pub fn hinged_box() -> ObjectAsset {
    let body = cuboid([-1.0, -0.6, -0.6], [1.0, 0.6, 0.4]);
    let lid = cuboid([0.95, -0.6, 0.4], [1.0, 0.6, 1.0]);
    assemble(
        "hinged_box",
        "box",
        [40.0, 24.0, 32.0],
        vec![
            make_part(1, "body", body, "wood", 5),
            make_part(2, "lid", lid, "wood", 1),
        ],
        vec![joint(
            KinematicKind::C,
            1,
            2,
            Some([0.0, 1.0, 0.0]),
            Some([0.975, 0.0, 0.4]),
            [0.0, QUARTER],
        )],
    )
}

/// Laptop with the screen raised to vertical; hinge along y at the back edge.
pub fn laptop() -> ObjectAsset {
    laptop_sized("laptop", 0.7, 1.0, 1.3)
}

/// A wider, shallower laptop, used as an intra-category partner.
pub fn laptop_wide() -> ObjectAsset {
    laptop_sized("laptop_wide", 0.6, 1.0, 1.0)
}

fn laptop_sized(name: &str, half_depth: f64, half_width: f64, screen: f64) -> ObjectAsset {
    let base = cuboid([-half_depth, -half_width, -0.06], [half_depth, half_width, 0.0]);
    let lid = cuboid(
        [half_depth - 0.04, -half_width, 0.0],
        [half_depth, half_width, screen],
    );
    assemble(
        name,
        "laptop",
        [24.0, 34.0, 22.0],
        vec![
            make_part(1, "base", base, "aluminum", 3),
            make_part(2, "lid", lid, "aluminum", 1),
        ],
        vec![joint(
            KinematicKind::C,
            1,
            2,
            Some([0.0, 1.0, 0.0]),
            Some([half_depth - 0.02, 0.0, 0.0]),
            [0.0, 2.0 * QUARTER * 0.75],
        )],
    )
}

/// Slot walls of a cabinet shell whose floor spans `x ∈ [x0, x1]`,
/// `y ∈ [-hw, hw]`, top surface at `zf`, with `h` of interior height.
fn shell_frame(x0: f64, x1: f64, hw: f64, zf: f64, h: f64, wall: f64) -> Mesh {
    shapes::union(&[
        cuboid([x0, -hw, zf - 0.05], [x1, hw, zf]),
        cuboid([x1, -hw - wall, zf - 0.05], [x1 + wall, hw + wall, zf + h]),
        cuboid([x0, -hw - wall, zf - 0.05], [x1, -hw, zf + h]),
        cuboid([x0, hw, zf - 0.05], [x1, hw + wall, zf + h]),
    ])
}

/// Cabinet with one drawer whose front is flush with the −x face; prismatic
/// along x, opening toward −x.
pub fn drawer_cabinet() -> ObjectAsset {
    let frame = shell_frame(-1.0, 0.96, 0.66, -0.45, 0.9, 0.04);
    let top = cuboid([-1.0, -0.7, 0.45], [1.0, 0.7, 0.5]);
    let drawer = shapes::union(&[
        cuboid([-1.0, -0.62, -0.45], [0.92, 0.62, 0.05]),
        cuboid([-1.05, -0.15, -0.15], [-1.0, 0.15, -0.1]),
    ]);
    assemble(
        "drawer_cabinet",
        "cabinet",
        [50.0, 70.0, 50.0],
        vec![
            make_part(1, "frame", frame, "wood", 6),
            make_part(2, "top", top, "wood", 4),
            make_part(3, "drawer", drawer, "wood", 1),
        ],
        vec![joint(
            KinematicKind::B,
            1,
            3,
            Some([1.0, 0.0, 0.0]),
            None,
            [-1.92, 0.0],
        )],
    )
}

/// Tall cabinet with its door swung open 90° about the front-left vertical edge.
pub fn door_cabinet() -> ObjectAsset {
    let body = cuboid([-0.5, -0.5, -1.0], [0.5, 0.5, 1.0]);
    let door = shapes::union(&[
        cuboid([-1.0, -0.5, -0.95], [-0.5, -0.46, 0.95]),
        cuboid([-0.95, -0.54, -0.1], [-0.9, -0.5, 0.1]),
    ]);
    assemble(
        "door_cabinet",
        "cabinet",
        [50.0, 50.0, 100.0],
        vec![
            make_part(1, "body", body, "wood", 6),
            make_part(2, "door", door, "wood", 1),
        ],
        vec![joint(
            KinematicKind::C,
            1,
            2,
            Some([0.0, 0.0, 1.0]),
            Some([-0.5, -0.48, 0.0]),
            [0.0, QUARTER],
        )],
    )
}

/// Bottle with a screw cap resting on a hollow neck; screw joint along z.
pub fn bottle() -> ObjectAsset {
    let body = shapes::union(&[
        shapes::cylinder(v(0.0, 0.0, -1.0), 0.5, 1.4, 48),
        shapes::tube(v(0.0, 0.0, 0.4), 0.15, 0.2, 0.35, 48),
    ]);
    let cap = shapes::cylinder(v(0.0, 0.0, 0.75), 0.21, 0.2, 48);
    assemble(
        "bottle",
        "bottle",
        [8.0, 8.0, 25.0],
        vec![
            make_part(1, "body", body, "plastic", 2),
            make_part(2, "cap", cap, "plastic", 1),
        ],
        vec![joint(
            KinematicKind::CB,
            1,
            2,
            Some([0.0, 0.0, 1.0]),
            Some([0.0, 0.0, 0.75]),
            [0.0, 4.0 * QUARTER * 2.0],
        )],
    )
}

/// Maps a mesh built along +z onto the −x axis starting at `x0`.
fn along_neg_x(m: &Mesh, x0: f64) -> Mesh {
    m.transform(|p| v(x0 - p.z, p.y, p.x))
}

/// Wall-mounted shower head on a ball joint; rotation about a point.
pub fn shower() -> ObjectAsset {
    let mount = cuboid([0.9, -0.3, -1.0], [1.0, 0.3, 1.0]);
    let head = shapes::union(&[
        along_neg_x(&shapes::cylinder(Vec3::zeros(), 0.04, 0.6, 24), 0.9),
        along_neg_x(&shapes::cylinder(Vec3::zeros(), 0.35, 0.08, 48), 0.3),
    ]);
    let mut constraint = joint(
        KinematicKind::D,
        1,
        2,
        None,
        Some([0.9, 0.0, 0.0]),
        [0.0, QUARTER * 0.5],
    );
    constraint.direction = None;
    assemble(
        "shower",
        "shower",
        [15.0, 25.0, 40.0],
        vec![
            make_part(1, "mount", mount, "steel", 4),
            make_part(2, "head", head, "steel", 1),
        ],
        vec![constraint],
    )
}

/// Five-part cabinet shell with an empty slot, a base for drawer grafting.
pub fn cabinet_base() -> ObjectAsset {
    let frame = shell_frame(-0.8, 0.76, 0.6, -0.5, 0.8, 0.07);
    let top = cuboid([-0.8, -0.67, 0.3], [0.83, 0.67, 0.38]);
    let plinth = cuboid([-0.75, -0.6, -0.7], [0.75, 0.6, -0.55]);
    let leg = |y: f64| cuboid([-0.7, y - 0.08, -0.9], [-0.54, y + 0.08, -0.7]);
    assemble(
        "cabinet_base",
        "cabinet",
        [60.0, 80.0, 70.0],
        vec![
            make_part(1, "frame", frame, "wood", 6),
            make_part(2, "top", top, "wood", 4),
            make_part(3, "plinth", plinth, "wood", 8),
            make_part(4, "leg_left", leg(-0.45), "wood", 9),
            make_part(5, "leg_right", leg(0.45), "wood", 9),
        ],
        Vec::new(),
    )
}

/// Four-legged table; a base with no slot.
pub fn table() -> ObjectAsset {
    let top = cuboid([-1.0, -0.6, 0.5], [1.0, 0.6, 0.58]);
    let mut parts = vec![make_part(1, "top", top, "wood", 2)];
    for (i, (x, y)) in [(-0.9, -0.5), (0.9, -0.5), (-0.9, 0.5), (0.9, 0.5)].iter().enumerate() {
        let leg = cuboid([x - 0.05, y - 0.05, -0.6], [x + 0.05, y + 0.05, 0.5]);
        parts.push(make_part(i as u32 + 2, "leg", leg, "wood", 7));
    }
    assemble("table", "table", [120.0, 70.0, 75.0], parts, Vec::new())
}

/// A ball: no planar patch anywhere.
pub fn sphere_ball() -> ObjectAsset {
    assemble(
        "ball",
        "ball",
        [20.0, 20.0, 20.0],
        vec![make_part(
            1,
            "shell",
            shapes::sphere(Vec3::zeros(), 1.0, 32, 16),
            "rubber",
            1,
        )],
        Vec::new(),
    )
}

/// Closed box with a second part sealed inside it.
pub fn hidden_part_box() -> ObjectAsset {
    assemble(
        "sealed_box",
        "box",
        [30.0, 30.0, 30.0],
        vec![
            make_part(1, "shell", cuboid([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]), "wood", 1),
            make_part(2, "core", cuboid([-0.3, -0.3, -0.3], [0.3, 0.3, 0.3]), "steel", 10),
        ],
        Vec::new(),
    )
}

/// The drawer of [`drawer_cabinet`] grafted into [`cabinet_base`].
pub fn cabinet_with_drawer() -> ObjectAsset {
    use crate::procgen::{compose, component_of, plan_pair, Mode, ProcgenConfig};
    let cfg = ProcgenConfig::default();
    let (base, donor) = (cabinet_base(), drawer_cabinet());
    let component = component_of(&donor, 3, &cfg).expect("drawer contacts its frame");
    let plan = plan_pair(("cabinet_base", &base), ("drawer_cabinet", &donor), &component, Mode::Cross, &cfg)
        .expect("drawer fits the cabinet slot");
    compose(&base, &donor, &plan).expect("composite validates")
}

/// Every fixture defined here, by name.
pub fn all() -> Vec<(&'static str, ObjectAsset)> {
    vec![
        ("hinged_box", hinged_box()),
        ("laptop", laptop()),
        ("laptop_wide", laptop_wide()),
        ("drawer_cabinet", drawer_cabinet()),
        ("door_cabinet", door_cabinet()),
        ("bottle", bottle()),
        ("shower", shower()),
        ("cabinet_base", cabinet_base()),
        ("table", table()),
        ("ball", sphere_ball()),
        ("sealed_box", hidden_part_box()),
        ("cabinet_with_drawer", cabinet_with_drawer()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::validate_asset;

    #[test]
    fn fixtures_are_valid_and_normalized() {
        for (name, a) in all() {
            assert!(validate_asset(&a).is_empty(), "{name}: {:?}", validate_asset(&a));
            let (lo, hi) = a.bounds().unwrap();
            let half = (hi - lo) * 0.5;
            assert!((half.max() - 1.0).abs() < 1e-9, "{name}");
            assert!(((hi + lo) * 0.5).norm() < 1e-9, "{name}");
        }
    }
}
