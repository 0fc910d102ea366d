//! Triangle meshes and Wavefront OBJ input/output (`v` and `f` records only).

use std::fmt::Write as _;
use std::path::Path;

use crate::Vec3;

/// Faces whose area falls below this value (normalized units) are dropped at load.
pub const DEGENERATE_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Debug, thiserror::Error)]
pub enum ObjError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("io error on {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        Self { vertices, faces }
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| self.face_area(f)).collect()
    }

    pub fn surface_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    pub fn face_normal(&self, face: usize) -> Option<Vec3> {
        self.face_cross(face).try_normalize(0.0)
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    /// Axis-aligned bounding box as `(min, max)`, `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(self.vertices.iter())
    }

    pub fn transform(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Appends `other`, re-basing its face indices.
    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    /// Removes faces below [`DEGENERATE_FACE_AREA`] or with out-of-range indices,
    /// returning how many were dropped.
    pub fn drop_degenerate_faces(&mut self) -> usize {
        let n = self.vertices.len() as u32;
        let before = self.faces.len();
        let vertices = &self.vertices;
        self.faces.retain(|f| {
            if f.iter().any(|&i| i >= n) {
                return false;
            }
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            0.5 * (b - a).cross(&(c - a)).norm() >= DEGENERATE_FACE_AREA
        });
        before - self.faces.len()
    }

    pub fn to_obj_string(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40 + self.faces.len() * 20);
        for v in &self.vertices {
            // `{:?}` on f64 prints the shortest representation that round-trips exactly.
            let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    /// Parses `v`/`f` records. Polygons are fan-triangulated; texture and normal
    /// indices (`f 1/2/3`) and negative (relative) indices are accepted. Every
    /// other record type is ignored.
    pub fn parse_obj(text: &str, file: &str) -> Result<Mesh, ObjError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let err = |line: usize, message: String| ObjError::Parse {
            file: file.to_string(),
            line,
            message,
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            let mut tokens = content.split_whitespace();
            match tokens.next() {
                Some("v") => {
                    let coords: Vec<f64> = tokens
                        .take(3)
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| err(line, format!("bad vertex coordinate: {e}")))?;
                    if coords.len() != 3 {
                        return Err(err(line, "vertex needs 3 coordinates".into()));
                    }
                    if coords.iter().any(|c| !c.is_finite()) {
                        return Err(err(line, "non-finite vertex coordinate".into()));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in tokens {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| err(line, format!("bad face index `{tok}`")))?;
                        let resolved = if i > 0 {
                            i - 1
                        } else if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            return Err(err(line, "face index 0 is invalid".into()));
                        };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(err(line, format!("face index {i} out of range")));
                        }
                        idx.push(resolved as u32);
                    }
                    if idx.len() < 3 {
                        return Err(err(line, "face needs at least 3 vertices".into()));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn read_obj(path: &Path) -> Result<Mesh, ObjError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ObjError::Io {
            file: file.clone(),
            source,
        })?;
        Self::parse_obj(&text, &file)
    }

    pub fn write_obj(&self, path: &Path) -> Result<(), ObjError> {
        std::fs::write(path, self.to_obj_string()).map_err(|source| ObjError::Io {
            file: path.display().to_string(),
            source,
        })
    }

    /// Little-endian binary layout used by the service mesh endpoint:
    /// `u32 vertex_count, u32 face_count, f32[3] * vertex_count, u32[3] * face_count`.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.vertices.len() * 12 + self.faces.len() * 12);
        out.extend_from_slice(&(self.vertices.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.faces.len() as u32).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        for f in &self.faces {
            for i in f {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        out
    }
}

pub fn bounds_of<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<(Vec3, Vec3)> {
    let mut it = points.into_iter();
    let first = *it.next()?;
    Some(it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

/// Primitive builders used by fixtures, procedural generation and tests.
pub mod shapes {
    use super::Mesh;
    use crate::Vec3;
    use std::f64::consts::PI;

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> Mesh {
        let v = |x: bool, y: bool, z: bool| {
            Vec3::new(
                if x { max.x } else { min.x },
                if y { max.y } else { min.y },
                if z { max.z } else { min.z },
            )
        };
        let vertices = vec![
            v(false, false, false),
            v(true, false, false),
            v(true, true, false),
            v(false, true, false),
            v(false, false, true),
            v(true, false, true),
            v(true, true, true),
            v(false, true, true),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [0, 4, 7],
            [0, 7, 3],
        ];
        Mesh::new(vertices, faces)
    }

    /// Closed cylinder along +z from `base_center.z` to `base_center.z + height`.
    pub fn cylinder(base_center: Vec3, radius: f64, height: f64, segments: usize) -> Mesh {
        tube_or_cylinder(base_center, None, radius, height, segments)
    }

    /// Hollow tube along +z with an annular top and bottom.
    pub fn tube(base_center: Vec3, inner: f64, outer: f64, height: f64, segments: usize) -> Mesh {
        tube_or_cylinder(base_center, Some(inner), outer, height, segments)
    }

    fn tube_or_cylinder(
        c: Vec3,
        inner: Option<f64>,
        outer: f64,
        height: f64,
        segments: usize,
    ) -> Mesh {
        let n = segments.max(3);
        let ring = |r: f64, z: f64| -> Vec<Vec3> {
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    Vec3::new(c.x + r * a.cos(), c.y + r * a.sin(), c.z + z)
                })
                .collect()
        };
        let mut vertices = Vec::new();
        vertices.extend(ring(outer, 0.0));
        vertices.extend(ring(outer, height));
        let (ob, ot) = (0u32, n as u32);
        let nn = n as u32;
        let mut faces = Vec::new();
        for i in 0..nn {
            let j = (i + 1) % nn;
            faces.push([ob + i, ob + j, ot + j]);
            faces.push([ob + i, ot + j, ot + i]);
        }
        match inner {
            None => {
                let cb = vertices.len() as u32;
                vertices.push(c);
                vertices.push(c + Vec3::new(0.0, 0.0, height));
                let ct = cb + 1;
                for i in 0..nn {
                    let j = (i + 1) % nn;
                    faces.push([cb, ob + j, ob + i]);
                    faces.push([ct, ot + i, ot + j]);
                }
            }
            Some(r_in) => {
                let ib = vertices.len() as u32;
                vertices.extend(ring(r_in, 0.0));
                vertices.extend(ring(r_in, height));
                let it = ib + nn;
                for i in 0..nn {
                    let j = (i + 1) % nn;
                    // inner wall faces inward
                    faces.push([ib + i, it + j, ib + j]);
                    faces.push([ib + i, it + i, it + j]);
                    // annular caps
                    faces.push([ot + i, it + j, ot + j]);
                    faces.push([ot + i, it + i, it + j]);
                    faces.push([ob + i, ob + j, ib + j]);
                    faces.push([ob + i, ib + j, ib + i]);
                }
            }
        }
        Mesh::new(vertices, faces)
    }

    /// UV sphere.
    pub fn sphere(center: Vec3, radius: f64, slices: usize, stacks: usize) -> Mesh {
        let (slices, stacks) = (slices.max(3), stacks.max(2));
        let mut vertices = vec![center + Vec3::new(0.0, 0.0, radius)];
        for s in 1..stacks {
            let phi = PI * s as f64 / stacks as f64;
            for i in 0..slices {
                let th = 2.0 * PI * i as f64 / slices as f64;
                vertices.push(
                    center
                        + radius * Vec3::new(phi.sin() * th.cos(), phi.sin() * th.sin(), phi.cos()),
                );
            }
        }
        vertices.push(center - Vec3::new(0.0, 0.0, radius));
        let bottom = (vertices.len() - 1) as u32;
        let ring = |s: usize, i: usize| (1 + s * slices + (i % slices)) as u32;
        let mut faces = Vec::new();
        for i in 0..slices {
            faces.push([0, ring(0, i), ring(0, i + 1)]);
        }
        for s in 0..stacks - 2 {
            for i in 0..slices {
                faces.push([ring(s, i), ring(s + 1, i), ring(s + 1, i + 1)]);
                faces.push([ring(s, i), ring(s + 1, i + 1), ring(s, i + 1)]);
            }
        }
        for i in 0..slices {
            faces.push([bottom, ring(stacks - 2, i + 1), ring(stacks - 2, i)]);
        }
        Mesh::new(vertices, faces)
    }

    /// Merges several meshes into one.
    pub fn union(meshes: &[Mesh]) -> Mesh {
        let mut out = Mesh::default();
        for m in meshes {
            out.append(m);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_area_and_outward_normals() {
        let m = shapes::cuboid(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        assert!((m.surface_area() - 24.0).abs() < 1e-12);
        for f in 0..m.faces.len() {
            let n = m.face_normal(f).unwrap();
            assert!(n.dot(&m.face_centroid(f)) > 0.0, "face {f} points inward");
        }
    }

    #[test]
    fn cylinder_and_tube_areas_approach_analytic() {
        let c = shapes::cylinder(Vec3::zeros(), 0.5, 1.0, 256);
        let exact = 2.0 * std::f64::consts::PI * 0.5 * 1.0 + 2.0 * std::f64::consts::PI * 0.25;
        assert!((c.surface_area() - exact).abs() / exact < 1e-3);
        let t = shapes::tube(Vec3::zeros(), 0.4, 0.5, 1.0, 256);
        let pi = std::f64::consts::PI;
        let exact = 2.0 * pi * 0.5 + 2.0 * pi * 0.4 + 2.0 * pi * (0.25 - 0.16);
        assert!((t.surface_area() - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn obj_round_trip_is_exact() {
        let m = shapes::sphere(Vec3::new(0.1, -0.3, 0.7), 0.33, 12, 7);
        let parsed = Mesh::parse_obj(&m.to_obj_string(), "mem").unwrap();
        assert_eq!(parsed, m);
    }

    #[test]
    fn obj_parse_polygons_and_slashes() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n";
        let m = Mesh::parse_obj(text, "quad.obj").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_parse_error_reports_line() {
        let err = Mesh::parse_obj("v 0 0 0\nv 1 0\n", "bad.obj").unwrap_err();
        match err {
            ObjError::Parse { file, line, .. } => {
                assert_eq!(file, "bad.obj");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = Mesh::parse_obj("v 0 0 0\nf 1 2 3\n", "bad.obj").unwrap_err();
        assert!(matches!(err, ObjError::Parse { line: 2, .. }));
    }

    #[test]
    fn degenerate_faces_dropped() {
        let mut m = Mesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
        );
        assert_eq!(m.drop_degenerate_faces(), 1);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn binary_layout_header() {
        let m = shapes::cuboid(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let b = m.to_binary();
        assert_eq!(u32::from_le_bytes(b[0..4].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 12);
        assert_eq!(b.len(), 8 + 8 * 12 + 12 * 12);
    }
}
