//! Deterministic software z-buffer rasterizer.
//!
//! One [`Raster`] pass per view records, for every pixel, the nearest face, the
//! part owning it and its camera-space depth. Property images, colour renders
//! and part-isolation prompts are all read off that buffer, so they agree
//! pixel for pixel.

use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::asset::{KinematicKind, ObjectAsset};
use crate::Vec3;

/// Value written to background pixels of every channel except `mask`.
pub const BACKGROUND: f64 = -1.0;
const NEAR: f64 = 1e-3;
const MAGIC: &[u8; 4] = b"PHXI";

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("unknown part {0}")]
    UnknownPart(u32),
    #[error("invalid view: {0}")]
    InvalidView(String),
    #[error("malformed property image: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png encoding failed: {0}")]
    Png(#[from] image::ImageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub resolution: [u32; 2],
}

pub const VIEW_RADIUS: f64 = 2.8;
pub const VIEW_FOV_DEG: f64 = 40.0;
pub const VIEW_RESOLUTION: u32 = 512;

impl ViewSpec {
    /// A view from `eye` toward the origin at the default fov and resolution.
    pub fn toward_origin(eye: Vec3, up: Vec3) -> Self {
        Self {
            eye: eye.into(),
            look_at: [0.0; 3],
            up: up.into(),
            fov_deg: VIEW_FOV_DEG,
            resolution: [VIEW_RESOLUTION, VIEW_RESOLUTION],
        }
    }

    pub fn with_resolution(mut self, w: u32, h: u32) -> Self {
        self.resolution = [w, h];
        self
    }

    pub fn check(&self) -> Result<(), RenderError> {
        let forward = Vec3::from(self.look_at) - Vec3::from(self.eye);
        if !(forward.norm() > 1e-12) {
            return Err(RenderError::InvalidView("eye equals look_at".into()));
        }
        let up = Vec3::from(self.up);
        if !(forward.normalize().cross(&up).norm() > 1e-9 * up.norm().max(1e-300)) {
            return Err(RenderError::InvalidView("up is parallel to the view direction".into()));
        }
        if self.resolution[0] < 16 || self.resolution[1] < 16 {
            return Err(RenderError::InvalidView("resolution below 16x16".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(RenderError::InvalidView("fov must lie in (0, 180) degrees".into()));
        }
        Ok(())
    }

    fn camera(&self) -> Camera {
        let eye = Vec3::from(self.eye);
        let forward = (Vec3::from(self.look_at) - eye).normalize();
        let right = forward.cross(&Vec3::from(self.up)).normalize();
        let up = right.cross(&forward);
        let [w, h] = self.resolution;
        Camera {
            eye,
            forward,
            right,
            up,
            focal: 0.5 * h as f64 / (self.fov_deg.to_radians() * 0.5).tan(),
            cx: 0.5 * w as f64,
            cy: 0.5 * h as f64,
        }
    }
}

struct Camera {
    eye: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    focal: f64,
    cx: f64,
    cy: f64,
}

impl Camera {
    /// Screen position (pixels, y down) and camera-space depth.
    fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let d = p - self.eye;
        let z = d.dot(&self.forward);
        let x = d.dot(&self.right);
        let y = d.dot(&self.up);
        (self.cx + self.focal * x / z, self.cy - self.focal * y / z, z)
    }
}

/// Eight azimuths 45° apart at 30° elevation, then top and bottom.
pub fn default_property_views() -> Vec<ViewSpec> {
    let el = 30f64.to_radians();
    let mut views: Vec<ViewSpec> = (0..8)
        .map(|i| {
            let az = i as f64 * PI / 4.0;
            let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            ViewSpec::toward_origin(dir * VIEW_RADIUS, Vec3::z())
        })
        .collect();
    views.push(ViewSpec::toward_origin(Vec3::z() * VIEW_RADIUS, Vec3::y()));
    views.push(ViewSpec::toward_origin(-Vec3::z() * VIEW_RADIUS, Vec3::y()));
    views
}

/// `n` views with eye directions uniform on the sphere (normalized Gaussian
/// triples), deterministic in `seed`.
pub fn random_sphere_views(n: usize, seed: u64) -> Vec<ViewSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let d = Vec3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let Some(d) = d.try_normalize(1e-9) else { continue };
        let up = if d.z.abs() > 0.99 { Vec3::y() } else { Vec3::z() };
        out.push(ViewSpec::toward_origin(d * VIEW_RADIUS, up));
    }
    out
}

/// Per-pixel visibility for one view. Background pixels have infinite depth and
/// part 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
    pub part: Vec<u32>,
    /// Index into the owning part's face list.
    pub face: Vec<u32>,
    /// Unit face normal of the visible face (zero on background).
    pub normal: Vec<[f64; 3]>,
    pub view: ViewSpec,
}

impl Raster {
    pub fn is_foreground(&self, i: usize) -> bool {
        self.part[i] != 0
    }

    pub fn foreground_count(&self) -> usize {
        self.part.iter().filter(|&&p| p != 0).count()
    }

    /// Visible pixel count per part id (parts with no pixels omitted).
    pub fn part_pixel_counts(&self) -> std::collections::BTreeMap<u32, usize> {
        let mut out = std::collections::BTreeMap::new();
        for &p in &self.part {
            if p != 0 {
                *out.entry(p).or_insert(0) += 1;
            }
        }
        out
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Rasterizes every part of `asset` from `view`.
pub fn raster(asset: &ObjectAsset, view: &ViewSpec) -> Result<Raster, RenderError> {
    view.check()?;
    let cam = view.camera();
    let [w, h] = view.resolution;
    let n = (w * h) as usize;
    let mut out = Raster {
        width: w,
        height: h,
        depth: vec![f64::INFINITY; n],
        part: vec![0; n],
        face: vec![0; n],
        normal: vec![[0.0; 3]; n],
        view: view.clone(),
    };
    for part in &asset.parts {
        let projected: Vec<(f64, f64, f64)> =
            part.mesh.vertices.iter().map(|v| cam.project(v)).collect();
        for (fi, f) in part.mesh.faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| projected[i as usize]);
            if a.2 <= NEAR || b.2 <= NEAR || c.2 <= NEAR {
                continue;
            }
            let area = edge((a.0, a.1), (b.0, b.1), (c.0, c.1));
            if area.abs() < 1e-12 {
                continue;
            }
            let normal = part.mesh.face_normal(fi).unwrap_or_else(Vec3::zeros);
            let x0 = a.0.min(b.0).min(c.0).floor().max(0.0) as u32;
            let x1 = (a.0.max(b.0).max(c.0).ceil().min(w as f64) as u32).min(w);
            let y0 = a.1.min(b.1).min(c.1).floor().max(0.0) as u32;
            let y1 = (a.1.max(b.1).max(c.1).ceil().min(h as f64) as u32).min(h);
            for py in y0..y1 {
                for px in x0..x1 {
                    let p = (px as f64 + 0.5, py as f64 + 0.5);
                    let w0 = edge((b.0, b.1), (c.0, c.1), p) / area;
                    let w1 = edge((c.0, c.1), (a.0, a.1), p) / area;
                    let w2 = 1.0 - w0 - w1;
                    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                        continue;
                    }
                    // Perspective-correct depth: 1/z is affine in screen space.
                    let z = 1.0 / (w0 / a.2 + w1 / b.2 + w2 / c.2);
                    let i = (py * w + px) as usize;
                    if z < out.depth[i] {
                        out.depth[i] = z;
                        out.part[i] = part.id;
                        out.face[i] = fi as u32;
                        out.normal[i] = normal.into();
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Scale,
    Density,
    Affordance,
    KinType,
    KinDirection,
    KinPivot,
    KinRange,
    PartIndex,
    Color,
    Depth,
    Mask,
}

impl Channel {
    pub const ALL: [Channel; 11] = [
        Channel::Scale,
        Channel::Density,
        Channel::Affordance,
        Channel::KinType,
        Channel::KinDirection,
        Channel::KinPivot,
        Channel::KinRange,
        Channel::PartIndex,
        Channel::Color,
        Channel::Depth,
        Channel::Mask,
    ];

    /// Physical-property channels compared by the MAE metric.
    pub const PROPERTIES: [Channel; 7] = [
        Channel::Scale,
        Channel::Density,
        Channel::Affordance,
        Channel::KinType,
        Channel::KinDirection,
        Channel::KinPivot,
        Channel::KinRange,
    ];

    /// Components per pixel.
    pub fn arity(self) -> usize {
        match self {
            Channel::Scale | Channel::KinDirection | Channel::KinPivot | Channel::Color => 3,
            Channel::KinType => 6,
            Channel::KinRange => 2,
            _ => 1,
        }
    }

    pub fn code(self) -> u32 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Scale => "scale",
            Channel::Density => "density",
            Channel::Affordance => "affordance",
            Channel::KinType => "kin_type",
            Channel::KinDirection => "kin_direction",
            Channel::KinPivot => "kin_pivot",
            Channel::KinRange => "kin_range",
            Channel::PartIndex => "part_index",
            Channel::Color => "color",
            Channel::Depth => "depth",
            Channel::Mask => "mask",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown channel `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyImage {
    pub channel: Channel,
    pub width: u32,
    pub height: u32,
    /// Row-major, `arity` values per pixel.
    pub pixels: Vec<f64>,
    pub view: ViewSpec,
}

impl PropertyImage {
    pub fn arity(&self) -> usize {
        self.channel.arity()
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f64] {
        let k = self.arity();
        let i = (y * self.width + x) as usize * k;
        &self.pixels[i..i + k]
    }

    /// Little-endian layout: magic `PHXI`, then u32 width, height, arity and
    /// channel code, then `width·height·arity` f32 values, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.pixels.len() * 4);
        out.extend_from_slice(MAGIC);
        for v in [self.width, self.height, self.arity() as u32, self.channel.code()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &p in &self.pixels {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); values come back as f32 precision
    /// and the view is not stored.
    pub fn from_bytes(bytes: &[u8], view: ViewSpec) -> Result<Self, RenderError> {
        let bad = |m: &str| RenderError::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (width, height, arity, code) = (word(0), word(1), word(2) as usize, word(3));
        let channel = Channel::from_code(code).ok_or_else(|| bad("unknown channel code"))?;
        if arity != channel.arity() {
            return Err(bad("arity does not match channel"));
        }
        let count = width as usize * height as usize * arity;
        if bytes.len() != 20 + count * 4 {
            return Err(bad("payload length mismatch"));
        }
        let pixels = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            channel,
            width,
            height,
            pixels,
            view,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| RenderError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Per-part attribute vectors for every channel, in raw (unnormalized) units.
#[derive(Debug, Clone)]
struct PartValues {
    values: std::collections::BTreeMap<(u32, Channel), Vec<f64>>,
}

/// Kind code → one-hot over A, B, C, D, E, CB.
pub fn kind_one_hot(kind: KinematicKind) -> [f64; 6] {
    let mut v = [0.0; 6];
    v[kind.code() as usize] = 1.0;
    v
}

const LIGHT: [f64; 3] = [0.4, -0.5, 0.77];

fn palette(id: u32) -> [f64; 3] {
    const P: [[f64; 3]; 6] = [
        [0.85, 0.35, 0.3],
        [0.3, 0.6, 0.85],
        [0.4, 0.75, 0.35],
        [0.9, 0.75, 0.3],
        [0.65, 0.45, 0.8],
        [0.35, 0.75, 0.75],
    ];
    P[(id as usize + P.len() - 1) % P.len()]
}

fn part_values(asset: &ObjectAsset) -> PartValues {
    let mut values = std::collections::BTreeMap::new();
    let scale = asset.absolute_scale.as_array().to_vec();
    for p in &asset.parts {
        let c = asset.constraint_for_child(p.id);
        let kind = c.map(|c| c.kind).unwrap_or(KinematicKind::E);
        let mut put = |ch: Channel, v: Vec<f64>| {
            values.insert((p.id, ch), v);
        };
        put(Channel::Scale, scale.clone());
        put(Channel::Density, vec![p.material.density]);
        put(Channel::Affordance, vec![p.affordance_rank as f64]);
        put(Channel::KinType, kind_one_hot(kind).to_vec());
        put(
            Channel::KinDirection,
            c.and_then(|c| c.direction).unwrap_or([0.0; 3]).to_vec(),
        );
        put(
            Channel::KinPivot,
            c.and_then(|c| c.pivot).unwrap_or([0.0; 3]).to_vec(),
        );
        put(
            Channel::KinRange,
            c.and_then(|c| c.range).unwrap_or([0.0; 2]).to_vec(),
        );
        put(Channel::PartIndex, vec![p.id as f64]);
    }
    PartValues { values }
}

/// Reads one channel off a raster.
pub fn channel_image(asset: &ObjectAsset, r: &Raster, channel: Channel) -> PropertyImage {
    let k = channel.arity();
    let n = (r.width * r.height) as usize;
    let mut pixels = Vec::with_capacity(n * k);
    let table = part_values(asset);
    let light = Vec3::from(LIGHT).normalize();
    for i in 0..n {
        let part = r.part[i];
        if part == 0 {
            let bg = if channel == Channel::Mask { 0.0 } else { BACKGROUND };
            pixels.extend(std::iter::repeat_n(bg, k));
            continue;
        }
        match channel {
            Channel::Mask => pixels.push(1.0),
            Channel::Depth => pixels.push(r.depth[i]),
            Channel::Color => {
                let shade = 0.3 + 0.7 * Vec3::from(r.normal[i]).dot(&light).abs();
                pixels.extend(palette(part).map(|c| c * shade));
            }
            _ => pixels.extend_from_slice(&table.values[&(part, channel)]),
        }
    }
    PropertyImage {
        channel,
        width: r.width,
        height: r.height,
        pixels,
        view: r.view.clone(),
    }
}

/// Renders one channel of `asset` from `view`.
pub fn rasterize(asset: &ObjectAsset, view: &ViewSpec, channel: Channel) -> Result<PropertyImage, RenderError> {
    Ok(channel_image(asset, &raster(asset, view)?, channel))
}

/// Shaded 8-bit colour render on a white background.
pub fn render_rgb(asset: &ObjectAsset, view: &ViewSpec) -> Result<RgbImage, RenderError> {
    let r = raster(asset, view)?;
    let img = channel_image(asset, &r, Channel::Color);
    Ok(RgbImage::from_fn(r.width, r.height, |x, y| {
        let i = (y * r.width + x) as usize;
        if r.part[i] == 0 {
            Rgb([255, 255, 255])
        } else {
            let px = img.pixel(x, y);
            Rgb([0, 1, 2].map(|c| (px[c] * 255.0).round().clamp(0.0, 255.0) as u8))
        }
    }))
}

pub const ISOLATION_TARGET: Rgb<u8> = Rgb([255, 0, 0]);
pub const ISOLATION_OTHER: Rgb<u8> = Rgb([128, 128, 128]);
pub const ISOLATION_BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

/// Target part red, other parts grey, white background, read off a shared raster.
pub fn isolation_image(r: &Raster, part_id: u32) -> RgbImage {
    RgbImage::from_fn(r.width, r.height, |x, y| match r.part[(y * r.width + x) as usize] {
        0 => ISOLATION_BACKGROUND,
        p if p == part_id => ISOLATION_TARGET,
        _ => ISOLATION_OTHER,
    })
}

pub fn render_isolation(asset: &ObjectAsset, part_id: u32, view: &ViewSpec) -> Result<RgbImage, RenderError> {
    if asset.part(part_id).is_none() {
        return Err(RenderError::UnknownPart(part_id));
    }
    Ok(isolation_image(&raster(asset, view)?, part_id))
}

pub fn count_color(img: &RgbImage, color: Rgb<u8>) -> usize {
    img.pixels().filter(|&&p| p == color).count()
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), RenderError> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// PNG bytes of an image, for embedding in requests.
pub fn png_bytes(img: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}
