//! Evaluation metrics: Chamfer distance, F-score, PSNR and rendered-property MAE.
//!
//! Chamfer uses the squared-distance convention:
//! `CD(a, b) = mean_a min_b ‖a − b‖² + mean_b min_a ‖b − a‖²`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::asset::ObjectAsset;
use crate::geometry::{nearest_distances_sq, surface_sample};
use crate::render::{self, channel_image, raster, Channel, RenderError, ViewSpec};
use crate::Vec3;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const FSCORE_THRESHOLD: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Raw Chamfer distance (not scaled).
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let ab: f64 = nearest_distances_sq(a, b).iter().sum::<f64>() / a.len() as f64;
    let ba: f64 = nearest_distances_sq(b, a).iter().sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Chamfer distance × 10³, as reported.
pub fn chamfer_e3(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricsError> {
    Ok(chamfer(a, b)? * 1e3)
}

/// F-score × 10² at distance threshold `thr` (inclusive).
pub fn fscore(a: &[Vec3], b: &[Vec3], thr: f64) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let t2 = thr * thr;
    let frac = |q: &[Vec3], t: &[Vec3]| {
        nearest_distances_sq(q, t).iter().filter(|&&d| d <= t2).count() as f64 / q.len() as f64
    };
    let precision = frac(a, b);
    let recall = frac(b, a);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// PSNR of one image pair over all RGB values, capped at [`PSNR_CAP_DB`].
pub fn psnr_pair(pred: &RgbImage, gt: &RgbImage) -> Result<f64, MetricsError> {
    if pred.dimensions() != gt.dimensions() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            pred.dimensions(),
            gt.dimensions()
        )));
    }
    let raw_a = pred.as_raw();
    let raw_b = gt.as_raw();
    let sse: f64 = raw_a
        .iter()
        .zip(raw_b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / raw_a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean per-view PSNR.
pub fn psnr(pred: &[RgbImage], gt: &[RgbImage]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} views vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in pred.iter().zip(gt) {
        total += psnr_pair(a, b)?;
    }
    Ok(total / pred.len() as f64)
}

/// Maps raw pixel values of a property channel into the normalized range used
/// for MAE. Background pixels normalize to zeros.
pub fn normalize_values(channel: Channel, raw: &[f64]) -> Vec<f64> {
    match channel {
        Channel::Scale => raw.iter().map(|v| v / 1000.0).collect(),
        Channel::Density => raw.iter().map(|v| v / 10.0).collect(),
        Channel::Affordance => raw.iter().map(|v| (v - 1.0) / 9.0).collect(),
        Channel::KinRange => raw.iter().map(|v| v / PI).collect(),
        _ => raw.to_vec(),
    }
}

/// Normalized per-pixel error between two normalized pixel vectors.
pub fn pixel_error(channel: Channel, a: &[f64], b: &[f64]) -> f64 {
    let mean_abs = || a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    match channel {
        Channel::KinType => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0,
        Channel::KinDirection => {
            let (u, v) = (Vec3::from_column_slice(a), Vec3::from_column_slice(b));
            let (nu, nv) = (u.norm(), v.norm());
            match (nu > 0.0, nv > 0.0) {
                (false, false) => 0.0,
                (true, true) => 1.0 - (u.dot(&v) / (nu * nv)).abs().min(1.0),
                _ => 1.0,
            }
        }
        // Pivots live in [-1, 1]; halving maps the span onto [0, 1].
        Channel::KinPivot => mean_abs() / 2.0,
        _ => mean_abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeValue {
    pub normalized: f64,
    pub absolute: f64,
}

/// MAE of one channel over already-rasterized view pairs.
fn mae_from_rasters(
    pred: &ObjectAsset,
    gt: &ObjectAsset,
    rasters: &[(render::Raster, render::Raster)],
    channel: Channel,
) -> MaeValue {
    let k = channel.arity();
    let zeros = vec![0.0; k];
    let (mut norm_sum, mut abs_sum, mut views) = (0.0, 0.0, 0usize);
    for (rp, rg) in rasters {
        let ip = channel_image(pred, rp, channel);
        let ig = channel_image(gt, rg, channel);
        let (mut n, mut e_norm, mut e_abs) = (0usize, 0.0, 0.0);
        for i in 0..rp.part.len() {
            let (fp, fg) = (rp.is_foreground(i), rg.is_foreground(i));
            if !fp && !fg {
                continue;
            }
            let raw_p = if fp { &ip.pixels[i * k..(i + 1) * k] } else { &zeros[..] };
            let raw_g = if fg { &ig.pixels[i * k..(i + 1) * k] } else { &zeros[..] };
            let np = if fp { normalize_values(channel, raw_p) } else { zeros.clone() };
            let ng = if fg { normalize_values(channel, raw_g) } else { zeros.clone() };
            e_norm += pixel_error(channel, &np, &ng);
            e_abs += raw_p.iter().zip(raw_g).map(|(x, y)| (x - y).abs()).sum::<f64>() / k as f64;
            n += 1;
        }
        if n > 0 {
            norm_sum += e_norm / n as f64;
            abs_sum += e_abs / n as f64;
            views += 1;
        }
    }
    if views == 0 {
        return MaeValue {
            normalized: 0.0,
            absolute: 0.0,
        };
    }
    MaeValue {
        normalized: norm_sum / views as f64,
        absolute: abs_sum / views as f64,
    }
}

fn raster_pairs(
    pred: &ObjectAsset,
    gt: &ObjectAsset,
    views: &[ViewSpec],
) -> Result<Vec<(render::Raster, render::Raster)>, MetricsError> {
    views
        .iter()
        .map(|v| Ok((raster(pred, v)?, raster(gt, v)?)))
        .collect()
}

/// Rendered-property MAE of one channel, averaged over `views`.
pub fn property_mae(
    pred: &ObjectAsset,
    gt: &ObjectAsset,
    channel: Channel,
    views: &[ViewSpec],
) -> Result<MaeValue, MetricsError> {
    Ok(mae_from_rasters(pred, gt, &raster_pairs(pred, gt, views)?, channel))
}

/// MAE for every physical-property channel, sharing one raster per view.
pub fn property_mae_all(
    pred: &ObjectAsset,
    gt: &ObjectAsset,
    views: &[ViewSpec],
) -> Result<BTreeMap<Channel, MaeValue>, MetricsError> {
    let rasters = raster_pairs(pred, gt, views)?;
    Ok(Channel::PROPERTIES
        .iter()
        .map(|&c| (c, mae_from_rasters(pred, gt, &rasters, c)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub samples: usize,
    pub fscore_threshold: f64,
    pub psnr_views: usize,
    pub psnr_resolution: u32,
    pub property_resolution: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 10_000,
            fscore_threshold: FSCORE_THRESHOLD,
            psnr_views: 30,
            psnr_resolution: 256,
            property_resolution: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub cd_e3: f64,
    pub fscore_e2: f64,
    /// Normalized MAE per property channel.
    pub property_mae: BTreeMap<String, f64>,
    /// The same MAE on raw (unnormalized) values.
    pub property_mae_absolute: BTreeMap<String, f64>,
}

/// Full comparison of a predicted asset against ground truth.
pub fn evaluate(pred: &ObjectAsset, gt: &ObjectAsset, cfg: &EvalConfig) -> Result<MetricReport, MetricsError> {
    let psnr_views: Vec<ViewSpec> = render::random_sphere_views(cfg.psnr_views.max(1), cfg.seed)
        .into_iter()
        .map(|v| v.with_resolution(cfg.psnr_resolution, cfg.psnr_resolution))
        .collect();
    let mut pi = Vec::new();
    let mut gi = Vec::new();
    for v in &psnr_views {
        pi.push(render::render_rgb(pred, v)?);
        gi.push(render::render_rgb(gt, v)?);
    }
    let psnr_db = psnr(&pi, &gi)?;
    let sample = |a: &ObjectAsset| {
        surface_sample(&a.merged_mesh(), cfg.samples.max(1), cfg.seed)
            .map(|c| c.points)
            .map_err(|_| MetricsError::EmptyCloud)
    };
    let (sp, sg) = (sample(pred)?, sample(gt)?);
    let views: Vec<ViewSpec> = render::default_property_views()
        .into_iter()
        .map(|v| v.with_resolution(cfg.property_resolution, cfg.property_resolution))
        .collect();
    let mae = property_mae_all(pred, gt, &views)?;
    Ok(MetricReport {
        psnr_db,
        cd_e3: chamfer_e3(&sp, &sg)?,
        fscore_e2: fscore(&sp, &sg, cfg.fscore_threshold)?,
        property_mae: mae.iter().map(|(c, v)| (c.name().to_string(), v.normalized)).collect(),
        property_mae_absolute: mae.iter().map(|(c, v)| (c.name().to_string(), v.absolute)).collect(),
    })
}

/// One CSV line per named report, with a header row.
pub fn reports_to_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("name,psnr_db,cd_e3,fscore_e2");
    for c in Channel::PROPERTIES {
        out.push_str(&format!(",mae_{}", c.name()));
    }
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!("{name},{},{},{}", r.psnr_db, r.cd_e3, r.fscore_e2));
        for c in Channel::PROPERTIES {
            out.push_str(&format!(",{}", r.property_mae.get(c.name()).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        let one = |q: &[Vec3], t: &[Vec3]| {
            q.iter()
                .map(|p| t.iter().map(|x| (p - x).norm_squared()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / q.len() as f64
        };
        one(a, b) + one(b, a)
    }

    #[test]
    fn chamfer_hand_values() {
        let a = [Vec3::zeros()];
        let b = [Vec3::new(0.1, 0.0, 0.0)];
        assert!((chamfer(&a, &b).unwrap() - 0.02).abs() < 1e-15);
        assert!((chamfer_e3(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&[], &a).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<Vec3> = (0..1000).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let b: Vec<Vec3> = (0..1000).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        assert!((chamfer(&a, &b).unwrap() - brute_chamfer(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn fscore_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), 0.0)).collect();
        assert_eq!(fscore(&a, &a, 0.05).unwrap(), 100.0);
        let far: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.0, 0.0, 1.0)).collect();
        assert_eq!(fscore(&a, &far, 0.05).unwrap(), 0.0);
        let half: Vec<Vec3> = a
            .iter()
            .enumerate()
            .map(|(i, p)| if i % 2 == 0 { p + Vec3::new(0.0, 0.0, 0.1) } else { *p })
            .collect();
        let within = |q: &Vec3, t: &[Vec3]| t.iter().any(|x| (q - x).norm_squared() <= 0.05 * 0.05);
        let p = half.iter().filter(|q| within(q, &a)).count() as f64 / 200.0;
        let r = a.iter().filter(|q| within(q, &half)).count() as f64 / 200.0;
        let f = fscore(&half, &a, 0.05).unwrap();
        assert!((f - 200.0 * p * r / (p + r)).abs() < 1e-10);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = RgbImage::from_pixel(32, 32, Rgb([100, 100, 100]));
        let b = RgbImage::from_pixel(32, 32, Rgb([116, 116, 116]));
        assert_eq!(psnr(&[a.clone()], &[a.clone()]).unwrap(), PSNR_CAP_DB);
        let expect = 10.0 * (255.0f64.powi(2) / 256.0).log10();
        assert!((psnr(&[a.clone()], &[b.clone()]).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 24.05).abs() < 0.01);
        assert!(psnr(&[a.clone()], &[]).is_err());
        let c = RgbImage::from_pixel(16, 32, Rgb([0, 0, 0]));
        assert!(matches!(psnr(&[a], &[c]), Err(MetricsError::ShapeMismatch(_))));
    }

    #[test]
    fn psnr_matches_reference_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut noise = || RgbImage::from_fn(24, 24, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let (a, b) = (noise(), noise());
        let mut sse = 0.0;
        for (x, y) in a.pixels().zip(b.pixels()) {
            for c in 0..3 {
                sse += (x[c] as f64 - y[c] as f64).powi(2);
            }
        }
        let reference = 10.0 * (255.0 * 255.0 / (sse / (24.0 * 24.0 * 3.0))).log10();
        assert!((psnr(&[a], &[b]).unwrap() - reference).abs() < 1e-9);
    }

    fn small_views() -> Vec<ViewSpec> {
        render::default_property_views()
            .into_iter()
            .map(|v| v.with_resolution(48, 48))
            .collect()
    }

    #[test]
    fn mae_self_is_zero() {
        let a = fixtures::drawer_cabinet();
        for (c, v) in property_mae_all(&a, &a, &small_views()).unwrap() {
            assert_eq!(v.normalized, 0.0, "{c:?}");
            assert_eq!(v.absolute, 0.0, "{c:?}");
        }
    }

    #[test]
    fn density_offset() {
        let gt = {
            let mut a = fixtures::laptop();
            a.parts.iter_mut().for_each(|p| p.material.density = 1.0);
            a
        };
        let mut pred = gt.clone();
        pred.parts.iter_mut().for_each(|p| p.material.density = 1.5);
        let v = property_mae(&pred, &gt, Channel::Density, &small_views()).unwrap();
        assert!((v.absolute - 0.5).abs() < 1e-12);
        assert!((v.normalized - 0.05).abs() < 1e-12);
    }

    #[test]
    fn kind_errors() {
        assert_eq!(pixel_error(Channel::KinType, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(pixel_error(Channel::KinDirection, &[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]), 0.0);
        assert!((pixel_error(Channel::KinDirection, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let a = fixtures::laptop();
        let cfg = EvalConfig {
            samples: 500,
            psnr_views: 2,
            psnr_resolution: 32,
            property_resolution: 32,
            ..Default::default()
        };
        let r = evaluate(&a, &a, &cfg).unwrap();
        assert_eq!(r.cd_e3, 0.0);
        assert_eq!(r.fscore_e2, 100.0);
        assert_eq!(r.psnr_db, PSNR_CAP_DB);
        let csv = reports_to_csv(&[("x".into(), r)]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("name,psnr_db"));
    }
}
