//! Rasterized pen output, overlap scores and tracking errors.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::contact::PenModel;
use crate::error::{Error, Result};
use crate::model::UamParams;
use crate::sim::SimLog;
use crate::strokes::{FittedStroke, ImageToWall};

pub const DEFAULT_RESOLUTION: f64 = 2000.0;

/// Binary occupancy grid over image metres; pixel `(i, j)` covers
/// `[i, i + 1) / resolution` horizontally and `[j, j + 1) / resolution`
/// downward.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    resolution: f64,
    data: Vec<bool>,
}

impl Raster {
    pub fn new(width: usize, height: usize, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::param("resolution", "must be > 0"));
        }
        Ok(Raster {
            width,
            height,
            resolution,
            data: vec![false; width * height],
        })
    }

    /// Smallest raster covering `size` metres.
    pub fn covering(size: &Vector2<f64>, resolution: f64) -> Result<Self> {
        let px = |m: f64| (m * resolution - 1e-9).ceil().max(0.0) as usize;
        Raster::new(px(size.x), px(size.y), resolution)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        i < self.width && j < self.height && self.data[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        if i < self.width && j < self.height {
            self.data[j * self.width + i] = value;
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// Fills every pixel whose centre lies within the disk, in pixel units.
    pub fn stamp_px(&mut self, cx: f64, cy: f64, diameter: f64) {
        let r = 0.5 * diameter;
        if !(r > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return;
        }
        let r2 = r * r;
        let i0 = (cx - r - 0.5).floor().max(0.0) as usize;
        let j0 = (cy - r - 0.5).floor().max(0.0) as usize;
        let i1 = ((cx + r - 0.5).ceil().max(-1.0) + 1.0).min(self.width as f64) as usize;
        let j1 = ((cy + r - 0.5).ceil().max(-1.0) + 1.0).min(self.height as f64) as usize;
        for j in j0..j1 {
            let dy = j as f64 + 0.5 - cy;
            for i in i0..i1 {
                let dx = i as f64 + 0.5 - cx;
                if dx * dx + dy * dy <= r2 {
                    self.data[j * self.width + i] = true;
                }
            }
        }
    }

    /// Disk of `diameter` metres centred at image position `centre` (metres).
    pub fn stamp(&mut self, centre: &Vector2<f64>, diameter: f64) {
        self.stamp_px(
            centre.x * self.resolution,
            centre.y * self.resolution,
            diameter * self.resolution,
        );
    }

    fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |i, j| {
            Luma([if self.get(i as usize, j as usize) { 0 } else { 255 }])
        })
    }

    /// Ink black on white.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_gray().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Writes PNG or PGM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path)?;
        Ok(())
    }

    /// Pixels darker than `threshold` (fraction of full luminance) are ink.
    pub fn from_image_bytes(bytes: &[u8], resolution: f64, threshold: f64) -> Result<Self> {
        Self::from_gray(&image::load_from_memory(bytes)?.to_luma8(), resolution, threshold)
    }

    pub fn load(path: &Path, resolution: f64, threshold: f64) -> Result<Self> {
        Self::from_gray(&image::open(path)?.to_luma8(), resolution, threshold)
    }

    fn from_gray(img: &GrayImage, resolution: f64, threshold: f64) -> Result<Self> {
        let mut r = Raster::new(img.width() as usize, img.height() as usize, resolution)?;
        let cut = threshold * 255.0;
        for (i, j, px) in img.enumerate_pixels() {
            r.set(i as usize, j as usize, (px.0[0] as f64) < cut);
        }
        Ok(r)
    }

    fn key(&self) -> (usize, usize, f64) {
        (self.width, self.height, self.resolution)
    }
}

/// Stamps a disk of the pen's linewidth at every tick with positive true force.
pub fn render(log: &SimLog, pen: &PenModel, map: &ImageToWall, size: &Vector2<f64>, resolution: f64) -> Result<Raster> {
    if log.records.is_empty() {
        return Err(Error::Empty("simulation log"));
    }
    let mut r = Raster::covering(size, resolution)?;
    for rec in log.records.iter().filter(|r| r.measured.force > 0.0) {
        r.stamp(&map.to_image(&rec.measured.ee.p), pen.linewidth(rec.measured.force));
    }
    Ok(r)
}

/// Target raster from fitted strokes (image metres, widths in metres).
pub fn render_target(strokes: &[FittedStroke], size: &Vector2<f64>, resolution: f64) -> Result<Raster> {
    let mut r = Raster::covering(size, resolution)?;
    for s in strokes {
        for (q, w) in s.points.iter().zip(&s.widths) {
            r.stamp(q, *w);
        }
    }
    Ok(r)
}

/// Overlap of a written raster with its target; ratios are relative to the
/// target area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub iou: f64,
    pub intersection_ratio: f64,
    pub union_ratio: f64,
}

pub fn iou(written: &Raster, target: &Raster) -> Result<Overlap> {
    if written.key() != target.key() {
        return Err(Error::RasterMismatch(written.key(), target.key()));
    }
    let (mut inter, mut union, mut t) = (0usize, 0usize, 0usize);
    for (w, g) in written.data.iter().zip(&target.data) {
        inter += (*w && *g) as usize;
        union += (*w || *g) as usize;
        t += *g as usize;
    }
    if t == 0 {
        return Err(Error::Empty("target raster"));
    }
    let t = t as f64;
    Ok(Overlap {
        iou: inter as f64 / union as f64,
        intersection_ratio: inter as f64 / t,
        union_ratio: union as f64 / t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseMode {
    EePos,
    BasePos,
    Force,
}

/// Root mean square tracking error. Force errors use ticks with a positive
/// reference force only; the base position is the tip minus `R t_b_e`.
pub fn rmse(log: &SimLog, mode: RmseMode, params: &UamParams) -> Result<f64> {
    if log.records.is_empty() {
        return Err(Error::Empty("simulation log"));
    }
    let base = |s: &crate::model::EeState| s.p - s.rotation * params.t_b_e;
    let errors: Vec<f64> = log
        .records
        .iter()
        .filter_map(|r| {
            let (m, rf) = (&r.measured, &r.reference.state);
            match mode {
                RmseMode::EePos => Some((m.ee.p - rf.ee.p).norm_squared()),
                RmseMode::BasePos => Some((base(&m.ee) - base(&rf.ee)).norm_squared()),
                RmseMode::Force if rf.force > 0.0 => Some((m.force - rf.force).powi(2)),
                RmseMode::Force => None,
            }
        })
        .collect();
    if errors.is_empty() {
        return Err(Error::Empty("contact segments"));
    }
    Ok((errors.iter().sum::<f64>() / errors.len() as f64).sqrt())
}

/// Metrics of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub iou: f64,
    pub intersection_ratio: f64,
    pub union_ratio: f64,
    pub ee_pos_rmse: f64,
    pub base_pos_rmse: f64,
    pub force_rmse: f64,
    pub duration: f64,
}

impl Report {
    pub fn new(log: &SimLog, written: &Raster, target: &Raster, params: &UamParams) -> Result<Self> {
        let o = iou(written, target)?;
        let duration = match (log.records.first(), log.records.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        };
        Ok(Report {
            iou: o.iou,
            intersection_ratio: o.intersection_ratio,
            union_ratio: o.union_ratio,
            ee_pos_rmse: rmse(log, RmseMode::EePos, params)?,
            base_pos_rmse: rmse(log, RmseMode::BasePos, params)?,
            force_rmse: rmse(log, RmseMode::Force, params).or_else(|e| match e {
                Error::Empty(_) => Ok(0.0),
                e => Err(e),
            })?,
            duration,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}
