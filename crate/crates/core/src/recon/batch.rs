use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use crate::diffusion::CameraPose;
use crate::error::{Error, Result};

/// Per-pixel rasters for one view, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRasters {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub mask: Vec<f64>,
    pub depth: Option<Vec<f64>>,
    pub normal: Option<Vec<[f64; 3]>>,
}

/// Pixels brighter than this on every channel count as background when a
/// mask is derived from an image composited over white.
pub const BACKGROUND_THRESHOLD: f64 = 0.97;

impl ViewRasters {
    pub fn blank(width: usize, height: usize, background: [f64; 3]) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            rgb: vec![background; n],
            mask: vec![0.0; n],
            depth: None,
            normal: None,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let ok = self.rgb.len() == n
            && self.mask.len() == n
            && self.depth.as_ref().is_none_or(|d| d.len() == n)
            && self.normal.as_ref().is_none_or(|d| d.len() == n);
        if !ok {
            return Err(Error::shape(format!(
                "rasters disagree with the {}×{} resolution",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// RGB from an 8-bit image; the mask marks every non-background pixel.
    pub fn from_image(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let rgb: Vec<[f64; 3]> = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
        let mask = rgb
            .iter()
            .map(|c| if c.iter().all(|&v| v > BACKGROUND_THRESHOLD) { 0.0 } else { 1.0 })
            .collect();
        Self {
            width: w as usize,
            height: h as usize,
            rgb,
            mask,
            depth: None,
            normal: None,
        }
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let c = self.rgb[y as usize * self.width + x as usize];
            Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    pub fn mask_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let m = self.mask[y as usize * self.width + x as usize];
            Luma([if m >= 0.5 { 255 } else { 0 }])
        })
    }

    /// Box-filtered downsample by an integer factor. Masks are re-binarised.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::invalid(
                "downsample factor",
                format!("{factor} does not divide {}×{}", self.width, self.height),
            ));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let inv = 1.0 / (factor * factor) as f64;
        let pool = |get: &dyn Fn(usize) -> f64| -> Vec<f64> {
            (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let mut s = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            s += get((y * factor + dy) * self.width + x * factor + dx);
                        }
                    }
                    s * inv
                })
                .collect()
        };
        let ch: Vec<Vec<f64>> = (0..3).map(|k| pool(&|i| self.rgb[i][k])).collect();
        let rgb = (0..w * h).map(|i| [ch[0][i], ch[1][i], ch[2][i]]).collect();
        let mask = pool(&|i| self.mask[i])
            .into_iter()
            .map(|m| if m >= 0.5 { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            width: w,
            height: h,
            rgb,
            mask,
            depth: None,
            normal: None,
        })
    }
}

/// Views with their cameras, the reconstructor's supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedViewBatch {
    pub views: Vec<ViewRasters>,
    pub cameras: Vec<Camera>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    pose: CameraPose,
    width: usize,
    height: usize,
    rgb: String,
    mask: String,
    depth: Option<String>,
    normal: Option<String>,
}

fn write_floats(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_floats(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::shape(format!(
            "{} holds {} bytes, expected {} f32 values",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect())
}

impl PosedViewBatch {
    pub fn new(views: Vec<ViewRasters>, cameras: Vec<Camera>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("view batch", "needs at least one view"));
        }
        if views.len() != cameras.len() {
            return Err(Error::shape(format!(
                "{} views but {} cameras",
                views.len(),
                cameras.len()
            )));
        }
        let (w, h) = (views[0].width, views[0].height);
        for (v, c) in views.iter().zip(&cameras) {
            v.check()?;
            if v.width != w || v.height != h || c.width != w || c.height != h {
                return Err(Error::shape("views and cameras must share one resolution"));
            }
        }
        Ok(Self { views, cameras })
    }

    /// Builds a batch from images composited over white.
    pub fn from_images(images: &[RgbImage], poses: &[CameraPose]) -> Result<Self> {
        if images.len() != poses.len() {
            return Err(Error::shape(format!(
                "{} images but {} poses",
                images.len(),
                poses.len()
            )));
        }
        let views: Vec<ViewRasters> = images.iter().map(ViewRasters::from_image).collect();
        let cameras = views
            .iter()
            .zip(poses)
            .map(|(v, p)| Camera::from_pose(*p, v.width, v.height))
            .collect::<Result<Vec<_>>>()?;
        Self::new(views, cameras)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.views[0].width, self.views[0].height)
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        let views = self
            .views
            .iter()
            .map(|v| v.downsample(factor))
            .collect::<Result<Vec<_>>>()?;
        let cameras = self
            .cameras
            .iter()
            .zip(&views)
            .map(|(c, v)| Camera::from_pose(c.pose, v.width, v.height))
            .collect::<Result<Vec<_>>>()?;
        Self::new(views, cameras)
    }

    /// Writes `rgb_i.png`, `mask_i.png`, optional little-endian f32
    /// `depth_i.f32` / `normal_i.f32`, and `cameras.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = Vec::with_capacity(self.len());
        for (i, (v, c)) in self.views.iter().zip(&self.cameras).enumerate() {
            let rgb = format!("rgb_{i}.png");
            let mask = format!("mask_{i}.png");
            v.to_image().save(dir.join(&rgb))?;
            v.mask_image().save(dir.join(&mask))?;
            let depth = match &v.depth {
                Some(d) => {
                    let name = format!("depth_{i}.f32");
                    write_floats(&dir.join(&name), d.iter().copied())?;
                    Some(name)
                }
                None => None,
            };
            let normal = match &v.normal {
                Some(n) => {
                    let name = format!("normal_{i}.f32");
                    write_floats(&dir.join(&name), n.iter().flatten().copied())?;
                    Some(name)
                }
                None => None,
            };
            manifest.push(ManifestEntry {
                pose: c.pose,
                width: v.width,
                height: v.height,
                rgb,
                mask,
                depth,
                normal,
            });
        }
        let path = dir.join("cameras.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("cameras.json");
        if !manifest_path.exists() {
            return Err(Error::MissingInput(manifest_path));
        }
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        let mut views = Vec::with_capacity(entries.len());
        let mut cameras = Vec::with_capacity(entries.len());
        for e in entries {
            let img = image::open(dir.join(&e.rgb))?.to_rgb8();
            let mask_img = image::open(dir.join(&e.mask))?.to_luma8();
            if img.dimensions() != (e.width as u32, e.height as u32)
                || mask_img.dimensions() != img.dimensions()
            {
                return Err(Error::shape(format!("{} does not match its manifest size", e.rgb)));
            }
            let n = e.width * e.height;
            let mut v = ViewRasters::from_image(&img);
            v.mask = mask_img.pixels().map(|p| if p.0[0] >= 128 { 1.0 } else { 0.0 }).collect();
            if let Some(d) = &e.depth {
                v.depth = Some(read_floats(&dir.join(d), n)?);
            }
            if let Some(nm) = &e.normal {
                let flat = read_floats(&dir.join(nm), 3 * n)?;
                v.normal = Some(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
            }
            cameras.push(Camera::from_pose(e.pose, e.width, e.height)?);
            views.push(v);
        }
        Self::new(views, cameras)
    }
}
