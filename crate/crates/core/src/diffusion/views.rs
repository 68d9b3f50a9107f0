use std::path::{Path, PathBuf};

use image::{GenericImage, GenericImageView, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_ROWS: u32 = 3;
pub const GRID_COLS: u32 = 2;
pub const NUM_VIEWS: usize = (GRID_ROWS * GRID_COLS) as usize;

/// Fixed six-view camera convention of the multi-view backend.
pub const VIEW_ELEVATIONS_DEG: [f64; NUM_VIEWS] = [20.0, -10.0, 20.0, -10.0, 20.0, -10.0];
pub const VIEW_AZIMUTHS_DEG: [f64; NUM_VIEWS] = [30.0, 90.0, 150.0, 210.0, 270.0, 330.0];
pub const VIEW_FOV_DEG: f64 = 30.0;
pub const VIEW_DISTANCE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    /// Vertical field of view.
    pub fov_deg: f64,
    /// Distance from the orbit centre.
    pub distance: f64,
}

impl CameraPose {
    pub fn orbit(elevation_deg: f64, azimuth_deg: f64) -> Self {
        Self {
            elevation_deg,
            azimuth_deg,
            fov_deg: VIEW_FOV_DEG,
            distance: VIEW_DISTANCE,
        }
    }
}

pub fn default_poses() -> [CameraPose; NUM_VIEWS] {
    std::array::from_fn(|i| CameraPose::orbit(VIEW_ELEVATIONS_DEG[i], VIEW_AZIMUTHS_DEG[i]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: RgbImage,
    pub pose: CameraPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrid {
    pub tile_image: RgbImage,
    pub views: Vec<View>,
    pub seed: u64,
}

/// Row-major 3×2 tiling: view `i` sits at row `i / 2`, column `i % 2`.
pub fn tile_views(views: &[RgbImage]) -> Result<RgbImage> {
    if views.len() != NUM_VIEWS {
        return Err(Error::shape(format!("expected 6 views, got {}", views.len())));
    }
    let (w, h) = views[0].dimensions();
    if views.iter().any(|v| v.dimensions() != (w, h)) {
        return Err(Error::shape("views differ in size"));
    }
    let mut tile = RgbImage::new(w * GRID_COLS, h * GRID_ROWS);
    for (i, v) in views.iter().enumerate() {
        let i = i as u32;
        tile.copy_from(v, (i % GRID_COLS) * w, (i / GRID_COLS) * h)?;
    }
    Ok(tile)
}

pub fn untile_views(tile: &RgbImage) -> Result<Vec<RgbImage>> {
    let (tw, th) = tile.dimensions();
    if tw == 0 || th == 0 || tw % GRID_COLS != 0 || th % GRID_ROWS != 0 {
        return Err(Error::shape(format!(
            "tile {tw}×{th} does not split into a 3-row × 2-column grid"
        )));
    }
    let (w, h) = (tw / GRID_COLS, th / GRID_ROWS);
    Ok((0..NUM_VIEWS as u32)
        .map(|i| {
            tile.view((i % GRID_COLS) * w, (i / GRID_COLS) * h, w, h)
                .to_image()
        })
        .collect())
}

/// Places one image into every cell of the tile.
pub fn replicate_to_tile(view: &RgbImage) -> RgbImage {
    let copies: Vec<RgbImage> = (0..NUM_VIEWS).map(|_| view.clone()).collect();
    tile_views(&copies).expect("six equally sized copies always tile")
}

impl ViewGrid {
    pub fn from_tile(tile_image: RgbImage, seed: u64) -> Result<Self> {
        let views = untile_views(&tile_image)?
            .into_iter()
            .zip(default_poses())
            .map(|(image, pose)| View { image, pose })
            .collect();
        Ok(Self {
            tile_image,
            views,
            seed,
        })
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.views.iter().map(|v| v.pose).collect()
    }

    /// Writes `views.png`, `view_{0..5}.png` and `poses.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(NUM_VIEWS + 2);
        let tile_path = dir.join("views.png");
        self.tile_image.save(&tile_path)?;
        written.push(tile_path);
        for (i, v) in self.views.iter().enumerate() {
            let p = dir.join(format!("view_{i}.png"));
            v.image.save(&p)?;
            written.push(p);
        }
        let poses = serde_json::json!({
            "seed": self.seed,
            "layout": "row-major 3x2",
            "views": self.views.iter().enumerate().map(|(i, v)| serde_json::json!({
                "index": i,
                "file": format!("view_{i}.png"),
                "pose": v.pose,
            })).collect::<Vec<_>>(),
        });
        let p = dir.join("poses.json");
        std::fs::write(&p, serde_json::to_string_pretty(&poses)? + "\n")?;
        written.push(p);
        Ok(written)
    }
}
