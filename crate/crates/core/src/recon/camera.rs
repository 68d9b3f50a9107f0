use nalgebra::Vector3;

use crate::diffusion::CameraPose;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Pinhole camera on a y-up orbit looking at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub pose: CameraPose,
    pub eye: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub tan_half_fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn from_pose(pose: CameraPose, width: usize, height: usize) -> Result<Self> {
        let bad = |why: String| Err(Error::DegenerateCamera(why));
        if width == 0 || height == 0 {
            return bad(format!("raster {width}×{height} is empty"));
        }
        let vals = [pose.elevation_deg, pose.azimuth_deg, pose.fov_deg, pose.distance];
        if vals.iter().any(|v| !v.is_finite()) {
            return bad("non-finite pose".into());
        }
        if !(pose.fov_deg > 0.0 && pose.fov_deg < 180.0) {
            return bad(format!("field of view {}° outside (0, 180)", pose.fov_deg));
        }
        if pose.distance <= 0.0 {
            return bad(format!("distance {} is not positive", pose.distance));
        }
        let (el, az) = (pose.elevation_deg.to_radians(), pose.azimuth_deg.to_radians());
        let eye = pose.distance * Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        let forward = -eye.normalize();
        let right = forward.cross(&Vec3::y());
        if right.norm() < 1e-9 {
            return bad(format!(
                "view direction parallel to the up axis (elevation {}°)",
                pose.elevation_deg
            ));
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        Ok(Self {
            pose,
            eye,
            forward,
            right,
            up,
            tan_half_fov: (0.5 * pose.fov_deg.to_radians()).tan(),
            width,
            height,
        })
    }

    /// Unit direction through the centre of pixel `(x, y)`, row 0 at the top.
    pub fn ray_dir(&self, x: usize, y: usize) -> Vec3 {
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0) * self.tan_half_fov * aspect;
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64) * self.tan_half_fov;
        (self.forward + sx * self.right + sy * self.up).normalize()
    }

    /// Distance along the optical axis.
    pub fn depth_of(&self, p: &Vec3) -> f64 {
        (p - self.eye).dot(&self.forward)
    }

    /// Continuous pixel coordinates of `p`, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let rel = p - self.eye;
        let z = rel.dot(&self.forward);
        if z <= 0.0 {
            return None;
        }
        let aspect = self.width as f64 / self.height as f64;
        let sx = rel.dot(&self.right) / (z * self.tan_half_fov * aspect);
        let sy = rel.dot(&self.up) / (z * self.tan_half_fov);
        Some((
            (sx + 1.0) * 0.5 * self.width as f64,
            (1.0 - sy) * 0.5 * self.height as f64,
        ))
    }

    /// Conditioning vector for pose modulation.
    pub fn pose_features(&self) -> [f64; 16] {
        let e = self.eye / self.pose.distance;
        let el = self.pose.elevation_deg.to_radians();
        [
            e.x,
            e.y,
            e.z,
            self.forward.x,
            self.forward.y,
            self.forward.z,
            self.right.x,
            self.right.y,
            self.right.z,
            self.up.x,
            self.up.y,
            self.up.z,
            self.tan_half_fov,
            self.pose.distance / 4.0,
            el.sin(),
            el.cos(),
        ]
    }
}

/// Entry and exit distances of a ray through `[-1, 1]³`, if it hits.
pub fn ray_box(origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let a = (-1.0 - origin[k]) / dir[k];
        let b = (1.0 - origin[k]) / dir[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0).then_some((t0, t1))
}
