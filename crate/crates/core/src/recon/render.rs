use nalgebra::Matrix3;

use super::batch::ViewRasters;
use super::camera::{ray_box, Camera, Vec3};
use super::field::{Field, FieldGrad, SampleGrad, TriplaneField};
use crate::error::{Error, Result};
use crate::mesh::MeshResult;

pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

/// Volume-rendering controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeSettings {
    /// Midpoint samples per ray across the box.
    pub samples: usize,
    /// Laplace scale of the SDF-to-density map; smaller is sharper.
    pub beta: f64,
    pub background: [f64; 3],
    /// Sample weights below this are skipped when estimating normals.
    pub normal_weight_floor: f64,
}

impl Default for VolumeSettings {
    fn default() -> Self {
        Self {
            samples: 64,
            beta: 0.01,
            background: WHITE,
            normal_weight_floor: 1e-4,
        }
    }
}

impl VolumeSettings {
    fn check(&self) -> Result<()> {
        if self.samples == 0 || !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(
                "volume settings",
                format!("samples {} and beta {} must be positive", self.samples, self.beta),
            ));
        }
        Ok(())
    }
}

/// `σ(s) = Ψ_β(s) / β` for the Laplace CDF `Ψ_β`, `s` positive inside.
pub fn laplace_density(s: f64, beta: f64) -> f64 {
    let e = 0.5 * (-s.abs() / beta).exp();
    (if s <= 0.0 { e } else { 1.0 - e }) / beta
}

pub fn laplace_density_grad(s: f64, beta: f64) -> f64 {
    0.5 / (beta * beta) * (-s.abs() / beta).exp()
}

#[derive(Debug, Clone)]
struct RaySample {
    p: [f64; 3],
    s_in: f64,
    color: [f64; 3],
    sigma: f64,
}

/// Per-pixel samples kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct VolumeTrace {
    rays: Vec<Option<(f64, Vec<RaySample>)>>,
}

fn outward_normal(field: &dyn Field, p: [f64; 3]) -> Result<[f64; 3]> {
    const H: f64 = 1e-4;
    let mut g = [0.0; 3];
    for (k, gk) in g.iter_mut().enumerate() {
        let mut a = p;
        let mut b = p;
        a[k] = (a[k] + H).min(1.0);
        b[k] = (b[k] - H).max(-1.0);
        *gk = -(field.inside(a)? - field.inside(b)?) / (a[k] - b[k]);
    }
    let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    Ok(if n > 0.0 { g.map(|x| x / n) } else { [0.0; 3] })
}

/// Volume-renders `field`: rgb composited over the background, mask as
/// accumulated opacity, normalised depth along the optical axis and unit
/// outward normals.
pub fn render_volume(field: &dyn Field, cam: &Camera, s: &VolumeSettings) -> Result<ViewRasters> {
    Ok(render_volume_impl(field, cam, s, false)?.0)
}

pub fn render_volume_traced(
    field: &dyn Field,
    cam: &Camera,
    s: &VolumeSettings,
) -> Result<(ViewRasters, VolumeTrace)> {
    render_volume_impl(field, cam, s, true)
}

fn render_volume_impl(
    field: &dyn Field,
    cam: &Camera,
    s: &VolumeSettings,
    keep: bool,
) -> Result<(ViewRasters, VolumeTrace)> {
    s.check()?;
    let (w, h) = (cam.width, cam.height);
    let mut out = ViewRasters::blank(w, h, s.background);
    let mut depth = vec![0.0; w * h];
    let mut normal = vec![[0.0; 3]; w * h];
    let mut trace = VolumeTrace::default();
    let sign = field.convention().sign();
    for y in 0..h {
        for x in 0..w {
            let px = y * w + x;
            let dir = cam.ray_dir(x, y);
            let Some((t0, t1)) = ray_box(&cam.eye, &dir) else {
                if keep {
                    trace.rays.push(None);
                }
                continue;
            };
            let delta = (t1 - t0) / s.samples as f64;
            let cos = dir.dot(&cam.forward);
            let mut transmit = 1.0;
            let mut rgb = [0.0; 3];
            let (mut dsum, mut nsum) = (0.0, [0.0; 3]);
            let mut samples = Vec::with_capacity(if keep { s.samples } else { 0 });
            for i in 0..s.samples {
                let t = t0 + (i as f64 + 0.5) * delta;
                let pv = cam.eye + t * dir;
                let p = [pv.x, pv.y, pv.z];
                let q = field.query(p)?;
                let s_in = sign * q.sdf;
                let sigma = laplace_density(s_in, s.beta);
                let alpha = 1.0 - (-sigma * delta).exp();
                let wgt = transmit * alpha;
                for k in 0..3 {
                    rgb[k] += wgt * q.color[k];
                }
                dsum += wgt * t * cos;
                if wgt > s.normal_weight_floor {
                    let n = outward_normal(field, p)?;
                    for k in 0..3 {
                        nsum[k] += wgt * n[k];
                    }
                }
                transmit *= 1.0 - alpha;
                if keep {
                    samples.push(RaySample {
                        p,
                        s_in,
                        color: q.color,
                        sigma,
                    });
                }
            }
            let opacity = 1.0 - transmit;
            for k in 0..3 {
                rgb[k] += transmit * s.background[k];
            }
            out.rgb[px] = rgb;
            out.mask[px] = opacity;
            if opacity > s.normal_weight_floor {
                depth[px] = dsum / opacity;
                let n = (nsum[0] * nsum[0] + nsum[1] * nsum[1] + nsum[2] * nsum[2]).sqrt();
                if n > 0.0 {
                    normal[px] = nsum.map(|v| v / n);
                }
            }
            if keep {
                trace.rays.push(Some((delta, samples)));
            }
        }
    }
    if !keep {
        trace.rays.clear();
    }
    out.depth = Some(depth);
    out.normal = Some(normal);
    Ok((out, trace))
}

/// Back-propagates gradients on the rendered rgb and mask into the field.
/// Depth and normals are treated as constants.
pub fn volume_backward(
    field: &TriplaneField,
    trace: &VolumeTrace,
    s: &VolumeSettings,
    g_rgb: &[[f64; 3]],
    g_mask: &[f64],
    grad: &mut FieldGrad,
) -> Result<()> {
    if trace.rays.len() != g_rgb.len() || g_rgb.len() != g_mask.len() {
        return Err(Error::shape("volume gradient does not match the traced view"));
    }
    let sign = field.convention().sign();
    for ((ray, gc), &gm) in trace.rays.iter().zip(g_rgb).zip(g_mask) {
        let Some((delta, samples)) = ray else { continue };
        if gc.iter().all(|&v| v == 0.0) && gm == 0.0 {
            continue;
        }
        let n = samples.len();
        // transmittance before each sample, and after the last
        let mut trans = Vec::with_capacity(n + 1);
        let mut t = 1.0;
        trans.push(t);
        for smp in samples {
            t *= (-smp.sigma * delta).exp();
            trans.push(t);
        }
        let g: Vec<f64> = samples
            .iter()
            .map(|smp| (0..3).map(|k| smp.color[k] * gc[k]).sum::<f64>() + gm)
            .collect();
        let bg_term = trans[n] * (0..3).map(|k| s.background[k] * gc[k]).sum::<f64>();
        // running Σ_{j>i} w_j g_j
        let mut tail = 0.0;
        for i in (0..n).rev() {
            let smp = &samples[i];
            let w_i = trans[i] - trans[i + 1];
            let d_sigma = delta * (trans[i + 1] * g[i] - tail - bg_term);
            tail += w_i * g[i];
            let d_sdf = d_sigma * laplace_density_grad(smp.s_in, s.beta) * sign;
            let d_color = gc.map(|v| w_i * v);
            if d_sdf == 0.0 && d_color.iter().all(|&v| v == 0.0) {
                continue;
            }
            field.backward_at(
                smp.p,
                &SampleGrad {
                    sdf: d_sdf,
                    color: d_color,
                    ..SampleGrad::default()
                },
                grad,
            )?;
        }
    }
    Ok(())
}

/// Closest ray-triangle intersection for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterHit {
    pub face: usize,
    pub t: f64,
    /// Barycentric weights of the face's three vertices.
    pub bary: [f64; 3],
}

#[derive(Debug, Clone, Default)]
pub struct RasterTrace {
    pub hits: Vec<Option<RasterHit>>,
}

fn vtx(mesh: &MeshResult, i: u32) -> Vec3 {
    let v = mesh.vertices()[i as usize];
    Vec3::new(v[0], v[1], v[2])
}

/// Möller–Trumbore, two-sided. Returns `(t, b1, b2)`.
fn intersect(o: &Vec3, d: &Vec3, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = d.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = o - v0;
    let b1 = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&b1) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let b2 = d.dot(&qvec) * inv;
    if b2 < 0.0 || b1 + b2 > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    (t > 0.0).then_some((t, b1, b2))
}

/// Rasterises a coloured mesh: barycentric vertex colours, hard mask,
/// depth along the optical axis and unit face normals from the winding.
pub fn rasterize(mesh: &MeshResult, cam: &Camera, background: [f64; 3]) -> Result<ViewRasters> {
    Ok(rasterize_traced(mesh, cam, background)?.0)
}

pub fn rasterize_traced(
    mesh: &MeshResult,
    cam: &Camera,
    background: [f64; 3],
) -> Result<(ViewRasters, RasterTrace)> {
    let (w, h) = (cam.width, cam.height);
    let mut hits: Vec<Option<RasterHit>> = vec![None; w * h];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let v = f.map(|i| vtx(mesh, i));
        let proj: Option<Vec<(f64, f64)>> = v.iter().map(|p| cam.project(p)).collect();
        let Some(proj) = proj else {
            return Err(Error::DegenerateCamera("mesh vertex behind the camera".into()));
        };
        let lo_x = proj.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let hi_x = proj.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil();
        let lo_y = proj.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let hi_y = proj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
        if hi_x < 0.0 || hi_y < 0.0 {
            continue;
        }
        let hi_x = (hi_x as usize).min(w);
        let hi_y = (hi_y as usize).min(h);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let d = cam.ray_dir(x, y);
                if let Some((t, b1, b2)) = intersect(&cam.eye, &d, &v[0], &v[1], &v[2]) {
                    let slot = &mut hits[y * w + x];
                    if slot.is_none_or(|hit| t < hit.t) {
                        *slot = Some(RasterHit {
                            face: fi,
                            t,
                            bary: [1.0 - b1 - b2, b1, b2],
                        });
                    }
                }
            }
        }
    }
    let mut out = ViewRasters::blank(w, h, background);
    let mut depth = vec![0.0; w * h];
    let mut normal = vec![[0.0; 3]; w * h];
    for (px, hit) in hits.iter().enumerate() {
        let Some(hit) = hit else { continue };
        let f = mesh.faces()[hit.face];
        let cols = f.map(|i| mesh.colors()[i as usize]);
        out.rgb[px] = std::array::from_fn(|k| (0..3).map(|j| hit.bary[j] * cols[j][k]).sum());
        out.mask[px] = 1.0;
        let d = cam.ray_dir(px % w, px / w);
        depth[px] = hit.t * d.dot(&cam.forward);
        let v = f.map(|i| vtx(mesh, i));
        let n = (v[1] - v[0]).cross(&(v[2] - v[0])).normalize();
        normal[px] = [n.x, n.y, n.z];
    }
    out.depth = Some(depth);
    out.normal = Some(normal);
    Ok((out, RasterTrace { hits }))
}

/// Gradients of rasterised rgb, depth and normals with respect to vertex
/// positions and vertex colours. Visibility and the mask pass none.
pub fn raster_backward(
    mesh: &MeshResult,
    cam: &Camera,
    trace: &RasterTrace,
    g_rgb: &[[f64; 3]],
    g_depth: &[f64],
    g_normal: &[[f64; 3]],
) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let n = trace.hits.len();
    if g_rgb.len() != n || g_depth.len() != n || g_normal.len() != n {
        return Err(Error::shape("raster gradient does not match the traced view"));
    }
    let mut g_pos = vec![[0.0; 3]; mesh.vertices().len()];
    let mut g_col = vec![[0.0; 3]; mesh.vertices().len()];
    for (px, hit) in trace.hits.iter().enumerate() {
        let Some(hit) = hit else { continue };
        let f = mesh.faces()[hit.face];
        let v = f.map(|i| vtx(mesh, i));
        let cols = f.map(|i| mesh.colors()[i as usize]);
        let d = cam.ray_dir(px % cam.width, px / cam.width);
        let gc = Vec3::from(g_rgb[px]);
        for j in 0..3 {
            let gj = &mut g_col[f[j] as usize];
            for k in 0..3 {
                gj[k] += hit.bary[j] * gc[k];
            }
        }
        let c0 = Vec3::from(cols[0]);
        let g_x = Vec3::new(
            g_depth[px] * d.dot(&cam.forward),
            (Vec3::from(cols[1]) - c0).dot(&gc),
            (Vec3::from(cols[2]) - c0).dot(&gc),
        );
        let e1 = v[1] - v[0];
        let e2 = v[2] - v[0];
        let mut g_v = [Vec3::zeros(); 3];
        if g_x != Vec3::zeros() {
            let m = Matrix3::from_columns(&[-d, e1, e2]);
            let Some(m_inv) = m.try_inverse() else { continue };
            let y = m_inv.transpose() * g_x;
            for j in 0..3 {
                g_v[j] -= hit.bary[j] * y;
            }
        }
        let gn_hat = Vec3::from(g_normal[px]);
        if gn_hat != Vec3::zeros() {
            let nrm = e1.cross(&e2);
            let len = nrm.norm();
            let n_hat = nrm / len;
            let g_n = (gn_hat - gn_hat.dot(&n_hat) * n_hat) / len;
            let g_e1 = e2.cross(&g_n);
            let g_e2 = g_n.cross(&e1);
            g_v[1] += g_e1;
            g_v[2] += g_e2;
            g_v[0] -= g_e1 + g_e2;
        }
        for j in 0..3 {
            let gp = &mut g_pos[f[j] as usize];
            for k in 0..3 {
                gp[k] += g_v[j][k];
            }
        }
    }
    Ok((g_pos, g_col))
}
