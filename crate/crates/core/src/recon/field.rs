use serde::{Deserialize, Serialize};

use super::triplane::{Footprint, Triplane};
use crate::error::{Error, Result};
use crate::mesh::{cell_size, SignConvention};
use crate::nn::{gaussian_vector, rng, sigmoid};

/// Radius of the sphere the freshly initialised SDF head describes.
pub const INIT_SPHERE_RADIUS: f64 = 0.45;

/// Everything the field predicts at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    /// Signed distance in the field's sign convention.
    pub sdf: f64,
    pub color: [f64; 3],
    /// Bounded by half an extraction-grid cell per axis.
    pub deformation: [f64; 3],
    /// Raw FlexiCubes weight; 0 is neutral.
    pub weight: f64,
}

/// A queryable 3-D field over `[-1, 1]³`.
pub trait Field {
    fn convention(&self) -> SignConvention;
    fn query(&self, p: [f64; 3]) -> Result<FieldSample>;

    /// SDF re-expressed so that positive means inside.
    fn inside(&self, p: [f64; 3]) -> Result<f64> {
        Ok(self.convention().inside_positive(self.query(p)?.sdf))
    }
}

/// Exact sphere SDF with a constant colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticSphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub color: [f64; 3],
    pub convention: SignConvention,
}

impl AnalyticSphere {
    pub fn new(radius: f64, convention: SignConvention) -> Self {
        Self {
            center: [0.0; 3],
            radius,
            color: [0.8, 0.3, 0.2],
            convention,
        }
    }
}

impl Field for AnalyticSphere {
    fn convention(&self) -> SignConvention {
        self.convention
    }

    fn query(&self, p: [f64; 3]) -> Result<FieldSample> {
        let d = (0..3).map(|k| (p[k] - self.center[k]).powi(2)).sum::<f64>().sqrt();
        Ok(FieldSample {
            sdf: self.convention.sign() * (self.radius - d),
            color: self.color,
            deformation: [0.0; 3],
            weight: 0.0,
        })
    }
}

/// Shapes of the head parameters, enough to rebuild a [`FieldHeads`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadsLayout {
    pub feature_dim: usize,
    pub hidden: usize,
    /// Extraction grid resolution the deformation bound refers to.
    pub grid_res: usize,
    pub convention: SignConvention,
}

/// Offsets of each parameter block inside [`FieldHeads::params`].
#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w_sdf: usize,
    w_norm: usize,
    b_sdf: usize,
    w_rgb: usize,
    b_rgb: usize,
    w_def: usize,
    b_def: usize,
    w_wt: usize,
    b_wt: usize,
    len: usize,
}

impl HeadsLayout {
    fn offsets(&self) -> Offsets {
        let (f, h) = (self.feature_dim, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * f;
        let w_sdf = b1 + h;
        let w_norm = w_sdf + h;
        let b_sdf = w_norm + 1;
        let w_rgb = b_sdf + 1;
        let b_rgb = w_rgb + 3 * h;
        let w_def = b_rgb + 3;
        let b_def = w_def + 3 * h;
        let w_wt = b_def + 3;
        let b_wt = w_wt + h;
        Offsets {
            w1,
            b1,
            w_sdf,
            w_norm,
            b_sdf,
            w_rgb,
            b_rgb,
            w_def,
            b_def,
            w_wt,
            b_wt,
            len: b_wt + 1,
        }
    }

    pub fn num_params(&self) -> usize {
        self.offsets().len
    }
}

/// Shared `tanh` trunk with four linear heads:
///
/// ```text
/// h      = tanh(W1 f + b1)
/// sdf    = w_sdf·h + w_norm‖p‖ + b_sdf
/// color  = sigmoid(W_rgb h + b_rgb)
/// deform = ½·cell·tanh(W_def h + b_def)
/// weight = w_wt·h + b_wt
/// ```
///
/// The `‖p‖` skip term lets the SDF head start as an exact sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldHeads {
    pub layout: HeadsLayout,
    pub params: Vec<f64>,
}

/// Intermediate values of one head evaluation.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub features: Vec<f64>,
    pub hidden: Vec<f64>,
    pub norm: f64,
    rgb_act: [f64; 3],
    def_act: [f64; 3],
}

/// Upstream gradient on one [`FieldSample`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleGrad {
    pub sdf: f64,
    pub color: [f64; 3],
    pub deformation: [f64; 3],
    pub weight: f64,
}

impl FieldHeads {
    /// The zero level set starts as a sphere of radius
    /// [`INIT_SPHERE_RADIUS`]; deformation and weight heads start at zero.
    pub fn init(layout: HeadsLayout, seed: u64) -> Result<Self> {
        if layout.feature_dim == 0 || layout.hidden == 0 || layout.grid_res < 2 {
            return Err(Error::invalid(
                "field heads",
                format!(
                    "feature_dim {}, hidden {}, grid_res {}",
                    layout.feature_dim, layout.hidden, layout.grid_res
                ),
            ));
        }
        let o = layout.offsets();
        let (f, h) = (layout.feature_dim, layout.hidden);
        let mut r = rng(seed);
        let mut params = vec![0.0; o.len];
        let fill = |params: &mut [f64], at: usize, v: ndarray::Array1<f64>| {
            params[at..at + v.len()].copy_from_slice(v.as_slice().expect("contiguous"));
        };
        fill(&mut params, o.w1, gaussian_vector(&mut r, h * f, 1.0 / (f as f64).sqrt()));
        fill(&mut params, o.w_sdf, gaussian_vector(&mut r, h, 1e-4));
        fill(&mut params, o.w_rgb, gaussian_vector(&mut r, 3 * h, 0.3 / (h as f64).sqrt()));
        let sign = layout.convention.sign();
        params[o.w_norm] = -sign;
        params[o.b_sdf] = INIT_SPHERE_RADIUS * sign;
        Ok(Self { layout, params })
    }

    pub fn from_params(layout: HeadsLayout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.num_params() {
            return Err(Error::shape(format!(
                "{} head parameters, layout needs {}",
                params.len(),
                layout.num_params()
            )));
        }
        Ok(Self { layout, params })
    }

    /// Constant term of the SDF head.
    pub fn sdf_bias_mut(&mut self) -> &mut f64 {
        let at = self.layout.offsets().b_sdf;
        &mut self.params[at]
    }

    fn half_cell(&self) -> f64 {
        0.5 * cell_size(self.layout.grid_res)
    }

    pub fn forward(&self, p: [f64; 3], features: Vec<f64>) -> Result<(FieldSample, HeadCache)> {
        let (f, h) = (self.layout.feature_dim, self.layout.hidden);
        if features.len() != f {
            return Err(Error::shape(format!("{} features, heads expect {f}", features.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("triplane features".into()));
        }
        let o = self.layout.offsets();
        let w = &self.params;
        let hidden: Vec<f64> = (0..h)
            .map(|r| {
                let row = &w[o.w1 + r * f..o.w1 + (r + 1) * f];
                let z: f64 = row.iter().zip(&features).map(|(a, b)| a * b).sum();
                (z + w[o.b1 + r]).tanh()
            })
            .collect();
        let dot = |at: usize| -> f64 { w[at..at + h].iter().zip(&hidden).map(|(a, b)| a * b).sum() };
        let norm = p.iter().map(|c| c * c).sum::<f64>().sqrt();
        let sdf = dot(o.w_sdf) + w[o.w_norm] * norm + w[o.b_sdf];
        let rgb_act: [f64; 3] = std::array::from_fn(|k| sigmoid(dot(o.w_rgb + k * h) + w[o.b_rgb + k]));
        let def_act: [f64; 3] = std::array::from_fn(|k| (dot(o.w_def + k * h) + w[o.b_def + k]).tanh());
        let weight = dot(o.w_wt) + w[o.b_wt];
        let half = self.half_cell();
        let sample = FieldSample {
            sdf,
            color: rgb_act,
            deformation: def_act.map(|t| half * t),
            weight,
        };
        Ok((
            sample,
            HeadCache {
                features,
                hidden,
                norm,
                rgb_act,
                def_act,
            },
        ))
    }

    /// Accumulates parameter gradients into `g_params` and returns `∂L/∂features`.
    pub fn backward(&self, cache: &HeadCache, g: &SampleGrad, g_params: &mut [f64]) -> Vec<f64> {
        let (f, h) = (self.layout.feature_dim, self.layout.hidden);
        let o = self.layout.offsets();
        let w = &self.params;
        let half = self.half_cell();
        let mut g_h = vec![0.0; h];
        let mut head = |at: usize, b_at: usize, gz: f64, g_params: &mut [f64]| {
            if gz == 0.0 {
                return;
            }
            for r in 0..h {
                g_params[at + r] += gz * cache.hidden[r];
                g_h[r] += gz * w[at + r];
            }
            g_params[b_at] += gz;
        };
        head(o.w_sdf, o.b_sdf, g.sdf, g_params);
        for k in 0..3 {
            let s = cache.rgb_act[k];
            head(o.w_rgb + k * h, o.b_rgb + k, g.color[k] * s * (1.0 - s), g_params);
            let t = cache.def_act[k];
            head(o.w_def + k * h, o.b_def + k, g.deformation[k] * half * (1.0 - t * t), g_params);
        }
        head(o.w_wt, o.b_wt, g.weight, g_params);
        g_params[o.w_norm] += g.sdf * cache.norm;

        let mut g_f = vec![0.0; f];
        for r in 0..h {
            let gz = g_h[r] * (1.0 - cache.hidden[r] * cache.hidden[r]);
            if gz == 0.0 {
                continue;
            }
            g_params[o.b1 + r] += gz;
            let row = o.w1 + r * f;
            for c in 0..f {
                g_params[row + c] += gz * cache.features[c];
                g_f[c] += gz * w[row + c];
            }
        }
        g_f
    }
}

/// Triplane features decoded by [`FieldHeads`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriplaneField {
    pub triplane: Triplane,
    pub heads: FieldHeads,
}

/// Gradient buffers shaped like a [`TriplaneField`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub triplane: Vec<f64>,
    pub heads: Vec<f64>,
}

impl FieldGrad {
    pub fn zeros(field: &TriplaneField) -> Self {
        Self {
            triplane: vec![0.0; field.triplane.data.len()],
            heads: vec![0.0; field.heads.params.len()],
        }
    }

    pub fn add(&mut self, other: &FieldGrad) {
        for (a, b) in self.triplane.iter_mut().zip(&other.triplane) {
            *a += b;
        }
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            *a += b;
        }
    }
}

impl TriplaneField {
    pub fn new(triplane: Triplane, heads: FieldHeads) -> Result<Self> {
        if triplane.feature_dim() != heads.layout.feature_dim {
            return Err(Error::shape(format!(
                "triplane yields {} features, heads expect {}",
                triplane.feature_dim(),
                heads.layout.feature_dim
            )));
        }
        Ok(Self { triplane, heads })
    }

    pub fn num_params(&self) -> usize {
        self.triplane.data.len() + self.heads.params.len()
    }

    /// Triplane values followed by head parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.triplane.data.clone();
        v.extend_from_slice(&self.heads.params);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "{} parameters for a field with {}",
                flat.len(),
                self.num_params()
            )));
        }
        let n = self.triplane.data.len();
        self.triplane.data.copy_from_slice(&flat[..n]);
        self.heads.params.copy_from_slice(&flat[n..]);
        Ok(())
    }

    pub fn query_traced(&self, p: [f64; 3]) -> Result<(FieldSample, Footprint, HeadCache)> {
        let fp = self.triplane.footprint(p)?;
        let mut feat = vec![0.0; self.triplane.feature_dim()];
        self.triplane.gather(&fp, &mut feat);
        let (s, cache) = self.heads.forward(p, feat)?;
        Ok((s, fp, cache))
    }

    /// Re-evaluates the field at `p` and back-propagates `g` into `grad`.
    pub fn backward_at(&self, p: [f64; 3], g: &SampleGrad, grad: &mut FieldGrad) -> Result<()> {
        let (_, fp, cache) = self.query_traced(p)?;
        let g_f = self.heads.backward(&cache, g, &mut grad.heads);
        self.triplane.scatter(&fp, &g_f, &mut grad.triplane);
        Ok(())
    }
}

impl Field for TriplaneField {
    fn convention(&self) -> SignConvention {
        self.heads.layout.convention
    }

    fn query(&self, p: [f64; 3]) -> Result<FieldSample> {
        Ok(self.query_traced(p)?.0)
    }
}
