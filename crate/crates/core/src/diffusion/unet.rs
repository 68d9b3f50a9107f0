//! A compact attention-stack noise predictor with named, hookable attention
//! layers. It stands in for the multi-view U-Net: same layer naming, same
//! self-/cross-attention split, far fewer parameters.

use ndarray::{Array1, Array2, Axis};

use super::latent::Latent;
use crate::attn::{attend, native_scale};
use crate::error::{Error, Result};
use crate::nn::{gaussian_matrix, layer_norm_rows, sinusoidal_embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnKind {
    /// `attn1`: keys and values from the latent tokens.
    SelfAttention,
    /// `attn2`: keys and values from the conditioning-image tokens.
    CrossAttention,
}

impl AttnKind {
    pub fn from_layer_name(name: &str) -> Self {
        if name.ends_with("attn2") {
            AttnKind::CrossAttention
        } else {
            AttnKind::SelfAttention
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttnLayer {
    pub name: String,
    pub kind: AttnKind,
    pub to_q: Array2<f64>,
    pub to_k: Array2<f64>,
    pub to_v: Array2<f64>,
    pub to_out: Array2<f64>,
}

/// Identifies one attention invocation inside a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AttnCall<'a> {
    pub layer: &'a str,
    pub layer_index: usize,
    pub timestep: usize,
}

/// Hook point for every attention layer. Implementations decide what the
/// layer outputs given its projected query, key and value.
pub trait AttnProcessor {
    fn process(
        &mut self,
        call: &AttnCall<'_>,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
    ) -> Result<Array2<f64>>;
}

/// Unmodified attention.
#[derive(Debug, Default, Clone, Copy)]
pub struct NativeAttention;

impl AttnProcessor for NativeAttention {
    fn process(
        &mut self,
        _call: &AttnCall<'_>,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        attend(q.view(), k.view(), v.view(), native_scale(q.ncols()))
    }
}

#[derive(Debug, Clone)]
pub struct MiniUNet {
    pub channels: usize,
    pub hidden: usize,
    pub w_in: Array2<f64>,
    pub w_time: Array2<f64>,
    pub w_pool: Array2<f64>,
    pub w_ctx: Array2<f64>,
    pub w_out: Array2<f64>,
    pub layers: Vec<AttnLayer>,
}

impl MiniUNet {
    pub fn random(
        layer_names: &[String],
        channels: usize,
        hidden: usize,
        seed: u64,
        zero_prediction: bool,
    ) -> Self {
        let mut rng = crate::nn::rng(seed);
        let s_in = 1.0 / (channels as f64).sqrt();
        let s_h = 1.0 / (hidden as f64).sqrt();
        let w_in = gaussian_matrix(&mut rng, channels, hidden, s_in);
        let w_time = gaussian_matrix(&mut rng, hidden, hidden, 0.5 * s_h);
        let w_pool = gaussian_matrix(&mut rng, channels, hidden, 0.5 * s_in);
        let w_ctx = gaussian_matrix(&mut rng, channels, hidden, s_in);
        let layers = layer_names
            .iter()
            .map(|name| AttnLayer {
                name: name.clone(),
                kind: AttnKind::from_layer_name(name),
                to_q: gaussian_matrix(&mut rng, hidden, hidden, s_h),
                to_k: gaussian_matrix(&mut rng, hidden, hidden, s_h),
                to_v: gaussian_matrix(&mut rng, hidden, hidden, s_h),
                to_out: gaussian_matrix(&mut rng, hidden, hidden, 0.5 * s_h),
            })
            .collect();
        let w_out = if zero_prediction {
            Array2::zeros((hidden, channels))
        } else {
            gaussian_matrix(&mut rng, hidden, channels, 0.3 * s_h)
        };
        Self {
            channels,
            hidden,
            w_in,
            w_time,
            w_pool,
            w_ctx,
            w_out,
            layers,
        }
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    fn time_embedding(&self, t: usize) -> Array1<f64> {
        sinusoidal_embedding(t as f64, self.hidden).dot(&self.w_time)
    }

    /// Predicts the noise in `x` at `timestep`, conditioned on `cond`.
    pub fn forward(
        &self,
        x: &Latent,
        timestep: usize,
        cond: &Latent,
        proc: &mut dyn AttnProcessor,
    ) -> Result<Array2<f64>> {
        if x.channels() != self.channels || cond.channels() != self.channels {
            return Err(Error::shape(format!(
                "denoiser expects {} latent channels, got {} (x) and {} (cond)",
                self.channels,
                x.channels(),
                cond.channels()
            )));
        }
        let pooled = cond
            .data
            .mean_axis(Axis(0))
            .expect("conditioning latent has tokens")
            .dot(&self.w_pool);
        let bias = self.time_embedding(timestep) + pooled;
        let mut h = x.data.dot(&self.w_in);
        for mut row in h.axis_iter_mut(Axis(0)) {
            row += &bias;
        }
        let ctx = cond.data.dot(&self.w_ctx);
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer_norm_rows(h.view());
            let q = n.dot(&layer.to_q);
            let src = match layer.kind {
                AttnKind::SelfAttention => &n,
                AttnKind::CrossAttention => &ctx,
            };
            let k = src.dot(&layer.to_k);
            let v = src.dot(&layer.to_v);
            let call = AttnCall {
                layer: &layer.name,
                layer_index: i,
                timestep,
            };
            let a = proc.process(&call, &q, &k, &v)?;
            if a.dim() != q.dim() {
                return Err(Error::shape(format!(
                    "processor returned {:?} for layer `{}`, expected {:?}",
                    a.dim(),
                    layer.name,
                    q.dim()
                )));
            }
            h = h + a.dot(&layer.to_out);
        }
        Ok(layer_norm_rows(h.view()).dot(&self.w_out))
    }
}
