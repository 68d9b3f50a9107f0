use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::batch::{PosedViewBatch, ViewRasters};
use super::camera::Camera;
use crate::error::{Error, Result};
use crate::nn::{add_row, gaussian_matrix, gelu, layer_norm_rows, rng, sinusoidal_embedding};

pub const POSE_FEATURES: usize = 16;

/// Patch-embedding encoder with an AdaLN pose modulation and one residual
/// MLP. Each view is encoded independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEncoder {
    pub patch: usize,
    pub dim: usize,
    /// `3p² × D`, patch pixels ordered row, column, channel.
    pub w_embed: Array2<f64>,
    pub b_embed: Array1<f64>,
    /// `16 × 2D`: pose features to `[scale | shift]`.
    pub w_mod: Array2<f64>,
    pub b_mod: Array1<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl ViewEncoder {
    pub fn random(patch: usize, dim: usize, seed: u64) -> Result<Self> {
        if patch == 0 || dim < 2 || dim % 2 != 0 {
            return Err(Error::invalid(
                "encoder",
                format!("patch {patch} and even dim ≥ 2 required, got dim {dim}"),
            ));
        }
        let mut r = rng(seed);
        let pin = 3 * patch * patch;
        Ok(Self {
            patch,
            dim,
            w_embed: gaussian_matrix(&mut r, pin, dim, 1.0 / (pin as f64).sqrt()),
            b_embed: Array1::zeros(dim),
            w_mod: gaussian_matrix(&mut r, POSE_FEATURES, 2 * dim, 0.1),
            b_mod: Array1::zeros(2 * dim),
            w1: gaussian_matrix(&mut r, dim, dim, 1.0 / (dim as f64).sqrt()),
            w2: gaussian_matrix(&mut r, dim, dim, 0.5 / (dim as f64).sqrt()),
        })
    }

    pub fn tokens_per_view(&self, width: usize, height: usize) -> Result<usize> {
        if width % self.patch != 0 || height % self.patch != 0 {
            return Err(Error::invalid(
                "resolution",
                format!("{width}×{height} is not divisible by patch size {}", self.patch),
            ));
        }
        Ok((width / self.patch) * (height / self.patch))
    }

    fn patchify(&self, view: &ViewRasters) -> Result<Array2<f64>> {
        let n = self.tokens_per_view(view.width, view.height)?;
        let p = self.patch;
        let cols = view.width / p;
        let mut out = Array2::zeros((n, 3 * p * p));
        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (py, px) = (t / cols, t % cols);
            let mut c = 0;
            for dy in 0..p {
                for dx in 0..p {
                    let pix = view.rgb[(py * p + dy) * view.width + px * p + dx];
                    for v in pix {
                        row[c] = v;
                        c += 1;
                    }
                }
            }
        }
        Ok(out)
    }

    fn positions(&self, view: &ViewRasters) -> Array2<f64> {
        let cols = view.width / self.patch;
        let n = cols * (view.height / self.patch);
        let half = self.dim / 2;
        let mut out = Array2::zeros((n, self.dim));
        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.slice_mut(s![..half])
                .assign(&sinusoidal_embedding((t / cols) as f64, half));
            row.slice_mut(s![half..])
                .assign(&sinusoidal_embedding((t % cols) as f64, half));
        }
        out
    }

    /// `(H/p)(W/p) × D` tokens. Without a camera the normalisation is left
    /// unmodulated, which is what a zero modulation produces.
    pub fn encode_view(&self, view: &ViewRasters, cam: Option<&Camera>) -> Result<Array2<f64>> {
        let x = add_row(self.patchify(view)?.dot(&self.w_embed), &self.b_embed) + self.positions(view);
        let mut y = layer_norm_rows(x.view());
        if let Some(cam) = cam {
            let pose = Array1::from(cam.pose_features().to_vec());
            let m = pose.dot(&self.w_mod) + &self.b_mod;
            let (scale, shift) = (m.slice(s![..self.dim]), m.slice(s![self.dim..]));
            for mut row in y.axis_iter_mut(Axis(0)) {
                for d in 0..self.dim {
                    row[d] = row[d] * (1.0 + scale[d]) + shift[d];
                }
            }
        }
        let hidden = y.dot(&self.w1).mapv(gelu);
        Ok(&y + &hidden.dot(&self.w2))
    }

    /// Per-view token blocks stacked in view order.
    pub fn encode_views(&self, batch: &PosedViewBatch) -> Result<Array2<f64>> {
        let blocks = batch
            .views
            .iter()
            .zip(&batch.cameras)
            .map(|(v, c)| self.encode_view(v, Some(c)))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<ArrayView2<'_, f64>> = blocks.iter().map(|b| b.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
    }
}
