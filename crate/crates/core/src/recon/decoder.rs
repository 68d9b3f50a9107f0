use ndarray::{Array2, ArrayView2};

use super::triplane::Triplane;
use crate::attn::{attend, native_scale};
use crate::error::{Error, Result};
use crate::nn::{gaussian_matrix, rng};

/// One cross-attention layer from `3R²` learned plane queries to the view
/// tokens, followed by a linear projection to plane channels:
///
/// ```text
/// h      = Q + softmax((Q Wq)(T Wk)ᵀ/√D)(T Wv) Wo
/// planes = h Wout
/// ```
///
/// Query row `(plane·R + i)·R + j` becomes node `(i, j)` of `plane`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriplaneDecoder {
    pub res: usize,
    pub channels: usize,
    pub dim: usize,
    pub queries: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub w_out: Array2<f64>,
}

impl TriplaneDecoder {
    pub fn random(res: usize, channels: usize, dim: usize, seed: u64) -> Result<Self> {
        if res < 2 || channels == 0 || dim == 0 {
            return Err(Error::invalid(
                "decoder",
                format!("res {res}, channels {channels}, dim {dim}"),
            ));
        }
        let mut r = rng(seed);
        let sd = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            res,
            channels,
            dim,
            queries: gaussian_matrix(&mut r, 3 * res * res, dim, 1.0),
            w_q: gaussian_matrix(&mut r, dim, dim, sd),
            w_k: gaussian_matrix(&mut r, dim, dim, sd),
            w_v: gaussian_matrix(&mut r, dim, dim, sd),
            w_o: gaussian_matrix(&mut r, dim, dim, sd),
            w_out: gaussian_matrix(&mut r, dim, channels, 0.1 * sd),
        })
    }

    pub fn decode(&self, tokens: ArrayView2<'_, f64>) -> Result<Triplane> {
        if tokens.ncols() != self.dim {
            return Err(Error::shape(format!(
                "tokens have width {}, decoder expects {}",
                tokens.ncols(),
                self.dim
            )));
        }
        if tokens.nrows() == 0 {
            return Err(Error::shape("no tokens to decode"));
        }
        let q = self.queries.dot(&self.w_q);
        let k = tokens.dot(&self.w_k);
        let v = tokens.dot(&self.w_v);
        let a = attend(q.view(), k.view(), v.view(), native_scale(self.dim))?;
        let h = &self.queries + &a.dot(&self.w_o);
        let planes = h.dot(&self.w_out);
        if planes.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("decoded triplane".into()));
        }
        Triplane::new(self.res, self.channels, planes.into_iter().collect())
    }
}
