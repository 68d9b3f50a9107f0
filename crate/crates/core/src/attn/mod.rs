//! Fused style attention.
//!
//! Content-derived queries (the live query blended with a preserved query
//! captured from the content pass) attend over style-derived keys and values:
//!
//! ```text
//! out = softmax(λ · (β_c·Q_c + β_p·Q_c^p) · K_sᵀ / √d) · V_s
//! ```
//!
//! Everything here is pure and backend independent; hooking into a denoiser
//! lives in [`crate::diffusion`].

mod config;
mod layers;

pub use config::{AttnConfig, Beta, LambdaSchedule};
pub use layers::{
    backbone_attention_layers, glob_match, select_target_layers, STYLE_INJECTION_LAYERS,
};

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a captured attention feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Query,
    QueryPreserve,
    Key,
    Value,
}

/// A `[tokens × dim]` attention feature tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Array2<f64>,
    layer_id: String,
    timestep: usize,
    kind: FeatureKind,
}

impl FeatureTensor {
    pub fn new(
        data: Array2<f64>,
        layer_id: impl Into<String>,
        timestep: usize,
        kind: FeatureKind,
    ) -> Result<Self> {
        let layer_id = layer_id.into();
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::shape(format!(
                "feature tensor for `{layer_id}` is empty ({}×{})",
                data.nrows(),
                data.ncols()
            )));
        }
        ensure_finite(data.view(), &layer_id)?;
        Ok(Self {
            data,
            layer_id,
            timestep,
            kind,
        })
    }

    /// Untagged tensor, handy for tests and one-off computations.
    pub fn anonymous(data: Array2<f64>, kind: FeatureKind) -> Result<Self> {
        Self::new(data, "", 0, kind)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn tokens(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn retag(&self, data: Array2<f64>, kind: FeatureKind) -> FeatureTensor {
        FeatureTensor {
            data,
            layer_id: self.layer_id.clone(),
            timestep: self.timestep,
            kind,
        }
    }
}

pub(crate) fn ensure_finite(a: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(if what.is_empty() {
            "attention input".to_string()
        } else {
            what.to_string()
        }))
    }
}

/// `β_c·q_c + β_p·q_c_p`, elementwise.
pub fn blend_query_arrays(
    q_c: ArrayView2<'_, f64>,
    q_c_p: ArrayView2<'_, f64>,
    beta: Beta,
) -> Result<Array2<f64>> {
    if q_c.dim() != q_c_p.dim() {
        return Err(Error::shape(format!(
            "query {:?} and preserve query {:?} differ",
            q_c.dim(),
            q_c_p.dim()
        )));
    }
    let (bc, bp) = (beta.content(), beta.preserve());
    let mut out = Array2::zeros(q_c.dim());
    Zip::from(&mut out)
        .and(&q_c)
        .and(&q_c_p)
        .for_each(|o, &a, &b| *o = bc * a + bp * b);
    Ok(out)
}

pub fn blend_queries(
    q_c: &FeatureTensor,
    q_c_p: &FeatureTensor,
    beta: Beta,
) -> Result<FeatureTensor> {
    let data = blend_query_arrays(q_c.data.view(), q_c_p.data.view(), beta)?;
    Ok(q_c.retag(data, FeatureKind::Query))
}

/// Row-stochastic weights `softmax(scale · q·kᵀ)`, max-subtracted per row.
pub fn attention_weights(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    scale: f64,
) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() {
        return Err(Error::shape(format!(
            "query dim {} does not match key dim {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() == 0 {
        return Err(Error::shape("attention over zero keys"));
    }
    let mut w = q.dot(&k.t());
    w.mapv_inplace(|x| x * scale);
    for mut row in w.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    Ok(w)
}

/// Shared kernel behind both the native and the fused path. Using the same
/// code for both keeps fusion-off runs bit-identical to native ones.
pub fn attend(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    scale: f64,
) -> Result<Array2<f64>> {
    if k.nrows() != v.nrows() {
        return Err(Error::shape(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    let w = attention_weights(q, k, scale)?;
    Ok(w.dot(&v))
}

pub fn native_scale(dim: usize) -> f64 {
    1.0 / (dim as f64).sqrt()
}

/// `softmax(q·kᵀ/√d)·v`.
pub fn standard_attention(
    q: &FeatureTensor,
    k: &FeatureTensor,
    v: &FeatureTensor,
) -> Result<FeatureTensor> {
    let out = attend(q.data.view(), k.data.view(), v.data.view(), native_scale(q.dim()))?;
    Ok(q.retag(out, FeatureKind::Value))
}

/// Array-level fused attention used by the denoiser hooks.
pub fn fuse_attention_arrays(
    q_c: ArrayView2<'_, f64>,
    q_c_p: ArrayView2<'_, f64>,
    k_s: ArrayView2<'_, f64>,
    v_s: ArrayView2<'_, f64>,
    cfg: &AttnConfig,
    timestep: usize,
) -> Result<Array2<f64>> {
    if !cfg.is_active(timestep) {
        return Err(Error::invalid(
            "timestep",
            format!(
                "{timestep} is outside the active range {:?}; fusion must not be invoked",
                cfg.active_timesteps
            ),
        ));
    }
    for (a, name) in [(q_c, "q_c"), (q_c_p, "q_c_p"), (k_s, "k_s"), (v_s, "v_s")] {
        ensure_finite(a, name)?;
    }
    let q = blend_query_arrays(q_c, q_c_p, cfg.beta)?;
    let scale = cfg.lambda.at(timestep) / (q.ncols() as f64).sqrt();
    attend(q.view(), k_s, v_s, scale)
}

/// Fused attention for one diffusion step. Output is `[tokens(q_c) × dim(v_s)]`.
pub fn fuse_attention(
    q_c: &FeatureTensor,
    q_c_p: &FeatureTensor,
    k_s: &FeatureTensor,
    v_s: &FeatureTensor,
    cfg: &AttnConfig,
    timestep: usize,
) -> Result<FeatureTensor> {
    let out = fuse_attention_arrays(
        q_c.data.view(),
        q_c_p.data.view(),
        k_s.data.view(),
        v_s.data.view(),
        cfg,
        timestep,
    )?;
    Ok(q_c.retag(out, FeatureKind::Value))
}

/// Weights the fused operator would apply, for inspection and entropy probes.
pub fn fused_weights(
    q_c: ArrayView2<'_, f64>,
    q_c_p: ArrayView2<'_, f64>,
    k_s: ArrayView2<'_, f64>,
    beta: Beta,
    lambda: f64,
) -> Result<Array2<f64>> {
    let q = blend_query_arrays(q_c, q_c_p, beta)?;
    attention_weights(q.view(), k_s, lambda / (q.ncols() as f64).sqrt())
}

/// Shannon entropy (nats) of each row of a row-stochastic matrix.
pub fn row_entropy(weights: ArrayView2<'_, f64>) -> Vec<f64> {
    weights
        .axis_iter(Axis(0))
        .map(|row| {
            -row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ft(a: Array2<f64>) -> FeatureTensor {
        FeatureTensor::anonymous(a, FeatureKind::Query).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn feature_tensor_rejects_empty_and_nan() {
        assert!(FeatureTensor::anonymous(Array2::zeros((0, 3)), FeatureKind::Key).is_err());
        assert!(FeatureTensor::anonymous(array![[1.0, f64::NAN]], FeatureKind::Key).is_err());
    }

    #[test]
    fn blend_degenerate_endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ft(random(&mut rng, 4, 5));
        let b = ft(random(&mut rng, 4, 5));
        let out = blend_queries(&a, &b, Beta::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(out.data(), a.data());
        let out = blend_queries(&a, &b, Beta::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn blend_midpoint() {
        let out = blend_queries(
            &ft(array![[2.0, 0.0]]),
            &ft(array![[0.0, 2.0]]),
            Beta::new(0.5, 0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &array![[1.0, 1.0]]);
    }

    #[test]
    fn blend_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 8, 16);
        let b = random(&mut rng, 8, 16);
        let out = blend_query_arrays(a.view(), b.view(), Beta::new(0.4, 0.6).unwrap()).unwrap();
        for i in 0..8 {
            for j in 0..16 {
                let expect = 0.4 * a[[i, j]] + 0.6 * b[[i, j]];
                assert!((out[[i, j]] - expect).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn blend_shape_mismatch() {
        let r = blend_queries(
            &ft(Array2::ones((2, 3))),
            &ft(Array2::ones((3, 3))),
            Beta::default(),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn single_key_returns_value() {
        let q = ft(array![[3.0, -7.0]]);
        let k = ft(array![[100.0, 2.0]]);
        let v = ft(array![[0.25, -4.0, 9.0]]);
        let out = standard_attention(&q, &k, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn identity_inputs_give_convex_rows() {
        let i = array![[1.0, 0.0], [0.0, 1.0]];
        let w = attention_weights(i.view(), i.view(), native_scale(2)).unwrap();
        for row in w.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let out = standard_attention(&ft(i.clone()), &ft(i.clone()), &ft(i.clone())).unwrap();
        for row in out.data().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inner_dimension_mismatch() {
        let r = standard_attention(
            &ft(Array2::ones((2, 3))),
            &ft(Array2::ones((2, 4))),
            &ft(Array2::ones((2, 4))),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn large_logits_stay_finite() {
        let q = array![[1000.0, 0.0]];
        let k = array![[1000.0, 0.0], [-1000.0, 0.0]];
        let w = attention_weights(q.view(), k.view(), 1.0).unwrap();
        assert_eq!(w[[0, 0]], 1.0);
        assert_eq!(w[[0, 1]], 0.0);
    }

    #[test]
    fn fusion_off_matches_standard_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = ft(random(&mut rng, 5, 4));
        let qp = ft(random(&mut rng, 5, 4));
        let k = ft(random(&mut rng, 6, 4));
        let v = ft(random(&mut rng, 6, 3));
        let cfg = AttnConfig::builder()
            .beta(Beta::new(1.0, 0.0).unwrap())
            .lambda(1.0)
            .build()
            .unwrap();
        let fused = fuse_attention(&q, &qp, &k, &v, &cfg, 10).unwrap();
        let native = standard_attention(&q, &k, &v).unwrap();
        assert_eq!(fused.data(), native.data());
        assert_eq!(fused.data().dim(), (5, 3));
    }

    #[test]
    fn fuse_rejects_inactive_timestep_and_nan() {
        let cfg = AttnConfig::builder().active_timesteps(10..=20).build().unwrap();
        let a = array![[1.0, 0.0]];
        let r = fuse_attention_arrays(a.view(), a.view(), a.view(), a.view(), &cfg, 5);
        assert!(r.is_err());
        let bad = array![[f64::INFINITY, 0.0]];
        let r = fuse_attention_arrays(a.view(), a.view(), bad.view(), a.view(), &cfg, 15);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn entropy_of_uniform_row() {
        let w = Array2::from_elem((2, 4), 0.25);
        for h in row_entropy(w.view()) {
            assert!((h - 4f64.ln()).abs() < 1e-12);
        }
    }
}
