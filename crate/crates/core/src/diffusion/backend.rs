//! Denoiser backends: a seeded toy network for tests and a weight-file
//! loader for externally trained networks of the same architecture.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use safetensors::{tensor::TensorView, Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::latent::{LatentCodec, LATENT_CHANNELS};
use super::schedule::{DdimSchedule, SchedulerParams};
use super::unet::{AttnKind, AttnLayer, MiniUNet};
use crate::attn::{backbone_attention_layers, STYLE_INJECTION_LAYERS};
use crate::error::{Error, Result};

pub const CACHE_ENV: &str = "STYLE3D_CACHE";
pub const CACHED_WEIGHTS_FILE: &str = "style3d-mv.safetensors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Toy,
    Pretrained,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackendKind::Toy),
            "pretrained" => Ok(BackendKind::Pretrained),
            other => Err(Error::invalid(
                "backend",
                format!("`{other}` is not one of toy, pretrained"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBackendConfig {
    /// Side of one square view in pixels.
    pub view_size: u32,
    pub latent_factor: usize,
    pub hidden: usize,
    pub weight_seed: u64,
    /// Output projection set to zero so the predicted noise is always 0.
    pub zero_prediction: bool,
}

impl Default for ToyBackendConfig {
    fn default() -> Self {
        Self {
            view_size: 32,
            latent_factor: 8,
            hidden: 16,
            weight_seed: 0,
            zero_prediction: false,
        }
    }
}

/// A frozen denoiser plus everything needed to drive it.
#[derive(Debug, Clone)]
pub struct BackendHandle {
    pub kind: BackendKind,
    pub source_id: String,
    pub scheduler: SchedulerParams,
    pub codec: LatentCodec,
    pub view_size: u32,
    pub unet: MiniUNet,
}

impl BackendHandle {
    pub fn toy(cfg: &ToyBackendConfig) -> Result<Self> {
        if cfg.latent_factor == 0 || cfg.view_size as usize % cfg.latent_factor != 0 {
            return Err(Error::invalid(
                "view_size",
                format!(
                    "{} is not a multiple of the latent factor {}",
                    cfg.view_size, cfg.latent_factor
                ),
            ));
        }
        if cfg.hidden == 0 {
            return Err(Error::invalid("hidden", "must be positive"));
        }
        let unet = MiniUNet::random(
            &backbone_attention_layers(),
            LATENT_CHANNELS,
            cfg.hidden,
            cfg.weight_seed,
            cfg.zero_prediction,
        );
        Ok(Self {
            kind: BackendKind::Toy,
            source_id: format!(
                "toy(seed={},hidden={},view={},zero={})",
                cfg.weight_seed, cfg.hidden, cfg.view_size, cfg.zero_prediction
            ),
            scheduler: SchedulerParams::default(),
            codec: LatentCodec {
                factor: cfg.latent_factor,
            },
            view_size: cfg.view_size,
            unet,
        })
    }

    /// Resolves the weight file: explicit path first, then the cache directory.
    pub fn resolve_weights(explicit: Option<&Path>) -> Result<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Ok(PathBuf::from(dir).join(CACHED_WEIGHTS_FILE)),
            _ => Err(Error::Backend {
                source_id: "<unset>".into(),
                reason: format!("no weight file given and ${CACHE_ENV} is not set"),
            }),
        }
    }

    /// Loads a pretrained denoiser. Every style-injection layer must be
    /// present in the file's layer registry.
    pub fn load_pretrained(path: &Path) -> Result<Self> {
        let source_id = path.display().to_string();
        let fail = |reason: String| Error::Backend {
            source_id: source_id.clone(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| fail(format!("cannot read: {e}")))?;
        let (_, header) =
            SafeTensors::read_metadata(&bytes).map_err(|e| fail(format!("bad header: {e}")))?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| fail("no metadata block".into()))?;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| fail(format!("metadata lacks `{k}`")))
        };
        let parse_num = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| fail(format!("metadata `{k}` is not an integer")))
        };
        let layers: Vec<String> = serde_json::from_str(&field("layers")?)
            .map_err(|e| fail(format!("metadata `layers`: {e}")))?;
        let missing: Vec<&str> = STYLE_INJECTION_LAYERS
            .iter()
            .copied()
            .filter(|n| !layers.iter().any(|l| l == n))
            .collect();
        if !missing.is_empty() {
            return Err(fail(format!(
                "layer registry lacks injection layers: {}",
                missing.join(", ")
            )));
        }
        let channels = parse_num("channels")?;
        let hidden = parse_num("hidden")?;
        let factor = parse_num("latent_factor")?;
        let view_size = parse_num("view_size")? as u32;
        if channels != LATENT_CHANNELS {
            return Err(fail(format!(
                "expects {channels} latent channels, codec provides {LATENT_CHANNELS}"
            )));
        }
        if factor == 0 || view_size as usize % factor != 0 {
            return Err(fail("view_size not divisible by latent_factor".into()));
        }
        let tensors =
            SafeTensors::deserialize(&bytes).map_err(|e| fail(format!("bad tensors: {e}")))?;
        let get = |name: &str, shape: (usize, usize)| -> Result<Array2<f64>> {
            let t = tensors
                .tensor(name)
                .map_err(|_| fail(format!("missing tensor `{name}`")))?;
            if t.shape() != [shape.0, shape.1] {
                return Err(fail(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            let values: Vec<f64> = match t.dtype() {
                Dtype::F64 => t
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F32 => t
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                other => return Err(fail(format!("tensor `{name}` has dtype {other:?}"))),
            };
            if values.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("tensor `{name}` holds non-finite values")));
            }
            Ok(Array2::from_shape_vec(shape, values).expect("length checked by shape"))
        };
        let (c, h) = (channels, hidden);
        let layers = layers
            .iter()
            .map(|name| {
                Ok(AttnLayer {
                    name: name.clone(),
                    kind: AttnKind::from_layer_name(name),
                    to_q: get(&format!("{name}.to_q"), (h, h))?,
                    to_k: get(&format!("{name}.to_k"), (h, h))?,
                    to_v: get(&format!("{name}.to_v"), (h, h))?,
                    to_out: get(&format!("{name}.to_out"), (h, h))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let unet = MiniUNet {
            channels: c,
            hidden: h,
            w_in: get("w_in", (c, h))?,
            w_time: get("w_time", (h, h))?,
            w_pool: get("w_pool", (c, h))?,
            w_ctx: get("w_ctx", (c, h))?,
            w_out: get("w_out", (h, c))?,
            layers,
        };
        Ok(Self {
            kind: BackendKind::Pretrained,
            source_id,
            scheduler: SchedulerParams::default(),
            codec: LatentCodec { factor },
            view_size,
            unet,
        })
    }

    /// Writes this backend's weights in the format `load_pretrained` reads.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let u = &self.unet;
        let mut named: Vec<(String, &Array2<f64>)> = vec![
            ("w_in".into(), &u.w_in),
            ("w_time".into(), &u.w_time),
            ("w_pool".into(), &u.w_pool),
            ("w_ctx".into(), &u.w_ctx),
            ("w_out".into(), &u.w_out),
        ];
        for l in &u.layers {
            named.push((format!("{}.to_q", l.name), &l.to_q));
            named.push((format!("{}.to_k", l.name), &l.to_k));
            named.push((format!("{}.to_v", l.name), &l.to_v));
            named.push((format!("{}.to_out", l.name), &l.to_out));
        }
        let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = named
            .into_iter()
            .map(|(n, a)| {
                let bytes = a.iter().flat_map(|v| v.to_le_bytes()).collect();
                (n, vec![a.nrows(), a.ncols()], bytes)
            })
            .collect();
        let views = buffers
            .iter()
            .map(|(n, shape, bytes)| {
                TensorView::new(Dtype::F64, shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = [
            ("layers".to_string(), serde_json::to_string(&u.layer_names())?),
            ("channels".to_string(), u.channels.to_string()),
            ("hidden".to_string(), u.hidden.to_string()),
            ("latent_factor".to_string(), self.codec.factor.to_string()),
            ("view_size".to_string(), self.view_size.to_string()),
        ]
        .into_iter()
        .collect();
        let bytes = safetensors::serialize(views, &Some(meta))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.unet.layer_names()
    }

    pub fn schedule(&self, steps: usize) -> Result<DdimSchedule> {
        DdimSchedule::new(&self.scheduler, steps)
    }
}
