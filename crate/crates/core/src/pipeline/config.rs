use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attn::{AttnConfig, Beta, STYLE_INJECTION_LAYERS};
use crate::diffusion::{BackendKind, ToyBackendConfig};
use crate::error::{Error, Result};
use crate::mesh::SignConvention;
use crate::recon::ReconConfig;

pub const DEFAULT_STEPS: usize = 65;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_LAMBDA: f64 = 1.5;

/// Fully resolved settings of one stylise-and-reconstruct run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub content: PathBuf,
    pub style: PathBuf,
    /// `(β_c, β_p)`.
    pub beta: Beta,
    pub lambda: f64,
    pub steps: usize,
    pub seed: u64,
    pub backend: BackendKind,
    /// Pretrained weight file; falls back to the cache directory when unset.
    pub weights: Option<PathBuf>,
    pub device: String,
    pub out: PathBuf,
    pub sign_convention: SignConvention,
    pub target_layers: Vec<String>,
    pub freeze_preserve_query: bool,
    pub toy: ToyBackendConfig,
    /// Carries the loss weights under `recon.weights`.
    pub recon: ReconConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            content: PathBuf::new(),
            style: PathBuf::new(),
            beta: Beta::default(),
            lambda: DEFAULT_LAMBDA,
            steps: DEFAULT_STEPS,
            seed: DEFAULT_SEED,
            backend: BackendKind::Toy,
            weights: None,
            device: "cpu".into(),
            out: PathBuf::from("out"),
            sign_convention: SignConvention::default(),
            target_layers: STYLE_INJECTION_LAYERS.iter().map(|s| s.to_string()).collect(),
            freeze_preserve_query: false,
            toy: ToyBackendConfig::default(),
            recon: ReconConfig::default(),
        }
    }
}

impl RunConfig {
    /// Input paths are not checked here; a run checks them before any compute.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("must be finite and > 0, got {}", self.lambda)));
        }
        if self.steps < 1 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if self.device != "cpu" {
            return Err(Error::invalid(
                "device",
                format!("`{}` is not available; this build runs on `cpu` only", self.device),
            ));
        }
        self.recon.validate()?;
        self.attn_config().map(|_| ())
    }

    pub fn attn_config(&self) -> Result<AttnConfig> {
        AttnConfig::builder()
            .beta(self.beta)
            .lambda(self.lambda)
            .target_layers(self.target_layers.iter().cloned())
            .build()
    }
}

/// One source of settings. Unset fields defer to lower-precedence layers.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub content: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub beta_c: Option<f64>,
    pub beta_p: Option<f64>,
    pub lambda: Option<f64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub weights: Option<PathBuf>,
    pub device: Option<String>,
    pub out: Option<PathBuf>,
    pub sign_convention: Option<SignConvention>,
    pub target_layers: Option<Vec<String>>,
    pub freeze_preserve_query: Option<bool>,
    pub toy: Option<ToyBackendConfig>,
    pub recon: Option<ReconConfig>,
}

impl ConfigLayer {
    /// Parses a TOML config file. Relative input paths are taken relative
    /// to the file's directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut layer = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut layer.content, &mut layer.style, &mut layer.weights].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(layer)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::invalid("config file", e.to_string()))
    }

    /// `None` when neither component is set; a lone component implies the
    /// other by `β_c + β_p = 1`.
    fn beta(&self) -> Option<Result<Beta>> {
        match (self.beta_c, self.beta_p) {
            (None, None) => None,
            (Some(c), None) => Some(Beta::from_content(c)),
            (None, Some(p)) => Some(if (0.0..=1.0).contains(&p) {
                Beta::new(1.0 - p, p)
            } else {
                Err(Error::invalid("beta", format!("β_p must lie in [0, 1], got {p}")))
            }),
            (Some(c), Some(p)) => Some(Beta::new(c, p)),
        }
    }

    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut cfg.content, &self.content);
        set(&mut cfg.style, &self.style);
        if let Some(b) = self.beta() {
            cfg.beta = b?;
        }
        set(&mut cfg.lambda, &self.lambda);
        set(&mut cfg.steps, &self.steps);
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.backend, &self.backend);
        if self.weights.is_some() {
            cfg.weights = self.weights.clone();
        }
        set(&mut cfg.device, &self.device);
        set(&mut cfg.out, &self.out);
        set(&mut cfg.sign_convention, &self.sign_convention);
        set(&mut cfg.target_layers, &self.target_layers);
        set(&mut cfg.freeze_preserve_query, &self.freeze_preserve_query);
        set(&mut cfg.toy, &self.toy);
        set(&mut cfg.recon, &self.recon);
        Ok(())
    }
}

/// Flags override the file, the file overrides defaults. The result is
/// validated.
pub fn parse_config(file: Option<&ConfigLayer>, flags: &ConfigLayer) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(f) = file {
        f.apply(&mut cfg)?;
    }
    flags.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> ConfigLayer {
        ConfigLayer {
            content: Some("c.png".into()),
            style: Some("s.png".into()),
            ..Default::default()
        }
    }

    #[test]
    fn file_beta_is_replaced_whole_by_flag_beta() {
        let file = ConfigLayer {
            beta_c: Some(0.2),
            beta_p: Some(0.8),
            ..Default::default()
        };
        let flags = ConfigLayer {
            beta_c: Some(0.9),
            ..inputs()
        };
        let cfg = parse_config(Some(&file), &flags).unwrap();
        assert_eq!(cfg.beta.content(), 0.9);
        assert!((cfg.beta.preserve() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lone_beta_p_implies_beta_c() {
        let cfg = parse_config(None, &ConfigLayer { beta_p: Some(0.25), ..inputs() }).unwrap();
        assert_eq!(cfg.beta.content(), 0.75);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ConfigLayer::from_toml_str("stepz = 3").unwrap_err();
        assert!(matches!(e, Error::Invalid { ref field, .. } if field == "config file"));
    }

    #[test]
    fn gpu_device_is_refused() {
        let e = parse_config(None, &ConfigLayer { device: Some("cuda:0".into()), ..inputs() }).unwrap_err();
        assert!(matches!(e, Error::Invalid { ref field, .. } if field == "device"));
    }
}
