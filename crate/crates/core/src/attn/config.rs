use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::STYLE_INJECTION_LAYERS;
use crate::error::{Error, Result};

const BETA_SUM_TOLERANCE: f64 = 1e-9;

/// Query blending pair `(β_c, β_p)` with `β_c + β_p = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Beta {
    content: f64,
    preserve: f64,
}

impl Beta {
    pub fn new(content: f64, preserve: f64) -> Result<Self> {
        if !content.is_finite() || !preserve.is_finite() || content < 0.0 || preserve < 0.0 {
            return Err(Error::invalid(
                "beta",
                format!("components must be finite and non-negative, got ({content}, {preserve})"),
            ));
        }
        if (content + preserve - 1.0).abs() > BETA_SUM_TOLERANCE {
            return Err(Error::invalid(
                "beta",
                format!("β_c + β_p must equal 1, got {content} + {preserve}"),
            ));
        }
        Ok(Self { content, preserve })
    }

    /// `(β_c, 1 − β_c)`.
    pub fn from_content(content: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&content) {
            return Err(Error::invalid(
                "beta",
                format!("β_c must lie in [0, 1], got {content}"),
            ));
        }
        Self::new(content, 1.0 - content)
    }

    pub fn content(&self) -> f64 {
        self.content
    }

    pub fn preserve(&self) -> f64 {
        self.preserve
    }
}

impl Default for Beta {
    fn default() -> Self {
        Self {
            content: 0.4,
            preserve: 0.6,
        }
    }
}

impl TryFrom<(f64, f64)> for Beta {
    type Error = Error;
    fn try_from((c, p): (f64, f64)) -> Result<Self> {
        Beta::new(c, p)
    }
}

impl From<Beta> for (f64, f64) {
    fn from(b: Beta) -> Self {
        (b.content, b.preserve)
    }
}

/// Logit scale λ. Constant by default; `PerTimestep` is the hook for a
/// schedule and falls back to `default` for timesteps it does not list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant(f64),
    PerTimestep {
        default: f64,
        values: BTreeMap<usize, f64>,
    },
}

impl LambdaSchedule {
    pub fn at(&self, timestep: usize) -> f64 {
        match self {
            LambdaSchedule::Constant(l) => *l,
            LambdaSchedule::PerTimestep { default, values } => {
                values.get(&timestep).copied().unwrap_or(*default)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |l: f64| l.is_finite() && l > 0.0;
        let valid = match self {
            LambdaSchedule::Constant(l) => ok(*l),
            LambdaSchedule::PerTimestep { default, values } => {
                ok(*default) && values.values().all(|&l| ok(l))
            }
        };
        if valid {
            Ok(())
        } else {
            Err(Error::invalid("lambda", "λ must be finite and > 0"))
        }
    }
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Constant(1.5)
    }
}

/// Controllable parameters of the fused attention operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnConfig {
    pub lambda: LambdaSchedule,
    pub beta: Beta,
    /// Layer names or `*` globs, resolved against a backbone with
    /// [`super::select_target_layers`].
    pub target_layers: Vec<String>,
    /// Scheduler timesteps (training-scale indices) at which fusion runs.
    pub active_timesteps: RangeInclusive<usize>,
}

impl AttnConfig {
    pub fn builder() -> AttnConfigBuilder {
        AttnConfigBuilder::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        // Re-run the β check so deserialised configs cannot bypass it.
        Beta::new(self.beta.content, self.beta.preserve)?;
        if self.active_timesteps.is_empty() {
            return Err(Error::invalid("active_timesteps", "empty interval"));
        }
        Ok(())
    }

    pub fn is_active(&self, timestep: usize) -> bool {
        self.active_timesteps.contains(&timestep)
    }

    pub fn with_beta(&self, beta: Beta) -> Self {
        Self {
            beta,
            ..self.clone()
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let cfg = Self {
            lambda: LambdaSchedule::Constant(lambda),
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for AttnConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaSchedule::default(),
            beta: Beta::default(),
            target_layers: STYLE_INJECTION_LAYERS.iter().map(|s| s.to_string()).collect(),
            active_timesteps: 0..=usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AttnConfigBuilder {
    lambda: Option<LambdaSchedule>,
    beta: Option<Beta>,
    target_layers: Option<Vec<String>>,
    active: Option<RangeInclusive<usize>>,
}

impl AttnConfigBuilder {
    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(LambdaSchedule::Constant(lambda));
        self
    }

    pub fn lambda_schedule(mut self, schedule: LambdaSchedule) -> Self {
        self.lambda = Some(schedule);
        self
    }

    pub fn beta(mut self, beta: Beta) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn target_layers<I, S>(mut self, layers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.target_layers = Some(layers.into_iter().map(Into::into).collect());
        self
    }

    pub fn active_timesteps(mut self, range: RangeInclusive<usize>) -> Self {
        self.active = Some(range);
        self
    }

    pub fn build(self) -> Result<AttnConfig> {
        let d = AttnConfig::default();
        let cfg = AttnConfig {
            lambda: self.lambda.unwrap_or(d.lambda),
            beta: self.beta.unwrap_or(d.beta),
            target_layers: self.target_layers.unwrap_or(d.target_layers),
            active_timesteps: self.active.unwrap_or(d.active_timesteps),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = AttnConfig::default();
        assert_eq!(cfg.beta.content(), 0.4);
        assert_eq!(cfg.beta.preserve(), 0.6);
        assert_eq!(cfg.lambda.at(0), 1.5);
        assert_eq!(cfg.target_layers.len(), 5);
    }

    #[test]
    fn beta_must_sum_to_one() {
        assert!(Beta::new(0.5, 0.6).is_err());
        assert!(Beta::new(-0.1, 1.1).is_err());
        assert!(Beta::new(0.7, 0.3).is_ok());
        let b = Beta::from_content(0.7).unwrap();
        assert!((b.preserve() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn beta_deserialisation_is_validated() {
        let ok: Beta = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(ok.content(), 0.25);
        assert!(serde_json::from_str::<Beta>("[0.5, 0.75]").is_err());
    }

    #[test]
    fn lambda_must_be_positive() {
        assert!(AttnConfig::builder().lambda(0.0).build().is_err());
        assert!(AttnConfig::builder().lambda(-1.0).build().is_err());
        assert!(AttnConfig::builder().lambda(f64::NAN).build().is_err());
    }

    #[test]
    fn per_timestep_schedule_falls_back() {
        let s = LambdaSchedule::PerTimestep {
            default: 1.5,
            values: [(10, 2.0)].into_iter().collect(),
        };
        assert_eq!(s.at(10), 2.0);
        assert_eq!(s.at(11), 1.5);
    }
}
