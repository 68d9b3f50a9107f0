use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::batch::ViewRasters;
use crate::error::{Error, Result};

/// Multipliers of each loss term. The image term is unweighted by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub image: f64,
    pub lpips: f64,
    pub mask: f64,
    pub depth: f64,
    pub normal: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            image: 1.0,
            lpips: 2.0,
            mask: 1.0,
            depth: 0.5,
            normal: 0.2,
            reg: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("image", self.image),
            ("lpips", self.lpips),
            ("mask", self.mask),
            ("depth", self.depth),
            ("normal", self.normal),
            ("reg", self.reg),
        ];
        for (n, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("loss weight {n}"), format!("{v} is not a finite non-negative number")));
            }
        }
        Ok(())
    }

    pub fn get(&self, term: &str) -> f64 {
        match term {
            "image" => self.image,
            "lpips" => self.lpips,
            "mask" => self.mask,
            "depth" => self.depth,
            "normal" => self.normal,
            "reg" => self.reg,
            _ => 0.0,
        }
    }
}

pub const LOSS_TERMS: [&str; 6] = ["image", "lpips", "mask", "depth", "normal", "reg"];

/// Unweighted terms, the weights applied, and their weighted sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
    pub weights: LossWeights,
}

impl LossReport {
    fn from_terms(terms: [f64; 6], weights: LossWeights) -> Self {
        let total = LOSS_TERMS
            .iter()
            .zip(terms)
            .map(|(n, t)| weights.get(n) * t)
            .sum();
        Self {
            total,
            terms: LOSS_TERMS.iter().map(|n| n.to_string()).zip(terms).collect(),
            weights,
        }
    }

    pub fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }
}

/// Feature-space image distance. `distance(a, a)` must be 0.
pub trait Perceptual {
    fn distance(&self, a: &ViewRasters, b: &ViewRasters) -> f64;
    /// `∂ distance / ∂ a.rgb`.
    fn gradient(&self, a: &ViewRasters, b: &ViewRasters) -> Vec<[f64; 3]>;
}

/// Squared difference of horizontal and vertical colour gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientStructure;

impl GradientStructure {
    fn pairs(w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
        let horiz = (0..h).flat_map(move |y| (0..w.saturating_sub(1)).map(move |x| (y * w + x, y * w + x + 1)));
        let vert = (0..h.saturating_sub(1)).flat_map(move |y| (0..w).map(move |x| (y * w + x, (y + 1) * w + x)));
        horiz.chain(vert)
    }
}

impl Perceptual for GradientStructure {
    fn distance(&self, a: &ViewRasters, b: &ViewRasters) -> f64 {
        Self::pairs(a.width, a.height)
            .map(|(i, j)| {
                (0..3)
                    .map(|k| {
                        let d = (a.rgb[j][k] - a.rgb[i][k]) - (b.rgb[j][k] - b.rgb[i][k]);
                        d * d
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    fn gradient(&self, a: &ViewRasters, b: &ViewRasters) -> Vec<[f64; 3]> {
        let mut g = vec![[0.0; 3]; a.len()];
        for (i, j) in Self::pairs(a.width, a.height) {
            for k in 0..3 {
                let d = 2.0 * ((a.rgb[j][k] - a.rgb[i][k]) - (b.rgb[j][k] - b.rgb[i][k]));
                g[j][k] += d;
                g[i][k] -= d;
            }
        }
        g
    }
}

/// Gradient of a total loss with respect to one view's predicted rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrad {
    pub rgb: Vec<[f64; 3]>,
    pub mask: Vec<f64>,
    pub depth: Vec<f64>,
    pub normal: Vec<[f64; 3]>,
}

impl ViewGrad {
    fn zeros(n: usize) -> Self {
        Self {
            rgb: vec![[0.0; 3]; n],
            mask: vec![0.0; n],
            depth: vec![0.0; n],
            normal: vec![[0.0; 3]; n],
        }
    }
}

fn check_pair(pred: &[ViewRasters], gt: &[ViewRasters]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "{} predicted views against {} targets",
            pred.len(),
            gt.len()
        )));
    }
    for (p, g) in pred.iter().zip(gt) {
        p.check()?;
        g.check()?;
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::shape(format!(
                "prediction {}×{} against target {}×{}",
                p.width, p.height, g.width, g.height
            )));
        }
        if g.mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask", "target masks must be binary"));
        }
    }
    Ok(())
}

fn supervision<'a, T>(v: &'a Option<Vec<T>>, what: &'static str) -> Result<&'a [T]> {
    v.as_deref().ok_or(Error::MissingSupervision(what))
}

fn evaluate(
    pred: &[ViewRasters],
    gt: &[ViewRasters],
    weights: &LossWeights,
    perceptual: &dyn Perceptual,
    reg: Option<f64>,
    want_grad: bool,
) -> Result<(LossReport, Vec<ViewGrad>)> {
    check_pair(pred, gt)?;
    weights.validate()?;
    let mut terms = [0.0; 6];
    let mut grads = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        let mut vg = ViewGrad::zeros(p.len());
        for i in 0..p.len() {
            for k in 0..3 {
                let d = p.rgb[i][k] - g.rgb[i][k];
                terms[0] += d * d;
                vg.rgb[i][k] += weights.image * 2.0 * d;
            }
            let d = p.mask[i] - g.mask[i];
            terms[2] += d * d;
            vg.mask[i] += weights.mask * 2.0 * d;
        }
        terms[1] += perceptual.distance(p, g);
        if want_grad && weights.lpips != 0.0 {
            for (a, b) in vg.rgb.iter_mut().zip(perceptual.gradient(p, g)) {
                for k in 0..3 {
                    a[k] += weights.lpips * b[k];
                }
            }
        }
        if reg.is_some() {
            let (pd, gd) = (supervision(&p.depth, "predicted depth")?, supervision(&g.depth, "depth")?);
            let (pn, gn) = (supervision(&p.normal, "predicted normal")?, supervision(&g.normal, "normal")?);
            for i in 0..p.len() {
                let m = g.mask[i];
                if m == 0.0 {
                    continue;
                }
                let d = pd[i] - gd[i];
                terms[3] += m * d.abs();
                vg.depth[i] = weights.depth * m * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                let cos: f64 = (0..3).map(|k| pn[i][k] * gn[i][k]).sum();
                terms[4] += m * (1.0 - cos);
                vg.normal[i] = gn[i].map(|v| -weights.normal * m * v);
            }
        }
        if want_grad {
            grads.push(vg);
        }
    }
    if let Some(r) = reg {
        if !(r >= 0.0) {
            return Err(Error::invalid("regulariser", format!("{r} is not a non-negative number")));
        }
        terms[5] = r;
    }
    Ok((LossReport::from_terms(terms, *weights), grads))
}

/// `Σ‖Î−I‖² + λ_lpips·Σ P(Î, I) + λ_mask·Σ‖M̂−M‖²` over all views.
pub fn loss_stage1(
    pred: &[ViewRasters],
    gt: &[ViewRasters],
    weights: &LossWeights,
    perceptual: &dyn Perceptual,
) -> Result<LossReport> {
    Ok(evaluate(pred, gt, weights, perceptual, None, false)?.0)
}

pub fn loss_stage1_with_grad(
    pred: &[ViewRasters],
    gt: &[ViewRasters],
    weights: &LossWeights,
    perceptual: &dyn Perceptual,
) -> Result<(LossReport, Vec<ViewGrad>)> {
    evaluate(pred, gt, weights, perceptual, None, true)
}

/// Stage-1 terms plus `λ_depth·Σ M⊙|D̂−D| + λ_normal·Σ M⊙(1−N̂·N) + λ_reg·reg`,
/// where `M` is the target mask and `reg` the surface regulariser value.
pub fn loss_stage2(
    pred: &[ViewRasters],
    gt: &[ViewRasters],
    weights: &LossWeights,
    perceptual: &dyn Perceptual,
    reg: f64,
) -> Result<LossReport> {
    Ok(evaluate(pred, gt, weights, perceptual, Some(reg), false)?.0)
}

/// Gradients exclude the regulariser; its multiplier is `weights.reg`.
pub fn loss_stage2_with_grad(
    pred: &[ViewRasters],
    gt: &[ViewRasters],
    weights: &LossWeights,
    perceptual: &dyn Perceptual,
    reg: f64,
) -> Result<(LossReport, Vec<ViewGrad>)> {
    evaluate(pred, gt, weights, perceptual, Some(reg), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(seed: f64) -> ViewRasters {
        let n = 4;
        ViewRasters {
            width: 2,
            height: 2,
            rgb: (0..n).map(|i| [0.1 * i as f64 + seed, 0.5, 0.9 - seed]).collect(),
            mask: vec![1.0, 0.0, 1.0, 1.0],
            depth: Some(vec![3.0 + seed; n]),
            normal: Some(vec![[0.0, 0.0, 1.0]; n]),
        }
    }

    #[test]
    fn identical_inputs_give_zero() {
        let v = vec![view(0.0)];
        let r = loss_stage2(&v, &v, &LossWeights::default(), &GradientStructure, 0.0).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.terms.values().all(|&t| t == 0.0));
    }

    #[test]
    fn missing_supervision_is_reported() {
        let p = vec![view(0.0)];
        let mut g = vec![view(0.1)];
        g[0].normal = None;
        let e = loss_stage2(&p, &g, &LossWeights::default(), &GradientStructure, 0.0).unwrap_err();
        assert!(matches!(e, Error::MissingSupervision("normal")));
        assert!(loss_stage1(&p, &g, &LossWeights::default(), &GradientStructure).is_ok());
    }

    #[test]
    fn non_binary_target_mask_is_rejected() {
        let p = vec![view(0.0)];
        let mut g = vec![view(0.0)];
        g[0].mask[1] = 0.5;
        assert!(loss_stage1(&p, &g, &LossWeights::default(), &GradientStructure).is_err());
    }
}
