use serde::{Deserialize, Serialize};

use super::batch::PosedViewBatch;
use super::field::{FieldGrad, SampleGrad, TriplaneField};
use super::loss::{
    loss_stage1_with_grad, loss_stage2_with_grad, LossReport, LossWeights, Perceptual,
};
use super::render::{
    raster_backward, rasterize_traced, render_volume_traced, volume_backward, VolumeSettings,
};
use super::{colored_mesh_traced, field_to_grid};
use crate::error::{Error, Result};
use crate::mesh::{extraction_backward, flexi_regularizer, flexi_regularizer_grad};

pub const DEFAULT_LR: f64 = 4.0e-5;

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`.
/// Written as `lr_max − Δ` so that step 0 returns `lr_max` exactly.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_max - 0.5 * (lr_max - lr_min) * (1.0 - (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Volume rendering of the field.
    Stage1,
    /// Rasterisation of the extracted mesh.
    Stage2,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

/// Step counts and the cosine learning-rate range shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            stage1_steps: 200,
            stage2_steps: 50,
            lr_max: DEFAULT_LR,
            lr_min: 0.0,
        }
    }
}

impl TrainSchedule {
    pub fn total(&self) -> usize {
        self.stage1_steps + self.stage2_steps
    }

    pub fn lr(&self, step: usize) -> f64 {
        cosine_lr(step, self.total(), self.lr_max, self.lr_min)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0) || !self.lr_max.is_finite() {
            return Err(Error::invalid(
                "learning rate",
                format!("need lr_max ≥ lr_min ≥ 0, got {} and {}", self.lr_max, self.lr_min),
            ));
        }
        Ok(())
    }
}

/// Rendering and loss settings used during optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub volume: VolumeSettings,
    pub weights: LossWeights,
    /// Extraction grid resolution in stage 2.
    pub grid_res: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: usize,
    pub stage: Stage,
    pub lr: f64,
    pub report: LossReport,
}

fn check_finite(report: &LossReport, grad: &FieldGrad, step: usize, stage: Stage) -> Result<()> {
    let detail = if !report.total.is_finite() {
        Some(format!("total loss {}", report.total))
    } else if let Some((name, v)) = report.terms.iter().find(|(_, v)| !v.is_finite()) {
        Some(format!("term `{name}` = {v}"))
    } else if grad.triplane.iter().chain(&grad.heads).any(|g| !g.is_finite()) {
        Some("non-finite gradient".to_string())
    } else {
        None
    };
    match detail {
        Some(detail) => Err(Error::NonFiniteLoss {
            step,
            stage: stage.name(),
            detail,
        }),
        None => Ok(()),
    }
}

/// Loss and gradient of the volume-rendered views.
pub fn stage1_objective(
    field: &TriplaneField,
    data: &PosedViewBatch,
    settings: &TrainSettings,
    perceptual: &dyn Perceptual,
) -> Result<(LossReport, FieldGrad)> {
    let mut preds = Vec::with_capacity(data.len());
    let mut traces = Vec::with_capacity(data.len());
    for cam in &data.cameras {
        let (r, t) = render_volume_traced(field, cam, &settings.volume)?;
        preds.push(r);
        traces.push(t);
    }
    let (report, grads) = loss_stage1_with_grad(&preds, &data.views, &settings.weights, perceptual)?;
    let mut grad = FieldGrad::zeros(field);
    for (t, g) in traces.iter().zip(&grads) {
        volume_backward(field, t, &settings.volume, &g.rgb, &g.mask, &mut grad)?;
    }
    Ok((report, grad))
}

/// Loss and gradient of the rasterised extracted mesh plus the surface
/// regulariser. Colour gradients reach the colour head at vertex positions;
/// geometry gradients reach the field at the lattice points.
pub fn stage2_objective(
    field: &TriplaneField,
    data: &PosedViewBatch,
    settings: &TrainSettings,
    perceptual: &dyn Perceptual,
) -> Result<(LossReport, FieldGrad)> {
    let grid = field_to_grid(field, settings.grid_res)?;
    let (mesh, trace) = colored_mesh_traced(field, &grid)?;
    let mut preds = Vec::with_capacity(data.len());
    let mut traces = Vec::with_capacity(data.len());
    for cam in &data.cameras {
        let (r, t) = rasterize_traced(&mesh, cam, settings.volume.background)?;
        preds.push(r);
        traces.push(t);
    }
    let reg = flexi_regularizer(&grid);
    let (report, grads) =
        loss_stage2_with_grad(&preds, &data.views, &settings.weights, perceptual, reg)?;
    let nv = mesh.vertices().len();
    let mut g_pos = vec![[0.0; 3]; nv];
    let mut g_col = vec![[0.0; 3]; nv];
    for ((cam, t), g) in data.cameras.iter().zip(&traces).zip(&grads) {
        let (gp, gc) = raster_backward(&mesh, cam, t, &g.rgb, &g.depth, &g.normal)?;
        for i in 0..nv {
            for k in 0..3 {
                g_pos[i][k] += gp[i][k];
                g_col[i][k] += gc[i][k];
            }
        }
    }
    let mut gg = extraction_backward(&grid, &trace, &g_pos);
    let rg = flexi_regularizer_grad(&grid);
    let wr = settings.weights.reg;
    for i in 0..gg.values.len() {
        for k in 0..3 {
            gg.deformations[i][k] += wr * rg.deformations[i][k];
        }
        gg.weights[i] += wr * rg.weights[i];
    }
    let mut grad = FieldGrad::zeros(field);
    for i in 0..gg.values.len() {
        let g = SampleGrad {
            sdf: gg.values[i],
            color: [0.0; 3],
            deformation: gg.deformations[i],
            weight: gg.weights[i],
        };
        if g != SampleGrad::default() {
            field.backward_at(crate::mesh::lattice_point(grid.res(), crate::mesh::unflatten(grid.res(), i)), &g, &mut grad)?;
        }
    }
    for (v, gc) in mesh.vertices().iter().zip(&g_col) {
        if gc.iter().any(|&x| x != 0.0) {
            let p = v.map(|c| c.clamp(-1.0, 1.0));
            let g = SampleGrad {
                color: *gc,
                ..SampleGrad::default()
            };
            field.backward_at(p, &g, &mut grad)?;
        }
    }
    Ok((report, grad))
}

/// Runs `stage1_steps` volume-rendering steps then `stage2_steps`
/// mesh-rasterisation steps with Adam on the triplane and head parameters.
/// Stage 2 requires depth and normal supervision in `data`.
pub fn train_loop(
    field: &mut TriplaneField,
    data: &PosedViewBatch,
    schedule: &TrainSchedule,
    settings: &TrainSettings,
    perceptual: &dyn Perceptual,
) -> Result<Vec<TrainStep>> {
    schedule.validate()?;
    if schedule.stage2_steps > 0 {
        for v in &data.views {
            if v.depth.is_none() {
                return Err(Error::MissingSupervision("depth"));
            }
            if v.normal.is_none() {
                return Err(Error::MissingSupervision("normal"));
            }
        }
    }
    let mut adam = Adam::new(field.num_params());
    let mut params = field.flat_params();
    let mut history = Vec::with_capacity(schedule.total());
    for step in 0..schedule.total() {
        let stage = if step < schedule.stage1_steps {
            Stage::Stage1
        } else {
            Stage::Stage2
        };
        let (report, grad) = match stage {
            Stage::Stage1 => stage1_objective(field, data, settings, perceptual)?,
            Stage::Stage2 => stage2_objective(field, data, settings, perceptual)?,
        };
        check_finite(&report, &grad, step, stage)?;
        let lr = schedule.lr(step);
        let flat_grad: Vec<f64> = grad.triplane.into_iter().chain(grad.heads).collect();
        adam.step(&mut params, &flat_grad, lr);
        field.set_flat_params(&params)?;
        log::debug!("step {step} {} lr {lr:.3e} loss {:.6}", stage.name(), report.total);
        history.push(TrainStep {
            step,
            stage,
            lr,
            report,
        });
    }
    Ok(history)
}
