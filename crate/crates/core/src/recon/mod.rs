//! Sparse-view reconstruction: a pose-modulated view encoder and a triplane
//! decoder feed an SDF/colour/deformation/weight field that is optimised
//! against the views, first by volume rendering and then by rasterising
//! its extracted mesh.

mod batch;
mod camera;
mod checkpoint;
mod decoder;
mod encoder;
mod field;
mod loss;
mod render;
mod train;
mod triplane;

pub use batch::{PosedViewBatch, ViewRasters, BACKGROUND_THRESHOLD};
pub use camera::{ray_box, Camera, Vec3};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_FORMAT};
pub use decoder::TriplaneDecoder;
pub use encoder::{ViewEncoder, POSE_FEATURES};
pub use field::{
    AnalyticSphere, Field, FieldGrad, FieldHeads, FieldSample, HeadCache, HeadsLayout,
    SampleGrad, TriplaneField, INIT_SPHERE_RADIUS,
};
pub use loss::{
    loss_stage1, loss_stage1_with_grad, loss_stage2, loss_stage2_with_grad, GradientStructure,
    LossReport, LossWeights, Perceptual, ViewGrad, LOSS_TERMS,
};
pub use render::{
    laplace_density, laplace_density_grad, raster_backward, rasterize, rasterize_traced,
    render_volume, render_volume_traced, volume_backward, RasterHit, RasterTrace, VolumeSettings,
    VolumeTrace, WHITE,
};
pub use train::{
    cosine_lr, stage1_objective, stage2_objective, train_loop, Adam, Stage, TrainSchedule,
    TrainSettings, TrainStep, DEFAULT_LR,
};
pub use triplane::{Footprint, Triplane, PLANE_AXES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{
    extract_mesh_traced, lattice_point, unflatten, ExtractionTrace, MeshResult, SdfGrid,
    SignConvention,
};

/// Samples the field at every lattice point of a `res³` grid over the box.
pub fn field_to_grid(field: &dyn Field, res: usize) -> Result<SdfGrid> {
    let n = res * res * res;
    let mut values = Vec::with_capacity(n);
    let mut deformations = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for v in 0..n {
        let s = field.query(lattice_point(res, unflatten(res, v)))?;
        values.push(s.sdf);
        deformations.push(s.deformation);
        weights.push(s.weight);
    }
    SdfGrid::new(res, values, deformations, weights, field.convention())
}

/// Extracts the surface and colours each vertex from the field.
pub fn colored_mesh_traced(field: &dyn Field, grid: &SdfGrid) -> Result<(MeshResult, ExtractionTrace)> {
    let (mut mesh, trace) = extract_mesh_traced(grid)?;
    let colors = mesh
        .vertices()
        .iter()
        .map(|v| Ok(field.query(v.map(|c| c.clamp(-1.0, 1.0)))?.color))
        .collect::<Result<Vec<_>>>()?;
    mesh.set_colors(colors)?;
    Ok((mesh, trace))
}

pub fn colored_mesh(field: &dyn Field, grid_res: usize) -> Result<MeshResult> {
    Ok(colored_mesh_traced(field, &field_to_grid(field, grid_res)?)?.0)
}

/// Adds depth and normal rasters rendered from `field` to each view, for
/// supervising stage 2 when the views carry no geometry of their own.
pub fn with_rendered_geometry(
    field: &dyn Field,
    data: &PosedViewBatch,
    settings: &VolumeSettings,
) -> Result<PosedViewBatch> {
    let mut out = data.clone();
    for (v, cam) in out.views.iter_mut().zip(&data.cameras) {
        let r = render_volume(field, cam, settings)?;
        v.depth = r.depth;
        v.normal = r.normal;
    }
    Ok(out)
}

/// Architecture, rendering and optimisation settings of the reconstructor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub patch: usize,
    pub encoder_dim: usize,
    pub triplane_res: usize,
    pub triplane_channels: usize,
    pub head_hidden: usize,
    /// Extraction grid vertices per axis.
    pub grid_res: usize,
    /// Views are box-downsampled by this factor before optimisation.
    pub downsample: usize,
    pub samples_per_ray: usize,
    pub laplace_beta: f64,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            encoder_dim: 32,
            triplane_res: 16,
            triplane_channels: 8,
            head_hidden: 32,
            grid_res: 24,
            downsample: 2,
            samples_per_ray: 24,
            laplace_beta: 0.05,
            schedule: TrainSchedule {
                stage1_steps: 20,
                stage2_steps: 5,
                ..TrainSchedule::default()
            },
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch", self.patch),
            ("encoder_dim", self.encoder_dim),
            ("triplane_channels", self.triplane_channels),
            ("head_hidden", self.head_hidden),
            ("downsample", self.downsample),
            ("samples_per_ray", self.samples_per_ray),
        ];
        for (n, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("recon.{n}"), "must be at least 1"));
            }
        }
        if self.triplane_res < 2 || self.grid_res < 2 {
            return Err(Error::invalid("recon resolution", "triplane_res and grid_res must be ≥ 2"));
        }
        if !(self.laplace_beta > 0.0) {
            return Err(Error::invalid("recon.laplace_beta", "must be positive"));
        }
        self.schedule.validate()?;
        self.weights.validate()
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            volume: VolumeSettings {
                samples: self.samples_per_ray,
                beta: self.laplace_beta,
                ..VolumeSettings::default()
            },
            weights: self.weights,
            grid_res: self.grid_res,
        }
    }
}

/// Encoder and decoder are frozen; only the field is optimised.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstructor {
    pub config: ReconConfig,
    pub encoder: ViewEncoder,
    pub decoder: TriplaneDecoder,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: TriplaneField,
    pub history: Vec<TrainStep>,
    pub mesh: MeshResult,
}

impl Reconstructor {
    pub fn new(config: ReconConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: ViewEncoder::random(config.patch, config.encoder_dim, config.seed)?,
            decoder: TriplaneDecoder::random(
                config.triplane_res,
                config.triplane_channels,
                config.encoder_dim,
                config.seed.wrapping_add(1),
            )?,
            config,
        })
    }

    /// Encodes and decodes the views, attaches freshly initialised heads.
    pub fn initial_field(&self, data: &PosedViewBatch, convention: SignConvention) -> Result<TriplaneField> {
        let tokens = self.encoder.encode_views(data)?;
        let triplane = self.decoder.decode(tokens.view())?;
        let layout = HeadsLayout {
            feature_dim: triplane.feature_dim(),
            hidden: self.config.head_hidden,
            grid_res: self.config.grid_res,
            convention,
        };
        TriplaneField::new(triplane, FieldHeads::init(layout, self.config.seed.wrapping_add(2))?)
    }

    /// Full reconstruction. Stage 2 is supervised by depth and normals
    /// rendered from the stage-1 field when the views carry none.
    pub fn reconstruct(&self, data: &PosedViewBatch, convention: SignConvention) -> Result<Reconstruction> {
        let mut field = self.initial_field(data, convention)?;
        let train_data = data.downsample(self.config.downsample)?;
        let settings = self.config.train_settings();
        let perceptual = GradientStructure;
        let s = self.config.schedule;
        let stage1 = TrainSchedule { stage2_steps: 0, ..s };
        let mut history = train_loop(&mut field, &train_data, &stage1, &settings, &perceptual)?;
        if s.stage2_steps > 0 {
            let needs_geometry = train_data.views.iter().any(|v| v.depth.is_none() || v.normal.is_none());
            let supervised = if needs_geometry {
                with_rendered_geometry(&field, &train_data, &settings.volume)?
            } else {
                train_data
            };
            // Continue the same cosine schedule where stage 1 stopped.
            let stage2 = TrainSchedule {
                stage1_steps: 0,
                stage2_steps: s.stage2_steps,
                lr_max: s.lr(s.stage1_steps),
                lr_min: s.lr_min,
            };
            let tail = train_loop(&mut field, &supervised, &stage2, &settings, &perceptual)?;
            history.extend(tail.into_iter().map(|mut t| {
                t.step += s.stage1_steps;
                t
            }));
        }
        let mesh = colored_mesh(&field, self.config.grid_res)?;
        Ok(Reconstruction {
            field,
            history,
            mesh,
        })
    }
}
