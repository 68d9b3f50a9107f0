//! Multi-view stylisation: deterministic inversion, feature capture and
//! attention-injected generation over a frozen denoiser.

mod backend;
mod bank;
mod latent;
mod schedule;
mod unet;
mod views;

pub use backend::{BackendHandle, BackendKind, ToyBackendConfig, CACHED_WEIGHTS_FILE, CACHE_ENV};
pub use bank::{
    BankKey, CaptureProcessor, CaptureRole, EntropyLog, FeatureBank, FusionProcessor, KeyValue,
    RecordingProcessor,
};
pub use latent::{preprocess, Latent, LatentCodec, Preprocessing, LATENT_CHANNELS};
pub use schedule::{ddim_transfer, DdimSchedule, SchedulerParams};
pub use unet::{AttnCall, AttnKind, AttnLayer, AttnProcessor, MiniUNet, NativeAttention};
pub use views::{
    default_poses, replicate_to_tile, tile_views, untile_views, CameraPose, View, ViewGrid,
    NUM_VIEWS,
};

use image::RgbImage;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::attn::{select_target_layers, AttnConfig};
use crate::error::{Error, Result};

/// Timestep label of the clean latent (`ᾱ = 1`). Never a sampling timestep
/// because the schedule offset is at least 1.
pub const CLEAN_TIMESTEP: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectorySource {
    Content,
    Style,
}

/// Latents along one deterministic diffusion path, in the order visited.
#[derive(Debug, Clone)]
pub struct LatentTrajectory {
    pub latents: Vec<Latent>,
    pub timesteps: Vec<usize>,
    pub source: TrajectorySource,
    /// Single-view latent the denoiser was conditioned on.
    pub conditioning: Latent,
}

impl LatentTrajectory {
    pub fn steps(&self) -> usize {
        self.latents.len().saturating_sub(1)
    }

    /// Noisy `(latent, timestep)` pairs, skipping the clean end.
    pub fn noisy_states(&self) -> impl Iterator<Item = (&Latent, usize)> {
        self.latents
            .iter()
            .zip(self.timesteps.iter().copied())
            .filter(|&(_, t)| t != CLEAN_TIMESTEP)
    }

    pub fn last(&self) -> &Latent {
        self.latents.last().expect("trajectory holds at least one latent")
    }
}

fn alpha(schedule: &DdimSchedule, t: usize) -> f64 {
    schedule.alpha_bar((t != CLEAN_TIMESTEP).then_some(t))
}

fn check_view(backend: &BackendHandle, image: &RgbImage) -> Result<()> {
    let s = backend.view_size;
    if image.dimensions() != (s, s) {
        let (w, h) = image.dimensions();
        return Err(Error::shape(format!(
            "image is {w}×{h}; backend expects {s}×{s} (preprocess first)"
        )));
    }
    Ok(())
}

/// Single-view conditioning latent and the replicated 3×2 tile latent.
fn encode_inputs(backend: &BackendHandle, image: &RgbImage) -> Result<(Latent, Latent)> {
    check_view(backend, image)?;
    let cond = backend.codec.encode(image)?;
    let tile = backend.codec.encode(&replicate_to_tile(image))?;
    Ok((cond, tile))
}

/// Deterministic inversion from the encoded tile latent towards noise.
/// Returns `steps + 1` latents, clean first.
pub fn ddpm_invert(
    image: &RgbImage,
    backend: &BackendHandle,
    steps: usize,
    source: TrajectorySource,
) -> Result<LatentTrajectory> {
    let (cond, x0) = encode_inputs(backend, image)?;
    invert_latent(x0, cond, backend, steps, source)
}

pub fn invert_latent(
    x0: Latent,
    cond: Latent,
    backend: &BackendHandle,
    steps: usize,
    source: TrajectorySource,
) -> Result<LatentTrajectory> {
    let schedule = backend.schedule(steps)?;
    let mut latents = vec![x0];
    let mut timesteps = vec![CLEAN_TIMESTEP];
    for t in schedule.inversion_timesteps() {
        let prev = latents.last().expect("non-empty");
        let t_prev = *timesteps.last().expect("non-empty");
        let eps = backend.unet.forward(prev, t, &cond, &mut NativeAttention)?;
        let next = ddim_transfer(&prev.data, &eps, alpha(&schedule, t_prev), alpha(&schedule, t));
        latents.push(Latent::new(next, prev.rows, prev.cols)?);
        timesteps.push(t);
    }
    Ok(LatentTrajectory {
        latents,
        timesteps,
        source,
        conditioning: cond,
    })
}

/// Re-evaluates the denoiser at every noisy state of `trajectory` and records
/// keys/values (style) or queries (content) at the target layers.
pub fn capture_features(
    trajectory: &LatentTrajectory,
    backend: &BackendHandle,
    cfg: &AttnConfig,
    role: CaptureRole,
) -> Result<FeatureBank> {
    let targets = select_target_layers(&backend.layer_names(), cfg)?;
    let mut proc = CaptureProcessor {
        targets: targets.into_iter().collect(),
        cfg,
        role,
        bank: FeatureBank::default(),
    };
    if proc.targets.is_empty() {
        return Ok(proc.bank);
    }
    for (x, t) in trajectory.noisy_states() {
        if cfg.is_active(t) {
            backend
                .unet
                .forward(x, t, &trajectory.conditioning, &mut proc)?;
        }
    }
    Ok(proc.bank)
}

/// Seeded Gaussian starting latent for a tile of the backend's size.
pub fn initial_noise(backend: &BackendHandle, seed: u64) -> Result<Latent> {
    let f = backend.codec.factor;
    let rows = (backend.view_size as usize / f) * views::GRID_ROWS as usize;
    let cols = (backend.view_size as usize / f) * views::GRID_COLS as usize;
    let mut rng = crate::nn::rng(seed);
    let data = Array2::from_shape_fn((rows * cols, LATENT_CHANNELS), |_| {
        StandardNormal.sample(&mut rng)
    });
    Latent::new(data, rows, cols)
}

/// DDIM sampling loop from `x_t` at the schedule's noisiest timestep down to
/// the clean latent. Returns `steps + 1` latents, noisiest first.
pub fn denoise(
    x_t: Latent,
    cond: &Latent,
    backend: &BackendHandle,
    schedule: &DdimSchedule,
    proc: &mut dyn AttnProcessor,
) -> Result<(Vec<Latent>, Vec<usize>)> {
    let ts = schedule.sampling_timesteps();
    let mut latents = vec![x_t];
    let mut timesteps = Vec::with_capacity(ts.len() + 1);
    for (i, &t) in ts.iter().enumerate() {
        let t_next = ts.get(i + 1).copied().unwrap_or(CLEAN_TIMESTEP);
        let x = latents.last().expect("non-empty");
        let eps = backend.unet.forward(x, t, cond, proc)?;
        let next = ddim_transfer(&x.data, &eps, alpha(schedule, t), alpha(schedule, t_next));
        latents.push(Latent::new(next, x.rows, x.cols)?);
        timesteps.push(t);
    }
    timesteps.push(CLEAN_TIMESTEP);
    Ok((latents, timesteps))
}

/// Options that do not change the fused operator itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateOptions {
    pub record_entropy: bool,
    /// Skip injection entirely and run the unmodified backend.
    pub native: bool,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub grid: ViewGrid,
    pub trajectory: LatentTrajectory,
    pub entropy: Option<EntropyLog>,
}

/// Stylised six-view generation conditioned on `content`, with fused
/// attention at every target layer and active timestep.
pub fn generate_multiview(
    content: &RgbImage,
    bank: &FeatureBank,
    backend: &BackendHandle,
    cfg: &AttnConfig,
    steps: usize,
    seed: u64,
) -> Result<ViewGrid> {
    Ok(generate_traced(content, bank, backend, cfg, steps, seed, GenerateOptions::default())?.grid)
}

/// The unmodified backend's generation for the same inputs.
pub fn generate_native(
    content: &RgbImage,
    backend: &BackendHandle,
    steps: usize,
    seed: u64,
) -> Result<Generation> {
    let opts = GenerateOptions {
        native: true,
        ..Default::default()
    };
    let cfg = AttnConfig::default();
    generate_traced(content, &FeatureBank::default(), backend, &cfg, steps, seed, opts)
}

pub fn generate_traced(
    content: &RgbImage,
    bank: &FeatureBank,
    backend: &BackendHandle,
    cfg: &AttnConfig,
    steps: usize,
    seed: u64,
    opts: GenerateOptions,
) -> Result<Generation> {
    check_view(backend, content)?;
    let schedule = backend.schedule(steps)?;
    let cond = backend.codec.encode(content)?;
    let x_t = initial_noise(backend, seed)?;
    let (latents, timesteps, entropy) = if opts.native {
        let (l, t) = denoise(x_t, &cond, backend, &schedule, &mut NativeAttention)?;
        (l, t, None)
    } else {
        let targets = select_target_layers(&backend.layer_names(), cfg)?;
        let active: Vec<usize> = schedule
            .sampling_timesteps()
            .iter()
            .copied()
            .filter(|&t| cfg.is_active(t))
            .collect();
        bank.check_complete(&targets, &active)?;
        let mut proc = FusionProcessor::new(&targets, cfg, bank);
        if opts.record_entropy {
            proc = proc.with_entropy_probe();
        }
        let (l, t) = denoise(x_t, &cond, backend, &schedule, &mut proc)?;
        (l, t, proc.entropy)
    };
    let last = latents.last().expect("non-empty");
    if last.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generated latent".into()));
    }
    let grid = ViewGrid::from_tile(backend.codec.decode(last), seed)?;
    Ok(Generation {
        grid,
        trajectory: LatentTrajectory {
            latents,
            timesteps,
            source: TrajectorySource::Content,
            conditioning: cond,
        },
        entropy,
    })
}

/// Style keys/values plus content preserve-queries for one content/style pair.
pub fn build_bank(
    content: &RgbImage,
    style: &RgbImage,
    backend: &BackendHandle,
    cfg: &AttnConfig,
    steps: usize,
    freeze_preserve_query: bool,
) -> Result<FeatureBank> {
    let style_traj = ddpm_invert(style, backend, steps, TrajectorySource::Style)?;
    let content_traj = ddpm_invert(content, backend, steps, TrajectorySource::Content)?;
    let kv = capture_features(&style_traj, backend, cfg, CaptureRole::Style)?;
    let mut q = capture_features(&content_traj, backend, cfg, CaptureRole::Content)?;
    q.freeze_preserve_query = freeze_preserve_query;
    Ok(FeatureBank::combine(kv, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn toy(zero: bool) -> BackendHandle {
        BackendHandle::toy(&ToyBackendConfig {
            zero_prediction: zero,
            ..Default::default()
        })
        .unwrap()
    }

    fn gradient_image(size: u32) -> RgbImage {
        RgbImage::from_fn(size, size, |x, y| {
            Rgb([(x * 255 / size) as u8, (y * 255 / size) as u8, 128])
        })
    }

    #[test]
    fn zero_steps_is_just_the_encoded_latent() {
        let b = toy(false);
        let tr = ddpm_invert(&gradient_image(32), &b, 0, TrajectorySource::Content).unwrap();
        assert_eq!(tr.latents.len(), 1);
        assert_eq!(tr.timesteps, vec![CLEAN_TIMESTEP]);
    }

    #[test]
    fn trajectory_lengths() {
        let b = toy(false);
        let tr = ddpm_invert(&gradient_image(32), &b, 3, TrajectorySource::Style).unwrap();
        assert_eq!(tr.latents.len(), 4);
        assert_eq!(tr.timesteps.len(), 4);
        assert!(tr.latents.iter().all(|l| l.same_shape(&tr.latents[0])));
        assert_eq!(tr.noisy_states().count(), 3);
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let b = toy(false);
        assert!(ddpm_invert(&gradient_image(16), &b, 1, TrajectorySource::Style).is_err());
    }

    #[test]
    fn empty_targets_give_empty_bank() {
        let b = toy(false);
        let cfg = AttnConfig::builder()
            .target_layers(Vec::<String>::new())
            .build()
            .unwrap();
        let tr = ddpm_invert(&gradient_image(32), &b, 2, TrajectorySource::Style).unwrap();
        assert!(capture_features(&tr, &b, &cfg, CaptureRole::Style)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn incomplete_bank_is_rejected_before_generation() {
        let b = toy(false);
        let err = generate_multiview(
            &gradient_image(32),
            &FeatureBank::default(),
            &b,
            &AttnConfig::default(),
            2,
            42,
        )
        .unwrap_err();
        assert!(matches!(err, Error::IncompleteBank { .. }));
    }
}
