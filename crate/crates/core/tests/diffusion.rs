use image::{Rgb, RgbImage};
use ndarray::Array2;
use style3d::attn::{AttnConfig, Beta, STYLE_INJECTION_LAYERS};
use style3d::diffusion::*;
use style3d::Error;

fn toy() -> BackendHandle {
    BackendHandle::toy(&ToyBackendConfig::default()).unwrap()
}

fn content_image() -> RgbImage {
    RgbImage::from_fn(32, 32, |x, y| {
        let inside = (x as i32 - 16).pow(2) + (y as i32 - 16).pow(2) < 100;
        if inside {
            Rgb([200, 60, 40])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

fn style_image() -> RgbImage {
    RgbImage::from_fn(32, 32, |x, y| {
        Rgb([((x * 7 + y * 3) % 256) as u8, ((x * y) % 256) as u8, (255 - y * 8) as u8])
    })
}

fn content_derived_bank(backend: &BackendHandle, cfg: &AttnConfig, steps: usize) -> FeatureBank {
    let native = generate_native(&content_image(), backend, steps, 42).unwrap();
    let kv = capture_features(&native.trajectory, backend, cfg, CaptureRole::Style).unwrap();
    let q = capture_features(&native.trajectory, backend, cfg, CaptureRole::Content).unwrap();
    FeatureBank::combine(kv, q)
}

#[test]
fn fusion_off_is_bit_identical_to_native_generation() {
    let b = toy();
    let cfg = AttnConfig::builder()
        .beta(Beta::new(1.0, 0.0).unwrap())
        .lambda(1.0)
        .build()
        .unwrap();
    let steps = 12;
    let bank = content_derived_bank(&b, &cfg, steps);
    let fused = generate_traced(&content_image(), &bank, &b, &cfg, steps, 42, Default::default())
        .unwrap();
    let native = generate_native(&content_image(), &b, steps, 42).unwrap();
    for (a, n) in fused.trajectory.latents.iter().zip(&native.trajectory.latents) {
        assert!(a.data.iter().zip(n.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(fused.grid.tile_image.as_raw(), native.grid.tile_image.as_raw());
}

#[test]
fn fixed_seed_is_deterministic_and_seed_matters() {
    let b = toy();
    let cfg = AttnConfig::default();
    let bank = build_bank(&content_image(), &style_image(), &b, &cfg, 6, false).unwrap();
    let a = generate_multiview(&content_image(), &bank, &b, &cfg, 6, 42).unwrap();
    let a2 = generate_multiview(&content_image(), &bank, &b, &cfg, 6, 42).unwrap();
    let c = generate_multiview(&content_image(), &bank, &b, &cfg, 6, 7).unwrap();
    assert_eq!(a, a2);
    assert_ne!(a.tile_image, c.tile_image);
    assert_eq!(a.views.len(), 6);
}

#[test]
fn zero_prediction_round_trip() {
    let b = BackendHandle::toy(&ToyBackendConfig {
        zero_prediction: true,
        ..Default::default()
    })
    .unwrap();
    for steps in [1, 2, 4, 8] {
        let tr = ddpm_invert(&content_image(), &b, steps, TrajectorySource::Content).unwrap();
        let schedule = b.schedule(steps).unwrap();
        let (back, ts) = denoise(
            tr.last().clone(),
            &tr.conditioning,
            &b,
            &schedule,
            &mut NativeAttention,
        )
        .unwrap();
        assert_eq!(ts.len(), steps + 1);
        let err = back
            .last()
            .unwrap()
            .data
            .iter()
            .zip(tr.latents[0].data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-5, "steps={steps}: error {err}");
    }
}

#[test]
fn capture_counts_and_shapes() {
    let b = toy();
    let layer = STYLE_INJECTION_LAYERS[1];
    let cfg = AttnConfig::builder().target_layers([layer]).build().unwrap();
    let tr = ddpm_invert(&style_image(), &b, 2, TrajectorySource::Style).unwrap();
    let bank = capture_features(&tr, &b, &cfg, CaptureRole::Style).unwrap();
    assert_eq!(bank.entries().len(), 2);
    let tokens = tr.latents[0].data.nrows();
    for kv in bank.entries().values() {
        assert_eq!(kv.key.data().dim(), (tokens, b.unet.hidden));
        assert_eq!(kv.value.data().dim(), (tokens, b.unet.hidden));
    }
    // cross-attention layers key on the conditioning tokens
    let cross = AttnConfig::builder()
        .target_layers([STYLE_INJECTION_LAYERS[0]])
        .build()
        .unwrap();
    let bank = capture_features(&tr, &b, &cross, CaptureRole::Style).unwrap();
    let cond_tokens = tr.conditioning.data.nrows();
    assert!(bank
        .entries()
        .values()
        .all(|kv| kv.key.data().nrows() == cond_tokens));
}

#[test]
fn default_capture_covers_five_layers_by_65_steps() {
    let b = toy();
    let cfg = AttnConfig::default();
    let tr = ddpm_invert(&style_image(), &b, 65, TrajectorySource::Style).unwrap();
    let bank = capture_features(&tr, &b, &cfg, CaptureRole::Style).unwrap();
    assert_eq!(bank.entries().len(), 5 * 65);
    let layers: std::collections::BTreeSet<&str> =
        bank.entries().keys().map(|(l, _)| l.as_str()).collect();
    let expected: std::collections::BTreeSet<&str> = STYLE_INJECTION_LAYERS.into_iter().collect();
    assert_eq!(layers, expected);
}

#[test]
fn missing_configured_layer_is_an_error() {
    let b = toy();
    let cfg = AttnConfig::builder()
        .target_layers(["up_blocks.9.attentions.0.transformer_blocks.0.attn1"])
        .build()
        .unwrap();
    let tr = ddpm_invert(&style_image(), &b, 1, TrajectorySource::Style).unwrap();
    assert!(matches!(
        capture_features(&tr, &b, &cfg, CaptureRole::Style),
        Err(Error::MissingLayers(_))
    ));
}

/// Processor that checks every non-target call is exactly native attention
/// over its own inputs.
struct LocalityCheck<'a> {
    inner: FusionProcessor<'a>,
    non_target_calls: usize,
    target_calls: usize,
}

impl AttnProcessor for LocalityCheck<'_> {
    fn process(
        &mut self,
        call: &AttnCall<'_>,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
    ) -> style3d::Result<Array2<f64>> {
        let out = self.inner.process(call, q, k, v)?;
        if self.inner.targets.contains(call.layer) {
            self.target_calls += 1;
        } else {
            let native = NativeAttention.process(call, q, k, v)?;
            assert_eq!(out, native, "layer {} altered", call.layer);
            self.non_target_calls += 1;
        }
        Ok(out)
    }
}

#[test]
fn fusion_is_local_to_target_layers() {
    let b = toy();
    let cfg = AttnConfig::default();
    let steps = 3;
    let bank = build_bank(&content_image(), &style_image(), &b, &cfg, steps, false).unwrap();
    let targets: Vec<String> = STYLE_INJECTION_LAYERS.map(String::from).to_vec();
    let mut check = LocalityCheck {
        inner: FusionProcessor::new(&targets, &cfg, &bank),
        non_target_calls: 0,
        target_calls: 0,
    };
    let schedule = b.schedule(steps).unwrap();
    let cond = b.codec.encode(&content_image()).unwrap();
    let x = initial_noise(&b, 42).unwrap();
    denoise(x.clone(), &cond, &b, &schedule, &mut check).unwrap();
    assert_eq!(check.target_calls, 5 * steps);
    assert_eq!(check.non_target_calls, 27 * steps);

    // Layers upstream of the first target see exactly the native activations.
    let mut fused = RecordingProcessor::new(FusionProcessor::new(&targets, &cfg, &bank));
    let mut native = RecordingProcessor::new(NativeAttention);
    denoise(x.clone(), &cond, &b, &schedule, &mut fused).unwrap();
    denoise(x, &cond, &b, &schedule, &mut native).unwrap();
    let first_t = schedule.sampling_timesteps()[0];
    let first_target = b
        .layer_names()
        .iter()
        .position(|n| n == STYLE_INJECTION_LAYERS[0])
        .unwrap();
    for name in &b.layer_names()[..first_target] {
        let key = (name.clone(), first_t);
        assert_eq!(fused.outputs[&key], native.outputs[&key]);
    }
    let key = (STYLE_INJECTION_LAYERS[0].to_string(), first_t);
    assert_ne!(fused.outputs[&key], native.outputs[&key]);
}

#[test]
fn frozen_preserve_query_still_generates() {
    let b = toy();
    let cfg = AttnConfig::default();
    let bank = build_bank(&content_image(), &style_image(), &b, &cfg, 3, true).unwrap();
    assert!(generate_multiview(&content_image(), &bank, &b, &cfg, 3, 42).is_ok());
}

#[test]
fn view_grid_persists_tile_views_and_poses() {
    let b = toy();
    let g = generate_native(&content_image(), &b, 2, 42).unwrap().grid;
    let dir = tempfile::tempdir().unwrap();
    let files = g.save(dir.path()).unwrap();
    assert_eq!(files.len(), 8);
    let tile = image::open(dir.path().join("views.png")).unwrap().to_rgb8();
    assert_eq!(tile, g.tile_image);
    let back = untile_views(&tile).unwrap();
    for (v, orig) in back.iter().zip(&g.views) {
        assert_eq!(v, &orig.image);
    }
    let poses: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("poses.json")).unwrap())
            .unwrap();
    assert_eq!(poses["views"].as_array().unwrap().len(), 6);
}
