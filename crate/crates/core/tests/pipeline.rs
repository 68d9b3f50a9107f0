use std::path::{Path, PathBuf};

use proptest::prelude::*;
use style3d::diffusion::BackendKind;
use style3d::pipeline::*;
use style3d::Error;

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

fn inputs(out: &Path) -> ConfigLayer {
    ConfigLayer {
        content: Some(asset("content.png")),
        style: Some(asset("style.png")),
        out: Some(out.to_path_buf()),
        ..Default::default()
    }
}

fn field_of(e: &Error) -> &str {
    match e {
        Error::Invalid { field, .. } => field,
        other => panic!("expected a validation error, got {other}"),
    }
}

fn files_named(dir: &Path, name: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                found.extend(files_named(&p, name));
            } else if p.file_name().is_some_and(|n| n == name) {
                found.push(p);
            }
        }
    }
    found
}

#[test]
fn no_flags_resolve_to_the_published_defaults() {
    let cfg = parse_config(None, &ConfigLayer::default()).unwrap();
    assert_eq!((cfg.beta.content(), cfg.beta.preserve()), (0.4, 0.6));
    assert_eq!(cfg.lambda, 1.5);
    assert_eq!(cfg.steps, 65);
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.backend, BackendKind::Toy);
    assert_eq!(cfg.target_layers.len(), 5);
    let w = cfg.recon.weights;
    assert_eq!((w.depth, w.normal, w.reg), (0.5, 0.2, 0.01));
}

#[test]
fn beta_c_alone_is_complemented() {
    let flags = ConfigLayer {
        beta_c: Some(0.7),
        ..Default::default()
    };
    let cfg = parse_config(None, &flags).unwrap();
    assert_eq!(cfg.beta.content(), 0.7);
    assert!((cfg.beta.preserve() - 0.3).abs() < 1e-15);
}

#[test]
fn flags_override_file_override_defaults() {
    let file = ConfigLayer::from_toml_str(
        "steps = 10\nseed = 7\nbeta_c = 0.2\nbeta_p = 0.8\n[recon.weights]\ndepth = 0.75\n",
    )
    .unwrap();
    let only_file = parse_config(Some(&file), &ConfigLayer::default()).unwrap();
    assert_eq!(only_file.steps, 10);
    assert_eq!(only_file.seed, 7);
    assert_eq!(only_file.beta.content(), 0.2);
    assert_eq!(only_file.recon.weights.depth, 0.75);
    assert_eq!(only_file.recon.weights.normal, 0.2);
    assert_eq!(only_file.lambda, 1.5);

    let flags = ConfigLayer {
        steps: Some(20),
        ..Default::default()
    };
    let both = parse_config(Some(&file), &flags).unwrap();
    assert_eq!(both.steps, 20);
    assert_eq!(both.seed, 7);
}

#[test]
fn config_file_paths_are_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, "content = \"c.png\"\nstyle = \"/abs/s.png\"\n").unwrap();
    let layer = ConfigLayer::from_toml_file(&p).unwrap();
    assert_eq!(layer.content.unwrap(), dir.path().join("c.png"));
    assert_eq!(layer.style.unwrap(), PathBuf::from("/abs/s.png"));
}

#[test]
fn validation_errors_name_the_field() {
    let bad = |layer: ConfigLayer| parse_config(None, &layer).unwrap_err();
    let e = bad(ConfigLayer {
        beta_c: Some(0.5),
        beta_p: Some(0.6),
        ..Default::default()
    });
    assert_eq!(field_of(&e), "beta");
    assert_eq!(e.exit_code(), 2);
    for l in [0.0, -1.0, f64::NAN] {
        let e = bad(ConfigLayer {
            lambda: Some(l),
            ..Default::default()
        });
        assert_eq!(field_of(&e), "lambda");
    }
    let e = bad(ConfigLayer {
        steps: Some(0),
        ..Default::default()
    });
    assert_eq!(field_of(&e), "steps");
    assert_eq!(field_of(&ConfigLayer::from_toml_str("steps = -3").unwrap_err()), "config file");
}

proptest! {
    #[test]
    fn any_valid_beta_c_resolves_to_a_unit_sum(c in 0.0f64..=1.0) {
        let cfg = parse_config(None, &ConfigLayer { beta_c: Some(c), ..Default::default() }).unwrap();
        prop_assert!((cfg.beta.content() + cfg.beta.preserve() - 1.0).abs() < 1e-12);
        prop_assert_eq!(cfg.beta.content(), c);
    }

    #[test]
    fn out_of_range_beta_c_is_rejected(c in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        let e = parse_config(None, &ConfigLayer { beta_c: Some(c), ..Default::default() }).unwrap_err();
        prop_assert_eq!(field_of(&e), "beta");
    }

    #[test]
    fn non_positive_lambda_is_rejected(l in -100.0f64..=0.0) {
        let e = parse_config(None, &ConfigLayer { lambda: Some(l), ..Default::default() }).unwrap_err();
        prop_assert_eq!(field_of(&e), "lambda");
    }
}

#[test]
fn missing_style_fails_before_compute_without_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = parse_config(
        None,
        &ConfigLayer {
            style: Some(dir.path().join("no_such_style.png")),
            ..inputs(&out)
        },
    )
    .unwrap();
    let t = std::time::Instant::now();
    let e = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(e, Error::MissingInput(ref p) if p.ends_with("no_such_style.png")));
    assert_eq!(e.exit_code(), 2);
    assert!(t.elapsed().as_secs_f64() < 1.0);
    assert!(files_named(dir.path(), REPORT_FILE).is_empty());
}

#[test]
fn unloadable_weights_name_their_source() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("absent.safetensors");
    let cfg = parse_config(
        None,
        &ConfigLayer {
            backend: Some(BackendKind::Pretrained),
            weights: Some(weights.clone()),
            ..inputs(&dir.path().join("out"))
        },
    )
    .unwrap();
    let e = run_pipeline(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains(&weights.display().to_string()), "{e}");
    assert!(files_named(dir.path(), REPORT_FILE).is_empty());
}

#[test]
fn a_failure_after_generation_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = parse_config(None, &inputs(&out)).unwrap();
    cfg.steps = 4;
    // 16-pixel training views do not split into 5-pixel patches.
    cfg.recon.patch = 5;
    let e = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(e, Error::Invalid { .. }), "{e}");
    assert!(files_named(dir.path(), REPORT_FILE).is_empty());
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0, "staging directory left behind");
}

fn schema() -> serde_json::Value {
    serde_json::from_str(include_str!("../schemas/report.schema.json")).unwrap()
}

#[test]
fn toy_run_is_complete_deterministic_and_matches_a_single_value_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = parse_config(None, &inputs(&out)).unwrap();
    let report = run_pipeline(&cfg).unwrap();
    let run_dir = report.run_dir.clone();
    assert_eq!(run_dir, out.join(&report.config_hash[..16]));
    assert!(report.mesh.vertices > 0);
    assert!(report.mesh.faces > 0);

    let names: Vec<&str> = report.artifacts.iter().map(|a| a.name.as_str()).collect();
    for required in ["views.png", "poses.json", "mesh.obj", "mesh.glb"] {
        assert!(names.contains(&required), "{required} not listed");
    }
    for i in 0..6 {
        assert!(names.contains(&format!("view_{i}.png").as_str()));
    }
    for a in &report.artifacts {
        let bytes = std::fs::read(run_dir.join(&a.path)).unwrap();
        assert_eq!(bytes.len() as u64, a.bytes);
        assert_eq!(sha256_hex(&bytes), a.sha256);
    }
    assert!(run_dir.join(REPORT_FILE).is_file());
    assert!(run_dir.join(TIMINGS_FILE).is_file());
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 1, "staging directory left behind");

    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(run_dir.join(REPORT_FILE)).unwrap()).unwrap();
    assert!(jsonschema::is_valid(&schema(), &json));
    assert_eq!(json["config"]["beta"], serde_json::json!([0.4, 0.6]));
    assert_eq!(json["inputs"]["content"]["preprocessing"]["had_alpha"], true);
    assert_eq!(json["inputs"]["content"]["preprocessing"]["background"], "white");
    assert_eq!(json["backend"]["hooked_layers"].as_array().unwrap().len(), 5);

    let keep = |f: &str| std::fs::read(run_dir.join(f)).unwrap();
    let first: Vec<Vec<u8>> = ["views.png", "mesh.obj", REPORT_FILE].iter().map(|f| keep(f)).collect();
    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(again.run_dir, run_dir);
    for (f, bytes) in ["views.png", "mesh.obj", REPORT_FILE].iter().zip(&first) {
        assert!(keep(f) == *bytes, "{f} differs between runs");
    }

    let sw = sweep(&cfg, SweepParam::Lambda, &[SweepValue::Lambda(1.5)]).unwrap();
    let swept = std::fs::read(sw.run_dir.join(&sw.entries[0].dir).join("views.png")).unwrap();
    assert!(swept == first[0], "single-value sweep differs from the plain run");
}

#[test]
fn report_schema_rejects_a_report_without_artifacts() {
    let mut v: serde_json::Value = serde_json::json!({ "tool": { "name": "style3d", "version": "0.1.0" } });
    assert!(!jsonschema::is_valid(&schema(), &v));
    v["artifacts"] = serde_json::json!([]);
    assert!(!jsonschema::is_valid(&schema(), &v));
}

#[test]
fn lambda_sweep_sharpens_attention_in_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_config(None, &inputs(&dir.path().join("out"))).unwrap();
    cfg.steps = 20;
    let values = parse_sweep_values(SweepParam::Lambda, "0.5, 1.0, 1.5, 2.0").unwrap();
    let r = sweep(&cfg, SweepParam::Lambda, &values).unwrap();
    assert_eq!(r.entries.len(), 4);
    for e in &r.entries {
        assert!(r.run_dir.join(&e.dir).join("views.png").is_file());
        assert_eq!(e.entropy.len(), 5);
    }
    for pick in [|e: &SweepEntry| e.entropy.clone(), |e: &SweepEntry| e.probe_entropy.clone()] {
        let series: Vec<_> = r.entries.iter().map(pick).collect();
        for layer in series[0].keys() {
            let ys: Vec<f64> = series.iter().map(|m| m[layer]).collect();
            for w in ys.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{layer}: {ys:?}");
            }
            assert!(ys[3] < ys[0], "{layer}: λ had no effect {ys:?}");
        }
    }
    let sheet = image::open(r.run_dir.join("contact_sheet.png")).unwrap();
    let tile = &r.grids[0].tile_image;
    assert!(sheet.width() >= 4 * 2 * tile.width());
    assert!(sheet.height() > 2 * tile.height());
    let sw: serde_json::Value = serde_json::from_slice(&std::fs::read(r.run_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(sw["entries"][2]["label"], "lambda=1.50");
}

#[test]
fn beta_sweep_axis_reuses_one_capture() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_config(None, &inputs(&dir.path().join("out"))).unwrap();
    cfg.steps = 8;
    let values = parse_sweep_values(SweepParam::Beta, "1:0, 0.6, 0.4, 0").unwrap();
    let r = sweep(&cfg, SweepParam::Beta, &values).unwrap();
    let labels: Vec<&str> = r.entries.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(labels, ["beta=(1.00,0.00)", "beta=(0.60,0.40)", "beta=(0.40,0.60)", "beta=(0.00,1.00)"]);
    // A fresh single-value sweep captures its own bank; results must agree bit for bit.
    let solo = sweep(&cfg, SweepParam::Beta, &values[2..3]).unwrap();
    assert!(solo.grids[0].tile_image == r.grids[2].tile_image);
    assert!(r.grids[0].tile_image != r.grids[3].tile_image);
}

#[test]
fn one_invalid_value_rejects_the_whole_sweep_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = parse_config(None, &inputs(&out)).unwrap();
    let values = [SweepValue::Lambda(1.0), SweepValue::Lambda(-2.0), SweepValue::Lambda(1.5)];
    let e = sweep(&cfg, SweepParam::Lambda, &values).unwrap_err();
    assert_eq!(field_of(&e), "lambda");
    assert!(!out.exists());
    let dup = [SweepValue::Lambda(1.0), SweepValue::Lambda(1.0)];
    assert_eq!(field_of(&sweep(&cfg, SweepParam::Lambda, &dup).unwrap_err()), "values");
    let mixed = [SweepValue::Lambda(1.0)];
    assert_eq!(field_of(&sweep(&cfg, SweepParam::Beta, &mixed).unwrap_err()), "values");
    assert!(parse_sweep_values(SweepParam::Beta, "0.5:0.6").is_err());
    assert!(parse_sweep_values(SweepParam::Lambda, "1, x").is_err());
    assert!(!out.exists());
}
