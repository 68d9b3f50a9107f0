use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_style3d"));
    c.env_remove("STYLE3D_CACHE");
    c
}

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A config that keeps the end-to-end run short.
fn quick_config(dir: &Path) -> PathBuf {
    let p = dir.join("quick.toml");
    let body = format!(
        "content = {:?}\nstyle = {:?}\nsteps = 6\n[recon]\ngrid_res = 16\n[recon.schedule]\nstage1_steps = 3\nstage2_steps = 1\n",
        asset("content.png"),
        asset("style.png")
    );
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn missing_style_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--content"])
        .arg(asset("content.png"))
        .args(["--style", "nope.png", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.png"));
}

#[test]
fn invalid_parameters_exit_with_2_and_name_the_field() {
    for (flag, value, field) in [("--beta-c", "1.5", "beta"), ("--lambda", "0", "lambda"), ("--steps", "0", "steps")] {
        let o = bin().args(["run", flag, value]).output().unwrap();
        assert_eq!(code(&o), 2, "{flag}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{flag}: {}", stderr(&o));
    }
    let o = bin().args(["run", "--backend", "gpu-magic"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn pretrained_without_weights_exits_with_3() {
    let o = bin()
        .args(["run", "--backend", "pretrained", "--content"])
        .arg(asset("content.png"))
        .arg("--style")
        .arg(asset("style.png"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("STYLE3D_CACHE"));
}

#[test]
fn cached_weights_drive_a_pretrained_run() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    std::fs::create_dir(&cache).unwrap();
    let o = bin()
        .args(["export-toy-weights", "--out"])
        .arg(cache.join("style3d-mv.safetensors"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let out = dir.path().join("out");
    let o = bin()
        .env("STYLE3D_CACHE", &cache)
        .args(["run", "--backend", "pretrained", "--steps", "5", "--config"])
        .arg(quick_config(dir.path()))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report_path = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report["backend"]["kind"], "pretrained");
    assert_eq!(report["config"]["steps"], 5, "flag must override the file");
    assert!(report["backend"]["source_id"].as_str().unwrap().contains("style3d-mv.safetensors"));
    assert!(report_path.with_file_name("mesh.glb").is_file());
}

#[test]
fn eval_subcommand_writes_reports_and_refuses_clip() {
    let dir = tempfile::tempdir().unwrap();
    let views = dir.path().join("views");
    std::fs::create_dir(&views).unwrap();
    for i in 0..6 {
        std::fs::copy(asset("style.png"), views.join(format!("view_{i}.png"))).unwrap();
    }
    let entry = serde_json::json!([{
        "content": asset("content.png"),
        "style": asset("style.png"),
        "views_dir": "views",
        "prompt": "a red mug"
    }]);
    let manifest = dir.path().join("manifest.json");
    std::fs::write(&manifest, entry.to_string()).unwrap();

    let out = dir.path().join("scores");
    let o = bin().args(["eval", "--manifest"]).arg(&manifest).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("report.json").is_file());
    assert!(out.join("report.csv").is_file());

    let o = bin().args(["eval", "--embedder", "clip", "--manifest"]).arg(&manifest).output().unwrap();
    assert_eq!(code(&o), 3);

    let o = bin().args(["eval", "--manifest"]).arg(dir.path().join("none.json")).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_subcommand_rejects_bad_values_with_2() {
    let o = bin()
        .args(["sweep", "--param", "lambda", "--values", "1,-1", "--content"])
        .arg(asset("content.png"))
        .arg("--style")
        .arg(asset("style.png"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
