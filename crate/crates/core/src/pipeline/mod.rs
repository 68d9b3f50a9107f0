//! End-to-end orchestration: configuration, the content + style → views →
//! mesh run, parameter sweeps and run reports.

mod config;
mod sheet;
mod sweep;

pub use config::{parse_config, ConfigLayer, RunConfig, DEFAULT_LAMBDA, DEFAULT_SEED, DEFAULT_STEPS};
pub use sheet::{contact_sheet, draw_text};
pub use sweep::{parse_sweep_values, sweep, SweepEntry, SweepParam, SweepReport, SweepValue};

use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attn::{select_target_layers, AttnConfig};
use crate::diffusion::{build_bank, generate_multiview, preprocess, BackendHandle, BackendKind, Preprocessing};
use crate::error::{Error, Result};
use crate::mesh::{write_glb, write_obj, MeshStats};
use crate::recon::{save_checkpoint, PosedViewBatch, Reconstructor};

pub const TOOL_NAME: &str = "style3d";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendInfo {
    pub kind: BackendKind,
    pub source_id: String,
    pub view_size: u32,
    /// Attention layers whose processors were replaced, in backbone order.
    pub hooked_layers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputInfo {
    pub path: PathBuf,
    pub sha256: String,
    /// Includes the alpha-compositing background.
    pub preprocessing: Preprocessing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inputs {
    pub content: InputInfo,
    pub style: InputInfo,
}

/// A file in the run directory; `path` is relative to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub name: String,
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub faces: usize,
    pub watertight: bool,
    pub euler_characteristic: i64,
    pub volume: f64,
    pub area: f64,
    pub defects: usize,
}

impl From<&MeshStats> for MeshSummary {
    fn from(s: &MeshStats) -> Self {
        Self {
            vertices: s.vertices,
            faces: s.faces,
            watertight: s.watertight,
            euler_characteristic: s.euler_characteristic,
            volume: s.volume,
            area: s.area,
            defects: s.defects.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconSummary {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Contents of `report.json`. Wall-clock timings live in `timings.json`
/// so that the report itself is byte-deterministic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: ToolInfo,
    pub config: RunConfig,
    pub config_hash: String,
    pub backend: BackendInfo,
    pub inputs: Inputs,
    pub artifacts: Vec<Artifact>,
    pub mesh: MeshSummary,
    pub reconstruction: ReconSummary,
    pub timings_file: String,
    #[serde(skip)]
    pub run_dir: PathBuf,
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Default)]
pub(crate) struct Timer(Vec<StageTiming>);

impl Timer {
    pub(crate) fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("{stage}…");
        let t = Instant::now();
        let out = f()?;
        let seconds = t.elapsed().as_secs_f64();
        log::info!("{stage} done in {seconds:.2}s");
        self.0.push(StageTiming {
            stage: stage.into(),
            seconds,
        });
        Ok(out)
    }

    pub(crate) fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.0)? + "\n")?;
        Ok(())
    }
}

/// A hidden sibling directory that becomes `dst` on commit and is deleted
/// if dropped uncommitted.
pub(crate) struct Staging {
    tmp: PathBuf,
    dst: PathBuf,
    committed: bool,
}

impl Staging {
    pub(crate) fn new(parent: &Path, name: &str) -> Result<Self> {
        std::fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{name}.partial"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir(&tmp)?;
        Ok(Self {
            tmp,
            dst: parent.join(name),
            committed: false,
        })
    }

    pub(crate) fn path(&self) -> &Path {
        &self.tmp
    }

    pub(crate) fn commit(mut self) -> Result<PathBuf> {
        if self.dst.exists() {
            std::fs::remove_dir_all(&self.dst)?;
        }
        std::fs::rename(&self.tmp, &self.dst)?;
        self.committed = true;
        Ok(self.dst.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.tmp);
        }
    }
}

pub fn load_backend(cfg: &RunConfig) -> Result<BackendHandle> {
    match cfg.backend {
        BackendKind::Toy => BackendHandle::toy(&cfg.toy),
        BackendKind::Pretrained => {
            let path = BackendHandle::resolve_weights(cfg.weights.as_deref())?;
            BackendHandle::load_pretrained(&path)
        }
    }
}

/// Everything a run needs before the first denoiser call.
pub(crate) struct Prepared {
    pub backend: BackendHandle,
    pub attn: AttnConfig,
    pub hooked: Vec<String>,
    pub content: RgbImage,
    pub style: RgbImage,
    pub inputs: Inputs,
}

fn load_input(path: &Path, field: &str, size: u32) -> Result<(RgbImage, InputInfo)> {
    let bytes = std::fs::read(path)?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::invalid(field, format!("{} does not decode: {e}", path.display())))?;
    let (rgb, preprocessing) = preprocess(&img, size);
    let info = InputInfo {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        preprocessing,
    };
    Ok((rgb, info))
}

/// Validates the config, checks that inputs exist, loads the backend and
/// decodes the inputs, in that order.
pub(crate) fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    for (field, p) in [("content", &cfg.content), ("style", &cfg.style)] {
        if p.as_os_str().is_empty() {
            return Err(Error::invalid(field, "no image path given"));
        }
        if !p.is_file() {
            return Err(Error::MissingInput(p.clone()));
        }
    }
    let backend = load_backend(cfg)?;
    let attn = cfg.attn_config()?;
    let hooked = select_target_layers(&backend.layer_names(), &attn)?;
    let (content, content_info) = load_input(&cfg.content, "content", backend.view_size)?;
    let (style, style_info) = load_input(&cfg.style, "style", backend.view_size)?;
    Ok(Prepared {
        backend,
        attn,
        hooked,
        content,
        style,
        inputs: Inputs {
            content: content_info,
            style: style_info,
        },
    })
}

/// Hash of everything that determines the outputs: the config without its
/// paths, the input bytes and the backend identity.
pub(crate) fn config_hash(cfg: &RunConfig, p: &Prepared, extra: &serde_json::Value) -> Result<String> {
    let mut c = cfg.clone();
    c.content = PathBuf::new();
    c.style = PathBuf::new();
    c.out = PathBuf::new();
    let canon = serde_json::to_vec(&(
        &c,
        &p.inputs.content.sha256,
        &p.inputs.style.sha256,
        &p.backend.source_id,
        extra,
    ))?;
    Ok(sha256_hex(&canon))
}

pub(crate) fn describe(dir: &Path, names: &[String]) -> Result<Vec<Artifact>> {
    names
        .iter()
        .map(|n| {
            let bytes = std::fs::read(dir.join(n))?;
            Ok(Artifact {
                name: n.clone(),
                path: PathBuf::from(n),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

/// Runs capture, stylised generation, reconstruction and mesh export and
/// commits the outputs to `<out>/<hash prefix>` only once all succeeded.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let mut timer = Timer::default();
    let p = timer.time("prepare", || prepare(cfg))?;
    let hash = config_hash(cfg, &p, &serde_json::Value::Null)?;
    let staging = Staging::new(&cfg.out, &hash[..16])?;
    let dir = staging.path().to_path_buf();

    let bank = timer.time("capture", || {
        build_bank(&p.content, &p.style, &p.backend, &p.attn, cfg.steps, cfg.freeze_preserve_query)
    })?;
    let grid = timer.time("generate", || {
        generate_multiview(&p.content, &bank, &p.backend, &p.attn, cfg.steps, cfg.seed)
    })?;
    let mut names: Vec<String> = grid
        .save(&dir)?
        .iter()
        .map(|f| f.file_name().expect("saved file").to_string_lossy().into_owned())
        .collect();

    let rec = timer.time("reconstruct", || {
        let images: Vec<RgbImage> = grid.views.iter().map(|v| v.image.clone()).collect();
        let batch = PosedViewBatch::from_images(&images, &grid.poses())?;
        Reconstructor::new(cfg.recon)?.reconstruct(&batch, cfg.sign_convention)
    })?;
    timer.time("export", || {
        write_obj(&rec.mesh, &dir.join("mesh.obj"))?;
        write_glb(&rec.mesh, &dir.join("mesh.glb"))?;
        save_checkpoint(&rec.field, &dir.join("field.safetensors"))
    })?;
    names.extend(["mesh.obj", "mesh.glb", "field.safetensors"].map(String::from));

    let losses: Vec<f64> = rec.history.iter().map(|s| s.report.total).collect();
    let mut report = RunReport {
        tool: ToolInfo::current(),
        config: cfg.clone(),
        config_hash: hash,
        backend: BackendInfo {
            kind: p.backend.kind,
            source_id: p.backend.source_id.clone(),
            view_size: p.backend.view_size,
            hooked_layers: p.hooked.clone(),
        },
        inputs: p.inputs.clone(),
        artifacts: describe(&dir, &names)?,
        mesh: MeshSummary::from(&rec.mesh.stats()),
        reconstruction: ReconSummary {
            steps: losses.len(),
            initial_loss: losses.first().copied().unwrap_or(0.0),
            final_loss: losses.last().copied().unwrap_or(0.0),
        },
        timings_file: TIMINGS_FILE.into(),
        run_dir: PathBuf::new(),
        timings: Vec::new(),
    };
    timer.write(&dir.join(TIMINGS_FILE))?;
    std::fs::write(dir.join(REPORT_FILE), report.to_json()?)?;
    report.run_dir = staging.commit()?;
    report.timings = timer.0;
    Ok(report)
}
