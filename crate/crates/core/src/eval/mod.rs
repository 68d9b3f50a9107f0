//! Embedding-similarity evaluation of stylised views: text-image alignment
//! with a prompt and image-image fidelity to the content image.

mod embed;

pub use embed::{cosine, make_embedder, Embedder, EmbedderKind, PaletteEmbedder, PALETTE};

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::diffusion::NUM_VIEWS;
use crate::error::{Error, Result};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn per_view(views: &[RgbImage], target: &[f64], embedder: &dyn Embedder) -> Result<Vec<f64>> {
    if views.is_empty() {
        return Err(Error::invalid("views", "at least one view is required"));
    }
    views
        .iter()
        .map(|v| cosine(&embedder.embed_image(v)?, target))
        .collect()
}

/// Mean cosine similarity between the prompt and each view.
pub fn clip_text_image(views: &[RgbImage], prompt: &str, embedder: &dyn Embedder) -> Result<f64> {
    Ok(mean(&text_image_scores(views, prompt, embedder)?))
}

/// Mean cosine similarity between the content image and each view.
pub fn clip_image_image(views: &[RgbImage], content: &RgbImage, embedder: &dyn Embedder) -> Result<f64> {
    Ok(mean(&image_image_scores(views, content, embedder)?))
}

fn text_image_scores(views: &[RgbImage], prompt: &str, embedder: &dyn Embedder) -> Result<Vec<f64>> {
    if prompt.trim().is_empty() {
        return Err(Error::invalid("prompt", "must not be empty"));
    }
    per_view(views, &embedder.embed_text(prompt)?, embedder)
}

fn image_image_scores(views: &[RgbImage], content: &RgbImage, embedder: &dyn Embedder) -> Result<Vec<f64>> {
    per_view(views, &embedder.embed_image(content)?, embedder)
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub content: PathBuf,
    pub style: PathBuf,
    /// Holds `view_0.png` … `view_5.png`.
    pub views_dir: PathBuf,
    pub prompt: String,
}

/// How case scores are pooled into the aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over every (case, view) pair.
    #[default]
    Flat,
    /// Mean of per-case means.
    PerCase,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "per_case" | "per-case" => Ok(Self::PerCase),
            other => Err(Error::invalid("aggregation", format!("`{other}` is not flat or per_case"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub case_id: String,
    pub content_id: String,
    pub style_id: String,
    pub prompt: String,
    pub views: Vec<RgbImage>,
    pub content: RgbImage,
}

impl EvalCase {
    pub fn new(
        case_id: String,
        content_id: String,
        style_id: String,
        prompt: String,
        views: Vec<RgbImage>,
        content: RgbImage,
    ) -> Result<Self> {
        if views.len() != NUM_VIEWS {
            return Err(Error::invalid(
                "views",
                format!("case `{case_id}` has {} views, expected {NUM_VIEWS}", views.len()),
            ));
        }
        Ok(Self {
            case_id,
            content_id,
            style_id,
            prompt,
            views,
            content,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseScore {
    pub case_id: String,
    pub content: String,
    pub style: String,
    pub prompt: String,
    pub text_image: f64,
    pub image_image: f64,
    text_views: Vec<f64>,
    image_views: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub embedder: String,
    pub aggregation: Aggregation,
    pub config_hash: String,
    pub cases: Vec<CaseScore>,
    pub mean_text_image: f64,
    pub mean_image_image: f64,
}

pub fn score_case(case: &EvalCase, embedder: &dyn Embedder) -> Result<CaseScore> {
    let text_views = text_image_scores(&case.views, &case.prompt, embedder)?;
    let image_views = image_image_scores(&case.views, &case.content, embedder)?;
    Ok(CaseScore {
        case_id: case.case_id.clone(),
        content: case.content_id.clone(),
        style: case.style_id.clone(),
        prompt: case.prompt.clone(),
        text_image: mean(&text_views),
        image_image: mean(&image_views),
        text_views,
        image_views,
    })
}

/// Aggregates already-scored cases.
pub fn aggregate(
    cases: Vec<CaseScore>,
    embedder_id: String,
    aggregation: Aggregation,
    config_hash: String,
) -> Result<ScoreReport> {
    if cases.is_empty() {
        return Err(Error::invalid("manifest", "contains no cases"));
    }
    let pool = |case_mean: fn(&CaseScore) -> f64, views: fn(&CaseScore) -> &[f64]| match aggregation {
        Aggregation::PerCase => mean(&cases.iter().map(case_mean).collect::<Vec<_>>()),
        Aggregation::Flat => mean(&cases.iter().flat_map(|c| views(c).iter().copied()).collect::<Vec<_>>()),
    };
    let mean_text_image = pool(|c| c.text_image, |c| &c.text_views);
    let mean_image_image = pool(|c| c.image_image, |c| &c.image_views);
    Ok(ScoreReport {
        embedder: embedder_id,
        aggregation,
        config_hash,
        cases,
        mean_text_image,
        mean_image_image,
    })
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn view_paths(views_dir: &Path) -> Vec<PathBuf> {
    (0..NUM_VIEWS).map(|i| views_dir.join(format!("view_{i}.png"))).collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let entries: Vec<ManifestEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if entries.is_empty() {
        return Err(Error::invalid("manifest", "contains no cases"));
    }
    Ok(entries)
}

/// sha256 over the embedder, aggregation and manifest entries.
pub fn config_hash(entries: &[ManifestEntry], embedder_id: &str, aggregation: Aggregation) -> Result<String> {
    let canon = serde_json::to_vec(&(embedder_id, aggregation, entries))?;
    Ok(Sha256::digest(&canon).iter().map(|b| format!("{b:02x}")).collect())
}

/// Scores every case of a manifest. Every referenced file is checked before
/// any scoring; all missing paths are reported together.
pub fn eval_run(manifest: &Path, embedder: &dyn Embedder, aggregation: Aggregation) -> Result<ScoreReport> {
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut missing = Vec::new();
    for e in &entries {
        let mut need = vec![base.join(&e.content), base.join(&e.style)];
        need.extend(view_paths(&base.join(&e.views_dir)));
        missing.extend(need.into_iter().filter(|p| !p.is_file()));
    }
    if !missing.is_empty() {
        return Err(Error::MissingAssets(missing));
    }
    let hash = config_hash(&entries, &embedder.id(), aggregation)?;
    let cases = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let views = view_paths(&base.join(&e.views_dir))
                .iter()
                .map(|p| Ok(image::open(p)?.to_rgb8()))
                .collect::<Result<Vec<_>>>()?;
            let content = image::open(base.join(&e.content))?.to_rgb8();
            let (c, s) = (file_stem(&e.content), file_stem(&e.style));
            let case = EvalCase::new(format!("{i:03}_{c}_{s}"), c, s, e.prompt.clone(), views, content)?;
            score_case(&case, embedder)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(cases, embedder.id(), aggregation, hash)
}

fn fixed(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.6}")).expect("a fixed-point number is valid JSON")
}

#[derive(Serialize)]
struct CaseJson<'a> {
    case_id: &'a str,
    content: &'a str,
    style: &'a str,
    prompt: &'a str,
    text_image: Box<RawValue>,
    image_image: Box<RawValue>,
}

#[derive(Serialize)]
struct MeanJson {
    text_image: Box<RawValue>,
    image_image: Box<RawValue>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    embedder: &'a str,
    aggregation: Aggregation,
    config_hash: &'a str,
    num_cases: usize,
    mean: MeanJson,
    cases: Vec<CaseJson<'a>>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ScoreReport {
    /// Stable key order, scores fixed to 6 decimals.
    pub fn to_json(&self) -> String {
        let r = ReportJson {
            embedder: &self.embedder,
            aggregation: self.aggregation,
            config_hash: &self.config_hash,
            num_cases: self.cases.len(),
            mean: MeanJson {
                text_image: fixed(self.mean_text_image),
                image_image: fixed(self.mean_image_image),
            },
            cases: self
                .cases
                .iter()
                .map(|c| CaseJson {
                    case_id: &c.case_id,
                    content: &c.content,
                    style: &c.style,
                    prompt: &c.prompt,
                    text_image: fixed(c.text_image),
                    image_image: fixed(c.image_image),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&r).expect("report serialises");
        s.push('\n');
        s
    }

    /// `case_id,text_image,image_image`, one row per case, then `MEAN`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,text_image,image_image\n");
        for c in &self.cases {
            s += &format!("{},{:.6},{:.6}\n", csv_field(&c.case_id), c.text_image, c.image_image);
        }
        s += &format!("MEAN,{:.6},{:.6}\n", self.mean_text_image, self.mean_image_image);
        s
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<[PathBuf; 2]> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("report.json");
        let csv = dir.join("report.csv");
        std::fs::write(&json, self.to_json())?;
        std::fs::write(&csv, self.to_csv())?;
        Ok([json, csv])
    }
}
