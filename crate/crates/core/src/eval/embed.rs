use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps images and text into a shared space compared by cosine similarity.
pub trait Embedder {
    /// Stable identifier recorded in reports.
    fn id(&self) -> String;
    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// Deterministic colour-vocabulary embedder; needs no weights.
    Palette,
    /// A CLIP image/text model. No CLIP runtime is bundled.
    Clip,
}

impl FromStr for EmbedderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "palette" | "stub" => Ok(Self::Palette),
            "clip" => Ok(Self::Clip),
            other => Err(Error::invalid("embedder", format!("`{other}` is not palette or clip"))),
        }
    }
}

/// Builds the requested embedder or reports why it cannot be used.
pub fn make_embedder(kind: EmbedderKind) -> Result<Box<dyn Embedder>> {
    match kind {
        EmbedderKind::Palette => Ok(Box::new(PaletteEmbedder::default())),
        EmbedderKind::Clip => Err(Error::EmbedderUnavailable(
            "no CLIP runtime is compiled into this build; use --embedder palette or supply an Embedder implementation".into(),
        )),
    }
}

/// Named reference colours shared by the image and text sides.
pub const PALETTE: [(&str, [f64; 3]); 11] = [
    ("black", [0.0, 0.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("gray", [0.5, 0.5, 0.5]),
    ("red", [0.85, 0.1, 0.1]),
    ("orange", [0.95, 0.55, 0.1]),
    ("yellow", [0.95, 0.9, 0.15]),
    ("green", [0.15, 0.7, 0.2]),
    ("cyan", [0.1, 0.8, 0.85]),
    ("blue", [0.1, 0.2, 0.85]),
    ("purple", [0.55, 0.15, 0.7]),
    ("brown", [0.45, 0.28, 0.12]),
];

const SYNONYMS: [(&str, &str); 6] = [
    ("grey", "gray"),
    ("violet", "purple"),
    ("magenta", "purple"),
    ("crimson", "red"),
    ("navy", "blue"),
    ("golden", "yellow"),
];

/// Images become soft palette histograms, text becomes the indicator of the
/// colour words it mentions. Both are unit vectors with non-negative entries,
/// so similarities lie in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct PaletteEmbedder {
    /// Softmax temperature over squared RGB distance.
    pub temperature: f64,
}

impl Default for PaletteEmbedder {
    fn default() -> Self {
        Self { temperature: 0.02 }
    }
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl Embedder for PaletteEmbedder {
    fn id(&self) -> String {
        format!("palette-v1(t={})", self.temperature)
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::invalid("image", "empty raster"));
        }
        let mut hist = vec![0.0; PALETTE.len()];
        let mut w = vec![0.0; PALETTE.len()];
        for p in img.pixels() {
            let c = p.0.map(|v| v as f64 / 255.0);
            for (k, (_, ref_c)) in PALETTE.iter().enumerate() {
                let d: f64 = (0..3).map(|i| (c[i] - ref_c[i]).powi(2)).sum();
                w[k] = -d / self.temperature;
            }
            let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = w.iter().map(|x| (x - m).exp()).sum();
            for k in 0..PALETTE.len() {
                hist[k] += (w[k] - m).exp() / z;
            }
        }
        Ok(unit(hist))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; PALETTE.len()];
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
        {
            let word = SYNONYMS
                .iter()
                .find(|(s, _)| *s == word)
                .map_or(word.as_str(), |(_, c)| c);
            if let Some(k) = PALETTE.iter().position(|(n, _)| *n == word) {
                v[k] += 1.0;
            }
        }
        if v.iter().all(|&x| x == 0.0) {
            v.fill(1.0);
        }
        Ok(unit(v))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("embeddings of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("embedding", "zero vector has no direction"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
