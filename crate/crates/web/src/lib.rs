//! wasm-bindgen entry points for the static demo page in `www/`.

use image::{DynamicImage, RgbaImage};
use style3d::attn::{fused_weights, row_entropy, Beta};
use style3d::diffusion::{build_bank, generate_multiview, preprocess};
use style3d::mesh::{extract_mesh, SdfGrid, SignConvention};
use style3d::nn::{gaussian_matrix, rng};
use style3d::pipeline::{load_backend, parse_config, ConfigLayer};
use wasm_bindgen::prelude::*;

fn js_err(e: style3d::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    entropy: Vec<f64>,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }
    /// Row-major, each row sums to 1.
    #[wasm_bindgen(getter)]
    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }
    /// Per-row entropy in nats.
    #[wasm_bindgen(getter)]
    pub fn entropy(&self) -> Vec<f64> {
        self.entropy.clone()
    }
}

/// Fused attention weights for seeded random queries and keys. The
/// preserve-queries are a perturbation of the content queries, so β moves
/// the pattern smoothly.
#[wasm_bindgen]
pub fn attention_heatmap(queries: usize, keys: usize, dim: usize, beta_c: f64, lambda: f64, seed: u64) -> Result<Heatmap, JsError> {
    if queries == 0 || keys == 0 || dim == 0 {
        return Err(JsError::new("queries, keys and dim must be positive"));
    }
    let mut r = rng(seed);
    let qc = gaussian_matrix(&mut r, queries, dim, 1.0);
    let qp = &qc + &gaussian_matrix(&mut r, queries, dim, 1.5);
    let k = gaussian_matrix(&mut r, keys, dim, 1.0);
    let beta = Beta::from_content(beta_c).map_err(js_err)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(JsError::new("lambda must be positive"));
    }
    let w = fused_weights(qc.view(), qp.view(), k.view(), beta, lambda).map_err(js_err)?;
    Ok(Heatmap {
        rows: queries,
        cols: keys,
        entropy: row_entropy(w.view()),
        weights: w.iter().copied().collect(),
    })
}

#[wasm_bindgen]
pub struct MeshPreview {
    positions: Vec<f32>,
    indices: Vec<u32>,
    #[wasm_bindgen(readonly)]
    pub watertight: bool,
    #[wasm_bindgen(readonly)]
    pub euler: i32,
    #[wasm_bindgen(readonly)]
    pub volume: f64,
    #[wasm_bindgen(readonly)]
    pub area: f64,
}

#[wasm_bindgen]
impl MeshPreview {
    /// xyz triples.
    #[wasm_bindgen(getter)]
    pub fn positions(&self) -> Vec<f32> {
        self.positions.clone()
    }
    /// Triangle vertex indices.
    #[wasm_bindgen(getter)]
    pub fn indices(&self) -> Vec<u32> {
        self.indices.clone()
    }
}

/// Extracts the zero level of a sphere whose radius is modulated by
/// `wobble · sin(3x) sin(3y) sin(3z)`.
#[wasm_bindgen]
pub fn sphere_mesh(res: usize, radius: f64, wobble: f64) -> Result<MeshPreview, JsError> {
    if !(4..=64).contains(&res) {
        return Err(JsError::new("resolution must be in 4..=64"));
    }
    let f = |p: [f64; 3]| {
        let r = radius + wobble * (3.0 * p[0]).sin() * (3.0 * p[1]).sin() * (3.0 * p[2]).sin();
        r - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
    };
    let grid = SdfGrid::from_fn(res, SignConvention::PositiveInside, f).map_err(js_err)?;
    let mesh = extract_mesh(&grid).map_err(js_err)?;
    let s = mesh.stats();
    Ok(MeshPreview {
        positions: mesh.vertices().iter().flatten().map(|&x| x as f32).collect(),
        indices: mesh.faces().iter().flatten().copied().collect(),
        watertight: s.watertight,
        euler: s.euler_characteristic as i32,
        volume: s.volume,
        area: s.area,
    })
}

#[wasm_bindgen]
pub struct Stylised {
    #[wasm_bindgen(readonly)]
    pub width: u32,
    #[wasm_bindgen(readonly)]
    pub height: u32,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Stylised {
    /// RGBA of the 3×2 view tile, ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

fn rgba(data: Vec<u8>, w: u32, h: u32, what: &str) -> Result<DynamicImage, JsError> {
    RgbaImage::from_raw(w, h, data)
        .map(DynamicImage::ImageRgba8)
        .ok_or_else(|| JsError::new(&format!("{what}: buffer does not match {w}x{h} RGBA")))
}

/// Six stylised views from the toy backend. Inputs are raw RGBA buffers as
/// read from a canvas.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn stylise(
    content: Vec<u8>,
    content_w: u32,
    content_h: u32,
    style: Vec<u8>,
    style_w: u32,
    style_h: u32,
    beta_c: f64,
    lambda: f64,
    steps: usize,
    seed: u64,
) -> Result<Stylised, JsError> {
    let flags = ConfigLayer {
        beta_c: Some(beta_c),
        lambda: Some(lambda),
        steps: Some(steps),
        seed: Some(seed),
        ..Default::default()
    };
    let cfg = parse_config(None, &flags).map_err(js_err)?;
    let backend = load_backend(&cfg).map_err(js_err)?;
    let attn = cfg.attn_config().map_err(js_err)?;
    let (c, _) = preprocess(&rgba(content, content_w, content_h, "content")?, backend.view_size);
    let (s, _) = preprocess(&rgba(style, style_w, style_h, "style")?, backend.view_size);
    let bank = build_bank(&c, &s, &backend, &attn, cfg.steps, cfg.freeze_preserve_query).map_err(js_err)?;
    let grid = generate_multiview(&c, &bank, &backend, &attn, cfg.steps, cfg.seed).map_err(js_err)?;
    let tile = DynamicImage::ImageRgb8(grid.tile_image).to_rgba8();
    Ok(Stylised {
        width: tile.width(),
        height: tile.height(),
        rgba: tile.into_raw(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_rows_are_distributions() {
        let h = attention_heatmap(6, 9, 4, 0.5, 1.5, 3).unwrap();
        assert_eq!(h.weights.len(), 54);
        for row in h.weights.chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(h.entropy.iter().all(|&e| (0.0..=9f64.ln() + 1e-9).contains(&e)));
    }

    #[test]
    fn sphere_preview_is_closed() {
        let m = sphere_mesh(20, 0.6, 0.1).unwrap();
        assert!(m.watertight);
        assert_eq!(m.euler, 2);
        assert_eq!(m.positions.len() % 3, 0);
        assert!(m.indices.iter().all(|&i| (i as usize) < m.positions.len() / 3));
    }

    #[test]
    fn stylise_returns_a_tile() {
        let c = vec![200u8; 16 * 16 * 4];
        let s: Vec<u8> = (0..24 * 24 * 4).map(|i| (i * 37 % 256) as u8).collect();
        let out = stylise(c, 16, 16, s, 24, 24, 0.5, 1.5, 4, 42).unwrap();
        assert_eq!(out.rgba.len() as u32, out.width * out.height * 4);
    }
}
