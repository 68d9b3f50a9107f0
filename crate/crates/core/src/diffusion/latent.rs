use image::{imageops, DynamicImage, Rgb, RgbImage, Rgba};
use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// Latent image stored as `[rows·cols × channels]`, tokens in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub data: Array2<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Latent {
    pub fn new(data: Array2<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.nrows() != rows * cols {
            return Err(Error::shape(format!(
                "latent has {} tokens, expected {rows}×{cols}",
                data.nrows()
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels() == other.channels()
    }
}

/// Fixed orthonormal 4×3 colour mixing, so decoding inverts encoding
/// exactly for pooled colours.
const MIX: [[f64; 3]; 4] = [
    [0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.5, 0.5, -0.5],
    [0.5, -0.5, -0.5],
];

pub const LATENT_CHANNELS: usize = 4;

/// Toy image autoencoder: average pooling plus a colour mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatentCodec {
    pub factor: usize,
}

impl LatentCodec {
    pub fn encode(&self, img: &RgbImage) -> Result<Latent> {
        let f = self.factor;
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        if f == 0 || w % f != 0 || h % f != 0 {
            return Err(Error::shape(format!(
                "image {w}×{h} is not divisible by the latent factor {f}"
            )));
        }
        let (rows, cols) = (h / f, w / f);
        let mut data = Array2::zeros((rows * cols, LATENT_CHANNELS));
        let norm = 1.0 / (f * f) as f64;
        for r in 0..rows {
            for c in 0..cols {
                let mut rgb = [0.0; 3];
                for y in 0..f {
                    for x in 0..f {
                        let p = img.get_pixel((c * f + x) as u32, (r * f + y) as u32);
                        for (k, acc) in rgb.iter_mut().enumerate() {
                            *acc += p[k] as f64 / 255.0;
                        }
                    }
                }
                let centred = rgb.map(|v| 2.0 * v * norm - 1.0);
                for (ch, mix) in MIX.iter().enumerate() {
                    data[[r * cols + c, ch]] =
                        mix[0] * centred[0] + mix[1] * centred[1] + mix[2] * centred[2];
                }
            }
        }
        Latent::new(data, rows, cols)
    }

    /// Colour at each latent cell, before upsampling.
    fn cell_colours(&self, z: &Latent) -> Vec<[f64; 3]> {
        z.data
            .rows()
            .into_iter()
            .map(|row| {
                let mut rgb = [0.0; 3];
                for (k, out) in rgb.iter_mut().enumerate() {
                    let s: f64 = (0..LATENT_CHANNELS).map(|ch| MIX[ch][k] * row[ch]).sum();
                    *out = ((s + 1.0) * 0.5).clamp(0.0, 1.0);
                }
                rgb
            })
            .collect()
    }

    /// Bilinear upsampling of the decoded cell colours.
    pub fn decode(&self, z: &Latent) -> RgbImage {
        let f = self.factor;
        let colours = self.cell_colours(z);
        let (w, h) = (z.cols * f, z.rows * f);
        let at = |r: usize, c: usize| colours[r * z.cols + c];
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let fy = ((y as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (z.rows - 1) as f64);
            let fx = ((x as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (z.cols - 1) as f64);
            let (r0, c0) = (fy.floor() as usize, fx.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(z.rows - 1), (c0 + 1).min(z.cols - 1));
            let (ty, tx) = (fy - r0 as f64, fx - c0 as f64);
            let mut px = [0u8; 3];
            for (k, out) in px.iter_mut().enumerate() {
                let top = at(r0, c0)[k] * (1.0 - tx) + at(r0, c1)[k] * tx;
                let bot = at(r1, c0)[k] * (1.0 - tx) + at(r1, c1)[k] * tx;
                *out = ((top * (1.0 - ty) + bot * ty) * 255.0).round() as u8;
            }
            Rgb(px)
        })
    }
}

/// How an input image was brought to backend resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preprocessing {
    pub original_size: (u32, u32),
    pub had_alpha: bool,
    pub background: &'static str,
    pub squared_by: &'static str,
    pub resized_to: u32,
}

/// Alpha-composites over white, pads to a centred square with white and
/// resizes to `size × size`.
pub fn preprocess(img: &DynamicImage, size: u32) -> (RgbImage, Preprocessing) {
    let had_alpha = img.color().has_alpha();
    let rgba = img.to_rgba8();
    let (w, h) = rgba.dimensions();
    let side = w.max(h).max(1);
    let mut canvas = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let (ox, oy) = ((side - w) / 2, (side - h) / 2);
    for (x, y, Rgba([r, g, b, a])) in rgba.enumerate_pixels() {
        let a = *a as f64 / 255.0;
        let mix = |c: u8| (c as f64 * a + 255.0 * (1.0 - a)).round() as u8;
        canvas.put_pixel(x + ox, y + oy, Rgb([mix(*r), mix(*g), mix(*b)]));
    }
    let out = if side == size {
        canvas
    } else {
        imageops::resize(&canvas, size, size, imageops::FilterType::Triangle)
    };
    (
        out,
        Preprocessing {
            original_size: (w, h),
            had_alpha,
            background: "white",
            squared_by: if w == h { "none" } else { "centred padding" },
            resized_to: size,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_solid_colour() {
        let codec = LatentCodec { factor: 4 };
        let img = RgbImage::from_pixel(8, 12, Rgb([200, 40, 90]));
        let z = codec.encode(&img).unwrap();
        assert_eq!((z.rows, z.cols, z.channels()), (3, 2, 4));
        let back = codec.decode(&z);
        assert_eq!(back.dimensions(), (8, 12));
        for p in back.pixels() {
            assert_eq!(p.0, [200, 40, 90]);
        }
    }

    #[test]
    fn encode_rejects_indivisible() {
        let codec = LatentCodec { factor: 8 };
        assert!(codec.encode(&RgbImage::new(10, 16)).is_err());
    }

    #[test]
    fn preprocess_pads_and_composites() {
        let mut img = image::RgbaImage::from_pixel(4, 2, Rgba([0, 0, 0, 255]));
        img.put_pixel(0, 0, Rgba([0, 0, 0, 0]));
        let (out, info) = preprocess(&DynamicImage::ImageRgba8(img), 4);
        assert!(info.had_alpha);
        assert_eq!(out.dimensions(), (4, 4));
        // top row is padding, transparent pixel became white
        assert_eq!(out.get_pixel(0, 0).0, [255, 255, 255]);
        assert_eq!(out.get_pixel(0, 1).0, [255, 255, 255]);
        assert_eq!(out.get_pixel(1, 1).0, [0, 0, 0]);
    }
}
