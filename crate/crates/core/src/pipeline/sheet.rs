use font8x8::legacy::BASIC_LEGACY;
use image::{imageops, Rgb, RgbImage};

const GLYPH: u32 = 8;
const PAD: u32 = 4;
const TILE_SCALE: u32 = 2;

/// Draws ASCII text in an 8×8 bitmap font; other characters render as `?`.
pub fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let code = if ch.is_ascii() { ch as usize } else { '?' as usize };
        for (row, bits) in BASIC_LEGACY[code].iter().enumerate() {
            for col in 0..GLYPH {
                if bits >> col & 1 == 1 {
                    let (x, y) = (x0 + i as u32 * GLYPH + col, y0 + row as u32);
                    if x < img.width() && y < img.height() {
                        img.put_pixel(x, y, color);
                    }
                }
            }
        }
    }
}

/// One column per labelled tile, label above, tiles upscaled by 2 with
/// nearest-neighbour sampling.
pub fn contact_sheet(tiles: &[(String, &RgbImage)]) -> RgbImage {
    let label_h = GLYPH + 2 * PAD;
    let col_w = tiles
        .iter()
        .map(|(l, t)| (t.width() * TILE_SCALE).max(l.chars().count() as u32 * GLYPH))
        .max()
        .unwrap_or(0)
        + 2 * PAD;
    let tile_h = tiles.iter().map(|(_, t)| t.height() * TILE_SCALE).max().unwrap_or(0);
    let mut sheet = RgbImage::from_pixel(
        (col_w * tiles.len() as u32).max(1),
        label_h + tile_h + PAD,
        Rgb([255, 255, 255]),
    );
    for (i, (label, tile)) in tiles.iter().enumerate() {
        let x = i as u32 * col_w + PAD;
        draw_text(&mut sheet, x, PAD, label, Rgb([0, 0, 0]));
        let big = imageops::resize(
            *tile,
            tile.width() * TILE_SCALE,
            tile.height() * TILE_SCALE,
            imageops::FilterType::Nearest,
        );
        imageops::replace(&mut sheet, &big, x as i64, label_h as i64);
    }
    sheet
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_leave_ink_and_tiles_are_placed() {
        let t = RgbImage::from_pixel(4, 6, Rgb([10, 200, 10]));
        let s = contact_sheet(&[("a=1".into(), &t), ("b=2".into(), &t)]);
        let ink = s.pixels().filter(|p| p.0 == [0, 0, 0]).count();
        assert!(ink > 10);
        assert_eq!(s.get_pixel(PAD, GLYPH + 2 * PAD).0, [10, 200, 10]);
    }
}
