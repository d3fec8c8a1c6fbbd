//! PNG previews of rasters with optional trajectory overlays.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::{draw, Raster, MAP_CHANNELS};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::loss::{softmax_confidences, MixtureOutput};

const TARGET_RGB: [u8; 3] = [0, 230, 80];
const OTHERS_RGB: [u8; 3] = [40, 140, 255];
const LEGEND_TEXT: [u8; 3] = [255, 255, 255];

/// Hypothesis colors, cycled when K exceeds the table.
pub const HYPOTHESIS_COLORS: [[u8; 3]; 8] = [
    [230, 25, 75],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
];

// 3×5 glyphs, one row per byte, most significant of the low 3 bits is the left column
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '=' => [0b000, 0b111, 0b000, 0b111, 0b000],
        'c' => [0b000, 0b111, 0b100, 0b100, 0b111],
        ' ' => [0; 5],
        _ => return None,
    })
}

struct Image {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Image {
    fn put(&mut self, u: usize, v: usize, c: [u8; 3]) {
        if u < self.width && v < self.height {
            let i = 3 * (v * self.width + u);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn text(&mut self, mut u: usize, v: usize, s: &str, c: [u8; 3]) {
        for ch in s.chars() {
            if let Some(rows) = glyph(ch) {
                for (dy, row) in rows.iter().enumerate() {
                    for dx in 0..3 {
                        if row & (0b100 >> dx) != 0 {
                            self.put(u + dx, v + dy, c);
                        }
                    }
                }
            }
            u += 4;
        }
    }
}

fn compose(raster: &Raster) -> Image {
    let (w, h) = (raster.width, raster.height);
    let mut img = Image {
        width: w,
        height: h,
        rgb: vec![0; 3 * w * h],
    };
    for i in 0..w * h {
        for c in 0..MAP_CHANNELS {
            img.rgb[3 * i + c] = raster.plane(c)[i];
        }
    }
    let th = raster.history_len();
    // older snapshots fade toward the background
    let shade = |rgb: [u8; 3], t: usize| rgb.map(|x| ((x as usize) * (t + 1 + th) / (2 * th)) as u8);
    for t in 0..th {
        for (block, rgb) in [
            (raster.others_channel(t), OTHERS_RGB),
            (raster.target_channel(t), TARGET_RGB),
        ] {
            let color = shade(rgb, t);
            for (i, &x) in raster.plane(block).iter().enumerate() {
                if x != 0 {
                    img.rgb[3 * i..3 * i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    img
}

/// Writes an 8-bit RGB PNG of the map and history masks. With an overlay,
/// each hypothesis (local-frame meters) is drawn as a polyline in its own
/// color and a `c<k>=<confidence>` legend is printed top-left.
pub fn render_png(raster: &Raster, overlay: Option<&MixtureOutput>, path: impl AsRef<Path>) -> Result<()> {
    render_png_annotated(raster, overlay, &[], path)
}

/// [`render_png`] plus `tEXt` chunks, e.g. the configuration that produced
/// the image. No timestamp chunk is ever written.
pub fn render_png_annotated(
    raster: &Raster,
    overlay: Option<&MixtureOutput>,
    text: &[(&str, &str)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut img = compose(raster);

    if let Some(out) = overlay {
        let conf = softmax_confidences(&out.logits);
        for k in 0..out.k {
            let color = HYPOTHESIS_COLORS[k % HYPOTHESIS_COLORS.len()];
            let mut pts = vec![raster.frame.local_to_pixel(Vec2::ZERO)];
            pts.extend((0..out.horizon).map(|t| raster.frame.local_to_pixel(out.mean(k, t))));
            draw::polyline_pixels(&pts, img.width, img.height, |u, v| img.put(u, v, color));
        }
        for k in 0..out.k {
            let color = HYPOTHESIS_COLORS[k % HYPOTHESIS_COLORS.len()];
            let v = 2 + 7 * k;
            for dv in 0..5 {
                for du in 0..5 {
                    img.put(2 + du, v + dv, color);
                }
            }
            img.text(9, v, &format!("c{}={:.2}", k + 1, conf[k]), LEGEND_TEXT);
        }
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let io_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    for (key, value) in text {
        encoder
            .add_text_chunk(key.to_string(), value.to_string())
            .map_err(io_err)?;
    }
    let mut writer = encoder.write_header().map_err(io_err)?;
    writer.write_image_data(&img.rgb).map_err(io_err)?;
    writer.finish().map_err(io_err)?;
    Ok(())
}
