use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::load_checkpoint;
use crate::tensor::Tensor;

use super::preprocess::{preprocess_slice, resize_nearest};

/// A grayscale image with intensities scaled to `[0, 1]` by `maxval`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
}

/// Binary PGM (`P5`) with 8- or 16-bit samples.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |m: &str| Error::Data(format!("PGM: {m}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary P5 file"));
    }
    let num = |t: String| t.parse::<usize>().map_err(|_| bad("bad header number"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    drop(token);
    if w == 0 || h == 0 || !(1..=65535).contains(&maxval) {
        return Err(bad("bad dimensions or maxval"));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    let wide = maxval > 255;
    let need = h * w * if wide { 2 } else { 1 };
    if body.len() < need {
        return Err(bad("truncated pixel data"));
    }
    let pixels = if wide {
        body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32).collect()
    } else {
        body[..need].iter().map(|&v| v as f32 / maxval as f32).collect()
    };
    Ok(GrayImage { h, w, pixels })
}

pub fn encode_pgm(h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_ppm(h: usize, w: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    out
}

/// Fixed class colours; class `c` uses `PALETTE[c % len]`, background is left unblended.
pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [145, 30, 180],
    [245, 130, 48],
    [70, 240, 240],
];

/// Gray image blended half-and-half with the class colour on foreground pixels.
pub fn overlay(image: &[f32], mask: &[u8]) -> Vec<[u8; 3]> {
    image
        .iter()
        .zip(mask)
        .map(|(&v, &c)| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round();
            if c == 0 {
                [g as u8; 3]
            } else {
                let col = PALETTE[c as usize % PALETTE.len()];
                col.map(|k| ((g + k as f32) / 2.0).round() as u8)
            }
        })
        .collect()
}

fn read_input(path: &Path, fallback: [usize; 2]) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => {
            let [h, w] = fallback;
            if bytes.len() != 4 * h * w {
                return Err(Error::Data(format!("{}: {} bytes, expected {h}x{w} f32 values", path.display(), bytes.len())));
            }
            let pixels = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(GrayImage { h, w, pixels })
        }
        _ => read_pgm(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display()))),
    }
}

/// Predicts every input and writes `<stem>_mask.pgm` (class ids as gray
/// levels) plus `<stem>_overlay.ppm` when `overlay` is set. Raw `.f32`
/// inputs are assumed to have the model's input size. Returns the written
/// paths in order.
pub fn run_prediction(checkpoint: impl AsRef<Path>, inputs: &[PathBuf], out_dir: impl AsRef<Path>, with_overlay: bool) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = &ckpt.model;
    if model.config.in_channels != 1 {
        return Err(Error::Data(format!("prediction reads grayscale images; model expects {} channels", model.config.in_channels)));
    }
    let [mh, mw] = model.config.input_size;
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for path in inputs {
        let img = read_input(path, [mh, mw])?;
        if img.pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite pixel", path.display())));
        }
        let x = preprocess_slice(&img.pixels, img.h, img.w, (mh, mw), None)?;
        let x = Tensor::new(&[1, 1, mh, mw], x.into_data())?;
        let classes = model.segment(&x)?.remove(0);
        let mask = resize_nearest(&classes, mh, mw, img.h, img.w);
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
        let mp = out.join(format!("{stem}_mask.pgm"));
        fs::write(&mp, encode_pgm(img.h, img.w, &mask)).map_err(|e| Error::io(&mp, e))?;
        written.push(mp);
        if with_overlay {
            let norm = preprocess_slice(&img.pixels, img.h, img.w, (img.h, img.w), None)?;
            let op = out.join(format!("{stem}_overlay.ppm"));
            fs::write(&op, encode_ppm(img.h, img.w, &overlay(norm.data(), &mask))).map_err(|e| Error::io(&op, e))?;
            written.push(op);
        }
    }
    Ok(written)
}
