//! Binary PGM image output.
//!
//! Grayscale dumps for visual inspection of image-shaped samples.
//! Pixel values in [0, 1] map linearly to the 8-bit range; values
//! outside are clamped. The reader exists for round-trip tests and
//! accepts only files this module writes (binary `P5`, maxval 255).

use crate::nn::Tensor;
use crate::{Error, Result};
use std::path::Path;

/// Writes one `height x width` image.
pub fn write_pgm(path: &Path, image: &Tensor<f64>) -> Result<()> {
    let (h, w) = (image.rows, image.cols);
    if h == 0 || w == 0 {
        return Err(Error::Shape("image must be non-empty".into()));
    }
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for i in 0..h {
        for j in 0..w {
            bytes.push(quantize(image.get(i, j)));
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Tiles a batch of square images into a single grid image. Each row
/// of `batch` must be a flattened `side x side` image; the montage has
/// `cols_in_grid` tiles per row with a 1-pixel black gutter.
pub fn write_pgm_montage(path: &Path, batch: &Tensor<f64>, cols_in_grid: usize) -> Result<()> {
    if batch.rows == 0 || cols_in_grid == 0 {
        return Err(Error::Shape(
            "montage needs images and a positive width".into(),
        ));
    }
    let side = (batch.cols as f64).sqrt().round() as usize;
    if side * side != batch.cols || side == 0 {
        return Err(Error::Shape(format!(
            "rows of length {} are not square images",
            batch.cols
        )));
    }
    let n = batch.rows;
    let grid_rows = n.div_ceil(cols_in_grid);
    let out_h = grid_rows * side + (grid_rows - 1);
    let out_w = cols_in_grid * side + (cols_in_grid - 1);
    let mut canvas = Tensor::<f64>::zeros(out_h, out_w);
    for idx in 0..n {
        let gr = idx / cols_in_grid;
        let gc = idx % cols_in_grid;
        let r0 = gr * (side + 1);
        let c0 = gc * (side + 1);
        for i in 0..side {
            for j in 0..side {
                canvas.set(r0 + i, c0 + j, batch.get(idx, i * side + j));
            }
        }
    }
    write_pgm(path, &canvas)
}

/// Reads a binary PGM written by [`write_pgm`]; pixels come back in
/// [0, 1] at 8-bit resolution.
pub fn read_pgm(path: &Path) -> Result<Tensor<f64>> {
    let bytes = std::fs::read(path)?;
    let header_err = |what: &str| Error::Data(format!("pgm header: {what}"));
    if !bytes.starts_with(b"P5\n") {
        return Err(header_err("missing P5 magic"));
    }
    let rest = &bytes[3..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err("missing size line"))?;
    let size_line =
        std::str::from_utf8(&rest[..nl]).map_err(|_| header_err("size line is not utf-8"))?;
    let mut parts = size_line.split_whitespace();
    let w: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err("bad width"))?;
    let h: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err("bad height"))?;
    let rest = &rest[nl + 1..];
    if !rest.starts_with(b"255\n") {
        return Err(header_err("maxval must be 255"));
    }
    let pixels = &rest[4..];
    if pixels.len() != w * h {
        return Err(Error::Data(format!(
            "pgm payload holds {} bytes, expected {}",
            pixels.len(),
            w * h
        )));
    }
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(h, w, data))
}

fn quantize(v: f64) -> u8 {
    let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (c * 255.0).round() as u8
}
