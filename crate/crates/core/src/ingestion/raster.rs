//! Lossless raster IO: 8-bit RGB and single-band PNG, 32-bit float TIFF.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::{GrayImage, RgbImage};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};

fn raster_err(path: &Path, e: impl ToString) -> Error {
    Error::Raster {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn ensure_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(())
}

/// Returns `(height, width, interleaved RGB bytes)`.
pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    ensure_exists(path)?;
    let img = image::open(path).map_err(|e| raster_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

pub fn write_rgb(path: &Path, height: usize, width: usize, data: &[u8]) -> Result<()> {
    let img = RgbImage::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| raster_err(path, "buffer does not match extent"))?;
    img.save(path).map_err(|e| raster_err(path, e))
}

pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    ensure_exists(path)?;
    let img = image::open(path).map_err(|e| raster_err(path, e))?;
    if img.color() != image::ColorType::L8 {
        return Err(raster_err(path, format!("expected 8-bit single band, found {:?}", img.color())));
    }
    let img = img.to_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

pub fn write_gray(path: &Path, height: usize, width: usize, data: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| raster_err(path, "buffer does not match extent"))?;
    img.save(path).map_err(|e| raster_err(path, e))
}

pub fn read_f32(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    ensure_exists(path)?;
    let file = File::open(path)?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| raster_err(path, e))?;
    let (w, h) = dec.dimensions().map_err(|e| raster_err(path, e))?;
    match dec.read_image().map_err(|e| raster_err(path, e))? {
        DecodingResult::F32(v) if v.len() == (w * h) as usize => Ok((h as usize, w as usize, v)),
        _ => Err(raster_err(path, "expected single-band 32-bit float samples")),
    }
}

pub fn write_f32(path: &Path, height: usize, width: usize, data: &[f32]) -> Result<()> {
    if data.len() != height * width {
        return Err(raster_err(path, "buffer does not match extent"));
    }
    let file = File::create(path)?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| raster_err(path, e))?;
    enc.write_image::<colortype::Gray32Float>(width as u32, height as u32, data)
        .map_err(|e| raster_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_and_byte_rasters_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let f: Vec<f32> = (0..12).map(|i| i as f32 * 0.1 - 0.35).collect();
        write_f32(&dir.path().join("d.tif"), 3, 4, &f).unwrap();
        assert_eq!(read_f32(&dir.path().join("d.tif")).unwrap(), (3, 4, f));
        let rgb: Vec<u8> = (0..36).map(|i| (i * 7) as u8).collect();
        write_rgb(&dir.path().join("r.png"), 3, 4, &rgb).unwrap();
        assert_eq!(read_rgb(&dir.path().join("r.png")).unwrap(), (3, 4, rgb));
        let g: Vec<u8> = (0..12).collect();
        write_gray(&dir.path().join("g.png"), 3, 4, &g).unwrap();
        assert_eq!(read_gray(&dir.path().join("g.png")).unwrap(), (3, 4, g));
        assert!(matches!(read_rgb(&dir.path().join("nope.png")), Err(Error::MissingFile(_))));
    }
}
