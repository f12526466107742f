//! Real-valued 2-D maps and their on-disk formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{shape, CosmoError, Result};

/// Row-major `h x w` grid of real values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"RIMG";

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return shape(format!(
                "{h}x{w} image needs {} values, got {}",
                h * w,
                data.len()
            ));
        }
        Ok(Image { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(f(i, j));
            }
        }
        Image { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.w + j] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    pub fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return shape(format!("{:?} vs {:?}", self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Mean absolute difference.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64)
    }

    /// Raw grid: magic, `u32` height, `u32` width, little-endian `f64` values.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.h as u32).to_le_bytes())?;
        w.write_all(&(self.w as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(CosmoError::Format(format!(
                "{} is not a raw image",
                path.display()
            )));
        }
        let h = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
        let mut bytes = vec![0u8; h * w * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Image::new(h, w, data)
    }

    /// 8-bit grayscale preview, linearly mapped from `[0, vmax]`.
    pub fn write_png(&self, path: &Path, vmax: Option<f64>) -> Result<()> {
        let top = vmax.unwrap_or_else(|| self.max()).max(1e-12);
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| ((v / top).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::GrayImage::from_raw(self.w as u32, self.h as u32, bytes)
            .ok_or_else(|| CosmoError::Format("png buffer size".into()))?;
        buf.save(path)?;
        Ok(())
    }
}
