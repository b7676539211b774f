//! RGB float images and their PNG encoding.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps raw interleaved RGB data. Values are not clamped.
    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::dims(width * height * 3, data.len()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn ensure_same_size(&self, other: &Image) -> Result<()> {
        if self.resolution() != other.resolution() {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Mean absolute per-channel difference.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        self.ensure_same_size(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.ensure_same_size(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Peak signal-to-noise ratio in dB for a unit peak.
    pub fn psnr(&self, other: &Image) -> Result<f64> {
        let mse = self.mse(other)?;
        if mse == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(-10.0 * mse.log10())
    }

    /// Channel-averaged grayscale plane.
    pub fn luma_plane(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }

    /// One color channel as a plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| p[c]).collect()
    }

    /// 2x2 box downsample; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Image {
        let w = self.width / 2;
        let h = self.height / 2;
        Image::from_fn(w, h, |x, y| {
            let mut acc = [0.0; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = self.pixel(2 * x + dx, 2 * y + dy);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
            acc.map(|v| v * 0.25)
        })
    }

    /// Encodes as a 16-bit RGB PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut writer = enc.write_header().map_err(|e| Error::Codec(e.to_string()))?;
            let mut bytes = Vec::with_capacity(self.data.len() * 2);
            for v in &self.data {
                let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
                bytes.extend_from_slice(&q.to_be_bytes());
            }
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::Codec(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decodes an 8- or 16-bit RGB/RGBA/gray PNG.
    pub fn from_png(bytes: &[u8]) -> Result<Image> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Codec(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Codec("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Codec(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let sixteen = info.bit_depth == png::BitDepth::Sixteen;
        let sample = |i: usize| -> f64 {
            if sixteen {
                u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / 65535.0
            } else {
                buf[i] as f64 / 255.0
            }
        };
        let mut data = Vec::with_capacity(w * h * 3);
        for p in 0..w * h {
            let base = p * channels;
            match channels {
                1 | 2 => {
                    let g = sample(base);
                    data.extend_from_slice(&[g, g, g]);
                }
                _ => {
                    for c in 0..3 {
                        data.push(sample(base + c));
                    }
                }
            }
        }
        Image::from_raw(w, h, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        crate::io::write_atomic(path, &bytes)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_png(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_16_bit_grid() {
        let img = Image::from_fn(9, 7, |x, y| {
            [
                (x * 1000) as f64 / 65535.0,
                (y * 3000) as f64 / 65535.0,
                ((x + y) * 17) as f64 / 65535.0,
            ]
        });
        let back = Image::from_png(&img.to_png().unwrap()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = Image::new(4, 4, [0.3, 0.2, 0.1]);
        assert!(a.psnr(&a).unwrap().is_infinite());
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::from_fn(4, 2, |x, _| [x as f64, 0.0, 1.0]);
        let half = img.downsample2();
        assert_eq!(half.resolution(), (2, 1));
        assert_eq!(half.pixel(0, 0), [0.5, 0.0, 1.0]);
        assert_eq!(half.pixel(1, 0), [2.5, 0.0, 1.0]);
    }
}
