use std::io::Write;
use std::path::Path;

use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Channel-major RGB image (`[3, height, width]`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

pub const CHANNELS: usize = 3;

impl Image {
    /// Values are clamped to `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * width * height {
            return Err(Error::shape(
                "Image::new",
                format!("{}x{} needs {} values, got {}", width, height, 3 * width * height, data.len()),
            ));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); CHANNELS * width * height],
        }
    }

    pub fn from_array(a: &Array) -> Result<Self> {
        match a.shape() {
            [3, h, w] => Self::new(*w, *h, a.data().to_vec()),
            s => Err(Error::shape("Image::from_array", format!("{s:?}"))),
        }
    }

    pub fn to_array(&self) -> Array {
        Array::new(vec![CHANNELS, self.height, self.width], self.data.clone())
            .expect("image buffer matches its dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Per-pixel mean over the three channels, row-major `[height, width]`.
    pub fn grayscale(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| (self.data[i] + self.data[n + i] + self.data[2 * n + i]) / 3.0)
            .collect()
    }

    /// Binary PPM (P6, maxval 255), values rounded half-to-even.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        let n = self.width * self.height;
        out.reserve(3 * n);
        for i in 0..n {
            for c in 0..CHANNELS {
                let v = (self.data[c * n + i] * 255.0).round_ties_even();
                out.push(v.clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}
