//! Plain raster containers shared by fog rendering, metrics and file I/O.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interleaved `H x W x C` image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "image",
                format!("{height}x{width}x{channels} needs {} values, got {}", height * width * channels, data.len()),
            ));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        &self.data[(y * self.width + x) * self.channels..][..self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        &mut self.data[(y * self.width + x) * self.channels..][..self.channels]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64_slice(&[self.height, self.width, self.channels], &self.data)
            .expect("image dimensions are consistent")
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Dense single-channel `H x W` map of disparities in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "disparity map",
                format!("{height}x{width} needs {} values, got {}", height * width, data.len()),
            ));
        }
        Ok(DisparityMap { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        DisparityMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// `[H, W, 1]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64_slice(&[self.height, self.width, 1], &self.data)
            .expect("map dimensions are consistent")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [h, w] | [h, w, 1] => DisparityMap::new(h, w, t.to_f64_vec()),
            ref s => Err(Error::shape("disparity map", format!("tensor shape {s:?}"))),
        }
    }
}

/// Metric depth `Z` in metres with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map in which every finite positive entry is valid.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "depth map",
                format!("{height}x{width} needs {} values, got {}", height * width, values.len()),
            ));
        }
        let valid = values.iter().map(|&z| z.is_finite() && z > 0.0).collect();
        Ok(DepthMap {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Largest valid depth, if any pixel is valid.
    pub fn max_valid(&self) -> Option<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(&z, _)| z)
            .reduce(f64::max)
    }
}
