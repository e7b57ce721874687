//! Homogeneous fog: Beer-Lambert transmission and the atmospheric scattering
//! model `I = J T + L (1 - T)`.

use crate::error::{Error, Result};
use crate::image::{DepthMap, DisparityMap, Image};
use crate::tensor::Tensor;

/// Disparities at or below this many pixels are treated as invalid.
pub const DEFAULT_MIN_DISPARITY: f64 = 0.1;

/// Transmission below which the analytic inverse is not trusted.
pub const DEFAULT_TRANSMISSION_FLOOR: f64 = 1e-6;

/// Pinhole stereo rig.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRig {
    pub focal_px: f64,
    pub baseline_m: f64,
}

impl CameraRig {
    pub fn new(focal_px: f64, baseline_m: f64) -> Result<Self> {
        let rig = CameraRig { focal_px, baseline_m };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) || !(self.baseline_m > 0.0 && self.baseline_m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "camera rig needs positive focal length and baseline, got f={} B={}",
                self.focal_px, self.baseline_m
            )));
        }
        Ok(())
    }

    /// `f * B`, the depth-disparity product.
    pub fn depth_scale(&self) -> f64 {
        self.focal_px * self.baseline_m
    }
}

/// Attenuation coefficient (1/m) and per-channel atmospheric light.
///
/// A single-element `airlight` applies to every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FogParams {
    pub beta: f64,
    pub airlight: Vec<f64>,
}

impl FogParams {
    pub fn gray(beta: f64, airlight: f64) -> Self {
        FogParams {
            beta,
            airlight: vec![airlight],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.airlight.is_empty() || self.airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument(format!(
                "airlight must be non-empty with entries in [0, 1], got {:?}",
                self.airlight
            )));
        }
        Ok(())
    }

    fn airlight_for(&self, channel: usize) -> f64 {
        if self.airlight.len() == 1 {
            self.airlight[0]
        } else {
            self.airlight[channel]
        }
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if self.airlight.len() != 1 && self.airlight.len() != channels {
            return Err(Error::shape(
                "fog",
                format!("{} airlight values for {channels} channels", self.airlight.len()),
            ));
        }
        Ok(())
    }
}

/// Depth used for pixels whose depth is invalid.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum FallbackDepth {
    /// The largest valid depth in the frame.
    #[default]
    MaxValid,
    Fixed(f64),
}

/// `Z = f B / d`, marking `d <= DEFAULT_MIN_DISPARITY` invalid.
pub fn disparity_to_depth(disp: &DisparityMap, rig: &CameraRig) -> Result<DepthMap> {
    disparity_to_depth_with(disp, rig, DEFAULT_MIN_DISPARITY)
}

pub fn disparity_to_depth_with(disp: &DisparityMap, rig: &CameraRig, min_disparity: f64) -> Result<DepthMap> {
    rig.validate()?;
    let scale = rig.depth_scale();
    let mut values = Vec::with_capacity(disp.data.len());
    let mut valid = Vec::with_capacity(disp.data.len());
    for &d in &disp.data {
        let ok = d.is_finite() && d > min_disparity;
        values.push(if ok { scale / d } else { 0.0 });
        valid.push(ok);
    }
    Ok(DepthMap {
        height: disp.height,
        width: disp.width,
        values,
        valid,
    })
}

fn effective_depths(depth: &DepthMap, fallback: FallbackDepth) -> Vec<f64> {
    let fill = match fallback {
        FallbackDepth::MaxValid => depth.max_valid().unwrap_or(f64::INFINITY),
        FallbackDepth::Fixed(z) => z,
    };
    depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(&z, &ok)| if ok { z } else { fill })
        .collect()
}

fn beer_lambert(beta: f64, z: f64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        (-beta * z).exp()
    }
}

/// `T = exp(-beta Z)` as an `[H, W]` tensor; invalid pixels take the frame's
/// maximum valid depth.
pub fn transmission(depth: &DepthMap, beta: f64) -> Result<Tensor<f64>> {
    transmission_with(depth, beta, FallbackDepth::MaxValid)
}

pub fn transmission_with(depth: &DepthMap, beta: f64, fallback: FallbackDepth) -> Result<Tensor<f64>> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
    }
    let t = effective_depths(depth, fallback)
        .into_iter()
        .map(|z| beer_lambert(beta, z))
        .collect();
    Tensor::from_vec(&[depth.height, depth.width], t)
}

/// Renders `I = J T + L (1 - T)` per pixel and channel.
pub fn render_fog(clean: &Image, depth: &DepthMap, fog: &FogParams) -> Result<Image> {
    render_fog_with(clean, depth, fog, FallbackDepth::MaxValid)
}

pub fn render_fog_with(clean: &Image, depth: &DepthMap, fog: &FogParams, fallback: FallbackDepth) -> Result<Image> {
    fog.validate()?;
    fog.check_channels(clean.channels)?;
    if (clean.height, clean.width) != (depth.height, depth.width) {
        return Err(Error::shape(
            "render_fog",
            format!(
                "image {}x{} vs depth {}x{}",
                clean.height, clean.width, depth.height, depth.width
            ),
        ));
    }
    if let Some(v) = clean.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("clean image value {v} outside [0, 1]")));
    }
    let t = transmission_with(depth, fog.beta, fallback)?;
    let c = clean.channels;
    let data = clean
        .data
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let tx = t.data()[i / c];
            let l = fog.airlight_for(i % c);
            j * tx + l * (1.0 - tx)
        })
        .collect();
    Image::new(clean.height, clean.width, c, data)
}

/// Output of [`dehaze_oracle`].
#[derive(Clone, Debug)]
pub struct Dehazed {
    pub image: Image,
    /// `false` where transmission fell below the floor; those pixels keep
    /// their foggy value.
    pub reliable: Vec<bool>,
}

/// Analytic inverse `J = (I - L (1 - T)) / T`.
pub fn dehaze_oracle(foggy: &Image, depth: &DepthMap, fog: &FogParams) -> Result<Dehazed> {
    dehaze_oracle_with(foggy, depth, fog, DEFAULT_TRANSMISSION_FLOOR)
}

pub fn dehaze_oracle_with(foggy: &Image, depth: &DepthMap, fog: &FogParams, floor: f64) -> Result<Dehazed> {
    fog.validate()?;
    fog.check_channels(foggy.channels)?;
    if (foggy.height, foggy.width) != (depth.height, depth.width) {
        return Err(Error::shape("dehaze_oracle", "image and depth sizes differ"));
    }
    let t = transmission(depth, fog.beta)?;
    let c = foggy.channels;
    let reliable: Vec<bool> = t.data().iter().map(|&tx| tx >= floor).collect();
    let data = foggy
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let tx = t.data()[i / c];
            if reliable[i / c] {
                let l = fog.airlight_for(i % c);
                (v - l * (1.0 - tx)) / tx
            } else {
                v
            }
        })
        .collect();
    Ok(Dehazed {
        image: Image::new(foggy.height, foggy.width, c, data)?,
        reliable,
    })
}
