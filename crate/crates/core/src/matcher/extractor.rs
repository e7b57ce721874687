use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{join, BoundConv, Conv2d, Module};
use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};

/// Which image a feature map was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Clean,
    Fog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Left,
    Right,
}

/// Extracted features together with the image they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub values: Tensor<T>,
    pub domain: Domain,
    pub view: View,
}

/// Four 3x3 convolutions; the stride-2 layers reach the downsample factor.
/// ReLU follows every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams<T> {
    pub layers: Vec<Conv2d<T>>,
}

pub const EXTRACTOR_DEPTH: usize = 4;

/// Fixed input normalisation `(x - INPUT_MEAN) / INPUT_STD`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

fn strides_for(downsample: usize) -> Result<Vec<usize>> {
    if !downsample.is_power_of_two() || downsample.trailing_zeros() as usize >= EXTRACTOR_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "downsample factor must be a power of two below {}, got {downsample}",
            1 << EXTRACTOR_DEPTH
        )));
    }
    let halvings = downsample.trailing_zeros() as usize;
    Ok((0..EXTRACTOR_DEPTH)
        .map(|i| if i >= 1 && i <= halvings { 2 } else { 1 })
        .collect())
}

impl<T: Scalar> ExtractorParams<T> {
    pub fn init(in_channels: usize, channels: usize, downsample: usize, rng: &mut impl Rng) -> Result<Self> {
        let strides = strides_for(downsample)?;
        let stem = (channels / 2).max(1);
        let widths = [in_channels, stem, channels, channels, channels];
        let layers = strides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let gain = if i + 1 == EXTRACTOR_DEPTH { 1.0 } else { 2f64.sqrt() };
                Conv2d::init(3, widths[i], widths[i + 1], s, gain, rng)
            })
            .collect();
        Ok(ExtractorParams { layers })
    }

    pub fn downsample(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels())
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundExtractor {
        BoundExtractor {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }

    /// Runs the extractor outside of any training graph.
    pub fn extract(&self, image: &Image, domain: Domain, view: View) -> Result<FeatureMap<T>> {
        let mut tape = Tape::new(Mode::Training);
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(image.to_tensor());
        let f = bound.forward(&mut tape, x)?;
        Ok(FeatureMap {
            values: tape.value(f).clone(),
            domain,
            view,
        })
    }
}

impl<T: Scalar> Module<T> for ExtractorParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("conv{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundExtractor {
    pub layers: Vec<BoundConv>,
}

impl BoundExtractor {
    pub fn downsample(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// `[H, W, 3]` image in `[0, 1]` to `[H/s, W/s, C]` features.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let s = self.downsample();
        let shape = tape.shape(image);
        if shape.len() != 3 || shape[0] % s != 0 || shape[1] % s != 0 {
            return Err(Error::InvalidArgument(format!(
                "image shape {shape:?} is not divisible by the downsample factor {s}; pad it to a multiple of {s}"
            )));
        }
        let x = tape.scale(image, 1.0 / INPUT_STD);
        let mut x = tape.add_scalar(x, -INPUT_MEAN / INPUT_STD);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        for l in &self.layers {
            l.vars(out);
        }
    }
}
