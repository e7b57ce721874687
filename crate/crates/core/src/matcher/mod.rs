//! Simplified recurrent stereo backbone: shared-weight extractor, a single
//! all-pairs epipolar correlation volume and a convolutional GRU that
//! refines disparity from zero.
//!
//! Disparities are positive with the right feature sampled at `x - d`.

mod extractor;
mod update;

pub use extractor::{BoundExtractor, Domain, ExtractorParams, FeatureMap, View, EXTRACTOR_DEPTH, INPUT_MEAN, INPUT_STD};
pub use update::{BoundUpdate, UpdateParams};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Backbone hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatcherConfig {
    /// Feature width `C`.
    pub channels: usize,
    /// Downsample factor `s` of the extractor.
    pub downsample: usize,
    pub hidden: usize,
    pub motion: usize,
    /// Largest disparity in the correlation volume, in feature pixels.
    pub max_disp: usize,
    /// Lookup radius around the current estimate, in feature pixels.
    pub radius: usize,
    /// Number of refinement iterations `N`.
    pub iters: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            channels: 32,
            downsample: 4,
            hidden: 16,
            motion: 16,
            max_disp: 4,
            radius: 3,
            iters: 6,
        }
    }
}

/// Per-iteration predictions, first to last.
#[derive(Clone, Debug)]
pub struct DisparitySequence {
    /// `[H, W, 1]` at input resolution.
    pub preds: Vec<Var>,
    /// `[H/s, W/s, 1]` in feature pixels.
    pub low_res: Vec<Var>,
    pub hidden: Var,
}

impl DisparitySequence {
    pub fn last(&self) -> Var {
        *self.preds.last().expect("sequence is never empty")
    }
}

/// Records the correlation volume `[H, W, max_disp + 1]` of two feature maps.
pub fn build_correlation<T: Scalar>(tape: &mut Tape<T>, left: Var, right: Var, max_disp: usize) -> Result<Var> {
    tape.correlation(left, right, max_disp)
}

/// Correlation volume of detached feature maps.
pub fn correlation_volume<T: Scalar>(left: &FeatureMap<T>, right: &FeatureMap<T>, max_disp: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new(crate::tensor::Mode::Strict);
    let l = tape.constant(left.values.clone());
    let r = tape.constant(right.values.clone());
    let v = tape.correlation(l, r, max_disp)?;
    Ok(tape.value(v).clone())
}

/// Iterative refinement from given left/right feature maps. The left map is
/// also the GRU context.
pub fn refine<T: Scalar>(
    tape: &mut Tape<T>,
    update: &BoundUpdate,
    cfg: &MatcherConfig,
    left: Var,
    right: Var,
    iters: usize,
) -> Result<DisparitySequence> {
    if iters == 0 {
        return Err(Error::InvalidArgument("iteration count must be at least 1".into()));
    }
    let volume = tape.correlation(left, right, cfg.max_disp)?;
    let (h, w) = (tape.shape(left)[0], tape.shape(left)[1]);
    let mut disparity = tape.constant(Tensor::zeros(&[h, w, 1]));
    let mut hidden = update.initial_hidden(tape, left)?;
    let mut preds = Vec::with_capacity(iters);
    let mut low_res = Vec::with_capacity(iters);
    for _ in 0..iters {
        let corr = tape.corr_lookup(volume, disparity, cfg.radius)?;
        let (h_next, delta) = update.step(tape, hidden, left, corr, disparity)?;
        hidden = h_next;
        disparity = tape.add(disparity, delta)?;
        low_res.push(disparity);
        let s = cfg.downsample;
        preds.push(tape.upsample(disparity, s, s as f64)?);
    }
    Ok(DisparitySequence { preds, low_res, hidden })
}

/// Full prediction from a rectified image pair. `features_override`
/// replaces the extractor output (used to inject converted or fused
/// features).
#[allow(clippy::too_many_arguments)]
pub fn predict<T: Scalar>(
    tape: &mut Tape<T>,
    extractor: &BoundExtractor,
    update: &BoundUpdate,
    cfg: &MatcherConfig,
    left: Var,
    right: Var,
    features_override: Option<(Var, Var)>,
    iters: usize,
) -> Result<DisparitySequence> {
    if tape.shape(left) != tape.shape(right) {
        return Err(Error::shape(
            "predict",
            format!("left {:?} vs right {:?}", tape.shape(left), tape.shape(right)),
        ));
    }
    let (fl, fr) = match features_override {
        Some(pair) => pair,
        None => (extractor.forward(tape, left)?, extractor.forward(tape, right)?),
    };
    let seq = refine(tape, update, cfg, fl, fr, iters)?;
    let expected = &tape.shape(left)[..2];
    if &tape.shape(seq.last())[..2] != expected {
        return Err(Error::shape(
            "predict",
            format!("features do not upsample to image size {expected:?}"),
        ));
    }
    Ok(seq)
}

#[cfg(test)]
mod tests;
