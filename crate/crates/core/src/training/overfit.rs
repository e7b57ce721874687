//! Fitting a fresh matcher to a single stereogram.

use crate::config::{ExperimentConfig, TrainDomains};
use crate::error::Result;
use crate::image::{DisparityMap, Image};
use crate::metrics::stereo_eval;
use crate::parallel::Execution;
use crate::synth::Scene;
use crate::tensor::{Mode, Scalar, Tape};

use super::models::{student_forward, StereoModel};
use super::train::{sample_tensors, LogRow, TrainSample, Trainer};

/// EPE of every refinement iteration, first to last.
pub fn iteration_epe<T: Scalar>(model: &StereoModel<T>, left: &Image, right: &Image, gt: &DisparityMap) -> Result<Vec<f64>> {
    let mut tape = Tape::new(Mode::Training);
    let bound = model.bind(&mut tape, false);
    let pair = (tape.constant(left.to_tensor()), tape.constant(right.to_tensor()));
    let out = student_forward(&mut tape, &bound, pair, model.config.iters, true)?;
    out.seq
        .expect("disparity requested")
        .preds
        .iter()
        .map(|&p| Ok(stereo_eval(&DisparityMap::from_tensor(tape.value(p))?, gt, None)?.epe))
        .collect()
}

#[derive(Clone, Debug)]
pub struct OverfitReport {
    pub log: Vec<LogRow>,
    /// Per-iteration EPE of the final model on the clean pair.
    pub iter_epe: Vec<f64>,
    pub model: StereoModel<f32>,
}

impl OverfitReport {
    pub fn final_epe(&self) -> f64 {
        *self.iter_epe.last().expect("at least one iteration")
    }

    pub fn steps(&self) -> usize {
        self.log.len()
    }
}

/// Trains a clean-only student on `scene` for `steps` steps.
pub fn overfit_scene(cfg: &ExperimentConfig, scene: &Scene, steps: usize) -> Result<OverfitReport> {
    let mut cfg = cfg.clone();
    cfg.train_domains = TrainDomains::Clean;
    cfg.use_dist = false;
    cfg.use_cont = false;
    cfg.batch_size = 1;
    cfg.student_steps = steps;
    let samples: Vec<TrainSample<f32>> = vec![sample_tensors(scene)];
    let trained = Trainer::student(&cfg, &samples, None, Execution::Sequential)?.run()?;
    Ok(OverfitReport {
        iter_epe: iteration_epe(&trained.model, &scene.clean_left, &scene.clean_right, &scene.disp_left)?,
        model: trained.model,
        log: trained.log,
    })
}
