use crate::error::Result;
use crate::image::{DisparityMap, Image};
use crate::metrics::{stereo_eval, StereoEval};
use crate::parallel::{map_slice, Execution};
use crate::synth::Scene;
use crate::tensor::{Mode, Scalar, Tape};

use super::models::{student_forward, teacher_forward, StereoModel};

/// Student results on the clean and foggy version of the same scenes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DomainEval {
    pub clean: StereoEval,
    pub fog: StereoEval,
}

impl DomainEval {
    pub fn mean(items: &[DomainEval]) -> DomainEval {
        let clean: Vec<StereoEval> = items.iter().map(|e| e.clean).collect();
        let fog: Vec<StereoEval> = items.iter().map(|e| e.fog).collect();
        DomainEval {
            clean: StereoEval::mean(&clean),
            fog: StereoEval::mean(&fog),
        }
    }

    /// Mean EPE over both domains.
    pub fn epe(&self) -> f64 {
        0.5 * (self.clean.epe + self.fog.epe)
    }
}

/// Final disparity of a single-domain pair.
pub fn predict_student<T: Scalar>(model: &StereoModel<T>, left: &Image, right: &Image) -> Result<DisparityMap> {
    let mut tape = Tape::new(Mode::Training);
    let bound = model.bind(&mut tape, false);
    let pair = (tape.constant(left.to_tensor()), tape.constant(right.to_tensor()));
    let out = student_forward(&mut tape, &bound, pair, model.config.iters, true)?;
    let last = out.seq.expect("disparity requested").last();
    DisparityMap::from_tensor(tape.value(last))
}

/// Final disparity from a clean and a foggy pair of the same scene.
pub fn predict_teacher<T: Scalar>(
    model: &StereoModel<T>,
    clean: (&Image, &Image),
    fog: (&Image, &Image),
) -> Result<DisparityMap> {
    let mut tape = Tape::new(Mode::Training);
    let bound = model.bind(&mut tape, false);
    let c = (tape.constant(clean.0.to_tensor()), tape.constant(clean.1.to_tensor()));
    let f = (tape.constant(fog.0.to_tensor()), tape.constant(fog.1.to_tensor()));
    let out = teacher_forward(&mut tape, &bound, c, f, model.config.iters)?;
    DisparityMap::from_tensor(tape.value(out.seq.last()))
}

/// Per-scene student metrics, in scene order.
pub fn evaluate_student<T: Scalar>(model: &StereoModel<T>, scenes: &[Scene], exec: Execution) -> Result<Vec<DomainEval>> {
    map_slice(exec, scenes, |s| {
        let clean = predict_student(model, &s.clean_left, &s.clean_right)?;
        let fog = predict_student(model, &s.fog_left, &s.fog_right)?;
        Ok(DomainEval {
            clean: stereo_eval(&clean, &s.disp_left, None)?,
            fog: stereo_eval(&fog, &s.disp_left, None)?,
        })
    })
    .into_iter()
    .collect()
}

/// Per-scene teacher metrics, in scene order.
pub fn evaluate_teacher<T: Scalar>(model: &StereoModel<T>, scenes: &[Scene], exec: Execution) -> Result<Vec<StereoEval>> {
    map_slice(exec, scenes, |s| {
        let pred = predict_teacher(model, (&s.clean_left, &s.clean_right), (&s.fog_left, &s.fog_right))?;
        stereo_eval(&pred, &s.disp_left, None)
    })
    .into_iter()
    .collect()
}
