//! Teacher and student models, their losses, and the training loops.

mod eval;
mod losses;
mod models;
mod optim;
mod overfit;
mod train;

pub use eval::{evaluate_student, evaluate_teacher, predict_student, predict_teacher, DomainEval};
pub use losses::{
    channel_norm_distance, distillation_loss, disparity_seq_loss, student_total_loss, triplet_contrastive_loss,
    LossBreakdown, StudentLoss, StudentLossSwitches,
};
pub use models::{
    student_forward, teacher_forward, BoundModel, StereoModel, StudentModel, StudentOutput, TeacherModel,
    TeacherOutput,
};
pub use optim::{step_decay_lr, Adam, AdamConfig};
pub use overfit::{iteration_epe, overfit_scene, OverfitReport};
pub use train::{
    sample_tensors, teacher_targets, train_student, train_teacher, LogRow, TrainSample, TrainedModel, Trainer,
    LOG_HEADER,
};

use crate::error::{Error, Result};

/// Loss weighting for teacher and student objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the distillation term.
    pub lambda1: f64,
    /// Weight of the contrastive term.
    pub lambda2: f64,
    /// Per-iteration decay of the sequence loss.
    pub gamma: f64,
    /// Triplet margin.
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.1,
            gamma: 0.95,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}
