use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::parallel::{map_slice, Execution};
use crate::synth::Scene;
use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};

use super::losses::{disparity_seq_loss, student_total_loss, LossBreakdown, StudentLossSwitches};
use super::models::{teacher_forward, StereoModel};
use super::optim::{step_decay_lr, Adam, AdamConfig};

pub const LOG_HEADER: &str = "step,lr,total,disp_clean,disp_fog,dist,cont,epe";

const TEACHER_INIT_STREAM: u64 = 201;
const STUDENT_INIT_STREAM: u64 = 202;
const TEACHER_BATCH_STREAM: u64 = 301;
const STUDENT_BATCH_STREAM: u64 = 302;

/// One optimisation step, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Final-iteration EPE on the training batch.
    pub epe: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.lr, l.total, l.disp_clean, l.disp_fog, l.dist, l.cont, self.epe
        )
    }
}

/// Tensors of one scene.
#[derive(Clone, Debug)]
pub struct TrainSample<T> {
    pub clean: (Tensor<T>, Tensor<T>),
    pub fog: (Tensor<T>, Tensor<T>),
    /// `[H, W, 1]` left disparity.
    pub gt: Tensor<T>,
}

pub fn sample_tensors<T: Scalar>(scene: &Scene) -> TrainSample<T> {
    TrainSample {
        clean: (scene.clean_left.to_tensor(), scene.clean_right.to_tensor()),
        fog: (scene.fog_left.to_tensor(), scene.fog_right.to_tensor()),
        gt: scene.disp_left.to_tensor(),
    }
}

pub struct TrainedModel {
    pub model: StereoModel<f32>,
    pub log: Vec<LogRow>,
}

/// Fused `(left, right)` teacher features per sample. The teacher is frozen
/// during student training, so these are computed once.
pub fn teacher_targets(
    teacher: &StereoModel<f32>,
    samples: &[TrainSample<f32>],
    exec: Execution,
) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    map_slice(exec, samples, |s| {
        let mut tape = Tape::new(Mode::Training);
        let bound = teacher.bind(&mut tape, false);
        let c = (tape.constant(s.clean.0.clone()), tape.constant(s.clean.1.clone()));
        let f = (tape.constant(s.fog.0.clone()), tape.constant(s.fog.1.clone()));
        let mut fused = Vec::with_capacity(2);
        for (cv, fv) in [(c.0, f.0), (c.1, f.1)] {
            let (_, a) = bound.features(&mut tape, cv)?;
            let (_, b) = bound.features(&mut tape, fv)?;
            let sum = tape.add(a, b)?;
            fused.push(tape.value(sum).clone());
        }
        let right = fused.pop().expect("two views");
        let left = fused.pop().expect("two views");
        Ok((left, right))
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug)]
enum Role {
    Teacher,
    Student(StudentLossSwitches),
}

fn mean_abs_error(tape: &Tape<f32>, pred: Var, gt: Var) -> f64 {
    let (p, g) = (tape.value(pred).data(), tape.value(gt).data());
    p.iter().zip(g).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / p.len().max(1) as f64
}

/// Stepwise optimiser state for either role.
pub struct Trainer<'a> {
    cfg: ExperimentConfig,
    role: Role,
    pub model: StereoModel<f32>,
    adam: Adam,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    total_steps: usize,
    samples: &'a [TrainSample<f32>],
    targets: Option<Vec<(Tensor<f32>, Tensor<f32>)>>,
    exec: Execution,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Trainer<'a> {
    fn new(
        cfg: &ExperimentConfig,
        role: Role,
        samples: &'a [TrainSample<f32>],
        targets: Option<Vec<(Tensor<f32>, Tensor<f32>)>>,
        total_steps: usize,
        exec: Execution,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let (init, batch) = match role {
            Role::Teacher => (TEACHER_INIT_STREAM, TEACHER_BATCH_STREAM),
            Role::Student(_) => (STUDENT_INIT_STREAM, STUDENT_BATCH_STREAM),
        };
        let model = StereoModel::init(&cfg.matcher(), &mut seeded(cfg.seed, init))?;
        Ok(Trainer {
            cfg: cfg.clone(),
            role,
            model,
            adam: Adam::new(AdamConfig {
                lr: cfg.lr,
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
                clip: cfg.clip_grad,
            }),
            rng: seeded(cfg.seed, batch),
            order: Vec::new(),
            cursor: 0,
            step: 0,
            total_steps,
            samples,
            targets,
            exec,
        })
    }

    pub fn teacher(cfg: &ExperimentConfig, samples: &'a [TrainSample<f32>], exec: Execution) -> Result<Self> {
        Trainer::new(cfg, Role::Teacher, samples, None, cfg.teacher_steps, exec)
    }

    /// Student trainer; `teacher` must be given when `cfg.use_dist` is set.
    pub fn student(
        cfg: &ExperimentConfig,
        samples: &'a [TrainSample<f32>],
        teacher: Option<&StereoModel<f32>>,
        exec: Execution,
    ) -> Result<Self> {
        let switches = StudentLossSwitches {
            domains: cfg.train_domains,
            use_dist: cfg.use_dist,
            use_cont: cfg.use_cont,
        };
        let targets = if cfg.use_dist {
            let t = teacher.ok_or_else(|| Error::InvalidArgument("distillation needs a teacher".into()))?;
            Some(teacher_targets(t, samples, exec)?)
        } else {
            None
        };
        Trainer::new(cfg, Role::Student(switches), samples, targets, cfg.student_steps, exec)
    }

    fn next_batch(&mut self) -> Vec<usize> {
        (0..self.cfg.batch_size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = (0..self.samples.len()).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    fn sample_grads(&self, idx: usize) -> Result<(Vec<Tensor<f32>>, LossBreakdown, f64)> {
        let s = &self.samples[idx];
        let iters = self.cfg.iters;
        let mut tape = Tape::new(Mode::Training);
        let bound = self.model.bind(&mut tape, true);
        let clean = (tape.constant(s.clean.0.clone()), tape.constant(s.clean.1.clone()));
        let fog = (tape.constant(s.fog.0.clone()), tape.constant(s.fog.1.clone()));
        let gt = tape.constant(s.gt.clone());
        let (loss, breakdown, epe) = match self.role {
            Role::Teacher => {
                let out = teacher_forward(&mut tape, &bound, clean, fog, iters)?;
                let l = disparity_seq_loss(&mut tape, &out.seq.preds, gt, None, self.cfg.gamma)?;
                let total = tape.value(l).item() as f64;
                let epe = mean_abs_error(&tape, out.seq.last(), gt);
                let b = LossBreakdown {
                    total,
                    ..LossBreakdown::default()
                };
                (l, b, epe)
            }
            Role::Student(sw) => {
                let fused = self.targets.as_ref().map(|t| {
                    let (l, r) = &t[idx];
                    (tape.constant(l.clone()), tape.constant(r.clone()))
                });
                let out = student_total_loss(
                    &mut tape,
                    &bound,
                    clean,
                    fog,
                    gt,
                    None,
                    fused,
                    &self.cfg.loss_weights(),
                    sw,
                    iters,
                )?;
                let n = out.final_preds.len().max(1) as f64;
                let epe = out.final_preds.iter().map(|&p| mean_abs_error(&tape, p, gt)).sum::<f64>() / n;
                (out.loss, out.breakdown, epe)
            }
        };
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {:?} at step {} on training scene {idx}",
                breakdown, self.step
            )));
        }
        tape.backward(loss)?;
        let grads = bound
            .vars()
            .into_iter()
            .map(|v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect();
        Ok((grads, breakdown, epe))
    }

    /// Runs one optimisation step and returns its log row.
    pub fn step(&mut self) -> Result<LogRow> {
        let batch = self.next_batch();
        let results = map_slice(self.exec, &batch, |&i| self.sample_grads(i));
        let n = batch.len() as f64;
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        let mut loss = LossBreakdown::default();
        let mut epe = 0.0;
        for r in results {
            let (g, b, e) = r.map_err(|err| match err {
                Error::NonFinite(m) => Error::NonFinite(format!("{m}; batch {batch:?}")),
                other => other,
            })?;
            loss.total += b.total / n;
            loss.disp_clean += b.disp_clean / n;
            loss.disp_fog += b.disp_fog / n;
            loss.dist += b.dist / n;
            loss.cont += b.cont / n;
            epe += e / n;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        a.data_mut().iter_mut().zip(gi.data()).for_each(|(x, &y)| *x += y);
                    }
                }
            }
        }
        let mut grads = grads.expect("batch is never empty");
        let inv = 1.0 / n as f32;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= inv));
        let lr = step_decay_lr(self.cfg.lr, self.step, self.total_steps);
        self.adam.step(&mut self.model, &grads, lr).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {}; batch {batch:?}", self.step)),
            other => other,
        })?;
        let row = LogRow {
            step: self.step,
            lr,
            loss,
            epe,
        };
        self.step += 1;
        Ok(row)
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn run(mut self) -> Result<TrainedModel> {
        let mut log = Vec::with_capacity(self.total_steps);
        while self.step < self.total_steps {
            log.push(self.step()?);
        }
        Ok(TrainedModel { model: self.model, log })
    }
}

pub fn train_teacher(cfg: &ExperimentConfig, train: &[Scene], exec: Execution) -> Result<TrainedModel> {
    let samples: Vec<TrainSample<f32>> = train.iter().map(sample_tensors).collect();
    Trainer::teacher(cfg, &samples, exec)?.run()
}

pub fn train_student(
    cfg: &ExperimentConfig,
    train: &[Scene],
    teacher: Option<&StereoModel<f32>>,
    exec: Execution,
) -> Result<TrainedModel> {
    let samples: Vec<TrainSample<f32>> = train.iter().map(sample_tensors).collect();
    Trainer::student(cfg, &samples, teacher, exec)?.run()
}
