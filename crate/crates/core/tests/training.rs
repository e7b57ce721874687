use cfdnet::config::{ExperimentConfig, TrainDomains};
use cfdnet::io::{encode_checkpoint, load_module, save_module};
use cfdnet::matcher::MatcherConfig;
use cfdnet::metrics::StereoEval;
use cfdnet::nn::Module;
use cfdnet::parallel::Execution;
use cfdnet::synth::{constant_disparity_scene, dataset_splits, scene_rng, SynthParams};
use cfdnet::tensor::{Mode, Tape};
use cfdnet::training::*;
use cfdnet::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> ExperimentConfig {
    ExperimentConfig {
        n_train: 4,
        n_eval: 2,
        batch_size: 2,
        teacher_steps: 4,
        student_steps: 4,
        ..ExperimentConfig::default()
    }
}

fn samples(cfg: &ExperimentConfig) -> Vec<TrainSample<f32>> {
    let (train, _) = dataset_splits(cfg, Execution::Sequential).unwrap();
    train.iter().map(sample_tensors).collect()
}

fn run_student(cfg: &ExperimentConfig, s: &[TrainSample<f32>], teacher: Option<&StereoModel<f32>>, exec: Execution) -> (Vec<LogRow>, StereoModel<f32>) {
    let mut tr = Trainer::student(cfg, s, teacher, exec).unwrap();
    let log = (0..cfg.student_steps).map(|_| tr.step().unwrap()).collect();
    (log, tr.model)
}

#[test]
fn checkpoint_round_trip_gives_identical_predictions() {
    let cfg = small_cfg();
    let (train, eval) = dataset_splits(&cfg, Execution::Sequential).unwrap();
    let trained = train_student(&cfg, &train, None, Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("student.cfdw");
    save_module(&path, &trained.model).unwrap();
    let mut fresh = StereoModel::<f32>::init(&cfg.matcher(), &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    load_module(&path, &mut fresh).unwrap();
    let s = &eval[0];
    let a = predict_student(&trained.model, &s.fog_left, &s.fog_right).unwrap();
    let b = predict_student(&fresh, &s.fog_left, &s.fog_right).unwrap();
    assert_eq!(a, b);
}

#[test]
fn same_seed_same_loss_curve_on_both_execution_paths() {
    let mut cfg = small_cfg();
    cfg.use_cont = true;
    let s = samples(&cfg);
    let (a, ma) = run_student(&cfg, &s, None, Execution::Sequential);
    let (b, mb) = run_student(&cfg, &s, None, Execution::Sequential);
    let (c, _) = run_student(&cfg, &s, None, Execution::Parallel);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(ma.named_params(), mb.named_params());

    let ta = Trainer::teacher(&cfg, &s, Execution::Sequential).unwrap().run().unwrap();
    let tb = Trainer::teacher(&cfg, &s, Execution::Parallel).unwrap().run().unwrap();
    assert_eq!(ta.log, tb.log);
}

#[test]
fn student_mix_ignores_an_unused_teacher() {
    let cfg = small_cfg();
    let s = samples(&cfg);
    let teacher = Trainer::teacher(&cfg, &s, Execution::Sequential).unwrap().run().unwrap().model;
    let (a, ma) = run_student(&cfg, &s, None, Execution::Sequential);
    let (b, mb) = run_student(&cfg, &s, Some(&teacher), Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(ma.named_params(), mb.named_params());
}

#[test]
fn teacher_is_frozen_during_distillation() {
    let mut cfg = small_cfg();
    cfg.use_dist = true;
    cfg.use_cont = true;
    let s = samples(&cfg);
    let teacher = Trainer::teacher(&cfg, &s, Execution::Sequential).unwrap().run().unwrap().model;
    let before = encode_checkpoint(&teacher.named_params());
    let (log, _) = run_student(&cfg, &s, Some(&teacher), Execution::Sequential);
    assert!(log.iter().all(|r| r.loss.dist > 0.0));
    assert_eq!(encode_checkpoint(&teacher.named_params()), before);
    assert!(Trainer::student(&cfg, &s, None, Execution::Sequential).is_err());
}

fn tiny_f64() -> (StereoModel<f64>, StereoModel<f64>, ExperimentConfig) {
    let mut cfg = small_cfg();
    cfg.height = 16;
    cfg.width = 32;
    cfg.disp_min = 1.0;
    cfg.disp_max = 6.0;
    let m = MatcherConfig {
        channels: 6,
        hidden: 6,
        motion: 4,
        max_disp: 3,
        radius: 1,
        iters: 3,
        ..cfg.matcher()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let student = StereoModel::init(&m, &mut rng).unwrap();
    let teacher = StereoModel::init(&m, &mut rng).unwrap();
    (student, teacher, cfg)
}

/// Loss breakdown and tape value of the student objective on one scene.
fn student_loss(weights: &LossWeights, switches: StudentLossSwitches) -> (LossBreakdown, f64) {
    let (student, teacher, cfg) = tiny_f64();
    let (train, _) = dataset_splits(&cfg, Execution::Sequential).unwrap();
    let s = sample_tensors::<f64>(&train[0]);
    let mut tape = Tape::new(Mode::Strict);
    let clean = (tape.constant(s.clean.0.clone()), tape.constant(s.clean.1.clone()));
    let fog = (tape.constant(s.fog.0.clone()), tape.constant(s.fog.1.clone()));
    let gt = tape.constant(s.gt.clone());
    let tb = teacher.bind(&mut tape, false);
    let fused = teacher_forward(&mut tape, &tb, clean, fog, 1).unwrap().fused;
    let sb = student.bind(&mut tape, true);
    let out = student_total_loss(&mut tape, &sb, clean, fog, gt, None, Some(fused), weights, switches, 3).unwrap();
    (out.breakdown, tape.value(out.loss).item())
}

#[test]
fn total_loss_is_the_weighted_sum_of_its_terms() {
    let w = LossWeights {
        lambda1: 0.3,
        lambda2: 0.7,
        ..LossWeights::default()
    };
    let sw = StudentLossSwitches {
        domains: TrainDomains::Mix,
        use_dist: true,
        use_cont: true,
    };
    let (b, total) = student_loss(&w, sw);
    assert!(b.dist > 0.0 && b.disp_clean > 0.0 && b.disp_fog > 0.0);
    assert_eq!(b.total, total);
    assert!((b.total - b.weighted_sum(&w)).abs() < 1e-12);
}

#[test]
fn zero_weights_reduce_to_the_two_domain_loss() {
    let zero = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        ..LossWeights::default()
    };
    let full = StudentLossSwitches {
        domains: TrainDomains::Mix,
        use_dist: true,
        use_cont: true,
    };
    let mix = StudentLossSwitches {
        use_dist: false,
        use_cont: false,
        ..full
    };
    let (b, total) = student_loss(&zero, full);
    let (m, mix_total) = student_loss(&zero, mix);
    assert_eq!(total, b.disp_clean + b.disp_fog);
    assert_eq!(total, mix_total);
    assert_eq!((m.dist, m.cont), (0.0, 0.0));
}

#[test]
fn identical_domains_fuse_to_twice_the_converted_features() {
    let (_, teacher, cfg) = tiny_f64();
    let (train, _) = dataset_splits(&cfg, Execution::Sequential).unwrap();
    let s = sample_tensors::<f64>(&train[1]);
    let mut tape = Tape::new(Mode::Strict);
    let clean = (tape.constant(s.clean.0.clone()), tape.constant(s.clean.1.clone()));
    let b = teacher.bind(&mut tape, false);
    let out = teacher_forward(&mut tape, &b, clean, clean, 2).unwrap();
    let (_, converted) = b.features(&mut tape, clean.0).unwrap();
    assert_eq!(tape.shape(out.fused.0), tape.shape(converted));
    for (f, c) in tape.value(out.fused.0).data().iter().zip(tape.value(converted).data()) {
        assert_eq!(*f, 2.0 * c);
    }
}

#[test]
fn extractor_output_does_not_depend_on_call_order() {
    let (student, _, cfg) = tiny_f64();
    let (train, _) = dataset_splits(&cfg, Execution::Sequential).unwrap();
    let s = sample_tensors::<f64>(&train[0]);
    let features = |first_fog: bool| {
        let mut tape = Tape::new(Mode::Strict);
        let b = student.bind(&mut tape, false);
        let c = tape.constant(s.clean.0.clone());
        let f = tape.constant(s.fog.0.clone());
        let (order_a, order_b) = if first_fog { (f, c) } else { (c, f) };
        let xa = b.extractor.forward(&mut tape, order_a).unwrap();
        let xb = b.extractor.forward(&mut tape, order_b).unwrap();
        let (xc, xf) = if first_fog { (xb, xa) } else { (xa, xb) };
        (tape.value(xc).clone(), tape.value(xf).clone())
    };
    assert_eq!(features(false), features(true));
}

#[test]
fn non_finite_loss_aborts_with_the_batch() {
    let cfg = small_cfg();
    let mut s = samples(&cfg);
    s.iter_mut().for_each(|x| x.gt.data_mut()[0] = f32::NAN);
    let err = Trainer::teacher(&cfg, &s, Execution::Sequential).unwrap().step().unwrap_err();
    match err {
        Error::NonFinite(msg) => assert!(msg.contains("batch"), "{msg}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn matcher_overfits_one_constant_disparity_stereogram() {
    let cfg = ExperimentConfig::overfit_preset();
    let p = SynthParams::from_config(&cfg).unwrap();
    let scene = constant_disparity_scene(&p, 3, &mut scene_rng(cfg.seed, 0)).unwrap();
    assert!(scene.disp_left.data.iter().all(|&d| d == 3.0));
    let report = overfit_scene(&cfg, &scene, 400).unwrap();
    assert!(report.final_epe() < 0.5, "{:?}", report.iter_epe);
    assert!(report.final_epe() <= report.iter_epe[0], "{:?}", report.iter_epe);
}

#[test]
fn teacher_overfits_the_preset_and_its_loss_falls() {
    let cfg = ExperimentConfig::overfit_preset();
    let (train, _) = dataset_splits(&cfg, Execution::Sequential).unwrap();
    let s: Vec<TrainSample<f32>> = train.iter().map(sample_tensors).collect();
    let mut tr = Trainer::teacher(&cfg, &s, Execution::Sequential).unwrap();
    let mut losses = Vec::new();
    let mut epe = f64::INFINITY;
    while tr.steps_done() < cfg.teacher_steps && epe >= 1.0 {
        losses.push(tr.step().unwrap().loss.total);
        if tr.steps_done() % 50 == 0 {
            epe = StereoEval::mean(&evaluate_teacher(&tr.model, &train, Execution::Sequential).unwrap()).epe;
        }
    }
    assert!(epe < 1.0, "teacher EPE {epe} after {} steps", tr.steps_done());
    let windows: Vec<f64> = losses[..50].chunks(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}
