use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::image::Image;
use crate::nn::{Conv2d, Module};
use crate::tensor::{finite_diff_grad, relative_error, Mode};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn small_cfg() -> MatcherConfig {
    MatcherConfig {
        channels: 8,
        downsample: 4,
        hidden: 6,
        motion: 5,
        max_disp: 3,
        radius: 2,
        iters: 3,
    }
}

fn params(cfg: &MatcherConfig, seed: u64) -> (ExtractorParams<f64>, UpdateParams<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = ExtractorParams::init(3, cfg.channels, cfg.downsample, &mut rng).unwrap();
    let u = UpdateParams::init(cfg.channels, cfg.hidden, cfg.motion, cfg.radius, &mut rng);
    (e, u)
}

#[test]
fn prediction_shapes() {
    let cfg = small_cfg();
    let (e, u) = params(&cfg, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new(Mode::Training);
    let (be, bu) = (e.bind(&mut tape, false), u.bind(&mut tape, false));
    let l = tape.constant(random(&mut rng, &[16, 32, 3]));
    let r = tape.constant(random(&mut rng, &[16, 32, 3]));
    let seq = predict(&mut tape, &be, &bu, &cfg, l, r, None, cfg.iters).unwrap();
    assert_eq!(seq.preds.len(), 3);
    assert_eq!(tape.shape(seq.last()), &[16, 32, 1]);
    assert_eq!(tape.shape(seq.low_res[0]), &[4, 8, 1]);
    assert_eq!(tape.shape(seq.hidden), &[4, 8, 6]);

    let odd = tape.constant(random(&mut rng, &[15, 32, 3]));
    assert!(predict(&mut tape, &be, &bu, &cfg, odd, odd, None, 1).is_err());
    assert!(predict(&mut tape, &be, &bu, &cfg, l, odd, None, 1).is_err());
    assert!(predict(&mut tape, &be, &bu, &cfg, l, r, None, 0).is_err());
}

#[test]
fn mid_gray_image_gives_zero_features() {
    let cfg = small_cfg();
    let (e, _) = params(&cfg, 2);
    let f = e.extract(&Image::filled(8, 16, 3, INPUT_MEAN), Domain::Clean, View::Left).unwrap();
    assert_eq!(f.values.shape(), &[2, 4, 8]);
    assert!(f.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn correlation_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w, c, md) = (3, 9, 5, 4);
    let l = random(&mut rng, &[h, w, c]);
    let r = random(&mut rng, &[h, w, c]);
    let fl = FeatureMap { values: l.clone(), domain: Domain::Clean, view: View::Left };
    let fr = FeatureMap { values: r.clone(), domain: Domain::Clean, view: View::Right };
    let vol = correlation_volume(&fl, &fr, md).unwrap();
    assert_eq!(vol.shape(), &[h, w, md + 1]);
    for y in 0..h {
        for x in 0..w {
            for d in 0..=md {
                let mut expect = 0.0;
                if x >= d {
                    for k in 0..c {
                        expect += l.data()[(y * w + x) * c + k] * r.data()[(y * w + x - d) * c + k];
                    }
                    expect /= (c as f64).sqrt();
                }
                assert_eq!(vol.data()[(y * w + x) * (md + 1) + d], expect);
            }
        }
    }
}

#[test]
fn correlation_peaks_at_true_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w, c, md, shift) = (4, 20, 32, 6, 3);
    let l = random(&mut rng, &[h, w + shift, c]);
    // right(y, x) = left(y, x + shift)
    let mut r = Vec::with_capacity(h * w * c);
    let mut lv = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            lv.extend_from_slice(&l.data()[(y * (w + shift) + x) * c..][..c]);
            r.extend_from_slice(&l.data()[(y * (w + shift) + x + shift) * c..][..c]);
        }
    }
    let fl = FeatureMap { values: Tensor::from_vec(&[h, w, c], lv).unwrap(), domain: Domain::Fog, view: View::Left };
    let fr = FeatureMap { values: Tensor::from_vec(&[h, w, c], r).unwrap(), domain: Domain::Fog, view: View::Right };
    let vol = correlation_volume(&fl, &fr, md).unwrap();
    for y in 0..h {
        for x in md..w {
            let row = &vol.data()[(y * w + x) * (md + 1)..][..md + 1];
            let best = (0..=md).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(best, shift, "pixel ({y}, {x})");
        }
    }
}

#[test]
fn zero_head_never_moves_disparity() {
    let cfg = small_cfg();
    let (e, mut u) = params(&cfg, 5);
    u.head_out = Conv2d::zeros(3, cfg.hidden, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tape = Tape::new(Mode::Strict);
    let (be, bu) = (e.bind(&mut tape, false), u.bind(&mut tape, false));
    let l = tape.constant(random(&mut rng, &[8, 16, 3]));
    let r = tape.constant(random(&mut rng, &[8, 16, 3]));
    let seq = predict(&mut tape, &be, &bu, &cfg, l, r, None, 4).unwrap();
    for p in seq.preds {
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn update_step_gradients_match_finite_differences() {
    let cfg = small_cfg();
    let (_, u) = params(&cfg, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, w) = (3, 5);
    let taps = 2 * cfg.radius + 1;
    let hidden = random(&mut rng, &[h, w, cfg.hidden]);
    let context = random(&mut rng, &[h, w, cfg.channels]);
    let corr = random(&mut rng, &[h, w, taps]);
    let disp = random(&mut rng, &[h, w, 1]);
    let probe = random(&mut rng, &[h, w, cfg.hidden]);

    // loss = sum(h' * probe) + sum(delta^2)
    let run = |u: &UpdateParams<f64>, inputs: [&Tensor<f64>; 4], keep: bool| {
        let mut tape = Tape::new(Mode::Strict);
        let bu = u.bind(&mut tape, keep);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf((*t).clone(), keep)).collect();
        let (hn, delta) = bu.step(&mut tape, vars[0], vars[1], vars[2], vars[3]).unwrap();
        let pv = tape.constant(probe.clone());
        let a = tape.mul(hn, pv).unwrap();
        let a = tape.sum(a);
        let b = tape.square(delta);
        let b = tape.sum(b);
        let loss = tape.add(a, b).unwrap();
        (tape, bu, vars, loss)
    };

    let (mut tape, bu, vars, loss) = run(&u, [&hidden, &context, &corr, &disp], true);
    tape.backward(loss).unwrap();
    let inputs = [&hidden, &context, &corr, &disp];
    for (i, x) in inputs.iter().enumerate() {
        let fd = finite_diff_grad(
            |p| {
                let mut ins = inputs;
                ins[i] = p;
                let (t, _, _, l) = run(&u, ins, false);
                t.value(l).item()
            },
            x,
            1e-5,
        );
        let an = tape.grad(vars[i]).unwrap();
        let err = relative_error(an.data(), fd.data());
        assert!(err < 1e-6, "input {i}: {err}");
    }
    let mut pv = Vec::new();
    bu.vars(&mut pv);
    let names: Vec<String> = u.named_params().into_iter().map(|(n, _)| n).collect();
    for (k, name) in names.iter().enumerate() {
        // h0 is not part of a step
        if name.starts_with("context_init") {
            assert!(tape.grad(pv[k]).is_none());
            continue;
        }
        let base = u.named_params()[k].1.clone();
        let fd = finite_diff_grad(
            |p| {
                let mut v = u.clone();
                let mut j = 0;
                v.visit_mut("", &mut |_, t| {
                    if j == k {
                        *t = p.clone();
                    }
                    j += 1;
                });
                let (t, _, _, l) = run(&v, inputs, false);
                t.value(l).item()
            },
            &base,
            1e-5,
        );
        let an = tape.grad(pv[k]).unwrap();
        let err = relative_error(an.data(), fd.data());
        assert!(err < 1e-6, "{name}: {err}");
    }
}
