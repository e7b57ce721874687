//! Finite-difference checks of every differentiable operation and of the
//! full student objective, at f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainDomains;
use crate::converter::ConverterParams;
use crate::error::Result;
use crate::matcher::{MatcherConfig, UpdateParams};
use crate::nn::Module;
use crate::parallel::{map_slice, Execution};
use crate::tensor::{finite_diff_grad, relative_error, Mode, Tape, Tensor, Var};
use crate::training::{student_total_loss, LossWeights, StereoModel, StudentLossSwitches};

pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub rel_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.rel_error < TOLERANCE
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

type OpFn = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync;

/// `loss = sum(op(inputs) * probe)` checked against central differences for
/// every input element.
fn check_op(name: String, inputs: Vec<Tensor<f64>>, seed: u64, op: &OpFn) -> Result<GradCase> {
    let mut tape = Tape::new(Mode::Strict);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = op(&mut tape, &vars)?;
    let probe = random(&mut ChaCha8Rng::seed_from_u64(seed), tape.shape(out), -1.0, 1.0);
    let p = tape.constant(probe.clone());
    let prod = tape.mul(out, p)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;

    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new(Mode::Strict);
        let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
        let o = op(&mut t, &vs).expect("forward succeeded once");
        let p = t.constant(probe.clone());
        let prod = t.mul(o, p).expect("same shape");
        let s = t.sum(prod);
        t.value(s).item()
    };
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let fd = finite_diff_grad(
            |probe_x| {
                let mut ins = inputs.clone();
                ins[i] = probe_x.clone();
                eval(&ins)
            },
            x,
            EPS,
        );
        let an = tape.grad(vars[i]).unwrap_or_else(|| Tensor::zeros(x.shape()));
        worst = worst.max(relative_error(an.data(), fd.data()));
    }
    Ok(GradCase { name, rel_error: worst })
}

struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    range: (f64, f64),
    op: Box<OpFn>,
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let h = rng.random_range(2..5);
    let w = rng.random_range(3..7);
    let c = rng.random_range(1..4);
    let co = rng.random_range(1..4);
    let s3 = vec![h, w, c];
    let any = (-1.5, 1.5);
    let max_disp = (w - 1).min(3);
    let radius = rng.random_range(1..3);
    let stride = rng.random_range(1..3);
    let k = if rng.random_bool(0.5) { 3 } else { 1 };
    let cases: Vec<OpCase> = vec![
        OpCase {
            name: "add_broadcast",
            shapes: vec![s3.clone(), vec![1, 1, c]],
            range: any,
            op: Box::new(|t, v| t.add(v[0], v[1])),
        },
        OpCase {
            name: "sub",
            shapes: vec![s3.clone(), s3.clone()],
            range: any,
            op: Box::new(|t, v| t.sub(v[0], v[1])),
        },
        OpCase {
            name: "mul_broadcast",
            shapes: vec![s3.clone(), vec![h, w, 1]],
            range: any,
            op: Box::new(|t, v| t.mul(v[0], v[1])),
        },
        OpCase {
            name: "scale_add_scalar",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| {
                let s = t.scale(v[0], -1.7);
                Ok(t.add_scalar(s, 0.3))
            }),
        },
        OpCase {
            name: "sigmoid",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        },
        OpCase {
            name: "relu",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| Ok(t.relu(v[0]))),
        },
        OpCase {
            name: "tanh",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| Ok(t.tanh(v[0]))),
        },
        OpCase {
            name: "abs",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| Ok(t.abs(v[0]))),
        },
        OpCase {
            name: "exp",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| Ok(t.exp(v[0]))),
        },
        OpCase {
            name: "log",
            shapes: vec![s3.clone()],
            range: (0.2, 3.0),
            op: Box::new(|t, v| t.log(v[0])),
        },
        OpCase {
            name: "square",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| Ok(t.square(v[0]))),
        },
        OpCase {
            name: "sum_mean",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| {
                let s = t.sum(v[0]);
                let m = t.mean(v[0]);
                t.mul(s, m)
            }),
        },
        OpCase {
            name: "conv2d",
            shapes: vec![s3.clone(), vec![k, k, c, co], vec![co]],
            range: any,
            op: Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], stride, k / 2)),
        },
        OpCase {
            name: "global_avg_pool",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| t.global_avg_pool(v[0])),
        },
        OpCase {
            name: "concat_channels",
            shapes: vec![s3.clone(), vec![h, w, co]],
            range: any,
            op: Box::new(|t, v| {
                let c = t.concat_channels(&[v[0], v[1]])?;
                Ok(t.square(c))
            }),
        },
        OpCase {
            name: "correlation",
            shapes: vec![s3.clone(), s3.clone()],
            range: any,
            op: Box::new(move |t, v| t.correlation(v[0], v[1], max_disp)),
        },
        OpCase {
            name: "corr_lookup",
            shapes: vec![vec![h, w, max_disp + 1], vec![h, w, 1]],
            range: (0.05, max_disp as f64 - 0.05),
            op: Box::new(move |t, v| t.corr_lookup(v[0], v[1], radius)),
        },
        OpCase {
            name: "upsample",
            shapes: vec![s3.clone()],
            range: any,
            op: Box::new(|t, v| t.upsample(v[0], 2, 2.0)),
        },
        OpCase {
            name: "channel_normalize",
            shapes: vec![s3],
            range: any,
            op: Box::new(|t, v| t.channel_normalize(v[0])),
        },
    ];
    cases
}

/// Perturbs coordinate `coord` of the `tensor`-th parameter.
fn with_param<M: Module<f64> + Clone>(model: &M, tensor: usize, coord: usize, delta: f64) -> M {
    let mut m = model.clone();
    let mut i = 0;
    m.visit_mut("", &mut |_, t| {
        if i == tensor {
            t.data_mut()[coord] += delta;
        }
        i += 1;
    });
    m
}

/// Full student objective on a 16x32 scene with a tiny model; gradients are
/// compared on sampled coordinates of every parameter tensor.
fn student_loss_case(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MatcherConfig {
        channels: 4,
        downsample: 4,
        hidden: 4,
        motion: 3,
        max_disp: 3,
        radius: 1,
        iters: 2,
    };
    let mut model = StereoModel::<f64>::init(&cfg, &mut rng)?;
    // Zero biases put dead receptive fields exactly on the ReLU kink.
    model.visit_mut("", &mut |name, t| {
        if name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    });
    let img = |rng: &mut ChaCha8Rng| random(rng, &[16, 32, 3], 0.0, 1.0);
    let (cl, cr, fl, fr) = (img(&mut rng), img(&mut rng), img(&mut rng), img(&mut rng));
    let gt = random(&mut rng, &[16, 32, 1], 0.5, 8.0);
    let tl = random(&mut rng, &[4, 8, 4], -1.0, 1.0);
    let tr = random(&mut rng, &[4, 8, 4], -1.0, 1.0);
    let weights = LossWeights {
        lambda1: 0.5,
        lambda2: 0.5,
        ..LossWeights::default()
    };
    let switches = StudentLossSwitches {
        domains: TrainDomains::Mix,
        use_dist: true,
        use_cont: true,
    };
    let run = |m: &StereoModel<f64>, grads: bool| -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
        let mut tape = Tape::new(Mode::Strict);
        let bound = m.bind(&mut tape, grads);
        let c = (tape.constant(cl.clone()), tape.constant(cr.clone()));
        let f = (tape.constant(fl.clone()), tape.constant(fr.clone()));
        let g = tape.constant(gt.clone());
        let t = (tape.constant(tl.clone()), tape.constant(tr.clone()));
        let out = student_total_loss(&mut tape, &bound, c, f, g, None, Some(t), &weights, switches, cfg.iters)?;
        let value = tape.value(out.loss).item();
        if !grads {
            return Ok((value, None));
        }
        tape.backward(out.loss)?;
        let gs = bound
            .vars()
            .into_iter()
            .map(|v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect();
        Ok((value, Some(gs)))
    };
    let (_, grads) = run(&model, true)?;
    let grads = grads.expect("requested");
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        let picks: Vec<usize> = (0..g.len().min(4)).map(|_| rng.random_range(0..g.len())).collect();
        let mut an = Vec::with_capacity(picks.len());
        let mut fd = Vec::with_capacity(picks.len());
        for &j in &picks {
            let up = run(&with_param(&model, ti, j, EPS), false)?.0;
            let down = run(&with_param(&model, ti, j, -EPS), false)?.0;
            fd.push((up - down) / (2.0 * EPS));
            an.push(g.data()[j]);
        }
        worst = worst.max(relative_error(&an, &fd));
    }
    Ok(GradCase {
        name: format!("student_total_loss#{seed}"),
        rel_error: worst,
    })
}

fn module_case<M: Module<f64> + Clone + Sync>(
    name: String,
    model: &M,
    input: &Tensor<f64>,
    forward: &(dyn Fn(&M, &mut Tape<f64>, bool, Var) -> Result<(Var, Vec<Var>)> + Sync),
    seed: u64,
) -> Result<GradCase> {
    let run = |m: &M, grads: bool| -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
        let mut tape = Tape::new(Mode::Strict);
        let x = tape.constant(input.clone());
        let (out, vars) = forward(m, &mut tape, grads, x)?;
        let probe = random(&mut ChaCha8Rng::seed_from_u64(seed), tape.shape(out), -1.0, 1.0);
        let p = tape.constant(probe);
        let prod = tape.mul(out, p)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if !grads {
            return Ok((value, None));
        }
        tape.backward(loss)?;
        Ok((
            value,
            Some(
                vars.into_iter()
                    .map(|v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
                    .collect(),
            ),
        ))
    };
    let grads = run(model, true)?.1.expect("requested");
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        let mut an = Vec::new();
        let mut fd = Vec::new();
        for j in 0..g.len() {
            let up = run(&with_param(model, ti, j, EPS), false)?.0;
            let down = run(&with_param(model, ti, j, -EPS), false)?.0;
            fd.push((up - down) / (2.0 * EPS));
            an.push(g.data()[j]);
        }
        worst = worst.max(relative_error(&an, &fd));
    }
    Ok(GradCase { name, rel_error: worst })
}

/// Runs `rounds` randomized instances of every case. Results are in a fixed
/// order independent of `exec`.
pub fn run_suite(seed: u64, rounds: usize, exec: Execution) -> Result<Vec<GradCase>> {
    let jobs: Vec<(usize, u64)> = (0..rounds).map(|r| (r, seed.wrapping_add(r as u64))).collect();
    let per_round = map_slice(exec, &jobs, |&(r, s)| -> Result<Vec<GradCase>> {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut out = Vec::new();
        for case in op_cases(&mut rng) {
            let inputs = case
                .shapes
                .iter()
                .map(|sh| random(&mut rng, sh, case.range.0, case.range.1))
                .collect();
            out.push(check_op(format!("{}#{r}", case.name), inputs, rng.random(), &*case.op)?);
        }
        let c = rng.random_range(2..5);
        let conv = ConverterParams::<f64>::init(c, &mut rng);
        let x = random(&mut rng, &[3, 4, c], -1.0, 1.0);
        out.push(module_case(
            format!("converter#{r}"),
            &conv,
            &x,
            &|m, t, g, x| {
                let b = m.bind(t, g);
                let y = b.convert(t, x)?;
                let mut vs = Vec::new();
                b.vars(&mut vs);
                Ok((y, vs))
            },
            rng.random(),
        )?);
        let upd = UpdateParams::<f64>::init(c, 3, 2, 1, &mut rng);
        let hx = random(&mut rng, &[3, 4, 3 + c + 3 + 1], -1.0, 1.0);
        out.push(module_case(
            format!("update_step#{r}"),
            &upd,
            &hx,
            &|m, t, g, x| {
                let b = m.bind(t, g);
                let (h, w) = (t.shape(x)[0], t.shape(x)[1]);
                let parts: Vec<Var> = [(0, 3), (3, 3 + c), (3 + c, 3 + c + 3), (3 + c + 3, 3 + c + 4)]
                    .iter()
                    .map(|&(a, z)| {
                        let data: Vec<f64> = t
                            .value(x)
                            .data()
                            .chunks_exact(3 + c + 4)
                            .flat_map(|px| px[a..z].to_vec())
                            .collect();
                        t.constant(Tensor::from_vec(&[h, w, z - a], data).expect("slice"))
                    })
                    .collect();
                let (hn, delta) = b.step(t, parts[0], parts[1], parts[2], parts[3])?;
                let both = t.concat_channels(&[hn, delta])?;
                let mut vs = Vec::new();
                b.vars(&mut vs);
                // context_init is not used by a step
                Ok((both, vs))
            },
            rng.random(),
        )?);
        out.push(student_loss_case(s)?);
        Ok(out)
    });
    let mut all = Vec::new();
    for r in per_round {
        all.extend(r?);
    }
    Ok(all)
}
