//! Attentive feature converter.
//!
//! `convert(F) = F + (F + Conv(F)) * PA * CA`, where both attention maps are
//! computed from the residual branch `F' = F + Conv(F)`:
//!
//! * `PA = sigmoid(Conv3x3(F'))`, shape `[H, W, 1]`
//! * `CA = sigmoid(Conv1x1(avgpool(F')))`, shape `[1, 1, C]`

use rand::Rng;

use crate::error::Result;
use crate::nn::{join, BoundConv, Conv2d, Module};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ConverterParams<T> {
    /// 3x3, C -> C.
    pub pre_conv: Conv2d<T>,
    /// 3x3, C -> 1.
    pub pa_conv: Conv2d<T>,
    /// 1x1, C -> C.
    pub ca_conv: Conv2d<T>,
}

impl<T: Scalar> ConverterParams<T> {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        ConverterParams {
            pre_conv: Conv2d::init(3, channels, channels, 1, 0.5, rng),
            pa_conv: Conv2d::init(3, channels, 1, 1, 0.5, rng),
            ca_conv: Conv2d::init(1, channels, channels, 1, 0.5, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        ConverterParams {
            pre_conv: Conv2d::zeros(3, channels, channels, 1),
            pa_conv: Conv2d::zeros(3, channels, 1, 1),
            ca_conv: Conv2d::zeros(1, channels, channels, 1),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundConverter {
        BoundConverter {
            pre_conv: self.pre_conv.bind(tape, trainable),
            pa_conv: self.pa_conv.bind(tape, trainable),
            ca_conv: self.ca_conv.bind(tape, trainable),
        }
    }
}

impl<T: Scalar> Module<T> for ConverterParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.pre_conv.visit(&join(prefix, "pre_conv"), f);
        self.pa_conv.visit(&join(prefix, "pa_conv"), f);
        self.ca_conv.visit(&join(prefix, "ca_conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.pre_conv.visit_mut(&join(prefix, "pre_conv"), f);
        self.pa_conv.visit_mut(&join(prefix, "pa_conv"), f);
        self.ca_conv.visit_mut(&join(prefix, "ca_conv"), f);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundConverter {
    pub pre_conv: BoundConv,
    pub pa_conv: BoundConv,
    pub ca_conv: BoundConv,
}

/// Spatial attention map `[H, W, 1]`.
pub fn pixel_attention<T: Scalar>(tape: &mut Tape<T>, f_prime: Var, pa_conv: &BoundConv) -> Result<Var> {
    let logits = pa_conv.forward(tape, f_prime)?;
    Ok(tape.sigmoid(logits))
}

/// Channel attention map `[1, 1, C]`.
pub fn channel_attention<T: Scalar>(tape: &mut Tape<T>, f_prime: Var, ca_conv: &BoundConv) -> Result<Var> {
    let pooled = tape.global_avg_pool(f_prime)?;
    let logits = ca_conv.forward(tape, pooled)?;
    Ok(tape.sigmoid(logits))
}

impl BoundConverter {
    pub fn convert<T: Scalar>(&self, tape: &mut Tape<T>, f: Var) -> Result<Var> {
        let branch = self.pre_conv.forward(tape, f)?;
        let f_prime = tape.add(f, branch)?;
        let pa = pixel_attention(tape, f_prime, &self.pa_conv)?;
        let ca = channel_attention(tape, f_prime, &self.ca_conv)?;
        let attended = tape.mul(f_prime, pa)?;
        let attended = tape.mul(attended, ca)?;
        tape.add(f, attended)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        self.pre_conv.vars(out);
        self.pa_conv.vars(out);
        self.ca_conv.vars(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_half_attention_and_scaled_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ConverterParams::<f64>::zeros(5);
        let f = random_map(&mut rng, &[4, 6, 5]);
        let mut tape = Tape::new(Mode::Strict);
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(f.clone());
        let pa = pixel_attention(&mut tape, x, &bound.pa_conv).unwrap();
        assert_eq!(tape.shape(pa), &[4, 6, 1]);
        assert!(tape.value(pa).data().iter().all(|&v| v == 0.5));
        let ca = channel_attention(&mut tape, x, &bound.ca_conv).unwrap();
        assert_eq!(tape.shape(ca), &[1, 1, 5]);
        assert!(tape.value(ca).data().iter().all(|&v| v == 0.5));
        let out = bound.convert(&mut tape, x).unwrap();
        for (o, i) in tape.value(out).data().iter().zip(f.data()) {
            assert!((o - 1.25 * i).abs() < 1e-15);
        }
    }

    #[test]
    fn pixel_attention_bias_only() {
        let mut params = ConverterParams::<f64>::zeros(3);
        params.pa_conv.bias.data_mut()[0] = 10.0;
        let mut tape = Tape::new(Mode::Strict);
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::full(&[2, 2, 3], 0.7));
        let pa = pixel_attention(&mut tape, x, &bound.pa_conv).unwrap();
        for &v in tape.value(pa).data() {
            assert!((v - 0.9999546021312976).abs() < 1e-15);
        }
    }

    #[test]
    fn channel_attention_hand_value_and_permutation_invariance() {
        let c = 3;
        let mut params = ConverterParams::<f64>::zeros(c);
        for i in 0..c {
            params.ca_conv.weight.data_mut()[i * c + i] = 0.5;
            params.ca_conv.bias.data_mut()[i] = -1.0;
        }
        let mut tape = Tape::new(Mode::Strict);
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::full(&[3, 4, c], 2.0));
        let ca = channel_attention(&mut tape, x, &bound.ca_conv).unwrap();
        assert!(tape.value(ca).data().iter().all(|&v| v == 0.5));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ConverterParams::<f64>::init(c, &mut rng);
        let f = random_map(&mut rng, &[3, 4, c]);
        let mut permuted = f.clone();
        let pixels: Vec<Vec<f64>> = f.data().chunks(c).map(|p| p.to_vec()).rev().collect();
        permuted.data_mut().copy_from_slice(&pixels.concat());
        let mut tape = Tape::new(Mode::Strict);
        let bound = params.bind(&mut tape, false);
        let a = tape.constant(f);
        let b = tape.constant(permuted);
        let ca = channel_attention(&mut tape, a, &bound.ca_conv).unwrap();
        let cb = channel_attention(&mut tape, b, &bound.ca_conv).unwrap();
        for (x, y) in tape.value(ca).data().iter().zip(tape.value(cb).data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_input_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ConverterParams::<f64>::init(4, &mut rng);
        let mut tape = Tape::new(Mode::Strict);
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[3, 3, 4]));
        let out = bound.convert(&mut tape, x).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.shape(out), &[3, 3, 4]);
    }

    fn squared_norm(params: &ConverterParams<f64>, f: &Tensor<f64>) -> f64 {
        let mut tape = Tape::new(Mode::Strict);
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(f.clone());
        let out = bound.convert(&mut tape, x).unwrap();
        let sq = tape.square(out);
        let s = tape.sum(sq);
        tape.value(s).item()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ConverterParams::<f64>::init(3, &mut rng);
        let f = random_map(&mut rng, &[4, 5, 3]);

        let mut tape = Tape::new(Mode::Strict);
        let bound = params.bind(&mut tape, true);
        let x = tape.param(&f);
        let out = bound.convert(&mut tape, x).unwrap();
        let sq = tape.square(out);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();

        let mut vars = Vec::new();
        bound.vars(&mut vars);
        let names: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
        for (idx, (var, name)) in vars.iter().zip(&names).enumerate() {
            let analytic = tape.grad(*var).unwrap();
            let numeric = finite_diff_grad(
                |t| {
                    let mut p = params.clone();
                    let mut k = 0;
                    p.visit_mut("", &mut |_, dst| {
                        if k == idx {
                            *dst = t.clone();
                        }
                        k += 1;
                    });
                    squared_norm(&p, &f)
                },
                tape.value(*var),
                1e-5,
            );
            let err = relative_error(analytic.data(), numeric.data());
            assert!(err < 1e-4, "{name}: rel err {err}");
        }
        let gx = tape.grad(x).unwrap();
        let nx = finite_diff_grad(|t| squared_norm(&params, t), &f, 1e-5);
        assert!(relative_error(gx.data(), nx.data()) < 1e-4);
    }
}
