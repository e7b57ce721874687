//! Parameter containers and their tape bindings.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Something that owns named parameter tensors.
///
/// `visit` and `visit_mut` must enumerate parameters in the same order as
/// the matching bound module's `vars`.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Overwrites every parameter from `source`, converting precision.
    fn load_named(&mut self, source: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
        let mut err = None;
        self.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match source.get(&name) {
                Some(s) if s.shape() == t.shape() => {
                    for (d, &v) in t.data_mut().iter_mut().zip(s.data()) {
                        *d = T::from_f64(v as f64);
                    }
                }
                Some(s) => {
                    err = Some(Error::shape(
                        "checkpoint",
                        format!("{name}: stored {:?}, model {:?}", s.shape(), t.shape()),
                    ))
                }
                None => err = Some(Error::InvalidArgument(format!("checkpoint lacks parameter {name}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Square-kernel convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// Uniform initialisation in `+-gain * sqrt(3 / fan_in)`, zero bias.
    pub fn init(k: usize, cin: usize, cout: usize, stride: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain * (3.0 / (k * k * cin) as f64).sqrt();
        let data = (0..k * k * cin * cout)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        Conv2d {
            weight: Tensor::from_vec(&[k, k, cin, cout], data).expect("consistent shape"),
            bias: Tensor::zeros(&[cout]),
            stride,
            padding: k / 2,
        }
    }

    pub fn zeros(k: usize, cin: usize, cout: usize, stride: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros(&[k, k, cin, cout]),
            bias: Tensor::zeros(&[cout]),
            stride,
            padding: k / 2,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundConv {
        BoundConv {
            weight: tape.leaf(self.weight.clone(), trainable),
            bias: tape.leaf(self.bias.clone(), trainable),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// A [`Conv2d`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundConv {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

impl BoundConv {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.conv2d(x, self.weight, self.bias, self.stride, self.padding)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}
