//! Central finite differences, used as the oracle for analytic gradients.

use super::{Scalar, Tensor};

/// Default perturbation for f64 checks.
pub const DEFAULT_EPS: f64 = 1e-4;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every element `i`.
pub fn finite_diff_grad<T: Scalar>(f: impl Fn(&Tensor<T>) -> f64, x: &Tensor<T>, eps: f64) -> Tensor<T> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::from_f64(orig.as_f64() + eps);
        let up = f(&probe);
        probe.data_mut()[i] = T::from_f64(orig.as_f64() - eps);
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push(T::from_f64((up - down) / (2.0 * eps)));
    }
    Tensor::from_vec(x.shape(), out).expect("same shape as x")
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
