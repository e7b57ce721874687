use super::conv::{self, ConvGeometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Clamp applied inside `log` and normalisation in [`Mode::Training`].
pub const TRAINING_EPS: f64 = 1e-8;

/// Numeric strictness of a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Domain violations (e.g. `log` of a non-positive value) are errors.
    Strict,
    /// Domain violations are clamped to `TRAINING_EPS`.
    Training,
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Sigmoid,
    Relu,
    Tanh,
    Abs,
    Exp,
    Log,
    Square,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    AvgPool(Var),
    Concat(Vec<Var>),
    Correlation {
        left: Var,
        right: Var,
        max_disp: usize,
    },
    Lookup {
        volume: Var,
        disp: Var,
        radius: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
        gain: T,
    },
    ChannelNormalize(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records forward operations and replays them in reverse.
///
/// Nodes are appended in evaluation order, so the vector itself is a
/// topological order. A tape supports a single `backward`; call
/// [`Tape::reset_grads`] before running it again.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    grads: Option<Vec<Option<Vec<T>>>>,
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (a, b) = (pad(a), pad(b));
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Offset into an operand of shape `src` for every element of `out`.
fn broadcast_offsets(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut shape = vec![1; rank - src.len()];
    shape.extend_from_slice(src);
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    let n: usize = out.iter().product();
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

fn dims3(op: &'static str, t: &[usize]) -> Result<(usize, usize, usize)> {
    match *t {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::shape(op, format!("expected [H, W, C], got {t:?}"))),
    }
}

/// Bilinear sampling taps for one axis (half-pixel centres, edge clamp).
fn upsample_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            grads: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are accumulated for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: &Tensor<T>) -> Var {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copies a node's value into a new constant leaf (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any
    /// flowed into it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.as_ref()?.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        if sa == sb {
            let data = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            return Ok((Tensor { shape: sa, data }, false));
        }
        let out = broadcast_shape(op, &sa, &sb)?;
        let oa = broadcast_offsets(&sa, &out);
        let ob = broadcast_offsets(&sb, &out);
        let data = oa.iter().zip(&ob).map(|(&i, &j)| f(va[i], vb[j])).collect();
        Ok((Tensor { shape: out, data }, true))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product with broadcasting over size-1 axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| x * k).collect(),
        };
        self.push(t, Op::Scale(a, k), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let v = self.value(a);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| x + k).collect(),
        };
        self.push(t, Op::AddScalar(a), &[a])
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let eps = T::from_f64(TRAINING_EPS);
        let v = self.value(a);
        if let (Unary::Log, Mode::Strict) = (kind, self.mode) {
            if let Some(bad) = v.data().iter().find(|&&x| !(x > T::zero())) {
                return Err(Error::Domain {
                    op: "log",
                    value: bad.as_f64(),
                });
            }
        }
        let f = |x: T| match kind {
            Unary::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Unary::Relu => x.max(T::zero()),
            Unary::Tanh => x.tanh(),
            Unary::Abs => x.abs(),
            Unary::Exp => x.exp(),
            Unary::Log => x.max(eps).ln(),
            Unary::Square => x * x,
        };
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| f(x)).collect(),
        };
        Ok(self.push(t, Op::Unary(a, kind), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu).expect("relu is total")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh).expect("tanh is total")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs).expect("abs is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp).expect("exp is total")
    }

    /// Natural log. Errors on non-positive input in strict mode.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square).expect("square is total")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_f64(v.len() as f64);
        let s: T = v.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a), &[a])
    }

    /// Cross-correlation of `x: [H, W, Cin]` with `w: [k, k, Cin, Cout]`.
    ///
    /// Output size per axis is `floor((n + 2 * padding - k) / stride) + 1`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (h, wd, cin) = dims3("conv2d", self.shape(x))?;
        let (k, cout) = match *self.shape(w) {
            [k1, k2, ci, co] if k1 == k2 && ci == cin => (k1, co),
            ref s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("weight {s:?} incompatible with input channels {cin}"),
                ))
            }
        };
        if self.shape(b) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?}, expected [{cout}]", self.shape(b)),
            ));
        }
        if k % 2 == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d needs odd kernel and stride >= 1, got k={k} stride={stride}"
            )));
        }
        if h + 2 * padding < k || wd + 2 * padding < k {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} larger than padded input {h}x{wd}"),
            ));
        }
        let geom = ConvGeometry {
            h,
            w: wd,
            cin,
            cout,
            k,
            stride,
            pad: padding,
            out_h: (h + 2 * padding - k) / stride + 1,
            out_w: (wd + 2 * padding - k) / stride + 1,
        };
        let data = conv::forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let t = Tensor {
            shape: vec![geom.out_h, geom.out_w, cout],
            data,
        };
        Ok(self.push(t, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    /// Per-channel spatial mean: `[H, W, C] -> [1, 1, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = dims3("global_avg_pool", self.shape(x))?;
        if h == 0 || w == 0 {
            return Err(Error::shape("global_avg_pool", "empty spatial extent"));
        }
        let mut acc = vec![T::zero(); c];
        for px in self.value(x).data().chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        let n = T::from_f64((h * w) as f64);
        acc.iter_mut().for_each(|a| *a = *a / n);
        let t = Tensor {
            shape: vec![1, 1, c],
            data: acc,
        };
        Ok(self.push(t, Op::AvgPool(x), &[x]))
    }

    /// Concatenates `[H, W, Ci]` maps along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let (h, w, _) = dims3("concat", self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (ph, pw, pc) = dims3("concat", self.shape(p))?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(
                    "concat",
                    format!("spatial {ph}x{pw} vs {h}x{w}"),
                ));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(h * w * c);
        for px in 0..h * w {
            for (&p, &pc) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[px * pc..][..pc]);
            }
        }
        let t = Tensor {
            shape: vec![h, w, c],
            data,
        };
        Ok(self.push(t, Op::Concat(parts.to_vec()), parts))
    }

    /// Epipolar correlation volume `[H, W, max_disp + 1]` with
    /// `vol[y, x, d] = <left(y, x), right(y, x - d)> / sqrt(C)`, zero where
    /// `x - d < 0`.
    pub fn correlation(&mut self, left: Var, right: Var, max_disp: usize) -> Result<Var> {
        let (h, w, c) = dims3("correlation", self.shape(left))?;
        if self.shape(right) != self.shape(left) {
            return Err(Error::shape(
                "correlation",
                format!("{:?} vs {:?}", self.shape(left), self.shape(right)),
            ));
        }
        if max_disp >= w {
            return Err(Error::InvalidArgument(format!(
                "max_disp {max_disp} must be below feature width {w}"
            )));
        }
        let nd = max_disp + 1;
        let root_c = T::from_f64(c as f64).sqrt();
        let (l, r) = (self.value(left).data(), self.value(right).data());
        let mut data = vec![T::zero(); h * w * nd];
        for y in 0..h {
            for x in 0..w {
                let lf = &l[(y * w + x) * c..][..c];
                for d in 0..=max_disp.min(x) {
                    let rf = &r[(y * w + x - d) * c..][..c];
                    let dot: T = lf.iter().zip(rf).map(|(&a, &b)| a * b).sum();
                    data[(y * w + x) * nd + d] = dot / root_c;
                }
            }
        }
        let t = Tensor {
            shape: vec![h, w, nd],
            data,
        };
        Ok(self.push(t, Op::Correlation { left, right, max_disp }, &[left, right]))
    }

    /// Samples each pixel's correlation row at `disp + k` for
    /// `k in -radius..=radius` by linear interpolation; entries outside the
    /// volume read as zero. Differentiable in both the volume and `disp`.
    pub fn corr_lookup(&mut self, volume: Var, disp: Var, radius: usize) -> Result<Var> {
        let (h, w, nd) = dims3("corr_lookup", self.shape(volume))?;
        if self.shape(disp) != [h, w, 1] {
            return Err(Error::shape(
                "corr_lookup",
                format!("disparity {:?}, expected [{h}, {w}, 1]", self.shape(disp)),
            ));
        }
        let taps = 2 * radius + 1;
        let (vol, dv) = (self.value(volume).data(), self.value(disp).data());
        let at = |row: &[T], i: isize| {
            if i >= 0 && (i as usize) < nd {
                row[i as usize]
            } else {
                T::zero()
            }
        };
        let mut data = Vec::with_capacity(h * w * taps);
        for px in 0..h * w {
            let row = &vol[px * nd..][..nd];
            for k in 0..taps {
                let p = dv[px] + T::from_f64(k as f64 - radius as f64);
                let f = p.floor();
                let t = p - f;
                let i0 = f.as_f64() as isize;
                data.push((T::one() - t) * at(row, i0) + t * at(row, i0 + 1));
            }
        }
        let t = Tensor {
            shape: vec![h, w, taps],
            data,
        };
        Ok(self.push(t, Op::Lookup { volume, disp, radius }, &[volume, disp]))
    }

    /// Bilinear upsampling by an integer factor with values multiplied by
    /// `gain` (pass the factor itself to rescale disparities).
    pub fn upsample(&mut self, x: Var, factor: usize, gain: f64) -> Result<Var> {
        let (h, w, c) = dims3("upsample", self.shape(x))?;
        if factor == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument("upsample factor and size must be positive".into()));
        }
        let gain = T::from_f64(gain);
        let (ty, tx) = (upsample_taps(h, factor), upsample_taps(w, factor));
        let src = self.value(x).data();
        let (oh, ow) = (h * factor, w * factor);
        let mut data = Vec::with_capacity(oh * ow * c);
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64(fx);
                for ch in 0..c {
                    let v = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                    let top = v(y0, x0) * (T::one() - fx) + v(y0, x1) * fx;
                    let bot = v(y1, x0) * (T::one() - fx) + v(y1, x1) * fx;
                    data.push((top * (T::one() - fy) + bot * fy) * gain);
                }
            }
        }
        let t = Tensor {
            shape: vec![oh, ow, c],
            data,
        };
        Ok(self.push(t, Op::Upsample { x, factor, gain }, &[x]))
    }

    fn norm_floor(&self) -> T {
        match self.mode {
            Mode::Strict => T::zero(),
            Mode::Training => T::from_f64(TRAINING_EPS),
        }
    }

    /// L2-normalises every channel map over its spatial positions. Channels
    /// with zero norm map to zero.
    pub fn channel_normalize(&mut self, x: Var) -> Result<Var> {
        let (_, _, c) = dims3("channel_normalize", self.shape(x))?;
        let norms = self.channel_norms(x, c);
        let floor = self.norm_floor();
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(i, &val)| {
                let n = norms[i % c];
                if n > floor {
                    val / n
                } else {
                    T::zero()
                }
            })
            .collect();
        let t = Tensor {
            shape: v.shape().to_vec(),
            data,
        };
        Ok(self.push(t, Op::ChannelNormalize(x), &[x]))
    }

    fn channel_norms(&self, x: Var, c: usize) -> Vec<T> {
        let mut acc = vec![T::zero(); c];
        for px in self.value(x).data().chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v * v;
            }
        }
        acc.into_iter().map(|s| s.sqrt()).collect()
    }

    /// Populates gradients of `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            // Interior nodes keep their gradient for inspection.
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, &c)| *e += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Sums a broadcast gradient back onto an operand of shape `shape`.
    fn reduce_to(&self, g: &[T], out_shape: &[usize], v: Var, map: impl Fn(usize, T) -> T) -> Vec<T> {
        let shape = self.shape(v);
        let n: usize = shape.iter().product();
        if shape == out_shape {
            return g.iter().enumerate().map(|(i, &gi)| map(i, gi)).collect();
        }
        let offs = broadcast_offsets(shape, out_shape);
        let mut acc = vec![T::zero(); n];
        for (i, (&o, &gi)) in offs.iter().zip(g).enumerate() {
            acc[o] += map(i, gi);
        }
        acc
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = self.reduce_to(g, out_shape, *a, |_, x| x);
                let gb = self.reduce_to(g, out_shape, *b, |_, x| x);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sub(a, b) => {
                let ga = self.reduce_to(g, out_shape, *a, |_, x| x);
                let gb = self.reduce_to(g, out_shape, *b, |_, x| -x);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let oa = (sa != out_shape).then(|| broadcast_offsets(sa, out_shape));
                let ob = (sb != out_shape).then(|| broadcast_offsets(sb, out_shape));
                let ia = |k: usize| oa.as_ref().map_or(k, |o| o[k]);
                let ib = |k: usize| ob.as_ref().map_or(k, |o| o[k]);
                if self.nodes[a.0].requires_grad {
                    let ga = self.reduce_to(g, out_shape, *a, |k, x| x * vb[ib(k)]);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = self.reduce_to(g, out_shape, *b, |k, x| x * va[ia(k)]);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, g.iter().map(|&x| x * *k).collect());
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Unary(a, kind) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let eps = T::from_f64(TRAINING_EPS);
                let two = T::from_f64(2.0);
                let ga = g
                    .iter()
                    .zip(x)
                    .zip(y)
                    .map(|((&gi, &xi), &yi)| {
                        gi * match kind {
                            Unary::Sigmoid => yi * (T::one() - yi),
                            Unary::Relu => {
                                if xi > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Tanh => T::one() - yi * yi,
                            Unary::Abs => {
                                if xi > T::zero() {
                                    T::one()
                                } else if xi < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Exp => yi,
                            Unary::Log => {
                                if xi >= eps {
                                    T::one() / xi
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Square => two * xi,
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let v = g[0] / T::from_f64(n as f64);
                self.accumulate(grads, *a, vec![v; n]);
            }
            Op::Conv { x, w, b, geom } => {
                let need = [
                    self.nodes[x.0].requires_grad,
                    self.nodes[w.0].requires_grad,
                    self.nodes[b.0].requires_grad,
                ];
                let (dx, dw, db) = conv::backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    need,
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let Some(db) = db {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AvgPool(x) => {
                let shape = self.shape(*x);
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let inv = T::one() / T::from_f64((h * w) as f64);
                let mut gx = Vec::with_capacity(h * w * c);
                for _ in 0..h * w {
                    gx.extend(g.iter().map(|&v| v * inv));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(parts) => {
                let c = out_shape[2];
                let npx = out_shape[0] * out_shape[1];
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[2];
                    if self.nodes[p.0].requires_grad {
                        let mut gp = Vec::with_capacity(npx * pc);
                        for px in 0..npx {
                            gp.extend_from_slice(&g[px * c + offset..][..pc]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += pc;
                }
            }
            Op::Correlation {
                left,
                right,
                max_disp,
            } => {
                let shape = self.shape(*left);
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let nd = max_disp + 1;
                let norm = T::one() / T::from_f64(c as f64).sqrt();
                let (l, r) = (self.value(*left).data(), self.value(*right).data());
                let mut gl = vec![T::zero(); l.len()];
                let mut gr = vec![T::zero(); r.len()];
                for y in 0..h {
                    for x in 0..w {
                        let base = (y * w + x) * c;
                        for d in 0..=(*max_disp).min(x) {
                            let gv = g[(y * w + x) * nd + d] * norm;
                            if gv == T::zero() {
                                continue;
                            }
                            let rb = (y * w + x - d) * c;
                            for ch in 0..c {
                                gl[base + ch] += gv * r[rb + ch];
                                gr[rb + ch] += gv * l[base + ch];
                            }
                        }
                    }
                }
                self.accumulate(grads, *left, gl);
                self.accumulate(grads, *right, gr);
            }
            Op::Lookup {
                volume,
                disp,
                radius,
            } => {
                let nd = self.shape(*volume)[2];
                let taps = 2 * radius + 1;
                let (vol, dv) = (self.value(*volume).data(), self.value(*disp).data());
                let mut gvol = vec![T::zero(); vol.len()];
                let mut gd = vec![T::zero(); dv.len()];
                let inside = |i: isize| i >= 0 && (i as usize) < nd;
                for px in 0..dv.len() {
                    let row = px * nd;
                    for k in 0..taps {
                        let gi = g[px * taps + k];
                        let p = dv[px] + T::from_f64(k as f64 - *radius as f64);
                        let f = p.floor();
                        let t = p - f;
                        let i0 = f.as_f64() as isize;
                        let at = |i: isize| row + i as usize;
                        let v0 = if inside(i0) { vol[at(i0)] } else { T::zero() };
                        let v1 = if inside(i0 + 1) { vol[at(i0 + 1)] } else { T::zero() };
                        if inside(i0) {
                            gvol[at(i0)] += gi * (T::one() - t);
                        }
                        if inside(i0 + 1) {
                            gvol[at(i0 + 1)] += gi * t;
                        }
                        gd[px] += gi * (v1 - v0);
                    }
                }
                self.accumulate(grads, *volume, gvol);
                self.accumulate(grads, *disp, gd);
            }
            Op::Upsample { x, factor, gain } => {
                let shape = self.shape(*x);
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (ty, tx) = (upsample_taps(h, *factor), upsample_taps(w, *factor));
                let mut gx = vec![T::zero(); h * w * c];
                let mut k = 0;
                for &(y0, y1, fy) in &ty {
                    let fy = T::from_f64(fy);
                    for &(x0, x1, fx) in &tx {
                        let fx = T::from_f64(fx);
                        for ch in 0..c {
                            let gv = g[k] * *gain;
                            k += 1;
                            let one = T::one();
                            gx[(y0 * w + x0) * c + ch] += gv * (one - fy) * (one - fx);
                            gx[(y0 * w + x1) * c + ch] += gv * (one - fy) * fx;
                            gx[(y1 * w + x0) * c + ch] += gv * fy * (one - fx);
                            gx[(y1 * w + x1) * c + ch] += gv * fy * fx;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ChannelNormalize(x) => {
                let c = out_shape[2];
                let norms = self.channel_norms(*x, c);
                let floor = self.norm_floor();
                let y = node.value.data();
                // per channel: dx = (g - y * <y, g>) / n
                let mut dots = vec![T::zero(); c];
                for (k, (&yi, &gi)) in y.iter().zip(g).enumerate() {
                    dots[k % c] += yi * gi;
                }
                let gx = y
                    .iter()
                    .zip(g)
                    .enumerate()
                    .map(|(k, (&yi, &gi))| {
                        let n = norms[k % c];
                        if n > floor {
                            (gi - yi * dots[k % c]) / n
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
        }
    }
}
