use rand::Rng;

use crate::error::Result;
use crate::nn::{join, BoundConv, Conv2d, Module};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Convolutional GRU that refines disparity from correlation lookups.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateParams<T> {
    /// 1x1, context -> hidden; `h0 = tanh(context_init(context))`.
    pub context_init: Conv2d<T>,
    /// 3x3, (lookup taps + 1) -> motion.
    pub motion: Conv2d<T>,
    pub gate_z: Conv2d<T>,
    pub gate_r: Conv2d<T>,
    pub gate_q: Conv2d<T>,
    /// 3x3, hidden -> hidden, ReLU.
    pub head_hidden: Conv2d<T>,
    /// 3x3, hidden -> 1. All-zero here means the disparity never moves.
    pub head_out: Conv2d<T>,
}

impl<T: Scalar> UpdateParams<T> {
    pub fn init(context: usize, hidden: usize, motion: usize, radius: usize, rng: &mut impl Rng) -> Self {
        let taps = 2 * radius + 1;
        let gate_in = hidden + motion + context;
        let relu_gain = 2f64.sqrt();
        UpdateParams {
            context_init: Conv2d::init(1, context, hidden, 1, 1.0, rng),
            motion: Conv2d::init(3, taps + 1, motion, 1, relu_gain, rng),
            gate_z: Conv2d::init(3, gate_in, hidden, 1, 1.0, rng),
            gate_r: Conv2d::init(3, gate_in, hidden, 1, 1.0, rng),
            gate_q: Conv2d::init(3, gate_in, hidden, 1, 1.0, rng),
            head_hidden: Conv2d::init(3, hidden, hidden, 1, relu_gain, rng),
            head_out: Conv2d::init(3, hidden, 1, 1, 0.1, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.context_init.out_channels()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundUpdate {
        BoundUpdate {
            context_init: self.context_init.bind(tape, trainable),
            motion: self.motion.bind(tape, trainable),
            gate_z: self.gate_z.bind(tape, trainable),
            gate_r: self.gate_r.bind(tape, trainable),
            gate_q: self.gate_q.bind(tape, trainable),
            head_hidden: self.head_hidden.bind(tape, trainable),
            head_out: self.head_out.bind(tape, trainable),
        }
    }
}

impl<T: Scalar> Module<T> for UpdateParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.context_init.visit(&join(prefix, "context_init"), f);
        self.motion.visit(&join(prefix, "motion"), f);
        self.gate_z.visit(&join(prefix, "gate_z"), f);
        self.gate_r.visit(&join(prefix, "gate_r"), f);
        self.gate_q.visit(&join(prefix, "gate_q"), f);
        self.head_hidden.visit(&join(prefix, "head_hidden"), f);
        self.head_out.visit(&join(prefix, "head_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.context_init.visit_mut(&join(prefix, "context_init"), f);
        self.motion.visit_mut(&join(prefix, "motion"), f);
        self.gate_z.visit_mut(&join(prefix, "gate_z"), f);
        self.gate_r.visit_mut(&join(prefix, "gate_r"), f);
        self.gate_q.visit_mut(&join(prefix, "gate_q"), f);
        self.head_hidden.visit_mut(&join(prefix, "head_hidden"), f);
        self.head_out.visit_mut(&join(prefix, "head_out"), f);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundUpdate {
    pub context_init: BoundConv,
    pub motion: BoundConv,
    pub gate_z: BoundConv,
    pub gate_r: BoundConv,
    pub gate_q: BoundConv,
    pub head_hidden: BoundConv,
    pub head_out: BoundConv,
}

impl BoundUpdate {
    pub fn initial_hidden<T: Scalar>(&self, tape: &mut Tape<T>, context: Var) -> Result<Var> {
        let h = self.context_init.forward(tape, context)?;
        Ok(tape.tanh(h))
    }

    /// One gated recurrent step. Returns `(hidden', delta)` where `delta` is
    /// the additive disparity update at feature resolution.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        hidden: Var,
        context: Var,
        corr_slice: Var,
        disparity: Var,
    ) -> Result<(Var, Var)> {
        let motion_in = tape.concat_channels(&[corr_slice, disparity])?;
        let motion = self.motion.forward(tape, motion_in)?;
        let motion = tape.relu(motion);
        let x = tape.concat_channels(&[motion, context])?;

        let hx = tape.concat_channels(&[hidden, x])?;
        let z = self.gate_z.forward(tape, hx)?;
        let z = tape.sigmoid(z);
        let r = self.gate_r.forward(tape, hx)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, hidden)?;
        let rhx = tape.concat_channels(&[rh, x])?;
        let q = self.gate_q.forward(tape, rhx)?;
        let q = tape.tanh(q);

        // h' = h + z * (q - h)
        let step = tape.sub(q, hidden)?;
        let step = tape.mul(z, step)?;
        let hidden = tape.add(hidden, step)?;

        let head = self.head_hidden.forward(tape, hidden)?;
        let head = tape.relu(head);
        let delta = self.head_out.forward(tape, head)?;
        Ok((hidden, delta))
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        for c in [
            &self.context_init,
            &self.motion,
            &self.gate_z,
            &self.gate_r,
            &self.gate_q,
            &self.head_hidden,
            &self.head_out,
        ] {
            c.vars(out);
        }
    }
}
