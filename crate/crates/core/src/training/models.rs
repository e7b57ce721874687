use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::converter::{BoundConverter, ConverterParams};
use crate::error::{Error, Result};
use crate::io::load_module;
use crate::matcher::{predict, BoundExtractor, BoundUpdate, DisparitySequence, ExtractorParams, MatcherConfig, UpdateParams};
use crate::nn::{join, Module};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Extractor, converter and recurrent update. The converter is shared by
/// both domains.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoModel<T> {
    pub extractor: ExtractorParams<T>,
    pub converter: ConverterParams<T>,
    pub update: UpdateParams<T>,
    pub config: MatcherConfig,
}

/// Consumes clean and foggy pairs together and fuses their features.
pub type TeacherModel<T> = StereoModel<T>;
/// Consumes a single-domain pair.
pub type StudentModel<T> = StereoModel<T>;

impl<T: Scalar> StereoModel<T> {
    pub fn init(config: &MatcherConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = config.channels;
        Ok(StereoModel {
            extractor: ExtractorParams::init(3, c, config.downsample, rng)?,
            converter: ConverterParams::init(c, rng),
            update: UpdateParams::init(c, config.hidden, config.motion, config.radius, rng),
            config: *config,
        })
    }

    /// Reads a checkpoint written by `save_module` for a model of `config`.
    pub fn load(path: impl AsRef<Path>, config: &MatcherConfig) -> Result<Self> {
        let mut model = Self::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        load_module(path, &mut model)?;
        Ok(model)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundModel {
        BoundModel {
            extractor: self.extractor.bind(tape, trainable),
            converter: self.converter.bind(tape, trainable),
            update: self.update.bind(tape, trainable),
            config: self.config,
        }
    }

    pub fn cast<U: Scalar>(&self) -> StereoModel<U> {
        StereoModel {
            extractor: ExtractorParams {
                layers: self.extractor.layers.iter().map(conv_cast).collect(),
            },
            converter: ConverterParams {
                pre_conv: conv_cast(&self.converter.pre_conv),
                pa_conv: conv_cast(&self.converter.pa_conv),
                ca_conv: conv_cast(&self.converter.ca_conv),
            },
            update: UpdateParams {
                context_init: conv_cast(&self.update.context_init),
                motion: conv_cast(&self.update.motion),
                gate_z: conv_cast(&self.update.gate_z),
                gate_r: conv_cast(&self.update.gate_r),
                gate_q: conv_cast(&self.update.gate_q),
                head_hidden: conv_cast(&self.update.head_hidden),
                head_out: conv_cast(&self.update.head_out),
            },
            config: self.config,
        }
    }
}

fn conv_cast<T: Scalar, U: Scalar>(c: &crate::nn::Conv2d<T>) -> crate::nn::Conv2d<U> {
    crate::nn::Conv2d {
        weight: c.weight.cast(),
        bias: c.bias.cast(),
        stride: c.stride,
        padding: c.padding,
    }
}

impl<T: Scalar> Module<T> for StereoModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.extractor.visit(&join(prefix, "extractor"), f);
        self.converter.visit(&join(prefix, "converter"), f);
        self.update.visit(&join(prefix, "update"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.extractor.visit_mut(&join(prefix, "extractor"), f);
        self.converter.visit_mut(&join(prefix, "converter"), f);
        self.update.visit_mut(&join(prefix, "update"), f);
    }
}

#[derive(Clone, Debug)]
pub struct BoundModel {
    pub extractor: BoundExtractor,
    pub converter: BoundConverter,
    pub update: BoundUpdate,
    pub config: MatcherConfig,
}

impl BoundModel {
    /// Parameter leaves in [`Module::visit`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.extractor.vars(&mut out);
        self.converter.vars(&mut out);
        self.update.vars(&mut out);
        out
    }

    /// `(raw, converted)` features of one image.
    pub fn features<T: Scalar>(&self, tape: &mut Tape<T>, image: Var) -> Result<(Var, Var)> {
        let raw = self.extractor.forward(tape, image)?;
        let converted = self.converter.convert(tape, raw)?;
        Ok((raw, converted))
    }
}

#[derive(Clone, Debug)]
pub struct TeacherOutput {
    pub seq: DisparitySequence,
    /// Fused `(left, right)` features.
    pub fused: (Var, Var),
}

#[derive(Clone, Debug)]
pub struct StudentOutput {
    /// `None` when only features were requested.
    pub seq: Option<DisparitySequence>,
    /// Unconverted `(left, right)` features.
    pub raw: (Var, Var),
    /// Converted `(left, right)` features.
    pub converted: (Var, Var),
}

fn check_pair<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

/// Fuses `convert(F_clean) + convert(F_fog)` per view and matches on the
/// fused features.
pub fn teacher_forward<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel,
    clean: (Var, Var),
    fog: (Var, Var),
    iters: usize,
) -> Result<TeacherOutput> {
    for (a, b) in [(clean.0, clean.1), (clean.0, fog.0), (clean.0, fog.1)] {
        check_pair(tape, "teacher_forward", a, b)?;
    }
    let mut fused = Vec::with_capacity(2);
    for (c, f) in [(clean.0, fog.0), (clean.1, fog.1)] {
        let (_, cc) = model.features(tape, c)?;
        let (_, fc) = model.features(tape, f)?;
        fused.push(tape.add(cc, fc)?);
    }
    let fused = (fused[0], fused[1]);
    let seq = predict(
        tape,
        &model.extractor,
        &model.update,
        &model.config,
        clean.0,
        clean.1,
        Some(fused),
        iters,
    )?;
    Ok(TeacherOutput { seq, fused })
}

/// Single-domain pass: extractor, converter, matcher.
pub fn student_forward<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel,
    pair: (Var, Var),
    iters: usize,
    with_disparity: bool,
) -> Result<StudentOutput> {
    check_pair(tape, "student_forward", pair.0, pair.1)?;
    let (rl, cl) = model.features(tape, pair.0)?;
    let (rr, cr) = model.features(tape, pair.1)?;
    let seq = if with_disparity {
        Some(predict(
            tape,
            &model.extractor,
            &model.update,
            &model.config,
            pair.0,
            pair.1,
            Some((cl, cr)),
            iters,
        )?)
    } else {
        None
    };
    Ok(StudentOutput {
        seq,
        raw: (rl, rr),
        converted: (cl, cr),
    })
}
