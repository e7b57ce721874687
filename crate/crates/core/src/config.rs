//! Experiment configuration in a line-oriented `key = value` format.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors.
//! [`ExperimentConfig::to_text`] writes every key in a fixed order, so
//! `to_text(parse(text))` is a fixed point.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fog::CameraRig;
use crate::matcher::MatcherConfig;
use crate::training::LossWeights;

/// Which domains supply disparity supervision to a student.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainDomains {
    Clean,
    Fog,
    Mix,
}

impl FromStr for TrainDomains {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(TrainDomains::Clean),
            "fog" => Ok(TrainDomains::Fog),
            "mix" => Ok(TrainDomains::Mix),
            _ => Err(Error::Config(format!("train_domains must be clean|fog|mix, got {s:?}"))),
        }
    }
}

impl fmt::Display for TrainDomains {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainDomains::Clean => "clean",
            TrainDomains::Fog => "fog",
            TrainDomains::Mix => "mix",
        })
    }
}

/// One row of the ablation lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arm {
    StudentClean,
    StudentFog,
    StudentMix,
    Teacher,
    StudentDist,
    StudentCont,
    StudentDistCont,
}

impl Arm {
    pub const ALL: [Arm; 7] = [
        Arm::StudentClean,
        Arm::StudentFog,
        Arm::StudentMix,
        Arm::Teacher,
        Arm::StudentDist,
        Arm::StudentCont,
        Arm::StudentDistCont,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Arm::StudentClean => "Student-C",
            Arm::StudentFog => "Student-F",
            Arm::StudentMix => "Student-Mix",
            Arm::Teacher => "Teacher",
            Arm::StudentDist => "Student+Dist",
            Arm::StudentCont => "Student+Cont",
            Arm::StudentDistCont => "Student+Dist+Cont",
        }
    }

    /// `(train_domains, use_dist, use_cont)`; `None` for the teacher.
    pub fn switches(self) -> Option<(TrainDomains, bool, bool)> {
        match self {
            Arm::StudentClean => Some((TrainDomains::Clean, false, false)),
            Arm::StudentFog => Some((TrainDomains::Fog, false, false)),
            Arm::StudentMix => Some((TrainDomains::Mix, false, false)),
            Arm::Teacher => None,
            Arm::StudentDist => Some((TrainDomains::Mix, true, false)),
            Arm::StudentCont => Some((TrainDomains::Mix, false, true)),
            Arm::StudentDistCont => Some((TrainDomains::Mix, true, true)),
        }
    }

    pub fn needs_teacher(self) -> bool {
        matches!(self.switches(), Some((_, true, _)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub disp_min: f64,
    pub disp_max: f64,
    pub layers_min: usize,
    pub layers_max: usize,
    pub focal_px: f64,
    pub baseline_m: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub airlight_min: f64,
    pub airlight_max: f64,
    pub channels: usize,
    pub downsample: usize,
    pub hidden: usize,
    pub motion: usize,
    pub max_disp: usize,
    pub radius: usize,
    pub iters: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub margin: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_grad: f64,
    pub batch_size: usize,
    pub teacher_steps: usize,
    pub student_steps: usize,
    pub use_dist: bool,
    pub use_cont: bool,
    pub train_domains: TrainDomains,
    /// Seeds used by `ablate`, starting at `seed`.
    pub ablate_seeds: usize,
    /// Load scenes from here instead of generating them.
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = MatcherConfig::default();
        let w = LossWeights::default();
        ExperimentConfig {
            seed: 0,
            height: 32,
            width: 64,
            n_train: 256,
            n_eval: 32,
            disp_min: 2.0,
            disp_max: 12.0,
            layers_min: 2,
            layers_max: 4,
            focal_px: 200.0,
            baseline_m: 0.3,
            beta_min: 0.03,
            beta_max: 0.3,
            airlight_min: 0.7,
            airlight_max: 1.0,
            channels: m.channels,
            downsample: m.downsample,
            hidden: m.hidden,
            motion: m.motion,
            max_disp: m.max_disp,
            radius: m.radius,
            iters: m.iters,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            gamma: w.gamma,
            margin: w.margin,
            lr: 4e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_grad: 1.0,
            batch_size: 4,
            teacher_steps: 1200,
            student_steps: 600,
            use_dist: false,
            use_cont: false,
            train_domains: TrainDomains::Mix,
            ablate_seeds: 3,
            dataset_dir: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Small full-batch setting for overfitting checks: 8 training scenes,
    /// batch 8, learning rate 1e-3.
    pub fn overfit_preset() -> Self {
        ExperimentConfig {
            n_train: 8,
            n_eval: 8,
            batch_size: 8,
            lr: 1e-3,
            teacher_steps: 3000,
            student_steps: 2000,
            ..ExperimentConfig::default()
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        impl ExperimentConfig {
            /// Every recognised key, in serialisation order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $(stringify!($key) => config_keys!(@set self, $key, $kind, value),)*
                    other => return Err(Error::Config(format!("unknown key {other:?}"))),
                }
                Ok(())
            }

            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(stringify!($key));
                    out.push_str(" = ");
                    out.push_str(&config_keys!(@get self, $key, $kind));
                    out.push('\n');
                )*
                out
            }
        }
    };
    (@set $s:ident, $key:ident, num, $v:ident) => { $s.$key = parse(stringify!($key), $v)? };
    (@set $s:ident, $key:ident, bool, $v:ident) => { $s.$key = parse_bool(stringify!($key), $v)? };
    (@set $s:ident, $key:ident, path, $v:ident) => { $s.$key = PathBuf::from($v) };
    (@set $s:ident, $key:ident, opt_path, $v:ident) => {
        $s.$key = if $v.is_empty() { None } else { Some(PathBuf::from($v)) }
    };
    (@get $s:ident, $key:ident, num) => { format!("{}", $s.$key) };
    (@get $s:ident, $key:ident, bool) => { format!("{}", $s.$key) };
    (@get $s:ident, $key:ident, path) => { $s.$key.display().to_string() };
    (@get $s:ident, $key:ident, opt_path) => {
        $s.$key.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    };
}

config_keys! {
    seed: num,
    height: num,
    width: num,
    n_train: num,
    n_eval: num,
    disp_min: num,
    disp_max: num,
    layers_min: num,
    layers_max: num,
    focal_px: num,
    baseline_m: num,
    beta_min: num,
    beta_max: num,
    airlight_min: num,
    airlight_max: num,
    channels: num,
    downsample: num,
    hidden: num,
    motion: num,
    max_disp: num,
    radius: num,
    iters: num,
    lambda1: num,
    lambda2: num,
    gamma: num,
    margin: num,
    lr: num,
    adam_beta1: num,
    adam_beta2: num,
    adam_eps: num,
    clip_grad: num,
    batch_size: num,
    teacher_steps: num,
    student_steps: num,
    use_dist: bool,
    use_cont: bool,
    train_domains: num,
    ablate_seeds: num,
    dataset_dir: opt_path,
    output_dir: path,
}

impl ExperimentConfig {
    /// Parses `key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || self.height % self.downsample != 0 || self.width % self.downsample != 0 {
            return fail(format!(
                "image size {}x{} must be positive multiples of downsample {}",
                self.height, self.width, self.downsample
            ));
        }
        if !(self.disp_min > 0.0 && self.disp_min <= self.disp_max) {
            return fail(format!("need 0 < disp_min <= disp_max, got {} / {}", self.disp_min, self.disp_max));
        }
        if self.disp_max >= self.width as f64 / 4.0 {
            return fail(format!("disp_max {} must be below width / 4 = {}", self.disp_max, self.width as f64 / 4.0));
        }
        if self.layers_min < 1 || self.layers_min > self.layers_max {
            return fail("need 1 <= layers_min <= layers_max".into());
        }
        if !(self.beta_min >= 0.0 && self.beta_min <= self.beta_max) {
            return fail("need 0 <= beta_min <= beta_max".into());
        }
        if !(0.0..=1.0).contains(&self.airlight_min) || !(0.0..=1.0).contains(&self.airlight_max) || self.airlight_min > self.airlight_max {
            return fail("airlight range must lie in [0, 1]".into());
        }
        if self.max_disp >= self.width / self.downsample {
            return fail(format!("max_disp {} must be below feature width {}", self.max_disp, self.width / self.downsample));
        }
        if self.iters == 0 || self.batch_size == 0 || self.channels == 0 || self.hidden == 0 || self.motion == 0 {
            return fail("iters, batch_size, channels, hidden and motion must be positive".into());
        }
        self.loss_weights().validate()?;
        self.rig()?;
        if let Some(dir) = &self.dataset_dir {
            if !dir.is_dir() {
                return fail(format!("dataset_dir {} does not exist", dir.display()));
            }
        }
        Ok(())
    }

    pub fn matcher(&self) -> MatcherConfig {
        MatcherConfig {
            channels: self.channels,
            downsample: self.downsample,
            hidden: self.hidden,
            motion: self.motion,
            max_disp: self.max_disp,
            radius: self.radius,
            iters: self.iters,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            gamma: self.gamma,
            margin: self.margin,
        }
    }

    pub fn rig(&self) -> Result<CameraRig> {
        CameraRig::new(self.focal_px, self.baseline_m)
    }

    /// Copy with the switches of one ablation row.
    pub fn for_arm(&self, arm: Arm) -> ExperimentConfig {
        let mut cfg = self.clone();
        if let Some((domains, dist, cont)) = arm.switches() {
            cfg.train_domains = domains;
            cfg.use_dist = dist;
            cfg.use_cont = cont;
        }
        cfg
    }
}
