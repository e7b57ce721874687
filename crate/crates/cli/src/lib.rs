//! The `cfdnet` command line.
//!
//! Every command reads an [`ExperimentConfig`] (defaults, then `--config`,
//! then each `--set key=value`), writes its outputs under the configured
//! output directory and leaves a [`manifest`] there that `replay` can re-run.
//!
//! Exit codes: 0 on success, 1 on usage, configuration or I/O errors, 2 on
//! numeric failures (non-finite values, failed gradient checks).

pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use cfdnet::ablation::run_ablation;
use cfdnet::config::ExperimentConfig;
use cfdnet::fog::{disparity_to_depth, render_fog, FogParams};
use cfdnet::gradsuite::run_suite;
use cfdnet::io::{read_pfm, read_ppm, save_module, write_ppm};
use cfdnet::parallel::{map_slice, Execution};
use cfdnet::synth::{dataset_splits, write_dataset, Scene};
use cfdnet::training::{predict_student, predict_teacher, StereoModel, TrainSample, TrainedModel, Trainer, LOG_HEADER};

use manifest::{files_under, sha256_file, Manifest};
use report::{metric_row, metrics_csv, MetricRow};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Parser, Debug)]
#[command(name = "cfdnet", version, about = "Stereo matching in fog with contrastive feature distillation")]
pub struct Cli {
    /// Line-oriented `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run independent jobs on the current thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Generate the synthetic training and evaluation scenes.
    SynthData,
    /// Add fog to an image using its disparity map.
    RenderFog {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        disparity: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        airlight: f64,
    },
    /// Train the two-input teacher.
    TrainTeacher,
    /// Train a single-input student; distillation needs `--teacher`.
    TrainStudent {
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Score a checkpoint on the evaluation split, or one predicted PFM
    /// against ground truth.
    Evaluate {
        #[arg(long, conflicts_with_all = ["teacher", "pred"])]
        student: Option<PathBuf>,
        #[arg(long, conflicts_with = "pred")]
        teacher: Option<PathBuf>,
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        rounds: usize,
    },
    /// Train and evaluate all seven arms over `ablate_seeds` seeds.
    Ablate,
    /// Re-run the command recorded in a manifest into `--out`.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numeric(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<cfdnet::Error> for Failure {
    fn from(e: cfdnet::Error) -> Self {
        match e {
            cfdnet::Error::NonFinite(_) | cfdnet::Error::Domain { .. } => Failure::Numeric(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Outcome<(ExperimentConfig, Vec<PathBuf>)> {
    let mut cfg = ExperimentConfig::default();
    let mut inputs = Vec::new();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        cfg.apply_text(&text)?;
        inputs.push(path.clone());
    }
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok((cfg, inputs))
}

pub fn execute(cli: Cli) -> Outcome<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, cli.out.as_deref(), exec);
    }
    let (cfg, inputs) = load_config(&cli)?;
    run_command(&cli.command, &cfg, inputs, exec)
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::RenderFog { .. } => "render-fog",
            Command::TrainTeacher => "train-teacher",
            Command::TrainStudent { .. } => "train-student",
            Command::Evaluate { .. } => "evaluate",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Ablate => "ablate",
            Command::Replay { .. } => "replay",
        }
    }

    /// Command-specific arguments in a form `Cli` parses back.
    pub fn args(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |flag: &str, value: String| {
            out.push(format!("--{flag}"));
            out.push(value);
        };
        let path = |p: &PathBuf| p.display().to_string();
        match self {
            Command::RenderFog {
                image,
                disparity,
                beta,
                airlight,
            } => {
                push("image", path(image));
                push("disparity", path(disparity));
                push("beta", beta.to_string());
                push("airlight", airlight.to_string());
            }
            Command::TrainStudent { teacher: Some(t) } => push("teacher", path(t)),
            Command::Evaluate {
                student,
                teacher,
                pred,
                gt,
            } => {
                for (flag, v) in [("student", student), ("teacher", teacher), ("pred", pred), ("gt", gt)] {
                    if let Some(v) = v {
                        push(flag, path(v));
                    }
                }
            }
            Command::Gradcheck { rounds } => push("rounds", rounds.to_string()),
            Command::Replay { manifest } => push("manifest", path(manifest)),
            Command::SynthData | Command::TrainTeacher | Command::TrainStudent { teacher: None } | Command::Ablate => {}
        }
        out
    }

    /// Files the command reads besides the configuration.
    fn input_files(&self) -> Vec<PathBuf> {
        match self {
            Command::RenderFog { image, disparity, .. } => vec![image.clone(), disparity.clone()],
            Command::TrainStudent { teacher } => teacher.iter().cloned().collect(),
            Command::Evaluate {
                student,
                teacher,
                pred,
                gt,
            } => [student, teacher, pred, gt].into_iter().flatten().cloned().collect(),
            _ => Vec::new(),
        }
    }

    fn uses_dataset(&self) -> bool {
        matches!(
            self,
            Command::TrainTeacher | Command::TrainStudent { .. } | Command::Ablate
        ) || matches!(self, Command::Evaluate { pred: None, .. })
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome<()> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn write_manifest(cmd: &Command, cfg: &ExperimentConfig, mut inputs: Vec<PathBuf>) -> Outcome<()> {
    inputs.extend(cmd.input_files());
    if cmd.uses_dataset() {
        if let Some(dir) = &cfg.dataset_dir {
            inputs.extend(files_under(dir).map_err(|e| io_failure(dir, e))?);
        }
    }
    let inputs = inputs
        .into_iter()
        .map(|p| sha256_file(&p).map(|s| (p.clone(), s)).map_err(|e| io_failure(&p, e)))
        .collect::<Outcome<Vec<_>>>()?;
    let m = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.name().to_string(),
        args: cmd.args(),
        inputs,
        config: cfg.to_text(),
    };
    write_file(&cfg.output_dir.join(manifest::FILE_NAME), m.to_text())
}

fn run_command(cmd: &Command, cfg: &ExperimentConfig, inputs: Vec<PathBuf>, exec: Execution) -> Outcome<()> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    write_manifest(cmd, cfg, inputs)?;
    match cmd {
        Command::SynthData => synth_data(cfg, exec),
        Command::RenderFog {
            image,
            disparity,
            beta,
            airlight,
        } => render(cfg, image, disparity, *beta, *airlight),
        Command::TrainTeacher => train_teacher(cfg, exec),
        Command::TrainStudent { teacher } => train_student(cfg, teacher.as_deref(), exec),
        Command::Evaluate {
            student,
            teacher,
            pred,
            gt,
        } => evaluate(cfg, student.as_deref(), teacher.as_deref(), pred.as_deref().zip(gt.as_deref()), exec),
        Command::Gradcheck { rounds } => gradcheck(cfg, *rounds, exec),
        Command::Ablate => ablate(cfg, exec),
        Command::Replay { .. } => Err(Failure::Usage("a manifest cannot record a replay".into())),
    }
}

fn replay(path: &Path, out: Option<&Path>, exec: Execution) -> Outcome<()> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let m = Manifest::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let changed = m.changed_inputs();
    if !changed.is_empty() {
        return Err(Failure::Usage(format!("inputs changed since the recorded run: {changed:?}")));
    }
    let out = out.ok_or_else(|| Failure::Usage("replay needs --out for the new run".into()))?;
    let argv = ["cfdnet".to_string(), m.command.clone()].into_iter().chain(m.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| Failure::Usage(format!("recorded command does not parse: {e}")))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(Failure::Usage("a manifest cannot record a replay".into()));
    }
    let mut cfg = ExperimentConfig::parse(&m.config)?;
    cfg.output_dir = out.to_path_buf();
    run_command(&cli.command, &cfg, Vec::new(), exec)
}

fn synth_data(cfg: &ExperimentConfig, exec: Execution) -> Outcome<()> {
    let mut gen = cfg.clone();
    gen.dataset_dir = None;
    let (train, eval) = dataset_splits(&gen, exec)?;
    let scenes: Vec<Scene> = train.into_iter().chain(eval).collect();
    let root = cfg.output_dir.join("dataset");
    let records = write_dataset(&root, &scenes)?;
    let mut csv = String::from("scene,beta,airlight,disp_min,disp_max\n");
    for (i, s) in scenes.iter().enumerate() {
        let d = &s.disp_left.data;
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        csv.push_str(&format!("{i},{},{},{lo},{hi}\n", s.fog.beta, s.fog.airlight[0]));
    }
    write_file(&cfg.output_dir.join("scenes.csv"), csv)?;
    eprintln!("wrote {} scenes to {}", records.len(), root.display());
    Ok(())
}

fn render(cfg: &ExperimentConfig, image: &Path, disparity: &Path, beta: f64, airlight: f64) -> Outcome<()> {
    let clean = read_ppm(image)?;
    let disp = read_pfm(disparity)?;
    let depth = disparity_to_depth(&disp, &cfg.rig()?)?;
    let foggy = render_fog(&clean, &depth, &FogParams::gray(beta, airlight))?;
    let path = cfg.output_dir.join("fog.ppm");
    write_ppm(&path, &foggy)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_training(cfg: &ExperimentConfig, name: &str, trained: &TrainedModel) -> Outcome<()> {
    save_module(cfg.output_dir.join(format!("{name}.cfdw")), &trained.model)?;
    let mut log = format!("{LOG_HEADER}\n");
    for row in &trained.log {
        log.push_str(&row.to_csv());
        log.push('\n');
    }
    write_file(&cfg.output_dir.join(format!("{name}_log.csv")), log)
}

fn student_rows(model: &StereoModel<f32>, eval: &[Scene], cfg: &ExperimentConfig, exec: Execution) -> Outcome<Vec<MetricRow>> {
    let rig = cfg.rig()?;
    let preds = map_slice(exec, eval, |s| -> cfdnet::Result<_> {
        Ok((
            predict_student(model, &s.clean_left, &s.clean_right)?,
            predict_student(model, &s.fog_left, &s.fog_right)?,
        ))
    })
    .into_iter()
    .collect::<cfdnet::Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(2 * eval.len());
    for domain in ["clean", "fog"] {
        for (i, ((clean, fog), s)) in preds.iter().zip(eval).enumerate() {
            let pred = if domain == "clean" { clean } else { fog };
            rows.push(metric_row(&format!("scene_{i:04}"), domain, pred, &s.disp_left, &rig)?);
        }
    }
    Ok(rows)
}

fn teacher_rows(model: &StereoModel<f32>, eval: &[Scene], cfg: &ExperimentConfig, exec: Execution) -> Outcome<Vec<MetricRow>> {
    let rig = cfg.rig()?;
    let preds = map_slice(exec, eval, |s| {
        predict_teacher(model, (&s.clean_left, &s.clean_right), (&s.fog_left, &s.fog_right))
    });
    preds
        .into_iter()
        .zip(eval)
        .enumerate()
        .map(|(i, (p, s))| Ok(metric_row(&format!("scene_{i:04}"), "fused", &p?, &s.disp_left, &rig)?))
        .collect()
}

fn emit_metrics(cfg: &ExperimentConfig, rows: &[MetricRow]) -> Outcome<()> {
    let csv = metrics_csv(rows);
    write_file(&cfg.output_dir.join(METRICS_FILE), &csv)?;
    print!("{csv}");
    for line in csv.lines().filter(|l| l.starts_with("mean,")) {
        let f: Vec<&str> = line.split(',').collect();
        eprintln!("{} epe={}", f[1], f[2]);
    }
    Ok(())
}

fn train_teacher(cfg: &ExperimentConfig, exec: Execution) -> Outcome<()> {
    let (train, eval) = dataset_splits(cfg, exec)?;
    let samples: Vec<TrainSample<f32>> = train.iter().map(cfdnet::training::sample_tensors).collect();
    let trained = Trainer::teacher(cfg, &samples, exec)?.run()?;
    write_training(cfg, "teacher", &trained)?;
    emit_metrics(cfg, &teacher_rows(&trained.model, &eval, cfg, exec)?)
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Outcome<StereoModel<f32>> {
    Ok(StereoModel::load(path, &cfg.matcher())?)
}

fn train_student(cfg: &ExperimentConfig, teacher: Option<&Path>, exec: Execution) -> Outcome<()> {
    let teacher = teacher.map(|p| load_model(cfg, p)).transpose()?;
    let (train, eval) = dataset_splits(cfg, exec)?;
    let samples: Vec<TrainSample<f32>> = train.iter().map(cfdnet::training::sample_tensors).collect();
    let trained = Trainer::student(cfg, &samples, teacher.as_ref(), exec)?.run()?;
    write_training(cfg, "student", &trained)?;
    emit_metrics(cfg, &student_rows(&trained.model, &eval, cfg, exec)?)
}

fn evaluate(
    cfg: &ExperimentConfig,
    student: Option<&Path>,
    teacher: Option<&Path>,
    pair: Option<(&Path, &Path)>,
    exec: Execution,
) -> Outcome<()> {
    let rows = match (student, teacher, pair) {
        (_, _, Some((pred, gt))) => {
            let name = pred.file_stem().map_or("pred".into(), |s| s.to_string_lossy().into_owned());
            vec![metric_row(&name, "given", &read_pfm(pred)?, &read_pfm(gt)?, &cfg.rig()?)?]
        }
        (Some(path), None, None) => {
            let (_, eval) = dataset_splits(cfg, exec)?;
            student_rows(&load_model(cfg, path)?, &eval, cfg, exec)?
        }
        (None, Some(path), None) => {
            let (_, eval) = dataset_splits(cfg, exec)?;
            teacher_rows(&load_model(cfg, path)?, &eval, cfg, exec)?
        }
        _ => return Err(Failure::Usage("evaluate needs --student, --teacher, or --pred with --gt".into())),
    };
    emit_metrics(cfg, &rows)
}

fn gradcheck(cfg: &ExperimentConfig, rounds: usize, exec: Execution) -> Outcome<()> {
    let cases = run_suite(cfg.seed, rounds, exec)?;
    let mut csv = String::from("case,rel_error,passed\n");
    for c in &cases {
        csv.push_str(&format!("{},{},{}\n", c.name, c.rel_error, c.passed()));
    }
    write_file(&cfg.output_dir.join("gradcheck.csv"), &csv)?;
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    let worst = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    eprintln!("{} cases, worst relative error {worst:.3e}", cases.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed: {failed:?}")))
    }
}

fn ablate(cfg: &ExperimentConfig, exec: Execution) -> Outcome<()> {
    let report = run_ablation(cfg, exec, &mut |msg| eprintln!("{msg}"))?;
    write_file(&cfg.output_dir.join("ablation.csv"), report.summary_csv())?;
    write_file(&cfg.output_dir.join("ablation_seeds.csv"), report.seeds_csv())?;
    let table = report.table();
    write_file(&cfg.output_dir.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}
