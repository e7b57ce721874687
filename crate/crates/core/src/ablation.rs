//! The seven-row ablation lattice, repeated over consecutive seeds.

use std::fmt::Write;

use crate::config::{Arm, ExperimentConfig};
use crate::error::Result;
use crate::metrics::StereoEval;
use crate::parallel::{map_slice, Execution};
use crate::synth::dataset_splits;
use crate::training::{evaluate_student, evaluate_teacher, sample_tensors, DomainEval, TrainSample, Trainer};

/// Evaluation of one arm. The teacher consumes both domains at once and
/// has a single score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArmScore {
    Student(DomainEval),
    Teacher(StereoEval),
}

impl ArmScore {
    /// Teacher EPE, or the student's EPE averaged over both domains.
    pub fn epe(&self) -> f64 {
        match self {
            ArmScore::Student(d) => d.epe(),
            ArmScore::Teacher(e) => e.epe,
        }
    }

    pub fn student(&self) -> Option<&DomainEval> {
        match self {
            ArmScore::Student(d) => Some(d),
            ArmScore::Teacher(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    /// In `Arm::ALL` order.
    pub scores: Vec<(Arm, ArmScore)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<SeedRun>,
}

pub const SUMMARY_HEADER: &str = "arm,clean_epe,clean_p1,clean_d1,fog_epe,fog_p1,fog_d1,epe";
pub const SEEDS_HEADER: &str = "seed,arm,clean_epe,clean_p1,clean_d1,fog_epe,fog_p1,fog_d1,epe";

fn csv_fields(score: &ArmScore) -> String {
    match score {
        ArmScore::Student(d) => format!(
            "{},{},{},{},{},{},{}",
            d.clean.epe,
            d.clean.p1,
            d.clean.d1,
            d.fog.epe,
            d.fog.p1,
            d.fog.d1,
            d.epe()
        ),
        ArmScore::Teacher(e) => format!(",,,,,,{}", e.epe),
    }
}

impl AblationReport {
    /// Seed-averaged score of `arm`.
    pub fn mean(&self, arm: Arm) -> Option<ArmScore> {
        let scores: Vec<ArmScore> = self
            .runs
            .iter()
            .flat_map(|r| r.scores.iter().filter(|(a, _)| *a == arm).map(|(_, s)| *s))
            .collect();
        match scores.first()? {
            ArmScore::Student(_) => {
                let d: Vec<DomainEval> = scores.iter().filter_map(|s| s.student().copied()).collect();
                Some(ArmScore::Student(DomainEval::mean(&d)))
            }
            ArmScore::Teacher(_) => {
                let e: Vec<StereoEval> = scores
                    .iter()
                    .filter_map(|s| match s {
                        ArmScore::Teacher(e) => Some(*e),
                        ArmScore::Student(_) => None,
                    })
                    .collect();
                Some(ArmScore::Teacher(StereoEval::mean(&e)))
            }
        }
    }

    /// One seed-averaged row per arm.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for arm in Arm::ALL {
            if let Some(s) = self.mean(arm) {
                writeln!(out, "{},{}", arm.label(), csv_fields(&s)).unwrap();
            }
        }
        out
    }

    pub fn seeds_csv(&self) -> String {
        let mut out = format!("{SEEDS_HEADER}\n");
        for run in &self.runs {
            for (arm, s) in &run.scores {
                writeln!(out, "{},{},{}", run.seed, arm.label(), csv_fields(s)).unwrap();
            }
        }
        out
    }

    /// Seed-averaged results as an aligned text table (P1 in percent).
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "arm", "clean EPE", "clean P1%", "fog EPE", "fog P1%", "EPE"
        );
        for arm in Arm::ALL {
            let Some(s) = self.mean(arm) else { continue };
            match s {
                ArmScore::Student(d) => writeln!(
                    out,
                    "{:<18} {:>9.3} {:>9.2} {:>9.3} {:>9.2} {:>9.3}",
                    arm.label(),
                    d.clean.epe,
                    100.0 * d.clean.p1,
                    d.fog.epe,
                    100.0 * d.fog.p1,
                    d.epe()
                ),
                ArmScore::Teacher(e) => {
                    writeln!(out, "{:<18} {:>9} {:>9} {:>9} {:>9} {:>9.3}", arm.label(), "-", "-", "-", "-", e.epe)
                }
            }
            .unwrap();
        }
        out
    }
}

/// Trains and evaluates every arm for seeds `cfg.seed .. cfg.seed + cfg.ablate_seeds`.
///
/// The teacher is trained once per seed and shared by the distillation arms.
pub fn run_ablation(cfg: &ExperimentConfig, exec: Execution, progress: &mut dyn FnMut(&str)) -> Result<AblationReport> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.ablate_seeds);
    for k in 0..cfg.ablate_seeds as u64 {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = cfg.seed + k;
        let (train, eval) = dataset_splits(&seed_cfg, exec)?;
        let samples: Vec<TrainSample<f32>> = train.iter().map(sample_tensors).collect();
        let teacher = Trainer::teacher(&seed_cfg, &samples, exec)?.run()?.model;
        let teacher_score = ArmScore::Teacher(StereoEval::mean(&evaluate_teacher(&teacher, &eval, exec)?));
        progress(&format!("seed {}: Teacher epe {:.4}", seed_cfg.seed, teacher_score.epe()));
        let students: Vec<Arm> = Arm::ALL.into_iter().filter(|a| *a != Arm::Teacher).collect();
        let student_scores = map_slice(exec, &students, |&arm| -> Result<ArmScore> {
            let arm_cfg = seed_cfg.for_arm(arm);
            let model = Trainer::student(&arm_cfg, &samples, Some(&teacher), exec)?.run()?.model;
            Ok(ArmScore::Student(DomainEval::mean(&evaluate_student(&model, &eval, exec)?)))
        });
        let mut scores = Vec::with_capacity(Arm::ALL.len());
        let mut it = students.iter().zip(student_scores);
        for arm in Arm::ALL {
            if arm == Arm::Teacher {
                scores.push((arm, teacher_score));
                continue;
            }
            let (&a, s) = it.next().expect("one score per student arm");
            let s = s?;
            progress(&format!("seed {}: {} epe {:.4}", seed_cfg.seed, a.label(), s.epe()));
            scores.push((a, s));
        }
        runs.push(SeedRun {
            seed: seed_cfg.seed,
            scores,
        });
    }
    Ok(AblationReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(epe: f64) -> StereoEval {
        StereoEval {
            epe,
            ..StereoEval::default()
        }
    }

    fn report() -> AblationReport {
        let run = |seed, base: f64| SeedRun {
            seed,
            scores: Arm::ALL
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let s = if a == Arm::Teacher {
                        ArmScore::Teacher(eval(base))
                    } else {
                        ArmScore::Student(DomainEval {
                            clean: eval(base + i as f64),
                            fog: eval(base + 2.0 * i as f64),
                        })
                    };
                    (a, s)
                })
                .collect(),
        };
        AblationReport {
            runs: vec![run(0, 1.0), run(1, 3.0)],
        }
    }

    #[test]
    fn seed_means_and_row_counts() {
        let r = report();
        assert_eq!(r.mean(Arm::Teacher).unwrap().epe(), 2.0);
        let mix = r.mean(Arm::StudentMix).unwrap();
        let d = mix.student().unwrap();
        assert_eq!((d.clean.epe, d.fog.epe), (4.0, 6.0));
        assert_eq!(r.summary_csv().lines().count(), 8);
        assert_eq!(r.seeds_csv().lines().count(), 15);
        assert_eq!(r.table().lines().count(), 8);
        assert!(r.summary_csv().contains("Teacher,,,,,,,2\n"));
    }
}
