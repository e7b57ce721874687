use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set", "n_train=4",
    "--set", "n_eval=2",
    "--set", "teacher_steps=3",
    "--set", "student_steps=3",
    "--set", "batch_size=2",
];

fn cfdnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfdnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cfdnet(d, &["--help"]).status.code(), Some(0));
    assert_eq!(cfdnet(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(cfdnet(d, &["synth-data", "--set", "nope=1"]).status.code(), Some(1));
    assert_eq!(cfdnet(d, &["synth-data", "--config", "missing.cfg"]).status.code(), Some(1));
    let o = cfdnet(d, &["evaluate", "--pred", "a.pfm", "--gt", "b.pfm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a.pfm"));
    assert_eq!(cfdnet(d, &["train-student", "--set", "use_dist=true", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn config_file_and_overrides_stack() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.cfg"), "n_train = 3\nn_eval = 1\nseed = 4\n").unwrap();
    let o = cfdnet(d, &["synth-data", "--config", "run.cfg", "--set", "n_eval=2", "--out", "data"]);
    assert!(o.status.success());
    assert_eq!(fs::read_dir(d.join("data/dataset")).unwrap().count(), 5);
    let manifest = fs::read_to_string(d.join("data/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 4\n") && manifest.contains("n_eval = 2\n"));
    assert!(manifest.contains(" run.cfg\n"));
}

#[test]
fn evaluate_on_ground_truth_prints_zero_epe() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cfdnet(d, &with_tiny(&["synth-data", "--out", "data"])).status.success());
    let gt = "data/dataset/scene_0000/disp_left.pfm";
    let o = cfdnet(d, &["evaluate", "--pred", gt, "--gt", gt, "--out", "eval"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "epe").unwrap();
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split(',').nth(col), Some("0"));
    }
}

#[test]
fn render_fog_reproduces_the_dataset_fog() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cfdnet(d, &with_tiny(&["synth-data", "--out", "data"])).status.success());
    let scenes = fs::read_to_string(d.join("data/scenes.csv")).unwrap();
    let first: Vec<&str> = scenes.lines().nth(1).unwrap().split(',').collect();
    let o = cfdnet(
        d,
        &[
            "render-fog",
            "--image", "data/dataset/scene_0000/left.ppm",
            "--disparity", "data/dataset/scene_0000/disp_left.pfm",
            "--beta", first[1],
            "--airlight", first[2],
            "--out", "fog",
        ],
    );
    assert!(o.status.success());
    assert_eq!(
        fs::read(d.join("fog/fog.ppm")).unwrap(),
        fs::read(d.join("data/dataset/scene_0000/fog_left.ppm")).unwrap()
    );
}

#[test]
fn gradcheck_passes_on_fresh_models() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfdnet(dir.path(), &["gradcheck", "--rounds", "1", "--out", "g"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("g/gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn training_chain_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cfdnet(d, &with_tiny(&["train-teacher", "--out", "teacher"])).status.success());
    let student = with_tiny(&[
        "train-student", "--teacher", "teacher/teacher.cfdw", "--set", "use_dist=true", "--set", "use_cont=true", "--out", "student",
    ]);
    assert!(cfdnet(d, &student).status.success());
    let o = cfdnet(d, &["replay", "--manifest", "student/manifest.txt", "--out", "again"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "student_log.csv", "student.cfdw"] {
        assert_eq!(fs::read(d.join("student").join(f)).unwrap(), fs::read(d.join("again").join(f)).unwrap(), "{f}");
    }

    fs::write(d.join("teacher/teacher.cfdw"), b"tampered").unwrap();
    let o = cfdnet(d, &["replay", "--manifest", "student/manifest.txt", "--out", "third"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablate_emits_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = cfdnet(d, &with_tiny(&["ablate", "--set", "ablate_seeds=1", "--out", "abl"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("abl/ablation.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        labels,
        ["Student-C", "Student-F", "Student-Mix", "Teacher", "Student+Dist", "Student+Cont", "Student+Dist+Cont"]
    );
    assert_eq!(stdout(&o).lines().count(), 8);
    assert_eq!(fs::read_to_string(d.join("abl/ablation.txt")).unwrap(), stdout(&o));
}
