use std::path::Path;
use std::process::{Command, Output};

const MANIFEST: &str = r#"
seed = 3
output_dir = "run"

[model]
blocks_per_body = [1, 2]
channels = { kind = "constant", channels = 4 }
head_hidden = 8

[train]
epochs = 2
batch_size = 4
checkpoint_every = 1

[split]
train_houses = [1]
test_houses = [2]

[[appliances]]
name = "kettle"
preset = "kettle"
on_power_threshold = 1000.0

[synthetic.scenario]
length = 1200
noise_sigma = 30.0

[[synthetic.scenario.appliances]]
name = "kettle"
shape = { kind = "rectangular", amplitude = 2000.0 }
on_points = [24, 44]
off_points = [60, 240]

[[synthetic.scenario.appliances]]
name = "fridge"
shape = { kind = "rectangular", amplitude = 100.0 }
on_points = [20, 40]
off_points = [20, 60]
"#;

fn nilm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nilm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(manifest: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.toml"), manifest).unwrap();
    dir
}

#[test]
fn full_workflow_on_synthetic_data() {
    let dir = setup(MANIFEST);
    let d = dir.path();
    let o = nilm(d, &["prepare", "--manifest", "m.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1000"));
    let o = nilm(d, &["train", "--manifest", "m.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("run/models/kettle.ckpt").is_file());
    assert!(d.join("run/models/kettle_epoch0002.ckpt").is_file());
    let o = nilm(d, &["evaluate", "--manifest", "m.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("kettle"));
    let report = std::fs::read_to_string(d.join("run/reports/report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().ends_with(",3"), "{report}");
    let o = nilm(d, &["inspect", "--checkpoint", "run/models/kettle.ckpt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("total parameters"));
}

#[test]
fn seed_and_out_flags_override_the_manifest() {
    let dir = setup(MANIFEST);
    let d = dir.path();
    let o = nilm(d, &["prepare", "--manifest", "m.toml", "--seed", "9", "--out", "other", "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(d.join("other/summary.toml")).unwrap();
    assert!(summary.contains("seed = 9"), "{summary}");
    assert!(!d.join("run").exists());
}

#[test]
fn synth_writes_a_usable_manifest() {
    let dir = setup(MANIFEST);
    let d = dir.path();
    let o = nilm(d, &["synth", "--manifest", "m.toml", "--out", "gen"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("gen/data/house_1/aggregate.csv").is_file());
    let o = nilm(d, &["prepare", "--manifest", "gen/manifest.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("gen/run/shards/kettle_train.shard").is_file());
}

#[test]
fn inspect_default_prints_receptive_fields_and_note() {
    let dir = tempfile::tempdir().unwrap();
    let o = nilm(dir.path(), &["inspect"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for rf in ["25 points", "57 points", "121 points", "249 points", "259", "1166081"] {
        assert!(text.contains(rf), "{rf} missing from\n{text}");
    }
}

#[test]
fn missing_data_is_a_validation_error() {
    let dir = setup(
        r#"
seed = 1
[[appliances]]
name = "kettle"
preset = "kettle"
[[sources]]
house = 1
role = "aggregate"
path = "data/house_1/aggregate.csv"
"#,
    );
    std::fs::create_dir(dir.path().join("data")).unwrap();
    let o = nilm(dir.path(), &["prepare", "--manifest", "m.toml"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("does not exist"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_manifest_and_bad_flags_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nilm(dir.path(), &["prepare", "--manifest", "nope.toml"]).status.code(), Some(1));
    assert_eq!(nilm(dir.path(), &["prepare", "--colour"]).status.code(), Some(1));
    assert_eq!(nilm(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn train_before_prepare_exits_2() {
    let dir = setup(MANIFEST);
    let o = nilm(dir.path(), &["train", "--manifest", "m.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nilm prepare"), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_3() {
    let manifest = MANIFEST.replace(
        "checkpoint_every = 1",
        "checkpoint_every = 1\noptimizer = \"sgd_nesterov\"\nsgd = { lr = 1e30, momentum = 0.9 }",
    );
    let dir = setup(&manifest);
    assert!(nilm(dir.path(), &["prepare", "--manifest", "m.toml"]).status.success());
    let o = nilm(dir.path(), &["train", "--manifest", "m.toml"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn checkpoint_from_another_seed_warns_but_evaluates() {
    let dir = setup(MANIFEST);
    let d = dir.path();
    assert!(nilm(d, &["prepare", "--manifest", "m.toml"]).status.success());
    assert!(nilm(d, &["train", "--manifest", "m.toml"]).status.success());
    let o = nilm(
        d,
        &["evaluate", "--manifest", "m.toml", "--seed", "4", "--checkpoint", "run/models/kettle.ckpt", "--appliance", "kettle"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}
