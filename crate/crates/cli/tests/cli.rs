//! End-to-end CLI checks, including the byte-identical-output half of the
//! determinism criterion.

use std::path::Path;
use std::process::Command;

fn satmec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_satmec"))
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
episodes = 3
eval_episodes = 2
seeds = [1, 2]
schedulers = ["comappo", "random"]
minibatch_size = 64
ppo_epochs = 2
woa_budget = 4
woa_population = 6
learning_rate = 1e-3
gamma2 = 0.05

[scenario]
cte_count = 8
task_count = 2
lms_count = 1
cubesat_count = 3
horizon_slots = 60
cns_bandwidth_hz = 2e6
lms_bandwidth_hz = 8e5
cubesat_bandwidth_hz = 4e5
lms_footprint_radius_km = 150.0
cubesat_footprint_radius_km = 100.0
"#,
    )
    .unwrap();
    path
}

#[test]
fn criterion_11_repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for (sub, extra) in [
        ("generate", vec![]),
        ("evaluate", vec!["--scheduler", "woa"]),
        ("evaluate", vec!["--scheduler", "comappo"]),
        ("sweep", vec![]),
    ] {
        for out in [&out_a, &out_b] {
            let mut cmd = satmec();
            cmd.arg(sub)
                .arg("--config")
                .arg(&cfg)
                .arg("--seed")
                .arg("7")
                .arg("--out")
                .arg(out);
            if sub == "sweep" {
                // Two-point sweep over the non-learning schedulers keeps the
                // check quick while exercising the CSV writer fully.
                cmd.env("SATMEC_WORKERS", "2");
            }
            for e in &extra {
                cmd.arg(e);
            }
            let status = cmd.status().unwrap();
            assert!(status.success(), "{sub} failed");
        }
        for entry in std::fs::read_dir(&out_a).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(out_a.join(&name)).unwrap();
            let b = std::fs::read(out_b.join(&name)).unwrap();
            assert_eq!(a, b, "{sub}: {name:?} differs between identical runs");
        }
    }
    println!("[criterion 11] CLI determinism: PASS (byte-identical outputs)");
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let output = satmec()
        .arg("evaluate")
        .arg("--config")
        .arg("/does/not/exist.toml")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/does/not/exist.toml"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let output = satmec().arg("evaluate").arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "alpha1 = 0.9\nalpha2 = 0.9\n").unwrap();
    let output = satmec().arg("generate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn verify_allocator_prints_counts_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let output = satmec()
        .arg("verify-allocator")
        .arg("--instances")
        .arg("5")
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("pass / 0 fail"), "stdout: {stdout}");
}

#[test]
fn generate_twice_same_seed_identical_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    for out in ["g1", "g2"] {
        let status = satmec()
            .arg("generate")
            .arg("--config")
            .arg(&cfg)
            .arg("--seed")
            .arg("7")
            .arg("--out")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(dir.path().join("g1/scenario_seed7.json")).unwrap();
    let b = std::fs::read(dir.path().join("g2/scenario_seed7.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn train_writes_checkpoint_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("train");
    let status = satmec()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--seed")
        .arg("3")
        .arg("--scheduler")
        .arg("comappo")
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("checkpoint_comappo_seed3.json").exists());
    let curves = std::fs::read_to_string(out.join("curves_comappo_seed3.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(
        lines.next().unwrap(),
        "episode,agent_class,cumulative_reward,policy_loss,value_loss,entropy"
    );
    assert!(lines.count() >= 3);
    assert!(out.join("manifest_train.json").exists());
}

#[test]
fn ablation_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("abl");
    let status = satmec()
        .arg("ablation")
        .arg("--config")
        .arg(&cfg)
        .arg("--seed")
        .arg("2")
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("sweep_ablation.csv")).unwrap();
    assert!(csv.lines().count() > 4, "expected sweep rows, got:\n{csv}");
}
