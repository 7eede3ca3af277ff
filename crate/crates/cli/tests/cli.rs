//! End-to-end smoke tests for every subcommand and the exit-code contract.

use std::path::Path;
use std::process::Command;

fn cekd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cekd"))
}

fn write_spec(path: &Path) {
    std::fs::write(
        path,
        r#"{"num_classes": 4, "samples_per_class": 8, "image_hw": 16, "channels": 1,
            "marker_size": 4, "noise_std": 0.05, "seed": 1}"#,
    )
    .unwrap();
}

fn write_config(path: &Path, data_dir: &Path) {
    let config = format!(
        r#"{{
  "dataset": {{"num_classes": 4, "samples_per_class": 8, "image_hw": 16, "channels": 1,
              "marker_size": 4, "noise_std": 0.05, "seed": 1}},
  "dataset_path": {:?},
  "net": {{"input_channels": 1, "input_hw": 16, "conv_channels": [4, 8],
          "pool_after": [true, true], "num_classes": 4}},
  "epochs": 2,
  "batch_size": 4,
  "base_lr": 0.02
}}"#,
        data_dir.to_str().unwrap()
    );
    std::fs::write(path, config).unwrap();
}

#[test]
fn full_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let data = dir.path().join("data");
    write_spec(&spec);

    let out = cekd()
        .args(["generate-data", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());
    assert!(data.join("labels.tsv").exists());

    let config = dir.path().join("config.json");
    let run = dir.path().join("run");
    write_config(&config, &data);
    let out = cekd()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for artifact in ["config.json", "metrics.jsonl", "summary.json", "teacher.ckpt", "student.ckpt"] {
        assert!(run.join(artifact).exists(), "missing {artifact}");
    }

    let out = cekd()
        .args(["eval", "--checkpoint"])
        .arg(run.join("teacher.ckpt"))
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("test accuracy"));

    let cams = dir.path().join("cams");
    let out = cekd()
        .args(["cam", "--checkpoint"])
        .arg(run.join("teacher.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&cams)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cams.join("cam_records.tsv").exists());

    for method in ["mixup", "cutmix", "snapmix"] {
        let previews = dir.path().join(format!("previews_{method}"));
        let out = cekd()
            .args(["augment-preview", "--method", method, "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&previews)
            .args(["--seed", "7"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(std::fs::read_dir(&previews).unwrap().count() >= 2);
    }
}

#[test]
fn sweep_emits_one_summary_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = dir.path().join("spec.json");
    write_spec(&spec);
    assert!(cekd()
        .args(["generate-data", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());

    let config = dir.path().join("config.json");
    write_config(&config, &data);
    let sweep_out = dir.path().join("sweep");
    let out = cekd()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--vary", "lambda1=0.3,0.7"])
        .arg("--out")
        .arg(&sweep_out)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sweep_out.join("lambda1=0.3/summary.json").exists());
    assert!(sweep_out.join("lambda1=0.7/summary.json").exists());
}

#[test]
fn exit_codes_follow_the_contract() {
    // 2: config error
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"no_such_key": 1}"#).unwrap();
    let status = cekd()
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // 3: missing input file
    let status = cekd()
        .args(["train", "--config", "/definitely/not/there.json", "--out"])
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));

    // 0: success
    let spec = dir.path().join("spec.json");
    write_spec(&spec);
    let status = cekd()
        .args(["generate-data", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
}
