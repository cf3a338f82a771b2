use std::path::Path;
use std::process::{Command, Output};

fn transfig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transfig"))
        .args(args)
        .env_remove("TRANSFIG_DEVICE")
        .output()
        .expect("binary runs")
}

fn count_pngs(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|d| d.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count())
        .unwrap_or(0)
}

#[test]
fn gen_synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let d = data.to_str().unwrap();
    let out = transfig(&["gen-synth", "--out", d, "--n", "12", "--n-test", "6", "--size", "32"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for (split, n) in [("trainA", 12), ("trainB", 12), ("testA", 6), ("testB", 6)] {
        assert_eq!(count_pngs(&data.join(split)), n, "{split}");
        assert_eq!(count_pngs(&data.join("masks").join(split)), n, "masks/{split}");
    }

    let run = tmp.path().join("run");
    let r = run.to_str().unwrap();
    let out = transfig(&["train", "--data", d, "--out", r, "--steps", "4", "--seed", "3", "--no-samples"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "losses.csv", "manifest.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let losses = std::fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 5);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["outcome"]["exit_code"], 0);
    assert_eq!(manifest["config"]["seed"], 3);

    let ckpt = std::fs::read_dir(run.join("checkpoints")).unwrap().next().unwrap().unwrap().path();
    let eval = tmp.path().join("eval");
    let out = transfig(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        d,
        "--out",
        eval.to_str().unwrap(),
        "--fid-iterations",
        "2",
        "--kid-iterations",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(eval.join("report.csv")).unwrap();
    assert!(report.contains("A->B") && report.contains("B->A"), "{report}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().to_str().unwrap();
    assert_eq!(transfig(&["--help"]).status.code(), Some(0));
    assert_eq!(transfig(&["frobnicate"]).status.code(), Some(2));
    let missing = tmp.path().join("nope");
    let out = transfig(&["train", "--data", missing.to_str().unwrap(), "--out", t]);
    assert_eq!(out.status.code(), Some(2));

    let bad = tmp.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let out = transfig(&["eval", "--checkpoint", bad.to_str().unwrap(), "--data", t, "--out", t]);
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(env!("CARGO_BIN_EXE_transfig"))
        .args(["gen-synth", "--out", t, "--n", "2", "--n-test", "0"])
        .env("TRANSFIG_DEVICE", "cuda")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TRANSFIG_DEVICE"));
}
