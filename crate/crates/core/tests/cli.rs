use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use siamdefect::synlcd::builtin_patterns;

const TINY: &[&str] = &[
    "--set",
    "model.stage_channels=[8,16,16,16]",
    "--set",
    "model.stage_depths=[1,1,1,1]",
    "--set",
    "model.stage_heads=[1,2,2,2]",
    "--set",
    "model.reduction_ratios=[2,2,1,1]",
    "--set",
    "model.decoder_channels=16",
    "--set",
    "train.input_size=[32,32]",
    "--set",
    "train.batch_size=2",
    "--set",
    "train.warmup_iters=1",
];

fn run(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_siamdefect"));
    cmd.args(args).args(extra);
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "stdout: {stdout}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn pngs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

#[test]
fn synth_train_eval_infer_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let patterns = root.join("patterns");
    std::fs::create_dir(&patterns).unwrap();
    for (id, img) in builtin_patterns(32, 32, 4).into_iter().take(2) {
        img.save_png(&patterns.join(format!("{id}.png"))).unwrap();
    }
    let data = root.join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let out = ok(&run(
        &[
            "synth",
            "--patterns",
            &s(&patterns),
            "--count",
            "2",
            "--out",
            &s(&data),
            "--seed",
            "3",
        ],
        &[],
    ));
    assert!(out.contains("wrote 12 samples"), "{out}");
    let manifest = std::fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 12);
    let train_n = pngs(&data.join("train/ng")).len();
    let test_n = pngs(&data.join("test/ng")).len();
    assert_eq!((train_n, test_n), (6, 6));

    let run_dir = root.join("run");
    let mut args = vec!["train", "--data"];
    let data_s = s(&data);
    let run_s = s(&run_dir);
    args.extend([
        data_s.as_str(),
        "--out",
        run_s.as_str(),
        "--set",
        "train.iterations=2",
    ]);
    args.extend(TINY);
    ok(&run(&args, &[]));
    let log = std::fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(run_dir.join("config.toml").is_file());
    let ck = run_dir.join("checkpoint.bin");

    // Resuming to four steps appends to the same log.
    let ck_s = s(&ck);
    ok(&run(
        &[
            "train",
            "--data",
            &data_s,
            "--out",
            &run_s,
            "--resume",
            &ck_s,
            "--set",
            "train.iterations=4",
        ],
        &[],
    ));
    let log = std::fs::read_to_string(run_dir.join("loss.csv")).unwrap();
    let steps: Vec<&str> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(steps, ["1", "2", "3", "4"]);

    let eval_dir = root.join("eval");
    let eval_s = s(&eval_dir);
    let out = ok(&run(
        &[
            "eval",
            "--checkpoint",
            &ck_s,
            "--data",
            &data_s,
            "--out",
            &eval_s,
        ],
        &[],
    ));
    assert!(out.contains("6 samples"), "{out}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    for field in ["miou", "macc", "aacc", "mfscore"] {
        assert!(
            report["scores"][field].is_number(),
            "{field} missing: {report}"
        );
    }
    assert_eq!(pngs(&eval_dir.join("error_maps")).len(), 6);
    assert!(eval_dir.join("curves.csv").is_file());

    let ng = pngs(&data.join("test/ng"))[0].clone();
    let okp = pngs(&data.join("test/ok"))[0].clone();
    let infer_dir = root.join("infer");
    ok(&run(
        &["infer", "--checkpoint", &ck_s, "--out", &s(&infer_dir)],
        &[&ng, &okp],
    ));
    let stem = ng.file_stem().unwrap().to_string_lossy().into_owned();
    let pred = image::open(infer_dir.join(format!("{stem}_pred.png"))).unwrap();
    assert_eq!((pred.width(), pred.height()), (32, 32));
    assert!(infer_dir.join(format!("{stem}_dist.png")).is_file());

    let table = ok(&run(
        &["report", &eval_s, "--out", &s(&root.join("summary"))],
        &[],
    ));
    assert_eq!(table.lines().count(), 3);
    assert!(root.join("summary/report.md").is_file());
}

#[test]
fn bad_invocations_fail_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().to_str().unwrap();
    let out = run(&["train", "--no-such-flag"], &[]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(
        &[
            "eval",
            "--checkpoint",
            "/nonexistent/ck.bin",
            "--data",
            "/nonexistent",
            "--out",
            out_dir,
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error kind=io "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let out = run(
        &[
            "train",
            "--data",
            "/nonexistent",
            "--out",
            out_dir,
            "--set",
            "model.stage_heads=[3,3,3,3]",
        ],
        &[],
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error kind=invalid_config "), "{err}");

    let out = run(
        &[
            "train",
            "--device",
            "cuda",
            "--data",
            "/nonexistent",
            "--out",
            out_dir,
        ],
        &[],
    );
    assert!(!out.status.success());
}

#[test]
fn help_lists_configuration_keys() {
    let out = ok(&run(&["train", "--help"], &[]));
    for key in [
        "model.stage_channels",
        "train.learning_rate",
        "loss.lambda2",
        "train.label_fraction",
    ] {
        assert!(out.contains(key), "{key} not in help");
    }
}
