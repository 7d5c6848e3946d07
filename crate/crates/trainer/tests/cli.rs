mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn headfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headfield"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.txt");
    std::fs::write(&p, common::TINY).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(headfield(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(headfield(&["dance"]).status.code(), Some(1));
    assert_eq!(headfield(&["train", "--stage", "3"]).status.code(), Some(1));
    assert_eq!(headfield(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = headfield(&["train", "--stage", "2", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("stage-1 checkpoint"));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "lambda_rgb = -2\n").unwrap();
    let r = headfield(&["--config", s(&p), "synth", "--out", s(&dir.path().join("d"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("non-negative"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let r = headfield(&["--config", s(&cfg), "--seed", "3", "synth", "--out", s(d)]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() > 10);
    assert_eq!(fa, fb);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let base = ["--config", s(&cfg), "--data", s(&data), "--out", s(&out)];
    let run = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        let r = headfield(&args);
        assert!(r.status.success(), "{extra:?}: {}", String::from_utf8_lossy(&r.stderr));
        r
    };
    assert!(headfield(&["--config", s(&cfg), "synth", "--out", s(&data)]).status.success());
    run(&["train", "--stage", "1"]);
    run(&["train", "--stage", "2"]);
    for f in ["config.txt", "losses_stage1.tsv", "losses_stage2.tsv", "stage1.ckpt", "stage2.ckpt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("losses_stage1.tsv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    let ckpt = out.join("stage2.ckpt");
    let r = run(&["eval", "--checkpoint", s(&ckpt)]);
    assert!(String::from_utf8_lossy(&r.stdout).contains("PSNR"));
    let metrics = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(metrics.contains("mean PSNR"));
    assert!(out.join("metrics.tsv").exists());

    run(&["render", "--checkpoint", s(&ckpt)]);
    // two test frames, one camera, image and mask each
    assert_eq!(files(&out.join("render")).len(), 4);

    let model = faceproxy::BlendshapeModel::read(&data.join("model.bin")).unwrap();
    let row = vec!["0.1"; model.num_expressions() + 6].join(" ");
    let params = dir.path().join("drive.txt");
    std::fs::write(&params, format!("{row}\n{row}\n{row}\n")).unwrap();
    run(&["reenact", "--checkpoint", s(&ckpt), "--params", s(&params)]);
    let frames = files(&out.join("reenact"));
    assert_eq!(frames.len(), 3);
    let imgs: Vec<_> = frames.values().collect();
    assert_eq!(imgs[0], imgs[1]);

    std::fs::write(&params, "0.1 0.2\n").unwrap();
    let mut args = base.to_vec();
    args.extend_from_slice(&["reenact", "--checkpoint", s(&ckpt), "--params", s(&params)]);
    assert_eq!(headfield(&args).status.code(), Some(2));

    run(&["extract-mesh", "--checkpoint", s(&ckpt), "--resolution", "12", "--iso", "0.5"]);
    assert!(out.join("mesh.obj").exists());
}

#[test]
fn gradcheck_subcommand_passes() {
    let r = headfield(&["gradcheck"]);
    let text = String::from_utf8_lossy(&r.stdout);
    assert_eq!(r.status.code(), Some(0), "{text}");
    assert!(text.contains("gradient checks passed"));
}
