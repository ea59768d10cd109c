//! End-to-end checks of the command-line surface at miniature scale:
//! every subcommand named in the interface exists and round-trips its
//! files.

use std::path::PathBuf;
use std::process::Command;

fn newt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_newt"))
}

fn work_dir() -> PathBuf {
    let dir = std::env::temp_dir().join("newt_cli_it");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn mini_config_file(dir: &PathBuf) -> PathBuf {
    let path = dir.join("mini.cfg");
    std::fs::write(
        &path,
        "profile=desk\nseed=3\ntasks=point-reach\ndemos_per_task=5\nbatch=32\n\
         pretrain_iters=25\nbc_iters=25\ntotal_env_steps=220\nbias.start=30\nbias.end=120\n\
         eval_every=100000\neval_episodes=2\nplanner.population=10\nplanner.prior_samples=2\n\
         planner.elites=4\nplanner.iterations=2\n",
    )
    .unwrap();
    path
}

#[test]
fn tasks_lists_registry() {
    let out = newt().arg("tasks").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["point-reach", "point-maze", "chase", "push-1d", "collector", "point-reach-far"] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn full_cli_pipeline_at_miniature_scale() {
    let dir = work_dir();
    let cfg = mini_config_file(&dir);
    let demo = dir.join("reach.newtdemo");

    let out = newt()
        .args(["collect-demos", "--task", "point-reach", "--n", "5", "--seed", "4"])
        .arg("--out")
        .arg(&demo)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let pre = dir.join("pre.ckpt");
    let metrics = dir.join("pre.jsonl");
    let out = newt()
        .arg("pretrain")
        .arg("--config")
        .arg(&cfg)
        .arg("--demos")
        .arg(&demo)
        .arg("--out")
        .arg(&pre)
        .arg("--metrics")
        .arg(&metrics)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pre.exists() && metrics.exists());

    let rl = dir.join("rl.ckpt");
    let rl_metrics = dir.join("rl.jsonl");
    let out = newt()
        .arg("train")
        .arg("--demos")
        .arg(&demo)
        .arg("--resume")
        .arg(&pre)
        .arg("--out")
        .arg(&rl)
        .arg("--metrics")
        .arg(&rl_metrics)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for mode in ["closed", "prior"] {
        let out = newt()
            .args(["eval", "--episodes", "2", "--mode", mode, "--seed", "9"])
            .arg("--ckpt")
            .arg(&rl)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("point-reach") && text.contains("mean"), "{text}");
    }
    let out = newt()
        .args(["eval", "--episodes", "2", "--mode", "open", "--horizon", "4", "--seed", "9"])
        .arg("--ckpt")
        .arg(&rl)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("fraction-of-closed"));

    let plots = dir.join("plots");
    let out = newt()
        .arg("plot")
        .arg("--metrics")
        .arg(&rl_metrics)
        .arg("--out-dir")
        .arg(&plots)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svgs: Vec<_> = std::fs::read_dir(&plots)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert!(!svgs.is_empty(), "no SVG plots written");
    let body = std::fs::read_to_string(svgs[0].path()).unwrap();
    assert!(body.starts_with("<svg"));
}

#[test]
fn bc_and_finetune_subcommands() {
    let dir = work_dir().join("bcft");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = mini_config_file(&dir);
    let demo = dir.join("reach.newtdemo");
    assert!(newt()
        .args(["collect-demos", "--task", "point-reach", "--n", "5", "--seed", "4"])
        .arg("--out")
        .arg(&demo)
        .arg("--config")
        .arg(&cfg)
        .status()
        .unwrap()
        .success());

    let bc = dir.join("bc.ckpt");
    assert!(newt()
        .arg("bc")
        .arg("--config")
        .arg(&cfg)
        .arg("--demos")
        .arg(&demo)
        .arg("--out")
        .arg(&bc)
        .status()
        .unwrap()
        .success());

    let ft = dir.join("ft.ckpt");
    let ft_metrics = dir.join("ft.jsonl");
    let out = newt()
        .args(["finetune", "--task", "point-reach-far"])
        .arg("--ckpt")
        .arg(&bc)
        .arg("--out")
        .arg(&ft)
        .arg("--metrics")
        .arg(&ft_metrics)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // zero-shot protocol emitted before training records
    let text = std::fs::read_to_string(&ft_metrics).unwrap();
    let zero_pos = text.find("zero-shot").expect("zero-shot record");
    let train_pos = text.find("\"kind\":\"train\"").unwrap_or(usize::MAX);
    assert!(zero_pos < train_pos);
}
