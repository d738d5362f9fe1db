use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ba_core::harness::Checkpoint;

fn beamalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamalign")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = beamalign(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

const TINY_MAP: &[&str] = &[
    "--set", "n_rx=4",
    "--set", "beam.batch=8",
    "--set", "beam.samples=16",
];

const TINY_AGENT: &[&str] = &[
    "--set", "n_rx=2",
    "--set", "agent.hidden=8",
    "--set", "ppo.batch_episodes=8",
    "--set", "ppo.workers=8",
    "--set", "ppo.minibatch_episodes=4",
    "--set", "ppo.epochs=1",
];

fn train_map(dir: &Path, updates: usize) -> PathBuf {
    let mut args = vec!["train-map", "-o"];
    let d = s(dir);
    args.push(&d);
    args.extend_from_slice(TINY_MAP);
    let u = format!("updates={updates}");
    args.extend_from_slice(&["--set", &u, "--set", "checkpoint_every=10"]);
    ok(&args);
    dir.join("latest.ckpt")
}

fn train_agent(dir: &Path, extra: &[&str]) -> String {
    let d = s(dir);
    let mut args = vec!["train-agent", "-o", &d];
    args.extend_from_slice(TINY_AGENT);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn map_training_writes_curve_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let latest = train_map(dir.path(), 20);
    let rows = csv_rows(&dir.path().join("curve.csv"));
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[19][0], "19");
    for f in ["latest.ckpt", "best.ckpt", "update_0000010.ckpt", "update_0000020.ckpt", "config.toml"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let ckpt = Checkpoint::load(&latest).unwrap();
    assert_eq!(ckpt.update, 20);
    assert_eq!(ckpt.kind, "beam-map");
}

#[test]
fn agent_smoke_run_emits_one_row_per_update() {
    let dir = tempfile::tempdir().unwrap();
    train_agent(dir.path(), &["--set", "updates=500", "--set", "checkpoint_every=250"]);
    let rows = csv_rows(&dir.path().join("curve.csv"));
    assert_eq!(rows.len(), 500);
    let header = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(header.starts_with("update_index,mean_reward,policy_loss,value_loss,entropy,grad_norm\n"));
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        let reward: f64 = r[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&reward));
    }
    assert_eq!(Checkpoint::load(&dir.path().join("latest.ckpt")).unwrap().update, 500);
}

#[test]
fn resume_continues_counter_and_matches_uninterrupted_run() {
    let full = tempfile::tempdir().unwrap();
    train_agent(full.path(), &["--set", "updates=6", "--set", "checkpoint_every=3"]);

    let split = tempfile::tempdir().unwrap();
    train_agent(split.path(), &["--set", "updates=3", "--set", "checkpoint_every=3"]);
    let resume_from = split.path().join("update_0000003.ckpt");
    let r = format!("resume={}", s(&resume_from));
    train_agent(split.path(), &["--set", "updates=6", "--set", "checkpoint_every=3", "--set", &r]);

    assert_eq!(
        fs::read_to_string(full.path().join("curve.csv")).unwrap(),
        fs::read_to_string(split.path().join("curve.csv")).unwrap()
    );
    let a = Checkpoint::load(&full.path().join("latest.ckpt")).unwrap();
    let b = Checkpoint::load(&split.path().join("latest.ckpt")).unwrap();
    assert_eq!(b.update, 6);
    assert_eq!(a.arrays, b.arrays);
    assert_eq!(a.meta("episodes_seen").unwrap(), b.meta("episodes_seen").unwrap());

    // A different configuration cannot resume this run.
    let out = beamalign(&[
        "train-agent", "-o", &s(split.path()), "--set", "n_rx=2", "--set", "agent.hidden=8",
        "--set", "ppo.batch_episodes=8", "--set", "ppo.workers=8", "--set", "ppo.minibatch_episodes=4",
        "--set", "ppo.epochs=1", "--set", "ppo.lr=0.01", "--set", &r,
    ]);
    assert!(!out.status.success());
}

#[test]
fn runs_are_deterministic_and_checkpoints_round_trip() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        train_agent(d.path(), &["--set", "updates=4", "--set", "seed=9"]);
        ok(&["baselines", "-o", &s(d.path()), "--seed", "9", "--set", "n_rx=8", "--set", "eval_episodes=300"]);
    }
    for f in ["curve.csv", "results.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let ckpt_a = fs::read(a.path().join("latest.ckpt")).unwrap();
    let ckpt_b = fs::read(b.path().join("latest.ckpt")).unwrap();
    // The stored config text names the output directory; everything else matches.
    let (ca, cb) = (Checkpoint::from_bytes(&ckpt_a).unwrap(), Checkpoint::from_bytes(&ckpt_b).unwrap());
    assert_eq!(ca.arrays, cb.arrays);
    assert_eq!(ca.fingerprint, cb.fingerprint);
    assert_eq!(ca.to_bytes(), ckpt_a);

    let copy = a.path().join("copy.ckpt");
    Checkpoint::load(&a.path().join("latest.ckpt")).unwrap().save(&copy).unwrap();
    assert_eq!(fs::read(copy).unwrap(), ckpt_a);
}

#[test]
fn eval_pairs_channels_across_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let map = train_map(&dir.path().join("map"), 10);
    let m = format!("map_checkpoint={}", s(&map));
    let bf_dir = dir.path().join("bf");
    let dm_dir = dir.path().join("dm");
    let common = ["--set", "n_rx=4", "--set", "agent.hidden=8", "--set", "ppo.batch_episodes=8", "--set", "ppo.workers=8",
        "--set", "ppo.minibatch_episodes=8", "--set", "ppo.epochs=1", "--set", "updates=2"];
    let mut bf = vec!["train-agent", "-o"];
    let bfs = s(&bf_dir);
    bf.push(&bfs);
    bf.extend_from_slice(&common);
    bf.extend_from_slice(&["--set", "map=\"beamforming\"", "--set", &m]);
    ok(&bf);
    let mut dm = vec!["train-agent", "-o"];
    let dms = s(&dm_dir);
    dm.push(&dms);
    dm.extend_from_slice(&common);
    ok(&dm);

    let bfc = format!("drl_bf_checkpoint={}", s(&bf_dir.join("latest.ckpt")));
    let dmc = format!("drl_dm_checkpoint={}", s(&dm_dir.join("latest.ckpt")));
    let out_dir = dir.path().join("eval");
    ok(&[
        "eval", "-o", &s(&out_dir), "--set", "n_rx=4", "--set", "eval_episodes=64",
        "--set", "snr_list=[-10, 30]", "--set", &m, "--set", &bfc, "--set", &dmc,
    ]);
    let rows = csv_rows(&out_dir.join("results.csv"));
    assert_eq!(rows.len(), 10);
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(&methods[..5], &["mrc_csi", "mrc_omp", "exhaustive", "drl_bf", "drl_dm"]);
    for r in &rows {
        assert_eq!(r[2], "64");
        assert_eq!(r[6], rows[0][6], "channel hash differs");
        if r[0] == "mrc_csi" {
            assert!((r[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
            assert!(r[4].parse::<f64>().unwrap().abs() < 1e-9);
        }
    }
    // A direct-map checkpoint cannot stand in for the beamforming agent.
    let wrong = format!("drl_bf_checkpoint={}", s(&dm_dir.join("latest.ckpt")));
    let out = beamalign(&["eval", "-o", &s(&out_dir), "--set", "n_rx=4", "--set", "methods=[\"drl_bf\"]", "--set", &wrong]);
    assert!(!out.status.success());
}

#[test]
fn export_patterns_writes_dense_grid() {
    let dir = tempfile::tempdir().unwrap();
    let map = train_map(&dir.path().join("map"), 10);
    let m = format!("map_checkpoint={}", s(&map));
    let out = dir.path().join("pat");
    let stdout = ok(&["export-patterns", "-o", &s(&out), "--set", &m]);
    assert!(stdout.contains("rows 8000"));
    let rows = csv_rows(&out.join("patterns.csv"));
    assert_eq!(rows.len(), 8000);
    for r in &rows {
        let g: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&g));
    }
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), -90.0);
    assert_eq!(rows[999][1].parse::<f64>().unwrap(), 90.0);

    ok(&["export-patterns", "-o", &s(&out), "--set", &m, "--set", "export_specs=[[-11.25, 22.5], [40, 5]]"]);
    assert_eq!(csv_rows(&out.join("patterns.csv")).len(), 2000);

    let untrained = train_map(&dir.path().join("untrained"), 0);
    let u = format!("map_checkpoint={}", s(&untrained));
    assert!(!beamalign(&["export-patterns", "-o", &s(&out), "--set", &u]).status.success());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = s(dir.path());
    for args in [
        vec!["eval", "-o", &o, "--set", "bogus=1"],
        vec!["eval", "-o", &o, "--set", "methods=[\"drl_bf\"]"],
        vec!["eval", "-o", &o, "--set", "snr_list=[]"],
        vec!["export-patterns", "-o", &o],
        vec!["train-agent", "-o", &o, "--set", "map=\"beamforming\""],
        vec!["train-agent", "-o", &o, "--config", "/nonexistent.toml"],
        vec!["baselines", "-o", &o, "--set", "drl_dm_checkpoint=/nonexistent.ckpt"],
    ] {
        assert!(!beamalign(&args).status.success(), "{args:?}");
    }
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "mode = \"baselines\"\nn_rx = 8\neval_episodes = 40\nsnr_list = [0, 10]\n[ppo]\nlr = 1e-3\n").unwrap();
    let out = dir.path().join("o");
    ok(&["baselines", "--config", &s(&cfg), "-o", &s(&out), "--set", "eval_episodes=30"]);
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[2] == "30"));
    // The file names a different mode than the subcommand.
    assert!(!beamalign(&["eval", "--config", &s(&cfg), "-o", &s(&out)]).status.success());
}
