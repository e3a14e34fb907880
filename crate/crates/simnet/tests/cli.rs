use std::path::{Path, PathBuf};
use std::process::Command as Process;

use qv2x::codec::{Checkpoint, N_CLASSES};
use qv2x::fed::LowRankModel;
use qv2x::fusion::{read_frames_jsonl, FusionGrid};
use simnet::artifact::{artifact_hash, strip_comments, LogRecord};
use simnet::data::{load_digits, DatasetSplit, Digits};
use simnet::run::{run, Command, TICK_PHASES};
use simnet::ScenarioConfig;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn smoke() -> ScenarioConfig {
    ScenarioConfig::load(&manifest().join("configs/smoke.toml")).unwrap()
}

fn simnet(args: &[&str]) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_simnet"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn log_records(dir: &Path) -> Vec<LogRecord> {
    let text = std::fs::read_to_string(dir.join("run_log.jsonl")).unwrap();
    strip_comments(&text)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let smoke = manifest().join("configs/smoke.toml");
    let smoke = smoke.to_str().unwrap();
    let data = manifest().join("data/digits_small.csv");

    assert_eq!(simnet(&["fusion-demo", "--config", smoke, "--out", out]), 0);
    assert_eq!(
        simnet(&["fusion-demo", "--config", smoke, "--out", out, "--check"]),
        0
    );
    // 50 fixture episodes cannot reach the target
    assert_eq!(simnet(&["transfer", "--config", smoke, "--out", out]), 0);
    assert_eq!(
        simnet(&["transfer", "--config", smoke, "--out", out, "--check"]),
        4
    );

    let typo = write(tmp.path(), "typo.toml", "seed = 1\n[fusion]\nscene = 3\n");
    assert_eq!(simnet(&["fusion-demo", "--config", &typo, "--out", out]), 2);
    assert_eq!(
        simnet(&["fusion-demo", "--config", "/nonexistent.toml", "--out", out]),
        2
    );
    let no_out = write(tmp.path(), "no_out.toml", "seed = 1\n");
    assert_eq!(simnet(&["fusion-demo", "--config", &no_out]), 2);
    let no_data = write(tmp.path(), "no_data.toml", "seed = 1\n");
    assert_eq!(simnet(&["fed", "--config", &no_data, "--out", out]), 2);
    assert_eq!(
        simnet(&[
            "fusion-demo",
            "--config",
            smoke,
            "--out",
            out,
            "--seed",
            "x"
        ]),
        2
    );

    let missing = write(
        tmp.path(),
        "missing.toml",
        "seed = 1\ndataset = \"nope.csv\"\n",
    );
    assert_eq!(simnet(&["fed", "--config", &missing, "--out", out]), 3);
    let mut rows = std::fs::read_to_string(&data).unwrap();
    rows.push_str("1,2,3\n");
    write(tmp.path(), "bad.csv", &rows);
    let bad = write(tmp.path(), "bad.toml", "seed = 1\ndataset = \"bad.csv\"\n");
    assert_eq!(simnet(&["fed", "--config", &bad, "--out", out]), 3);
    let ckpt = write(
        tmp.path(),
        "ckpt.toml",
        &format!(
            "seed = 1\ndataset = {:?}\n[link]\ncheckpoint = \"absent.json\"\n",
            data.to_str().unwrap()
        ),
    );
    assert_eq!(
        simnet(&["semantic-link", "--config", &ckpt, "--out", out]),
        3
    );
}

#[test]
fn every_artifact_of_a_run_carries_its_hash() {
    let cfg = smoke();
    let tmp = tempfile::tempdir().unwrap();
    for command in Command::ALL {
        let dir = tmp.path().join(command.name());
        let report = run(command, &cfg, &dir).unwrap();
        assert_eq!(report.config_hash, cfg.hash());
        assert!(report.files.len() >= 3, "{:?}", report.files);
        for f in &report.files {
            let bytes = std::fs::read(f).unwrap();
            let text = String::from_utf8_lossy(&bytes);
            assert_eq!(
                artifact_hash(&text).as_deref(),
                Some(report.config_hash.as_str()),
                "{}",
                f.display()
            );
        }
        for r in log_records(&dir) {
            assert_eq!(r.config_hash, report.config_hash);
        }
        let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
        assert!(summary.contains(&format!("config_hash: {}", report.config_hash)));
    }
}

#[test]
fn seed_override_changes_the_hash() {
    let a = smoke();
    let b = ScenarioConfig {
        seed: 8,
        ..a.clone()
    };
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash(), smoke().hash());
}

#[test]
fn vehicle_ticks_follow_the_phase_order() {
    let cfg = smoke();
    let tmp = tempfile::tempdir().unwrap();
    run(Command::Transfer, &cfg, tmp.path()).unwrap();
    let phases: Vec<(u64, String)> = log_records(tmp.path())
        .into_iter()
        .filter(|r| TICK_PHASES.contains(&r.phase.as_str()))
        .map(|r| (r.epoch_or_round, r.phase))
        .collect();
    let ticks = cfg.rl.vehicle_episodes * cfg.rl.vehicle_steps;
    assert_eq!(phases.len(), ticks * TICK_PHASES.len());
    for (k, (tick, phase)) in phases.iter().enumerate() {
        assert_eq!(*tick, (k / TICK_PHASES.len()) as u64);
        assert_eq!(phase, TICK_PHASES[k % TICK_PHASES.len()]);
    }
    let logs = log_records(tmp.path());
    assert!(logs.windows(2).all(|w| w[1].tick == w[0].tick + 1));
}

#[test]
fn stratified_split_of_the_full_corpus() {
    let samples = load_digits(&manifest().join("data/digits.csv")).unwrap();
    assert_eq!(samples.len(), 1797);
    let split = DatasetSplit::stratified(&samples, 1).unwrap();
    assert_eq!(
        (split.train.len(), split.val.len(), split.test.len()),
        (1078, 360, 359)
    );
    let mut all: Vec<usize> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .copied()
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..samples.len()).collect::<Vec<_>>());
    for class in 0..N_CLASSES {
        let count = |idx: &[usize]| idx.iter().filter(|&&i| samples[i].label == class).count();
        let n = count(&all) as f64;
        assert_eq!(
            count(&split.train),
            (0.6 * n).round() as usize,
            "class {class}"
        );
        assert_eq!(
            count(&split.train) + count(&split.val),
            (0.8 * n).round() as usize,
            "class {class}"
        );
    }
    let other = DatasetSplit::stratified(&samples, 2).unwrap();
    assert_ne!(split.train, other.train);
    assert_eq!(split.train.len(), other.train.len());
}

#[test]
fn artifacts_read_back() {
    let cfg = smoke();
    let tmp = tempfile::tempdir().unwrap();
    let dir = |c: Command| tmp.path().join(c.name());

    run(Command::FusionDemo, &cfg, &dir(Command::FusionDemo)).unwrap();
    let text = std::fs::read_to_string(dir(Command::FusionDemo).join("frames.jsonl")).unwrap();
    let frames = read_frames_jsonl(&text, &FusionGrid::default()).unwrap();
    assert!(frames.len() >= 3);

    run(Command::Fed, &cfg, &dir(Command::Fed)).unwrap();
    let bytes = std::fs::read(dir(Command::Fed).join("global_payload.bin")).unwrap();
    let body = &bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..];
    let model = LowRankModel::from_payload(body, &[(10, 33), (64, 33)]).unwrap();
    assert_eq!(model.layers.len(), 2);
    let metrics = std::fs::read_to_string(dir(Command::Fed).join("round_metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(
        rows[0],
        "round,accuracy,params_uploaded,compression_ratio,wall_ms"
    );
    assert_eq!(rows.len(), 1 + cfg.fed.rounds);

    run(Command::Transfer, &cfg, &dir(Command::Transfer)).unwrap();
    let episodes =
        std::fs::read_to_string(dir(Command::Transfer).join("vehicle_episodes.jsonl")).unwrap();
    for line in strip_comments(&episodes).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "vehicle", "episode", "step", "state", "action", "reward", "td_error",
        ] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }

    run(Command::ReproHparam, &cfg, &dir(Command::ReproHparam)).unwrap();
    let ckpt_path = dir(Command::ReproHparam).join("codec_checkpoint.json");
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.metadata.config_hash, cfg.hash());

    let mut link = cfg.clone();
    link.link.checkpoint = Some(ckpt_path);
    link.link.train = false;
    run(Command::SemanticLink, &link, &dir(Command::SemanticLink)).unwrap();
    let trace =
        std::fs::read_to_string(dir(Command::SemanticLink).join("channel_trace_rsu0.csv")).unwrap();
    let stripped = strip_comments(&trace);
    let lines: Vec<&str> = stripped.lines().collect();
    assert_eq!(lines[0], "step,snr_db,re_h,im_h,capacity,protocol_mode");
    assert_eq!(lines.len(), 1 + cfg.channel.trace_steps);
    assert!(!dir(Command::SemanticLink)
        .join("codec_checkpoint.json")
        .exists());
}

#[test]
fn digits_loader_reports_the_bad_line() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("d.csv");
    std::fs::write(&p, format!("# header\n{}\n0,1\n", vec!["0"; 65].join(","))).unwrap();
    let err = load_digits(&p).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("line 3"), "{err}");
    let digits = Digits::load(&manifest().join("data/digits_small.csv"), 3).unwrap();
    assert_eq!(
        digits.train.len() + digits.val.len() + digits.test.len(),
        200
    );
}
