use splatover::pipeline::{artifact_checksums, EvalMode, PipelineConfig, RunPaths, SceneSource};
use splatover::policy::Architecture;
use splatover::rollout::EvalReport;
use splatover::scene::{HandSpec, ObjectShape, SyntheticSceneSpec};
use splatover::CameraIntrinsics;
use std::path::Path;
use std::process::{Command, Output};

fn splatover(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatover"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 3;
    cfg.scene = SceneSource::Synthetic(SyntheticSceneSpec {
        density: 1.0e4,
        ..Default::default()
    });
    cfg.camera = CameraIntrinsics::square(48, 42.0);
    cfg.architecture = Architecture {
        height: 48,
        width: 48,
        conv_channels: [4, 4, 4],
        hidden: 8,
        ..Default::default()
    };
    cfg.grasp.n_samples = 200;
    cfg.sampler.n_starts = 2;
    cfg.train.epochs = 2;
    cfg.eval.starts_per_grasp = 1;
    cfg.eval.strip_frames = 3;
    cfg.eval.strip_scale = 1.0;
    cfg
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn build_scene_reports_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = splatover(&["build-scene"], &config, &a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for label in ["object", "hand", "background"] {
        let n: usize = text
            .split_whitespace()
            .skip_while(|w| *w != label)
            .nth(1)
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        assert!(n > 0, "{label}: {text}");
    }
    assert!(splatover(&["build-scene"], &config, &b).status.success());
    let (ca, cb) = (
        artifact_checksums(&RunPaths::new(&a)).unwrap(),
        artifact_checksums(&RunPaths::new(&b)).unwrap(),
    );
    assert_eq!(ca.len(), 2);
    assert_eq!(ca, cb);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "schema_version = 1\nturbo = true\n").unwrap();
    let o = splatover(&["build-scene"], &unknown, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("turbo"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\n[scene.synthetic]\ndensity = -5.0\n").unwrap();
    let o = splatover(&["build-scene"], &bad, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("density"));

    let old = dir.path().join("old.toml");
    std::fs::write(&old, "schema_version = 99\n").unwrap();
    assert_eq!(splatover(&["train"], &old, &out).status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_splatover")).arg("train").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn enclosed_object_yields_no_safe_grasp() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    let size = [0.06, 0.06, 0.12];
    cfg.scene = SceneSource::Synthetic(SyntheticSceneSpec {
        object: ObjectShape::Box { size },
        hand: HandSpec::enclosing_box([0.0, 0.0, 0.30], size),
        density: 1.0e4,
        ..Default::default()
    });
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    assert!(splatover(&["build-scene"], &config, &out).status.success());
    let o = splatover(&["sample-grasps"], &config, &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("grasps.tsv")).unwrap();
    assert!(table.lines().next().unwrap().starts_with("qw\tqx"));
    assert!(table.lines().skip(1).all(|l| l.ends_with("\t0")), "every row unsafe");
}

#[test]
fn full_pipeline_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    let config = write_config(dir.path(), &cfg);
    let run = |out: &Path, threads: &str| {
        let o = splatover(&["run", "--threads", threads, "--strips"], &config, out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let text = run(&a, "1");
    run(&b, "3");
    assert!(text.contains("sha256 params"), "{text}");
    let sums = artifact_checksums(&RunPaths::new(&a)).unwrap();
    assert_eq!(sums.len(), 8);
    assert_eq!(sums, artifact_checksums(&RunPaths::new(&b)).unwrap());

    // 2 safe grasps × 2 starts, minus discards
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("dataset/manifest.json")).unwrap()).unwrap();
    let episodes = manifest["episodes"].as_array().unwrap().len();
    let discarded: u64 = manifest["discards"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert!(episodes >= 1 && episodes as u64 + discarded <= 4, "{manifest}");

    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(a.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), report.summary.episodes);
    for i in 0..report.rows.len() {
        assert!(a.join(format!("eval/strips/ep_{i:05}.png")).is_file());
    }

    // replay of every recorded episode reaches its pre-grasp
    cfg.eval.mode = EvalMode::Replay;
    let config = write_config(dir.path(), &cfg);
    let o = splatover(&["eval"], &config, &a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(a.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), episodes);
    assert_eq!(report.summary.success_rate, 1.0);
}

#[test]
fn seed_flag_changes_scene() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(splatover(&["build-scene", "--seed", "1"], &config, &a).status.success());
    assert!(splatover(&["build-scene", "--seed", "2"], &config, &b).status.success());
    let sa = artifact_checksums(&RunPaths::new(&a)).unwrap();
    let sb = artifact_checksums(&RunPaths::new(&b)).unwrap();
    assert_ne!(sa["scene"], sb["scene"]);
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(PipelineConfig::load(&path).unwrap(), PipelineConfig::default());
}
