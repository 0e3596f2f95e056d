use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
seed=5
synthetic.seg_pairs=16
synthetic.samples=40
synthetic.size=32
localizer.input_size=32x32
localizer.depth=2
localizer.base_channels=4
localizer.epochs=2
classifier.input_size=32x32
classifier.epochs=2
classifier.batch_size=8
";

fn lednet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lednet"))
        .current_dir(dir)
        .args(["--config", "experiment.cfg", "--synthetic"])
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lednet(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const ARTIFACTS: [&str; 12] = [
    "out/checkpoints/localizer_history.csv",
    "out/checkpoints/localizer.ckpt",
    "out/checkpoints/classifier_original.ckpt",
    "out/checkpoints/classifier_overlay.ckpt",
    "out/report/overlay_sidecar.csv",
    "out/report/history_original.csv",
    "out/report/history_overlay.csv",
    "out/report/split_original.csv",
    "out/report/test_overlay.csv",
    "out/report/table.txt",
    "out/report/accuracy.svg",
    "out/report/loss.svg",
];

fn run_all(dir: &Path) -> Vec<Vec<u8>> {
    std::fs::write(dir.join("experiment.cfg"), CONFIG).unwrap();
    ok(dir, &["localize-train"]);
    assert!(ok(dir, &["overlay"]).contains("skipped 0"));
    let out = ok(dir, &["compare"]);
    assert!(out.contains("original test") && out.contains("overlay test"), "{out}");
    ARTIFACTS.iter().map(|a| std::fs::read(dir.join(a)).unwrap()).collect()
}

#[test]
fn full_run_is_reproducible_across_directories() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_all(a.path());
    let second = run_all(b.path());
    for ((x, y), name) in first.iter().zip(&second).zip(ARTIFACTS) {
        assert!(x == y, "{name} differs");
    }
    let table = String::from_utf8(first[9].clone()).unwrap();
    assert!(table.contains("seed=5"));
}

#[test]
fn arms_run_as_separate_invocations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("experiment.cfg"), CONFIG).unwrap();
    ok(dir.path(), &["localize-train"]);
    ok(dir.path(), &["overlay"]);
    ok(dir.path(), &["classify-train", "--arm", "original"]);
    let missing = lednet(dir.path(), &["compare-report"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("overlay arm"));
    ok(dir.path(), &["report"]);
    ok(dir.path(), &["classify-train", "--arm", "overlay"]);
    ok(dir.path(), &["evaluate", "--arm", "original"]);
    ok(dir.path(), &["compare-report"]);
    assert!(dir.path().join("out/report/table.txt").is_file());
}

#[test]
fn seed_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("experiment.cfg"), CONFIG).unwrap();
    ok(dir.path(), &["--seed", "11", "localize-train"]);
    let history = std::fs::read_to_string(dir.path().join("out/checkpoints/localizer_history.csv")).unwrap();
    assert!(history.lines().next().unwrap().ends_with("seed=11"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("experiment.cfg"), "bogus.key=1\n").unwrap();
    let out = lednet(dir.path(), &["localize-train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.key"));

    std::fs::write(dir.path().join("experiment.cfg"), CONFIG).unwrap();
    let out = lednet(dir.path(), &["classify-train", "--arm", "both"]);
    assert!(!out.status.success());

    let out = Command::new(env!("CARGO_BIN_EXE_lednet"))
        .current_dir(dir.path())
        .args(["--config", "experiment.cfg", "localize-train"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("segmentation image directory"));
}
