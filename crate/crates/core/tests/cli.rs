use std::path::Path;
use std::process::{Command, Output};

use gdino::io::{read_jsonl, save_ppm, synthetic_scene};

fn gde(args: &[&str], dir: &Path, envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gde"));
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("run gde")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{"d_model": 32, "input_size": 128, "enhancer": {"layers": 1}, "decoder": {"layers": 1, "num_queries": 20}}"#;

#[test]
fn tokens_at_640() {
    let dir = tempfile::tempdir().unwrap();
    let o = gde(&["tokens", "--size", "640"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("total 8400"), "{out}");
    assert!(out.contains("ratio 21"), "{out}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = gde(&["frobnicate"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = gde(&["tokens", "--size", "abc"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = gde(&["--help"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = gde(&["infer", "--image", "x.ppm", "--prompt", "cat"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("weights.gde"), "{}", stderr(&o));
    let o = gde(&["--weights", "mine.gde", "infer", "--image", "x.ppm", "--prompt", "cat"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mine.gde"));
    let o = gde(&["tokens", "--size", "100"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupted_weights_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    assert_eq!(gde(&["--config", "cfg.json", "init-weights"], dir.path(), &[]).status.code(), Some(0));
    let path = dir.path().join("weights.gde");
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 10] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    save_ppm(&synthetic_scene(64, 64), dir.path().join("a.ppm")).unwrap();
    let o = gde(&["--config", "cfg.json", "infer", "--image", "a.ppm", "--prompt", "cat"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn infer_flops_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    let o = gde(&["--config", "cfg.json", "--seed", "4", "init-weights"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    save_ppm(&synthetic_scene(200, 150), dir.path().join("a.ppm")).unwrap();
    let o = gde(
        &["--config", "cfg.json", "infer", "--image", "a.ppm", "--prompt", "box. ball", "--threshold", "0", "--variant", "original"],
        dir.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let recs = read_jsonl(&o.stdout[..]).unwrap();
    assert_eq!(recs.len(), 20);
    for r in &recs {
        assert!(r.bbox[0] >= 0.0 && r.bbox[0] + r.bbox[2] <= 200.0 + 1e-9);
        assert!(r.bbox[1] >= 0.0 && r.bbox[1] + r.bbox[3] <= 150.0 + 1e-9);
    }

    let o = gde(&["--config", "cfg.json", "flops", "--size", "64"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("cross-scale-fusion") && out.contains("enhancer ratio"), "{out}");

    let o = gde(&["--config", "cfg.json", "bench", "--size", "64", "--variant", "efficient"], dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines[0], "variant,input_size,runs,median_ms,p10_ms,p90_ms,fps");
    assert!(lines[1].starts_with("efficient,64,10,"));
}

#[test]
fn eval_output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    assert_eq!(gde(&["--config", "cfg.json", "init-weights"], dir.path(), &[]).status.code(), Some(0));
    std::fs::create_dir(dir.path().join("img")).unwrap();
    let mut images = Vec::new();
    for i in 0..5 {
        let (w, h) = (96 + 16 * i, 80);
        save_ppm(&synthetic_scene(w, h), dir.path().join(format!("img/{i}.ppm"))).unwrap();
        images.push(format!(r#"{{"id": {i}, "file": "img/{i}.ppm", "width": {w}, "height": {h}}}"#));
    }
    let ds = format!(
        r#"{{"images": [{}], "annotations": [{{"image_id": 0, "bbox": [10, 40, 30, 30], "category": "red"}},
            {{"image_id": 3, "bbox": [60, 10, 40, 25], "category": "blue"}}], "categories": ["red", "blue", "green"]}}"#,
        images.join(",")
    );
    std::fs::write(dir.path().join("ds.json"), ds).unwrap();
    let run = |threads: &str, out: &str| {
        let o = gde(
            &["--config", "cfg.json", "eval", "--dataset", "ds.json", "--out", out, "--fixed-cap", "50", "--threshold", "0.1"],
            dir.path(),
            &[("GDE_THREADS", threads)],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (stdout(&o), std::fs::read(dir.path().join(out)).unwrap())
    };
    let (s1, f1) = run("1", "one.jsonl");
    let (s3, f3) = run("3", "three.jsonl");
    assert_eq!(f1, f3);
    assert_eq!(s1, s3);
    assert!(s1.contains("mAP"));
    let recs = read_jsonl(&f1[..]).unwrap();
    assert!(recs.windows(2).all(|w| w[0].image_id <= w[1].image_id));
}
