use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use elastica::{load_image, save_image, MultiChannelImage};
use tempfile::TempDir;

fn elastica(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elastica"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scene(dir: &Path, name: &str) -> PathBuf {
    let img = MultiChannelImage::from_fn(16, 12, 3, |i, j, k| {
        let inside = (4..11).contains(&i) && (3..9).contains(&j);
        let base = [0.2, 0.5, 0.7][k];
        if inside {
            1.0 - base
        } else {
            base
        }
    });
    let path = dir.join(name);
    save_image(&img, &path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn evaluate_identical_images() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let out = elastica(&["evaluate", "--ref", s(&a), "--test", s(&a)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "psnr_db=inf ssim=1");
}

#[test]
fn zero_noise_degrade_round_trips() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let b = dir.path().join("b.png");
    let out = elastica(&["degrade", "--in", s(&a), "--out", s(&b), "--gaussian-sd", "0", "--seed", "7"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(load_image(&a).unwrap(), load_image(&b).unwrap());
}

#[test]
fn degrade_is_reproducible_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let o = elastica(&[
            "degrade", "--in", s(&a), "--out", s(&p), "--motion", "3,45", "--poisson-photons", "200", "--seed", seed,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(p).unwrap()
    };
    let first = run("x.png", "11");
    assert_eq!(first, run("y.png", "11"));
    assert_ne!(first, run("z.png", "12"));
}

#[test]
fn denoise_writes_image_and_trace() {
    let dir = TempDir::new().unwrap();
    let clean = scene(dir.path(), "clean.png");
    let noisy = dir.path().join("noisy.png");
    let o = elastica(&["degrade", "--in", s(&clean), "--out", s(&noisy), "--gaussian-sd", "0.05", "--seed", "3"]);
    assert!(o.status.success());
    let out = dir.path().join("out.png");
    let trace = dir.path().join("trace.csv");
    let o = elastica(&["denoise", "--in", s(&noisy), "--out", s(&out), "--trace", s(&trace)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let restored = load_image(&out).unwrap();
    assert_eq!((restored.width(), restored.height(), restored.channels()), (16, 12, 3));

    let csv = std::fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iter,energy,update_norm"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(!rows.is_empty());
    for (n, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 3);
        assert_eq!(row[0], (n + 1) as f64);
    }
}

#[test]
fn identical_runs_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let run = |name: &str| {
        let p = dir.path().join(name);
        let t = dir.path().join(format!("{name}.csv"));
        let o = elastica(&[
            "deblur", "--in", s(&a), "--out", s(&p), "--trace", s(&t), "--motion", "3,0", "--max-iters", "10",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(p).unwrap(), std::fs::read(t).unwrap())
    };
    assert_eq!(run("one.png"), run("two.png"));
}

#[test]
fn deblur_accepts_kernel_file() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let k = dir.path().join("k.txt");
    std::fs::write(&k, "1 3\n0.25 0.5 0.25\n").unwrap();
    let out = dir.path().join("out.png");
    let o = elastica(&["deblur", "--in", s(&a), "--out", s(&out), "--kernel", s(&k), "--max-iters", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.exists());
}

#[test]
fn deblur_without_kernel_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let o = elastica(&["deblur", "--in", s(&a), "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_parameter_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let o = elastica(&["denoise", "--in", s(&a), "--out", s(&dir.path().join("o.png")), "--tau", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
    let o = elastica(&["denoise", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_input_is_io_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.png");
    let o = elastica(&["denoise", "--in", s(&missing), "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(o.status.code(), Some(3));
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2 2\n1 2 3\n").unwrap();
    let a = scene(dir.path(), "a.png");
    let o = elastica(&["deblur", "--in", s(&a), "--out", s(&dir.path().join("o.png")), "--kernel", s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn max_iterations_warns_but_succeeds() {
    let dir = TempDir::new().unwrap();
    let a = scene(dir.path(), "a.png");
    let o = elastica(&["denoise", "--in", s(&a), "--out", s(&dir.path().join("o.png")), "--max-iters", "1", "--tol", "1e-300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn help_lists_solver_defaults() {
    let o = elastica(&["denoise", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in [
        "--alpha", "--beta", "--eta", "--tau", "--gamma1", "--gamma2", "--tol", "--stop-norm", "--max-iters",
        "--newton-tol", "--init", "--trace",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
    assert!(text.contains("[default: "));
}
