use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rlcsc::data::{bicubic_resize, load_y, load_ycbcr, save_rgb, save_y, synthetic, ImageY};
use rlcsc::model::{ModelConfig, RlcscParams};
use rlcsc::trainer::Checkpoint;

fn rlcsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlcsc"))
        .args(args)
        .env_remove("RLCSC_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        stdout(&o),
        stderr(&o)
    );
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes one grayscale image and a manifest naming it.
fn one_image(dir: &Path, h: usize, w: usize) -> PathBuf {
    save_y(&synthetic::edge_image(h, w, 3), dir.join("img.png")).unwrap();
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, "# one image\nimg.png\n").unwrap();
    manifest
}

fn line_value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no {key:?} in:\n{text}"))
        .trim()
}

fn zero_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("zero.ckpt");
    let params = RlcscParams::<f32>::zeros(ModelConfig::new(4, 6, 2)).unwrap();
    Checkpoint::from_params(params).save(&path).unwrap();
    path
}

#[test]
fn prepare_counts_pairs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = one_image(dir.path(), 99, 99);
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    let args = |out: &Path| {
        vec![
            "prepare".to_string(),
            "--manifest".into(),
            p(&manifest).into(),
            "--out".into(),
            p(out).into(),
            "--scales".into(),
            "3".into(),
            "--aug".into(),
            "none".into(),
            "--seed".into(),
            "5".into(),
        ]
    };
    let run = |out: &Path| {
        ok(rlcsc(
            &args(out).iter().map(String::as_str).collect::<Vec<_>>(),
        ))
    };
    let first = run(&a);
    let second = run(&b);
    assert_eq!(line_value(&first, "pairs:"), "9");
    assert_eq!(
        line_value(&first, "sha256:"),
        line_value(&second, "sha256:")
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn prepare_full_augmentation_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = one_image(dir.path(), 99, 99);
    let out = dir.path().join("full.bin");
    let text = ok(rlcsc(&[
        "prepare",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--scales",
        "3",
        "--aug",
        "full",
    ]));
    // Sides after each downscale, cropped to a multiple of 3, then
    // floor((side − 33) / 33) + 1 positions per axis; six variants each.
    let per_side = |side: f64| {
        let s = (side.round() as usize) / 3 * 3;
        if s < 33 {
            0
        } else {
            (s - 33) / 33 + 1
        }
    };
    let expected: usize = [1.0, 0.7, 0.5, 0.4]
        .iter()
        .map(|f| 6 * per_side(99.0 * f).pow(2))
        .sum();
    assert_eq!(line_value(&text, "pairs:"), expected.to_string());
}

#[test]
fn prepare_rejects_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.txt");
    fs::write(&manifest, "# nothing\n").unwrap();
    let o = rlcsc(&[
        "prepare",
        "--manifest",
        p(&manifest),
        "--out",
        p(&dir.path().join("x.bin")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn toy_data(dir: &Path) -> PathBuf {
    let manifest = one_image(dir, 66, 66);
    let data = dir.join("patches.bin");
    ok(rlcsc(&[
        "prepare",
        "--manifest",
        p(&manifest),
        "--out",
        p(&data),
        "--scales",
        "2",
        "--patch",
        "16",
        "--stride",
        "16",
        "--aug",
        "none",
    ]));
    data
}

fn csv_epochs(path: &Path) -> Vec<usize> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,step,loss,lr"));
    lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn train_writes_csv_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path());
    let cfg = dir.path().join("toy.cfg");
    fs::write(&cfg, "epochs = 2\nbatch_size = 4\nlr0 = 0.01\n").unwrap();
    let out = dir.path().join("run");
    let text = ok(rlcsc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out-dir",
        p(&out),
        "--k",
        "2",
        "--channels",
        "4,6",
    ]));
    assert!(
        text.contains("epoch    1") && text.contains("lr 1.000e-2"),
        "{text}"
    );
    assert_eq!(csv_epochs(&out.join("loss.csv")), vec![1, 2]);
    for f in [
        "epoch-0000.ckpt",
        "epoch-0001.ckpt",
        "epoch-0002.ckpt",
        "last.ckpt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    fs::write(&cfg, "epochs = 3\nbatch_size = 4\nlr0 = 0.01\n").unwrap();
    ok(rlcsc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out-dir",
        p(&out),
        "--resume",
        p(&out.join("epoch-0001.ckpt")),
    ]));
    assert_eq!(csv_epochs(&out.join("loss.csv")), vec![1, 2, 3]);
    let last = Checkpoint::load(out.join("last.ckpt")).unwrap();
    assert_eq!(last.epoch, 3);

    // Resuming gives the same weights as an uninterrupted three-epoch run.
    let straight = dir.path().join("straight");
    ok(rlcsc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out-dir",
        p(&straight),
        "--k",
        "2",
        "--channels",
        "4,6",
    ]));
    assert_eq!(
        fs::read(straight.join("last.ckpt")).unwrap(),
        fs::read(out.join("last.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(straight.join("loss.csv")).unwrap(),
        fs::read_to_string(out.join("loss.csv")).unwrap()
    );
}

#[test]
fn diverging_run_aborts_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path());
    let cfg = dir.path().join("hot.cfg");
    // At lr 10 the clipped steps only kill the ReLUs and the loss settles at
    // the bicubic level; 1e4 overflows within a few steps.
    fs::write(&cfg, "epochs = 200\nbatch_size = 2\nlr0 = 1e4\n").unwrap();
    let out = dir.path().join("run");
    let o = rlcsc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out-dir",
        p(&out),
        "--k",
        "2",
        "--channels",
        "4,6",
    ]);
    assert_eq!(o.status.code(), Some(5), "{}\n{}", stdout(&o), stderr(&o));
    let err = stderr(&o);
    assert!(
        err.contains("aborted") && err.contains("last.ckpt"),
        "{err}"
    );
    let kept = Checkpoint::load(out.join("last.ckpt")).unwrap();
    assert!(kept.params.layers.iter().all(|(_, t)| t.all_finite()));
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_data(dir.path());
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 2\nmomentum = fast\n").unwrap();
    let o = rlcsc(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out-dir",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn unknown_flags_are_errors() {
    let o = rlcsc(&["summary", "--k", "3", "--verbose"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rlcsc(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_rlcsc"))
        .args(["summary"])
        .env("RLCSC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sr_with_zero_model_is_bicubic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let img = synthetic::edge_image(20, 24, 8);
    save_y(&img, &input).unwrap();
    let model = zero_checkpoint(dir.path());
    let output = dir.path().join("out.png");
    ok(rlcsc(&[
        "sr",
        "--model",
        p(&model),
        "--input",
        p(&input),
        "--scale",
        "3",
        "--output",
        p(&output),
    ]));
    let got = load_y(&output).unwrap();
    let want = bicubic_resize(&load_y(&input).unwrap(), 3.0)
        .unwrap()
        .clamp01()
        .quantize8();
    assert_eq!(got.dims(), (60, 72));
    let err = got
        .samples()
        .iter()
        .zip(want.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
    assert!(load_ycbcr(&output).unwrap().chroma.is_none());
}

#[test]
fn sr_color_input_reports_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let y = synthetic::edge_image(96, 96, 2);
    let cb = ImageY::from_fn(96, 96, |r, _| 0.4 + 0.002 * r as f64);
    let cr = ImageY::from_fn(96, 96, |_, c| 0.6 - 0.002 * c as f64);
    save_rgb(&y, &cb, &cr, &input).unwrap();
    let model = zero_checkpoint(dir.path());
    let output = dir.path().join("out.png");
    let text = ok(rlcsc(&[
        "sr",
        "--model",
        p(&model),
        "--input",
        p(&input),
        "--scale",
        "3",
        "--output",
        p(&output),
    ]));
    assert!(text.contains("96x96 -> 288x288 in"), "{text}");
    let out = load_ycbcr(&output).unwrap();
    assert_eq!(out.y.dims(), (288, 288));
    assert!(out.chroma.is_some());
}

#[test]
fn sr_scale_guard() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    save_y(&synthetic::edge_image(10, 10, 1), &input).unwrap();
    let model = zero_checkpoint(dir.path());
    let output = dir.path().join("out.png");
    let o = rlcsc(&[
        "sr",
        "--model",
        p(&model),
        "--input",
        p(&input),
        "--scale",
        "5",
        "--output",
        p(&output),
    ]);
    assert_eq!(o.status.code(), Some(2));
    ok(rlcsc(&[
        "sr",
        "--model",
        p(&model),
        "--input",
        p(&input),
        "--scale",
        "5",
        "--output",
        p(&output),
        "--allow-any",
    ]));
    assert_eq!(load_y(&output).unwrap().dims(), (50, 50));
}

#[test]
fn eval_zero_model_matches_bicubic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = one_image(dir.path(), 48, 40);
    let model = zero_checkpoint(dir.path());
    let (ca, cb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let a = ok(rlcsc(&[
        "eval",
        "--bicubic",
        "--manifest",
        p(&manifest),
        "--scale",
        "3",
        "--csv",
        p(&ca),
    ]));
    let b = ok(rlcsc(&[
        "eval",
        "--model",
        p(&model),
        "--manifest",
        p(&manifest),
        "--scale",
        "3",
        "--csv",
        p(&cb),
    ]));
    let numbers = |t: &str| {
        t.lines()
            .map(|l| l.split_whitespace().skip(1).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
    };
    assert_eq!(numbers(&a), numbers(&b));
    assert_eq!(fs::read(&ca).unwrap(), fs::read(&cb).unwrap());
    let o = rlcsc(&["eval", "--manifest", p(&manifest), "--scale", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn summary_reports_depth_and_counts() {
    let d = ok(rlcsc(&["summary", "--k", "25"]));
    assert_eq!(line_value(&d, "depth:"), "30");
    let five = ok(rlcsc(&["summary", "--k", "5"]));
    let fifty = ok(rlcsc(&["summary", "--k", "50"]));
    assert_eq!(
        line_value(&five, "parameters:"),
        line_value(&fifty, "parameters:")
    );
    let reduced = ok(rlcsc(&["summary", "--k", "15", "--channels", "128,128"]));
    let n: f64 = line_value(&reduced, "parameters:").parse().unwrap();
    assert!((n / 592_000.0 - 1.0).abs() <= 0.01, "{n}");
}

#[test]
fn ista_demo_traces() {
    let text = ok(rlcsc(&["ista-demo", "--iters", "200", "--seed", "3"]));
    assert_eq!(line_value(&text, "nonincreasing:"), "true");
    let huge = ok(rlcsc(&["ista-demo", "--lambda", "1e6", "--iters", "10"]));
    let trace: Vec<&str> = huge
        .lines()
        .skip_while(|l| *l != "iter,objective")
        .skip(1)
        .take(11)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(trace.len(), 11);
    assert!(trace.iter().all(|v| *v == trace[0]));
    assert_eq!(line_value(&huge, "nonzeros:"), "0");
}

#[test]
fn gradcheck_passes_for_k3() {
    let text = ok(rlcsc(&["gradcheck", "--k", "3", "--max-per-tensor", "60"]));
    assert!(text.contains("PASS at 1e-4"), "{text}");
    let again = ok(rlcsc(&["gradcheck", "--k", "3", "--max-per-tensor", "60"]));
    assert_eq!(text, again);
}
