use std::fs;
use std::path::Path;

use lcnn::cli::{run, CAPTIONS_FILE, CONFIG_ECHO_FILE, EXIT_DATA, EXIT_USAGE, FEATURES_FILE, REPORT_FILE, SPLITS_FILE};
use tempfile::tempdir;

fn lcnn(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lcnn").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: &str) {
    let (code, _, err) = lcnn(&[
        "synth",
        "--seed",
        "7",
        "--n-images",
        n,
        "--grammar",
        "4",
        "--out",
        path(dir),
    ]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "32");
    synth(&b, "32");
    for f in [CAPTIONS_FILE, FEATURES_FILE, SPLITS_FILE] {
        let fa = fs::read(a.join(f)).unwrap();
        assert_eq!(fa, fs::read(b.join(f)).unwrap(), "{f}");
    }
    let lines = |f: &str| fs::read_to_string(a.join(f)).unwrap().lines().count();
    assert_eq!(lines(CAPTIONS_FILE), 32);
    assert_eq!(lines(FEATURES_FILE), 32);
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(lcnn(&["synth", "--n-images", "0", "--out", path(&out)]).0, EXIT_USAGE);
    assert_eq!(
        lcnn(&["synth", "--n-images", "4", "--grammar", "17", "--out", path(&out)]).0,
        EXIT_USAGE
    );
    assert_eq!(lcnn(&["frobnicate"]).0, EXIT_USAGE);

    synth(&out, "4");
    let (code, _, err) = lcnn(&["synth", "--n-images", "4", "--out", path(&out)]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("not empty"), "{err}");
    assert_eq!(lcnn(&["synth", "--n-images", "4", "--out", path(&out), "--force"]).0, 0);

    let dest = tmp.path().join("run");
    let (code, _, err) = lcnn(&[
        "train",
        "--data",
        path(&out),
        "--out",
        path(&dest),
        "--set",
        "model.colour=red",
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("unknown key"), "{err}");
}

#[test]
fn missing_inputs_exit_three() {
    let tmp = tempdir().unwrap();
    let nowhere = tmp.path().join("nothing");
    let (code, _, _) = lcnn(&["train", "--data", path(&nowhere), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(code, EXIT_DATA);
    let (code, _, _) = lcnn(&["eval", "--hyp", path(&nowhere), "--ref", path(&nowhere)]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn eval_of_references_against_themselves() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "16");
    let caps = data.join(CAPTIONS_FILE);
    let (code, out, err) = lcnn(&["eval", "--hyp", path(&caps), "--ref", path(&caps)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("BLEU-4\t1.000000"), "{out}");
    assert!(out.contains("CIDEr\t"));
    assert!(out.contains("CIDEr_x10\t"));
}

#[test]
fn train_caption_and_score() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, "16");
    let ckpt = tmp.path().join("ckpt");
    let sets = [
        "data.min_count=1",
        "model.embed_dim=8",
        "model.hidden_dim=8",
        "model.window=4",
        "model.kernels=3,2",
        "train.epochs=2",
        "train.batch_size=4",
    ];
    let mut args = vec!["train", "--data", path(&data), "--out", path(&ckpt)];
    for s in &sets {
        args.extend(["--set", s]);
    }
    let (code, out, err) = lcnn(&args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("best epoch"));
    assert_eq!(fs::read_to_string(ckpt.join(REPORT_FILE)).unwrap().lines().count(), 2);
    let echo = fs::read_to_string(ckpt.join(CONFIG_ECHO_FILE)).unwrap();
    assert!(echo.contains("model.window = 4"));
    assert!(echo.contains("train.epochs = 2"));

    let feats = data.join(FEATURES_FILE);
    let (greedy_path, beam_path) = (tmp.path().join("g.tsv"), tmp.path().join("b.tsv"));
    let (code, _, err) = lcnn(&[
        "caption",
        "--ckpt",
        path(&ckpt),
        "--features",
        path(&feats),
        "--beam",
        "1",
        "--out",
        path(&greedy_path),
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, stdout, _) = lcnn(&[
        "caption",
        "--ckpt",
        path(&ckpt),
        "--features",
        path(&feats),
        "--beam",
        "1",
    ]);
    assert_eq!(code, 0);
    assert_eq!(stdout, fs::read_to_string(&greedy_path).unwrap());
    assert_eq!(stdout.lines().count(), 16);

    let (code, _, _) = lcnn(&[
        "caption",
        "--ckpt",
        path(&ckpt),
        "--features",
        path(&feats),
        "--beam",
        "3",
        "--out",
        path(&beam_path),
    ]);
    assert_eq!(code, 0);
    let (code, out, err) = lcnn(&[
        "eval",
        "--hyp",
        path(&beam_path),
        "--ref",
        path(&data.join(CAPTIONS_FILE)),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 6);

    assert_eq!(
        lcnn(&[
            "caption",
            "--ckpt",
            path(&ckpt),
            "--features",
            path(&feats),
            "--beam",
            "0"
        ])
        .0,
        EXIT_USAGE
    );
}

#[test]
fn gradcheck_passes_for_one_cell() {
    let (code, out, err) = lcnn(&["gradcheck", "--set", "model.cell=gru"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().last().unwrap().starts_with("max\t"));
}

#[test]
fn keys_lists_settings() {
    let (code, out, _) = lcnn(&["keys"]);
    assert_eq!(code, 0);
    assert!(out.contains("train.lr = "));
    assert!(out.contains("model.cell = "));
    assert!(!out.contains("model.vocab_size"));
}
