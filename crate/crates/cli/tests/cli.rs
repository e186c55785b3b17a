use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn inflab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inflab"))
        .current_dir(dir)
        .env_remove("INFLAB_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn inflab")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = inflab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    let path = path.as_ref();
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn resolved_value(dir: &Path, key: &str) -> Option<String> {
    let text = fs::read_to_string(dir.join("config.resolved")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

/// Small synthetic language under `dir/name`.
fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--train", "60", "--dev", "12", "--test", "12", "--unlabeled", "80", "--stems", "30"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", name]);
    ok(dir, &args);
    dir.join(name)
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = inflab(tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn bad_flag_exits_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(inflab(tmp.path(), &["stats", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(inflab(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        inflab(tmp.path(), &["train", "--sup", "a", "--dev", "b", "--out", "o", "--preset", "huge"]).status.code(),
        Some(2)
    );
}

#[test]
fn runtime_failure_exits_1() {
    let tmp = TempDir::new().unwrap();
    let out = inflab(tmp.path(), &["stats", "missing.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tsv"));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.cfg"), "train=10\nbogus=1\n").unwrap();
    let out = inflab(tmp.path(), &["--config", "run.cfg", "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn config_file_supplies_required_settings() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.cfg"), "# synthetic\nout = from_cfg\ntrain=20\ndev=5\ntest=5\nunlabeled=10\n").unwrap();
    ok(tmp.path(), &["synth", "--config", "run.cfg"]);
    let dir = tmp.path().join("from_cfg");
    assert_eq!(fs::read_to_string(dir.join("train.tsv")).unwrap().lines().count(), 20);
    assert_eq!(resolved_value(&dir, "unlabeled").as_deref(), Some("10"));
}

#[test]
fn seed_precedence_is_flag_then_config_then_env() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.cfg"), "seed=5\ntrain=20\ndev=5\ntest=5\nunlabeled=10\n").unwrap();
    let run = |out: &str, cfg: bool, flag: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_inflab"));
        cmd.current_dir(tmp.path()).env("INFLAB_SEED", "9").env("RUST_LOG", "warn");
        if cfg {
            cmd.args(["--config", "run.cfg"]);
        }
        cmd.args(["synth", "--out", out, "--train", "20", "--dev", "5", "--test", "5", "--unlabeled", "10"]);
        if flag {
            cmd.args(["--seed", "1"]);
        }
        assert!(cmd.status().unwrap().success());
        resolved_value(&tmp.path().join(out), "seed").unwrap()
    };
    assert_eq!(run("all", true, true), "1");
    assert_eq!(run("cfg_env", true, false), "5");
    assert_eq!(run("env", false, false), "9");
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let first = synth(tmp.path(), "first", &["--seed", "4", "--heldout-stems", "5"]);
    ok(tmp.path(), &["--config", "first/config.resolved", "synth", "--out", "second"]);
    let second = tmp.path().join("second");
    for f in ["train.tsv", "dev.tsv", "test.tsv", "words.txt"] {
        assert_eq!(read(first.join(f)), read(second.join(f)), "{f}");
    }
}

fn naive_stats(forms: &[String], samples: usize) -> String {
    let types: BTreeSet<&String> = forms.iter().collect();
    let mut lengths: Vec<usize> = forms.iter().map(|f| f.chars().count()).collect();
    lengths.sort();
    let median = if lengths.is_empty() { 0 } else { lengths[(lengths.len() - 1) / 2] };
    let mut grams = BTreeSet::new();
    for t in &types {
        let c: Vec<char> = t.chars().collect();
        for n in [2, 3] {
            for i in 0..c.len().saturating_sub(n - 1) {
                grams.insert(c[i..i + n].iter().collect::<String>());
            }
        }
    }
    format!("{samples}\t{}\t{median}\t{}", types.len(), grams.len())
}

fn forms_of(tsv: &str, words: &str) -> (Vec<String>, usize) {
    let mut forms = Vec::new();
    let mut samples = 0;
    for line in tsv.lines().filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        forms.push(cols[0].to_string());
        forms.push(cols[1].to_string());
        samples += 1;
    }
    for line in words.lines().filter(|l| !l.is_empty()) {
        forms.push(line.split('\t').next().unwrap().to_string());
        samples += 1;
    }
    (forms, samples)
}

#[test]
fn stats_matches_naive_oracle() {
    let tmp = TempDir::new().unwrap();
    let lang = synth(tmp.path(), "lang", &["--seed", "2"]);
    fs::write(tmp.path().join("plain.txt"), "cat\ncat\ndog\nhorse\n").unwrap();
    let out = ok(tmp.path(), &["stats", "lang/train.tsv", "plain.txt"]);
    let tsv = fs::read_to_string(lang.join("train.tsv")).unwrap();
    let (forms, samples) = forms_of(&tsv, "cat\ncat\ndog\nhorse\n");
    let expected = format!("samples\ttypes\tmed_len\tngrams\n{}\n", naive_stats(&forms, samples));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
}

#[test]
fn stats_on_directory_reports_one_row_per_language() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    let a_sup = "walk\twalked\tV;PST\nwalk\twalks\tV;PRS;3;SG\n";
    let a_lex = "talking\nwalker\nwalk\n";
    let b_sup = "kot\tkota\tN;GEN;SG\n";
    fs::write(data.join("aaa.train.tsv"), a_sup).unwrap();
    fs::write(data.join("aaa.words.txt"), a_lex).unwrap();
    fs::write(data.join("bbb.train.tsv"), b_sup).unwrap();
    ok(tmp.path(), &["stats", "data", "--out", "stats/table.tsv"]);
    let (fa, sa) = forms_of(a_sup, a_lex);
    let (fb, sb) = forms_of(b_sup, "");
    let expected = format!(
        "language\tsamples\ttypes\tmed_len\tngrams\naaa\t{}\nbbb\t{}\n",
        naive_stats(&fa, sa),
        naive_stats(&fb, sb)
    );
    assert_eq!(fs::read_to_string(tmp.path().join("stats/table.tsv")).unwrap(), expected);
    assert!(tmp.path().join("stats/config.resolved").exists());
}

#[test]
fn segment_align_projects_canonical_forms() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("canon.tsv"), "chugged\tchug-ed\nwalks\twalk-s\n").unwrap();
    ok(tmp.path(), &["segment-align", "--canonical", "canon.tsv", "--out", "seg/out.tsv"]);
    assert_eq!(
        fs::read_to_string(tmp.path().join("seg/out.tsv")).unwrap(),
        "chugged\tchugg-ed\nwalks\twalk-s\n"
    );
}

#[test]
fn noise_positional_and_flag_forms_agree() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "lang", &[]);
    ok(tmp.path(), &["noise", "lang/words.txt", "a/out.tsv", "--spec", "t5-suffix-delete-char", "--seg-sep", "-"]);
    ok(
        tmp.path(),
        &["noise", "--input", "lang/words.txt", "--output", "b/out.tsv", "--spec", "t5-suffix-delete-char", "--seg-sep", "-"],
    );
    assert_eq!(read(tmp.path().join("a/out.tsv")), read(tmp.path().join("b/out.tsv")));
    let conflict = inflab(tmp.path(), &["noise", "lang/words.txt", "c.tsv", "--input", "lang/words.txt"]);
    assert_eq!(conflict.status.code(), Some(1));
}

/// Runs `args` twice, into `run_a` and `run_b`, and compares the named artifacts.
/// With `file` set the output flag names a file inside the run directory.
fn twice(dir: &Path, args: &[&str], flag: &str, file: Option<&str>, artifacts: &[&str]) {
    for out in ["run_a", "run_b"] {
        let target = match file {
            Some(f) => format!("{out}/{f}"),
            None => out.to_string(),
        };
        let mut full: Vec<&str> = args.to_vec();
        full.extend([flag, target.as_str()]);
        ok(dir, &full);
    }
    for a in artifacts {
        let (x, y) = (read(dir.join("run_a").join(a)), read(dir.join("run_b").join(a)));
        assert!(!x.is_empty(), "{a} is empty");
        assert_eq!(x, y, "{args:?}: {a} differs");
    }
    // Only the output location may differ between the two resolved configs.
    let settings = |run: &str| -> Vec<String> {
        fs::read_to_string(dir.join(run).join("config.resolved"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with(&format!("{}=", flag.trim_start_matches('-'))))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(settings("run_a"), settings("run_b"));
    fs::remove_dir_all(dir.join("run_a")).unwrap();
    fs::remove_dir_all(dir.join("run_b")).unwrap();
}

#[test]
fn every_command_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    twice(dir, &["synth", "--train", "60", "--dev", "12", "--test", "12", "--unlabeled", "80", "--seed", "3"], "--out", None, &[
        "train.tsv", "dev.tsv", "test.tsv", "words.txt",
    ]);
    synth(dir, "lang", &["--seed", "3"]);

    twice(
        dir,
        &["sample-data", "--sup", "lang/train.tsv", "--per-pos", "20", "--lex", "lang/words.txt", "--lex-sep", "-", "--lex-size", "30", "--seed", "8"],
        "--out",
        None,
        &["train.tsv", "words.txt"],
    );
    twice(dir, &["stats", "lang/train.tsv", "lang/words.txt"], "--out", Some("stats.tsv"), &["stats.tsv"]);
    fs::write(dir.join("canon.tsv"), "chugged\tchug-ed\n").unwrap();
    twice(dir, &["segment-align", "--canonical", "canon.tsv"], "--out", Some("seg.tsv"), &["seg.tsv"]);
    twice(dir, &["noise", "--input", "lang/words.txt", "--seed", "4"], "--output", Some("noised.tsv"), &["noised.tsv"]);

    let train_args = [
        "train", "--sup", "lang/train.tsv", "--dev", "lang/dev.tsv", "--test", "lang/test.tsv", "--lex", "lang/words.txt",
        "--lex-sep", "-", "--objective", "cmlm", "--preset", "tiny", "--max-steps", "4", "--batch-size", "30",
        "--eval-every", "1", "--seed", "7",
    ];
    twice(dir, &train_args, "--out", None, &["report.json", "best.ckpt", "predictions.tsv", "test_predictions.tsv"]);

    let mut ae_args = train_args.to_vec();
    ae_args[12] = "ae";
    for (args, out) in [(&train_args[..], "cmlm"), (&ae_args[..], "ae")] {
        let mut full = args.to_vec();
        full.extend(["--out", out]);
        ok(dir, &full);
    }
    twice(dir, &["evaluate", "--model", "cmlm/best.ckpt", "--data", "lang/test.tsv"], "--out", None, &["predictions.tsv", "eval.json"]);
    twice(
        dir,
        &["analyze-copy", "--preds-a", "ae/predictions.tsv", "--preds-b", "cmlm/predictions.tsv", "--dev", "lang/dev.tsv", "--train", "lang/train.tsv"],
        "--out",
        Some("copy.json"),
        &["copy.json"],
    );
    twice(dir, &["aggregate", "--glob", "*/report.json"], "--out", Some("table.md"), &["table.md"]);
}

#[test]
fn noise_is_deterministic_and_seed_sensitive() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "lang", &[]);
    let run = |seed: &str, out: &str| {
        ok(tmp.path(), &["noise", "lang/words.txt", out, "--seed", seed]);
        read(tmp.path().join(out))
    };
    let a = run("4", "a.tsv");
    assert_eq!(a, run("4", "b.tsv"));
    assert_ne!(a, run("5", "c.tsv"));
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 80);
}

#[test]
fn train_evaluate_and_aggregate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth(dir, "lang", &["--seed", "1"]);
    for (setup, seed) in [("base1", "1"), ("base2", "2")] {
        ok(
            dir,
            &[
                "train", "--sup", "lang/train.tsv", "--dev", "lang/dev.tsv", "--preset", "tiny", "--max-steps", "3",
                "--batch-size", "30", "--eval-every", "1", "--language", "syn", "--dataset", "toy", "--seed", seed,
                "--out", setup,
            ],
        );
    }
    let report: serde_json::Value = serde_json::from_slice(&read(dir.join("base1/report.json"))).unwrap();
    assert_eq!(report["setup"], "baseline");
    assert_eq!(report["language"], "syn");
    let best = report["report"]["best_dev_accuracy"].as_f64().unwrap();

    ok(dir, &["evaluate", "--model", "base1/best.ckpt", "--data", "lang/dev.tsv", "--out", "eval"]);
    let eval: serde_json::Value = serde_json::from_slice(&read(dir.join("eval/eval.json"))).unwrap();
    assert_eq!(eval["accuracy"].as_f64().unwrap(), best);
    assert_eq!(read(dir.join("eval/predictions.tsv")), read(dir.join("base1/predictions.tsv")));

    ok(dir, &["aggregate", "--glob", "base*/report.json", "--out", "table.md"]);
    let table = fs::read_to_string(dir.join("table.md")).unwrap();
    assert!(table.contains("## toy"), "{table}");
    assert!(table.contains("syn"), "{table}");
}

#[test]
fn analyze_copy_rejects_misaligned_inputs() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("dev.tsv"), "ab\tabc\tN;PL\n").unwrap();
    fs::write(dir.join("train.tsv"), "xy\txyz\tN;PL\n").unwrap();
    fs::write(dir.join("a.tsv"), "ab\tN;PL\tabc\tabc\n").unwrap();
    fs::write(dir.join("b.tsv"), "ab\tN;PL\tabc\tab\nzz\tN;PL\tzz\tzz\n").unwrap();
    let out = inflab(
        dir,
        &["analyze-copy", "--preds-a", "a.tsv", "--preds-b", "b.tsv", "--dev", "dev.tsv", "--train", "train.tsv", "--out", "r.json"],
    );
    assert_eq!(out.status.code(), Some(1));
}
