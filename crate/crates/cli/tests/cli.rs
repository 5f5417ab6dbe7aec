use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lga_cli::config::KEYS;
use lga_cli::RunConfig;
use lga_core::data::load_dataset;
use lga_core::model::{load_model, save_model, LgaConfig, LgaModel, Variant};
use lga_core::numerics::OpKind;
use lga_core::training::{evaluate, METRICS_HEADER};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--set",
    "channels=8",
    "--set",
    "hidden=16",
    "--set",
    "batch_size=16",
];

fn lga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lga"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, seed: u64, n: usize, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let (seed, n) = (seed.to_string(), n.to_string());
    let mut args = vec!["gen-data", "--seed", &seed, "--n", &n, "--out", s(&path)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let o = lga(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

fn train(dir: &Path, data: &Path, val: Option<&Path>, epochs: usize) -> (PathBuf, PathBuf) {
    let (model, metrics) = (dir.join("m.lgam"), dir.join("train.csv"));
    let epochs = epochs.to_string();
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out-model",
        s(&model),
        "--metrics",
        s(&metrics),
        "--epochs",
        &epochs,
        "--seed",
        "3",
    ];
    if let Some(v) = val {
        args.extend(["--val", s(v)]);
    }
    args.extend_from_slice(SMALL);
    let o = lga(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (model, metrics)
}

#[test]
fn gen_data_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a.lgaf", 5, 30, &[]);
    let b = gen(dir.path(), "b.lgaf", 5, 30, &[]);
    let c = gen(dir.path(), "c.lgaf", 6, 30, &[]);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_ne!(bytes, std::fs::read(&c).unwrap());
    let d = load_dataset(&a).unwrap();
    assert_eq!((d.len(), d.seed, d.config.channels), (30, 5, 8));
}

#[test]
fn zero_count_is_rejected_by_name() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.lgaf");
    let o = lga(&["gen-data", "--n", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("invalid value for n"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_and_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.lgaf");
    let o = lga(&["gen-data", "--set", "epoch=3", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));
    let o = lga(&["gen-data", "--bogus", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = lga(&["gen-data", "--set", "lr=-1", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lr"));
}

#[test]
fn train_writes_one_row_per_epoch_and_split() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "t.lgaf", 1, 40, &[]);
    let val = gen(dir.path(), "v.lgaf", 2, 20, &[]);
    let (model, metrics) = train(dir.path(), &data, Some(&val), 2);
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 3);
    for split in ["train", "val"] {
        let epochs: Vec<&str> = lines[1..]
            .iter()
            .filter(|l| l.split(',').nth(1) == Some(split))
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(epochs, ["0", "1", "2"]);
    }
    let (m, v) = load_model(&model).unwrap();
    assert_eq!(v, Variant::Lga);
    assert_eq!(m.config().channels, 8);
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = lga(&[
        "train",
        "--data",
        s(&dir.path().join("nope.lgaf")),
        "--out-model",
        s(&dir.path().join("m")),
        "--metrics",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("nope.lgaf"));
}

#[test]
fn corrupt_input_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "t.lgaf", 1, 4, &[]);
    std::fs::write(&data, b"XXXX0000").unwrap();
    let o = lga(&[
        "eval",
        "--model",
        s(&data),
        "--data",
        s(&data),
        "--metrics-out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn eval_rejects_mismatched_channels() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "t.lgaf", 1, 20, &[]);
    let (model, _) = train(dir.path(), &data, None, 1);
    let wide = gen(dir.path(), "w.lgaf", 1, 20, &["--set", "channels=16"]);
    let o = lga(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&wide),
        "--metrics-out",
        s(&dir.path().join("e.csv")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn eval_is_repeatable_and_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "t.lgaf", 1, 40, &[]);
    let (model, _) = train(dir.path(), &data, None, 2);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = lga(&[
            "eval",
            "--model",
            s(&model),
            "--data",
            s(&data),
            "--metrics-out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read_to_string(out).unwrap()
    };
    let first = run("e1.csv");
    assert_eq!(first, run("e2.csv"));
    let (m, v) = load_model(&model).unwrap();
    let want = evaluate(&m, v, &load_dataset(&data).unwrap()).unwrap();
    assert_eq!(
        first,
        format!("{METRICS_HEADER}\n{}\n", want.csv_row("final", "eval"))
    );
}

/// Parses a plain-text PGM strictly: magic, size, maxval, then exactly
/// `w * h` integers in range.
fn read_pgm(text: &str) -> (usize, usize, Vec<u32>) {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("P2"));
    let dims: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(dims.len(), 2);
    assert_eq!(lines.next(), Some("255"));
    let px: Vec<u32> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(px.len(), dims[0] * dims[1]);
    assert!(px.iter().all(|&p| p <= 255));
    assert!(text.ends_with('\n'));
    (dims[0], dims[1], px)
}

#[test]
fn dump_masks_of_an_untrained_model() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "t.lgaf", 1, 10, &[]);
    let model = dir.path().join("zero.lgam");
    let mut cfg = LgaConfig::new(8, 4);
    cfg.hidden = 16;
    save_model(&model, &LgaModel::init(cfg, 9).unwrap(), Variant::Lga).unwrap();
    let out = dir.path().join("masks");
    let o = lga(&[
        "dump-masks",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--index-range",
        "2..5",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 2..5 {
        let (w, h, px) =
            read_pgm(&std::fs::read_to_string(out.join(format!("mask_{i}.pgm"))).unwrap());
        assert_eq!((w, h), (7, 7));
        assert_eq!(px[3 * 7 + 3], 255);
        // exp(-0.5) * 255 = 154.66
        assert_eq!(px[3 * 7 + 4], 155);
        assert_eq!(px[0], 0);
    }
    assert!(!out.join("mask_5.pgm").exists());

    let csv = std::fs::read_to_string(out.join("params.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "index,label,mu_y_1,mu_y_2,mu_y_3,mu_y_4,mu_x_1,mu_x_2,mu_x_3,mu_x_4,\
         sigma_1,sigma_2,sigma_3,sigma_4,patch_cy,patch_cx"
    );
    assert_eq!(lines.len(), 4);
    let d = load_dataset(&data).unwrap();
    for (line, i) in lines[1..].iter().zip(2..) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 16);
        assert_eq!(f[0], i.to_string());
        assert_eq!(f[1], d.instances[i].label.to_string());
        assert!(f[2..10].iter().all(|&v| v == "3.5"));
        assert!(f[10..14].iter().all(|&v| v == "1"));
    }

    for bad in ["5..2", "0..11", "x..3", "3"] {
        let o = lga(&[
            "dump-masks",
            "--model",
            s(&model),
            "--data",
            s(&data),
            "--index-range",
            bad,
            "--out-dir",
            s(&out),
        ]);
        assert_eq!(code(&o), 2, "{bad}: {}", stderr(&o));
    }
}

#[test]
fn gradcheck_lists_every_check() {
    let o = lga(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), OpKind::ALL.len() + 2);
    for k in OpKind::ALL {
        let n = lines
            .iter()
            .filter(|l| l.split_whitespace().next() == Some(k.name()))
            .count();
        assert_eq!(n, 1, "{}", k.name());
    }
    assert!(lines[..lines.len() - 1].iter().all(|l| l.ends_with("ok")));

    let o = lga(&["gradcheck", "--tolerance", "1e-18"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    let o = lga(&["gradcheck", "--tolerance", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn compare_writes_pairs_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ab.csv");
    let mut args = vec![
        "compare",
        "--seeds",
        "1,2,3,4,5",
        "--out",
        s(&out),
        "--set",
        "n_train=32",
        "--set",
        "n_val=16",
        "--set",
        "epochs=1",
    ];
    args.extend_from_slice(SMALL);
    let o = lga(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 10 + 1);
    let field = |l: &str, i: usize| l.split(',').nth(i).unwrap().to_string();
    let mut diffs = Vec::new();
    for (pair, seed) in lines[1..11].chunks(2).zip(1..) {
        assert_eq!(field(pair[0], 0), seed.to_string());
        assert_eq!(field(pair[0], 1), "lga");
        assert_eq!(field(pair[1], 1), "baseline");
        let acc = |l: &str| field(l, 2).parse::<f64>().unwrap();
        diffs.push(acc(pair[0]) - acc(pair[1]));
    }
    let summary = lines[11];
    assert!(summary.starts_with("mean,lga-baseline,"));
    let mean: f64 = field(summary, 2).parse().unwrap();
    assert_eq!(mean, diffs.iter().sum::<f64>() / 5.0);

    args[2] = "1,2,1";
    let o = lga(&args);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seeds"));
    args[2] = "4";
    assert_eq!(code(&lga(&args)), 2);
}

/// A valid setting per key, and a different valid setting.
fn two_values(key: &str) -> (&'static str, &'static str) {
    match key {
        "channels" => ("16", "8"),
        "classes" => ("3", "5"),
        "patch" => ("3", "1"),
        "strength" => ("2", "0.5"),
        "noise" => ("0", "0.1"),
        "distractors" => ("0", "2"),
        "masks" => ("2", "3"),
        "down_channels" => ("2", "3"),
        "hidden" => ("8", "9"),
        "lambda_reg" => ("0.5", "2"),
        "lambda_lga" => ("0", "3"),
        "epochs" => ("7", "9"),
        "batch_size" => ("4", "5"),
        "lr" => ("0.01", "0.02"),
        "beta1" => ("0.5", "0.6"),
        "beta2" => ("0.9", "0.99"),
        "eps" => ("0.001", "0.0001"),
        "seed" => ("11", "12"),
        "lga" => ("false", "true"),
        "track_metrics" => ("false", "true"),
        "parallel" => ("false", "true"),
        "n_train" => ("10", "20"),
        "n_val" => ("30", "40"),
        "seeds" => ("7,8", "9,10,11"),
        other => panic!("no test values for {other}"),
    }
}

#[test]
fn overrides_beat_the_file_for_every_key() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("run.cfg");
    let defaults = RunConfig::default().describe();
    for &key in KEYS {
        let (a, b) = two_values(key);
        std::fs::write(&file, format!("# comment\n{key} = {a}\n")).unwrap();
        let from_file = RunConfig::load(Some(&file), &[]).unwrap().describe();
        assert!(from_file.contains(&format!("{key} = {a}\n")), "{key}");
        assert_ne!(from_file, defaults, "{key}");
        let overridden = RunConfig::load(Some(&file), &[format!("{key}={b}")])
            .unwrap()
            .describe();
        assert!(
            overridden.contains(&format!("{key} = {b}\n")),
            "{key}: {overridden}"
        );
    }
}

#[test]
fn named_flags_win_over_set() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "t.lgaf", 1, 20, &[]);
    let file = dir.path().join("run.cfg");
    std::fs::write(&file, "epochs = 4\nseed = 1\n").unwrap();
    let metrics = dir.path().join("c.csv");
    let model = dir.path().join("m");
    let mut args = vec![
        "train",
        "--config",
        s(&file),
        "--set",
        "epochs=3",
        "--epochs",
        "1",
        "--data",
        s(&data),
        "--out-model",
        s(&model),
        "--metrics",
        s(&metrics),
    ];
    args.extend_from_slice(SMALL);
    let o = lga(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&metrics).unwrap().lines().count(),
        1 + 2
    );
    assert!(stdout(&o).contains("for 1 epochs"));
}
