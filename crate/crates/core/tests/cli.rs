use std::path::Path;
use std::process::{Command, Output};

use funnybench::dataset::DatasetManifest;
use funnybench::report::Report;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_funnybench"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) -> Output {
    run(&[
        "gen",
        "--seed",
        seed,
        "--train",
        "24",
        "--test",
        "12",
        "--resolution",
        "32",
        "--out",
        p(dir),
    ])
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(a.path(), "7")), 0);
    assert_eq!(code(&gen(b.path(), "7")), 0);
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 1 + 2 * (24 + 12));
    assert!(ta == tb, "dataset trees differ");
    let m = DatasetManifest::load(a.path()).unwrap();
    m.validate().unwrap();
    assert_eq!(m.splits.test.len(), 12);
}

#[test]
fn usage_errors_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&["gen", "--train", "0", "--out", p(d.path())])),
        2
    );
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let missing = d.path().join("nope");
    let out = run(&[
        "eval",
        "--dataset",
        p(&missing),
        "--model",
        "w.fbw",
        "--method",
        "ixg",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert_eq!(
        code(&run(&[
            "eval",
            "--dataset",
            p(d.path()),
            "--method",
            "nope",
            "--model",
            "x"
        ])),
        2
    );
}

#[test]
fn corrupt_inputs_map_to_their_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("manifest.json"), "{ not json").unwrap();
    let w = d.path().join("w.fbw");
    std::fs::write(&w, b"garbage").unwrap();
    let out = run(&[
        "eval",
        "--dataset",
        p(d.path()),
        "--model",
        p(&w),
        "--method",
        "ixg",
    ]);
    assert_eq!(code(&out), 4);
    let out = run(&["serve", "--model", p(&w), "--stdio"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn train_eval_compare_and_serve_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    assert_eq!(code(&gen(&data, "3")), 0);
    let w = d.path().join("net.fbw");
    let log = d.path().join("log.json");
    let out = run(&[
        "train",
        "--dataset",
        p(&data),
        "--out",
        p(&w),
        "--epochs",
        "2",
        "--log",
        p(&log),
        "--seed",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test accuracy"));
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);

    // same seed, same weights
    let w2 = d.path().join("net2.fbw");
    run(&[
        "train",
        "--dataset",
        p(&data),
        "--out",
        p(&w2),
        "--epochs",
        "2",
        "--seed",
        "5",
    ]);
    assert_eq!(std::fs::read(&w).unwrap(), std::fs::read(&w2).unwrap());

    let eval = |method: &str, report: &Path, extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--dataset",
            p(&data),
            "--method",
            method,
            "--report",
            p(report),
            "--canonical",
            "--limit",
            "6",
            "--calibration",
            "3",
        ];
        args.extend_from_slice(extra);
        run(&args)
    };
    let r1 = d.path().join("ixg.json");
    let r1b = d.path().join("ixg_again.json");
    let radar = d.path().join("radar.svg");
    let out = eval("ixg", &r1, &["--model", p(&w), "--radar", p(&radar)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("CSDC"));
    assert_eq!(code(&eval("ixg", &r1b, &["--model", p(&w)])), 0);
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r1b).unwrap());
    assert!(std::fs::read_to_string(&radar).unwrap().contains("<svg"));
    let report = Report::from_json(&std::fs::read_to_string(&r1).unwrap()).unwrap();
    assert!(report.timing.is_none());
    assert_eq!(report.counts.samples, 6);

    // the same model behind the wire scores identically on gradient methods
    let r2 = d.path().join("ixg_remote.json");
    let endpoint = format!(
        "stdio:{} serve --stdio --model {}",
        env!("CARGO_BIN_EXE_funnybench"),
        p(&w)
    );
    let out = eval("ixg", &r2, &["--external", &endpoint]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let remote = Report::from_json(&std::fs::read_to_string(&r2).unwrap()).unwrap();
    for ((k, a), (_, b)) in report.scores.fields().iter().zip(remote.scores.fields()) {
        assert!((a - b).abs() <= 1e-5, "{k}: {a} vs {b}");
    }

    // Grad-CAM needs activations, which the wire does not carry
    let out = eval(
        "gradcam",
        &d.path().join("x.json"),
        &["--external", &endpoint],
    );
    assert_eq!(code(&out), 6);

    // nothing listens here
    let out = eval(
        "ixg",
        &d.path().join("y.json"),
        &["--external", "tcp://127.0.0.1:1"],
    );
    assert_eq!(code(&out), 5);

    let out = run(&[
        "compare",
        p(&r1),
        p(&r2),
        "--radar",
        p(&d.path().join("cmp.svg")),
    ]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("ixg") && table.contains("mX"), "{table}");
}
