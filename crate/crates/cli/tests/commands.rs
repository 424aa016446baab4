use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptseg_cli::table::Table;
use anyhow::Result;

const SMALL: &[&str] = &[
    "--points",
    "4",
    "--val-points",
    "2",
    "--test-points",
    "2",
    "--image-size",
    "32",
    "--canvas",
    "32",
    "--classes",
    "3",
    "--queries",
    "4",
    "--width",
    "16",
    "--heads",
    "2",
    "--stages",
    "2",
    "--fusion-width",
    "8",
    "--fusion-layers",
    "1",
    "--fusion-heads",
    "2",
    "--latents",
    "2",
    "--epochs",
    "1",
    "--batch",
    "4",
    "--alpha",
    "0.1",
];

fn adaptseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptseg")).args(args).output().expect("spawn adaptseg")
}

fn ok(args: &[&str]) -> String {
    let out = adaptseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` with its contents, keyed by relative path.
fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_reproducible_and_valid() -> Result<()> {
    let tmp = tempfile::tempdir()?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&with_small(&["gen-data", "--seed", "7", "--depth", "1", "--out", s(d)]));
    }
    assert_eq!(files(&a), files(&b));
    let report = ok(&["validate", "--dataset", s(&a)]);
    assert!(report.contains("8 points, 48 frames"), "{report}");
    Ok(())
}

#[test]
fn validate_rejects_a_tampered_frame() -> Result<()> {
    let tmp = tempfile::tempdir()?;
    let d = tmp.path().join("d");
    ok(&with_small(&["gen-data", "--out", s(&d)]));
    let img = d.join("images").join("0_0.ppm");
    let mut bytes = std::fs::read(&img)?;
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    std::fs::write(&img, bytes)?;
    assert_eq!(adaptseg(&["validate", "--dataset", s(&d)]).status.code(), Some(2));
    Ok(())
}

#[test]
fn train_then_eval() -> Result<()> {
    let tmp = tempfile::tempdir()?;
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&with_small(&["gen-data", "--out", s(&data)]));

    let stdout = ok(&with_small(&["train", "--dataset", s(&data), "--variant", "tiny", "--out", s(&run)]));
    let log = std::fs::read_to_string(run.join("train.log"))?;
    assert!(log.starts_with("# variant: tiny\n"));
    let frozen = log.lines().find_map(|l| l.strip_prefix("# frozen: ")).expect("frozen line");
    assert_eq!(frozen, "backbone,pixel_decoder,task_mlp");
    assert!(stdout.contains("# frozen: backbone,pixel_decoder,task_mlp"));
    assert!(run.join("checkpoint.bin").exists() && run.join("config.txt").exists());

    let ckpt = run.join("checkpoint.bin");
    let ev = tmp.path().join("eval");
    let text = ok(&with_small(&["eval", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--out", s(&ev)]));
    let table = Table::parse(&text, 3)?;
    assert_eq!(table.rows.len(), 1);
    let deltas = table.rows[0].deltas.as_ref().expect("deltas");
    assert!(deltas.iter().all(|d| *d == Some(0.0)), "{text}");
    assert!(text.contains("(+0.0%)"));
    assert_eq!(std::fs::read_to_string(ev.join("eval.tsv"))?, text);

    // A baseline table sets the reference row.
    let base = tmp.path().join("base.tsv");
    let mut b = Table::parse(&text, 3)?;
    b.rows[0].values = vec![25.1; 4];
    b.rows[0].deltas = None;
    std::fs::write(&base, b.render())?;
    let text = ok(&with_small(&[
        "eval",
        "--dataset",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--baseline",
        s(&base),
        "--out",
        s(&ev),
    ]));
    let t = Table::parse(&text, 3)?;
    let expect = ((t.rows[0].values[0] - 25.1) / 25.1 * 1000.0).round() / 10.0;
    assert_eq!(t.rows[0].deltas.as_ref().unwrap()[0], Some(expect));

    let report = ok(&["report", "--out", s(&run)]);
    assert!(report.contains("plotted"));
    assert!(run.join("curve_miou.svg").exists());
    ok(&["report", "--out", s(&ev)]);

    // Same checkpoint under a different architecture.
    let mut args = with_small(&["eval", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    args.extend(["--width", "8"]);
    assert_eq!(adaptseg(&args).status.code(), Some(2));
    Ok(())
}

#[test]
fn usage_errors() {
    assert_eq!(adaptseg(&["eval"]).status.code(), Some(1));
    assert_eq!(adaptseg(&["train", "--variant", "huge"]).status.code(), Some(1));
    assert_eq!(adaptseg(&["validate", "--dataset", "/nonexistent/dataset"]).status.code(), Some(3));
    assert!(ok(&["keys"]).contains("alpha"));
}

fn ablate(suite: &str, extra: &[&str]) -> (Table, PathBuf, tempfile::TempDir) {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join(suite);
    let mut args = with_small(&["ablate", suite, "--seeds", "1", "--pretrain-epochs", "1", "--out", s(&out)]);
    args.extend(extra);
    let text = ok(&args);
    let table = Table::parse(&std::fs::read_to_string(out.join("table.tsv")).unwrap(), 3).unwrap();
    assert!(text.starts_with(&table.render()));
    (table, out, tmp)
}

fn methods(t: &Table) -> Vec<&str> {
    t.rows.iter().map(|r| r.labels[0].as_str()).collect()
}

#[test]
fn embedder_suite_rows() {
    let (t, out, _tmp) = ablate("embedder", &[]);
    assert_eq!(methods(&t), ["baseline", "vanilla", "mlp"]);
    assert!(t.rows[0].deltas.as_ref().unwrap().iter().all(|d| *d == Some(0.0)));
    assert!(out.join("seed1").join("table.tsv").exists());
}

#[test]
fn steps_suite_rows() {
    let (t, _out, _tmp) = ablate("steps", &["--variants", "tiny", "--steps-list", "1,2", "--points", "2"]);
    assert_eq!(methods(&t), ["baseline", "tiny 1 step", "tiny 2 steps"]);
}

#[test]
fn pca_suite_writes_scatter_plots() {
    let (_, out, _tmp) = ablate("pca", &["--split", "val"]);
    let pca = std::fs::read_to_string(out.join("pca.tsv")).unwrap();
    let t = Table::parse(&pca, 2).unwrap();
    assert_eq!(t.value_columns, ["vanilla", "mlp"]);
    assert_eq!(t.rows.len(), 2);
    let svgs = std::fs::read_dir(out.join("seed1"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".svg"));
    assert!(svgs.count() >= 2);
}
