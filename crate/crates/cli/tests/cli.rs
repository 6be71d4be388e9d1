use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use evmx_core::events::{parse_csv, parse_evm, write_evm, Event, EventStream, Polarity, SensorGeometry};
use evmx_core::metrics::MetricReport;

fn evmx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evmx"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn evmx")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CSV: &str = "x,y,t,p\n1,2,100,1\n3,4,150,-1\n3,4,40000,1\n10,20,70000,0\n";

#[test]
fn help_lists_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = evmx(dir.path(), &["train-snn", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for flag in ["--slice-us", "--crop", "--lr", "--epochs", "--batch", "--dropout", "--seed", "--loocv", "--threads", "--encoding"] {
        assert!(text.contains(flag), "missing {flag}");
    }
    for default in ["[default: 33000]", "[default: 64]", "[default: 0.001]", "[default: 100]", "[default: 8]", "[default: 0.2]"] {
        assert!(text.contains(default), "missing {default}");
    }
    let o = evmx(dir.path(), &["train-cvae", "--help"]);
    assert!(stdout(&o).contains("[default: 16]"));
}

#[test]
fn ingest_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), CSV).unwrap();
    let o = evmx(dir.path(), &["ingest", "a.csv", "--out-dir", "out"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let back = parse_evm(&fs::read(dir.path().join("out/a.evm")).unwrap()).unwrap();
    let direct = parse_csv(CSV, SensorGeometry::davis346()).unwrap();
    assert_eq!(back.events(), direct.events());
    assert!(stdout(&o).contains("ingested files=1 events=4"));
}

#[test]
fn ingest_batch_writes_one_output_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut names = Vec::new();
    for i in 0..5 {
        let name = format!("s{i}.csv");
        let rows: String = (0..=i).map(|k| format!("{k},0,{},1\n", k * 10)).collect();
        fs::write(dir.path().join(&name), rows).unwrap();
        names.push(name);
    }
    let mut args: Vec<&str> = vec!["ingest"];
    args.extend(names.iter().map(String::as_str));
    args.extend(["--out-dir", "out"]);
    let o = evmx(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 5);
    assert!(stdout(&o).contains("ingested files=5 events=15"));
}

#[test]
fn invalid_line_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "1,2,3,1\n1,2,oops,1\n").unwrap();
    let o = evmx(dir.path(), &["ingest", "bad.csv", "--out-dir", "out"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error kind=validation bad.csv: "), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn bad_flags_and_missing_files_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(evmx(dir.path(), &["frames", "x.evm", "--out-dir", "o", "--slice-us", "abc"]).status.code(), Some(1));
    assert_eq!(evmx(dir.path(), &["frames", "missing.evm", "--out-dir", "o"]).status.code(), Some(1));
    assert_eq!(evmx(dir.path(), &["synth", "--out-dir", "o", "--subjects", "0"]).status.code(), Some(1));
}

#[test]
fn frames_conserve_counts_and_skip_empty_clips() {
    let dir = tempfile::tempdir().unwrap();
    let g = SensorGeometry::new(32, 32, "t").unwrap();
    let events = (0..50u64).map(|i| Event::new((i % 32) as u16, 3, i * 1000, Polarity::On)).collect();
    fs::write(dir.path().join("full.evm"), write_evm(&EventStream::new(g.clone(), events).unwrap())).unwrap();
    fs::write(dir.path().join("empty.evm"), write_evm(&EventStream::empty(g))).unwrap();
    let o = evmx(dir.path(), &["frames", "full.evm", "empty.evm", "--out-dir", "fr", "--slice-us", "10000", "--crop", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("events=50 slices=5 counted=50"), "{out}");
    assert!(out.contains("frames clips=1 empty=1 events=50 counted=50"), "{out}");
    assert!(stderr(&o).contains("empty.evm"));
    assert!(dir.path().join("fr/full.evf").exists());
}

#[test]
fn loocv_reports_one_fold_per_subject() {
    let dir = tempfile::tempdir().unwrap();
    let o = evmx(dir.path(), &["synth", "--out-dir", "ds", "--clips", "14", "--duration-us", "66000", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = evmx(
        dir.path(),
        &["train-snn", "--manifest", "ds/manifest.txt", "--out-dir", "cv", "--loocv", "--epochs", "1", "--crop", "8"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("cv/loocv.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 7 + 1);
    assert!(lines[8].starts_with("mean,14,"));
    let o = evmx(dir.path(), &["eval-snn", "--manifest", "ds/manifest.txt", "--checkpoint", "cv", "--loocv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), table);
}

#[test]
fn memorised_training_set_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let o = evmx(dir.path(), &["synth", "--out-dir", "ds", "--clips", "8", "--seed", "2", "--noise-rate", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = evmx(
        dir.path(),
        &[
            "train-snn", "--manifest", "ds/manifest.txt", "--out-dir", "m", "--epochs", "40", "--crop", "16", "--dropout", "0",
            "--lr", "0.005", "--batch", "4",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = evmx(dir.path(), &["eval-snn", "--manifest", "ds/manifest.txt", "--checkpoint", "m/snn.ckpt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("clips=8 accuracy=1 "), "{}", stdout(&o));
}

#[test]
fn reference_against_itself_is_perfect_and_report_parses() {
    let dir = tempfile::tempdir().unwrap();
    let o = evmx(dir.path(), &["synth", "--out-dir", "ds", "--clips", "5", "--seed", "3"]);
    assert!(o.status.success());
    let o = evmx(
        dir.path(),
        &["eval-cvae", "--pairs", "ds/pairs_test.txt", "--predictions", "ds/frames", "--report", "r.jsonl"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    let rep = MetricReport::from_jsonl(&text).unwrap();
    assert_eq!(rep.items.len(), 5);
    assert!((rep.means.ssim - 1.0).abs() < 1e-12);
    assert_eq!(rep.means.psnr_db, evmx_core::metrics::PSNR_SENTINEL_DB);
    assert_eq!(rep.to_jsonl(), text);
}

#[test]
fn empty_pair_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pairs.txt"), "# nothing\n").unwrap();
    let o = evmx(dir.path(), &["train-cvae", "--pairs", "pairs.txt", "--out-dir", "c", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
