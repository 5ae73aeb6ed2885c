use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use vulnhunter::corpus::{write_csv, LabelRegistry, VulnRecord, CSV_COLUMNS};
use vulnhunter::model::{init_model, save_checkpoint, Checkpoint, ModelConfig, TaskSpec};
use vulnhunter::tokenizer::Vocab;

fn vh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vulnhunter"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_documents_every_command() {
    let out = vh(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-corpus", "stats", "train", "compare", "eval", "scan", "serve"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
        assert_eq!(vh(&[cmd, "--help"]).status.code(), Some(0));
    }
    let scan = String::from_utf8_lossy(&vh(&["scan", "--help"]).stdout).into_owned();
    for flag in [
        "--models",
        "--format",
        "--threshold",
        "--fail-on-findings",
        "VULNHUNTER_MODELS",
    ] {
        assert!(scan.contains(flag), "{flag} missing from scan --help");
    }
}

#[test]
fn empty_corpus_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.csv");
    let o = vh(&["gen-corpus", "--out", p(&out), "--n", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        format!("{}\n", CSV_COLUMNS.join(","))
    );
    assert!(dir.path().join("empty.csv.registry.json").exists());
}

#[test]
fn corpus_stats_match_the_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    assert!(vh(&[
        "gen-corpus",
        "--out",
        p(&out),
        "--n",
        "60",
        "--cwe-ids",
        "4",
        "--cwe-types",
        "2"
    ])
    .status
    .success());
    let o = vh(&["stats", "--data", p(&out), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["n_records"], 60);
    assert_eq!(s["n_vulnerable"], 30);
    assert_eq!((s["n_cwe_ids"].as_u64(), s["n_cwe_types"].as_u64()), (Some(4), Some(2)));
}

#[test]
fn missing_inputs_exit_2_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    let o = vh(&[
        "eval",
        "--checkpoint",
        p(&nowhere.join("x.ckpt")),
        "--data",
        p(&nowhere.join("d.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("x.ckpt"), "{}", stderr(&o));

    let o = vh(&["scan", p(&dir.path().join("a.c")), "--models", p(&nowhere)]);
    assert_eq!(o.status.code(), Some(2));

    let o = vh(&["serve", "--models", p(&nowhere), "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot load models"), "{}", stderr(&o));
}

/// Two vulnerable records with CVSS 2 and 5 in a CSV next to a vocabulary.
fn hand_fixture(dir: &Path) -> (Vocab, LabelRegistry) {
    let reg = LabelRegistry::from_map([("CWE-787".to_string(), "Base".to_string())].into());
    let rec = |id: &str, code: &str, cvss: f64| VulnRecord {
        id: id.into(),
        code: code.into(),
        vulnerable: true,
        cwe_id: Some("CWE-787".into()),
        cwe_type: Some("Base".into()),
        cvss: Some(cvss),
    };
    let records = [
        rec("a", "int f ( ) { gets ( buf ) ; }", 2.0),
        rec("b", "int g ( ) { strcpy ( a , b ) ; }", 5.0),
    ];
    write_csv(&records, std::fs::File::create(dir.join("hand.csv")).unwrap()).unwrap();
    let vocab = Vocab::train(&[records[0].code.as_str(), records[1].code.as_str()], 280).unwrap();
    vocab.save(&dir.join("vocab.json")).unwrap();
    (vocab, reg)
}

#[test]
fn eval_reproduces_hand_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, reg) = hand_fixture(dir.path());
    let cfg = ModelConfig::tiny(vocab.len(), 1, 1);

    // Constant predictor 3: errors (1, 2) against targets (2, 5).
    let mut params = init_model(&cfg).unwrap();
    let head = params.layout.head_regress.clone();
    head.w.of_mut(&mut params.data).fill(0.0);
    head.b.of_mut(&mut params.data)[0] = 3.0;
    let ck = Checkpoint::new(TaskSpec::Regress, params, reg.clone(), vocab.hash());
    save_checkpoint(&ck, &dir.path().join("regressor.ckpt")).unwrap();

    // Detector that always answers "vulnerable".
    let mut params = init_model(&cfg).unwrap();
    let head = params.layout.head_detect.clone();
    head.out_w.of_mut(&mut params.data).fill(0.0);
    head.out_b.of_mut(&mut params.data).copy_from_slice(&[0.0, 5.0]);
    let ck = Checkpoint::new(TaskSpec::Detect, params, reg, vocab.hash());
    save_checkpoint(&ck, &dir.path().join("detector.ckpt")).unwrap();

    let data = dir.path().join("hand.csv");
    let run = |ckpt: &str| -> Value {
        let o = vh(&[
            "eval",
            "--checkpoint",
            p(&dir.path().join(ckpt)),
            "--data",
            p(&data),
            "--split",
            "all",
            "--format",
            "json",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_slice(&o.stdout).unwrap()
    };
    let r = run("regressor.ckpt");
    assert_eq!(r["task"], "regressor");
    assert!((r["mse"].as_f64().unwrap() - 2.5).abs() < 1e-12, "{r}");
    assert!((r["mae"].as_f64().unwrap() - 1.5).abs() < 1e-12, "{r}");
    let d = run("detector.ckpt");
    assert_eq!(d["accuracy"], 1.0);
}

fn small_models(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("c.csv");
    assert!(vh(&[
        "gen-corpus",
        "--out",
        p(&data),
        "--n",
        "40",
        "--cwe-ids",
        "3",
        "--cwe-types",
        "2"
    ])
    .status
    .success());
    let models = dir.join("models");
    let o = vh(&[
        "train",
        "--preset",
        "tiny",
        "--epochs",
        "0",
        "--vocab-size",
        "300",
        "--data",
        p(&data),
        "--out",
        p(&models),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    models
}

#[test]
fn zero_epochs_writes_initial_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models(dir.path());
    for name in ["detector", "classifier", "regressor"] {
        assert!(models.join(format!("{name}.ckpt")).exists());
        let run: Value =
            serde_json::from_str(&std::fs::read_to_string(models.join(format!("{name}.run.json"))).unwrap()).unwrap();
        assert_eq!(run["history"], Value::Array(vec![]));
    }
    for f in ["vocab.json", "split.json"] {
        assert!(models.join(f).exists());
    }
}

#[test]
fn scan_formats_and_env_default() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models(dir.path());
    let src = dir.path().join("src");
    std::fs::create_dir(&src).unwrap();
    std::fs::write(
        src.join("b.c"),
        "int b ( char * buf ) {\n  gets ( buf ) ;\n  return 0 ;\n}\n",
    )
    .unwrap();
    std::fs::write(src.join("a.h"), "int a ( void ) { return 1 ; }\n").unwrap();
    std::fs::write(src.join("notes.txt"), "int n ( void ) { return 1 ; }\n").unwrap();

    let o = Command::new(env!("CARGO_BIN_EXE_vulnhunter"))
        .args(["scan", p(&src), "--format", "json", "--threshold", "0"])
        .env("VULNHUNTER_MODELS", &models)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let files: Vec<&str> = v["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["file"].as_str().unwrap())
        .collect();
    assert_eq!(files.len(), 2);
    assert!(files[0].ends_with("a.h") && files[1].ends_with("b.c"), "{files:?}");

    let out = dir.path().join("report.sarif");
    let o = vh(&[
        "scan",
        p(&src),
        "--models",
        p(&models),
        "--format",
        "sarif",
        "--threshold",
        "0",
        "--fail-on-findings",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(s["runs"][0]["results"].as_array().unwrap().len(), 2);

    let o = vh(&["scan", p(&src), "--models", p(&models), "--threshold", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_answers_health_and_stops_on_sigint() {
    let dir = tempfile::tempdir().unwrap();
    let models = small_models(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_vulnhunter"))
        .args(["serve", "--models", p(&models), "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = lines
        .by_ref()
        .map(|l| l.unwrap())
        .find_map(|l| l.strip_prefix("listening on http://").map(str::to_string))
        .expect("listening line");

    let mut s = TcpStream::connect(&addr).unwrap();
    write!(
        s,
        "GET /v1/health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");

    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let rest: Vec<String> = lines.map(|l| l.unwrap()).collect();
    assert!(rest.iter().any(|l| l == "shutting down"), "{rest:?}");
    assert!(child.wait().unwrap().success());
}
