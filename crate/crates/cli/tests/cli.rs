//! End-to-end runs of the binary against a local mock chat endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};
use sumdistill::corpus::{write_augmented, write_jsonl, AugmentedInstance};
use sumdistill::synthetic::marker_corpus;

const KEY_VAR: &str = "SUMDISTILL_TEST_KEY";

struct MockTeacher {
    url: String,
    requests: Arc<AtomicUsize>,
    /// While set, prompts mentioning "Jerry" get a 500.
    fail_jerry: Arc<AtomicBool>,
}

fn reply(prompt: &str) -> String {
    if prompt.contains("ERRORS:") {
        "SUMMARY: Jerry will bring the cake on monday.\nERRORS: the speaker is wrong.".into()
    } else {
        "Amanda will bring the cake on monday.".into()
    }
}

fn handle(stream: TcpStream, requests: &AtomicUsize, fail_jerry: &AtomicBool) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    requests.fetch_add(1, Ordering::SeqCst);
    let request: Value = serde_json::from_slice(&body).unwrap();
    let prompt = request["messages"][0]["content"].as_str().unwrap_or_default();
    let (status, payload) = if fail_jerry.load(Ordering::SeqCst) && prompt.contains("Jerry:") {
        ("500 Internal Server Error", "{}".to_string())
    } else {
        ("200 OK", json!({"choices": [{"message": {"role": "assistant", "content": reply(prompt)}}]}).to_string())
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

impl MockTeacher {
    fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let fail_jerry = Arc::new(AtomicBool::new(false));
        let (r, f) = (Arc::clone(&requests), Arc::clone(&fail_jerry));
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (r, f) = (Arc::clone(&r), Arc::clone(&f));
                std::thread::spawn(move || handle(stream, &r, &f));
            }
        });
        Self { url, requests, fail_jerry }
    }
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sumdistill"));
    c.env(KEY_VAR, "test-key");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
    eprintln!("stderr:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn teacher_config(dir: &Path, url: &str, extra: &str) -> PathBuf {
    write_config(
        dir,
        &format!(
            r#"
output_dir = "{out}"
[data]
train = "{train}"
[teacher]
endpoint = "{url}"
api_key_env = "{KEY_VAR}"
rate_limit = 100000.0
backoff_ms = 0
timeout = 10.0
{extra}
"#,
            out = dir.join("out").display(),
            train = dir.join("train.jsonl").display(),
        ),
    )
}

fn write_dialogues(dir: &Path) {
    let rows = [
        json!({"id": "d1", "dialogue": "Amanda: I will bring the cake on monday.\nTom: Great!", "summary": "Amanda will bring the cake on monday."}),
        json!({"id": "d2", "dialogue": "Jerry: Who brings the cake?\nAmanda: Me, on monday.", "summary": "Amanda brings the cake on monday."}),
        json!({"id": "d3", "dialogue": "Tom: Cake?\nAmanda: Monday.", "summary": "Amanda brings cake on monday."}),
    ];
    write_jsonl(&rows, &dir.join("train.jsonl")).unwrap();
}

fn request_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn extract_writes_records_and_logs_two_k_requests() {
    let mock = MockTeacher::start();
    let dir = tempfile::tempdir().unwrap();
    write_dialogues(dir.path());
    let cfg = teacher_config(dir.path(), &mock.url, "");
    let out = run(bin().arg("--config").arg(&cfg).args(["extract", "--k", "3", "--limit", "2"]));
    assert!(out.status.success());
    let records = dir.path().join("out/augmented-train.jsonl");
    let aug: Vec<AugmentedInstance> = sumdistill::corpus::read_augmented(&records).unwrap();
    assert_eq!(aug.len(), 2);
    let log = request_lines(&dir.path().join("out/augmented-train.jsonl.requests.jsonl"));
    assert_eq!(log.len(), 12);
    assert_eq!(mock.requests.load(Ordering::SeqCst), 12);
    assert!(log.iter().all(|l| l["config_hash"].is_string()));
    assert!(stdout(&out).contains("12 requests"));
    assert!(dir.path().join("out/augmented-train.jsonl.manifest.json").exists());
}

#[test]
fn missing_api_key_fails_before_any_request() {
    let mock = MockTeacher::start();
    let dir = tempfile::tempdir().unwrap();
    write_dialogues(dir.path());
    let cfg = teacher_config(dir.path(), &mock.url, "");
    let out = run(bin().env_remove(KEY_VAR).arg("--config").arg(&cfg).args(["extract", "--limit", "1"]));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(mock.requests.load(Ordering::SeqCst), 0);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn resume_does_not_repeat_requests() {
    let mock = MockTeacher::start();
    let dir = tempfile::tempdir().unwrap();
    write_dialogues(dir.path());
    let cfg = teacher_config(dir.path(), &mock.url, "max_retries = 0\nfailure_threshold = 1.0");
    mock.fail_jerry.store(true, Ordering::SeqCst);
    let first = run(bin().arg("--config").arg(&cfg).args(["extract", "--k", "2"]));
    assert!(first.status.success());
    assert!(stdout(&first).contains("1 failed"));

    mock.fail_jerry.store(false, Ordering::SeqCst);
    let second = run(bin().arg("--config").arg(&cfg).args(["extract", "--k", "2", "--resume"]));
    assert!(second.status.success());
    assert!(stdout(&second).contains("2 resumed"));

    let records = sumdistill::corpus::read_augmented(&dir.path().join("out/augmented-train.jsonl")).unwrap();
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort();
    assert_eq!(ids, ["d1", "d2", "d3"]);
    let log = request_lines(&dir.path().join("out/augmented-train.jsonl.requests.jsonl"));
    for id in ["d1", "d3"] {
        assert_eq!(log.iter().filter(|l| l["tag"] == id).count(), 4, "{id}");
    }
    // d2: one failed positive in the first run, then a full 2k in the second.
    let d2_ok = log.iter().filter(|l| l["tag"] == "d2" && l["outcome"] == "ok").count();
    assert_eq!(d2_ok, 4);
}

fn training_fixture(dir: &Path, n: usize, extra: &str) -> PathBuf {
    let corpus = marker_corpus(n, 3, "m");
    write_augmented(&corpus, &dir.join("aug.jsonl")).unwrap();
    let dev: Vec<Value> = marker_corpus(6, 99, "dev")
        .iter()
        .map(|a| json!({"id": a.id, "dialogue": a.dialogue, "reference": a.reference}))
        .collect();
    write_jsonl(&dev, &dir.join("dev.jsonl")).unwrap();
    write_config(
        dir,
        &format!(
            r#"
output_dir = "{out}"
[data]
augmented = "{aug}"
dev = "{dev}"
test = "{dev}"
[train]
steps = 20
eval_every = 10
batch_size = 2
head_hidden = [8]
head_output = 4
[model]
vocab_size = 64
[model.toy]
embed_dim = 8
[model.decode]
max_length = 12
strategy = "greedy"
{extra}
"#,
            out = dir.join("out").display(),
            aug = dir.join("aug.jsonl").display(),
            dev = dir.join("dev.jsonl").display(),
        ),
    )
}

fn only_run_dir(root: &Path) -> PathBuf {
    let entries: Vec<_> = std::fs::read_dir(root).unwrap().flatten().collect();
    assert_eq!(entries.len(), 1);
    entries[0].path()
}

fn step_rows(run_dir: &Path) -> Vec<Value> {
    request_lines(&run_dir.join("steps.jsonl"))
}

#[test]
fn train_mle_logs_no_contrastive_terms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_fixture(dir.path(), 20, "");
    let out = run(bin().arg("--config").arg(&cfg).args(["train", "--mode", "mle", "--steps", "100", "--eval-every", "50"]));
    assert!(out.status.success());
    assert!(stdout(&out).contains("best checkpoint: step"));
    let run_dir = only_run_dir(&dir.path().join("out/train"));
    let rows = step_rows(&run_dir);
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r["l_c"].as_f64() == Some(0.0)));
    assert_eq!(request_lines(&run_dir.join("records.jsonl")).len(), 2);
    assert!(run_dir.join("best.json").exists());
}

#[test]
fn pair_contrast_rows_satisfy_the_combined_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_fixture(dir.path(), 20, "");
    let out = run(bin().arg("--config").arg(&cfg).args(["train", "--mode", "pair_contrast", "--alpha", "1"]));
    assert!(out.status.success());
    let rows = step_rows(&only_run_dir(&dir.path().join("out/train")));
    assert_eq!(rows.len(), 20);
    for r in rows {
        let (mle, c, total) = (r["l_mle"].as_f64().unwrap(), r["l_c"].as_f64().unwrap(), r["total"].as_f64().unwrap());
        assert!((total - (mle + c)).abs() <= 1e-9 * total.abs().max(1.0));
    }
}

#[test]
fn instance_report_without_human_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_fixture(dir.path(), 320, "");
    let out = run(bin().arg("--config").arg(&cfg).args(["build-instances", "--no-human-ref", "--n-dialogues", "300"]));
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("from 300 dialogues"), "{text}");
    assert!(text.contains("0 instances contain R*"), "{text}");
    let counts: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/instances.jsonl.counts.json")).unwrap()).unwrap();
    assert_eq!(counts["candidates_per_instance"], 3);
}

#[test]
fn evaluate_two_systems_and_rerender() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_fixture(dir.path(), 5, "");
    let dev: Vec<AugmentedInstance> = marker_corpus(6, 99, "dev");
    let good: Vec<Value> = dev.iter().map(|a| json!({"id": a.id, "summary": a.reference})).collect();
    let bad: Vec<Value> = dev.iter().map(|a| json!({"id": a.id, "summary": a.negatives[0]})).collect();
    write_jsonl(&good, &dir.path().join("good.jsonl")).unwrap();
    write_jsonl(&bad, &dir.path().join("bad.jsonl")).unwrap();
    let sys = |name: &str| format!("{name}={}", dir.path().join(format!("{name}.jsonl")).display());
    let out = run(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["evaluate", "--split", "dev", "--system", &sys("good"), "--system", &sys("bad")]));
    assert!(out.status.success());
    let tsv = std::fs::read_to_string(dir.path().join("out/eval/report.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "system\tS_A\tS_G\tCoh\tFlu\tRel\tR1\tR2\tmax_columns");
    assert!(lines[1].starts_with("good\t"));
    assert!(lines[1].ends_with("R1,R2") && lines[1].contains("S_A"));
    assert!(stdout(&out).contains('*'));

    let eval = dir.path().join("out/eval");
    let again = run(bin()
        .arg("--config")
        .arg(&cfg)
        .arg("report")
        .arg(eval.join("bad.json"))
        .arg("--baseline")
        .arg(eval.join("good.json")));
    assert!(again.status.success());
    let rerendered = std::fs::read_to_string(dir.path().join("out/report.tsv")).unwrap();
    assert!(rerendered.lines().nth(1).unwrap().starts_with("good\t"));
}

#[test]
fn metaeval_perfect_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Value> = (0..6)
        .map(|i| {
            let ok = i % 2 == 0;
            json!({
                "dialogue": "a: hi", "output_text": "a says hi",
                "error_categories": if ok { vec!["none"] } else { vec!["EntE"] },
                "metric_scores": {"m": if ok { 0.9 } else { 0.1 }}
            })
        })
        .collect();
    write_jsonl(&rows, &dir.path().join("meta.jsonl")).unwrap();
    let out = run(bin()
        .arg("--output-dir")
        .arg(dir.path())
        .arg("metaeval")
        .arg("--data")
        .arg(format!("fix={}", dir.path().join("meta.jsonl").display())));
    assert!(out.status.success());
    let tsv = std::fs::read_to_string(dir.path().join("metaeval.tsv")).unwrap();
    assert_eq!(tsv.lines().nth(1).unwrap(), "fix\tm\t1.0000\t1.0000\t6");
}

#[test]
fn ablate_over_k_renders_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_fixture(dir.path(), 10, "");
    let out = run(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["ablate", "--axis", "k", "--values", "1,2,3", "--steps", "10", "--eval-every", "5"]));
    assert!(out.status.success());
    let text = stdout(&out);
    for label in ["k=1", "k=2", "k=3"] {
        assert!(text.contains(label), "{text}");
    }
    let run_dir = only_run_dir(&dir.path().join("out/ablate"));
    assert_eq!(std::fs::read_to_string(run_dir.join("ablation.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_fixture(dir.path(), 5, "");

    let out = run(bin().arg("--config").arg(&cfg).args(["train", "--augmented", "/nonexistent/aug.jsonl"]));
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/aug.jsonl"));

    let out = run(bin().arg("--config").arg(&cfg).args(["train", "--steps", "7"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nstepz = 3\n").unwrap();
    let out = run(bin().arg("--config").arg(&bad).args(["train"]));
    assert_eq!(out.status.code(), Some(2));

    let blowup = training_fixture(dir.path(), 5, "[train.optimizer]\nlearning_rate = 1e300\nmax_grad_norm = 1e300");
    let out = run(bin().arg("--config").arg(&blowup).args(["train"]));
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = training_fixture(dir.path(), 10, "");
    let read = || {
        let run_dir = only_run_dir(&dir.path().join("out/train"));
        (
            std::fs::read(run_dir.join("steps.jsonl")).unwrap(),
            std::fs::read(run_dir.join("records.jsonl")).unwrap(),
        )
    };
    assert!(run(bin().arg("--config").arg(&cfg).args(["train", "--mode", "margin_contrast"])).status.success());
    let first = read();
    assert!(run(bin().arg("--config").arg(&cfg).args(["train", "--mode", "margin_contrast"])).status.success());
    assert_eq!(first, read());
}
