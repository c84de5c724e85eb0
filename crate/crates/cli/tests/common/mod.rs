#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use finsts_core::augment::{render_prompt, ShiftCategory, TripletDataset};
use finsts_core::evaluate::LabeledPair;
use finsts_core::jsonl;
use finsts_core::provider::write_embedding_file;
use sha2::{Digest, Sha256};

pub fn finsts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finsts")).args(args).env("RUST_LOG", "warn").output().expect("spawn finsts")
}

pub fn finsts_ok(args: &[&str]) -> Output {
    let out = finsts(args);
    assert!(
        out.status.success(),
        "finsts {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Completion the stub model returns for one prompt.
fn complete(prompt: &str) -> String {
    let marker = "### Question: The given sentence is: ";
    let start = prompt.rfind(marker).expect("question marker") + marker.len();
    let sentence = prompt[start..].trim_end_matches(" Expected answer:").trim_end_matches('.');
    if render_prompt(ShiftCategory::NoShift, sentence).is_ok_and(|p| p == prompt) {
        return format!("In summary, {sentence}.");
    }
    let tail = ShiftCategory::ALL
        .iter()
        .find(|c| render_prompt(**c, sentence).is_ok_and(|p| p == prompt))
        .map(|c| match c {
            ShiftCategory::IntensifiedSentiment => "and this pressure has become severe",
            ShiftCategory::ElaboratedDetails => "including losses of 40 million dollars in Europe",
            ShiftCategory::PlanRealization => "and the planned project was completed this year",
            _ => "as a new pandemic disrupted operations",
        })
        .unwrap_or("unrecognized");
    format!("Expected answer: {sentence}, {tail}.")
}

/// OpenAI-compatible chat endpoint answering deterministically. Returns the base URL.
pub fn start_llm_stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let l = line.to_ascii_lowercase();
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let prompt = req["messages"][0]["content"].as_str().unwrap();
                let resp = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": complete(prompt)}}]})
                    .to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{resp}",
                    resp.len()
                );
            });
        }
    });
    format!("http://{addr}/v1")
}

/// Hashed bag of words plus a constant component.
pub fn embed_text(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 32];
    v[31] = 1.0;
    for tok in finsts_core::corpus::token_sequence(text) {
        let h = Sha256::digest(tok.as_bytes());
        let sign = if h[1] & 1 == 0 { 1.0 } else { -1.0 };
        v[(h[0] % 31) as usize] += sign;
    }
    v
}

const TOPICS: [&str; 12] = [
    "Our revenue depends on a small number of large customers",
    "Competition in the markets we serve is intense",
    "We rely on third-party suppliers for critical components",
    "Changes in interest rates could increase our borrowing costs",
    "We may be unable to attract and retain key personnel",
    "Cybersecurity incidents could disrupt our operations",
    "We plan to expand manufacturing capacity in Texas",
    "Our international operations expose us to currency risk",
    "New regulations could increase our compliance costs",
    "Our business is subject to seasonal fluctuations",
    "We have substantial indebtedness that limits our flexibility",
    "Litigation could result in significant expenses",
];

/// Two companies with two annual reports each. Returns the manifest path.
pub fn write_corpus(dir: &Path) -> PathBuf {
    let docs = dir.join("docs");
    std::fs::create_dir_all(&docs).unwrap();
    let mut manifest = String::new();
    for company in ["ACME", "GLOBEX"] {
        for (k, period) in ["2019", "2020"].iter().enumerate() {
            let mut text = String::new();
            for (i, t) in TOPICS.iter().enumerate() {
                let s = if k == 1 && i % 3 == 0 { format!("{t} and this risk has grown") } else { t.to_string() };
                text.push_str(&format!("{s} at {company}. "));
            }
            let name = format!("{company}-{period}.txt");
            std::fs::write(docs.join(&name), text).unwrap();
            manifest.push_str(&format!(
                "{{\"company\":\"{company}\",\"period\":\"{period}\",\"path\":\"docs/{name}\"}}\n"
            ));
        }
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Config for a pipeline rooted at `dir`, using the stub LLM at `llm_url`.
pub fn write_config(dir: &Path, llm_url: &str) -> PathBuf {
    let cfg = serde_json::json!({
        "corpus": "manifest.jsonl",
        "provider": {"kind": "file", "path": "embeddings.jsonl"},
        "llm": {"base_url": llm_url, "cache_path": "llm-cache.jsonl", "max_retries": 0, "concurrency": 3},
        "training": {"epochs": 3, "batch_size": 16},
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Embeddings for every sentence and triplet text seen so far.
pub fn write_embeddings(dir: &Path, out: &Path) {
    let mut texts: Vec<String> = Vec::new();
    let sentences: Vec<serde_json::Value> = jsonl::read(&out.join("sentences.jsonl")).unwrap();
    texts.extend(sentences.iter().map(|s| s["text"].as_str().unwrap().to_string()));
    if let Ok(ds) = TripletDataset::read(&out.join("triplets.jsonl")) {
        for r in ds.records() {
            texts.extend([r.anchor.clone(), r.positive.clone(), r.negative.clone()]);
        }
    }
    texts.sort();
    texts.dedup();
    let vecs: Vec<Vec<f64>> = texts.iter().map(|t| embed_text(t)).collect();
    write_embedding_file(&dir.join("embeddings.jsonl"), texts.iter().map(|s| s.as_str()).zip(vecs.iter().map(|v| v.as_slice())))
        .unwrap();
}

/// Labeled pairs built from held-out triplets: each gives one positive and one negative.
pub fn write_annotated(out: &Path) -> PathBuf {
    let ds = TripletDataset::read(&out.join("split/test.jsonl")).unwrap();
    let train = TripletDataset::read(&out.join("split/train.jsonl")).unwrap();
    let mut pairs = Vec::new();
    for r in ds.records().iter().chain(train.records().iter().take(8)) {
        pairs.push(LabeledPair::new(format!("{}+", r.id), r.anchor.clone(), r.positive.clone(), 1, None));
        pairs.push(LabeledPair::new(format!("{}-", r.id), r.anchor.clone(), r.negative.clone(), -1, Some(r.category)));
    }
    let path = out.join("annotated.jsonl");
    jsonl::write(&path, &pairs).unwrap();
    path
}

/// Runs every batch stage into `dir/out`.
pub fn run_pipeline(dir: &Path, llm_url: &str, seed: u64) -> PathBuf {
    write_corpus(dir);
    let cfg = write_config(dir, llm_url);
    let out = dir.join("out");
    let c = cfg.to_str().unwrap();
    let s = seed.to_string();
    let o = out.to_str().unwrap();
    let base = |cmd: &'static str| vec![cmd, "--config", c, "--seed", &s, "--out", o];
    finsts_ok(&base("ingest"));
    finsts_ok(&base("augment"));
    write_embeddings(dir, &out);
    finsts_ok(&base("match"));
    finsts_ok(&base("assess"));
    finsts_ok(&base("train"));
    let annotated = write_annotated(&out);
    let mut eval = base("eval");
    eval.extend(["--annotated", annotated.to_str().unwrap()]);
    finsts_ok(&eval);
    finsts_ok(&base("ablate"));
    out
}
