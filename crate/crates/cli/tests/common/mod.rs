#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tcbm_annotate::prompt::micro_prompt;
use tcbm_annotate::EndpointConfig;

pub fn tcbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcbm"))
        .args(args)
        .env_remove("TCBM_API_KEY")
        .output()
        .expect("run tcbm")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Planted task files in `dir`: dataset.ndjson, head.json, concepts.ndjson.
pub fn synth(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join("data");
    let o = tcbm(&["synth", "--out-dir", s(&out), "--seed", &seed.to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// Sequential training settings under which the planted task trains well.
pub fn planted_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "seed = 0\n\n[pipeline.train]\nstrategy = \"sequential\"\nlearning_rate = 0.01\nelastic_net = 0.005\n",
    )
    .unwrap();
    path
}

pub fn pipeline_args<'a>(data: &'a Path, config: &'a Path, out: &'a Path) -> Vec<&'a str> {
    let mut v = vec!["pipeline", "--config", s(config)];
    for (flag, file) in [("--dataset", "dataset.ndjson"), ("--head", "head.json"), ("--concepts", "concepts.ndjson")] {
        v.push(flag);
        v.push(leak(data.join(file)));
    }
    v.extend(["--out-dir", s(out)]);
    v
}

fn leak(p: PathBuf) -> &'static str {
    Box::leak(p.into_os_string().into_string().unwrap().into_boxed_str())
}

/// Relative path → contents of every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub const TEXTS: [(&str, &str); 4] = [
    ("t0", "The orchestra tuned the violin and the piano."),
    ("t1", "A lion chased a puma across the plain."),
    ("t2", "Tennis and golf drew large crowds."),
    ("t3", "The tiger sat beside a guitar."),
];

pub const REPLIES: [&str; 4] = [
    "Topics: ['violin', 'piano']",
    "Topics: ['lion', 'puma']",
    "Topics: ['tennis', 'golf']<eos>",
    "Topics: ['tiger', 'guitar']",
];

/// A four-record dataset with texts, and a cassette answering its micro
/// prompts under the default endpoint settings.
pub fn text_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let dataset = dir.join("texts.ndjson");
    let cassette = dir.join("cassette.ndjson");
    let mut ds = String::new();
    let mut cas = String::new();
    let cfg = EndpointConfig::default();
    for (i, ((id, text), reply)) in TEXTS.iter().zip(REPLIES).enumerate() {
        let split = if i < 2 { "train" } else { "dev" };
        let row = serde_json::json!({"id": id, "split": split, "label": i % 2, "embedding": [i as f64, 1.0], "text": text});
        ds.push_str(&format!("{row}\n"));
        let req = cfg.request(micro_prompt(text));
        cas.push_str(&format!("{}\n", serde_json::json!({"hash": req.hash(), "response": reply})));
    }
    std::fs::write(&dataset, ds).unwrap();
    std::fs::write(&cassette, cas).unwrap();
    (dataset, cassette)
}

/// Answers every chat request with `reply` until `count` requests were
/// served. Returns the base URL and a handle yielding the request bodies.
pub fn serve(reply: &'static str, count: usize) -> (String, std::thread::JoinHandle<Vec<serde_json::Value>>) {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for _ in 0..count {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end().to_ascii_lowercase();
                if h.is_empty() {
                    break;
                }
                if let Some(v) = h.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            bodies.push(serde_json::from_slice(&raw).unwrap());
            let body = serde_json::json!({"choices": [{"message": {"content": reply}}]}).to_string();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

/// Sentence-embedding stand-ins: three tight groups of topics.
pub fn micro_embeddings(dir: &Path) -> PathBuf {
    let groups: [&[&str]; 3] = [&["violin", "piano", "guitar"], &["lion", "puma", "tiger"], &["tennis", "golf"]];
    let mut text = String::new();
    for (g, topics) in groups.iter().enumerate() {
        for (i, t) in topics.iter().enumerate() {
            let mut e = vec![0.0; 3];
            e[g] = 10.0;
            e[(g + 1) % 3] = 0.1 * i as f64;
            text.push_str(&format!("{}\n", serde_json::json!({"micro": t, "embedding": e})));
        }
    }
    let path = dir.join("micro.ndjson");
    std::fs::write(&path, text).unwrap();
    path
}
