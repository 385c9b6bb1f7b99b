use std::fs;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use hiros_bus::{serve_bus, topics, Broker, BusClient};
use hiros_cli::messages::{ProbsMessage, GESTURE_PROBS};
use hiros_cli::services::{spawn_recognizer, RecognizerOptions};
use hiros_core::dataset::decode_frame;
use hiros_core::model::{GestureNet, ModelConfig};

fn hiros(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiros"))
        .args(args)
        .output()
        .expect("spawn hiros")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["fly"][..],
        &["gen-data", "--bogus"],
        &["gen-data", "--stage", "3", "--out", "x"],
        &["train"],
        &[],
    ] {
        let out = hiros(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = text(&out.stderr);
        assert!(err.contains("Usage") || err.contains("--help"), "{args:?}: {err}");
    }
    let help = hiros(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for sub in ["gen-data", "train", "eval", "serve-recognizer", "serve-robot", "serve-bus", "demo", "bench"] {
        assert!(text(&help.stdout).contains(sub), "{sub}");
    }
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.gnet");
    let out = hiros(&["eval", "--model", missing.to_str().unwrap(), "--manifest", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("error:"));

    let script = dir.path().join("bad.json");
    fs::write(&script, "{not json").unwrap();
    let out = hiros(&["demo", "--script", script.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("parsing"));
}

fn manifest_lines(dir: &Path) -> usize {
    fs::read_to_string(dir.join("manifest.jsonl")).unwrap().lines().count()
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let out = hiros(&[
        "gen-data", "--stage", "2", "--participants", "2", "--per-class", "2", "--classes", "0,1,25", "--seed", "3",
        "--out", d,
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).trim(), format!("wrote 12 clips to {d}"));
    assert_eq!(manifest_lines(&data), 12);
    assert_eq!(fs::read_dir(data.join("clips")).unwrap().count(), 12);

    // Same seed, same bytes.
    let again = dir.path().join("again");
    hiros(&[
        "gen-data", "--stage", "2", "--participants", "2", "--per-class", "2", "--classes", "0,1,25", "--seed", "3",
        "--out", again.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(data.join("clips/000007.gclp")).unwrap(),
        fs::read(again.join("clips/000007.gclp")).unwrap()
    );

    let model = dir.path().join("model.gnet");
    let m = model.to_str().unwrap();
    let out = hiros(&["train", "--manifest", d, "--folds", "2", "--epochs", "1", "--out", m]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("fold 1: ") && stdout.contains("fold 2: "), "{stdout}");
    let summary = stdout.lines().find(|l| l.starts_with("cross-validated accuracy: ")).unwrap();
    let cell = summary.split_whitespace().nth(2).unwrap();
    let (mean, sd) = cell.strip_suffix('%').unwrap().split_once('±').unwrap();
    assert!(mean.parse::<f64>().is_ok() && sd.parse::<f64>().is_ok(), "{summary}");
    assert!(model.exists());

    let report = dir.path().join("report");
    let out = hiros(&[
        "eval", "--model", m, "--manifest", d, "--folds", "2", "--prune-recall", "0.85", "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("samples: 12") && stdout.contains("pruned below recall 0.85"), "{stdout}");
    let csv = fs::read_to_string(report.join("confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 28);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(report.join("report.json")).unwrap()).unwrap();
    let acc = json["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(json["prune"]["removed"].as_array().unwrap().iter().all(|c| c != 25));

    let out = hiros(&[
        "eval", "--model", m, "--manifest", d, "--folds", "2", "--epochs", "1", "--sweep", "2,4",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    assert!(table.contains("stage1") && table.contains("stage2"), "{table}");
    let rows: Vec<&str> = table.lines().skip_while(|l| !l.trim_start().starts_with("size")).collect();
    assert_eq!(rows.len(), 3, "{table}");

    let out = hiros(&["eval", "--model", m, "--manifest", d, "--prune-recall", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_reports_a_rate() {
    let out = hiros(&["bench", "--windows", "3"]);
    assert!(out.status.success());
    let s = text(&out.stdout);
    assert!(s.contains("windows/s") && s.contains("target 30"), "{s}");
}

#[test]
fn inject_requests_become_camera_frames() {
    let server = serve_bus("127.0.0.1:0", Broker::default()).unwrap();
    let addr = server.addr();
    let net = GestureNet::build(ModelConfig::default()).unwrap();
    let opts = RecognizerOptions {
        inject_fps: 500.0,
        ..RecognizerOptions::default()
    };
    let service = spawn_recognizer(addr, net, opts).unwrap();
    let watch = BusClient::connect(addr).unwrap();
    watch.subscribe(topics::CAMERA_FRAMES).unwrap();
    watch.subscribe(GESTURE_PROBS).unwrap();
    let control = BusClient::connect(addr).unwrap();
    control.publish(topics::CAMERA_INJECT, br#"{"class_id": 3, "frames": 20}"#).unwrap();
    // Out-of-range and malformed requests are ignored.
    control.publish(topics::CAMERA_INJECT, br#"{"class_id": 99}"#).unwrap();
    control.publish(topics::CAMERA_INJECT, b"nonsense").unwrap();

    let expected = 20 + RecognizerOptions::default().inject_idle_frames;
    // 16-frame windows every 4 frames.
    let expected_windows = (expected - 16) / 4 + 1;
    let (mut frames, mut windows) = (0, Vec::new());
    let deadline = Instant::now() + Duration::from_secs(30);
    while (frames < expected || windows.len() < expected_windows) && Instant::now() < deadline {
        let Some(m) = watch.recv_timeout(Duration::from_millis(200)).unwrap() else {
            continue;
        };
        if m.topic == topics::CAMERA_FRAMES {
            let f = decode_frame(&m.payload).unwrap();
            assert_eq!((f.height, f.width, f.channels), (32, 32, 1));
            frames += 1;
        } else {
            let p: ProbsMessage = serde_json::from_slice(&m.payload).unwrap();
            assert_eq!(p.probs.len(), 27);
            windows.push(p.window);
        }
    }
    assert_eq!(frames, expected);
    assert_eq!(windows, (0..expected_windows as u64).collect::<Vec<_>>());
    thread::sleep(Duration::from_millis(300));
    assert!(watch.try_recv().unwrap().is_none(), "nothing else was played");
    service.stop().unwrap();
    server.shutdown();
}

/// Distinct free ports; the listeners stay open until all are chosen.
fn free_ports<const N: usize>() -> [u16; N] {
    let held: Vec<TcpListener> = (0..N).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    std::array::from_fn(|i| held[i].local_addr().unwrap().port())
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http_get(addr: SocketAddr, path: &str) -> String {
    // The bridge binds after the broker.
    let deadline = Instant::now() + Duration::from_secs(10);
    let mut s = loop {
        match TcpStream::connect(addr) {
            Ok(s) => break s,
            Err(e) if Instant::now() > deadline => panic!("{addr}: {e}"),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    };
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_bus_with_console_uses_env_ports() {
    let console = tempfile::tempdir().unwrap();
    fs::write(console.path().join("index.html"), "<h1>console</h1>").unwrap();
    let [bus_port, ws_port, spare] = free_ports();
    let child = Command::new(env!("CARGO_BIN_EXE_hiros"))
        .args(["serve-bus", "--with-console", "--console-dir"])
        .arg(console.path())
        .env("HIROS_BUS_PORT", bus_port.to_string())
        .env("HIROS_WS_PORT", ws_port.to_string())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let _guard = Killed(child);
    let bus: SocketAddr = ([127, 0, 0, 1], bus_port).into();
    let ws: SocketAddr = ([127, 0, 0, 1], ws_port).into();

    let a = BusClient::connect_retry(bus, Duration::from_secs(10)).unwrap();
    let b = BusClient::connect(bus).unwrap();
    a.subscribe("t").unwrap();
    b.publish("t", b"hello").unwrap();
    let m = a.recv_timeout(Duration::from_secs(5)).unwrap().unwrap();
    assert_eq!(m.payload, b"hello");

    let page = http_get(ws, "/");
    assert!(page.starts_with("HTTP/1.1 200"), "{page}");
    assert!(page.ends_with("<h1>console</h1>"));
    assert!(http_get(ws, "/missing.js").starts_with("HTTP/1.1 404"));

    let bad = hiros(&["serve-bus", "--port", &bus_port.to_string(), "--ws-port", &spare.to_string()]);
    assert_eq!(bad.status.code(), Some(1), "port already taken");
}
