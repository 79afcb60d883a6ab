use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

use wagonline_core::fuse::FusedTrain;
use wagonline_core::grammar::{parse, CheckDigitScheme};
use wagonline_core::summary::{MosaicManifest, TrainSummary};

fn wagonline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wagonline")).args(args).env_remove("WAGONLINE_CONFIG").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_run_and_fuse() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    for side in ["left", "right"] {
        let out = wagonline(&[
            "simulate",
            "--wagons",
            "30",
            "--seed",
            "5",
            "--damage-rate",
            "0.2",
            "--side",
            side,
            "--out",
            path(&d(&format!("{side}.jsonl"))),
            "--truth",
            path(&d(&format!("{side}-truth.json"))),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut args = vec!["run", "--detections"];
        let det = d(&format!("{side}.jsonl"));
        let sum = d(&format!("{side}.json"));
        args.extend([path(&det), "--out", path(&sum)]);
        let mosaic = d("mosaic");
        if side == "left" {
            args.extend(["--mosaic", path(&mosaic)]);
        }
        let out = wagonline(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("30 wagons"));
    }
    let left: TrainSummary = serde_json::from_str(&std::fs::read_to_string(d("left.json")).unwrap()).unwrap();
    assert_eq!(left.validate(&CheckDigitScheme::default()), Ok(()));
    let manifest: MosaicManifest =
        serde_json::from_str(&std::fs::read_to_string(d("mosaic/mosaic.json")).unwrap()).unwrap();
    assert_eq!(manifest.cells.len(), 30);
    assert!(d("mosaic/mosaic.html").exists());

    let out = wagonline(&[
        "fuse",
        "--left",
        path(&d("left.json")),
        "--right",
        path(&d("right.json")),
        "--out",
        path(&d("fused.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fused: FusedTrain = serde_json::from_str(&std::fs::read_to_string(d("fused.json")).unwrap()).unwrap();
    assert_eq!(fused.wagons.len(), 30);
}

#[test]
fn run_reports_schema_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"v\":1,\"frame\":1,\"ts_ms\":0,\"camera\":\"c\",\"width\":1920,\"height\":1080,\"detections\":[]}\n\
         {\"v\":1,\"frame\":2,\"ts_ms\":33,\"camera\":\"c\",\"width\":1920,\"height\":1080,\"detections\":[{\"cls\":\"code_region\",\"x\":1,\"y\":1,\"w\":10,\"h\":10,\"conf\":1.2}]}\n",
    )
    .unwrap();
    let out = wagonline(&["run", "--detections", path(&bad), "--out", path(&dir.path().join("s.json"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("conf"), "{err}");
}

#[test]
fn checkdigit_exit_status() {
    assert_eq!(wagonline(&["checkdigit", "HFE-094063-1", "FHD-643258-1L"]).status.code(), Some(0));
    let out = wagonline(&["checkdigit", "HFE-094063-7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("expected 1"));
    assert_eq!(wagonline(&["checkdigit", "HFE-094063-7", "nonsense"]).status.code(), Some(1));
}

#[test]
fn shared_vector_file_matches_the_validator() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("vectors.jsonl");
    let out = wagonline(&["checkdigit", "--vectors", "10000", "--vectors-out", path(&file)]);
    assert!(out.status.success());
    let scheme = CheckDigitScheme::default();
    let (mut valid, mut invalid) = (0, 0);
    for line in std::fs::read_to_string(&file).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let code = v["code"].as_str().unwrap();
        let expected = parse(code).is_ok_and(|id| scheme.validate(&id).is_ok());
        assert_eq!(v["valid"].as_bool(), Some(expected), "{code}");
        if expected {
            valid += 1;
        } else {
            invalid += 1;
        }
    }
    assert_eq!(valid + invalid, 10_000);
    assert!(valid > 2000 && invalid > 5000, "{valid} valid, {invalid} invalid");
}

#[test]
fn bench_reports_records_per_second() {
    let out = wagonline(&["bench", "--wagons", "34", "--repeat", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let rate: f64 = text.split(", ").last().unwrap().trim().trim_end_matches(" records/s").parse().unwrap();
    assert!(rate >= 1000.0, "{text}");
}

#[test]
fn malformed_publish_endpoint_stops_startup() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("wagonline.toml");
    std::fs::write(&config, "publish_endpoint = \"gopher://x/y\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wagonline"))
        .args(["serve", "--port", "0", "--store", path(&dir.path().join("store"))])
        .env("WAGONLINE_CONFIG", &config)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("publish_endpoint"));
}

#[test]
fn report_to_a_dead_endpoint_queues() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("s.jsonl");
    let sum = dir.path().join("s.json");
    assert!(wagonline(&["simulate", "--wagons", "3", "--out", path(&sim)]).status.success());
    assert!(wagonline(&["run", "--detections", path(&sim), "--out", path(&sum)]).status.success());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let outbox = dir.path().join("outbox");
    let out = wagonline(&[
        "report",
        "--train",
        path(&sum),
        "--endpoint",
        &format!("http://127.0.0.1:{port}/hook"),
        "--outbox",
        path(&outbox),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(std::fs::read_dir(&outbox).unwrap().count(), 1);
}

#[test]
fn serve_prints_its_address_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_wagonline"))
        .args(["serve", "--port", "0", "--store", path(dir.path())])
        .env_remove("WAGONLINE_CONFIG")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();
    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /api/trains HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.ends_with("[]"), "{response}");
}
