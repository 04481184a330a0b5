mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Stdio};
use std::time::{Duration, Instant};

use common::*;
use serde_json::{json, Value};

struct Server {
    child: Child,
    port: u16,
}

impl Server {
    fn start(extra: &[&str]) -> Self {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let child = cherrypick()
            .args(["serve", "--port", &port.to_string()])
            .args(extra)
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let server = Self { child, port };
        let deadline = Instant::now() + Duration::from_secs(20);
        while Instant::now() < deadline {
            if let Ok((200, body)) = server.try_request("GET", "/healthz", None) {
                assert_eq!(body, "ok");
                return server;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        panic!("server did not come up on port {port}");
    }

    fn try_request(&self, method: &str, path: &str, body: Option<&str>) -> std::io::Result<(u16, String)> {
        let mut stream = TcpStream::connect(("127.0.0.1", self.port))?;
        let body = body.unwrap_or("");
        write!(
            stream,
            "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\
             Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
            body.len()
        )?;
        let mut raw = String::new();
        stream.read_to_string(&mut raw)?;
        let (head, payload) = raw.split_once("\r\n\r\n").unwrap_or((&raw, ""));
        let status = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        Ok((status, payload.to_string()))
    }

    fn request(&self, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
        self.try_request(method, path, body).unwrap()
    }

    fn create(&self, test: Value, alpha: f64) -> String {
        let text = std::fs::read_to_string(data("adverse_events.csv")).unwrap();
        let hyps: Vec<Value> = text
            .lines()
            .skip(1)
            .map(|l| {
                let (name, p) = l.split_once(',').unwrap();
                json!({"name": name, "p": p.parse::<f64>().unwrap()})
            })
            .collect();
        let body = json!({"hypotheses": hyps, "test": test, "alpha": alpha}).to_string();
        let (status, text) = self.request("POST", "/sessions", Some(&body));
        assert_eq!(status, 201, "{text}");
        serde_json::from_str::<Value>(&text).unwrap()["id"].as_str().unwrap().to_string()
    }

    fn terminate(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        assert!(std::process::Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                let mut lines = Vec::new();
                let stderr = self.child.stderr.take().unwrap();
                for line in BufReader::new(stderr).lines() {
                    lines.push(line.unwrap());
                }
                assert!(lines.iter().any(|l| l.starts_with("listening on")), "{lines:?}");
                return status;
            }
            assert!(Instant::now() < deadline, "server ignored SIGTERM");
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

#[test]
fn service_matches_cli_and_golden_files() {
    let server = Server::start(&[]);
    let fisher = server.create(json!({"kind": "fisher"}), 0.05);
    let simes = server.create(json!({"kind": "simes_family", "variant": "simes"}), 0.1);
    let input = adverse();
    let cases: [(&str, String, Vec<&str>); 5] = [
        (
            "bound_gastro.json",
            format!("/sessions/{fisher}/bound?set=Diarrhea,Nausea-and-vomiting,Stomatitis"),
            vec!["bound", &input, "--set", "Diarrhea,Nausea-and-vomiting,Stomatitis"],
        ),
        ("curve_fisher.json", format!("/sessions/{fisher}/curve"), vec!["curve", &input]),
        (
            "estimate_all.json",
            format!("/sessions/{fisher}/estimate?set=all"),
            vec!["estimate", &input, "--set", "all"],
        ),
        ("defining_fisher.json", format!("/sessions/{fisher}/defining"), vec!["defining", &input]),
        (
            "bound_simes_top5.json",
            format!("/sessions/{simes}/bound?set=top:5"),
            vec!["bound", &input, "--test", "simes", "--alpha", "0.1", "--set", "top:5"],
        ),
    ];
    for (file, path, args) in cases {
        let expected = golden(file);
        let (status, body) = server.request("GET", &path, None);
        assert_eq!(status, 200, "{path}: {body}");
        assert_eq!(body, expected, "service vs {file}");
        assert_eq!(stdout(&args), expected, "cli vs {file}");
    }
    let gastro: Value = serde_json::from_str(&golden("bound_gastro.json")).unwrap();
    assert_eq!(gastro["f_lower"], 1);
    assert_eq!(server.request("GET", &format!("/sessions/{fisher}/bound?set="), None).0, 400);
    assert_eq!(server.request("GET", "/sessions/nope/curve", None).0, 404);
    assert!(server.terminate().success());
}

#[test]
fn snapshots_land_in_the_configured_directory() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(&["--snapshot-dir", dir.path().to_str().unwrap()]);
    let id = server.create(json!({"kind": "fisher"}), 0.05);
    let (status, _) = server.request("POST", &format!("/sessions/{id}/snapshot"), Some("{}"));
    assert_eq!(status, 201);
    assert!(dir.path().join(format!("{id}.json")).exists());
    assert!(server.terminate().success());
}

#[test]
fn invalid_ports_are_rejected() {
    for port in ["0", "70000", "http"] {
        let out = run(&["serve", "--port", port]);
        assert_eq!(out.status.code(), Some(2), "port {port}");
    }
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = run(&["serve", "--port", &port]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}
