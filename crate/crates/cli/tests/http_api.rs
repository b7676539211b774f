//! The control API against a live run.

mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::{Duration, Instant};

use proedit_cli::commands::{PreparedRun, RunOptions};
use proedit_cli::server;
use proedit_cli::RunConfig;
use serde_json::{json, Value};

struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    fn new(addr: std::net::SocketAddr) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base: format!("http://{addr}"),
        }
    }

    fn get(&self, path: &str) -> (u16, Vec<u8>) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_vec().unwrap())
    }

    fn get_json(&self, path: &str) -> Value {
        let (code, body) = self.get(path);
        assert_eq!(code, 200, "{path}: {}", String::from_utf8_lossy(&body));
        serde_json::from_slice(&body).unwrap()
    }

    fn post(&self, path: &str, body: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        let code = r.status().as_u16();
        let text = r.body_mut().read_to_string().unwrap();
        (code, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }
}

fn wait_for(what: &str, mut f: impl FnMut() -> bool) {
    let start = Instant::now();
    while !f() {
        assert!(start.elapsed() < Duration::from_secs(120), "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn config(dir: &Path) -> RunConfig {
    // Stages never converge on their own; the test drives them with skip_stage.
    let text = common::small_config(&dir.join("run"), "threshold = 0.5", 1_000_000);
    RunConfig::from_toml(&text, Path::new("run.toml")).unwrap()
}

#[test]
fn control_api_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let prepared = PreparedRun::new(&cfg, &RunOptions::default()).unwrap();
    let srv = server::spawn("127.0.0.1:0", prepared.app_state()).unwrap();
    let c = Client::new(srv.addr());

    // A subscriber attached before the run starts sees every event live.
    let live = {
        let agent = c.agent.clone();
        let url = format!("{}/api/events", c.base);
        std::thread::spawn(move || {
            let mut r = agent.get(url).call().unwrap();
            assert_eq!(r.status().as_u16(), 200);
            BufReader::new(r.body_mut().as_reader())
                .lines()
                .map(|l| serde_json::from_str::<Value>(&l.unwrap()).unwrap())
                .collect::<Vec<_>>()
        })
    };

    let run = std::thread::spawn(move || prepared.execute());

    let status = c.get_json("/api/status");
    for key in ["mode", "stage_index", "ratio", "iteration", "loss_running_mean", "n_gaussians"] {
        assert!(status.get(key).is_some(), "status lacks {key}: {status}");
    }
    let schedule = c.get_json("/api/schedule");
    let ratios = schedule["ratios"].as_array().unwrap().len();
    assert_eq!(schedule["difficulties"].as_array().unwrap().len(), ratios - 1);
    assert_eq!(schedule["threshold"], json!(0.5));
    assert_eq!(schedule["flags"]["prepend_refine"], json!(true));

    // Malformed requests.
    assert_eq!(c.post("/api/control", "{not json").0, 400);
    assert_eq!(c.post("/api/control", r#"{"action":"explode"}"#).0, 400);
    assert_eq!(c.post("/api/control", r#"{"action":"stop_at"}"#).0, 400);
    assert_eq!(c.post("/api/schedule", r#"{"threshold":"high"}"#).0, 400);
    assert_eq!(c.post("/api/schedule", r#"{"threshold":-1}"#).0, 400);
    // Adjusting needs a paused run.
    assert_eq!(c.post("/api/schedule", r#"{"threshold":0.7}"#).0, 409);

    // Past warmup plus one interval, so at least one maintenance pass has run.
    wait_for("stage 0 to train", || c.get_json("/api/status")["iteration"].as_u64().unwrap() > 60);
    let (code, st) = c.post("/api/control", r#"{"action":"skip_stage"}"#);
    assert_eq!(code, 200, "{st}");
    wait_for("stage 1", || c.get_json("/api/status")["stage_index"] == json!(1));

    let (code, st) = c.post("/api/control", r#"{"action":"pause"}"#);
    assert_eq!(code, 200);
    assert_eq!(st["mode"], json!("paused"));
    assert_eq!(c.get_json("/api/status")["mode"], json!("paused"));

    let (code, adjusted) = c.post("/api/schedule", r#"{"threshold":100.0}"#);
    assert_eq!(code, 200, "{adjusted}");
    assert_eq!(adjusted["threshold"], json!(100.0));
    assert_eq!(c.get_json("/api/schedule"), adjusted);
    let new_ratios = adjusted["ratios"].as_array().unwrap().len();
    assert!(new_ratios <= ratios);

    let stages = c.get_json("/api/status")["stage_count"].as_u64().unwrap();
    let (code, st) = c.post("/api/control", &format!(r#"{{"action":"stop_at","stage":{}}}"#, stages - 1));
    assert_eq!(code, 200, "{st}");
    assert_eq!(c.post("/api/control", r#"{"action":"resume"}"#).0, 200);

    while !run.is_finished() {
        let (code, _) = c.post("/api/control", r#"{"action":"skip_stage"}"#);
        if code != 200 {
            break;
        }
        std::thread::sleep(Duration::from_millis(30));
    }
    let outcome = run.join().unwrap().unwrap();
    assert_eq!(outcome.snapshots.len() as u64, stages);

    let snaps = c.get_json("/api/snapshots");
    let snaps = snaps.as_array().unwrap();
    assert_eq!(snaps.len() as u64, stages);
    assert!(snaps[0]["metrics"]["n_gaussians"].as_u64().unwrap() > 0);

    let (code, png) = c.get("/api/render?snapshot=0&view=1");
    assert_eq!(code, 200);
    assert_eq!(&png[..4], b"\x89PNG");
    assert_eq!(c.get("/api/render?snapshot=0&view=99").0, 404);
    assert_eq!(c.get(&format!("/api/render?snapshot={}&view=0", stages + 5)).0, 404);
    assert_eq!(c.get("/api/render?snapshot=x&view=0").0, 400);

    let mut r = c.agent.get(format!("{}/api/events", c.base)).call().unwrap();
    let kinds: Vec<String> = BufReader::new(r.body_mut().as_reader())
        .lines()
        .map(|l| serde_json::from_str::<Value>(&l.unwrap()).unwrap()["type"].as_str().unwrap().to_string())
        .collect();
    for k in ["stage_started", "maintenance", "converged", "snapshot_written", "schedule_adjusted"] {
        assert!(kinds.iter().any(|x| x == k), "no {k} event in {kinds:?}");
    }
    assert_eq!(kinds.last().map(String::as_str), Some("finished"));
    let live = live.join().unwrap();
    assert_eq!(live.len(), kinds.len());
    assert_eq!(live[0]["type"], json!("stage_started"));

    assert_eq!(c.post("/api/control", r#"{"action":"pause"}"#).0, 409);
    srv.shutdown();
}
