use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{check_strength, Editor};
use crate::embedding::Ratio;
use crate::error::{Error, Result};
use crate::image::Image;

/// Classifier-free guidance scale forwarded to the service (7.5 scaled by 1.5).
pub const DEFAULT_GUIDANCE: f64 = 7.5 * 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEditorConfig {
    /// Base URL; requests go to `<endpoint>/edit`.
    pub endpoint: String,
    pub timeout_secs: f64,
    /// Attempts per edit before the subtask is aborted.
    pub max_attempts: u32,
    pub guidance: f64,
    pub seed: u64,
}

impl Default for RemoteEditorConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:7860".into(),
            timeout_secs: 30.0,
            max_attempts: 3,
            guidance: DEFAULT_GUIDANCE,
            seed: 0,
        }
    }
}

#[derive(Serialize)]
struct EditRequest<'a> {
    image: &'a str,
    r: f64,
    strength: f64,
    guidance: f64,
    seed: u64,
    view_id: usize,
}

#[derive(Deserialize)]
struct EditResponse {
    image: String,
}

/// Client for an external editing service speaking the `POST /edit` JSON protocol.
pub struct RemoteEditor {
    config: RemoteEditorConfig,
    agent: ureq::Agent,
    url: String,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteEditor {
    pub fn new(config: RemoteEditorConfig) -> Result<Self> {
        if config.max_attempts == 0 {
            return Err(Error::Invalid("remote editor needs max_attempts >= 1".into()));
        }
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(Error::Invalid(format!("invalid timeout {}", config.timeout_secs)));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/edit", config.endpoint.trim_end_matches('/'));
        Ok(Self { config, agent, url })
    }

    pub fn config(&self) -> &RemoteEditorConfig {
        &self.config
    }

    fn attempt(&self, body: &str, expected: (usize, usize)) -> std::result::Result<Image, Attempt> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Retry(format!("status {status}: {}", text.trim())));
        }
        let parsed: EditResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Retry(format!("malformed response: {e}")))?;
        let bytes = B64
            .decode(parsed.image.as_bytes())
            .map_err(|e| Attempt::Retry(format!("malformed base64: {e}")))?;
        let img = Image::from_png(&bytes).map_err(|e| Attempt::Retry(format!("malformed png: {e}")))?;
        if img.resolution() != expected {
            return Err(Attempt::Fatal(Error::Transport {
                attempts: 1,
                message: format!("editor returned {:?}, expected {:?}", img.resolution(), expected),
            }));
        }
        Ok(img)
    }
}

impl Editor for RemoteEditor {
    fn edit(&self, input: &Image, view_id: usize, r: Ratio, strength: f64) -> Result<Image> {
        check_strength(strength)?;
        let encoded = B64.encode(input.to_png()?);
        let body = serde_json::to_string(&EditRequest {
            image: &encoded,
            r: r.get(),
            strength,
            guidance: self.config.guidance,
            seed: self.config.seed,
            view_id,
        })
        .map_err(|e| Error::Codec(e.to_string()))?;

        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(&body, input.resolution()) {
                Ok(img) => return Ok(img),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("edit view {view_id} attempt {attempt} failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(Error::SubtaskAbort(format!(
            "editor at {} failed {} consecutive attempts: {last}",
            self.url, self.config.max_attempts
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::thread;

    fn read_request(stream: &mut TcpStream) -> String {
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let l = line.trim_end();
            if l.is_empty() {
                break;
            }
            if let Some((k, v)) = l.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        String::from_utf8(body).unwrap()
    }

    fn respond(stream: &mut TcpStream, body: &str) {
        let head = format!(
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
            body.len()
        );
        stream.write_all(head.as_bytes()).unwrap();
        stream.write_all(body.as_bytes()).unwrap();
    }

    /// Serves connections on a background thread with `handler(request_body) -> Option<response_body>`;
    /// `None` leaves the client hanging until it times out.
    fn serve(handler: impl Fn(&str) -> Option<String> + Send + 'static) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            let mut parked = Vec::new();
            for stream in listener.incoming() {
                let mut stream = stream.unwrap();
                let body = read_request(&mut stream);
                counter.fetch_add(1, Ordering::SeqCst);
                match handler(&body) {
                    Some(resp) => respond(&mut stream, &resp),
                    None => parked.push(stream),
                }
            }
        });
        (format!("http://{addr}"), hits)
    }

    fn client(endpoint: String, timeout_secs: f64) -> RemoteEditor {
        RemoteEditor::new(RemoteEditorConfig {
            endpoint,
            timeout_secs,
            seed: 9,
            ..RemoteEditorConfig::default()
        })
        .unwrap()
    }

    fn gradient() -> Image {
        Image::from_fn(16, 12, |x, y| [x as f64 / 15.0, y as f64 / 11.0, 0.25])
    }

    #[test]
    fn echo_server_returns_input() {
        let (url, hits) = serve(|body| {
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            assert_eq!(v["guidance"].as_f64(), Some(DEFAULT_GUIDANCE));
            assert_eq!(v["seed"].as_u64(), Some(9));
            assert_eq!(v["view_id"].as_u64(), Some(5));
            assert_eq!(v["r"].as_f64(), Some(0.5));
            assert_eq!(v["strength"].as_f64(), Some(0.85));
            Some(serde_json::json!({ "image": v["image"] }).to_string())
        });
        let input = gradient();
        let out = client(url, 5.0).edit(&input, 5, Ratio::new(0.5).unwrap(), 0.85).unwrap();
        // 16-bit PNG transport quantizes to 1/65535.
        for (a, b) in out.data().iter().zip(input.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn wrong_resolution_is_a_transport_error() {
        let small = B64.encode(Image::new(8, 8, [0.0; 3]).to_png().unwrap());
        let (url, hits) = serve(move |_| Some(serde_json::json!({ "image": small }).to_string()));
        let err = client(url, 5.0).edit(&gradient(), 0, Ratio::ONE, 1.0).unwrap_err();
        assert!(matches!(err, Error::Transport { .. }), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn malformed_responses_are_retried_then_abort() {
        let (url, hits) = serve(|_| Some("{\"nope\": 1}".into()));
        let err = client(url, 5.0).edit(&gradient(), 0, Ratio::ONE, 1.0).unwrap_err();
        assert!(matches!(err, Error::SubtaskAbort(_)), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn three_timeouts_abort_the_subtask() {
        let (url, hits) = serve(|_| None);
        let err = client(url, 0.2).edit(&gradient(), 1, Ratio::ONE, 1.0).unwrap_err();
        assert!(matches!(err, Error::SubtaskAbort(_)), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transient_failure_recovers() {
        let n = AtomicUsize::new(0);
        let (url, _) = serve(move |body| {
            if n.fetch_add(1, Ordering::SeqCst) == 0 {
                return Some("garbage".into());
            }
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            Some(serde_json::json!({ "image": v["image"] }).to_string())
        });
        assert!(client(url, 5.0).edit(&gradient(), 0, Ratio::ONE, 1.0).is_ok());
    }
}
