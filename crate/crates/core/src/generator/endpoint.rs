use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

use super::{GenError, GenFailure, GenRequest, GenResult, Generator, SampleGen};
use crate::prompt::PromptBundle;
use crate::tasks::rng::CounterRng;
use crate::tasks::TaskSpec;

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "KBENCH_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
}

impl EndpointConfig {
    pub fn from_env(url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn from_prompt(model: &str, prompt: &PromptBundle, r: &GenRequest) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: prompt.system_message().to_string(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.user_message().to_string(),
                },
            ],
            temperature: r.temperature,
            top_p: r.top_p,
            max_tokens: r.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// Connection problems and 5xx/429 responses.
    Retryable(String),
    /// Anything retrying cannot fix (4xx, malformed body).
    Fatal(String),
}

impl TransportError {
    fn reason(&self) -> &str {
        match self {
            TransportError::Retryable(s) | TransportError::Fatal(s) => s,
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &EndpointConfig) -> Self {
        HttpTransport {
            url: endpoint.url.clone(),
            api_key: endpoint.api_key.clone(),
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<String, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut call = agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_value(req).map_err(|e| TransportError::Fatal(e.to_string()))?;
        let resp = match call.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if code >= 500 || code == 429 => {
                return Err(TransportError::Retryable(format!("http status {code}")))
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(TransportError::Fatal(format!("http status {code}")))
            }
            Err(ureq::Error::Transport(t)) => return Err(TransportError::Retryable(t.to_string())),
        };
        let value: serde_json::Value = resp
            .into_json()
            .map_err(|e| TransportError::Retryable(format!("reading body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Exponential backoff with bounded multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base_ms: f64,
    pub factor: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base_ms: 500.0,
            factor: 2.0,
            jitter: 0.2,
            seed: 0,
        }
    }
}

impl Backoff {
    /// Delay before retry number `attempt` (1-based) of `sample`.
    pub fn delay(&self, sample: usize, attempt: u32) -> Duration {
        let u = CounterRng::new(self.seed, sample as u64).unit(attempt as u64);
        let scale = 1.0 + self.jitter * (2.0 * u - 1.0);
        let ms = self.base_ms * self.factor.powi(attempt.saturating_sub(1) as i32) * scale;
        Duration::from_secs_f64(ms.max(0.0) / 1000.0)
    }
}

fn request_one(
    transport: &dyn ChatTransport,
    req: &ChatRequest,
    timeout: Duration,
    max_retries: u32,
    backoff: &Backoff,
    sleeper: &dyn Sleeper,
    sample: usize,
) -> SampleGen {
    let mut failures = Vec::new();
    let mut attempt = 0;
    while attempt <= max_retries {
        attempt += 1;
        match transport.complete(req, timeout) {
            Ok(text) => {
                return SampleGen {
                    output: Ok(text),
                    attempts: attempt,
                    failures,
                }
            }
            Err(e) => {
                tracing::warn!(sample, attempt, reason = e.reason(), "generation attempt failed");
                failures.push(GenFailure {
                    sample,
                    attempt,
                    reason: e.reason().to_string(),
                });
                if matches!(e, TransportError::Fatal(_)) {
                    break;
                }
                if attempt <= max_retries {
                    sleeper.sleep(backoff.delay(sample, attempt));
                }
            }
        }
    }
    let last = failures.last().map(|f| f.reason.clone()).unwrap_or_default();
    SampleGen {
        output: Err(GenError::EndpointExhausted {
            attempts: attempt,
            last,
        }),
        attempts: attempt,
        failures,
    }
}

/// Fan `r.n_samples` requests out over at most `max_in_flight` threads.
pub fn request_samples_with(
    r: &GenRequest,
    model: &str,
    transport: &dyn ChatTransport,
    sleeper: &dyn Sleeper,
    backoff: &Backoff,
    max_in_flight: usize,
) -> GenResult {
    let req = ChatRequest::from_prompt(model, &r.prompt, r);
    let timeout = Duration::from_millis(r.timeout_ms);
    let slots: Vec<Mutex<Option<SampleGen>>> = (0..r.n_samples).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..max_in_flight.clamp(1, r.n_samples.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= r.n_samples {
                    break;
                }
                let g = request_one(transport, &req, timeout, r.max_retries, backoff, sleeper, i);
                *slots[i].lock().unwrap() = Some(g);
            });
        }
    });

    let mut out = GenResult::default();
    for slot in slots {
        let g = slot.into_inner().unwrap().expect("every slot is filled");
        out.raw_outputs.push(g.output.ok());
        out.attempts.push(g.attempts);
        out.failures.extend(g.failures);
    }
    out
}

pub fn request_samples(r: &GenRequest, endpoint: &EndpointConfig) -> GenResult {
    let transport = HttpTransport::new(endpoint);
    request_samples_with(r, &endpoint.model, &transport, &ThreadSleeper, &Backoff::default(), 4)
}

/// Sampling parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

pub struct EndpointGenerator {
    pub model: String,
    pub params: SamplingParams,
    pub transport: Box<dyn ChatTransport>,
    pub sleeper: Box<dyn Sleeper>,
    pub backoff: Backoff,
}

impl EndpointGenerator {
    pub fn http(endpoint: &EndpointConfig, params: SamplingParams, seed: u64) -> Self {
        EndpointGenerator {
            model: endpoint.model.clone(),
            params,
            transport: Box::new(HttpTransport::new(endpoint)),
            sleeper: Box::new(ThreadSleeper),
            backoff: Backoff {
                seed,
                ..Backoff::default()
            },
        }
    }
}

impl Generator for EndpointGenerator {
    fn generate(&self, _task: &TaskSpec, prompt: &PromptBundle, sample_index: usize) -> SampleGen {
        let r = GenRequest {
            prompt: prompt.clone(),
            n_samples: 1,
            temperature: self.params.temperature,
            top_p: self.params.top_p,
            max_tokens: self.params.max_tokens,
            timeout_ms: self.params.timeout_ms,
            max_retries: self.params.max_retries,
        };
        let req = ChatRequest::from_prompt(&self.model, prompt, &r);
        request_one(
            self.transport.as_ref(),
            &req,
            Duration::from_millis(r.timeout_ms),
            r.max_retries,
            &self.backoff,
            self.sleeper.as_ref(),
            sample_index,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    struct RecordingSleeper(Mutex<Vec<Duration>>);

    impl Sleeper for RecordingSleeper {
        fn sleep(&self, d: Duration) {
            self.0.lock().unwrap().push(d);
        }
    }

    /// Serves canned (status, body) responses, one per connection, cycling
    /// the last entry once the list runs out.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                let i = counter.fetch_add(1, Ordering::SeqCst);
                let (status, text) = responses[i.min(responses.len() - 1)].clone();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (url, hits)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
            .to_string()
    }

    fn request(n: usize, max_retries: u32) -> GenRequest {
        GenRequest {
            prompt: PromptBundle {
                instructions: "sys".into(),
                api_description: String::new(),
                host_template: String::new(),
                kernel_template: String::new(),
                tiling_header_template: None,
                eval_path: crate::tasks::EvalPath::DeviceOnly,
                rendered: "sys\n\nuser".into(),
            },
            n_samples: n,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 64,
            timeout_ms: 2000,
            max_retries,
        }
    }

    fn run(url: &str, n: usize, retries: u32, sleeper: &RecordingSleeper) -> GenResult {
        let endpoint = EndpointConfig {
            url: url.into(),
            model: "m".into(),
            api_key: Some("k".into()),
        };
        let t = HttpTransport::new(&endpoint);
        request_samples_with(&request(n, retries), "m", &t, sleeper, &Backoff::default(), 1)
    }

    #[test]
    fn three_identical_samples() {
        let (url, _) = serve(vec![(200, ok_body("B"))]);
        let s = RecordingSleeper(Mutex::new(vec![]));
        let r = run(&url, 3, 0, &s);
        assert_eq!(r.raw_outputs, vec![Some("B".to_string()); 3]);
        assert_eq!(r.attempts, vec![1, 1, 1]);
    }

    #[test]
    fn two_failures_then_success() {
        let (url, hits) = serve(vec![
            (500, "{}".into()),
            (503, "{}".into()),
            (200, ok_body("ok")),
        ]);
        let s = RecordingSleeper(Mutex::new(vec![]));
        let r = run(&url, 1, 2, &s);
        assert_eq!(r.raw_outputs, vec![Some("ok".to_string())]);
        assert_eq!(r.attempts, vec![3]);
        assert_eq!(r.failures.len(), 2);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        let delays = s.0.lock().unwrap().clone();
        assert_eq!(delays.len(), 2);
        assert!((400..=600).contains(&delays[0].as_millis()));
        assert!((800..=1200).contains(&delays[1].as_millis()));
    }

    #[test]
    fn exhausted_samples_are_recorded() {
        let (url, _) = serve(vec![(500, "{}".into())]);
        let s = RecordingSleeper(Mutex::new(vec![]));
        let r = run(&url, 3, 1, &s);
        assert_eq!(r.raw_outputs, vec![None, None, None]);
        assert_eq!(r.attempts, vec![2, 2, 2]);
        assert_eq!(r.failures.iter().map(|f| f.sample).collect::<Vec<_>>(), vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = serve(vec![(400, "{}".into())]);
        let s = RecordingSleeper(Mutex::new(vec![]));
        let r = run(&url, 1, 3, &s);
        assert_eq!(r.attempts, vec![1]);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_stays_within_jitter_band() {
        let b = Backoff::default();
        for sample in 0..20 {
            for attempt in 1..5u32 {
                let nominal = 500.0 * 2f64.powi(attempt as i32 - 1);
                let d = b.delay(sample, attempt).as_secs_f64() * 1000.0;
                assert!(d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9);
            }
        }
    }
}
