//! HTTP backends speaking the JSON wire protocol.
//!
//! An HTTP agent POSTs a [`WireAgentRequest`] to its endpoint and expects a
//! [`WireAgentResponse`] back; an HTTP judge POSTs a [`WireJudgeRequest`] and
//! expects a [`WireJudgeResponse`]. Transport failures are retried once with
//! a short backoff; HTTP error statuses and malformed bodies are not retried
//! (the server answered — retrying won't change its mind). All failures map
//! to [`Error::Backend`] so a debate can surface which endpoint misbehaved
//! and resume from the last completed round.

use std::time::Duration;

use serde::{de::DeserializeOwned, Serialize};

use crate::agents::{
    AgentAnchor, AgentBackend, AgentResponse, JudgeBackend, JudgeSubScores, WireAgentRequest,
    WireAgentResponse, WireJudgeRequest, WireJudgeResponse,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub id: String,
    pub endpoint: String,
    pub timeout: Duration,
    /// Pause before the single retry of a failed transport attempt.
    pub retry_backoff: Duration,
}

impl HttpBackendConfig {
    pub fn new(id: &str, endpoint: &str) -> Self {
        Self {
            id: id.into(),
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retry_backoff: Duration::from_millis(200),
        }
    }
}

fn build_client(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn post_json<Req: Serialize, Resp: DeserializeOwned>(
    client: &ureq::Agent,
    cfg: &HttpBackendConfig,
    request: &Req,
) -> Result<Resp> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.post(&cfg.endpoint).send_json(request) {
            Ok(mut response) => {
                return response.body_mut().read_json::<Resp>().map_err(|e| Error::Backend {
                    backend: cfg.id.clone(),
                    reason: format!("invalid response body from {}: {e}", cfg.endpoint),
                });
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(Error::Backend {
                    backend: cfg.id.clone(),
                    reason: format!("{} answered HTTP {code}", cfg.endpoint),
                });
            }
            Err(transport) if attempt == 1 => {
                // One retry for flaky connections; anything persistent is real.
                std::thread::sleep(cfg.retry_backoff);
                let _ = transport;
            }
            Err(transport) => {
                return Err(Error::Backend {
                    backend: cfg.id.clone(),
                    reason: format!("transport failure reaching {}: {transport}", cfg.endpoint),
                });
            }
        }
    }
}

pub struct HttpAgent {
    cfg: HttpBackendConfig,
    client: ureq::Agent,
}

impl HttpAgent {
    pub fn new(cfg: HttpBackendConfig) -> Self {
        let client = build_client(cfg.timeout);
        Self { cfg, client }
    }
}

impl AgentBackend for HttpAgent {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn respond(&self, anchor: &AgentAnchor) -> Result<AgentResponse> {
        let wire = WireAgentRequest::from_anchor(anchor);
        let response: WireAgentResponse = post_json(&self.client, &self.cfg, &wire)?;
        if response.probs.len() != anchor.space.size() {
            return Err(Error::Backend {
                backend: self.cfg.id.clone(),
                reason: format!(
                    "endpoint returned {} probabilities for a {}-label space",
                    response.probs.len(),
                    anchor.space.size()
                ),
            });
        }
        Ok(response)
    }
}

pub struct HttpJudge {
    cfg: HttpBackendConfig,
    client: ureq::Agent,
}

impl HttpJudge {
    pub fn new(cfg: HttpBackendConfig) -> Self {
        let client = build_client(cfg.timeout);
        Self { cfg, client }
    }
}

impl JudgeBackend for HttpJudge {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn score(&self, request: &WireJudgeRequest) -> Result<JudgeSubScores> {
        let response: WireJudgeResponse = post_json(&self.client, &self.cfg, request)?;
        for (axis, v) in [
            ("evidence", response.evidence),
            ("logic", response.logic),
            ("relevance", response.relevance),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Backend {
                    backend: self.cfg.id.clone(),
                    reason: format!("judge endpoint returned {axis} = {v}, outside [0, 1]"),
                });
            }
        }
        Ok(JudgeSubScores {
            evidence: response.evidence,
            logic: response.logic,
            relevance: response.relevance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{EvidenceSpan, OutcomeSpace, SpaceKind};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Minimal one-shot HTTP server: accepts `hits` connections, records each
    /// request body, and replies with the canned JSON (status 200 unless
    /// overridden). Good enough to exercise the client end of the protocol.
    fn spawn_server(
        hits: usize,
        status: u16,
        body: String,
    ) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for _ in 0..hits {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let request = loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(split) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        let head = String::from_utf8_lossy(&buf[..split]).to_string();
                        let content_length: usize = head
                            .lines()
                            .find_map(|l| {
                                let (k, v) = l.split_once(':')?;
                                k.eq_ignore_ascii_case("content-length")
                                    .then(|| v.trim().parse().ok())?
                            })
                            .unwrap_or(0);
                        let mut body_bytes = buf[split + 4..].to_vec();
                        while body_bytes.len() < content_length {
                            let n = stream.read(&mut chunk).unwrap();
                            body_bytes.extend_from_slice(&chunk[..n]);
                        }
                        break String::from_utf8_lossy(&body_bytes).to_string();
                    }
                };
                seen.push(request);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (format!("http://{addr}/"), handle)
    }

    fn anchor() -> AgentAnchor {
        AgentAnchor {
            round: 3,
            cl: 0.7,
            tau_q: 0.55,
            tau_crit: 0.35,
            stance: "assertive".into(),
            space: Arc::new(
                OutcomeSpace::new(vec!["x".into(), "y".into()], SpaceKind::Categorical).unwrap(),
            ),
            admitted_history: vec![],
            previous_beliefs: Default::default(),
            shared_mixture: None,
            budget_hint: 9_000,
        }
    }

    fn agent_reply() -> String {
        serde_json::to_string(&AgentResponse {
            probs: vec![0.6, 0.4],
            arguments: vec![],
            spans: vec![EvidenceSpan {
                id: "s1".into(),
                text: "t".into(),
                source: "src".into(),
            }],
            token_cost: 42,
            recommendations: String::new(),
        })
        .unwrap()
    }

    #[test]
    fn agent_round_trip_carries_the_anchor_fields() {
        let (url, server) = spawn_server(1, 200, agent_reply());
        let mut cfg = HttpBackendConfig::new("remote-a", &url);
        cfg.timeout = Duration::from_secs(5);
        let agent = HttpAgent::new(cfg);
        let response = agent.respond(&anchor()).unwrap();
        assert_eq!(response.probs, vec![0.6, 0.4]);
        assert_eq!(response.token_cost, 42);
        let seen = server.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
        assert_eq!(sent["round"], 3);
        assert_eq!(sent["cl"], 0.7);
        assert_eq!(sent["tau_q"], 0.55);
        assert_eq!(sent["outcome_labels"], serde_json::json!(["x", "y"]));
    }

    #[test]
    fn http_error_status_is_not_retried() {
        let (url, server) = spawn_server(1, 500, "{\"error\":\"boom\"}".into());
        let mut cfg = HttpBackendConfig::new("remote-a", &url);
        cfg.timeout = Duration::from_secs(5);
        let agent = HttpAgent::new(cfg);
        let err = agent.respond(&anchor()).unwrap_err();
        match err {
            Error::Backend { backend, reason } => {
                assert_eq!(backend, "remote-a");
                assert!(reason.contains("500"), "reason: {reason}");
            }
            other => panic!("expected backend error, got {other:?}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn wrong_cardinality_is_a_backend_error() {
        let body = serde_json::to_string(&AgentResponse {
            probs: vec![0.2, 0.3, 0.5],
            arguments: vec![],
            spans: vec![],
            token_cost: 1,
            recommendations: String::new(),
        })
        .unwrap();
        let (url, server) = spawn_server(1, 200, body);
        let mut cfg = HttpBackendConfig::new("remote-a", &url);
        cfg.timeout = Duration::from_secs(5);
        let agent = HttpAgent::new(cfg);
        let err = agent.respond(&anchor()).unwrap_err();
        assert!(matches!(err, Error::Backend { .. }), "got {err:?}");
        server.join().unwrap();
    }

    #[test]
    fn judge_round_trip_and_range_validation() {
        let ok = spawn_server(1, 200, "{\"evidence\":0.8,\"logic\":0.7,\"relevance\":0.9}".into());
        let mut cfg = HttpBackendConfig::new("remote-j", &ok.0);
        cfg.timeout = Duration::from_secs(5);
        let judge = HttpJudge::new(cfg);
        let req = WireJudgeRequest {
            argument_text: "claim".into(),
            span_texts: vec!["a".into(), "b".into()],
            masked_agent: "agent-2".into(),
        };
        let scores = judge.score(&req).unwrap();
        assert_eq!((scores.evidence, scores.logic, scores.relevance), (0.8, 0.7, 0.9));
        let seen = ok.1.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
        assert_eq!(sent["masked_agent"], "agent-2");

        let bad = spawn_server(1, 200, "{\"evidence\":1.2,\"logic\":0.7,\"relevance\":0.9}".into());
        let mut cfg = HttpBackendConfig::new("remote-j", &bad.0);
        cfg.timeout = Duration::from_secs(5);
        let judge = HttpJudge::new(cfg);
        let err = judge.score(&req).unwrap_err();
        assert!(matches!(err, Error::Backend { .. }));
        bad.1.join().unwrap();
    }

    #[test]
    fn transport_failure_retries_once_then_reports() {
        // Nothing listens on this port: connection refused twice, then error.
        let mut cfg = HttpBackendConfig::new("remote-a", "http://127.0.0.1:1/");
        cfg.timeout = Duration::from_millis(500);
        cfg.retry_backoff = Duration::from_millis(10);
        let agent = HttpAgent::new(cfg);
        let err = agent.respond(&anchor()).unwrap_err();
        match err {
            Error::Backend { reason, .. } => {
                assert!(reason.contains("transport failure"), "reason: {reason}")
            }
            other => panic!("expected backend error, got {other:?}"),
        }
    }

    /// Golden-corpus round trip: 50 structurally varied requests serialize,
    /// cross the wire, and deserialize to the same value on the far side.
    #[test]
    fn wire_corpus_round_trips_byte_for_byte() {
        for i in 0..50u32 {
            let req = WireAgentRequest {
                round: i + 1,
                cl: (i as f64 % 10.0) / 10.0,
                tau_q: 0.5 + (i as f64 % 5.0) / 12.0,
                tau_crit: 0.3,
                outcome_labels: (0..(2 + i % 4)).map(|k| format!("label-{k}")).collect(),
                admitted_history: vec![],
                budget_hint: 1000 + i as u64,
            };
            let json = serde_json::to_string(&req).unwrap();
            let back: WireAgentRequest = serde_json::from_str(&json).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), json, "case {i}");
        }
    }
}
