//! Blocking chat-completions client.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

#[derive(Debug)]
pub(crate) enum RemoteError {
    /// Transport failure or retryable status, after all attempts.
    Unavailable(String),
    /// The endpoint answered, but not with a usable completion.
    Malformed(String),
}

pub(crate) struct RemoteReply {
    pub result: Result<String, RemoteError>,
    pub attempts: u32,
}

pub(crate) struct ChatClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: String,
    max_retries: u32,
    backoff: Duration,
}

impl ChatClient {
    pub fn new(
        endpoint: &str,
        model: &str,
        temperature: f64,
        api_key: String,
        timeout: Duration,
        max_retries: u32,
        backoff: Duration,
    ) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            agent,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            temperature,
            api_key,
            max_retries,
            backoff,
        }
    }

    /// One completion with exponential backoff between attempts.
    pub fn complete(&self, system: &str, user: &str) -> RemoteReply {
        let body = serde_json::to_string(&ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage { role: "system", content: system },
                ChatMessage { role: "user", content: user },
            ],
            temperature: self.temperature,
        })
        .expect("request serializes");

        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let response = self
                .agent
                .post(&self.endpoint)
                .set("Content-Type", "application/json")
                .set("Authorization", &format!("Bearer {}", self.api_key))
                .send_string(&body);
            match response {
                Ok(resp) => {
                    let result = resp
                        .into_string()
                        .map_err(|e| RemoteError::Malformed(e.to_string()))
                        .and_then(|text| extract_content(&text));
                    return RemoteReply {
                        result,
                        attempts: attempt + 1,
                    };
                }
                Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                    last_error = format!("HTTP {code}");
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let detail = resp.into_string().unwrap_or_default();
                    return RemoteReply {
                        result: Err(RemoteError::Unavailable(format!("HTTP {code}: {detail}"))),
                        attempts: attempt + 1,
                    };
                }
                Err(ureq::Error::Transport(t)) => last_error = t.to_string(),
            }
        }
        RemoteReply {
            result: Err(RemoteError::Unavailable(last_error)),
            attempts: self.max_retries + 1,
        }
    }
}

fn extract_content(text: &str) -> Result<String, RemoteError> {
    let parsed: ChatResponse = serde_json::from_str(text).map_err(|e| RemoteError::Malformed(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| RemoteError::Malformed("reply has no message content".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_first_choice() {
        let text = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"Final Answer: IDLE"}},{"message":{"content":"no"}}]}"#;
        assert_eq!(extract_content(text).unwrap(), "Final Answer: IDLE");
    }

    #[test]
    fn malformed_replies() {
        assert!(matches!(extract_content("not json"), Err(RemoteError::Malformed(_))));
        assert!(matches!(extract_content(r#"{"choices":[]}"#), Err(RemoteError::Malformed(_))));
        assert!(matches!(
            extract_content(r#"{"choices":[{"message":{"content":null}}]}"#),
            Err(RemoteError::Malformed(_))
        ));
    }

    #[test]
    fn request_wire_shape() {
        let body = serde_json::to_value(ChatRequest {
            model: "m",
            messages: vec![ChatMessage { role: "system", content: "s" }, ChatMessage { role: "user", content: "u" }],
            temperature: 0.0,
        })
        .unwrap();
        assert_eq!(
            body,
            serde_json::json!({"model":"m","messages":[{"role":"system","content":"s"},{"role":"user","content":"u"}],"temperature":0.0})
        );
    }
}
