//! Live HTTP backend speaking a completions-style endpoint.
//!
//! Request: `POST {model, prompt, temperature, max_tokens, stop}`.
//! Response: JSON carrying the generated text at `choices[0].text`.
//! The credential is read from the environment variable named in the config
//! at construction time and sent as a bearer token; it never appears in any
//! serialized structure.

use std::time::Duration;

use serde::Deserialize;
use ureq::Agent;

use super::{BackendConfig, BackendError, CompletionRequest, Transport};

pub(super) struct HttpTransport {
    agent: Agent,
    endpoint: String,
    model_id: String,
    auth_header: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CompletionJson {
    choices: Vec<ChoiceJson>,
}

#[derive(Debug, Deserialize)]
struct ChoiceJson {
    text: String,
}

impl HttpTransport {
    pub(super) fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = config.endpoint.clone().ok_or_else(|| {
            BackendError::InvalidConfig("http backend requires an endpoint URL".into())
        })?;
        let auth_header = match &config.auth_env {
            Some(var) => {
                let secret = std::env::var(var).map_err(|_| {
                    BackendError::AuthFailure(format!(
                        "credential environment variable {var} is not set"
                    ))
                })?;
                Some(format!("Bearer {secret}"))
            }
            None => None,
        };
        let agent_config = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build();
        Ok(Self {
            agent: Agent::new_with_config(agent_config),
            endpoint,
            model_id: config.model_id.clone(),
            auth_header,
        })
    }
}

impl Transport for HttpTransport {
    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model_id,
            "prompt": request.prompt_text,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop": request.stop_sequences,
        });
        let mut builder = self.agent.post(&self.endpoint);
        if let Some(auth) = &self.auth_header {
            builder = builder.header("authorization", auth);
        }
        let mut response = builder.send_json(&body).map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {
                let parsed: CompletionJson = response
                    .body_mut()
                    .read_json()
                    .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                let choice = parsed
                    .choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| BackendError::MalformedResponse("empty choices array".into()))?;
                Ok(choice.text)
            }
            401 | 403 => Err(BackendError::AuthFailure(format!("HTTP {status} from backend"))),
            429 => Err(BackendError::RateLimited { status }),
            _ => {
                let body = response.body_mut().read_to_string().unwrap_or_default();
                let body = body.chars().take(200).collect();
                Err(BackendError::Http { status, body })
            }
        }
    }
}

fn map_ureq_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}
