use serde_json::{json, Value};

use super::{ChatMessage, ExternalConfig, OracleError};

pub(super) fn post_chat(cfg: &ExternalConfig, messages: &[ChatMessage]) -> Result<String, OracleError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout()))
        .build()
        .into();
    let body = json!({ "model": cfg.model, "messages": messages });
    let mut last = None;
    for _ in 0..=cfg.retries {
        let mut req = agent.post(&cfg.endpoint);
        if let (Some(h), Some(k)) = (&cfg.key_header, &cfg.key) {
            req = req.header(h.as_str(), k.as_str());
        }
        match req.send_json(&body) {
            Ok(mut resp) => {
                let v: Value = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| OracleError::Response(e.to_string()))?;
                return extract(&v, &cfg.response_path);
            }
            Err(e) => last = Some(e.to_string()),
        }
    }
    Err(OracleError::Transport(last.unwrap_or_default()))
}

/// Follows a dotted path such as `choices.0.message.content`.
pub(super) fn extract(v: &Value, path: &str) -> Result<String, OracleError> {
    let mut cur = v;
    for seg in path.split('.').filter(|s| !s.is_empty()) {
        cur = match seg.parse::<usize>() {
            Ok(i) => cur.get(i),
            Err(_) => cur.get(seg),
        }
        .ok_or_else(|| OracleError::Response(format!("missing `{seg}` in response")))?;
    }
    match cur {
        Value::String(s) => Ok(s.clone()),
        other => Err(OracleError::Response(format!("reply is not text: {other}"))),
    }
}
