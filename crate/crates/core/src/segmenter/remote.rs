//! HTTP client for an external box-prompted segmentation service.
//!
//! `POST {endpoint}/v1/segment` with
//! `{"width", "height", "pixels_b64", "box": [x0, y0, x1, y1]}` where the pixels
//! are little-endian f32 in row-major order and the box is half-open. A 200
//! response carries `{"mask_b64", "confidence"}` with one byte (0 or 255) per
//! pixel. Error responses carry `{"error": string}`.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{SegmentRequest, SegmentResponse, SegmenterBackend};
use crate::error::{BackendErrorKind, Error, Result};
use crate::geometry::Mask2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Extra attempts after the first one for connect, timeout and 5xx failures.
    pub retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000".to_string(),
            timeout_ms: 30_000,
            retries: 2,
            backoff_ms: 200,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    width: usize,
    height: usize,
    pixels_b64: &'a str,
    #[serde(rename = "box")]
    bbox: [usize; 4],
}

#[derive(Deserialize)]
struct WireResponse {
    mask_b64: String,
    confidence: Option<f64>,
}

#[derive(Deserialize)]
struct WireError {
    error: String,
}

/// Health report of the service.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HealthInfo {
    pub status: String,
    pub model: String,
}

/// JSON request body for `req`.
pub fn encode_request(req: &SegmentRequest<'_>) -> String {
    let mut raw = Vec::with_capacity(req.image.pixels().len() * 4);
    for &v in req.image.pixels() {
        raw.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let pixels_b64 = B64.encode(raw);
    let b = req.bbox;
    serde_json::to_string(&WireRequest {
        width: req.image.width(),
        height: req.image.height(),
        pixels_b64: &pixels_b64,
        bbox: [b.x0, b.y0, b.x1, b.y1],
    })
    .expect("request serializes")
}

/// Parse a 200 response body for a `width x height` request.
pub fn decode_response(body: &str, width: usize, height: usize) -> Result<SegmentResponse> {
    let protocol = |m: String| Error::backend(BackendErrorKind::Protocol, m);
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| protocol(format!("malformed response: {e}")))?;
    let bytes = B64
        .decode(wire.mask_b64.as_bytes())
        .map_err(|e| protocol(format!("mask is not valid base64: {e}")))?;
    if bytes.len() != width * height {
        return Err(protocol(format!(
            "mask holds {} bytes, expected {}",
            bytes.len(),
            width * height
        )));
    }
    let confidence = match wire.confidence {
        None => 1.0,
        Some(c) if c.is_finite() => c.clamp(0.0, 1.0),
        Some(c) => return Err(protocol(format!("non-finite confidence {c}"))),
    };
    let mask = Mask2D::new(width, height, bytes.into_iter().map(|b| b != 0).collect())?;
    Ok(SegmentResponse { mask, confidence })
}

fn classify(err: ureq::Error) -> Error {
    use ureq::Error as E;
    let kind = match &err {
        E::Timeout(_) => BackendErrorKind::Timeout,
        E::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendErrorKind::Timeout,
        E::Io(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::ConnectionRefused
                    | std::io::ErrorKind::ConnectionReset
                    | std::io::ErrorKind::ConnectionAborted
                    | std::io::ErrorKind::NotConnected
                    | std::io::ErrorKind::AddrNotAvailable
            ) =>
        {
            BackendErrorKind::Connect
        }
        E::HostNotFound | E::ConnectionFailed | E::BadUri(_) => BackendErrorKind::Connect,
        E::StatusCode(code) if *code >= 500 => BackendErrorKind::Server,
        _ => BackendErrorKind::Protocol,
    };
    Error::backend(kind, err.to_string())
}

fn retryable(err: &Error) -> bool {
    matches!(
        err,
        Error::Backend {
            kind: BackendErrorKind::Connect | BackendErrorKind::Timeout | BackendErrorKind::Server,
            ..
        }
    )
}

/// Blocking client; safe to share across threads.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T>) -> Result<T> {
        let mut delay = self.config.backoff_ms;
        let mut tries_left = self.config.retries;
        loop {
            match attempt() {
                Err(e) if tries_left > 0 && retryable(&e) => {
                    tries_left -= 1;
                    std::thread::sleep(Duration::from_millis(delay));
                    delay = delay.saturating_mul(2);
                }
                other => return other,
            }
        }
    }

    fn read_body(resp: &mut ureq::http::Response<ureq::Body>) -> Result<String> {
        resp.body_mut().read_to_string().map_err(classify)
    }

    fn check_status(status: u16, body: &str) -> Result<()> {
        if status == 200 {
            return Ok(());
        }
        let detail = serde_json::from_str::<WireError>(body)
            .map(|e| e.error)
            .unwrap_or_else(|_| body.chars().take(200).collect());
        let kind = if status >= 500 {
            BackendErrorKind::Server
        } else {
            BackendErrorKind::Protocol
        };
        Err(Error::backend(kind, format!("HTTP {status}: {detail}")))
    }

    pub fn health(&self) -> Result<HealthInfo> {
        self.with_retries(|| {
            let mut resp = self.agent.get(self.url("/v1/health")).call().map_err(classify)?;
            let status = resp.status().as_u16();
            let body = Self::read_body(&mut resp)?;
            Self::check_status(status, &body)?;
            serde_json::from_str(&body).map_err(|e| {
                Error::backend(BackendErrorKind::Protocol, format!("malformed health response: {e}"))
            })
        })
    }
}

impl SegmenterBackend for RemoteBackend {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<SegmentResponse> {
        // Encoded once; every retry resends the same bytes.
        let body = encode_request(req);
        let url = self.url("/v1/segment");
        self.with_retries(|| {
            let mut resp = self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body.as_str())
                .map_err(classify)?;
            let status = resp.status().as_u16();
            let text = Self::read_body(&mut resp)?;
            Self::check_status(status, &text)?;
            decode_response(&text, req.image.width(), req.image.height())
        })
    }
}

/// `remote_segment(endpoint, req)`: one-shot call with default client settings.
pub fn remote_segment(endpoint: &str, req: &SegmentRequest<'_>) -> Result<SegmentResponse> {
    RemoteBackend::new(RemoteConfig {
        endpoint: endpoint.to_string(),
        ..Default::default()
    })
    .segment(req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, Image2D};

    #[test]
    fn request_encoding() {
        let img = Image2D::new(2, 1, vec![0.0, 1.0], 1.0).unwrap();
        let req = SegmentRequest::new(&img, BBox::new(0, 0, 2, 1).unwrap()).unwrap();
        let json: serde_json::Value = serde_json::from_str(&encode_request(&req)).unwrap();
        assert_eq!(json["width"], 2);
        assert_eq!(json["height"], 1);
        assert_eq!(json["box"], serde_json::json!([0, 0, 2, 1]));
        let raw = B64.decode(json["pixels_b64"].as_str().unwrap()).unwrap();
        assert_eq!(raw, [0u8, 0, 0, 0, 0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn response_decoding() {
        let body = format!(r#"{{"mask_b64":"{}","confidence":0.25}}"#, B64.encode([0u8, 255, 255, 0]));
        let resp = decode_response(&body, 2, 2).unwrap();
        assert_eq!(resp.mask.bits(), &[false, true, true, false]);
        assert_eq!(resp.confidence, 0.25);

        let no_conf = format!(r#"{{"mask_b64":"{}"}}"#, B64.encode([0u8; 4]));
        assert_eq!(decode_response(&no_conf, 2, 2).unwrap().confidence, 1.0);
    }

    #[test]
    fn response_errors_are_protocol() {
        for body in ["not json", r#"{"mask_b64":"@@"}"#, r#"{"mask_b64":"AAAA"}"#] {
            match decode_response(body, 2, 2) {
                Err(Error::Backend { kind, .. }) => assert_eq!(kind, BackendErrorKind::Protocol),
                other => panic!("expected protocol error, got {other:?}"),
            }
        }
    }
}
