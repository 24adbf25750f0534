//! HTTP client for a variation service and the JSON wire types it speaks.
//!
//! `POST /v1/variation` takes `{image, t, seed, latent}` where `image` is a
//! base64 `TNSR` blob, and answers `{image}` or `400 {error}`.
//! `GET /v1/health` answers `{status: "ok", T}`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::VariationEndpoint;
use crate::error::{RemoteError, VariationError};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationRequest {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub latent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationResponse {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(rename = "T")]
    pub steps: usize,
}

pub fn encode_image(x: &ImageTensor) -> String {
    STANDARD.encode(x.to_tnsr_bytes())
}

pub fn decode_image(text: &str) -> Result<ImageTensor, String> {
    let bytes = STANDARD.decode(text).map_err(|e| format!("bad base64: {e}"))?;
    ImageTensor::from_tnsr_bytes(&bytes).map_err(|e| e.to_string())
}

/// Caps the number of requests in flight from one client.
#[derive(Debug)]
struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut active = self.active.lock().expect("gate lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("gate lock");
        }
        *active += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a InFlightGate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().expect("gate lock");
        *active -= 1;
        self.gate.freed.notify_one();
    }
}

/// Variation API reached over HTTP.
#[derive(Debug)]
pub struct RemoteVariation {
    base_url: String,
    client: reqwest::blocking::Client,
    timeout_ms: u64,
    latent: bool,
    gate: InFlightGate,
}

impl RemoteVariation {
    pub fn new(base_url: &str, timeout_ms: u64) -> Result<Self, RemoteError> {
        let base_url = base_url.trim_end_matches('/').to_string();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(RemoteError::Url(base_url));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .connect_timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| RemoteError::Connect(e.to_string()))?;
        Ok(Self {
            base_url,
            client,
            timeout_ms,
            latent: false,
            gate: InFlightGate::new(8),
        })
    }

    /// Ask the service for its latent-space variation.
    pub fn latent(mut self, latent: bool) -> Self {
        self.latent = latent;
        self
    }

    pub fn max_in_flight(mut self, limit: usize) -> Self {
        self.gate = InFlightGate::new(limit);
        self
    }

    fn classify(&self, err: reqwest::Error) -> RemoteError {
        if err.is_timeout() {
            RemoteError::Timeout(self.timeout_ms)
        } else if err.is_connect() {
            RemoteError::Connect(err.to_string())
        } else if err.is_decode() {
            RemoteError::Malformed(err.to_string())
        } else {
            RemoteError::Connect(err.to_string())
        }
    }

    pub fn health(&self) -> Result<HealthResponse, RemoteError> {
        let _guard = self.gate.enter();
        let resp = self
            .client
            .get(format!("{}/v1/health", self.base_url))
            .send()
            .map_err(|e| self.classify(e))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| self.classify(e))?;
        if !status.is_success() {
            return Err(RemoteError::Status {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| RemoteError::Malformed(e.to_string()))
    }

    /// One variation call; `t` and `seed` may be left to the service defaults.
    pub fn request(
        &self,
        x: &ImageTensor,
        t: Option<usize>,
        seed: Option<u64>,
    ) -> Result<ImageTensor, RemoteError> {
        let body = VariationRequest {
            image: encode_image(x),
            t,
            seed,
            latent: self.latent,
        };
        let _guard = self.gate.enter();
        let resp = self
            .client
            .post(format!("{}/v1/variation", self.base_url))
            .json(&body)
            .send()
            .map_err(|e| self.classify(e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| self.classify(e))?;
        if status.as_u16() == 400 {
            let msg = serde_json::from_str::<ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(RemoteError::Rejected(msg));
        }
        if !status.is_success() {
            return Err(RemoteError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: VariationResponse =
            serde_json::from_str(&text).map_err(|e| RemoteError::Malformed(e.to_string()))?;
        let image = decode_image(&parsed.image).map_err(RemoteError::Malformed)?;
        if image.shape() != x.shape() {
            return Err(RemoteError::Malformed(format!(
                "response shape {:?} differs from request shape {:?}",
                image.shape(),
                x.shape()
            )));
        }
        Ok(image)
    }
}

impl VariationEndpoint for RemoteVariation {
    fn vary(&self, x: &ImageTensor, t: usize, seed: u64) -> Result<ImageTensor, VariationError> {
        Ok(self.request(x, Some(t), Some(seed))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread;

    #[test]
    fn wire_image_roundtrip() {
        let x = ImageTensor::new(vec![1, 2, 2], vec![0.0, 0.25, 1.0 / 3.0, 1.0]).unwrap();
        assert_eq!(decode_image(&encode_image(&x)).unwrap(), x);
        assert!(decode_image("not base64!").is_err());
    }

    #[test]
    fn request_omits_unset_fields() {
        let req = VariationRequest {
            image: "AAAA".into(),
            t: None,
            seed: None,
            latent: false,
        };
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(json, serde_json::json!({"image": "AAAA", "latent": false}));
        let parsed: VariationRequest = serde_json::from_str(r#"{"image":"AAAA"}"#).unwrap();
        assert!(!parsed.latent);
    }

    #[test]
    fn refused_connection_is_an_error() {
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let client = RemoteVariation::new(&format!("http://127.0.0.1:{port}"), 500).unwrap();
        let err = client.vary(&ImageTensor::zeros(&[2]), 1, 0).unwrap_err();
        assert!(matches!(
            err,
            VariationError::Remote(RemoteError::Connect(_) | RemoteError::Timeout(_))
        ));
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = [0u8; 1024];
            let _ = sock.read(&mut buf);
            thread::sleep(Duration::from_millis(800));
            let _ = sock.write_all(b"");
        });
        let client = RemoteVariation::new(&format!("http://{addr}"), 200).unwrap();
        let err = client.vary(&ImageTensor::zeros(&[2]), 1, 0).unwrap_err();
        assert!(
            matches!(err, VariationError::Remote(RemoteError::Timeout(200))),
            "{err:?}"
        );
        handle.join().unwrap();
    }

    #[test]
    fn rejects_non_http_urls() {
        assert!(RemoteVariation::new("ftp://x", 10).is_err());
    }
}
