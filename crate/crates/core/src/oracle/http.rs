//! Remote oracle over a minimal JSON protocol.
//!
//! `POST {endpoint}/predict` with
//! `{"shape":[H,W,C],"pixels_b64":"<base64 of little-endian f32, row-major>"}`,
//! answered by `{"label": <int>}`.

use super::{check_shape, Label, Oracle, OracleError};
use crate::transforms::{Image, Shape};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub shape: [usize; 3],
    pub pixels_b64: String,
}

impl PredictRequest {
    pub fn from_image(img: &Image) -> Self {
        Self {
            shape: img.shape().as_array(),
            pixels_b64: B64.encode(img.pixel_bytes()),
        }
    }

    /// Decodes the payload back into an image (used by servers and tests).
    pub fn to_image(&self) -> Result<Image, OracleError> {
        let bytes = B64
            .decode(&self.pixels_b64)
            .map_err(|e| OracleError::Protocol(format!("pixels_b64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(OracleError::Protocol("pixel payload is not a whole number of f32".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let [h, w, c] = self.shape;
        Image::new(Shape::new(h, w, c), data).map_err(|e| OracleError::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpOracleConfig {
    /// Base URL; requests go to `{endpoint}/predict`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    pub retry_backoff: Duration,
    pub max_in_flight: usize,
    pub input_shape: Option<Shape>,
    pub num_classes: Option<usize>,
}

impl HttpOracleConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            retry_backoff: Duration::from_millis(200),
            max_in_flight: 8,
            input_shape: None,
            num_classes: None,
        }
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpOracle {
    agent: ureq::Agent,
    url: String,
    config: HttpOracleConfig,
    gate: Gate,
    requests: AtomicU64,
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self, OracleError> {
        if config.max_in_flight == 0 {
            return Err(OracleError::Config("max_in_flight must be >= 1".into()));
        }
        if !(config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
            return Err(OracleError::Config(format!("endpoint `{}` is not an http(s) URL", config.endpoint)));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let url = format!("{}/predict", config.endpoint.trim_end_matches('/'));
        Ok(Self {
            agent,
            url,
            gate: Gate {
                free: Mutex::new(config.max_in_flight),
                cv: Condvar::new(),
            },
            config,
            requests: AtomicU64::new(0),
        })
    }

    /// HTTP requests sent, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn attempt(&self, body: &str) -> Result<usize, String> {
        let _slot = self.gate.acquire();
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        let parsed: PredictResponse =
            serde_json::from_str(&text).map_err(|e| format!("bad response body `{text}`: {e}"))?;
        Ok(parsed.label)
    }
}

impl Oracle for HttpOracle {
    fn top1(&self, img: &Image) -> Result<Label, OracleError> {
        check_shape(self.config.input_shape, img)?;
        let body = serde_json::to_string(&PredictRequest::from_image(img)).expect("request serializes");
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry_backoff * attempt);
            }
            match self.attempt(&body) {
                Ok(label) => {
                    if let Some(k) = self.config.num_classes {
                        if label >= k {
                            return Err(OracleError::LabelOutOfRange { label, num_classes: k });
                        }
                    }
                    return Ok(Label(label));
                }
                Err(e) => {
                    log::warn!("query attempt {} of {attempts} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(OracleError::RetriesExhausted { attempts, message: last })
    }

    fn input_shape(&self) -> Option<Shape> {
        self.config.input_shape
    }

    fn num_classes(&self) -> Option<usize> {
        self.config.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let img = Image::new(Shape::new(1, 2, 1), vec![0.5, 1.0]).unwrap();
        let req = PredictRequest::from_image(&img);
        let json = serde_json::to_string(&req).unwrap();
        let mut raw = Vec::new();
        raw.extend_from_slice(&0.5f32.to_le_bytes());
        raw.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(json, format!(r#"{{"shape":[1,2,1],"pixels_b64":"{}"}}"#, B64.encode(raw)));
        assert_eq!(req.to_image().unwrap(), img);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = HttpOracleConfig::new("ftp://x");
        assert!(HttpOracle::new(c.clone()).is_err());
        c.endpoint = "http://127.0.0.1:1".into();
        c.max_in_flight = 0;
        assert!(HttpOracle::new(c).is_err());
    }
}
