//! Thin HTTP clients for the two hosted text-detection providers.
//!
//! `CloudA` speaks the Google Cloud Vision `images:annotate` protocol with an API
//! key; `CloudB` speaks AWS Rekognition `DetectText` with SigV4 request signing.
//! Each client adapts its provider's response into word-level [`TextDetection`]s.

use super::{split_line, BBox, BackendConfig, DetectRequest, OcrError, TextDetection, TextDetector};
use crate::imaging::encode_png;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Counting gate bounding concurrent provider calls.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a>(&'a InFlightLimit);

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard(self)
    }

    pub fn active(&self) -> usize {
        *self.active.lock().unwrap()
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

struct HttpClient {
    agent: ureq::Agent,
    limit: InFlightLimit,
    backoff: Duration,
}

struct HttpReply {
    status: u16,
    body: String,
}

impl HttpClient {
    fn new(cfg: &BackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, limit: InFlightLimit::new(cfg.max_in_flight), backoff: Duration::from_millis(cfg.retry_backoff_ms) }
    }

    /// Two attempts in total; only transport failures are retried.
    fn post(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Result<Value, OcrError> {
        let _slot = self.limit.acquire();
        let mut attempt = 0;
        let reply = loop {
            match self.post_once(url, headers, body) {
                Err(OcrError::Transport(msg)) if attempt == 0 => {
                    log::warn!("transport error calling {url}: {msg}; retrying");
                    std::thread::sleep(self.backoff);
                    attempt += 1;
                }
                other => break other?,
            }
        };
        match reply.status {
            200..=299 => serde_json::from_str(&reply.body).map_err(|e| OcrError::ProviderError {
                status: reply.status,
                body: format!("unparseable response: {e}"),
            }),
            401 | 403 => Err(OcrError::AuthFailure(format!("provider answered {}: {}", reply.status, reply.body))),
            status => Err(OcrError::ProviderError { status, body: reply.body }),
        }
    }

    fn post_once(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Result<HttpReply, OcrError> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send(body).map_err(|e| OcrError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| OcrError::Transport(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

fn read_credential(cfg: &BackendConfig) -> Result<String, OcrError> {
    let var = cfg.credential_env.as_deref().unwrap_or_default();
    match std::env::var(var) {
        Ok(v) if !v.trim().is_empty() => Ok(v.trim().to_string()),
        _ => Err(OcrError::AuthFailure(format!("credential variable {var} is not set"))),
    }
}

fn png_payload(req: &DetectRequest<'_>) -> Result<Vec<u8>, OcrError> {
    match req.encoded {
        Some(bytes) => Ok(bytes.to_vec()),
        None => Ok(encode_png(req.image)?),
    }
}

pub struct CloudA {
    cfg: BackendConfig,
    http: HttpClient,
}

impl CloudA {
    pub fn new(cfg: &BackendConfig) -> Result<Self, OcrError> {
        cfg.validate()?;
        Ok(Self { cfg: cfg.clone(), http: HttpClient::new(cfg) })
    }
}

impl TextDetector for CloudA {
    fn name(&self) -> &str {
        "clouda"
    }

    fn detect_raw(&self, req: &DetectRequest<'_>) -> Result<Vec<TextDetection>, OcrError> {
        let key = read_credential(&self.cfg)?;
        let content = base64::engine::general_purpose::STANDARD.encode(png_payload(req)?);
        let body = json!({
            "requests": [{
                "image": { "content": content },
                "features": [{ "type": "TEXT_DETECTION" }]
            }]
        });
        let endpoint = self.cfg.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
        let url = format!("{endpoint}/v1/images:annotate?key={key}");
        let headers = [("Content-Type".to_string(), "application/json".to_string())];
        let value = self.http.post(&url, &headers, body.to_string().as_bytes())?;
        parse_cloud_a(&value)
    }
}

/// `textAnnotations[0]` is the whole-image text; the rest are words. When only the
/// whole-image entry exists it is split per line and word.
pub fn parse_cloud_a(value: &Value) -> Result<Vec<TextDetection>, OcrError> {
    let first = &value["responses"][0];
    if let Some(err) = first.get("error") {
        return Err(OcrError::ProviderError {
            status: err["code"].as_u64().unwrap_or(200) as u16,
            body: err["message"].as_str().unwrap_or_default().to_string(),
        });
    }
    let Some(annotations) = first["textAnnotations"].as_array() else {
        return Ok(Vec::new());
    };
    let boxed = |a: &Value| {
        let verts = a["boundingPoly"]["vertices"].as_array().cloned().unwrap_or_default();
        let xs: Vec<f64> = verts.iter().map(|v| v["x"].as_f64().unwrap_or(0.0)).collect();
        let ys: Vec<f64> = verts.iter().map(|v| v["y"].as_f64().unwrap_or(0.0)).collect();
        let (x0, x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(0.0, f64::max));
        let (y0, y1) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(0.0, f64::max));
        if xs.is_empty() {
            BBox::new(0.0, 0.0, 1.0, 1.0)
        } else {
            BBox::new(x0, y0, (x1 - x0).max(1.0), (y1 - y0).max(1.0))
        }
    };
    let confidence = |a: &Value| a["confidence"].as_f64().or_else(|| a["score"].as_f64()).unwrap_or(1.0);
    if annotations.len() > 1 {
        return Ok(annotations[1..]
            .iter()
            .filter_map(|a| {
                let text = a["description"].as_str()?;
                Some(TextDetection::new(text, confidence(a), boxed(a)))
            })
            .collect());
    }
    let Some(whole) = annotations.first() else {
        return Ok(Vec::new());
    };
    let text = whole["description"].as_str().unwrap_or_default();
    let bbox = boxed(whole);
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let line_h = bbox.h / lines.len().max(1) as f64;
    Ok(lines
        .iter()
        .enumerate()
        .flat_map(|(i, line)| {
            let line_box = BBox::new(bbox.x, bbox.y + i as f64 * line_h, bbox.w, line_h);
            split_line(line, confidence(whole), line_box)
        })
        .collect())
}

pub struct CloudB {
    cfg: BackendConfig,
    http: HttpClient,
}

impl CloudB {
    pub fn new(cfg: &BackendConfig) -> Result<Self, OcrError> {
        cfg.validate()?;
        Ok(Self { cfg: cfg.clone(), http: HttpClient::new(cfg) })
    }

    fn region(&self) -> String {
        if let Some(r) = &self.cfg.region {
            return r.clone();
        }
        // rekognition.<region>.amazonaws.com
        let host = host_of(self.cfg.endpoint.as_deref().unwrap_or_default());
        host.split('.').nth(1).filter(|_| host.ends_with("amazonaws.com")).unwrap_or("us-east-1").to_string()
    }
}

const REKOGNITION_TARGET: &str = "RekognitionService.DetectText";
const AMZ_JSON: &str = "application/x-amz-json-1.1";

impl TextDetector for CloudB {
    fn name(&self) -> &str {
        "cloudb"
    }

    fn detect_raw(&self, req: &DetectRequest<'_>) -> Result<Vec<TextDetection>, OcrError> {
        let secret = read_credential(&self.cfg)?;
        let (access_key, secret_key) = secret
            .split_once(':')
            .ok_or_else(|| OcrError::AuthFailure("credential must be ACCESS_KEY_ID:SECRET_ACCESS_KEY".into()))?;
        let content = base64::engine::general_purpose::STANDARD.encode(png_payload(req)?);
        let body = json!({ "Image": { "Bytes": content } }).to_string();
        let endpoint = self.cfg.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
        let host = host_of(endpoint).to_string();
        let amz_date = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let auth = sigv4_authorization(&SigV4 {
            access_key,
            secret_key,
            region: &self.region(),
            service: "rekognition",
            host: &host,
            amz_date: &amz_date,
            target: REKOGNITION_TARGET,
            body: body.as_bytes(),
        });
        let headers = [
            ("Content-Type".to_string(), AMZ_JSON.to_string()),
            ("X-Amz-Date".to_string(), amz_date),
            ("X-Amz-Target".to_string(), REKOGNITION_TARGET.to_string()),
            ("Authorization".to_string(), auth),
        ];
        let value = self.http.post(&format!("{endpoint}/"), &headers, body.as_bytes())?;
        Ok(parse_cloud_b(&value, req.image.width(), req.image.height()))
    }
}

/// Prefers WORD entries; falls back to splitting LINE entries. Geometry is in
/// image-relative units and confidence in percent.
pub fn parse_cloud_b(value: &Value, width: u32, height: u32) -> Vec<TextDetection> {
    let entries = value["TextDetections"].as_array().cloned().unwrap_or_default();
    let to_det = |e: &Value| -> Option<(String, f64, BBox)> {
        let text = e["DetectedText"].as_str()?.to_string();
        let conf = e["Confidence"].as_f64().map(|c| c / 100.0).unwrap_or(1.0);
        let b = &e["Geometry"]["BoundingBox"];
        let bbox = BBox::new(
            b["Left"].as_f64().unwrap_or(0.0) * width as f64,
            b["Top"].as_f64().unwrap_or(0.0) * height as f64,
            b["Width"].as_f64().unwrap_or(1.0) * width as f64,
            b["Height"].as_f64().unwrap_or(1.0) * height as f64,
        );
        Some((text, conf, bbox))
    };
    let of_type = |t: &'static str| -> Vec<(String, f64, BBox)> {
        entries.iter().filter(|e| e["Type"].as_str() == Some(t)).filter_map(to_det).collect()
    };
    let words: Vec<TextDetection> = of_type("WORD").into_iter().map(|(t, c, b)| TextDetection::new(t, c, b)).collect();
    if !words.is_empty() {
        return words;
    }
    of_type("LINE").into_iter().flat_map(|(t, c, b)| split_line(&t, c, b)).collect()
}

fn host_of(url: &str) -> &str {
    let rest = url.split_once("://").map(|(_, r)| r).unwrap_or(url);
    rest.split('/').next().unwrap_or(rest)
}

pub(crate) struct SigV4<'a> {
    pub access_key: &'a str,
    pub secret_key: &'a str,
    pub region: &'a str,
    pub service: &'a str,
    pub host: &'a str,
    pub amz_date: &'a str,
    pub target: &'a str,
    pub body: &'a [u8],
}

type HmacSha256 = Hmac<Sha256>;

fn hmac(key: &[u8], data: &[u8]) -> Vec<u8> {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().to_vec()
}

pub(crate) fn signing_key(secret: &str, date: &str, region: &str, service: &str) -> Vec<u8> {
    let k_date = hmac(format!("AWS4{secret}").as_bytes(), date.as_bytes());
    let k_region = hmac(&k_date, region.as_bytes());
    let k_service = hmac(&k_region, service.as_bytes());
    hmac(&k_service, b"aws4_request")
}

pub(crate) fn sigv4_authorization(s: &SigV4<'_>) -> String {
    let date = &s.amz_date[..8];
    let signed_headers = "content-type;host;x-amz-date;x-amz-target";
    let canonical = format!(
        "POST\n/\n\ncontent-type:{AMZ_JSON}\nhost:{}\nx-amz-date:{}\nx-amz-target:{}\n\n{signed_headers}\n{}",
        s.host,
        s.amz_date,
        s.target,
        hex::encode(Sha256::digest(s.body))
    );
    let scope = format!("{date}/{}/{}/aws4_request", s.region, s.service);
    let to_sign = format!("AWS4-HMAC-SHA256\n{}\n{scope}\n{}", s.amz_date, hex::encode(Sha256::digest(canonical)));
    let signature = hex::encode(hmac(&signing_key(s.secret_key, date, s.region, s.service), to_sign.as_bytes()));
    format!(
        "AWS4-HMAC-SHA256 Credential={}/{scope}, SignedHeaders={signed_headers}, Signature={signature}",
        s.access_key
    )
}
