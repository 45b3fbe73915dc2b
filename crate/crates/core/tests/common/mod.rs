//! Oracles and fixtures shared by the integration tests and the acceptance run.
//! The oracles restate each rule directly and share no code with the crate.
#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use meterpipe::imaging::RasterImage;
use meterpipe::ocr::{BBox, DetectRequest, OcrError, TextDetection, TextDetector};
use meterpipe::service::{Role, ServiceConfig, Service, TokenEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::sync::Arc;
use tower::ServiceExt;

// ---------- imaging ----------

/// Direct double loop: mean of the k×k window anchored at floor(k/2), out-of-range
/// coordinates clamped to the edge, rounded half away from zero.
pub fn naive_blur(img: &RasterImage, k: u32) -> Vec<u8> {
    let (w, h, c) = (img.width() as i64, img.height() as i64, img.channels() as i64);
    let half = (k / 2) as i64;
    let mut out = Vec::with_capacity((w * h * c) as usize);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut sum = 0u64;
                for dy in 0..k as i64 {
                    for dx in 0..k as i64 {
                        let sx = (x + dx - half).clamp(0, w - 1);
                        let sy = (y + dy - half).clamp(0, h - 1);
                        sum += img.pixels()[((sy * w + sx) * c + ch) as usize] as u64;
                    }
                }
                let mean = sum as f64 / (k as f64 * k as f64);
                out.push(mean.round() as u8);
            }
        }
    }
    out
}

pub fn gamma_formula(i: u8, gamma: f64) -> u8 {
    (255.0 * (i as f64 / 255.0).powf(gamma)).round() as u8
}

pub fn random_image(rng: &mut ChaCha8Rng, max_side: u32, lo: u8, hi: u8) -> RasterImage {
    let w = rng.gen_range(1..=max_side);
    let h = rng.gen_range(1..=max_side);
    let c = if rng.gen_bool(0.5) { 1 } else { 3 };
    let px = (0..w * h * c as u32).map(|_| rng.gen_range(lo..=hi)).collect();
    RasterImage::new(w, h, c, px).unwrap()
}

/// Mean ± 3σ of a Binomial(n, p) count.
pub fn binomial_3sigma(n: u64, p: f64) -> (f64, f64) {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (mean - 3.0 * sd, mean + 3.0 * sd)
}

// ---------- refinement ----------

pub fn oracle_digits(text: &str) -> String {
    let mut out = String::new();
    for ch in text.chars() {
        if ch == '.' || ch == ',' {
            break;
        }
        if ch.is_ascii_digit() {
            out.push(ch);
        }
    }
    out
}

/// Enumerates every token, keeps those passing the length and window rules, and
/// returns the one no other survivor beats.
pub fn refine_oracle(dets: &[TextDetection], last: &str, max_delta: u64) -> (String, bool) {
    let last_v: u64 = last.parse().unwrap();
    let survivors: Vec<(u64, &TextDetection, String)> = dets
        .iter()
        .filter_map(|d| {
            let digits = oracle_digits(&d.text);
            if digits.len() != last.len() {
                return None;
            }
            let v: u64 = digits.parse().ok()?;
            (v >= last_v && v - last_v <= max_delta).then(|| (v - last_v, d, digits))
        })
        .collect();
    let beats = |a: &(u64, &TextDetection, String), b: &(u64, &TextDetection, String)| {
        if a.0 != b.0 {
            return a.0 < b.0;
        }
        if a.1.confidence != b.1.confidence {
            return a.1.confidence > b.1.confidence;
        }
        if a.1.bbox.y != b.1.bbox.y {
            return a.1.bbox.y < b.1.bbox.y;
        }
        if a.1.bbox.x != b.1.bbox.x {
            return a.1.bbox.x < b.1.bbox.x;
        }
        a.2 < b.2
    };
    for s in &survivors {
        if survivors.iter().all(|o| !beats(o, s)) {
            return (s.2.clone(), false);
        }
    }
    (last.to_string(), true)
}

/// Random instance: register length, last reading, window and up to 8 tokens mixing
/// plausible readings, near misses, serial numbers and noise.
pub fn refine_instance(rng: &mut ChaCha8Rng) -> (Vec<TextDetection>, String, u64) {
    let len = rng.gen_range(1..=7usize);
    let cap = 10u64.pow(len as u32);
    let last_v = rng.gen_range(0..cap);
    let last = format!("{last_v:0len$}");
    let max_delta = [0, 1, 5, 50, 500, 10_000][rng.gen_range(0..6)];
    let n = rng.gen_range(0..=8);
    let dets = (0..n)
        .map(|_| {
            let text = match rng.gen_range(0..6) {
                0 | 1 => {
                    let v = (last_v + rng.gen_range(0..=max_delta.min(40) + 2)).min(cap - 1);
                    format!("{v:0len$}")
                }
                2 => format!("{:0len$}", last_v.saturating_sub(rng.gen_range(1..5))),
                3 => format!("SN-{}", rng.gen_range(0..1_000_000)),
                4 => format!("{:0len$}.{}", last_v + rng.gen_range(0..3), rng.gen_range(0..10)),
                _ => ["kWh", "--", "0 0", ""][rng.gen_range(0..4)].to_string(),
            };
            // Coarse values so ties actually occur.
            let conf = rng.gen_range(0..4) as f64 / 4.0;
            let bbox = BBox::new(rng.gen_range(0..3) as f64 * 10.0, rng.gen_range(0..3) as f64 * 10.0, 10.0, 5.0);
            TextDetection::new(text, conf, bbox)
        })
        .collect();
    (dets, last, max_delta)
}

// ---------- backends ----------

/// Always fails as though the provider were unreachable.
#[derive(Debug)]
pub struct DownBackend;

impl TextDetector for DownBackend {
    fn name(&self) -> &str {
        "down"
    }

    fn detect_raw(&self, _req: &DetectRequest<'_>) -> Result<Vec<TextDetection>, OcrError> {
        Err(OcrError::Transport("connection refused".into()))
    }
}

// ---------- service ----------

pub const ADMIN: &str = "admin-secret";
pub const ALICE: &str = "alice-secret";
pub const BOB: &str = "bob-secret";

pub fn service_config() -> ServiceConfig {
    let mut cfg = ServiceConfig::default();
    cfg.ledger.logical_time = true;
    cfg.ledger.batch_size = 10;
    cfg.tokens = vec![
        TokenEntry::new(ADMIN, Role::Admin, None),
        TokenEntry::new(ALICE, Role::Customer, Some("alice")),
    ];
    cfg
}

pub struct Harness {
    pub service: Service,
    pub router: Router,
}

impl Harness {
    pub fn new(backend: Arc<dyn TextDetector>) -> Self {
        Self::from_config(service_config(), backend)
    }

    pub fn from_config(cfg: ServiceConfig, backend: Arc<dyn TextDetector>) -> Self {
        let service = Service::with_backend(cfg, backend).unwrap();
        let router = service.router();
        Self { service, router }
    }

    pub async fn call(&self, method: &str, uri: &str, token: Option<&str>, body: Body, content_type: &str) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri).header("content-type", content_type);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let resp = self.router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }

    pub async fn json(&self, method: &str, uri: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
        let body = if body.is_null() { Body::empty() } else { Body::from(body.to_string()) };
        self.call(method, uri, token, body, "application/json").await
    }

    pub async fn upload(&self, uri: &str, token: Option<&str>, bytes: Vec<u8>) -> (StatusCode, Value) {
        self.call("POST", uri, token, Body::from(bytes), "application/octet-stream").await
    }

    /// alice (config token) owns M1 and M2; bob (account token) owns B1.
    pub async fn seed_accounts(&self) {
        for (id, token) in [("alice", None), ("bob", Some(BOB))] {
            let (s, _) = self
                .json("POST", "/api/customers", Some(ADMIN), json!({"customer_id": id, "name": id, "token": token}))
                .await;
            assert_eq!(s, StatusCode::CREATED);
        }
        for (m, owner, initial) in [("M1", "alice", "01200"), ("M2", "alice", "00000"), ("B1", "bob", "00500")] {
            let (s, body) = self
                .json(
                    "POST",
                    "/api/meters",
                    Some(ADMIN),
                    json!({"meter_id": m, "customer_id": owner, "register_length": 5, "max_delta": 500,
                           "initial_reading": initial, "geo": {"lat": 12.97, "lon": 77.59}}),
                )
                .await;
            assert_eq!(s, StatusCode::CREATED, "{body}");
        }
    }

    /// Uploads a plate and confirms `reading` for `meter`.
    pub async fn confirm(&self, token: &str, meter: &str, reading: &str, plate: Vec<u8>) -> (StatusCode, Value) {
        let (_, scan) = self.upload(&format!("/api/scan?meter_id={meter}&lat=1.5&lon=2.5"), Some(token), plate).await;
        let digest = scan["image_digest"].as_str().expect("scan stored the image").to_string();
        self.json(
            "POST",
            "/api/confirm",
            Some(token),
            json!({"meter_id": meter, "reading": reading, "image_digest": digest, "geo": {"lat": 1.5, "lon": 2.5}}),
        )
        .await
    }
}

/// A seven-segment plate PNG showing `digits`, varied by `salt` so digests differ.
pub fn plate_png(digits: &str, salt: u8) -> Vec<u8> {
    let layout = meterpipe::ocr::GlyphLayout::default();
    let img = layout.render(digits, 200 + salt % 40, 30, [1.0, 1.0, 1.0]);
    meterpipe::imaging::encode_png(&img).unwrap()
}

/// Every route with a method and the roles allowed on it.
pub fn route_table() -> Vec<(&'static str, &'static str, &'static [&'static str])> {
    vec![
        ("POST", "/api/scan?meter_id=M1", &["customer"]),
        ("POST", "/api/confirm", &["customer"]),
        ("GET", "/api/admin/readings", &["admin"]),
        ("GET", "/api/admin/reconcile", &["admin"]),
        ("POST", "/api/customers", &["admin"]),
        ("GET", "/api/customers", &["admin"]),
        ("GET", "/api/customers/alice", &["admin", "customer"]),
        ("POST", "/api/meters", &["admin"]),
        ("GET", "/api/meters", &["admin", "customer"]),
        ("GET", "/api/meters/M1", &["admin", "customer"]),
        ("GET", "/api/meters/M1/readings", &["admin", "customer"]),
        ("GET", "/api/images/0000000000000000000000000000000000000000000000000000000000000000", &["admin", "customer"]),
        ("GET", "/api/ledger/status", &["admin", "customer"]),
    ]
}

/// Runs the route × role matrix, returning one message per violated cell.
pub async fn auth_matrix_violations(h: &Harness) -> Vec<String> {
    let principals: [(&str, Option<&str>); 4] =
        [("none", None), ("unknown", Some("not-a-token")), ("customer", Some(ALICE)), ("admin", Some(ADMIN))];
    let mut bad = Vec::new();
    for (method, uri, allowed) in route_table() {
        for (who, token) in principals {
            let (status, _) = h.json(method, uri, token, Value::Null).await;
            let ok = match who {
                "none" | "unknown" => status == StatusCode::UNAUTHORIZED,
                role if allowed.contains(&role) => status != StatusCode::UNAUTHORIZED && status != StatusCode::FORBIDDEN,
                _ => status == StatusCode::FORBIDDEN,
            };
            if !ok {
                bad.push(format!("{method} {uri} as {who}: {status}"));
            }
        }
    }
    bad
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------- ledger ----------

/// Flips one random bit in a random byte of a random block of `chain`, returning
/// the mutated bytes and the height of the block that was hit.
pub fn flip_random_block_byte(chain: &[u8], rng: &mut ChaCha8Rng) -> (Vec<u8>, u64) {
    let spans = meterpipe::ledger::file::block_spans(chain);
    let height = rng.gen_range(0..spans.len());
    let span = spans[height].clone();
    let pos = rng.gen_range(span);
    let mut out = chain.to_vec();
    out[pos] ^= 1 << rng.gen_range(0..8);
    (out, height as u64)
}

pub fn keyring(seed: u64) -> Arc<dyn meterpipe::ledger::Authenticator> {
    Arc::new(meterpipe::ledger::HmacKeyring::from_seed(seed))
}

// ---------- bench ----------

/// A small randomized dataset with recorded detections whose outcome is fixed at
/// construction: each entry is built to be read correctly, read wrongly, or to
/// miss its fixture. Returns the dataset, the backend and the expected counts.
pub struct RecountFixture {
    pub dataset: meterpipe::bench::Dataset,
    pub backend: meterpipe::ocr::ReplayBackend,
    pub mode: meterpipe::bench::ScoringMode,
    pub expected_correct: u64,
    pub expected_failed: u64,
}

pub fn recount_fixture(r: &mut ChaCha8Rng, tag: u64) -> RecountFixture {
    use meterpipe::bench::{Dataset, ManifestEntry, ScoringMode};
    let n = r.gen_range(1..=12usize);
    let digits = r.gen_range(3..=8usize);
    let refined = r.gen_bool(0.5);
    let mode = if refined { ScoringMode::Refined { max_delta: 100 } } else { ScoringMode::Raw };
    let mut items = Vec::new();
    let mut plans = Vec::new();
    for i in 0..n {
        let truth_v = r.gen_range(200..10u64.pow(digits as u32));
        let truth = format!("{truth_v:0digits$}");
        let last = format!("{:0digits$}", truth_v - r.gen_range(0..=50));
        let entry = ManifestEntry {
            id: format!("f{tag}-{i}"),
            image_path: format!("f{tag}-{i}.png").into(),
            ground_truth: truth.clone(),
            last_reading: Some(last),
        };
        // A 2×1 image unique to this entry so digests do not collide.
        let px = vec![(i % 256) as u8, (tag % 256) as u8, (tag >> 8) as u8, 7, 9, (i >> 8) as u8];
        items.push((entry, RasterImage::new(2, 1, 3, px).unwrap()));
        plans.push((truth, r.gen_range(0..3u8)));
    }
    let dataset = Dataset::from_images(items).unwrap();
    let mut backend = meterpipe::ocr::ReplayBackend::default();
    let (mut correct, mut failed) = (0, 0);
    for (item, (truth, plan)) in dataset.entries.iter().zip(plans) {
        let b = |y: f64| BBox::new(0.0, y, 1.0, 1.0);
        let dets = match plan {
            0 => {
                correct += 1;
                // The truth is the longest run in raw mode and the only in-window value in refined mode.
                vec![TextDetection::new("kWh", 0.99, b(0.0)), TextDetection::new(truth.clone(), 0.6, b(0.5)), TextDetection::new("7", 1.0, b(0.2))]
            }
            1 => {
                let mut wrong = truth.clone().into_bytes();
                let k = r.gen_range(0..wrong.len());
                wrong[k] = if wrong[k] == b'9' { b'0' } else { wrong[k] + 1 };
                let wrong = String::from_utf8(wrong).unwrap();
                if refined {
                    // Outside the window, so refinement falls back to the last reading (≠ truth unless equal).
                    vec![TextDetection::new(format!("{wrong}{wrong}"), 0.9, b(0.0))]
                } else {
                    vec![TextDetection::new(wrong, 0.9, b(0.0))]
                }
            }
            _ => {
                failed += 1;
                continue;
            }
        };
        backend.insert(item.digest.clone(), dets);
    }
    // In refined mode a wrong read falls back to last_reading, which is correct when
    // last happens to equal the truth.
    if refined {
        for (item, dets) in dataset.entries.iter().filter_map(|e| backend.fixtures().get(&e.digest).map(|d| (e, d))) {
            if dets.len() == 1 && item.entry.last_reading.as_deref() == Some(item.entry.ground_truth.as_str()) {
                correct += 1;
            }
        }
    }
    RecountFixture { dataset, backend, mode, expected_correct: correct, expected_failed: failed }
}
