//! Starts the REST service on a local port with in-memory storage, then walks a
//! customer through scan and confirm over real HTTP.

use meterpipe::ocr::{GlyphLayout, SevenSegBackend};
use meterpipe::service::{Role, Service, ServiceConfig, TokenEntry};
use rand::Rng;
use serde_json::{json, Value};
use std::sync::Arc;

fn token() -> String {
    hex::encode(rand::thread_rng().gen::<[u8; 16]>())
}

fn call(req: ureq::RequestBuilder<ureq::typestate::WithBody>, body: Vec<u8>) -> anyhow::Result<(u16, Value)> {
    let mut resp = req.config().http_status_as_error(false).build().send(&body[..])?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string()?;
    Ok((status, serde_json::from_str(&text).unwrap_or(Value::String(text))))
}

fn main() -> anyhow::Result<()> {
    let (admin, alice) = (token(), token());
    let mut cfg = ServiceConfig::default();
    cfg.ledger.logical_time = true;
    cfg.tokens = vec![
        TokenEntry::new(admin.clone(), Role::Admin, None),
        TokenEntry::new(alice.clone(), Role::Customer, Some("alice")),
    ];
    let service = Service::with_backend(cfg, Arc::new(SevenSegBackend::new(GlyphLayout::default())))?;

    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    let router = service.router();
    rt.spawn(async move { axum::serve(listener, router).await });

    let post = |path: &str, tok: &str, body: Value| {
        call(ureq::post(format!("{base}{path}")).header("authorization", format!("Bearer {tok}")).header("content-type", "application/json"), body.to_string().into_bytes())
    };
    let (status, _) = post("/api/customers", &admin, json!({"customer_id": "alice", "name": "Alice"}))?;
    println!("create customer {status}");
    let (status, body) = post(
        "/api/meters",
        &admin,
        json!({"meter_id": "M1", "customer_id": "alice", "register_length": 5, "max_delta": 500,
               "initial_reading": "01200", "geo": {"lat": 12.97, "lon": 77.59}}),
    )?;
    println!("create meter {status}: {body}");

    let plate = GlyphLayout::default().render("01234", 210, 30, [1.0, 1.0, 1.0]);
    let png = meterpipe::imaging::encode_png(&plate)?;
    let (status, scan) = call(
        ureq::post(format!("{base}/api/scan?meter_id=M1&lat=12.97&lon=77.59"))
            .header("authorization", format!("Bearer {alice}"))
            .header("content-type", "image/png"),
        png,
    )?;
    println!("scan {status}: candidate {} fallback {}", scan["candidate_reading"], scan["fallback"]);

    let confirm = json!({"meter_id": "M1", "reading": scan["candidate_reading"], "image_digest": scan["image_digest"], "geo": {"lat": 12.97, "lon": 77.59}});
    let (status, body) = post("/api/confirm", &alice, confirm.clone())?;
    println!("confirm {status}: {body}");
    let mut lower = confirm;
    lower["reading"] = json!("01210");
    let (status, body) = post("/api/confirm", &alice, lower)?;
    println!("lower reading {status}: {body}");
    let (_, status) = call(ureq::get(format!("{base}/api/ledger/status")).header("authorization", format!("Bearer {admin}")).force_send_body(), vec![])?;
    println!("ledger {status}");
    Ok(())
}
