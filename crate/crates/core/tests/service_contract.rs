mod common;

use axum::http::StatusCode;
use common::*;
use meterpipe::ledger::HmacKeyring;
use meterpipe::ocr::{image_digest, BBox, GlyphLayout, ReplayBackend, SevenSegBackend, TextDetection};
use meterpipe::service::{Service, StoreKind};
use serde_json::{json, Value};
use std::sync::Arc;

fn sevenseg() -> Arc<SevenSegBackend> {
    Arc::new(SevenSegBackend::new(GlyphLayout::default()))
}

#[tokio::test]
async fn route_role_matrix() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let bad = auth_matrix_violations(&h).await;
    assert!(bad.is_empty(), "{bad:#?}");
}

#[tokio::test]
async fn scan_reads_plate_and_refines() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let (s, body) = h.upload("/api/scan?meter_id=M1&lat=1&lon=2", Some(ALICE), plate_png("01234", 0)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["candidate_reading"], "01234");
    assert_eq!(body["fallback"], false);
    assert_eq!(body["candidates"][0]["delta"], 34);
}

#[tokio::test]
async fn replay_fixture_drives_candidate() {
    let png = plate_png("77777", 3);
    let mut replay = ReplayBackend::default();
    replay.insert(
        image_digest(&png),
        vec![
            TextDetection::new("kWh", 0.9, BBox::new(0.0, 0.0, 20.0, 10.0)),
            TextDetection::new("01250", 0.8, BBox::new(0.0, 20.0, 60.0, 20.0)),
            TextDetection::new("SN 998877", 0.95, BBox::new(0.0, 50.0, 60.0, 10.0)),
        ],
    );
    let h = Harness::new(Arc::new(replay));
    h.seed_accounts().await;
    let (s, body) = h.upload("/api/scan?meter_id=M1", Some(ALICE), png).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((body["candidate_reading"].as_str(), body["fallback"].as_bool()), (Some("01250"), Some(false)));
}

#[tokio::test]
async fn unreadable_image_falls_back_to_last_reading() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let blank = meterpipe::imaging::encode_png(&meterpipe::imaging::RasterImage::filled(184, 72, 1, 128).unwrap()).unwrap();
    let (s, body) = h.upload("/api/scan?meter_id=M1", Some(ALICE), blank).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((body["candidate_reading"].as_str(), body["fallback"].as_bool()), (Some("01200"), Some(true)));
}

#[tokio::test]
async fn backend_outage_returns_502_with_fallback() {
    let h = Harness::new(Arc::new(DownBackend));
    h.seed_accounts().await;
    let (s, body) = h.upload("/api/scan?meter_id=M1", Some(ALICE), plate_png("01234", 0)).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "BackendUnavailable");
    assert_eq!((body["candidate_reading"].as_str(), body["fallback"].as_bool()), (Some("01200"), Some(true)));
    assert_eq!(body["image_digest"].as_str().map(str::len), Some(64));
}

#[tokio::test]
async fn scan_errors() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let (s, _) = h.upload("/api/scan?meter_id=B1", Some(ALICE), plate_png("01234", 0)).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "bob's meter is invisible to alice");
    let (s, _) = h.upload("/api/scan?meter_id=M1", Some(ALICE), b"not an image".to_vec()).await;
    assert_eq!(s, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (s, body) = h.upload("/api/scan?meter_id=M1&url=http://127.0.0.1:9/x.png", Some(ALICE), vec![]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
}

#[tokio::test]
async fn confirm_commits_and_enforces_monotonicity() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let (s, body) = h.confirm(ALICE, "M1", "01234", plate_png("01234", 0)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert!(body["ledger_height"].as_u64().unwrap() >= 1);

    let (s, body) = h.confirm(ALICE, "M1", "01230", plate_png("01230", 1)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!((body["error"].as_str(), body["reason"].as_str()), (Some("LedgerRejected"), Some("NonMonotonic")));

    let (s, _) = h.confirm(ALICE, "M1", "01234", plate_png("01234", 2)).await;
    assert_eq!(s, StatusCode::OK, "an unchanged reading is accepted");

    let (s, _) = h.confirm(ALICE, "M1", "1234", plate_png("01234", 0)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h
        .json("POST", "/api/confirm", Some(ALICE), json!({"meter_id": "M1", "reading": "01240", "image_digest": "ab"}))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, status) = h.json("GET", "/api/ledger/status", Some(ADMIN), Value::Null).await;
    assert_eq!(status["tx_count"], 2);
    assert!(h.service.reconcile().is_clean());
}

#[tokio::test]
async fn rapid_confirms_commit_in_order() {
    let mut cfg = service_config();
    cfg.ledger.logical_time = false;
    cfg.ledger.flush_timeout_ms = 300;
    let h = Harness::from_config(cfg, sevenseg());
    h.seed_accounts().await;
    let a = h.confirm(ALICE, "M2", "00010", plate_png("00010", 0));
    let b = async {
        tokio::time::sleep(std::time::Duration::from_millis(30)).await;
        h.confirm(ALICE, "M2", "00020", plate_png("00020", 1)).await
    };
    let ((sa, ba), (sb, bb)) = tokio::join!(a, b);
    assert_eq!((sa, sb), (StatusCode::OK, StatusCode::OK), "{ba} {bb}");
    assert_eq!(ba["ledger_height"], bb["ledger_height"], "both landed in one block");
    let (_, page) = h.json("GET", "/api/meters/M2/readings", Some(ALICE), Value::Null).await;
    let readings: Vec<&str> = page["items"].as_array().unwrap().iter().map(|r| r["reading"].as_str().unwrap()).collect();
    assert_eq!(readings, ["00020", "00010"]);
}

#[tokio::test]
async fn admin_audit_pages_newest_first() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let mut digests = Vec::new();
    for i in 0..5u8 {
        let reading = format!("{:05}", 10 + i);
        let (s, _) = h.confirm(ALICE, "M2", &reading, plate_png(&reading, i)).await;
        assert_eq!(s, StatusCode::OK);
        digests.push(image_digest(&plate_png(&reading, i)));
    }
    let mut sizes = Vec::new();
    let mut seen = Vec::new();
    for page in 1..=3 {
        let (s, body) = h.json("GET", &format!("/api/admin/readings?page={page}&page_size=2"), Some(ADMIN), Value::Null).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(body["total"], 5);
        let items = body["items"].as_array().unwrap();
        sizes.push(items.len());
        for it in items {
            assert_eq!(it["geo"], json!({"lat": 1.5, "lon": 2.5}));
            assert_eq!(it["image_url"], format!("/api/images/{}", it["image_digest"].as_str().unwrap()));
            assert_eq!(it["source"], "scanned");
            seen.push(it["image_digest"].as_str().unwrap().to_string());
        }
    }
    assert_eq!(sizes, [2, 2, 1]);
    digests.reverse();
    assert_eq!(seen, digests);
    let (_, filtered) = h.json("GET", "/api/admin/readings?customer_id=bob", Some(ADMIN), Value::Null).await;
    assert_eq!(filtered["total"], 0);
    let (s, _) = h.json("GET", "/api/admin/readings?page=0", Some(ADMIN), Value::Null).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn stored_image_is_served_back() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let png = plate_png("00042", 0);
    let (_, scan) = h.upload("/api/scan?meter_id=M1", Some(ALICE), png.clone()).await;
    let uri = format!("/api/images/{}", scan["image_digest"].as_str().unwrap());
    let req = axum::http::Request::get(&uri).header("authorization", format!("Bearer {ADMIN}")).body(axum::body::Body::empty()).unwrap();
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let resp = h.router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "image/png");
    assert_eq!(resp.into_body().collect().await.unwrap().to_bytes().to_vec(), png);
}

#[tokio::test]
async fn resource_crud_rules() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    let (s, _) = h
        .json(
            "POST",
            "/api/meters",
            Some(ADMIN),
            json!({"meter_id": "X", "customer_id": "alice", "register_length": 5, "initial_reading": "123", "geo": {"lat": 0.0, "lon": 0.0}}),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.json("GET", "/api/customers/nobody", Some(ADMIN), Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.json("POST", "/api/customers", Some(ADMIN), json!({"customer_id": "alice", "name": "again"})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, body) = h.json("GET", "/api/customers/alice", Some(ALICE), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["meters"], json!(["M1", "M2"]));
    assert!(body.get("auth_token_hash").is_none());
    let (s, _) = h.json("GET", "/api/customers/bob", Some(ALICE), Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, list) = h.json("GET", "/api/meters", Some(BOB), Value::Null).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["last_reading"], "00500");
    let (_, all) = h.json("GET", "/api/customers", Some(ADMIN), Value::Null).await;
    assert!(all.as_array().unwrap().iter().all(|c| c.get("auth_token_hash").is_none()));
}

#[tokio::test]
async fn fifty_confirms_reconcile_clean() {
    let h = Harness::new(sevenseg());
    h.seed_accounts().await;
    for i in 0..50u32 {
        let (meter, token, base) = if i % 2 == 0 { ("M2", ALICE, 0) } else { ("B1", BOB, 500) };
        let reading = format!("{:05}", base + i);
        let (s, body) = h.confirm(token, meter, &reading, plate_png(&reading, i as u8)).await;
        assert_eq!(s, StatusCode::OK, "{body}");
    }
    let report = h.service.reconcile();
    assert_eq!((report.committed_records, report.chain_txs), (50, 50));
    assert!(report.is_clean(), "{:?}", report.mismatches);
    let (_, status) = h.json("GET", "/api/ledger/status", Some(ALICE), Value::Null).await;
    assert_eq!(status["tx_count"], 50);
}

#[tokio::test]
async fn file_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = service_config();
    cfg.store = StoreKind::File;
    cfg.data_dir = dir.path().to_path_buf();
    let keys = Arc::new(HmacKeyring::from_secret("restart-test"));
    let first = {
        let svc = Service::with_parts(cfg.clone(), sevenseg(), keys.clone()).unwrap();
        let h = Harness { router: svc.router(), service: svc };
        h.seed_accounts().await;
        for r in ["01210", "01220", "01300"] {
            let (s, _) = h.confirm(ALICE, "M1", r, plate_png(r, 9)).await;
            assert_eq!(s, StatusCode::OK);
        }
        h.json("GET", "/api/admin/readings", Some(ADMIN), Value::Null).await.1
    };
    let svc = Service::with_parts(cfg, sevenseg(), keys).unwrap();
    let h = Harness { router: svc.router(), service: svc };
    let (_, after) = h.json("GET", "/api/admin/readings", Some(ADMIN), Value::Null).await;
    assert_eq!(after, first);
    assert!(h.service.reconcile().is_clean());
    let (s, body) = h.confirm(ALICE, "M1", "01250", plate_png("01250", 1)).await;
    assert_eq!(s, StatusCode::CONFLICT, "endorser still knows 01300 after restart: {body}");
    let (s, _) = h.confirm(BOB, "B1", "00501", plate_png("00501", 1)).await;
    assert_eq!(s, StatusCode::OK, "account tokens survive restart");
}

#[tokio::test]
async fn timed_mode_commits_after_flush_timeout() {
    let mut cfg = service_config();
    cfg.ledger.logical_time = false;
    cfg.ledger.flush_timeout_ms = 150;
    let h = Harness::from_config(cfg, sevenseg());
    h.seed_accounts().await;
    let start = std::time::Instant::now();
    let (s, body) = h.confirm(ALICE, "M1", "01234", plate_png("01234", 0)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert!(start.elapsed() >= std::time::Duration::from_millis(100));
}

#[tokio::test]
async fn commit_timeout_is_504() {
    let mut cfg = service_config();
    cfg.ledger.logical_time = false;
    cfg.ledger.flush_timeout_ms = 60_000;
    cfg.ledger.commit_timeout_ms = 100;
    let h = Harness::from_config(cfg, sevenseg());
    h.seed_accounts().await;
    let (s, body) = h.confirm(ALICE, "M1", "01234", plate_png("01234", 0)).await;
    assert_eq!(s, StatusCode::GATEWAY_TIMEOUT, "{body}");
    assert_eq!(body["error"], "CommitTimeout");
}
