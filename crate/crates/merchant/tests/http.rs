mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use common::*;
use prepaid_merchant::http::router;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn checkout_body(w: &World, card: usize, item: &str, password: &str) -> Value {
    json!({
        "item_id": item,
        "card_number": w.cards[card].0,
        "secret": w.cards[card].1,
        "password": password,
        "provider_id": PROVIDER,
    })
}

#[tokio::test(flavor = "multi_thread")]
async fn catalog_lists_items_sorted() {
    let w = world(100, 1000, 1);
    let app = router(Arc::new(w.direct()));
    let (status, body) = call(app, "GET", "/catalog", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["item_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["book", "lamp", "mug", "pen", "tv"]);
    assert_eq!(body[0]["price"], 250);
}

#[tokio::test(flavor = "multi_thread")]
async fn checkout_then_fetch_receipt() {
    let w = world(100, 1000, 1);
    let app = router(Arc::new(w.direct()));
    let (status, receipt) = call(
        app.clone(),
        "POST",
        "/checkout",
        Some(checkout_body(&w, 0, "book", PASSWORD)),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(receipt["amount"], 250);
    let txn = receipt["txn_id"].as_str().unwrap();

    let (status, fetched) = call(app.clone(), "GET", &format!("/receipt/{txn}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, receipt);

    let (status, _) = call(app, "GET", "/receipt/t-nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn declines_are_generic() {
    let w = world(100, 1000, 1);
    let app = router(Arc::new(w.direct()));
    let (s1, b1) = call(
        app.clone(),
        "POST",
        "/checkout",
        Some(checkout_body(&w, 0, "tv", PASSWORD)),
    )
    .await;
    let (s2, b2) = call(
        app.clone(),
        "POST",
        "/checkout",
        Some(checkout_body(&w, 0, "pen", "wrong")),
    )
    .await;
    assert_eq!((s1, s2), (StatusCode::PAYMENT_REQUIRED, StatusCode::PAYMENT_REQUIRED));
    assert_eq!(b1, b2);

    let (s, _) = call(app, "POST", "/checkout", Some(checkout_body(&w, 0, "ghost", PASSWORD))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_provider_is_503() {
    let w = world(100, 1000, 1);
    let app = router(Arc::new(w.merchant(Arc::new(DownLink))));
    let (status, _) = call(app, "POST", "/checkout", Some(checkout_body(&w, 0, "pen", PASSWORD))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test(flavor = "multi_thread")]
async fn balance_and_activation_relay() {
    let w = world(100, 1000, 1);
    let app = router(Arc::new(w.direct()));
    let (status, body) = call(
        app.clone(),
        "POST",
        "/balance",
        Some(json!({ "card_number": w.cards[0].0, "secret": w.cards[0].1, "password": PASSWORD })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["available"], 1000);

    let (status, _) = call(
        app,
        "POST",
        "/activate",
        Some(json!({ "card_number": w.cards[0].0, "secret": w.cards[0].1, "new_password": "again1" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}
