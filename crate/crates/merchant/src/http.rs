//! Customer-facing HTTP endpoints.
//!
//! Decline responses are deliberately generic; the verdict is only logged.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prepaid_core::messages::{ActivateRequest, BalanceRequest, ErrorCode};
use serde_json::json;

use crate::service::{CheckoutError, CheckoutRequest, Merchant, MerchantError};

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

fn checkout_error(e: &CheckoutError) -> Response {
    match e {
        CheckoutError::UnknownItem(_) => error(StatusCode::NOT_FOUND, "unknown item"),
        CheckoutError::UnknownProvider(_) => error(StatusCode::BAD_REQUEST, "unknown card provider"),
        CheckoutError::PaymentDeclined(_) | CheckoutError::CaptureRejected(_) => {
            error(StatusCode::PAYMENT_REQUIRED, "payment declined")
        }
        CheckoutError::ProviderUnreachable(_) => error(
            StatusCode::SERVICE_UNAVAILABLE,
            "card provider unreachable, please retry",
        ),
        CheckoutError::BadProviderSignature(_) | CheckoutError::ProviderProtocol(_) | CheckoutError::Ledger(_) => {
            error(StatusCode::BAD_GATEWAY, "payment could not be completed")
        }
    }
}

fn relay_error(e: &MerchantError) -> Response {
    match e {
        MerchantError::ProviderUnreachable(_) => error(
            StatusCode::SERVICE_UNAVAILABLE,
            "card provider unreachable, please retry",
        ),
        MerchantError::Rejected(ErrorCode::AlreadyActivated, _) => {
            error(StatusCode::CONFLICT, "card already activated")
        }
        MerchantError::Rejected(ErrorCode::WeakPassword, _) => {
            error(StatusCode::BAD_REQUEST, "password must have at least 4 characters")
        }
        MerchantError::Rejected(..) => error(StatusCode::FORBIDDEN, "card details not accepted"),
        _ => error(StatusCode::BAD_GATEWAY, "request could not be completed"),
    }
}

async fn catalog(State(m): State<Arc<Merchant>>) -> Response {
    Json(m.list_catalog()).into_response()
}

async fn checkout(State(m): State<Arc<Merchant>>, Json(req): Json<CheckoutRequest>) -> Response {
    let result = tokio::task::spawn_blocking(move || m.checkout(&req)).await;
    match result {
        Ok(Ok(receipt)) => Json(receipt).into_response(),
        Ok(Err(e)) => {
            tracing::info!(error = %e, "checkout failed");
            checkout_error(&e)
        }
        Err(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal error"),
    }
}

async fn receipt(State(m): State<Arc<Merchant>>, Path(txn_id): Path<String>) -> Response {
    match m.receipt(&txn_id) {
        Some(r) => Json(r).into_response(),
        None => error(StatusCode::NOT_FOUND, "no such receipt"),
    }
}

async fn activate(State(m): State<Arc<Merchant>>, Json(req): Json<ActivateRequest>) -> Response {
    match tokio::task::spawn_blocking(move || m.activate(&req)).await {
        Ok(Ok(())) => Json(json!({ "activated": true })).into_response(),
        Ok(Err(e)) => relay_error(&e),
        Err(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal error"),
    }
}

async fn balance(State(m): State<Arc<Merchant>>, Json(req): Json<BalanceRequest>) -> Response {
    match tokio::task::spawn_blocking(move || m.balance(&req)).await {
        Ok(Ok(available)) => Json(json!({ "available": available })).into_response(),
        Ok(Err(e)) => relay_error(&e),
        Err(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal error"),
    }
}

pub fn router(merchant: Arc<Merchant>) -> Router {
    Router::new()
        .route("/catalog", get(catalog))
        .route("/checkout", post(checkout))
        .route("/receipt/{txn_id}", get(receipt))
        .route("/activate", post(activate))
        .route("/balance", post(balance))
        .with_state(merchant)
}
