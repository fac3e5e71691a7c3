//! Merchant service.
//!
//! Hosts a static catalog and a checkout endpoint, runs the authorize and
//! capture exchange against the card provider, keeps the dual-signed
//! transaction ledger and builds end-of-period settlement demands.

pub mod catalog;
pub mod config;
pub mod http;
pub mod ledger;
pub mod service;

pub use catalog::{Catalog, CatalogError, CatalogItem};
pub use config::MerchantConfig;
pub use ledger::{receipt_token, LedgerState, SettlementSummary};
pub use service::{CheckoutError, CheckoutRequest, DeclineReason, Merchant, MerchantError, MerchantOptions, Receipt};
