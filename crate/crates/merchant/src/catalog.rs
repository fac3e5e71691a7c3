//! Static product catalog, loaded once at startup.
//!
//! File format: canonical `{"items":[{"item_id":..,"price":..,"title":..}],"v":1}`.
//! An empty file is an empty catalog.

use std::collections::BTreeMap;
use std::path::Path;

use prepaid_core::{canonical, Money};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog: {0}")]
    Malformed(String),
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("item {0:?} has a zero price")]
    ZeroPrice(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: String,
    pub title: String,
    pub price: Money,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    v: i64,
    items: Vec<CatalogItem>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    items: BTreeMap<String, CatalogItem>,
}

impl Catalog {
    pub fn new(items: impl IntoIterator<Item = CatalogItem>) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        for item in items {
            if item.price.is_zero() {
                return Err(CatalogError::ZeroPrice(item.item_id));
            }
            if map.contains_key(&item.item_id) {
                return Err(CatalogError::DuplicateItem(item.item_id));
            }
            map.insert(item.item_id.clone(), item);
        }
        Ok(Self { items: map })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CatalogError> {
        let trimmed = bytes.strip_suffix(b"\n").unwrap_or(bytes);
        if trimmed.is_empty() {
            return Ok(Self::default());
        }
        let file: CatalogFile = canonical::from_bytes(trimmed).map_err(|e| CatalogError::Malformed(e.to_string()))?;
        if file.v != 1 {
            return Err(CatalogError::Malformed(format!("unsupported version {}", file.v)));
        }
        Self::new(file.items)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let file = CatalogFile {
            v: 1,
            items: self.list(),
        };
        let mut out = canonical::to_bytes(&file).expect("catalogs are always encodable");
        out.push(b'\n');
        out
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn store(&self, path: &Path) -> Result<(), CatalogError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    /// All items, sorted by item id.
    pub fn list(&self) -> Vec<CatalogItem> {
        self.items.values().cloned().collect()
    }

    pub fn get(&self, item_id: &str) -> Option<&CatalogItem> {
        self.items.get(item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
