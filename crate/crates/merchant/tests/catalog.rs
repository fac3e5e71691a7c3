use prepaid_core::Money;
use prepaid_merchant::{Catalog, CatalogError, CatalogItem};
use proptest::prelude::*;

fn item(id: &str, price: u64) -> CatalogItem {
    CatalogItem {
        item_id: id.into(),
        title: format!("title {id}"),
        price: Money::from_minor(price),
    }
}

#[test]
fn empty_file_is_empty_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.canon");
    std::fs::write(&path, b"").unwrap();
    assert!(Catalog::load(&path).unwrap().list().is_empty());
}

#[test]
fn items_come_back_sorted() {
    let c = Catalog::new([item("c", 3), item("a", 1), item("b", 2)]).unwrap();
    let ids: Vec<String> = c.list().into_iter().map(|i| i.item_id).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[test]
fn file_format_is_canonical() {
    let c = Catalog::new([item("b", 20), item("a", 10)]).unwrap();
    assert_eq!(
        c.to_bytes(),
        b"{\"items\":[{\"item_id\":\"a\",\"price\":10,\"title\":\"title a\"},{\"item_id\":\"b\",\"price\":20,\"title\":\"title b\"}],\"v\":1}\n"
    );
}

#[test]
fn rejects_bad_catalogs() {
    assert!(matches!(
        Catalog::new([item("a", 1), item("a", 2)]),
        Err(CatalogError::DuplicateItem(_))
    ));
    assert!(matches!(Catalog::new([item("a", 0)]), Err(CatalogError::ZeroPrice(_))));
    assert!(matches!(
        Catalog::from_bytes(b"{\"v\":1,\"items\":[]}"),
        Err(CatalogError::Malformed(_))
    ));
    assert!(matches!(
        Catalog::from_bytes(b"{\"items\":[],\"v\":2}"),
        Err(CatalogError::Malformed(_))
    ));
    assert!(matches!(
        Catalog::from_bytes(b"{\"items\":["),
        Err(CatalogError::Malformed(_))
    ));
}

proptest! {
    #[test]
    fn store_load_round_trip(entries in proptest::collection::btree_map("[a-z0-9-]{1,12}", (".{0,20}", 1u64..1_000_000), 0..20)) {
        let items: Vec<CatalogItem> = entries
            .into_iter()
            .map(|(id, (title, price))| CatalogItem { item_id: id, title, price: Money::from_minor(price) })
            .collect();
        let c = Catalog::new(items.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.canon");
        c.store(&path).unwrap();
        let back = Catalog::load(&path).unwrap();
        prop_assert_eq!(back.list(), items);
    }
}
