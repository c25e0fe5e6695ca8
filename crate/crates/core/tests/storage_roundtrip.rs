use std::collections::BTreeMap;
use std::fs;

use tcmdw_core::model::builtin_tcm_schema;
use tcmdw_core::storage::{self, FactRow, StorageError, Warehouse, UNKNOWN, UNKNOWN_KEY};

fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn seeded(wh: &mut Warehouse) -> Vec<u64> {
    wh.upsert_dimension_member("HerbTypes", "Tonify", &attrs(&[("herb_type_description", "tonics")]), &BTreeMap::new())
        .unwrap();
    let herb = wh
        .upsert_dimension_member(
            "Herbs",
            "Ge Gen",
            &attrs(&[("latin_name", "Puerariae Radix")]),
            &attrs(&[("HerbTypes", "Release Exterior")]),
        )
        .unwrap();
    let formula = wh
        .upsert_dimension_member("Formulas", "Ge Gen Tang", &attrs(&[("indication", "colds")]), &attrs(&[("FormulaTypes", "Cold and Flu")]))
        .unwrap();
    let source = wh
        .upsert_dimension_member(
            "Sources",
            "Beijing Clinic",
            &attrs(&[("city", "Beijing")]),
            &attrs(&[("SourceTypes", "Clinic"), ("Countries", "China")]),
        )
        .unwrap();
    let (day, _) = wh.resolve_member("Dates", "20100315", false).unwrap();
    vec![day, formula, herb, source]
}

fn fact(keys: &[u64], id: &str, q: i64) -> FactRow {
    FactRow { keys: keys.to_vec(), degenerate: vec![id.into()], measures: vec![q] }
}

fn snapshot(wh: &Warehouse) -> (Vec<Vec<storage::DimensionMember>>, Vec<FactRow>, usize) {
    (wh.tables().map(|t| t.rows().to_vec()).collect(), wh.facts().to_vec(), wh.lineage().len())
}

#[test]
fn checkpoint_then_open_reproduces_state() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("wh");
    let mut wh = storage::init_warehouse(builtin_tcm_schema(), &root).unwrap();
    let keys = seeded(&mut wh);
    wh.append_facts(vec![fact(&keys, "P1", 9000), fact(&keys, "P2", 12000)]).unwrap();
    let digest = wh.checkpoint().unwrap();
    let before = snapshot(&wh);
    drop(wh);

    let back = storage::open_warehouse(&root).unwrap();
    assert_eq!(snapshot(&back), before);
    assert_eq!(back.checkpoint_digest(), Some(digest.as_str()));
    assert_eq!(Warehouse::manifest_digest(&root).unwrap(), digest);
    assert!(!back.is_writable());
}

#[test]
fn every_table_has_the_unknown_member_at_key_zero() {
    let wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
    for t in wh.tables() {
        let m = t.get(UNKNOWN_KEY).unwrap();
        assert_eq!(m.natural_key, UNKNOWN);
        assert!(m.attributes.values().all(|v| v == UNKNOWN));
    }
}

#[test]
fn fact_file_grows_by_appending_only() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("wh");
    let mut wh = storage::init_warehouse(builtin_tcm_schema(), &root).unwrap();
    let keys = seeded(&mut wh);
    wh.append_facts(vec![fact(&keys, "P1", 10)]).unwrap();
    wh.checkpoint().unwrap();
    let fact_file = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("fact_"))
        .unwrap();
    let first = fs::read(&fact_file).unwrap();
    wh.append_facts(vec![fact(&keys, "P2", 20), fact(&keys, "P3", 30)]).unwrap();
    wh.checkpoint().unwrap();
    let second = fs::read(&fact_file).unwrap();
    assert!(second.len() > first.len());
    assert_eq!(&second[..first.len()], &first[..]);
    drop(wh);
    assert_eq!(storage::open_warehouse(&root).unwrap().fact_count(), 3);
}

fn tamper(path: &std::path::Path, f: impl FnOnce(String) -> String) {
    let text = fs::read_to_string(path).unwrap();
    let changed = f(text.clone());
    assert_ne!(text, changed);
    fs::write(path, changed).unwrap();
}

#[test]
fn tampering_is_detected_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let make = |name: &str| {
        let root = dir.path().join(name);
        let mut wh = storage::init_warehouse(builtin_tcm_schema(), &root).unwrap();
        let keys = seeded(&mut wh);
        wh.append_facts(vec![fact(&keys, "P1", 10)]).unwrap();
        wh.checkpoint().unwrap();
        root
    };

    let root = make("manifest");
    tamper(&root.join("manifest.json"), |t| t.replace("\"fact_count\": 1", "\"fact_count\": 2"));
    assert!(matches!(storage::open_warehouse(&root), Err(StorageError::DigestMismatch(f)) if f == "manifest.json"));

    let root = make("facts");
    tamper(&root.join("fact_FormulaList.ndjson"), |t| t.replace("10", "11"));
    assert!(matches!(storage::open_warehouse(&root), Err(StorageError::DigestMismatch(_))));

    let root = make("dims");
    tamper(&root.join("dim_Herbs.ndjson"), |t| t.replace("Puerariae", "Pueraria"));
    assert!(matches!(storage::open_warehouse(&root), Err(StorageError::DigestMismatch(f)) if f == "dim_Herbs.ndjson"));
}

#[test]
fn single_writer_many_readers() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("wh");
    let writer = storage::init_warehouse(builtin_tcm_schema(), &root).unwrap();
    assert!(matches!(storage::open_warehouse_for_write(&root), Err(StorageError::WarehouseLocked(_))));
    let mut reader = storage::open_warehouse(&root).unwrap();
    assert!(matches!(reader.checkpoint(), Err(StorageError::ReadOnly)));
    drop(writer);
    assert!(storage::open_warehouse_for_write(&root).is_ok());
}

#[test]
fn init_refuses_a_non_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("stray.txt"), "x").unwrap();
    assert!(matches!(
        storage::init_warehouse(builtin_tcm_schema(), dir.path()),
        Err(StorageError::PathNotEmpty(_))
    ));
}

#[test]
fn inferred_members_keep_their_key_when_enriched() {
    let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
    let (k, n) = wh.resolve_member("Herbs", "Unknown Root X", true).unwrap();
    assert_eq!(n, 1);
    assert!(wh.table("Herbs").unwrap().get(k).unwrap().inferred);
    let k2 = wh
        .upsert_dimension_member("Herbs", "Unknown Root X", &attrs(&[("latin_name", "Radix Ignota")]), &BTreeMap::new())
        .unwrap();
    assert_eq!(k, k2);
    let m = wh.table("Herbs").unwrap().get(k).unwrap();
    assert!(!m.inferred);
    assert_eq!(m.attributes["latin_name"], "Radix Ignota");
}

#[test]
fn facts_with_dangling_keys_or_bad_measures_are_rejected() {
    let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
    let keys = seeded(&mut wh);
    let mut dangling = keys.clone();
    dangling[2] = 999;
    let out = wh
        .append_facts(vec![fact(&keys, "P1", 5), fact(&dangling, "P2", 5), fact(&keys, "P3", 0)])
        .unwrap();
    assert_eq!(out.accepted, 1);
    assert_eq!(out.outcomes[1].as_ref().unwrap_err().code(), "ForeignKeyViolation");
    assert_eq!(out.outcomes[2].as_ref().unwrap_err().code(), "DomainViolation");
    assert_eq!(wh.fact_count(), 1);
}
