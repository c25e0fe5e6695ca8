mod common;

use std::collections::BTreeMap;
use std::fs;

use tcmdw_core::etl::{
    self, EtlError, PipelineConfig, Rule, SourceConfig, SourceFormat, SourceKind, SourceStatus, Target,
};
use tcmdw_core::model::builtin_tcm_schema;
use tcmdw_core::storage;

use common::{loaded, small_config, Workspace};

#[test]
fn shipped_pipeline_loads_generated_data_completely() {
    let (ws, manifest, report) = loaded(&small_config(42, 400));
    assert_eq!(report.sources.len(), 9);
    assert_eq!(report.sources.last().unwrap().kind, SourceKind::Fact);
    assert!(report.sources[..8].iter().all(|s| s.kind == SourceKind::Dimension));
    for s in &report.sources {
        assert_eq!(s.status, SourceStatus::Loaded, "{s:?}");
        let r = s.report.as_ref().unwrap();
        assert!(r.is_consistent());
        assert_eq!((r.rejected, r.inferred_members), (0, 0), "{}", s.batch_id);
    }
    let facts = report.sources.last().unwrap().report.as_ref().unwrap();
    assert_eq!(facts.inserted, manifest.fact_count);
    assert_eq!(report.fact_count, manifest.fact_count);

    let wh = storage::open_warehouse(&ws.warehouse()).unwrap();
    assert_eq!(wh.lineage().len(), 9);
    assert!(wh.lineage().iter().all(|l| l.is_consistent()));
}

#[test]
fn rerunning_a_pipeline_skips_every_batch() {
    let (ws, manifest, _) = loaded(&small_config(7, 150));
    let again = etl::run_pipeline(&ws.pipeline()).unwrap();
    for s in &again.sources {
        assert_eq!(s.status, SourceStatus::SkippedDuplicateBatch);
        let r = s.report.as_ref().unwrap();
        assert_eq!(r.inserted, 0);
        assert_eq!(r.skipped_duplicate_batch, r.rows_in);
    }
    assert_eq!(again.fact_count, manifest.fact_count);
    assert_eq!(storage::open_warehouse(&ws.warehouse()).unwrap().lineage().len(), 9);
}

#[test]
fn an_unreadable_source_fails_alone() {
    let ws = Workspace::new();
    tcmdw_core::datagen::generate_dataset(&small_config(1, 20), &ws.data()).unwrap();
    drop(storage::init_warehouse(builtin_tcm_schema(), &ws.warehouse()).unwrap());
    let mut cfg = etl::read_pipeline_config(&ws.pipeline()).unwrap();
    cfg.sources[1].uri = "../data/missing.csv".into();
    let report = etl::run_pipeline_config(&cfg, &ws.root().join("configs")).unwrap();
    let statuses: Vec<SourceStatus> = report.sources.iter().map(|s| s.status).collect();
    assert_eq!(statuses[1], SourceStatus::Failed);
    assert!(report.sources[1].error.as_deref().unwrap().contains("missing.csv"));
    assert_eq!(statuses.iter().filter(|s| **s == SourceStatus::Loaded).count(), 8);
    // Formulas referenced the failed FormulaTypes batch, so its types were inferred.
    let formulas = report.sources.iter().find(|s| s.batch_id == "seed-formulas").unwrap();
    assert!(formulas.report.as_ref().unwrap().inferred_members > 0);
}

fn fact_source(uri: &str, batch: &str, field_map: &[(&str, &str)], rules: Vec<Rule>) -> SourceConfig {
    SourceConfig {
        uri: uri.into(),
        format: if uri.ends_with(".jsonl") { SourceFormat::Jsonl } else { SourceFormat::Csv },
        kind: SourceKind::Fact,
        table: None,
        field_map: field_map.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        rules,
        batch_id: batch.into(),
        infer_members: true,
    }
}

const FACT_MAP: [(&str, &str); 6] = [
    ("rx", "prescription_id"),
    ("date", "Date"),
    ("formula", "Formula"),
    ("herb", "Herb"),
    ("source", "Source"),
    ("qty", "quantity"),
];

fn write_fact_csv(path: &std::path::Path, rows: usize) {
    let mut text = String::from("rx,date,formula,herb,source,qty\n");
    for i in 0..rows {
        text.push_str(&format!("P{i},2010-03-{:02},Ge Gen Tang,Ge Gen,Beijing Clinic,{}\n", 1 + i % 28, 1000 + i));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn hundred_rows_load_once_per_batch_id() {
    let dir = tempfile::tempdir().unwrap();
    let wh_root = dir.path().join("wh");
    drop(storage::init_warehouse(builtin_tcm_schema(), &wh_root).unwrap());
    write_fact_csv(&dir.path().join("f.csv"), 100);
    let cfg = PipelineConfig {
        warehouse: "wh".into(),
        sources: vec![fact_source(
            "f.csv",
            "batch-1",
            &FACT_MAP,
            vec![Rule::DateParse { field: "Date".into(), pattern: "YYYY-MM-DD".into() }],
        )],
    };
    let first = etl::run_pipeline_config(&cfg, dir.path()).unwrap();
    let r = first.sources[0].report.as_ref().unwrap();
    assert_eq!((r.rows_in, r.inserted, r.rejected), (100, 100, 0));
    let second = etl::run_pipeline_config(&cfg, dir.path()).unwrap();
    let r = second.sources[0].report.as_ref().unwrap();
    assert_eq!((r.inserted, r.skipped_duplicate_batch), (0, 100));
    assert_eq!(second.fact_count, 100);
}

#[test]
fn extract_counts_rows_and_checks_headers() {
    let dir = tempfile::tempdir().unwrap();
    write_fact_csv(&dir.path().join("f.csv"), 3);
    let ok = etl::extract(&fact_source("f.csv", "b", &FACT_MAP, vec![]), dir.path()).unwrap();
    assert_eq!(ok.rows.len(), 3);
    assert_eq!(ok.rows[0].1["Herb"], "Ge Gen");

    let mut bad_map = FACT_MAP.to_vec();
    bad_map[5] = ("qty_mg", "quantity");
    let err = etl::extract(&fact_source("f.csv", "b", &bad_map, vec![]), dir.path()).unwrap_err();
    assert!(matches!(err, EtlError::HeaderMismatch { column, .. } if column == "qty_mg"));

    let err = etl::extract(&fact_source("nope.csv", "b", &FACT_MAP, vec![]), dir.path()).unwrap_err();
    assert!(matches!(err, EtlError::SourceUnreadable { .. }));
}

#[test]
fn malformed_jsonl_lines_become_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..10 {
        if i == 4 {
            text.push_str("{not json\n");
        } else {
            text.push_str(&format!(
                "{{\"rx\":\"P{i}\",\"date\":\"2010-01-02\",\"formula\":\"Ge Gen Tang\",\"herb\":\"Ge Gen\",\"source\":\"S\",\"qty\":{}}}\n",
                100 + i
            ));
        }
    }
    fs::write(dir.path().join("f.jsonl"), text).unwrap();
    let src = fact_source("f.jsonl", "b", &FACT_MAP, vec![]);
    let batch = etl::extract(&src, dir.path()).unwrap();
    assert_eq!(batch.rows.len(), 9);
    assert_eq!(batch.rejects.len(), 1);
    assert_eq!(batch.rejects[0].reason, "MalformedRecord");
    assert_eq!(batch.rejects[0].row, 5);

    let schema = builtin_tcm_schema();
    let rules = vec![Rule::DateParse { field: "Date".into(), pattern: "YYYY-MM-DD".into() }];
    let out = etl::transform(&batch, &rules, &Target::Fact, &schema);
    assert_eq!(out.conformed.len() + out.rejects.len(), batch.len());
}

#[test]
fn scale_rule_converts_units_with_half_up_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let wh_root = dir.path().join("wh");
    drop(storage::init_warehouse(builtin_tcm_schema(), &wh_root).unwrap());
    // grams with fractions → milligrams
    fs::write(
        dir.path().join("g.csv"),
        "rx,date,formula,herb,source,qty\nP1,2010-01-01,F,H,S,2.0005\nP2,2010-01-01,F,H,S,0.0004\nP3,bad-date,F,H,S,1\n",
    )
    .unwrap();
    let rules: Vec<Rule> = serde_json::from_value(serde_json::json!([
        { "op": "date_parse", "field": "Date", "pattern": "YYYY-MM-DD" },
        { "op": "scale", "field": "quantity", "factor": 1000 },
        { "op": "domain_check", "field": "quantity", "min": 1 }
    ]))
    .unwrap();
    let cfg = PipelineConfig { warehouse: "wh".into(), sources: vec![fact_source("g.csv", "g", &FACT_MAP, rules)] };
    let report = etl::run_pipeline_config(&cfg, dir.path()).unwrap();
    let r = report.sources[0].report.as_ref().unwrap();
    assert_eq!((r.rows_in, r.inserted, r.rejected), (3, 1, 2));
    let reasons: Vec<(usize, &str, Option<usize>)> =
        r.reject_sample.iter().map(|x| (x.row, x.reason.as_str(), x.rule_index)).collect();
    assert_eq!(reasons, vec![(2, "OutOfDomain", Some(2)), (3, "BadDate", Some(0))]);
    let wh = storage::open_warehouse(&wh_root).unwrap();
    assert_eq!(wh.facts()[0].measures, vec![2001]);
    let lineage = &wh.lineage()[0];
    assert_eq!(lineage.ruleset_digest, etl::ruleset_digest(&cfg.sources[0].rules));
    assert_eq!((lineage.rows_in, lineage.rows_out, lineage.rows_rejected), (3, 1, 2));
}

#[test]
fn config_errors_are_reported_before_loading() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    fs::write(&path, r#"{"warehouse": "wh", "sources": [{"uri": "a.csv"}]}"#).unwrap();
    assert!(matches!(etl::run_pipeline(&path), Err(EtlError::ConfigInvalid(_))));

    let src = fact_source("a.csv", "same", &FACT_MAP, vec![]);
    let cfg = PipelineConfig { warehouse: "wh".into(), sources: vec![src.clone(), src] };
    assert!(matches!(cfg.validate(), Err(EtlError::ConfigInvalid(_))));
}

#[test]
fn a_held_lock_fails_the_pipeline() {
    let (ws, _, _) = loaded(&small_config(3, 10));
    let _writer = storage::open_warehouse_for_write(&ws.warehouse()).unwrap();
    assert!(matches!(etl::run_pipeline(&ws.pipeline()), Err(EtlError::WarehouseLocked(_))));
}

#[test]
fn dimension_sources_load_before_facts_regardless_of_config_order() {
    let ws = Workspace::new();
    tcmdw_core::datagen::generate_dataset(&small_config(5, 30), &ws.data()).unwrap();
    drop(storage::init_warehouse(builtin_tcm_schema(), &ws.warehouse()).unwrap());
    let mut cfg = etl::read_pipeline_config(&ws.pipeline()).unwrap();
    cfg.sources.rotate_right(1);
    assert_eq!(cfg.sources[0].kind, SourceKind::Fact);
    let report = etl::run_pipeline_config(&cfg, &ws.root().join("configs")).unwrap();
    assert_eq!(report.sources.last().unwrap().kind, SourceKind::Fact);
    let inferred: BTreeMap<&str, u64> = report
        .sources
        .iter()
        .map(|s| (s.batch_id.as_str(), s.report.as_ref().unwrap().inferred_members))
        .collect();
    assert_eq!(inferred["facts-0001"], 0);
}
