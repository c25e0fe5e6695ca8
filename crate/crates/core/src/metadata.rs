//! Warehouse self-description and load lineage.

use serde::{Deserialize, Serialize};

use crate::storage::{StorageError, Warehouse};

#[derive(Debug, thiserror::Error)]
pub enum MetadataError {
    #[error("batch `{0}` is already recorded in lineage")]
    DuplicateBatch(String),
    #[error("no lineage record for batch `{0}`")]
    NotFound(String),
    #[error("inconsistent lineage record: rows_in {rows_in} != out {rows_out} + rejected {rows_rejected} + skipped {rows_skipped}")]
    Inconsistent { rows_in: u64, rows_out: u64, rows_rejected: u64, rows_skipped: u64 },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageRecord {
    pub batch_id: String,
    pub source_uri: String,
    /// SHA-256 of the rule list as compact, key-sorted JSON.
    pub ruleset_digest: String,
    pub target: String,
    /// RFC 3339, UTC.
    pub started: String,
    pub finished: String,
    pub rows_in: u64,
    pub rows_out: u64,
    pub rows_rejected: u64,
    #[serde(default)]
    pub rows_skipped: u64,
    pub inferred_members: u64,
}

impl LineageRecord {
    pub fn is_consistent(&self) -> bool {
        self.rows_in == self.rows_out + self.rows_rejected + self.rows_skipped
    }
}

pub fn record_lineage(wh: &mut Warehouse, record: LineageRecord) -> Result<(), MetadataError> {
    if !record.is_consistent() {
        return Err(MetadataError::Inconsistent {
            rows_in: record.rows_in,
            rows_out: record.rows_out,
            rows_rejected: record.rows_rejected,
            rows_skipped: record.rows_skipped,
        });
    }
    if wh.lineage.iter().any(|r| r.batch_id == record.batch_id) {
        return Err(MetadataError::DuplicateBatch(record.batch_id));
    }
    wh.ensure_writable()?;
    wh.lineage.push(record);
    Ok(())
}

pub fn get_lineage<'a>(wh: &'a Warehouse, batch_id: &str) -> Result<&'a LineageRecord, MetadataError> {
    wh.lineage()
        .iter()
        .find(|r| r.batch_id == batch_id)
        .ok_or_else(|| MetadataError::NotFound(batch_id.into()))
}

pub fn has_batch(wh: &Warehouse, batch_id: &str) -> bool {
    wh.lineage().iter().any(|r| r.batch_id == batch_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Fact,
    Lookup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub kind: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInfo {
    pub name: String,
    pub kind: TableKind,
    pub dimension: Option<String>,
    pub columns: Vec<ColumnInfo>,
    pub row_count: u64,
    /// Table this one hangs off, for snowflaked lookups.
    pub parent: Option<String>,
    /// Tables referenced from this one.
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDictionary {
    pub schema: String,
    pub schema_digest: String,
    pub tables: Vec<TableInfo>,
}

pub fn data_dictionary(wh: &Warehouse) -> DataDictionary {
    let schema = wh.schema();
    let fact = &schema.fact;
    let mut tables = Vec::new();

    let mut columns = Vec::new();
    for (d, layout) in fact.dimension_refs.iter().zip(&wh.layout().dimensions) {
        columns.push(ColumnInfo {
            name: d.clone(),
            kind: "integer".into(),
            description: format!("surrogate key into {}", layout.base_table),
        });
    }
    for k in &fact.degenerate_keys {
        columns.push(ColumnInfo { name: k.name.clone(), kind: k.kind.to_string(), description: "degenerate key".into() });
    }
    for m in &fact.measures {
        columns.push(ColumnInfo {
            name: m.name.clone(),
            kind: "integer".into(),
            description: format!("additive measure in {} (min {})", m.unit, m.min),
        });
    }
    tables.push(TableInfo {
        name: fact.name.clone(),
        kind: TableKind::Fact,
        dimension: None,
        columns,
        row_count: wh.fact_count() as u64,
        parent: None,
        references: wh.layout().dimensions.iter().map(|d| d.base_table.clone()).collect(),
    });

    for dim in &schema.dimensions {
        for t in &dim.tables {
            let live = wh.table(&t.name).expect("table exists");
            tables.push(TableInfo {
                name: t.name.clone(),
                kind: TableKind::Lookup,
                dimension: Some(dim.name.clone()),
                columns: t
                    .attributes
                    .iter()
                    .map(|a| ColumnInfo { name: a.name.clone(), kind: a.kind.to_string(), description: a.description.clone() })
                    .collect(),
                row_count: live.len() as u64,
                parent: t.parent.clone(),
                references: live.children.clone(),
            });
        }
    }

    DataDictionary { schema: schema.name.clone(), schema_digest: schema.digest(), tables }
}

impl DataDictionary {
    /// Aligned text rendering: one block per table.
    pub fn render_text(&self) -> String {
        let mut out = format!("schema {} ({})\n", self.schema, self.schema_digest);
        for t in &self.tables {
            let kind = match t.kind {
                TableKind::Fact => "fact",
                TableKind::Lookup => "lookup",
            };
            out.push('\n');
            out.push_str(&format!("{} [{kind}] rows={}", t.name, t.row_count));
            if let Some(p) = &t.parent {
                out.push_str(&format!(" parent={p}"));
            }
            if !t.references.is_empty() {
                out.push_str(&format!(" references={}", t.references.join(",")));
            }
            out.push('\n');
            let rows: Vec<Vec<String>> =
                t.columns.iter().map(|c| vec![c.name.clone(), c.kind.clone(), c.description.clone()]).collect();
            out.push_str(&crate::report::render_aligned(&["column", "kind", "description"], &rows));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_tcm_schema;

    fn rec(batch: &str) -> LineageRecord {
        LineageRecord {
            batch_id: batch.into(),
            source_uri: "facts.csv".into(),
            ruleset_digest: "00".into(),
            target: "FormulaList".into(),
            started: "2010-01-01T00:00:00Z".into(),
            finished: "2010-01-01T00:00:01Z".into(),
            rows_in: 3,
            rows_out: 2,
            rows_rejected: 1,
            rows_skipped: 0,
            inferred_members: 0,
        }
    }

    #[test]
    fn lineage_roundtrip_and_errors() {
        let mut wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        record_lineage(&mut wh, rec("b1")).unwrap();
        assert_eq!(get_lineage(&wh, "b1").unwrap(), &rec("b1"));
        assert!(matches!(record_lineage(&mut wh, rec("b1")), Err(MetadataError::DuplicateBatch(_))));
        assert!(matches!(get_lineage(&wh, "no-such-batch"), Err(MetadataError::NotFound(_))));
        let mut bad = rec("b2");
        bad.rows_out = 3;
        assert!(matches!(record_lineage(&mut wh, bad), Err(MetadataError::Inconsistent { .. })));
    }

    #[test]
    fn fresh_dictionary() {
        let wh = Warehouse::in_memory(builtin_tcm_schema()).unwrap();
        let dict = data_dictionary(&wh);
        assert_eq!(dict.tables.len(), 9);
        for t in dict.tables.iter().filter(|t| t.kind == TableKind::Lookup) {
            assert_eq!(t.row_count, 1, "{}", t.name);
        }
        let countries = dict.tables.iter().find(|t| t.name == "Countries").unwrap();
        assert_eq!(countries.columns[0].description, "prescribing country");
        assert_eq!(countries.parent.as_deref(), Some("Sources"));
        assert!(dict.render_text().contains("prescribing country"));
    }
}
