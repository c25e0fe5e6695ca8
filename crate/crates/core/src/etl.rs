//! Extract → transform → load.
//!
//! Sources are CSV or JSONL files. Each staged row runs through an ordered
//! rule list; the first failing rule turns the row into a reject and the rest
//! of the batch carries on. Loads are idempotent per batch id: a batch already
//! present in lineage is skipped whole.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metadata::{self, LineageRecord};
use crate::model::SchemaDef;
use crate::numeric::{CalendarDate, Decimal};
use crate::storage::{self, FactRow, StorageError, Warehouse, UNKNOWN};

/// Reject sample kept per load report.
pub const REJECT_SAMPLE: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum EtlError {
    #[error("cannot read source {path}: {message}")]
    SourceUnreadable { path: PathBuf, message: String },
    #[error("column `{column}` is not in the header of {path}")]
    HeaderMismatch { path: PathBuf, column: String },
    #[error("rule {index}: {message}")]
    RuleInvalid { index: usize, message: String },
    #[error("invalid pipeline config: {0}")]
    ConfigInvalid(String),
    #[error("warehouse is locked by another writer ({0})")]
    WarehouseLocked(PathBuf),
    #[error(transparent)]
    Storage(StorageError),
    #[error(transparent)]
    Metadata(#[from] metadata::MetadataError),
}

impl From<StorageError> for EtlError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::WarehouseLocked(p) => EtlError::WarehouseLocked(p),
            e => EtlError::Storage(e),
        }
    }
}

pub type Result<T, E = EtlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Dimension,
    Fact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnMiss {
    Reject,
    Unknown,
    Passthrough,
}

/// A decimal factor given either as a JSON number or a string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Factor {
    Number(serde_json::Number),
    Text(String),
}

impl Factor {
    pub fn decimal(&self) -> Option<Decimal> {
        match self {
            Factor::Number(n) => Decimal::parse(&n.to_string()),
            Factor::Text(s) => Decimal::parse(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rule {
    Rename { from: String, to: String },
    Constant { field: String, value: String },
    Lookup { field: String, mapping: BTreeMap<String, String>, on_miss: OnMiss },
    Scale { field: String, factor: Factor },
    DateParse { field: String, pattern: String },
    DomainCheck {
        field: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<i64>,
    },
}

impl Rule {
    fn input(&self) -> Option<&str> {
        match self {
            Rule::Rename { from, .. } => Some(from),
            Rule::Constant { .. } => None,
            Rule::Lookup { field, .. }
            | Rule::Scale { field, .. }
            | Rule::DateParse { field, .. }
            | Rule::DomainCheck { field, .. } => Some(field),
        }
    }
}

/// SHA-256 over the rule list serialized as compact JSON with sorted keys.
pub fn ruleset_digest(rules: &[Rule]) -> String {
    // serde_json's default map is ordered, so a round trip through Value
    // sorts every object's keys.
    let value = serde_json::to_value(rules).expect("rules serialize");
    storage::sha256_hex(value.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub uri: String,
    pub format: SourceFormat,
    pub kind: SourceKind,
    /// Target lookup table for dimension sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    /// Source column → staged field. Empty keeps every column as is.
    #[serde(default)]
    pub field_map: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<Rule>,
    pub batch_id: String,
    #[serde(default)]
    pub infer_members: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub warehouse: PathBuf,
    pub sources: Vec<SourceConfig>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, s) in self.sources.iter().enumerate() {
            if s.batch_id.trim().is_empty() {
                return Err(EtlError::ConfigInvalid(format!("source {i}: empty batch_id")));
            }
            if !seen.insert(s.batch_id.as_str()) {
                return Err(EtlError::ConfigInvalid(format!("source {i}: batch_id `{}` repeated", s.batch_id)));
            }
            if s.kind == SourceKind::Dimension && s.table.is_none() {
                return Err(EtlError::ConfigInvalid(format!("source {i}: dimension source needs `table`")));
            }
        }
        Ok(())
    }
}

pub type StagedRow = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    /// 1-based record number in the source.
    pub row: usize,
    pub original: StagedRow,
    pub rule_index: Option<usize>,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedBatch {
    pub fields: Vec<String>,
    /// `(record number, row)` in source order.
    pub rows: Vec<(usize, StagedRow)>,
    pub rejects: Vec<RejectRecord>,
}

impl StagedBatch {
    pub fn len(&self) -> usize {
        self.rows.len() + self.rejects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn resolve_uri(base: &Path, uri: &str) -> PathBuf {
    let p = Path::new(uri);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a source file into staged rows named per the field map.
pub fn extract(cfg: &SourceConfig, base_dir: &Path) -> Result<StagedBatch> {
    let path = resolve_uri(base_dir, &cfg.uri);
    let unreadable = |m: String| EtlError::SourceUnreadable { path: path.clone(), message: m };
    let text = fs::read_to_string(&path).map_err(|e| unreadable(e.to_string()))?;
    match cfg.format {
        SourceFormat::Csv => extract_csv(cfg, &path, &text),
        SourceFormat::Jsonl => Ok(extract_jsonl(cfg, &text)),
    }
}

fn extract_csv(cfg: &SourceConfig, path: &Path, text: &str) -> Result<StagedBatch> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| EtlError::SourceUnreadable { path: path.to_path_buf(), message: e.to_string() })?
        .iter()
        .map(String::from)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(EtlError::SourceUnreadable { path: path.to_path_buf(), message: "missing header row".into() });
    }
    let mapping: Vec<(usize, String)> = if cfg.field_map.is_empty() {
        header.iter().cloned().enumerate().collect()
    } else {
        cfg.field_map
            .iter()
            .map(|(col, field)| {
                header
                    .iter()
                    .position(|h| h == col)
                    .map(|i| (i, field.clone()))
                    .ok_or_else(|| EtlError::HeaderMismatch { path: path.to_path_buf(), column: col.clone() })
            })
            .collect::<Result<_>>()?
    };
    let mut fields: Vec<String> = mapping.iter().map(|(_, f)| f.clone()).collect();
    fields.sort();
    let mut batch = StagedBatch { fields, rows: Vec::new(), rejects: Vec::new() };
    for (i, rec) in reader.records().enumerate() {
        let n = i + 1;
        match rec {
            Ok(rec) => {
                let row = mapping.iter().map(|(c, f)| (f.clone(), rec.get(*c).unwrap_or("").to_string())).collect();
                batch.rows.push((n, row));
            }
            Err(e) => batch.rejects.push(RejectRecord {
                row: n,
                original: StagedRow::new(),
                rule_index: None,
                reason: "MalformedRecord".into(),
                detail: e.to_string(),
            }),
        }
    }
    Ok(batch)
}

fn json_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn extract_jsonl(cfg: &SourceConfig, text: &str) -> StagedBatch {
    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    let mut seen_keys = BTreeSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 1;
        match serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(line) {
            Ok(obj) => {
                let row: StagedRow = if cfg.field_map.is_empty() {
                    seen_keys.extend(obj.keys().cloned());
                    obj.iter().map(|(k, v)| (k.clone(), json_text(v))).collect()
                } else {
                    cfg.field_map
                        .iter()
                        .filter_map(|(col, field)| obj.get(col).map(|v| (field.clone(), json_text(v))))
                        .collect()
                };
                rows.push((n, row));
            }
            Err(e) => rejects.push(RejectRecord {
                row: n,
                original: std::iter::once(("_raw".to_string(), line.to_string())).collect(),
                rule_index: None,
                reason: "MalformedRecord".into(),
                detail: e.to_string(),
            }),
        }
    }
    let fields = if cfg.field_map.is_empty() {
        seen_keys.into_iter().collect()
    } else {
        let mut f: Vec<String> = cfg.field_map.values().cloned().collect();
        f.sort();
        f
    };
    StagedBatch { fields, rows, rejects }
}

/// What a batch loads into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Fact,
    Dimension(String),
}

impl Target {
    pub fn of(cfg: &SourceConfig) -> Self {
        match cfg.kind {
            SourceKind::Fact => Target::Fact,
            SourceKind::Dimension => Target::Dimension(cfg.table.clone().unwrap_or_default()),
        }
    }

    pub fn name(&self, schema: &SchemaDef) -> String {
        match self {
            Target::Fact => schema.fact.name.clone(),
            Target::Dimension(t) => t.clone(),
        }
    }

    /// Fields every conformed row needs, and optional ones.
    fn fields(&self, schema: &SchemaDef) -> Result<(Vec<String>, Vec<String>)> {
        match self {
            Target::Fact => {
                let f = &schema.fact;
                let req = f
                    .dimension_refs
                    .iter()
                    .cloned()
                    .chain(f.degenerate_keys.iter().map(|k| k.name.clone()))
                    .chain(f.measures.iter().map(|m| m.name.clone()))
                    .collect();
                Ok((req, Vec::new()))
            }
            Target::Dimension(t) => {
                let (dim, def) = schema
                    .table(t)
                    .ok_or_else(|| EtlError::ConfigInvalid(format!("unknown table `{t}`")))?;
                let req = def.attributes.iter().map(|a| a.name.clone()).collect();
                let opt = dim.children_of(&def.name).map(|c| c.name.clone()).collect();
                Ok((req, opt))
            }
        }
    }
}

/// Checks, without touching data, that every rule's input exists at its
/// point in the pipeline and that the target's fields exist at the end.
pub fn validate_rules(fields: &[String], rules: &[Rule], target: &Target, schema: &SchemaDef) -> Result<()> {
    let mut avail: BTreeSet<String> = fields.iter().cloned().collect();
    for (i, r) in rules.iter().enumerate() {
        if let Some(input) = r.input() {
            if !avail.contains(input) {
                return Err(EtlError::RuleInvalid { index: i, message: format!("field `{input}` does not exist here") });
            }
        }
        match r {
            Rule::Rename { from, to } => {
                avail.remove(from);
                avail.insert(to.clone());
            }
            Rule::Constant { field, .. } => {
                avail.insert(field.clone());
            }
            Rule::Scale { factor, .. } if factor.decimal().is_none() => {
                return Err(EtlError::RuleInvalid { index: i, message: "factor is not a decimal".into() });
            }
            Rule::DateParse { pattern, .. }
                if !(pattern.contains("YYYY") && pattern.contains("MM") && pattern.contains("DD")) =>
            {
                return Err(EtlError::RuleInvalid { index: i, message: format!("pattern `{pattern}` lacks YYYY/MM/DD") });
            }
            _ => {}
        }
    }
    let (required, _) = target.fields(schema)?;
    if let Some(missing) = required.iter().find(|f| !avail.contains(*f)) {
        return Err(EtlError::RuleInvalid {
            index: rules.len(),
            message: format!("target field `{missing}` is not produced"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformedFact {
    /// Natural key per fact dimension, schema order.
    pub dimension_keys: Vec<String>,
    pub degenerate: Vec<String>,
    pub measures: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformedMember {
    pub natural_key: String,
    pub attributes: BTreeMap<String, String>,
    /// Outer table → natural key.
    pub refs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConformedRow {
    Fact(ConformedFact),
    Member(ConformedMember),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformOutput {
    /// `(record number, row)`.
    pub conformed: Vec<(usize, ConformedRow)>,
    pub rejects: Vec<RejectRecord>,
}

struct RowFailure {
    rule_index: Option<usize>,
    reason: &'static str,
    detail: String,
}

fn fail(rule_index: Option<usize>, reason: &'static str, detail: String) -> RowFailure {
    RowFailure { rule_index, reason, detail }
}

fn apply_rule(i: usize, rule: &Rule, row: &mut StagedRow) -> std::result::Result<(), RowFailure> {
    let get = |row: &StagedRow, f: &str| -> std::result::Result<String, RowFailure> {
        row.get(f).cloned().ok_or_else(|| fail(Some(i), "MissingField", format!("field `{f}` absent")))
    };
    match rule {
        Rule::Rename { from, to } => {
            let v = get(row, from)?;
            row.remove(from);
            row.insert(to.clone(), v);
        }
        Rule::Constant { field, value } => {
            row.insert(field.clone(), value.clone());
        }
        Rule::Lookup { field, mapping, on_miss } => {
            let v = get(row, field)?;
            match (mapping.get(&v), on_miss) {
                (Some(m), _) => {
                    row.insert(field.clone(), m.clone());
                }
                (None, OnMiss::Reject) => {
                    return Err(fail(Some(i), "UnmappedValue", format!("`{v}` has no mapping for `{field}`")))
                }
                (None, OnMiss::Unknown) => {
                    row.insert(field.clone(), UNKNOWN.into());
                }
                (None, OnMiss::Passthrough) => {}
            }
        }
        Rule::Scale { field, factor } => {
            let v = get(row, field)?;
            let d = Decimal::parse(&v).ok_or_else(|| fail(Some(i), "NotNumeric", format!("`{v}` is not a number")))?;
            let f = factor.decimal().ok_or_else(|| fail(Some(i), "NotNumeric", "bad factor".into()))?;
            let scaled = d
                .checked_mul(f)
                .and_then(Decimal::round_half_up)
                .ok_or_else(|| fail(Some(i), "Overflow", format!("`{v}` scaled overflows")))?;
            row.insert(field.clone(), scaled.to_string());
        }
        Rule::DateParse { field, pattern } => {
            let v = get(row, field)?;
            let d = CalendarDate::parse_pattern(v.trim(), pattern)
                .ok_or_else(|| fail(Some(i), "BadDate", format!("`{v}` does not match `{pattern}`")))?;
            row.insert(field.clone(), d.compact());
        }
        Rule::DomainCheck { field, min, max } => {
            let v = get(row, field)?;
            let n: i64 = v.trim().parse().map_err(|_| fail(Some(i), "NotNumeric", format!("`{v}` is not an integer")))?;
            if min.is_some_and(|m| n < m) || max.is_some_and(|m| n > m) {
                return Err(fail(Some(i), "OutOfDomain", format!("{n} outside [{min:?}, {max:?}]")));
            }
        }
    }
    Ok(())
}

fn conform(row: &StagedRow, target: &Target, schema: &SchemaDef) -> std::result::Result<ConformedRow, RowFailure> {
    let field = |f: &str| -> std::result::Result<String, RowFailure> {
        row.get(f).cloned().ok_or_else(|| fail(None, "MissingField", format!("field `{f}` absent")))
    };
    match target {
        Target::Fact => {
            let f = &schema.fact;
            let dimension_keys = f
                .dimension_refs
                .iter()
                .map(|d| field(d).map(|v| if v.trim().is_empty() { UNKNOWN.to_string() } else { v }))
                .collect::<std::result::Result<_, _>>()?;
            let degenerate = f.degenerate_keys.iter().map(|k| field(&k.name)).collect::<std::result::Result<_, _>>()?;
            let measures = f
                .measures
                .iter()
                .map(|m| {
                    let v = field(&m.name)?;
                    v.trim().parse::<i64>().map_err(|_| {
                        fail(None, "NotNumeric", format!("measure `{}` value `{v}` is not an integer", m.name))
                    })
                })
                .collect::<std::result::Result<_, _>>()?;
            Ok(ConformedRow::Fact(ConformedFact { dimension_keys, degenerate, measures }))
        }
        Target::Dimension(t) => {
            let (dim, def) = schema.table(t).expect("validated target");
            let natural_key = field(&def.natural_key)?;
            if natural_key.trim().is_empty() {
                return Err(fail(None, "MissingValue", format!("empty natural key `{}`", def.natural_key)));
            }
            let attributes = def
                .attributes
                .iter()
                .filter(|a| a.name != def.natural_key)
                .map(|a| field(&a.name).map(|v| (a.name.clone(), v)))
                .collect::<std::result::Result<_, _>>()?;
            let refs = dim
                .children_of(&def.name)
                .filter_map(|c| row.get(&c.name).filter(|v| !v.trim().is_empty()).map(|v| (c.name.clone(), v.clone())))
                .collect();
            Ok(ConformedRow::Member(ConformedMember { natural_key, attributes, refs }))
        }
    }
}

/// Applies the rules in order to every staged row. Every input row ends up
/// either conformed or rejected, never both.
pub fn transform(batch: &StagedBatch, rules: &[Rule], target: &Target, schema: &SchemaDef) -> TransformOutput {
    let mut out = TransformOutput { conformed: Vec::new(), rejects: batch.rejects.clone() };
    for (n, original) in &batch.rows {
        let mut row = original.clone();
        let result = rules
            .iter()
            .enumerate()
            .try_for_each(|(i, r)| apply_rule(i, r, &mut row))
            .and_then(|()| conform(&row, target, schema));
        match result {
            Ok(c) => out.conformed.push((*n, c)),
            Err(f) => out.rejects.push(RejectRecord {
                row: *n,
                original: original.clone(),
                rule_index: f.rule_index,
                reason: f.reason.into(),
                detail: f.detail,
            }),
        }
    }
    out.rejects.sort_by_key(|r| r.row);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub batch_id: String,
    pub target: String,
    pub rows_in: u64,
    pub inserted: u64,
    pub skipped_duplicate_batch: u64,
    pub rejected: u64,
    pub inferred_members: u64,
    pub reject_sample: Vec<RejectRecord>,
}

impl LoadReport {
    pub fn is_consistent(&self) -> bool {
        self.rows_in == self.inserted + self.skipped_duplicate_batch + self.rejected
    }

    fn add_rejects(&mut self, rejects: &[RejectRecord]) {
        self.rows_in += rejects.len() as u64;
        self.rejected += rejects.len() as u64;
        let room = REJECT_SAMPLE.saturating_sub(self.reject_sample.len());
        self.reject_sample.extend(rejects.iter().take(room).cloned());
        self.reject_sample.sort_by_key(|r| r.row);
    }
}

/// Resolves natural keys and loads conformed rows. A batch id already in
/// lineage loads nothing.
pub fn load(
    wh: &mut Warehouse,
    rows: &[(usize, ConformedRow)],
    batch_id: &str,
    target: &Target,
    infer_members: bool,
) -> Result<LoadReport> {
    let mut report = LoadReport {
        batch_id: batch_id.into(),
        target: target.name(wh.schema()),
        rows_in: rows.len() as u64,
        inserted: 0,
        skipped_duplicate_batch: 0,
        rejected: 0,
        inferred_members: 0,
        reject_sample: Vec::new(),
    };
    if metadata::has_batch(wh, batch_id) {
        report.skipped_duplicate_batch = rows.len() as u64;
        return Ok(report);
    }
    if !wh.is_writable() {
        return Err(StorageError::ReadOnly.into());
    }
    let mut rejects = Vec::new();
    let reject = |n: usize, row: &ConformedRow, reason: &str, detail: String| RejectRecord {
        row: n,
        original: conformed_fields(row),
        rule_index: None,
        reason: reason.into(),
        detail,
    };
    match target {
        Target::Fact => {
            let base_tables: Vec<String> = wh.layout().dimensions.iter().map(|d| d.base_table.clone()).collect();
            let mut facts = Vec::with_capacity(rows.len());
            let mut origin = Vec::with_capacity(rows.len());
            for (n, row) in rows {
                let ConformedRow::Fact(f) = row else {
                    rejects.push(reject(*n, row, "WrongTarget", "member row in a fact batch".into()));
                    continue;
                };
                let mut keys = Vec::with_capacity(base_tables.len());
                for (t, nk) in base_tables.iter().zip(&f.dimension_keys) {
                    let (k, inferred) = wh.resolve_member(t, nk, infer_members)?;
                    report.inferred_members += inferred as u64;
                    keys.push(k);
                }
                facts.push(FactRow { keys, degenerate: f.degenerate.clone(), measures: f.measures.clone() });
                origin.push((*n, row));
            }
            let outcome = wh.append_facts(facts)?;
            report.inserted += outcome.accepted as u64;
            for ((n, row), res) in origin.into_iter().zip(outcome.outcomes) {
                if let Err(e) = res {
                    rejects.push(reject(n, row, e.code(), e.to_string()));
                }
            }
        }
        Target::Dimension(table) => {
            for (n, row) in rows {
                let ConformedRow::Member(m) = row else {
                    rejects.push(reject(*n, row, "WrongTarget", "fact row in a dimension batch".into()));
                    continue;
                };
                match wh.upsert_member_counted(table, &m.natural_key, &m.attributes, &m.refs) {
                    Ok((_, inferred)) => {
                        report.inserted += 1;
                        report.inferred_members += inferred as u64;
                    }
                    Err(StorageError::ReadOnly) => return Err(StorageError::ReadOnly.into()),
                    Err(e) => rejects.push(reject(*n, row, storage_reason(&e), e.to_string())),
                }
            }
        }
    }
    report.rows_in -= rejects.len() as u64;
    report.add_rejects(&rejects);
    Ok(report)
}

fn storage_reason(e: &StorageError) -> &'static str {
    match e {
        StorageError::MissingAttribute { .. } => "MissingAttribute",
        StorageError::UnknownAttribute { .. } => "UnknownAttribute",
        StorageError::InvalidValue { .. } => "InvalidValue",
        StorageError::ReservedKey(_) => "ReservedKey",
        StorageError::UnknownTable(_) => "UnknownTable",
        _ => "StorageError",
    }
}

fn conformed_fields(row: &ConformedRow) -> StagedRow {
    match serde_json::to_value(row) {
        Ok(serde_json::Value::Object(o)) => o.into_iter().map(|(k, v)| (k, v.to_string())).collect(),
        _ => StagedRow::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceStatus {
    Loaded,
    SkippedDuplicateBatch,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceOutcome {
    pub uri: String,
    pub batch_id: String,
    pub kind: SourceKind,
    pub status: SourceStatus,
    pub error: Option<String>,
    pub report: Option<LoadReport>,
    /// Batch id of the lineage record written for this source.
    pub lineage_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub sources: Vec<SourceOutcome>,
    pub fact_count: u64,
    pub checkpoint: String,
}

impl PipelineReport {
    pub fn failed(&self) -> usize {
        self.sources.iter().filter(|s| s.status == SourceStatus::Failed).count()
    }

    pub fn total_rejected(&self) -> u64 {
        self.sources.iter().filter_map(|s| s.report.as_ref()).map(|r| r.rejected).sum()
    }
}

pub fn read_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| EtlError::SourceUnreadable { path: path.to_path_buf(), message: e.to_string() })?;
    let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| EtlError::ConfigInvalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a pipeline config file; relative paths resolve against its directory.
pub fn run_pipeline(config_path: &Path) -> Result<PipelineReport> {
    let cfg = read_pipeline_config(config_path)?;
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    run_pipeline_config(&cfg, &base)
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

type Prepared = Result<(StagedBatch, TransformOutput), String>;

/// Extracts and transforms sources concurrently, then loads them one at a
/// time in config order with dimension sources first.
pub fn run_pipeline_config(cfg: &PipelineConfig, base_dir: &Path) -> Result<PipelineReport> {
    cfg.validate()?;
    let wh_root = resolve_uri(base_dir, &cfg.warehouse.to_string_lossy());
    let mut wh = storage::open_warehouse_for_write(&wh_root)?;

    let mut order: Vec<&SourceConfig> = cfg.sources.iter().collect();
    order.sort_by_key(|s| s.kind);

    let schema = wh.schema().clone();
    let prepared: Vec<(String, Prepared)> = order
        .par_iter()
        .map(|src| {
            let started = now_rfc3339();
            let target = Target::of(src);
            let result = extract(src, base_dir).and_then(|batch| {
                validate_rules(&batch.fields, &src.rules, &target, &schema)?;
                let out = transform(&batch, &src.rules, &target, &schema);
                Ok((batch, out))
            });
            (started, result.map_err(|e| e.to_string()))
        })
        .collect();

    let mut outcomes = Vec::new();
    for (src, (started, prep)) in order.iter().zip(prepared) {
        let mut outcome = SourceOutcome {
            uri: src.uri.clone(),
            batch_id: src.batch_id.clone(),
            kind: src.kind,
            status: SourceStatus::Failed,
            error: None,
            report: None,
            lineage_id: None,
        };
        let (batch, out) = match prep {
            Ok(p) => p,
            Err(e) => {
                outcome.error = Some(e);
                outcomes.push(outcome);
                continue;
            }
        };
        let target = Target::of(src);
        if metadata::has_batch(&wh, &src.batch_id) {
            outcome.status = SourceStatus::SkippedDuplicateBatch;
            outcome.report = Some(LoadReport {
                batch_id: src.batch_id.clone(),
                target: target.name(&schema),
                rows_in: batch.len() as u64,
                inserted: 0,
                skipped_duplicate_batch: batch.len() as u64,
                rejected: 0,
                inferred_members: 0,
                reject_sample: Vec::new(),
            });
            outcomes.push(outcome);
            continue;
        }
        let mut report = match load(&mut wh, &out.conformed, &src.batch_id, &target, src.infer_members) {
            Ok(r) => r,
            Err(e) => {
                outcome.error = Some(e.to_string());
                outcomes.push(outcome);
                continue;
            }
        };
        report.add_rejects(&out.rejects);
        debug_assert!(report.is_consistent());
        let record = LineageRecord {
            batch_id: src.batch_id.clone(),
            source_uri: src.uri.clone(),
            ruleset_digest: ruleset_digest(&src.rules),
            target: report.target.clone(),
            started,
            finished: now_rfc3339(),
            rows_in: report.rows_in,
            rows_out: report.inserted,
            rows_rejected: report.rejected,
            rows_skipped: report.skipped_duplicate_batch,
            inferred_members: report.inferred_members,
        };
        metadata::record_lineage(&mut wh, record)?;
        outcome.status = SourceStatus::Loaded;
        outcome.lineage_id = Some(src.batch_id.clone());
        outcome.report = Some(report);
        outcomes.push(outcome);
    }
    let checkpoint = wh.checkpoint()?;
    Ok(PipelineReport { sources: outcomes, fact_count: wh.fact_count() as u64, checkpoint })
}
